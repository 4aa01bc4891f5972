#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use annoflow_cli::app::run_args;
use annoflow_cli::commands::{export_tasks, Task};
use annoflow_cli::{CliResult, Output, Stage, Store};
use annoflow_core::merge::{Choice, MergedDocument, Resolution};
use annoflow_core::{Annotation, Document, Payload, Provenance};
use serde::Serialize;
use tempfile::TempDir;

pub const WORDS: [(&str, &str); 6] = [
    ("great", "POS"),
    ("awful", "NEG"),
    ("fine", "NEU"),
    ("excellent", "POS"),
    ("bad", "NEG"),
    ("ok", "NEU"),
];

/// Documents `d000`.. whose third word determines the true class.
pub fn sentiment_docs(n: usize) -> Vec<Document> {
    (0..n)
        .map(|i| {
            let (w, _) = WORDS[i % WORDS.len()];
            Document::new(format!("d{i:03}"), format!("this is {w} stuff number {i}"))
        })
        .collect()
}

pub fn true_class(text: &str) -> &'static str {
    let word = text.split_whitespace().nth(2).unwrap_or_default();
    WORDS.iter().find(|(w, _)| *w == word).map(|(_, c)| *c).unwrap_or("NEU")
}

pub struct Project {
    pub dir: TempDir,
}

impl Project {
    pub fn new() -> Project {
        Project {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    pub fn root(&self) -> PathBuf {
        self.dir.path().join("p")
    }

    pub fn store(&self) -> Store {
        Store::open(self.root()).unwrap()
    }

    pub fn run(&self, args: &[&str]) -> CliResult<Output> {
        let root = self.root();
        let mut argv = vec!["annoflow", "--root", root.to_str().unwrap()];
        argv.extend_from_slice(args);
        run_args(argv)
    }

    #[track_caller]
    pub fn ok(&self, args: &[&str]) -> Output {
        match self.run(args) {
            Ok(out) => out,
            Err(e) => panic!("`{}` failed: {e}", args.join(" ")),
        }
    }

    #[track_caller]
    pub fn err(&self, args: &[&str]) -> annoflow_cli::CliError {
        match self.run(args) {
            Ok(out) => panic!("`{}` succeeded:\n{}", args.join(" "), out.text()),
            Err(e) => e,
        }
    }

    pub fn file(&self, name: &str, content: &str) -> PathBuf {
        let path = self.dir.path().join(name);
        fs::write(&path, content).unwrap();
        path
    }

    pub fn jsonl<T: Serialize>(&self, name: &str, items: &[T]) -> PathBuf {
        let text: String = items
            .iter()
            .map(|i| serde_json::to_string(i).unwrap() + "\n")
            .collect();
        self.file(name, &text)
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> PathBuf {
        self.file(name, &serde_json::to_string(value).unwrap())
    }

    pub fn init_doc_class(&self, annotators: &str, docs: usize) {
        self.ok(&[
            "init",
            "--task",
            "doc_class",
            "--classes",
            "POS,NEG,NEU",
            "--annotators",
            annotators,
            "--batch-size",
            "12",
            "--seed",
            "7",
        ]);
        let file = self.jsonl("docs.jsonl", &sentiment_docs(docs));
        self.ok(&["add-docs", file.to_str().unwrap()]);
    }

    pub fn tasks(&self, annotator: &str, stage: Stage, review: bool) -> Vec<Task> {
        export_tasks(&self.store(), annotator, Some(stage), review).unwrap()
    }

    /// Exports, labels with `label` and imports `annotator`'s tasks.
    pub fn annotate(&self, annotator: &str, stage: Stage, review: bool, label: impl Fn(&Task) -> Payload) {
        let anns: Vec<Annotation> = self
            .tasks(annotator, stage, review)
            .iter()
            .map(|t| Annotation::new(t.doc_id.clone(), annotator, Provenance::Human, label(t)))
            .collect();
        let file = self.jsonl(&format!("{annotator}-{stage}-{review}.jsonl"), &anns);
        let stage = stage.to_string();
        let mut args = vec!["import", file.to_str().unwrap(), "--annotator", annotator, "--stage", &stage];
        if review {
            args.push("--review");
        }
        self.ok(&args);
    }

    pub fn merges(&self, stage: Stage) -> Vec<MergedDocument> {
        self.store().merges(stage).unwrap().unwrap()
    }
}

/// Labels by the true class, except that `C` calls every "ok" document POS.
pub fn fixture_label(annotator: &str) -> impl Fn(&Task) -> Payload + '_ {
    move |t: &Task| {
        let truth = true_class(&t.text);
        if annotator == "C" && t.text.contains(" ok ") {
            Payload::class("POS")
        } else {
            Payload::class(truth)
        }
    }
}

/// Picks the side of each conflict that matches the true class.
pub fn truthful_resolutions(merged: &[MergedDocument], docs: &BTreeMap<String, Document>) -> Vec<Resolution> {
    merged
        .iter()
        .flat_map(|m| &m.conflicts)
        .map(|c| {
            let truth = true_class(&docs[&c.doc_id].text);
            let choice = if c.side_a.as_class() == Some(truth) {
                Choice::TakeA
            } else if c.side_b.as_class() == Some(truth) {
                Choice::TakeB
            } else {
                Choice::Custom(Payload::class(truth))
            };
            Resolution::new(c.conflict_id.clone(), choice)
        })
        .collect()
}

/// Metric values recorded after each scripted iteration.
pub const SCRIPTED_CURVE: [f64; 3] = [0.70, 0.78, 0.82];

/// init, test-set plan, three cross-annotated iterations with fixture
/// annotators, merges, file-based resolutions and curve points.
pub fn scripted_project(p: &Project) {
    p.init_doc_class("A,B,C", 60);
    p.ok(&["plan", "--test", "--size", "12"]);
    for a in ["A", "B", "C"] {
        p.annotate(a, Stage::Test, false, fixture_label(a));
    }
    p.ok(&["merge", "--stage", "test"]);
    p.ok(&["apply", "--stage", "test"]);

    for (i, value) in SCRIPTED_CURVE.iter().enumerate() {
        let stage = Stage::Iter(i as u32 + 1);
        p.ok(&["plan", "cross", "--size", "12"]);
        for a in ["A", "B", "C"] {
            p.annotate(a, stage, false, fixture_label(a));
        }
        p.ok(&["merge"]);
        let docs = p.store().doc_index().unwrap();
        let res = truthful_resolutions(&p.merges(stage), &docs);
        let file = p.json(&format!("res-{stage}.json"), &res);
        p.ok(&["apply", "--resolutions", file.to_str().unwrap()]);
        p.ok(&["curve", "--value", &value.to_string(), "--metric", "macro_f1"]);
    }
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

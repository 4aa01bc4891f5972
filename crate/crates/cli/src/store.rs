//! On-disk project store.
//!
//! ```text
//! <root>/
//!   manifest.json
//!   docs.jsonl
//!   plans/<stage>.json, plans/<stage>-review.json
//!   annotations/<stage>/<annotator>.jsonl
//!   annotations/<stage>/review/<annotator>.jsonl
//!   merges/<stage>.json
//!   resolutions/<stage>.json
//!   pool/<stage>.jsonl
//!   pre/weak.jsonl, pre/model.jsonl
//!   selection.json
//!   monitor.json
//!   curve.csv
//! ```
//!
//! `<stage>` is `test` for the held-out test set or `iter-N`. Every write goes
//! to a temporary file in the target directory and is renamed into place.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use annoflow_core::merge::{MergedDocument, Resolution};
use annoflow_core::partition::BatchPlan;
use annoflow_core::{Annotation, AnnotationSet, Document, ProjectManifest};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const POOL_ANNOTATOR: &str = "resolved";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Test,
    Iter(u32),
}

impl Stage {
    pub fn parse(s: &str) -> CliResult<Stage> {
        if s == "test" {
            return Ok(Stage::Test);
        }
        let n = s.strip_prefix("iter-").unwrap_or(s);
        match n.parse::<u32>() {
            Ok(n) if n >= 1 => Ok(Stage::Iter(n)),
            _ => Err(CliError::new("invalid_stage", format!("'{s}' is not 'test' or an iteration number ≥ 1"))),
        }
    }

    /// Iteration number recorded in plans; 0 for the test set.
    pub fn iteration(self) -> u32 {
        match self {
            Stage::Test => 0,
            Stage::Iter(n) => n,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Test => f.write_str("test"),
            Stage::Iter(n) => write!(f, "iter-{n}"),
        }
    }
}

/// Held while a command mutates the store; removed on drop.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

pub fn check_name(kind: &str, name: &str) -> CliResult<()> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(CliError::new(
            "invalid_name",
            format!("{kind} '{name}' must be non-empty ASCII letters, digits, '-', '_' or '.'"),
        ))
    }
}

impl Store {
    /// Creates a new store in an empty (or missing) directory.
    pub fn create(root: impl Into<PathBuf>, manifest: &ProjectManifest) -> CliResult<Store> {
        let root = root.into();
        if root.exists() {
            let mut entries = fs::read_dir(&root).map_err(|e| CliError::io(&root, e))?;
            if entries.next().is_some() {
                return Err(CliError::new(
                    "not_empty",
                    format!("{} is not empty", root.display()),
                ));
            }
        }
        manifest.validate()?;
        for a in &manifest.annotators {
            check_name("annotator", a)?;
        }
        fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        let store = Store { root };
        store.write_json(&store.manifest_path(), manifest)?;
        write_atomic(&store.docs_path(), b"")?;
        Ok(store)
    }

    pub fn open(root: impl Into<PathBuf>) -> CliResult<Store> {
        let store = Store { root: root.into() };
        if !store.manifest_path().is_file() {
            return Err(CliError::new(
                "no_project",
                format!("{} has no manifest.json; run `annoflow init` first", store.root.display()),
            ));
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn lock(&self) -> CliResult<StoreLock> {
        let path = self.root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(StoreLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::new(
                "locked",
                format!("{} is locked by another command (remove {} if stale)", self.root.display(), path.display()),
            )),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn docs_path(&self) -> PathBuf {
        self.root.join("docs.jsonl")
    }

    pub fn plan_path(&self, stage: Stage) -> PathBuf {
        self.root.join("plans").join(format!("{stage}.json"))
    }

    pub fn review_plan_path(&self, stage: Stage) -> PathBuf {
        self.root.join("plans").join(format!("{stage}-review.json"))
    }

    pub fn annotation_path(&self, stage: Stage, annotator: &str, review: bool) -> PathBuf {
        let dir = self.root.join("annotations").join(stage.to_string());
        let dir = if review { dir.join("review") } else { dir };
        dir.join(format!("{annotator}.jsonl"))
    }

    pub fn merge_path(&self, stage: Stage) -> PathBuf {
        self.root.join("merges").join(format!("{stage}.json"))
    }

    pub fn resolutions_path(&self, stage: Stage) -> PathBuf {
        self.root.join("resolutions").join(format!("{stage}.json"))
    }

    pub fn pool_path(&self, stage: Stage) -> PathBuf {
        self.root.join("pool").join(format!("{stage}.jsonl"))
    }

    pub fn pre_path(&self, name: &str) -> PathBuf {
        self.root.join("pre").join(format!("{name}.jsonl"))
    }

    pub fn selection_path(&self) -> PathBuf {
        self.root.join("selection.json")
    }

    pub fn monitor_path(&self) -> PathBuf {
        self.root.join("monitor.json")
    }

    pub fn curve_path(&self) -> PathBuf {
        self.root.join("curve.csv")
    }

    pub fn manifest(&self) -> CliResult<ProjectManifest> {
        let path = self.manifest_path();
        let m: ProjectManifest = read_json(&path)?
            .ok_or_else(|| CliError::new("no_project", format!("{} is missing", path.display())))?;
        m.validate().map_err(|e| CliError::from(e).at(path.display()))?;
        Ok(m)
    }

    pub fn write_manifest(&self, m: &ProjectManifest) -> CliResult<()> {
        m.validate()?;
        self.write_json(&self.manifest_path(), m)
    }

    pub fn docs(&self) -> CliResult<Vec<Document>> {
        read_jsonl(&self.docs_path())
    }

    pub fn doc_index(&self) -> CliResult<BTreeMap<String, Document>> {
        Ok(self.docs()?.into_iter().map(|d| (d.id.clone(), d)).collect())
    }

    pub fn plan(&self, stage: Stage) -> CliResult<Option<BatchPlan>> {
        read_json(&self.plan_path(stage))
    }

    pub fn review_plan(&self, stage: Stage) -> CliResult<Option<BatchPlan>> {
        read_json(&self.review_plan_path(stage))
    }

    /// Stages that have a plan, in order (`test` first).
    pub fn planned_stages(&self) -> CliResult<Vec<Stage>> {
        let mut stages = BTreeSet::new();
        let dir = self.root.join("plans");
        if dir.is_dir() {
            for entry in fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
                let entry = entry.map_err(|e| CliError::io(&dir, e))?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if let Some(stem) = name.strip_suffix(".json") {
                    if !stem.ends_with("-review") {
                        if let Ok(stage) = Stage::parse(stem) {
                            stages.insert(stage);
                        }
                    }
                }
            }
        }
        Ok(stages.into_iter().collect())
    }

    pub fn last_iteration(&self) -> CliResult<u32> {
        Ok(self.planned_stages()?.iter().map(|s| s.iteration()).max().unwrap_or(0))
    }

    pub fn annotations(&self, stage: Stage, annotator: &str, review: bool) -> CliResult<Option<AnnotationSet>> {
        let path = self.annotation_path(stage, annotator, review);
        if !path.is_file() {
            return Ok(None);
        }
        let records: Vec<Annotation> = read_jsonl(&path)?;
        let set = AnnotationSet::from_annotations(annotator, records).map_err(|e| CliError::from(e).at(path.display()))?;
        Ok(Some(set))
    }

    pub fn write_annotations(&self, path: &Path, set: &AnnotationSet) -> CliResult<()> {
        write_jsonl(path, set.iter())
    }

    pub fn merges(&self, stage: Stage) -> CliResult<Option<Vec<MergedDocument>>> {
        read_json(&self.merge_path(stage))
    }

    pub fn resolutions(&self, stage: Stage) -> CliResult<Vec<Resolution>> {
        Ok(read_json(&self.resolutions_path(stage))?.unwrap_or_default())
    }

    pub fn pool(&self, stage: Stage) -> CliResult<Option<AnnotationSet>> {
        let path = self.pool_path(stage);
        if !path.is_file() {
            return Ok(None);
        }
        let records: Vec<Annotation> = read_jsonl(&path)?;
        let set = AnnotationSet::from_annotations(POOL_ANNOTATOR, records)
            .map_err(|e| CliError::from(e).at(path.display()))?;
        Ok(Some(set))
    }

    /// Every resolved annotation in the store, keyed by stage.
    pub fn pools(&self) -> CliResult<BTreeMap<Stage, AnnotationSet>> {
        let mut out = BTreeMap::new();
        for stage in self.planned_stages()? {
            if let Some(set) = self.pool(stage)? {
                out.insert(stage, set);
            }
        }
        Ok(out)
    }

    pub fn pre_annotations(&self, name: &str) -> CliResult<BTreeMap<String, Annotation>> {
        let path = self.pre_path(name);
        if !path.is_file() {
            return Ok(BTreeMap::new());
        }
        let records: Vec<Annotation> = read_jsonl(&path)?;
        Ok(records.into_iter().map(|a| (a.doc_id.clone(), a)).collect())
    }

    /// Every annotation file (raw, review, pool and pre-annotation).
    pub fn annotation_files(&self) -> CliResult<Vec<PathBuf>> {
        let mut files = Vec::new();
        for dir in ["annotations", "pool", "pre"] {
            collect_jsonl(&self.root.join(dir), &mut files)?;
        }
        files.sort();
        Ok(files)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, path: &Path, value: &T) -> CliResult<()> {
        write_json(path, value)
    }
}

fn collect_jsonl(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect_jsonl(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "jsonl") {
            out.push(path);
        }
    }
    Ok(())
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("serialize", e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> CliResult<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).map_err(|e| CliError::new("serialize", e.to_string()))?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<Option<T>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(CliError::io(path, e)),
    };
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::new("malformed_json", format!("{}: {e}", path.display())))
}

/// Reads one JSON record per non-blank line; errors name the 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    Ok(read_jsonl_numbered(path)?.into_iter().map(|(_, r)| r).collect())
}

/// Like [`read_jsonl`] but keeps the 1-based line number of each record.
pub fn read_jsonl_numbered<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<(usize, T)>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::new("not_found", format!("{} does not exist", path.display())))
        }
        Err(e) => return Err(CliError::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| CliError::new("malformed_jsonl", format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push((i + 1, record));
    }
    Ok(out)
}

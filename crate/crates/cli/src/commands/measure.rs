use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use annoflow_core::accelerate::{import_predictions, Prediction, MODEL_ANNOTATOR};
use annoflow_core::agreement::{cohen_kappa, fleiss_kappa, pairwise_f1, AgreementMetric, AgreementReport};
use annoflow_core::metrics::{
    accuracy, entity_f1, pearson, precision_recall_f1, rmse, score_pairs, spearman, Aggregation, EvalReport,
};
use annoflow_core::monitor::{
    check_representativeness, detect_plateau, label_distribution, resplit as resplit_core, IterationRecord,
    LearningCurve, PoolItem, SplitStatus, RESPLIT_WARNING,
};
use annoflow_core::partition::PlanMode;
use annoflow_core::{Annotation, AnnotationSet, LabelSchema, ProjectManifest, TaskKind};
use serde::{Deserialize, Serialize};

use super::{annotated, fmt4, resolve_stage, train_and_gold};
use crate::error::{CliError, CliResult};
use crate::store::{read_jsonl, read_jsonl_numbered, write_atomic, write_json, Stage, Store};
use crate::Output;

#[derive(Debug, Clone, Default)]
pub struct AgreementArgs {
    pub stage: Option<Stage>,
    pub files: Vec<PathBuf>,
    pub metric: Option<AgreementMetric>,
}

fn relabeled(name: &str, anns: impl IntoIterator<Item = Annotation>) -> CliResult<AnnotationSet> {
    let mut set = AnnotationSet::new(name);
    for mut ann in anns {
        ann.annotator = name.to_string();
        set.insert(ann)?;
    }
    Ok(set)
}

fn default_metric(schema: &LabelSchema, raters: usize) -> CliResult<AgreementMetric> {
    match schema.task_kind {
        TaskKind::DocClass if raters > 2 => Ok(AgreementMetric::FleissKappa),
        TaskKind::DocClass => Ok(AgreementMetric::CohenKappa),
        TaskKind::SpanLabel => Ok(AgreementMetric::PairwiseF1),
        TaskKind::PairRegress => Err(CliError::new(
            "wrong_task_kind",
            "agreement metrics need a doc_class or span_label schema",
        )),
    }
}

fn compute(metric: AgreementMetric, sets: &[AnnotationSet], schema: &LabelSchema) -> CliResult<AgreementReport> {
    let pair = || {
        if sets.len() == 2 {
            Ok((&sets[0], &sets[1]))
        } else {
            Err(CliError::new(
                "invalid_parameter",
                format!("{metric:?} compares exactly 2 annotators, got {}", sets.len()),
            ))
        }
    };
    Ok(match metric {
        AgreementMetric::CohenKappa => {
            let (a, b) = pair()?;
            cohen_kappa(a, b, schema)?
        }
        AgreementMetric::PairwiseF1 => {
            let (a, b) = pair()?;
            pairwise_f1(a, b, schema)?
        }
        AgreementMetric::FleissKappa => fleiss_kappa(sets, schema)?,
    })
}

fn metric_name(metric: AgreementMetric) -> &'static str {
    match metric {
        AgreementMetric::CohenKappa => "cohen_kappa",
        AgreementMetric::FleissKappa => "fleiss_kappa",
        AgreementMetric::PairwiseF1 => "pairwise_f1",
    }
}

fn report_lines(r: &AgreementReport, out: &mut Output) {
    out.line(format!("{} {} (n={})", metric_name(r.metric), fmt4(r.value), r.n_items));
    if let (Some(o), Some(e)) = (r.observed_agreement, r.expected_agreement) {
        out.line(format!("  observed {} expected {}", fmt4(o), fmt4(e)));
    }
    for (class, v) in r.per_class.iter().flatten() {
        out.line(format!("  {class}: {}", fmt4(*v)));
    }
}

/// Pooled agreement of a cross-annotated stage: side A of every part against
/// side B. `None` when the stage is not cross-annotated, not fully imported,
/// or the task has no agreement metric.
pub fn stage_agreement(store: &Store, stage: Stage) -> CliResult<Option<AgreementReport>> {
    let manifest = store.manifest()?;
    let Ok(metric) = default_metric(&manifest.schema, 2) else {
        return Ok(None);
    };
    match pooled_sides(store, stage)? {
        Some(sides) => Ok(compute(metric, &sides, &manifest.schema).ok()),
        None => Ok(None),
    }
}

fn pooled_sides(store: &Store, stage: Stage) -> CliResult<Option<Vec<AnnotationSet>>> {
    let Some(plan) = store.plan(stage)? else {
        return Ok(None);
    };
    if plan.mode != PlanMode::Cross {
        return Ok(None);
    }
    let mut side_a = Vec::new();
    let mut side_b = Vec::new();
    for a in &plan.assignments {
        let ids = a.part.doc_ids.iter().map(String::as_str);
        let (Some(x), Some(y)) = (
            store.annotations(stage, &a.annotators[0], false)?,
            store.annotations(stage, &a.annotators[1], false)?,
        ) else {
            return Ok(None);
        };
        let x = x.restricted_to(ids.clone());
        let y = y.restricted_to(ids);
        if x.len() != a.part.doc_ids.len() || y.len() != a.part.doc_ids.len() {
            return Ok(None);
        }
        side_a.extend(x.iter().cloned());
        side_b.extend(y.iter().cloned());
    }
    Ok(Some(vec![relabeled("side-a", side_a)?, relabeled("side-b", side_b)?]))
}

/// Agreement over annotation files (one annotator each) or over a
/// cross-annotated stage of the store.
pub fn agreement(store: &Store, args: &AgreementArgs) -> CliResult<Output> {
    let manifest = store.manifest()?;
    let schema = &manifest.schema;
    let mut out = Output::default();

    if !args.files.is_empty() {
        let mut sets = Vec::new();
        for f in &args.files {
            let records: Vec<Annotation> = read_jsonl(f)?;
            let who = records
                .first()
                .map(|a| a.annotator.clone())
                .ok_or_else(|| CliError::new("empty_file", format!("{} has no annotations", f.display())))?;
            let set = AnnotationSet::from_annotations(who, records).map_err(|e| CliError::from(e).at(f.display()))?;
            sets.push(set);
        }
        let shared: Vec<String> = sets[0]
            .doc_ids()
            .filter(|d| sets.iter().all(|s| s.get(d).is_some()))
            .map(str::to_string)
            .collect();
        let dropped: usize = sets.iter().map(|s| s.len() - shared.len()).sum();
        if dropped > 0 {
            out.warn(format!(
                "compared the {} documents present in every file; ignored {dropped} other annotations",
                shared.len()
            ));
            sets = sets
                .iter()
                .map(|s| s.restricted_to(shared.iter().map(String::as_str)))
                .collect();
        }
        let metric = match args.metric {
            Some(m) => m,
            None => default_metric(schema, sets.len())?,
        };
        report_lines(&compute(metric, &sets, schema)?, &mut out);
        return Ok(out);
    }

    let stage = resolve_stage(store, args.stage)?;
    let plan = super::require_plan(store, stage)?;
    if plan.mode != PlanMode::Cross {
        return Err(CliError::new(
            "not_cross",
            format!("stage {stage} is not cross-annotated; pass annotation files instead"),
        ));
    }
    let metric = match args.metric {
        Some(AgreementMetric::FleissKappa) => {
            return Err(CliError::new(
                "invalid_parameter",
                "cross-annotated stages have two annotators per document; use cohen_kappa or pairwise_f1",
            ))
        }
        Some(m) => m,
        None => default_metric(schema, 2)?,
    };
    let sides = pooled_sides(store, stage)?.ok_or_else(|| {
        CliError::new("missing_annotations", format!("not every annotator has imported {stage}"))
    })?;
    out.line(format!("stage {stage}, pooled over {} parts", plan.assignments.len()));
    report_lines(&compute(metric, &sides, schema)?, &mut out);
    for (i, a) in plan.assignments.iter().enumerate() {
        let ids = || a.part.doc_ids.iter().map(String::as_str);
        let x = store.annotations(stage, &a.annotators[0], false)?.unwrap_or_default_for(&a.annotators[0]);
        let y = store.annotations(stage, &a.annotators[1], false)?.unwrap_or_default_for(&a.annotators[1]);
        let value = compute(metric, &[x.restricted_to(ids()), y.restricted_to(ids())], schema)
            .map(|r| fmt4(r.value))
            .unwrap_or_else(|e| format!("undefined ({})", e.message));
        out.line(format!(
            "  part {i} ({} vs {}): {value}",
            a.annotators[0], a.annotators[1]
        ));
    }
    Ok(out)
}

trait OrEmpty {
    fn unwrap_or_default_for(self, annotator: &str) -> AnnotationSet;
}

impl OrEmpty for Option<AnnotationSet> {
    fn unwrap_or_default_for(self, annotator: &str) -> AnnotationSet {
        self.unwrap_or_else(|| AnnotationSet::new(annotator))
    }
}

fn read_predictions(file: &Path) -> CliResult<Vec<(usize, Prediction)>> {
    read_jsonl_numbered(file)
}

/// Model-provenance annotations from a predictions file, keeping only the
/// documents in `keep`.
fn predictions_for(
    store: &Store,
    manifest: &ProjectManifest,
    file: &Path,
    keep: impl Fn(&str) -> bool,
    out: &mut Output,
) -> CliResult<AnnotationSet> {
    let preds: Vec<Prediction> = read_predictions(file)?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    let total = preds.len();
    let kept: Vec<Prediction> = preds.into_iter().filter(|p| keep(&p.doc_id)).collect();
    if kept.len() < total {
        out.warn(format!("ignored {} predictions outside the evaluated documents", total - kept.len()));
    }
    let docs = store.docs()?;
    import_predictions(&kept, &docs, &manifest.schema, MODEL_ANNOTATOR)
        .map_err(|e| CliError::from(e).at(file.display()))
}

fn eval_reports(
    gold: &AnnotationSet,
    pred: &AnnotationSet,
    schema: &LabelSchema,
    aggregation: Aggregation,
) -> CliResult<Vec<EvalReport>> {
    Ok(match schema.task_kind {
        TaskKind::DocClass => vec![
            precision_recall_f1(gold, pred, schema, aggregation)?,
            accuracy(gold, pred)?,
        ],
        TaskKind::SpanLabel => vec![entity_f1(gold, pred)?],
        TaskKind::PairRegress => {
            let (g, p) = score_pairs(gold, pred)?;
            vec![pearson(&g, &p)?, spearman(&g, &p)?, rmse(&g, &p)?]
        }
    })
}

/// Evaluates predictions against the test-set gold annotations. With
/// `record`, the headline metric is appended to the learning curve.
pub fn eval(store: &Store, predictions: &Path, aggregation: Aggregation, record: bool) -> CliResult<Output> {
    let _lock = if record { Some(store.lock()?) } else { None };
    let manifest = store.manifest()?;
    let (_, gold) = train_and_gold(store, &manifest)?;
    if gold.is_empty() {
        return Err(CliError::new(
            "no_gold",
            "the test set has no resolved annotations yet; merge and apply the test stage first",
        ));
    }
    let mut out = Output::default();
    let pred = predictions_for(store, &manifest, predictions, |id| gold.get(id).is_some(), &mut out)?;
    let reports = eval_reports(&gold, &pred, &manifest.schema, aggregation)?;
    for r in &reports {
        out.line(format!("{} {} (support {})", r.metric, fmt4(r.value), r.support));
        if let (Some(p), Some(rc)) = (r.precision, r.recall) {
            out.line(format!("  precision {} recall {}", fmt4(p), fmt4(rc)));
        }
        for (class, s) in r.per_class.iter().flatten() {
            let show = |x: Option<f64>| x.map(fmt4).unwrap_or_else(|| "undefined".into());
            out.line(format!(
                "  {class}: precision {} recall {} f1 {}",
                show(s.precision),
                show(s.recall),
                show(s.f1)
            ));
        }
        if !r.undefined_classes.is_empty() {
            out.warn(format!("classes without gold support excluded: {}", r.undefined_classes.join(", ")));
        }
    }
    if record {
        let head = &reports[0];
        let args = CurveArgs {
            value: Some(head.value),
            metric: Some(head.metric.clone()),
            iteration: None,
        };
        curve_locked(store, &manifest, &args, &mut out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CurveRow {
    iteration: u32,
    size: usize,
    metric: String,
    value: f64,
    agreement: Option<f64>,
}

pub(crate) fn read_curve(store: &Store) -> CliResult<Vec<IterationRecord>> {
    let path = store.curve_path();
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(&path).map_err(|e| CliError::new("malformed_csv", e.to_string()))?;
    reader
        .deserialize::<CurveRow>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| CliError::new("malformed_csv", format!("{}:{}: {e}", path.display(), i + 2)))?;
            let mut rec = IterationRecord::new(row.iteration, row.size, row.metric, row.value);
            rec.agreement_value = row.agreement;
            Ok(rec)
        })
        .collect()
}

fn write_curve(path: &Path, records: &[IterationRecord]) -> CliResult<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in records {
        writer
            .serialize(CurveRow {
                iteration: r.iteration,
                size: r.cumulative_train_size,
                metric: r.metric_name.clone(),
                value: r.metric_value,
                agreement: r.agreement_value,
            })
            .map_err(|e| CliError::new("serialize", e.to_string()))?;
    }
    if records.is_empty() {
        writer
            .write_record(["iteration", "size", "metric", "value", "agreement"])
            .map_err(|e| CliError::new("serialize", e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| CliError::new("serialize", e.to_string()))?;
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, Default)]
pub struct CurveArgs {
    pub value: Option<f64>,
    pub metric: Option<String>,
    pub iteration: Option<u32>,
}

/// Records a metric value for an applied iteration (if `value` is given) and
/// reports plateau status.
pub fn curve(store: &Store, args: &CurveArgs) -> CliResult<Output> {
    let _lock = if args.value.is_some() { Some(store.lock()?) } else { None };
    let manifest = store.manifest()?;
    let mut out = Output::default();
    curve_locked(store, &manifest, args, &mut out)?;
    Ok(out)
}

fn training_size(store: &Store, manifest: &ProjectManifest, up_to: u32) -> CliResult<usize> {
    let test: std::collections::BTreeSet<&str> = manifest.test_set.iter().map(String::as_str).collect();
    let mut ids = std::collections::BTreeSet::new();
    for (stage, set) in store.pools()? {
        if matches!(stage, Stage::Iter(n) if n <= up_to) {
            ids.extend(set.doc_ids().filter(|d| !test.contains(d)).map(str::to_string));
        }
    }
    Ok(ids.len())
}

fn curve_locked(store: &Store, manifest: &ProjectManifest, args: &CurveArgs, out: &mut Output) -> CliResult<()> {
    let mut records = read_curve(store)?;
    if let Some(value) = args.value {
        let iteration = args
            .iteration
            .unwrap_or_else(|| records.last().map_or(1, |r| r.iteration + 1));
        if !store.pool_path(Stage::Iter(iteration)).is_file() {
            return Err(CliError::new(
                "no_applied_iteration",
                format!("iteration {iteration} has not been applied"),
            ));
        }
        let metric = args
            .metric
            .clone()
            .or_else(|| records.last().map(|r| r.metric_name.clone()))
            .unwrap_or_else(|| "f1".to_string());
        let mut rec = IterationRecord::new(iteration, training_size(store, manifest, iteration)?, metric, value);
        rec.agreement_value = stage_agreement(store, Stage::Iter(iteration))?.map(|r| r.value);
        let mut curve = LearningCurve::from_records(records.clone())?;
        curve.record(rec.clone())?;
        records = curve.records().to_vec();
        write_curve(&store.curve_path(), &records)?;
        out.line(format!(
            "recorded iteration {}: {} training documents, {} = {}",
            rec.iteration,
            rec.cumulative_train_size,
            rec.metric_name,
            fmt4(rec.metric_value)
        ));
    }

    for r in &records {
        let agreement = r.agreement_value.map(fmt4).unwrap_or_else(|| "-".into());
        out.line(format!(
            "  iteration {:>3}  size {:>6}  {} {}  agreement {agreement}",
            r.iteration,
            r.cumulative_train_size,
            r.metric_name,
            fmt4(r.metric_value)
        ));
    }
    let window = manifest.plateau_window;
    if records.len() <= window {
        out.line(format!(
            "plateau check needs at least {} points, have {}",
            window + 1,
            records.len()
        ));
        return Ok(());
    }
    let curve = LearningCurve::from_records(records)?;
    let status = detect_plateau(&curve, manifest.plateau_epsilon, window)?;
    match status.at_iteration {
        Some(at) if status.plateaued => out.line(format!(
            "plateau reached at iteration {at} (epsilon {}, window {window})",
            manifest.plateau_epsilon
        )),
        _ => out.line(format!(
            "no plateau yet (epsilon {}, window {window})",
            manifest.plateau_epsilon
        )),
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct MonitorSnapshot {
    divergence: f64,
    status: SplitStatus,
    threshold: f64,
    train: BTreeMap<String, f64>,
    test: BTreeMap<String, f64>,
}

/// Compares the label distributions of the training pool and the test gold.
pub fn monitor_split(store: &Store) -> CliResult<Output> {
    let _lock = store.lock()?;
    let manifest = store.manifest()?;
    let (train, gold) = train_and_gold(store, &manifest)?;
    let p = label_distribution(&[&train], &manifest.schema)?;
    let q = label_distribution(&[&gold], &manifest.schema)?;
    let report = check_representativeness(&p, &q, manifest.divergence_threshold);
    write_json(
        &store.monitor_path(),
        &MonitorSnapshot {
            divergence: report.divergence,
            status: report.status,
            threshold: manifest.divergence_threshold,
            train: p.0.clone(),
            test: q.0.clone(),
        },
    )?;

    let mut out = Output::default();
    out.line(format!(
        "divergence {} (threshold {}): {}",
        fmt4(report.divergence),
        manifest.divergence_threshold,
        match report.status {
            SplitStatus::Ok => "ok",
            SplitStatus::ConsiderResplit => "consider resplit",
        }
    ));
    for class in &manifest.schema.classes {
        out.line(format!("  {class}: train {} test {}", fmt4(p.get(class)), fmt4(q.get(class))));
    }
    Ok(out)
}

/// Draws a new test set from all resolved documents. Archives the learning
/// curve, since earlier evaluations are no longer comparable.
pub fn resplit(store: &Store, fraction: f64, seed: Option<u64>, stratified: bool) -> CliResult<Output> {
    let _lock = store.lock()?;
    let mut manifest = store.manifest()?;
    let all = annotated(store)?;
    let pool: Vec<PoolItem> = all
        .iter()
        .map(|a| PoolItem::new(a.doc_id.clone(), a.payload.as_class()))
        .collect();
    if stratified && manifest.schema.task_kind != TaskKind::DocClass {
        return Err(CliError::new(
            "wrong_task_kind",
            "stratified resplit needs document-level class labels",
        ));
    }
    let split = resplit_core(&pool, fraction, seed.unwrap_or(manifest.seed), stratified)?;
    let mut test = split.test.clone();
    test.sort();
    manifest.test_set = test;
    store.write_manifest(&manifest)?;

    let mut out = Output::default();
    let curve = store.curve_path();
    if curve.is_file() {
        let archived = store.root().join("curve.before-resplit.csv");
        std::fs::rename(&curve, &archived).map_err(|e| CliError::io(&curve, e))?;
        out.line(format!("archived the learning curve to {}", archived.display()));
    }
    out.line(format!(
        "new test set: {} documents; training pool: {} documents",
        split.test.len(),
        split.train.len()
    ));
    out.line(RESPLIT_WARNING);
    Ok(out)
}

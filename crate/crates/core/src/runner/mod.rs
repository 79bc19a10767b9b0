//! Pipeline orchestration: dataset loading, per-image evaluation and report
//! emission.
//!
//! Every output file carries the configuration hash and seed. Records are
//! written in manifest order and descending threshold order regardless of
//! the worker count, so reruns with the same configuration are
//! byte-identical.

pub mod config;
pub mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use rayon::prelude::*;
use serde::Serialize;

use crate::attack::{check_bounds, check_vulnerability_arrays, enumerate_attacks, BoundReport, Violation};
use crate::backend::{Classifier, SyntheticModel, Thresholds};
use crate::demux::{demux_certify_with, demux_infer_with, location_aware_certify, AttackerMode, CertSummary};
use crate::error::{Error, Result};
use crate::geometry::{generate_mask_set, verify_covering, MaskSet, PatchSpec};
use crate::image::Image;
use crate::labels::{confusion, LabelBits};
use crate::metrics::{
    precision_at_recall, threshold_sweep, Counts, MetricSource, PrCurve, RecallProbe, Setting,
};
use crate::query::{OcclusionKey, QueryService};

pub use config::{parse_masks, parse_patch, BackendKind, OnnxOptions, RunConfig};
pub use manifest::{DatasetManifest, InlineImage, ManifestEntry, ManifestHeader};

/// Recall levels reported in summaries.
pub const REPORTED_RECALLS: [f64; 3] = [0.25, 0.5, 0.75];

pub enum LoadedModel {
    Synthetic(SyntheticModel),
    #[cfg(feature = "onnx")]
    Onnx(crate::backend::onnx::OnnxModel),
}

impl LoadedModel {
    pub fn classifier(&self) -> &dyn Classifier {
        match self {
            LoadedModel::Synthetic(m) => m,
            #[cfg(feature = "onnx")]
            LoadedModel::Onnx(m) => m,
        }
    }
}

pub fn load_model(cfg: &RunConfig) -> Result<LoadedModel> {
    let path = cfg
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("no model given (--model)".into()))?;
    match cfg.backend {
        BackendKind::Synthetic => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("reading model {}: {e}", path.display())))?;
            SyntheticModel::from_json(&text)
                .map(LoadedModel::Synthetic)
                .map_err(|e| Error::Config(format!("model {}: {e}", path.display())))
        }
        #[cfg(feature = "onnx")]
        BackendKind::Onnx => {
            use crate::backend::onnx::{OnnxConfig, OnnxModel};
            let o = &cfg.onnx;
            OnnxModel::load(OnnxConfig {
                path: path.clone(),
                input_height: o.input_height,
                input_width: o.input_width,
                channels: o.channels,
                resize: o.resize.parse()?,
                logits: o.logits,
                mean: o.mean.clone(),
                std: o.std.clone(),
                low_score_regime: o.low_score_regime,
            })
            .map(LoadedModel::Onnx)
        }
        #[cfg(not(feature = "onnx"))]
        BackendKind::Onnx => Err(Error::Config("this build has no ONNX support".into())),
    }
}

#[derive(Debug, Clone)]
pub struct Item {
    pub id: String,
    pub image: Image,
    pub labels: LabelBits,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageFailure {
    pub image_id: String,
    pub error: String,
    #[serde(skip)]
    pub backend: bool,
}

/// Decode all manifest images, logging and skipping failures.
pub fn load_items(manifest: &DatasetManifest, num_classes: usize) -> Result<(Vec<Item>, Vec<ImageFailure>)> {
    if manifest.num_classes != num_classes {
        return Err(Error::Config(format!(
            "manifest declares {} classes, model has {num_classes}",
            manifest.num_classes
        )));
    }
    let decoded: Vec<_> = manifest
        .entries
        .par_iter()
        .map(|e| (e, manifest.load_image(e)))
        .collect();
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for (e, r) in decoded {
        match r {
            Ok(image) => items.push(Item {
                id: e.image_id.clone(),
                image,
                labels: e.labels.clone(),
            }),
            Err(err) => {
                log::warn!("skipping {}: {err}", e.image_id);
                failures.push(ImageFailure {
                    image_id: e.image_id.clone(),
                    error: err.to_string(),
                    backend: err.is_backend(),
                });
            }
        }
    }
    Ok((items, failures))
}

/// Per-image outcome at one threshold.
#[derive(Debug, Clone)]
pub struct ImageEval {
    pub undefended: Vec<bool>,
    pub defended: Vec<bool>,
    /// Location-aware summary (base bounds included).
    pub summary: Option<CertSummary>,
}

impl ImageEval {
    pub fn counts(&self, labels: &LabelBits, setting: Setting) -> Result<Counts> {
        let from = |(tp, fp, fn_): (usize, usize, usize)| Counts::new(tp, fp, fn_);
        let cert = || {
            self.summary
                .as_ref()
                .ok_or_else(|| Error::Internal("certification was not run".into()))
        };
        Ok(match setting {
            Setting::UndefendedClean => from(confusion(labels, &self.undefended)),
            Setting::DefendedClean => from(confusion(labels, &self.defended)),
            Setting::Certified => {
                let s = cert()?;
                Counts::new(s.tp_lower, s.fp_upper, s.fn_upper)
            }
            Setting::LocationAware => {
                let s = cert()?;
                Counts::new(s.tp_location(), s.fp_new, s.fn_new)
            }
        })
    }
}

struct ImageCtx<'a> {
    item: &'a Item,
    infer: QueryService<'a>,
    cert: QueryService<'a>,
}

/// Evaluates a dataset at arbitrary thresholds. Score vectors are cached per
/// image, so additional thresholds cost no further classifier calls.
pub struct Evaluator<'a> {
    ctxs: Vec<ImageCtx<'a>>,
    certify: bool,
    mode: AttackerMode,
    memo: Mutex<HashMap<u64, std::sync::Arc<Vec<ImageEval>>>>,
}

/// Mask sets keyed by image size.
pub fn mask_sets(items: &[Item], masks: (usize, usize), patch: PatchSpec) -> Result<BTreeMap<(usize, usize), MaskSet>> {
    let mut out = BTreeMap::new();
    for it in items {
        let key = (it.image.n1, it.image.n2);
        if let std::collections::btree_map::Entry::Vacant(e) = out.entry(key) {
            e.insert(generate_mask_set(key.0, key.1, patch, masks.0, masks.1)?);
        }
    }
    Ok(out)
}

impl<'a> Evaluator<'a> {
    pub fn new(
        model: &'a dyn Classifier,
        items: &'a [Item],
        masks: &'a BTreeMap<(usize, usize), MaskSet>,
        certify: bool,
        mode: AttackerMode,
    ) -> Result<Self> {
        let ctxs = items
            .iter()
            .map(|item| {
                let ms = masks.get(&(item.image.n1, item.image.n2)).ok_or_else(|| {
                    Error::Internal(format!("no mask set for {}", item.id))
                })?;
                Ok(ImageCtx {
                    item,
                    infer: QueryService::new(model, &item.image, ms),
                    cert: QueryService::new(model, &item.image, ms),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Evaluator {
            ctxs,
            certify,
            mode,
            memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.ctxs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ctxs.is_empty()
    }

    fn eval_one(&self, ctx: &ImageCtx<'_>, t: f64) -> Result<ImageEval> {
        let th = Thresholds::Global(t);
        let wrap = |e: Error| Error::Query {
            context: format!("image '{}' at threshold {t}", ctx.item.id),
            source: Box::new(e),
        };
        let undefended = ctx
            .infer
            .with_scores(OcclusionKey::Clean, |s| s.threshold(&th))
            .map_err(wrap)?;
        let defended = demux_infer_with(&ctx.infer, &th).map_err(wrap)?;
        let summary = if self.certify {
            let base = demux_certify_with(&ctx.cert, &ctx.item.labels, &th).map_err(wrap)?;
            Some(location_aware_certify(&base, self.mode)?)
        } else {
            None
        };
        Ok(ImageEval {
            undefended,
            defended,
            summary,
        })
    }

    /// Per-image evaluations at `t`, in dataset order.
    pub fn at(&self, t: f64) -> Result<std::sync::Arc<Vec<ImageEval>>> {
        if let Some(v) = self.memo.lock().get(&t.to_bits()) {
            return Ok(v.clone());
        }
        let evals: Vec<ImageEval> = self
            .ctxs
            .par_iter()
            .map(|ctx| self.eval_one(ctx, t))
            .collect::<Result<_>>()?;
        let evals = std::sync::Arc::new(evals);
        self.memo.lock().insert(t.to_bits(), evals.clone());
        Ok(evals)
    }

    /// Classifier evaluations made by certification for each image.
    pub fn certification_queries(&self) -> Vec<usize> {
        self.ctxs.iter().map(|c| c.cert.evaluations()).collect()
    }

    pub fn items(&self) -> impl Iterator<Item = &Item> {
        self.ctxs.iter().map(|c| c.item)
    }

    /// Curve and precision at the reported recall levels for one setting.
    pub fn report(&self, thresholds: &[f64], setting: Setting) -> Result<SettingReport> {
        let curve = threshold_sweep(self, thresholds, setting)?;
        let probes = REPORTED_RECALLS
            .iter()
            .map(|&target| {
                let probe = precision_at_recall(|t| self.point(t, setting), &curve.points, target)?;
                if !probe.converged {
                    log::warn!(
                        "{}: recall {target} bracketed only to {:?}/{:?}",
                        setting.name(),
                        probe.over.map(|p| p.recall),
                        probe.under.map(|p| p.recall)
                    );
                }
                Ok(probe)
            })
            .collect::<Result<_>>()?;
        Ok(SettingReport { curve, probes })
    }
}

impl MetricSource for Evaluator<'_> {
    fn counts(&self, threshold: f64, setting: Setting) -> Result<Vec<Counts>> {
        let evals = self.at(threshold)?;
        evals
            .iter()
            .zip(&self.ctxs)
            .map(|(e, ctx)| e.counts(&ctx.item.labels, setting))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SettingReport {
    pub curve: PrCurve,
    pub probes: Vec<RecallProbe>,
}

#[derive(Serialize)]
struct ProbeJson {
    precision: f64,
    converged: bool,
    iterations: usize,
}

#[derive(Serialize)]
struct SettingJson {
    ap: f64,
    precision_at_recall: BTreeMap<String, ProbeJson>,
}

#[derive(Serialize)]
struct SummaryJson<'a> {
    config_hash: &'a str,
    seed: u64,
    config: serde_json::Value,
    images: usize,
    thresholds: usize,
    failures: &'a [ImageFailure],
    settings: BTreeMap<&'static str, SettingJson>,
}

/// What a command produced, for exit-code decisions.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub failures: Vec<ImageFailure>,
    pub violations: usize,
    pub skipped: Option<String>,
}

struct Provenance {
    hash: String,
    seed: u64,
}

impl Provenance {
    fn of(cfg: &RunConfig) -> Self {
        Provenance {
            hash: cfg.hash(),
            seed: cfg.seed,
        }
    }

    fn csv_comment(&self) -> String {
        format!("# config_hash={} seed={}\n", self.hash, self.seed)
    }
}

fn create(out: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    std::fs::create_dir_all(out)?;
    let path = out.join(name);
    let f = File::create(&path)?;
    Ok((path, BufWriter::new(f)))
}

fn write_jsonl<T: Serialize>(out: &Path, name: &str, records: impl IntoIterator<Item = T>) -> Result<PathBuf> {
    let (path, mut w) = create(out, name)?;
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(path)
}

fn write_curves(out: &Path, prov: &Provenance, reports: &[SettingReport]) -> Result<PathBuf> {
    let (path, mut w) = create(out, "curves.csv")?;
    w.write_all(prov.csv_comment().as_bytes())?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["threshold", "precision", "recall", "setting"])?;
    for r in reports {
        for p in &r.curve.points {
            csv.write_record([
                p.threshold.to_string(),
                p.precision.to_string(),
                p.recall.to_string(),
                p.setting.name().to_string(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(path)
}

fn write_summary(
    out: &Path,
    cfg: &RunConfig,
    prov: &Provenance,
    images: usize,
    thresholds: usize,
    failures: &[ImageFailure],
    reports: &[SettingReport],
) -> Result<PathBuf> {
    let settings = reports
        .iter()
        .map(|r| {
            let probes = r
                .probes
                .iter()
                .map(|p| {
                    (
                        format!("{:.2}", p.target),
                        ProbeJson {
                            precision: p.precision,
                            converged: p.converged,
                            iterations: p.iterations,
                        },
                    )
                })
                .collect();
            (
                r.curve.setting.name(),
                SettingJson {
                    ap: r.curve.ap,
                    precision_at_recall: probes,
                },
            )
        })
        .collect();
    let summary = SummaryJson {
        config_hash: &prov.hash,
        seed: prov.seed,
        config: cfg.provenance(),
        images,
        thresholds,
        failures,
        settings,
    };
    let (path, mut w) = create(out, "summary.json")?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(path)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Drop images whose clean score vector cannot be computed.
fn probe_items(model: &dyn Classifier, items: Vec<Item>, failures: &mut Vec<ImageFailure>) -> Vec<Item> {
    let probed: Vec<_> = items
        .into_par_iter()
        .map(|it| {
            let r = model.score(&it.image).and_then(|s| s.validated(model.num_classes()));
            (it, r)
        })
        .collect();
    let mut kept = Vec::new();
    for (it, r) in probed {
        match r {
            Ok(_) => kept.push(it),
            Err(e) => {
                log::warn!("skipping {}: {e}", it.id);
                failures.push(ImageFailure {
                    image_id: it.id.clone(),
                    error: e.to_string(),
                    backend: e.is_backend(),
                });
            }
        }
    }
    kept
}

struct Prepared {
    model: LoadedModel,
    items: Vec<Item>,
    failures: Vec<ImageFailure>,
    thresholds: Vec<f64>,
}

fn prepare(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<Prepared> {
    cfg.validate()?;
    let model = load_model(cfg)?;
    let clf = model.classifier();
    let thresholds = cfg.threshold_values(clf.low_score_regime())?;
    let (items, mut failures) = load_items(manifest, clf.num_classes())?;
    let items = probe_items(clf, items, &mut failures);
    Ok(Prepared {
        model,
        items,
        failures,
        thresholds,
    })
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    config_hash: &'a str,
    seed: u64,
    image_id: &'a str,
    threshold: f64,
    labels: &'a LabelBits,
    undefended: LabelBits,
    defended: LabelBits,
}

#[derive(Serialize)]
struct CertifyRecord<'a> {
    config_hash: &'a str,
    seed: u64,
    image_id: &'a str,
    threshold: f64,
    query_count: usize,
    #[serde(flatten)]
    summary: &'a CertSummary,
}

fn evaluate(cfg: &RunConfig, manifest: &DatasetManifest, certify: bool) -> Result<RunOutcome> {
    let prov = Provenance::of(cfg);
    let Prepared {
        model,
        items,
        failures,
        thresholds,
    } = prepare(cfg, manifest)?;
    if items.is_empty() {
        return Err(Error::Dataset("no usable images in manifest".into()));
    }
    let masks = mask_sets(&items, cfg.masks, cfg.patch)?;
    let ev = Evaluator::new(model.classifier(), &items, &masks, certify, cfg.attacker)?;
    let settings: &[Setting] = if certify {
        &Setting::ALL
    } else {
        &[Setting::UndefendedClean, Setting::DefendedClean]
    };
    let reports = pool(cfg.workers)?.install(|| {
        settings
            .iter()
            .map(|&s| ev.report(&thresholds, s))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut files = Vec::new();
    if certify {
        let queries = ev.certification_queries();
        let mut records = Vec::new();
        for &t in &thresholds {
            let evals = ev.at(t)?;
            for ((e, item), &q) in evals.iter().zip(ev.items()).zip(&queries) {
                let summary = e.summary.as_ref().expect("certified");
                records.push(serde_json::to_value(CertifyRecord {
                    config_hash: &prov.hash,
                    seed: prov.seed,
                    image_id: &item.id,
                    threshold: t,
                    query_count: q,
                    summary,
                })?);
            }
        }
        files.push(write_jsonl(&cfg.out, "certify.jsonl", records)?);
    } else {
        let mut records = Vec::new();
        for &t in &thresholds {
            let evals = ev.at(t)?;
            for (e, item) in evals.iter().zip(ev.items()) {
                records.push(serde_json::to_value(PredictionRecord {
                    config_hash: &prov.hash,
                    seed: prov.seed,
                    image_id: &item.id,
                    threshold: t,
                    labels: &item.labels,
                    undefended: LabelBits(e.undefended.clone()),
                    defended: LabelBits(e.defended.clone()),
                })?);
            }
        }
        files.push(write_jsonl(&cfg.out, "predictions.jsonl", records)?);
    }
    files.push(write_curves(&cfg.out, &prov, &reports)?);
    files.push(write_summary(
        &cfg.out,
        cfg,
        &prov,
        items.len(),
        thresholds.len(),
        &failures,
        &reports,
    )?);
    Ok(RunOutcome {
        files,
        failures,
        violations: 0,
        skipped: None,
    })
}

/// Defended and undefended clean predictions and metrics.
pub fn run_infer(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<RunOutcome> {
    evaluate(cfg, manifest, false)
}

/// Certified bounds per image and metrics for all four settings.
pub fn run_certify(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<RunOutcome> {
    evaluate(cfg, manifest, true)
}

/// Deliberate corruption of certified bounds, used as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    TpLower,
    FnUpper,
    FpUpper,
}

impl std::str::FromStr for Mutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tp_lower" | "tp-lower" => Ok(Mutation::TpLower),
            "fn_upper" | "fn-upper" => Ok(Mutation::FnUpper),
            "fp_upper" | "fp-upper" => Ok(Mutation::FpUpper),
            other => Err(Error::Config(format!("unknown mutation '{other}'"))),
        }
    }
}

impl Mutation {
    /// Tighten the bound by one past what was proven. Returns false when the
    /// bound is already at its limit and cannot be tightened.
    pub fn apply(&self, s: &mut CertSummary) -> bool {
        match self {
            Mutation::TpLower => {
                s.tp_lower += 1;
                true
            }
            Mutation::FnUpper => match s.fn_upper.checked_sub(1) {
                Some(v) => {
                    s.fn_upper = v;
                    true
                }
                None => false,
            },
            Mutation::FpUpper => match s.fp_upper.checked_sub(1) {
                Some(v) => {
                    s.fp_upper = v;
                    true
                }
                None => false,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LocatedViolation {
    pub image_id: String,
    pub threshold: f64,
    #[serde(flatten)]
    pub violation: Violation,
}

#[derive(Serialize)]
struct BoundReportJson<'a> {
    config_hash: &'a str,
    seed: u64,
    mutation: Option<Mutation>,
    images: usize,
    thresholds: usize,
    placements: usize,
    assignments: usize,
    passed: bool,
    violations: &'a [LocatedViolation],
}

/// Verify every certification claim against the exhaustive adversary.
pub fn run_verify(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    mutation: Option<Mutation>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if cfg.backend != BackendKind::Synthetic {
        let msg = "verification needs the synthetic backend; skipping".to_string();
        log::info!("{msg}");
        return Ok(RunOutcome {
            skipped: Some(msg),
            ..RunOutcome::default()
        });
    }
    let prov = Provenance::of(cfg);
    let Prepared {
        model,
        items,
        failures,
        thresholds,
    } = prepare(cfg, manifest)?;
    #[allow(irrefutable_let_patterns)]
    let LoadedModel::Synthetic(model) = &model else {
        return Err(Error::Internal("synthetic backend expected".into()));
    };
    let masks = mask_sets(&items, cfg.masks, cfg.patch)?;
    let per_image = pool(cfg.workers)?.install(|| {
        items
            .par_iter()
            .map(|item| verify_item(cfg, model, item, &masks, &thresholds, mutation))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut total = BoundReport::default();
    let mut violations = Vec::new();
    for (item, reports) in items.iter().zip(per_image) {
        for (t, rep) in reports {
            violations.extend(rep.violations.iter().cloned().map(|v| LocatedViolation {
                image_id: item.id.clone(),
                threshold: t,
                violation: v,
            }));
            total.merge(rep);
        }
    }
    let json = BoundReportJson {
        config_hash: &prov.hash,
        seed: prov.seed,
        mutation,
        images: items.len(),
        thresholds: thresholds.len(),
        placements: total.placements,
        assignments: total.assignments,
        passed: violations.is_empty(),
        violations: &violations,
    };
    let (path, mut w) = create(&cfg.out, "bound_report.json")?;
    serde_json::to_writer_pretty(&mut w, &json)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(RunOutcome {
        files: vec![path],
        failures,
        violations: violations.len(),
        skipped: None,
    })
}

fn verify_item(
    cfg: &RunConfig,
    model: &SyntheticModel,
    item: &Item,
    masks: &BTreeMap<(usize, usize), MaskSet>,
    thresholds: &[f64],
    mutation: Option<Mutation>,
) -> Result<Vec<(f64, BoundReport)>> {
    let ms = &masks[&(item.image.n1, item.image.n2)];
    let cover = verify_covering(ms);
    let q = QueryService::new(model, &item.image, ms);
    thresholds
        .iter()
        .map(|&t| {
            let th = Thresholds::Global(t);
            let base = demux_certify_with(&q, &item.labels, &th)?;
            let mut summary = location_aware_certify(&base, cfg.attacker)?;
            if let Some(m) = mutation {
                m.apply(&mut summary);
            }
            let verdicts = enumerate_attacks(
                model,
                &item.image,
                &item.labels,
                ms,
                &th,
                ms.patch(),
                cfg.max_relevant_pixels,
            )?;
            let mut rep = check_bounds(&verdicts, &summary);
            let lambda = check_vulnerability_arrays(&verdicts, &summary, &cover)?;
            rep.violations.extend(lambda.violations);
            Ok((t, rep))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub masks: String,
    pub patch: String,
    pub setting: &'static str,
    pub ap: f64,
}

pub fn format_patch(p: &PatchSpec) -> String {
    match *p {
        PatchSpec::Pixels { p1, p2 } if p1 == p2 => p1.to_string(),
        PatchSpec::Pixels { p1, p2 } => format!("{p1}x{p2}"),
        PatchSpec::AreaFraction(f) => format!("{}%", f * 100.0),
    }
}

/// Certification repeated over a grid of mask budgets and patch sizes.
pub fn run_sweep(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    mask_grid: &[(usize, usize)],
    patch_grid: &[PatchSpec],
) -> Result<(RunOutcome, Vec<SweepRow>)> {
    if mask_grid.is_empty() || patch_grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    for &masks in mask_grid {
        for &patch in patch_grid {
            RunConfig { masks, patch, ..cfg.clone() }.validate()?;
        }
    }
    let prov = Provenance::of(cfg);
    let Prepared {
        model,
        items,
        failures,
        thresholds,
    } = prepare(cfg, manifest)?;
    if items.is_empty() {
        return Err(Error::Dataset("no usable images in manifest".into()));
    }
    let workers = pool(cfg.workers)?;
    let mut rows = Vec::new();
    for &masks in mask_grid {
        for patch in patch_grid {
            let sets = mask_sets(&items, masks, *patch)?;
            let ev = Evaluator::new(model.classifier(), &items, &sets, true, cfg.attacker)?;
            for setting in Setting::ALL {
                let curve = workers.install(|| threshold_sweep(&ev, &thresholds, setting))?;
                rows.push(SweepRow {
                    masks: format!("{}x{}", masks.0, masks.1),
                    patch: format_patch(patch),
                    setting: setting.name(),
                    ap: curve.ap,
                });
            }
        }
    }
    let (path, mut w) = create(&cfg.out, "sweep.csv")?;
    w.write_all(prov.csv_comment().as_bytes())?;
    let mut csv = csv::Writer::from_writer(w);
    for r in &rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok((
        RunOutcome {
            files: vec![path],
            failures,
            violations: 0,
            skipped: None,
        },
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_suite, SuiteParams};

    fn write_suite(dir: &Path) -> (RunConfig, DatasetManifest) {
        let suite = generate_suite(3, &SuiteParams { images: 6, ..SuiteParams::default() }).unwrap();
        let model_path = dir.join("model.json");
        std::fs::write(&model_path, suite.model.to_json().unwrap()).unwrap();
        let manifest = DatasetManifest {
            num_classes: suite.model.classes.len(),
            entries: suite
                .items
                .iter()
                .map(|i| ManifestEntry {
                    image_id: i.id.clone(),
                    image: None,
                    synthetic: Some(InlineImage::from_image(&i.image)),
                    labels: i.labels.clone(),
                })
                .collect(),
            root: dir.to_path_buf(),
        };
        let cfg = RunConfig {
            masks: (3, 3),
            patch: PatchSpec::square(2),
            thresholds: "standard".into(),
            model: Some(model_path),
            out: dir.join("out"),
            ..RunConfig::default()
        };
        (cfg, manifest)
    }

    #[test]
    fn certify_writes_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, manifest) = write_suite(dir.path());
        let out = run_certify(&cfg, &manifest).unwrap();
        assert_eq!(out.files.len(), 3);
        let text = std::fs::read_to_string(cfg.out.join("certify.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 6 * 10);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["config_hash"], cfg.hash());
        assert_eq!(first["query_count"], 45);
        for key in ["tp_lower", "fp_upper", "fn_upper", "kappa", "fn_new", "fp_new", "attacker_mode"] {
            assert!(first.get(key).is_some(), "{key}");
        }
        let curves = std::fs::read_to_string(cfg.out.join("curves.csv")).unwrap();
        assert!(curves.starts_with(&format!("# config_hash={}", cfg.hash())));
    }

    #[test]
    fn verify_passes_and_mutation_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let (mut cfg, manifest) = write_suite(dir.path());
        let t = dir.path().join("thresholds.txt");
        std::fs::write(&t, "0.3\n0.5\n").unwrap();
        cfg.thresholds = t.display().to_string();
        let ok = run_verify(&cfg, &manifest, None).unwrap();
        assert_eq!(ok.violations, 0);
        let bad = run_verify(&cfg, &manifest, Some(Mutation::TpLower)).unwrap();
        assert!(bad.violations > 0);
    }

    #[test]
    fn sweep_grid_of_one_matches_certify() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, manifest) = write_suite(dir.path());
        run_certify(&cfg, &manifest).unwrap();
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(cfg.out.join("summary.json")).unwrap()).unwrap();
        let (_, rows) = run_sweep(&cfg, &manifest, &[cfg.masks], &[cfg.patch]).unwrap();
        for r in rows {
            let ap = summary["settings"][r.setting]["ap"].as_f64().unwrap();
            assert!((ap - r.ap).abs() < 1e-12, "{}: {ap} vs {}", r.setting, r.ap);
        }
    }

    #[test]
    fn k1_budget_gives_full_image_masks() {
        let items = vec![Item {
            id: "a".into(),
            image: Image::filled(8, 8, 0.5),
            labels: LabelBits(vec![true]),
        }];
        let sets = mask_sets(&items, (1, 1), PatchSpec::square(3)).unwrap();
        let ms = &sets[&(8, 8)];
        assert_eq!(ms.len(), 1);
        assert_eq!((ms.masks[0].m1, ms.masks[0].m2), (8, 8));
    }
}

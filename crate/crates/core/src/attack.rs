//! Exhaustive patch adversary for the synthetic backend.
//!
//! For every patch placement the attacker may set each controlled pixel to
//! any value. The synthetic classifier only compares feature pixels against
//! 0.5, so the attacker's options reduce to a bright/dark choice per
//! controlled feature pixel; controlled pixels outside every feature set
//! cannot influence any score and are skipped. Each joint assignment is run
//! through the full demultiplexed inference pipeline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{SyntheticModel, Thresholds};
use crate::demux::{demux_infer_with, AttackerMode, CertSummary};
use crate::error::{Error, Result};
use crate::geometry::{CoveringReport, MaskSet, PatchSize};
use crate::image::Image;
use crate::labels::{confusion, LabelBits};
use crate::query::QueryService;

pub const DEFAULT_MAX_RELEVANT_PIXELS: usize = 12;

/// Which outputs the attacker can force for one class at one placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Outcomes {
    pub can_be_0: bool,
    pub can_be_1: bool,
}

impl Outcomes {
    fn insert(&mut self, v: bool) {
        if v {
            self.can_be_1 = true;
        } else {
            self.can_be_0 = true;
        }
    }

    /// Exactly `{v}`.
    pub fn is_only(&self, v: bool) -> bool {
        if v {
            self.can_be_1 && !self.can_be_0
        } else {
            self.can_be_0 && !self.can_be_1
        }
    }
}

/// Bit `j` of `bits` is the value (0 or 1) given to `pixels[j]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub bits: u32,
    pub counts: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackVerdict {
    pub y: usize,
    pub x: usize,
    /// Controlled pixels that belong to some feature set.
    pub pixels: Vec<(usize, usize)>,
    pub assignments: usize,
    pub outcomes: Vec<Outcomes>,
    pub min_tp: Assignment,
    pub max_fp: Assignment,
    pub max_fn: Assignment,
}

/// Enumerate every placement and every relevant attacker assignment.
pub fn enumerate_attacks(
    model: &SyntheticModel,
    image: &Image,
    y: &LabelBits,
    ms: &MaskSet,
    thresholds: &Thresholds,
    patch: PatchSize,
    max_relevant: usize,
) -> Result<Vec<AttackVerdict>> {
    if patch.p1 == 0 || patch.p2 == 0 || patch.p1 > image.n1 || patch.p2 > image.n2 {
        return Err(Error::Config(format!(
            "patch {}x{} does not fit a {}x{} image",
            patch.p1, patch.p2, image.n1, image.n2
        )));
    }
    if y.len() != model.classes.len() {
        return Err(Error::Shape(format!(
            "labels have {} classes, model has {}",
            y.len(),
            model.classes.len()
        )));
    }
    thresholds.check(y.len())?;
    let features = model.feature_pixels();
    let rows = image.n1 - patch.p1 + 1;
    let cols = image.n2 - patch.p2 + 1;
    let placements: Vec<(usize, usize)> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .collect();
    // budget check up front so the error names the first offending placement
    for &(py, px) in &placements {
        let relevant = controlled_features(&features, py, px, patch).len();
        if relevant > max_relevant.min(31) {
            return Err(Error::EnumerationBudget {
                y: py,
                x: px,
                relevant,
                cap: max_relevant,
            });
        }
    }
    placements
        .par_iter()
        .map(|&(py, px)| attack_placement(model, image, y, ms, thresholds, &features, py, px, patch))
        .collect()
}

fn controlled_features(
    features: &[(usize, usize)],
    py: usize,
    px: usize,
    patch: PatchSize,
) -> Vec<(usize, usize)> {
    features
        .iter()
        .copied()
        .filter(|&(fy, fx)| fy >= py && fy < py + patch.p1 && fx >= px && fx < px + patch.p2)
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn attack_placement(
    model: &SyntheticModel,
    image: &Image,
    y: &LabelBits,
    ms: &MaskSet,
    thresholds: &Thresholds,
    features: &[(usize, usize)],
    py: usize,
    px: usize,
    patch: PatchSize,
) -> Result<AttackVerdict> {
    let pixels = controlled_features(features, py, px, patch);
    let total = 1u32 << pixels.len();
    let mut outcomes = vec![Outcomes::default(); y.len()];
    let mut min_tp: Option<Assignment> = None;
    let mut max_fp: Option<Assignment> = None;
    let mut max_fn: Option<Assignment> = None;
    let mut attacked = image.clone();
    for bits in 0..total {
        for (j, &(fy, fx)) in pixels.iter().enumerate() {
            attacked.set_pixel(fy, fx, if bits >> j & 1 == 1 { 1.0 } else { 0.0 });
        }
        let q = QueryService::new(model, &attacked, ms);
        let preds = demux_infer_with(&q, thresholds)?;
        for (o, &p) in outcomes.iter_mut().zip(&preds) {
            o.insert(p);
        }
        let counts = confusion(y, &preds);
        let a = Assignment { bits, counts };
        if min_tp.is_none_or(|m| counts.0 < m.counts.0) {
            min_tp = Some(a);
        }
        if max_fp.is_none_or(|m| counts.1 > m.counts.1) {
            max_fp = Some(a);
        }
        if max_fn.is_none_or(|m| counts.2 > m.counts.2) {
            max_fn = Some(a);
        }
    }
    Ok(AttackVerdict {
        y: py,
        x: px,
        pixels,
        assignments: total as usize,
        outcomes,
        min_tp: min_tp.expect("at least one assignment"),
        max_fp: max_fp.expect("at least one assignment"),
        max_fn: max_fn.expect("at least one assignment"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    TpBelowLower,
    FpAboveUpper,
    FnAboveUpper,
    FnAboveLocation,
    FpAboveLocation,
    /// A mask marked safe for a class has an attack inside it that changes
    /// the class output.
    UnsafeMask { class: usize, mask: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub y: usize,
    pub x: usize,
    pub pixels: Vec<(usize, usize)>,
    pub assignment: u32,
    pub realized: usize,
    pub bound: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub placements: usize,
    pub assignments: usize,
    pub violations: Vec<Violation>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: BoundReport) {
        self.placements += other.placements;
        self.assignments += other.assignments;
        self.violations.extend(other.violations);
    }
}

/// Compare realized attack outcomes against certified bounds.
pub fn check_bounds(verdicts: &[AttackVerdict], summary: &CertSummary) -> BoundReport {
    let mut report = BoundReport {
        placements: verdicts.len(),
        assignments: verdicts.iter().map(|v| v.assignments).sum(),
        violations: Vec::new(),
    };
    let mode = summary.attacker_mode;
    let check_fn_loc = matches!(mode, Some(AttackerMode::Fn | AttackerMode::Worst));
    let check_fp_loc = matches!(mode, Some(AttackerMode::Fp | AttackerMode::Worst));
    for v in verdicts {
        let mut flag = |kind, a: &Assignment, realized: usize, bound: usize| {
            report.violations.push(Violation {
                kind,
                y: v.y,
                x: v.x,
                pixels: v.pixels.clone(),
                assignment: a.bits,
                realized,
                bound,
            })
        };
        if v.min_tp.counts.0 < summary.tp_lower {
            flag(ViolationKind::TpBelowLower, &v.min_tp, v.min_tp.counts.0, summary.tp_lower);
        }
        if v.max_fp.counts.1 > summary.fp_upper {
            flag(ViolationKind::FpAboveUpper, &v.max_fp, v.max_fp.counts.1, summary.fp_upper);
        }
        if v.max_fn.counts.2 > summary.fn_upper {
            flag(ViolationKind::FnAboveUpper, &v.max_fn, v.max_fn.counts.2, summary.fn_upper);
        }
        if check_fn_loc && v.max_fn.counts.2 > summary.fn_new {
            flag(ViolationKind::FnAboveLocation, &v.max_fn, v.max_fn.counts.2, summary.fn_new);
        }
        if check_fp_loc && v.max_fp.counts.1 > summary.fp_new {
            flag(ViolationKind::FpAboveLocation, &v.max_fp, v.max_fp.counts.1, summary.fp_new);
        }
    }
    report
}

/// Every mask marked safe for a class must protect all placements it
/// contains: the class output there is always the ground truth.
pub fn check_vulnerability_arrays(
    verdicts: &[AttackVerdict],
    summary: &CertSummary,
    cover: &CoveringReport,
) -> Result<BoundReport> {
    let mut report = BoundReport {
        placements: verdicts.len(),
        assignments: verdicts.iter().map(|v| v.assignments).sum(),
        violations: Vec::new(),
    };
    for class in 0..summary.kappa.len() {
        let lambda = summary.lambda(class).ok_or_else(|| {
            Error::Internal(format!("no vulnerability array for class {class}"))
        })?;
        let truth = summary.truth.get(class);
        for v in verdicts {
            let containing = &cover
                .get(v.y, v.x)
                .ok_or_else(|| Error::Internal(format!("placement ({}, {}) missing", v.y, v.x)))?
                .masks;
            for &m in containing {
                if lambda.is_safe(m) && !v.outcomes[class].is_only(truth) {
                    report.violations.push(Violation {
                        kind: ViolationKind::UnsafeMask { class, mask: m },
                        y: v.y,
                        x: v.x,
                        pixels: v.pixels.clone(),
                        assignment: 0,
                        realized: usize::from(!truth),
                        bound: usize::from(truth),
                    });
                }
            }
        }
    }
    Ok(report)
}

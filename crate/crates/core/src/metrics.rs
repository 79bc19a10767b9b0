//! Micro-averaged precision/recall, threshold sweeps and average precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation setting a precision/recall point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    UndefendedClean,
    DefendedClean,
    Certified,
    LocationAware,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting::UndefendedClean,
        Setting::DefendedClean,
        Setting::Certified,
        Setting::LocationAware,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Setting::UndefendedClean => "undefended-clean",
            Setting::DefendedClean => "defended-clean",
            Setting::Certified => "certified",
            Setting::LocationAware => "location-aware",
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-image TP/FP/FN (or their certified bounds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Counts { tp, fp, fn_ }
    }

    /// Precision and recall; `0/0` is taken as 1.
    pub fn precision_recall(&self) -> (f64, f64) {
        (ratio(self.tp, self.tp + self.fp), ratio(self.tp, self.tp + self.fn_))
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Sum counts over images, then compute precision and recall.
pub fn micro_aggregate(records: &[Counts]) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::Metrics("cannot aggregate an empty record set".into()));
    }
    Ok(records
        .iter()
        .copied()
        .fold(Counts::default(), |a, b| a + b)
        .precision_recall())
}

/// Named threshold families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdFamily {
    Standard,
    High,
    VeryHigh,
    Mid,
    Low,
}

impl ThresholdFamily {
    pub fn values(&self) -> &'static [f64] {
        match self {
            ThresholdFamily::Standard => &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            ThresholdFamily::High => &[0.91, 0.92, 0.93, 0.94, 0.95, 0.96, 0.97, 0.98, 0.99],
            ThresholdFamily::VeryHigh => &[0.999, 0.9999, 0.99999],
            ThresholdFamily::Mid => &[
                0.52, 0.54, 0.56, 0.58, 0.62, 0.64, 0.66, 0.68, 0.72, 0.74, 0.76, 0.78, 0.82,
                0.84, 0.86, 0.88,
            ],
            ThresholdFamily::Low => &[5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 0.01, 0.05],
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "standard" => Some(Self::Standard),
            "high" => Some(Self::High),
            "very_high" | "very-high" => Some(Self::VeryHigh),
            "mid" => Some(Self::Mid),
            "low" => Some(Self::Low),
            _ => None,
        }
    }
}

/// The full evaluation grid: standard, high, very high and mid thresholds,
/// plus the low family when the backend reports a low-score regime.
pub fn default_thresholds(low_score_regime: bool) -> Vec<f64> {
    let mut fams = vec![
        ThresholdFamily::Standard,
        ThresholdFamily::High,
        ThresholdFamily::VeryHigh,
        ThresholdFamily::Mid,
    ];
    if low_score_regime {
        fams.push(ThresholdFamily::Low);
    }
    normalize_thresholds(fams.iter().flat_map(|f| f.values().iter().copied()).collect())
}

/// Sort descending and drop duplicates.
pub fn normalize_thresholds(mut ts: Vec<f64>) -> Vec<f64> {
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    ts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub setting: Setting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub setting: Setting,
    /// Descending threshold.
    pub points: Vec<PrPoint>,
    pub ap: f64,
}

/// Anything that can produce per-image counts at a threshold.
pub trait MetricSource {
    fn counts(&self, threshold: f64, setting: Setting) -> Result<Vec<Counts>>;

    fn point(&self, threshold: f64, setting: Setting) -> Result<PrPoint> {
        let (precision, recall) = micro_aggregate(&self.counts(threshold, setting)?)?;
        Ok(PrPoint {
            threshold,
            precision,
            recall,
            setting,
        })
    }
}

pub const AP_RECALL_FLOOR: f64 = 0.25;

/// One PR point per threshold, plus AP.
pub fn threshold_sweep<S: MetricSource + ?Sized>(
    source: &S,
    thresholds: &[f64],
    setting: Setting,
) -> Result<PrCurve> {
    let points = normalize_thresholds(thresholds.to_vec())
        .into_iter()
        .map(|t| source.point(t, setting))
        .collect::<Result<Vec<_>>>()?;
    let ap = curve_ap(&points)?;
    Ok(PrCurve { setting, points, ap })
}

/// AP for a swept curve; a curve that never reaches the recall floor has no
/// area and scores 0.
pub fn curve_ap(points: &[PrPoint]) -> Result<f64> {
    let pr: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
    let max_recall = pr.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if max_recall <= AP_RECALL_FLOOR {
        return Ok(0.0);
    }
    average_precision(&pr)
}

/// Trapezoid area under precision(recall) over `[0.25, max recall]`,
/// normalized by 0.75. Input is `(recall, precision)` pairs in any order.
///
/// The curve is anchored at recall 0.25 by interpolating between the
/// neighbouring points; when no point lies below 0.25 the leftmost precision
/// is held flat down to the anchor.
pub fn average_precision(points: &[(f64, f64)]) -> Result<f64> {
    if points.iter().any(|(r, p)| !r.is_finite() || !p.is_finite()) {
        return Err(Error::Metrics("non-finite point on PR curve".into()));
    }
    if points.len() < 2 {
        return Err(Error::Metrics("degenerate PR curve: a single point".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let first_above = pts.iter().position(|p| p.0 >= AP_RECALL_FLOOR);
    let Some(idx) = first_above else {
        return Err(Error::Metrics("no point at or above 25% recall".into()));
    };
    let mut clipped = Vec::with_capacity(pts.len() - idx + 1);
    if pts[idx].0 > AP_RECALL_FLOOR {
        let anchor = if idx == 0 {
            pts[0].1
        } else {
            let (r0, p0) = pts[idx - 1];
            let (r1, p1) = pts[idx];
            p0 + (p1 - p0) * (AP_RECALL_FLOOR - r0) / (r1 - r0)
        };
        clipped.push((AP_RECALL_FLOOR, anchor));
    }
    clipped.extend_from_slice(&pts[idx..]);
    if clipped.len() < 2 {
        return Err(Error::Metrics("degenerate PR curve: a single point".into()));
    }
    let area: f64 = clipped
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Ok(area / (1.0 - AP_RECALL_FLOOR))
}

pub const RECALL_TOLERANCE: f64 = 0.005;
pub const BISECTION_CAP: usize = 30;

/// Result of bracketing a target recall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallProbe {
    pub target: f64,
    pub precision: f64,
    /// Point with recall at or above the target.
    pub over: Option<PrPoint>,
    /// Point with recall below the target.
    pub under: Option<PrPoint>,
    pub iterations: usize,
    /// False when the bracket could not be tightened to the tolerance.
    pub converged: bool,
}

/// Precision at `target` recall: bisect on the threshold until points on
/// either side of the target lie within half a percentage point of it, then
/// interpolate precision linearly in recall.
pub fn precision_at_recall(
    mut eval: impl FnMut(f64) -> Result<PrPoint>,
    seeds: &[PrPoint],
    target: f64,
) -> Result<RecallProbe> {
    let mut pts: Vec<PrPoint> = seeds.to_vec();
    let has_over = |pts: &[PrPoint]| pts.iter().any(|p| p.recall >= target);
    let has_under = |pts: &[PrPoint]| pts.iter().any(|p| p.recall < target);
    if !has_over(&pts) {
        pts.push(eval(0.0)?);
    }
    if !has_under(&pts) {
        pts.push(eval(1.0)?);
    }
    if let Some(hit) = pts.iter().find(|p| p.recall == target) {
        return Ok(RecallProbe {
            target,
            precision: hit.precision,
            over: Some(*hit),
            under: None,
            iterations: 0,
            converged: true,
        });
    }
    let closest_over = |pts: &[PrPoint]| {
        pts.iter()
            .filter(|p| p.recall >= target)
            .min_by(|a, b| a.recall.total_cmp(&b.recall).then(b.threshold.total_cmp(&a.threshold)))
            .copied()
    };
    let closest_under = |pts: &[PrPoint]| {
        pts.iter()
            .filter(|p| p.recall < target)
            .max_by(|a, b| a.recall.total_cmp(&b.recall).then(b.threshold.total_cmp(&a.threshold)))
            .copied()
    };
    let (mut over, mut under) = match (closest_over(&pts), closest_under(&pts)) {
        (Some(o), Some(u)) => (o, u),
        (o, u) => {
            let nearest = o.or(u).ok_or_else(|| Error::Metrics("no points to bracket".into()))?;
            return Ok(RecallProbe {
                target,
                precision: nearest.precision,
                over: o,
                under: u,
                iterations: 0,
                converged: false,
            });
        }
    };
    let tight = |o: &PrPoint, u: &PrPoint| {
        o.recall - target <= RECALL_TOLERANCE && target - u.recall <= RECALL_TOLERANCE
    };
    // bisection interval in threshold space
    let (mut t_over, mut t_under) = (over.threshold, under.threshold);
    let mut iterations = 0;
    while !tight(&over, &under) && iterations < BISECTION_CAP {
        iterations += 1;
        let mid = 0.5 * (t_over + t_under);
        let p = eval(mid)?;
        if p.recall == target {
            return Ok(RecallProbe {
                target,
                precision: p.precision,
                over: Some(p),
                under: Some(under),
                iterations,
                converged: true,
            });
        }
        if p.recall > target {
            t_over = mid;
            if p.recall < over.recall || (p.recall == over.recall && p.threshold > over.threshold) {
                over = p;
            }
        } else {
            t_under = mid;
            if p.recall > under.recall || (p.recall == under.recall && p.threshold < under.threshold) {
                under = p;
            }
        }
    }
    let precision = under.precision
        + (over.precision - under.precision) * (target - under.recall) / (over.recall - under.recall);
    Ok(RecallProbe {
        target,
        precision,
        over: Some(over),
        under: Some(under),
        iterations,
        converged: tight(&over, &under),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn micro_average_sums_first() {
        let (p, r) = micro_aggregate(&[Counts::new(1, 0, 2), Counts::new(2, 1, 0)]).unwrap();
        assert_abs_diff_eq!(p, 0.75);
        assert_abs_diff_eq!(r, 0.6);
        assert!(micro_aggregate(&[]).is_err());
    }

    #[test]
    fn certified_bounds_third_recall() {
        let (p, r) = micro_aggregate(&[Counts::new(1, 0, 2)]).unwrap();
        assert_abs_diff_eq!(p, 1.0);
        assert_abs_diff_eq!(r, 1.0 / 3.0);
    }

    #[test]
    fn zero_over_zero_is_one() {
        assert_eq!(Counts::new(0, 0, 0).precision_recall(), (1.0, 1.0));
        assert_eq!(Counts::new(3, 0, 0).precision_recall(), (1.0, 1.0));
    }

    #[test]
    fn threshold_families() {
        let s = ThresholdFamily::Standard.values();
        assert_eq!(s.len(), 10);
        assert_eq!((s[0], s[9]), (0.0, 0.9));
        let mid = ThresholdFamily::Mid.values();
        assert_eq!(mid.len(), 16);
        for (j, base) in [0.5, 0.6, 0.7, 0.8].iter().enumerate() {
            for t in 1..=4 {
                assert_abs_diff_eq!(mid[j * 4 + t - 1], base + 0.02 * t as f64, epsilon = 1e-12);
            }
        }
        assert_eq!(default_thresholds(false).len(), 38);
        assert_eq!(default_thresholds(true).len(), 45);
        let d = default_thresholds(false);
        assert!(d.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn ideal_and_constant_curves() {
        assert_abs_diff_eq!(average_precision(&[(0.25, 1.0), (1.0, 1.0)]).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(average_precision(&[(0.1, 0.5), (0.6, 0.5), (1.0, 0.5)]).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn anchor_interpolation() {
        // line from (0, 1) to (1, 0): precision at 0.25 is 0.75
        let ap = average_precision(&[(0.0, 1.0), (1.0, 0.0)]).unwrap();
        let expect = (0.75 * (0.75 + 0.0) / 2.0) / 0.75;
        assert_abs_diff_eq!(ap, expect, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_curves() {
        assert!(average_precision(&[(0.5, 0.9)]).is_err());
        assert!(average_precision(&[(0.1, 0.9), (0.2, 0.8)]).is_err());
        assert!(average_precision(&[(0.25, 0.9)]).is_err());
    }

    fn pt(t: f64, p: f64, r: f64) -> PrPoint {
        PrPoint { threshold: t, precision: p, recall: r, setting: Setting::Certified }
    }

    #[test]
    fn interpolates_tight_bracket() {
        let seeds = [pt(0.6, 0.96, 0.249), pt(0.5, 0.94, 0.251)];
        let probe = precision_at_recall(|_| unreachable!(), &seeds, 0.25).unwrap();
        assert_abs_diff_eq!(probe.precision, 0.95, epsilon = 1e-12);
        assert!(probe.converged);
        assert_eq!(probe.iterations, 0);
    }

    #[test]
    fn exact_hit_returned_unmodified() {
        let seeds = [pt(0.7, 0.9, 0.2), pt(0.5, 0.8125, 0.5), pt(0.3, 0.7, 0.8)];
        let probe = precision_at_recall(|_| unreachable!(), &seeds, 0.5).unwrap();
        assert_eq!(probe.precision, 0.8125);
    }

    #[test]
    fn bisection_on_continuous_curve() {
        // recall = 1 - t, precision = 0.5 + 0.5 t
        let f = |t: f64| Ok(pt(t, 0.5 + 0.5 * t, 1.0 - t));
        let seeds = [f(0.9).unwrap(), f(0.1).unwrap()];
        let probe = precision_at_recall(f, &seeds, 0.5).unwrap();
        assert!(probe.converged);
        assert_abs_diff_eq!(probe.precision, 0.75, epsilon = 1e-9);
        assert!(probe.iterations > 0 && probe.iterations <= BISECTION_CAP);
    }

    #[test]
    fn unreachable_target_flags() {
        // recall saturates at 0.4
        let f = |t: f64| Ok(pt(t, 0.9, 0.4 * (1.0 - t)));
        let seeds = [f(0.5).unwrap()];
        let probe = precision_at_recall(f, &seeds, 0.75).unwrap();
        assert!(!probe.converged);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ap_ignores_input_order(mut pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..20),
                                      seed in any::<u64>()) {
                pts.push((0.9, 0.5));
                let a = average_precision(&pts).unwrap();
                let mut shuffled = pts.clone();
                let n = shuffled.len();
                for i in 0..n {
                    let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) % n as u64) as usize;
                    shuffled.swap(i, j);
                }
                let b = average_precision(&shuffled).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
            }
        }
    }
}

//! Per-class demultiplexed defense for multi-label classifiers.
//!
//! Each class is treated as an isolated binary classifier and defended with
//! double-masking. Certification turns the per-class results into bounds on
//! true positives, false positives and false negatives; location-aware
//! certification tightens them using the fact that one patch occupies one
//! location.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{BinaryView, Classifier, Thresholds};
use crate::cleanser::{sl_certify, sl_infer, VulnStatusArray};
use crate::error::{Error, Result};
use crate::geometry::MaskSet;
use crate::image::Image;
use crate::labels::LabelBits;
use crate::query::QueryService;

/// Which failure type the location-aware attacker is assumed to pursue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackerMode {
    Fn,
    Fp,
    Worst,
}

impl std::str::FromStr for AttackerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fn" => Ok(AttackerMode::Fn),
            "fp" => Ok(AttackerMode::Fp),
            "worst" => Ok(AttackerMode::Worst),
            other => Err(Error::Config(format!("unknown attacker mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for AttackerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackerMode::Fn => "fn",
            AttackerMode::Fp => "fp",
            AttackerMode::Worst => "worst",
        })
    }
}

/// Masks picked by location-aware certification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationChoice {
    pub fn_mask: usize,
    pub fp_mask: usize,
    /// False when FN and FP maxima come from different masks, in which case
    /// the pair of bounds is not attainable by a single patch.
    pub realizable: bool,
}

/// Certified bounds for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertSummary {
    pub tp_lower: usize,
    pub fp_upper: usize,
    pub fn_upper: usize,
    #[serde(with = "crate::labels::bits01")]
    pub kappa: Vec<bool>,
    pub truth: LabelBits,
    /// Vulnerability arrays of uncertified classes.
    pub lambdas: BTreeMap<usize, VulnStatusArray>,
    pub num_masks: usize,
    pub fn_new: usize,
    pub fp_new: usize,
    pub attacker_mode: Option<AttackerMode>,
    pub location: Option<LocationChoice>,
}

impl CertSummary {
    /// True-positive lower bound after location-aware tightening.
    pub fn tp_location(&self) -> usize {
        self.tp_lower + (self.fn_upper - self.fn_new)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn positives(&self) -> usize {
        self.truth.positives()
    }

    /// Vulnerability array for `class`; certified classes are safe everywhere.
    pub fn lambda(&self, class: usize) -> Option<VulnStatusArray> {
        if self.kappa[class] {
            Some(VulnStatusArray::all(self.num_masks, true))
        } else {
            self.lambdas.get(&class).cloned()
        }
    }
}

fn check_classes(model: &dyn Classifier, c: usize, thresholds: &Thresholds) -> Result<()> {
    if model.num_classes() != c {
        return Err(Error::Shape(format!(
            "labels have {c} classes, model has {}",
            model.num_classes()
        )));
    }
    thresholds.check(c)
}

/// Demultiplexed inference.
pub fn demux_infer(
    model: &dyn Classifier,
    image: &Image,
    ms: &MaskSet,
    thresholds: &Thresholds,
) -> Result<Vec<bool>> {
    demux_infer_with(&QueryService::new(model, image, ms), thresholds)
}

pub fn demux_infer_with(q: &QueryService<'_>, thresholds: &Thresholds) -> Result<Vec<bool>> {
    let model = q.model();
    let c = model.num_classes();
    thresholds.check(c)?;
    (0..c)
        .map(|i| sl_infer(&BinaryView::new(model, i, thresholds.get(i)), q))
        .collect()
}

/// Demultiplexed certification (baseline bounds).
pub fn demux_certify(
    model: &dyn Classifier,
    image: &Image,
    y: &LabelBits,
    ms: &MaskSet,
    thresholds: &Thresholds,
) -> Result<CertSummary> {
    demux_certify_with(&QueryService::new(model, image, ms), y, thresholds)
}

pub fn demux_certify_with(
    q: &QueryService<'_>,
    y: &LabelBits,
    thresholds: &Thresholds,
) -> Result<CertSummary> {
    let model = q.model();
    let c = y.len();
    check_classes(model, c, thresholds)?;
    let mut kappa = vec![false; c];
    let mut lambdas = BTreeMap::new();
    for (i, k) in kappa.iter_mut().enumerate() {
        let r = sl_certify(&BinaryView::new(model, i, thresholds.get(i)), y.get(i), q)?;
        *k = r.certified;
        if !r.certified {
            lambdas.insert(i, r.lambda);
        }
    }
    let count = |pred: &dyn Fn(bool, bool) -> bool| {
        (0..c).filter(|&i| pred(kappa[i], y.get(i))).count()
    };
    let tp_lower = count(&|k, t| k && t);
    let fp_upper = count(&|k, t| !k && !t);
    let fn_upper = count(&|k, t| !k && t);
    Ok(CertSummary {
        tp_lower,
        fp_upper,
        fn_upper,
        kappa,
        truth: y.clone(),
        lambdas,
        num_masks: q.masks().len(),
        fn_new: fn_upper,
        fp_new: fp_upper,
        attacker_mode: None,
        location: None,
    })
}

/// Per-mask count of vulnerable classes among those selected by `pick`.
fn failure_totals(s: &CertSummary, pick: impl Fn(usize) -> bool) -> Result<Vec<usize>> {
    let mut total = vec![0usize; s.num_masks];
    for i in 0..s.kappa.len() {
        if s.kappa[i] || !pick(i) {
            continue;
        }
        let lambda = s.lambdas.get(&i).ok_or_else(|| {
            Error::Internal(format!("no vulnerability array for uncertified class {i}"))
        })?;
        if lambda.len() != s.num_masks {
            return Err(Error::Internal(format!(
                "class {i}: vulnerability array has {} entries for {} masks",
                lambda.len(),
                s.num_masks
            )));
        }
        for m in lambda.vulnerable() {
            total[m] += 1;
        }
    }
    Ok(total)
}

/// Mask maximizing `primary`, ties broken by larger `secondary`, then by
/// lower index.
fn worst_mask(primary: &[usize], secondary: &[usize]) -> usize {
    (0..primary.len())
        .max_by(|&a, &b| {
            primary[a]
                .cmp(&primary[b])
                .then(secondary[a].cmp(&secondary[b]))
                .then(b.cmp(&a))
        })
        .unwrap_or(0)
}

/// Location-aware tightening of the FN/FP bounds.
pub fn location_aware_certify(summary: &CertSummary, mode: AttackerMode) -> Result<CertSummary> {
    if summary.num_masks == 0 {
        return Err(Error::Internal("summary has no masks".into()));
    }
    let fn_total = failure_totals(summary, |i| summary.truth.get(i))?;
    let fp_total = failure_totals(summary, |i| !summary.truth.get(i))?;
    let fn_pick = worst_mask(&fn_total, &fp_total);
    let fp_pick = worst_mask(&fp_total, &fn_total);
    let (fn_mask, fp_mask) = match mode {
        AttackerMode::Fn => (fn_pick, fn_pick),
        AttackerMode::Fp => (fp_pick, fp_pick),
        AttackerMode::Worst => (fn_pick, fp_pick),
    };
    let mut out = summary.clone();
    out.fn_new = fn_total[fn_mask];
    out.fp_new = fp_total[fp_mask];
    out.attacker_mode = Some(mode);
    out.location = Some(LocationChoice {
        fn_mask,
        fp_mask,
        realizable: (0..summary.num_masks)
            .any(|m| fn_total[m] == out.fn_new && fp_total[m] == out.fp_new),
    });
    debug_assert!(out.fn_new <= out.fn_upper && out.fp_new <= out.fp_upper);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{SyntheticClass, SyntheticModel};
    use crate::geometry::{generate_mask_set, PatchSpec};

    fn summary_with(truth: &str, kappa: &[bool], lambdas: &[(usize, &[u8])], masks: usize) -> CertSummary {
        let truth: LabelBits = truth.parse().unwrap();
        let c = truth.len();
        let tp_lower = (0..c).filter(|&i| kappa[i] && truth.get(i)).count();
        let fp_upper = (0..c).filter(|&i| !kappa[i] && !truth.get(i)).count();
        let fn_upper = (0..c).filter(|&i| !kappa[i] && truth.get(i)).count();
        CertSummary {
            tp_lower,
            fp_upper,
            fn_upper,
            kappa: kappa.to_vec(),
            truth,
            lambdas: lambdas
                .iter()
                .map(|(i, l)| (*i, VulnStatusArray(l.iter().map(|&b| b == 1).collect())))
                .collect(),
            num_masks: masks,
            fn_new: fn_upper,
            fp_new: fp_upper,
            attacker_mode: None,
            location: None,
        }
    }

    #[test]
    fn three_false_negatives_at_distinct_locations() {
        // vulnerability rows (1 = vulnerable) 110 / 100 / 010 -> lambda = 1 - row
        let s = summary_with(
            "111",
            &[false, false, false],
            &[(0, &[0, 0, 1]), (1, &[0, 1, 1]), (2, &[1, 0, 1])],
            3,
        );
        assert_eq!((s.tp_lower, s.fn_upper), (0, 3));
        let loc = location_aware_certify(&s, AttackerMode::Fn).unwrap();
        assert_eq!(loc.fn_new, 2);
        assert_eq!(loc.tp_location(), 1);
        let recall = loc.tp_location() as f64 / (loc.tp_location() + loc.fn_new) as f64;
        assert!((recall - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(loc.location.unwrap().fn_mask, 0);
    }

    #[test]
    fn no_improvement_when_all_vulnerable_everywhere() {
        let s = summary_with("1101", &[false, false, false, false], &[
            (0, &[0, 0]), (1, &[0, 0]), (2, &[0, 0]), (3, &[0, 0]),
        ], 2);
        for mode in [AttackerMode::Fn, AttackerMode::Fp, AttackerMode::Worst] {
            let loc = location_aware_certify(&s, mode).unwrap();
            assert_eq!((loc.fn_new, loc.fp_new), (3, 1));
        }
    }

    #[test]
    fn single_false_negative_enumerated() {
        // every lambda pattern over 3 masks that is not all-ones
        for bits in 0u8..7 {
            let l: Vec<u8> = (0..3).map(|j| bits >> j & 1).collect();
            let s = summary_with("1", &[false], &[(0, &l)], 3);
            let loc = location_aware_certify(&s, AttackerMode::Fn).unwrap();
            assert_eq!(loc.fn_new, 1, "lambda {l:?}");
        }
    }

    #[test]
    fn fn_mode_tie_breaks_on_colocated_false_positives() {
        // FN class vulnerable at masks 0 and 1; FP class only at mask 1
        let s = summary_with("10", &[false, false], &[(0, &[0, 0, 1]), (1, &[1, 0, 1])], 3);
        let loc = location_aware_certify(&s, AttackerMode::Fn).unwrap();
        assert_eq!(loc.location.as_ref().unwrap().fn_mask, 1);
        assert_eq!((loc.fn_new, loc.fp_new), (1, 1));
        let fp = location_aware_certify(&s, AttackerMode::Fp).unwrap();
        assert_eq!(fp.location.as_ref().unwrap().fp_mask, 1);
    }

    #[test]
    fn worst_mode_may_split_locations() {
        // FN only at mask 0, FP only at mask 2
        let s = summary_with("10", &[false, false], &[(0, &[0, 1, 1]), (1, &[1, 1, 0])], 3);
        let loc = location_aware_certify(&s, AttackerMode::Worst).unwrap();
        let choice = loc.location.unwrap();
        assert_eq!((choice.fn_mask, choice.fp_mask), (0, 2));
        assert!(!choice.realizable);
        assert_eq!((loc.fn_new, loc.fp_new), (1, 1));
        let fn_only = location_aware_certify(&s, AttackerMode::Fn).unwrap();
        assert_eq!((fn_only.fn_new, fn_only.fp_new), (1, 0));
    }

    #[test]
    fn missing_lambda_is_internal_error() {
        let s = summary_with("1", &[false], &[], 2);
        assert!(matches!(location_aware_certify(&s, AttackerMode::Fn), Err(Error::Internal(_))));
    }

    fn two_class_model() -> SyntheticModel {
        SyntheticModel::new(vec![
            SyntheticClass { features: vec![[0, 0], [9, 9]], default: 1 },
            SyntheticClass { features: vec![[0, 9], [9, 0]], default: 1 },
            // hidden entirely by mask 0 (bands [0,5) x [0,5))
            SyntheticClass { features: vec![[1, 1]], default: 0 },
        ])
        .unwrap()
    }

    #[test]
    fn certify_counts() {
        let model = two_class_model();
        let img = Image::filled(10, 10, 1.0);
        let ms = generate_mask_set(10, 10, PatchSpec::square(3), 3, 3).unwrap();
        let t = Thresholds::Global(0.5);
        let s = demux_certify(&model, &img, &"111".parse().unwrap(), &ms, &t).unwrap();
        assert_eq!(s.kappa, vec![true, true, false]);
        assert_eq!((s.tp_lower, s.fp_upper, s.fn_upper), (2, 0, 1));
        let s = demux_certify(&model, &img, &"010".parse().unwrap(), &ms, &t).unwrap();
        assert_eq!((s.tp_lower, s.fp_upper, s.fn_upper), (1, 2, 0));
        assert_eq!(s.kappa, vec![false, true, false]);
    }

    #[test]
    fn infer_flips_only_the_fragile_class() {
        let model = two_class_model();
        let img = Image::filled(10, 10, 1.0);
        let ms = generate_mask_set(10, 10, PatchSpec::square(3), 3, 3).unwrap();
        let t = Thresholds::Global(0.5);
        let clean = model.score(&img).unwrap().threshold(&t);
        assert_eq!(clean, vec![true, true, true]);
        // class 2: mask 0 disagrees and its second round is unanimous -> 0
        let preds = demux_infer(&model, &img, &ms, &t).unwrap();
        assert_eq!(preds, vec![true, true, false]);
    }

    #[test]
    fn single_class_matches_sl_infer() {
        let model = SyntheticModel::new(vec![SyntheticClass { features: vec![[2, 3], [7, 7]], default: 1 }]).unwrap();
        let mut img = Image::filled(10, 10, 0.2);
        img.set_pixel(2, 3, 0.9);
        let ms = generate_mask_set(10, 10, PatchSpec::square(3), 2, 2).unwrap();
        let q = QueryService::new(&model, &img, &ms);
        let direct = sl_infer(&BinaryView::new(&model, 0, 0.4), &q).unwrap();
        let demux = demux_infer(&model, &img, &ms, &Thresholds::Global(0.4)).unwrap();
        assert_eq!(demux, vec![direct]);
    }

    #[test]
    fn class_count_mismatch() {
        let model = two_class_model();
        let img = Image::filled(10, 10, 1.0);
        let ms = generate_mask_set(10, 10, PatchSpec::square(3), 2, 2).unwrap();
        let err = demux_certify(&model, &img, &"11".parse().unwrap(), &ms, &Thresholds::Global(0.5));
        assert!(matches!(err, Err(Error::Shape(_))));
    }
}

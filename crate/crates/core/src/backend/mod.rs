//! Multi-label classifier backends and isolated per-class binary views.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Mask;
use crate::image::Image;

#[cfg(feature = "onnx")]
pub mod onnx;
pub mod synthetic;

pub use synthetic::{SyntheticClass, SyntheticModel};

/// Per-class scores in `[0, 1]`, one entry per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Check length and finiteness of backend output.
    pub fn validated(self, classes: usize) -> Result<Self> {
        if self.0.len() != classes {
            return Err(Error::Shape(format!(
                "backend produced {} scores, expected {classes}",
                self.0.len()
            )));
        }
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(Error::backend(Some(i), "non-finite score"));
        }
        Ok(self)
    }

    pub fn threshold(&self, thresholds: &Thresholds) -> Vec<bool> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, &s)| s > thresholds.get(i))
            .collect()
    }
}

/// A multi-label classifier. Implementations must be deterministic and safe
/// to query concurrently.
pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;

    fn score(&self, image: &Image) -> Result<ScoreVector>;

    /// Score `image` with `masks` additionally occluded.
    fn score_masked(&self, image: &Image, masks: &[&Mask]) -> Result<ScoreVector> {
        if masks.is_empty() {
            return self.score(image);
        }
        self.score(&image.occluded_by(masks))
    }

    /// Downcast hook for operations only the synthetic backend supports.
    fn as_synthetic(&self) -> Option<&SyntheticModel> {
        None
    }

    /// Backend declares that its scores live in a low range, enabling the
    /// extra low-value threshold family.
    fn low_score_regime(&self) -> bool {
        false
    }
}

/// Decision thresholds, one per class or a single global value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Thresholds {
    Global(f64),
    PerClass(Vec<f64>),
}

impl Thresholds {
    pub fn get(&self, class: usize) -> f64 {
        match self {
            Thresholds::Global(t) => *t,
            Thresholds::PerClass(v) => v[class],
        }
    }

    pub fn check(&self, classes: usize) -> Result<()> {
        match self {
            Thresholds::PerClass(v) if v.len() != classes => Err(Error::Config(format!(
                "{} per-class thresholds for {classes} classes",
                v.len()
            ))),
            _ => Ok(()),
        }
    }
}

impl From<f64> for Thresholds {
    fn from(t: f64) -> Self {
        Thresholds::Global(t)
    }
}

/// The isolated binary classifier for one class: 1 iff `score > threshold`.
#[derive(Clone, Copy)]
pub struct BinaryView<'a> {
    pub model: &'a dyn Classifier,
    pub class: usize,
    pub threshold: f64,
}

impl<'a> BinaryView<'a> {
    pub fn new(model: &'a dyn Classifier, class: usize, threshold: f64) -> Self {
        BinaryView {
            model,
            class,
            threshold,
        }
    }

    #[inline]
    pub fn decide(&self, scores: &ScoreVector) -> bool {
        scores.get(self.class) > self.threshold
    }

    pub fn binary_predict(&self, image: &Image) -> Result<bool> {
        let scores = self.model.score(image).map_err(|e| with_class(e, self.class))?;
        Ok(self.decide(&scores))
    }
}

fn with_class(e: Error, class: usize) -> Error {
    match e {
        Error::Backend { class: None, msg } => Error::Backend {
            class: Some(class),
            msg,
        },
        other => other,
    }
}

/// Every binary outcome the attacker can force for `class` by choosing the
/// values of the `controlled` pixels. Synthetic backend only.
pub fn achievable_outputs(
    model: &dyn Classifier,
    image: &Image,
    controlled: &[(usize, usize)],
    class: usize,
    threshold: f64,
) -> Result<BTreeSet<bool>> {
    let synth = model
        .as_synthetic()
        .ok_or_else(|| Error::Unsupported("achievable_outputs requires the synthetic backend".into()))?;
    let feats = &synth
        .classes
        .get(class)
        .ok_or_else(|| Error::backend(Some(class), "class index out of range"))?
        .features;
    let levers: Vec<(usize, usize)> = feats
        .iter()
        .map(|f| (f[0], f[1]))
        .filter(|p| controlled.contains(p) && !image.is_occluded(p.0, p.1))
        .collect();
    let view = BinaryView::new(model, class, threshold);
    let mut out = BTreeSet::new();
    let mut attacked = image.clone();
    for bits in 0u32..(1u32 << levers.len()) {
        for (j, &(y, x)) in levers.iter().enumerate() {
            attacked.set_pixel(y, x, if bits >> j & 1 == 1 { 1.0 } else { 0.0 });
        }
        out.insert(view.binary_predict(&attacked)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_class(features: Vec<[usize; 2]>, default: u8) -> SyntheticModel {
        SyntheticModel::new(vec![SyntheticClass { features, default }]).unwrap()
    }

    #[test]
    fn strict_thresholding() {
        let m = one_class(vec![[0, 0]], 0);
        let v = BinaryView::new(&m, 0, 0.5);
        assert!(v.decide(&ScoreVector(vec![0.7])));
        assert!(!v.decide(&ScoreVector(vec![0.5])));
        let v0 = BinaryView::new(&m, 0, 0.0);
        assert!(!v0.decide(&ScoreVector(vec![0.0])));
    }

    #[test]
    fn validation_rejects_nan_and_length() {
        assert!(ScoreVector(vec![0.1, f64::NAN]).validated(2).is_err());
        assert!(ScoreVector(vec![0.1]).validated(2).is_err());
        assert!(ScoreVector(vec![0.1, 0.2]).validated(2).is_ok());
    }

    #[test]
    fn achievable_no_lever() {
        let m = one_class(vec![[0, 0], [0, 1]], 0);
        let img = Image::filled(3, 3, 1.0);
        let out = achievable_outputs(&m, &img, &[(2, 2)], 0, 0.5).unwrap();
        assert_eq!(out.into_iter().collect::<Vec<_>>(), vec![true]);
    }

    #[test]
    fn achievable_one_lever() {
        // a=(0,0) controlled, b=(0,1) visible at 1: scores 0.5 or 1.0
        let m = one_class(vec![[0, 0], [0, 1]], 0);
        let img = Image::filled(3, 3, 1.0);
        let out = achievable_outputs(&m, &img, &[(0, 0)], 0, 0.5).unwrap();
        assert_eq!(out.into_iter().collect::<Vec<_>>(), vec![false, true]);
    }

    #[test]
    fn achievable_occluded_controls() {
        let m = one_class(vec![[0, 0], [0, 1]], 1);
        let mut img = Image::filled(3, 3, 1.0);
        img.occlude(&Mask { y0: 0, x0: 0, m1: 1, m2: 1 });
        let clean = BinaryView::new(&m, 0, 0.5).binary_predict(&img).unwrap();
        let out = achievable_outputs(&m, &img, &[(0, 0)], 0, 0.5).unwrap();
        assert_eq!(out.into_iter().collect::<Vec<_>>(), vec![clean]);
    }

    struct Opaque;
    impl Classifier for Opaque {
        fn num_classes(&self) -> usize {
            1
        }
        fn score(&self, _: &Image) -> Result<ScoreVector> {
            Ok(ScoreVector(vec![0.0]))
        }
    }

    #[test]
    fn achievable_requires_synthetic() {
        let img = Image::filled(2, 2, 0.0);
        let err = achievable_outputs(&Opaque, &img, &[], 0, 0.5).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }
}

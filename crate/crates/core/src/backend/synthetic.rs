//! Fully specified test classifier.
//!
//! Class `i` looks at a small set of feature pixels. Its score is the
//! fraction of *visible* feature pixels brighter than 0.5; when every feature
//! pixel is occluded the score falls back to the class default bit. Because
//! the feature sets are tiny, an attacker's options can be enumerated
//! exhaustively.

use serde::{Deserialize, Serialize};

use super::{Classifier, ScoreVector};
use crate::error::{Error, Result};
use crate::geometry::Mask;
use crate::image::Image;

pub const MAX_FEATURES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticClass {
    /// `[y, x]` pixel coordinates.
    pub features: Vec<[usize; 2]>,
    pub default: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SyntheticModelRepr", into = "SyntheticModelRepr")]
pub struct SyntheticModel {
    pub classes: Vec<SyntheticClass>,
}

#[derive(Serialize, Deserialize)]
struct SyntheticModelRepr {
    c: usize,
    classes: Vec<SyntheticClass>,
}

impl TryFrom<SyntheticModelRepr> for SyntheticModel {
    type Error = Error;

    fn try_from(r: SyntheticModelRepr) -> Result<Self> {
        if r.c != r.classes.len() {
            return Err(Error::Config(format!(
                "synthetic model declares c={} but lists {} classes",
                r.c,
                r.classes.len()
            )));
        }
        SyntheticModel::new(r.classes)
    }
}

impl From<SyntheticModel> for SyntheticModelRepr {
    fn from(m: SyntheticModel) -> Self {
        SyntheticModelRepr {
            c: m.classes.len(),
            classes: m.classes,
        }
    }
}

impl SyntheticModel {
    pub fn new(classes: Vec<SyntheticClass>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Config("synthetic model needs at least one class".into()));
        }
        for (i, c) in classes.iter().enumerate() {
            if c.features.is_empty() || c.features.len() > MAX_FEATURES {
                return Err(Error::Config(format!(
                    "class {i}: feature set size must be in 1..={MAX_FEATURES}, got {}",
                    c.features.len()
                )));
            }
            let mut seen = c.features.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != c.features.len() {
                return Err(Error::Config(format!("class {i}: duplicate feature pixels")));
            }
            if c.default > 1 {
                return Err(Error::Config(format!("class {i}: default must be 0 or 1")));
            }
        }
        Ok(SyntheticModel { classes })
    }

    /// Parse and validate a model description. Malformed input is reported
    /// as a configuration error.
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("synthetic model: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    fn check_bounds(&self, image: &Image) -> Result<()> {
        for (i, c) in self.classes.iter().enumerate() {
            if let Some(f) = c.features.iter().find(|f| f[0] >= image.n1 || f[1] >= image.n2) {
                return Err(Error::Backend {
                    class: Some(i),
                    msg: format!(
                        "feature pixel ({}, {}) outside {}x{} image",
                        f[0], f[1], image.n1, image.n2
                    ),
                });
            }
        }
        Ok(())
    }

    fn scores_with(&self, image: &Image, hidden: impl Fn(usize, usize) -> bool) -> ScoreVector {
        ScoreVector(
            self.classes
                .iter()
                .map(|c| {
                    let mut visible = 0u32;
                    let mut bright = 0u32;
                    for &[y, x] in &c.features {
                        if hidden(y, x) {
                            continue;
                        }
                        visible += 1;
                        if image.raw(y, x, 0) > 0.5 {
                            bright += 1;
                        }
                    }
                    if visible == 0 {
                        f64::from(c.default)
                    } else {
                        f64::from(bright) / f64::from(visible)
                    }
                })
                .collect(),
        )
    }

    /// Union of all feature pixels, sorted.
    pub fn feature_pixels(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<(usize, usize)> = self
            .classes
            .iter()
            .flat_map(|c| c.features.iter().map(|f| (f[0], f[1])))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

impl Classifier for SyntheticModel {
    fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn score(&self, image: &Image) -> Result<ScoreVector> {
        self.check_bounds(image)?;
        Ok(self.scores_with(image, |y, x| image.is_occluded(y, x)))
    }

    fn score_masked(&self, image: &Image, masks: &[&Mask]) -> Result<ScoreVector> {
        self.check_bounds(image)?;
        Ok(self.scores_with(image, |y, x| {
            image.is_occluded(y, x) || masks.iter().any(|m| m.contains_pixel(y, x))
        }))
    }

    fn as_synthetic(&self) -> Option<&SyntheticModel> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(default: u8) -> SyntheticModel {
        SyntheticModel::new(vec![SyntheticClass {
            features: vec![[0, 0], [0, 1]],
            default,
        }])
        .unwrap()
    }

    #[test]
    fn bright_visible_pixels() {
        let img = Image::filled(2, 2, 1.0);
        assert_eq!(model(0).score(&img).unwrap().0, vec![1.0]);
    }

    #[test]
    fn occluded_and_dark() {
        let mut img = Image::filled(2, 2, 1.0);
        img.set_pixel(0, 1, 0.0);
        img.occlude(&Mask { y0: 0, x0: 0, m1: 1, m2: 1 });
        assert_eq!(model(1).score(&img).unwrap().0, vec![0.0]);
    }

    #[test]
    fn fully_occluded_falls_back_to_default() {
        let mut img = Image::filled(2, 2, 0.0);
        img.occlude(&Mask { y0: 0, x0: 0, m1: 1, m2: 2 });
        assert_eq!(model(1).score(&img).unwrap().0, vec![1.0]);
        assert_eq!(model(0).score(&img).unwrap().0, vec![0.0]);
    }

    #[test]
    fn masked_scoring_matches_materialized() {
        let m = model(1);
        let mut img = Image::filled(3, 3, 0.9);
        img.set_pixel(0, 1, 0.1);
        let mask = Mask { y0: 0, x0: 0, m1: 1, m2: 1 };
        let direct = m.score_masked(&img, &[&mask]).unwrap();
        let via = m.score(&img.occluded_by(&[&mask])).unwrap();
        assert_eq!(direct, via);
    }

    #[test]
    fn out_of_bounds_feature_is_backend_error() {
        let img = Image::filled(1, 1, 1.0);
        let err = model(0).score(&img).unwrap_err();
        assert!(matches!(err, Error::Backend { class: Some(0), .. }));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let m = model(1);
        let s = m.to_json().unwrap();
        assert_eq!(s, r#"{"c":1,"classes":[{"features":[[0,0],[0,1]],"default":1}]}"#);
        assert_eq!(SyntheticModel::from_json(&s).unwrap(), m);
        assert!(SyntheticModel::from_json(r#"{"c":2,"classes":[{"features":[[0,0]],"default":0}]}"#).is_err());
        let too_many: Vec<[usize; 2]> = (0..9).map(|i| [0, i]).collect();
        assert!(SyntheticModel::new(vec![SyntheticClass { features: too_many, default: 0 }]).is_err());
    }
}

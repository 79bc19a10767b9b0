use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::DEFAULT_MAX_RELEVANT_PIXELS;
use crate::demux::AttackerMode;
use crate::error::{Error, Result};
use crate::geometry::PatchSpec;
use crate::metrics::{default_thresholds, normalize_thresholds, ThresholdFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Synthetic,
    Onnx,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(BackendKind::Synthetic),
            "onnx" => Ok(BackendKind::Onnx),
            other => Err(Error::Config(format!("unknown backend '{other}'"))),
        }
    }
}

/// ONNX options other than the model path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnnxOptions {
    pub input_height: usize,
    pub input_width: usize,
    pub channels: usize,
    pub resize: String,
    pub logits: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<Vec<f32>>,
    pub low_score_regime: bool,
}

impl Default for OnnxOptions {
    fn default() -> Self {
        OnnxOptions {
            input_height: 224,
            input_width: 224,
            channels: 3,
            resize: "exact".into(),
            logits: false,
            mean: None,
            std: None,
            low_score_regime: false,
        }
    }
}

/// Everything a pipeline run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Mask budget per axis.
    pub masks: (usize, usize),
    pub patch: PatchSpec,
    /// Threshold selection: `default`, `default+low`, a comma-separated list
    /// of family names, or a path to a file with one threshold per line.
    pub thresholds: String,
    pub attacker: AttackerMode,
    pub backend: BackendKind,
    pub model: Option<PathBuf>,
    pub onnx: OnnxOptions,
    pub seed: u64,
    pub max_relevant_pixels: usize,
    /// Not part of the provenance hash.
    pub workers: usize,
    /// Not part of the provenance hash.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            masks: (6, 6),
            patch: PatchSpec::AreaFraction(0.02),
            thresholds: "default".into(),
            attacker: AttackerMode::Worst,
            backend: BackendKind::Synthetic,
            model: None,
            onnx: OnnxOptions::default(),
            seed: 0,
            max_relevant_pixels: DEFAULT_MAX_RELEVANT_PIXELS,
            workers: 1,
            out: PathBuf::from("out"),
        }
    }
}

/// `K` or `K1xK2`.
pub fn parse_masks(s: &str) -> Result<(usize, usize)> {
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("invalid mask budget '{s}', expected KxK")))
    };
    match s.split_once(['x', 'X']) {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let k = parse(s)?;
            Ok((k, k))
        }
    }
}

/// `P` (square pixels), `P1xP2`, or `F%` (percent of image area).
pub fn parse_patch(s: &str) -> Result<PatchSpec> {
    let bad = || Error::Config(format!("invalid patch '{s}', expected P, P1xP2 or F%"));
    let s = s.trim();
    if let Some(pct) = s.strip_suffix('%') {
        let f: f64 = pct.trim().parse().map_err(|_| bad())?;
        return Ok(PatchSpec::AreaFraction(f / 100.0));
    }
    match s.split_once(['x', 'X']) {
        Some((a, b)) => Ok(PatchSpec::Pixels {
            p1: a.trim().parse().map_err(|_| bad())?,
            p2: b.trim().parse().map_err(|_| bad())?,
        }),
        None => Ok(PatchSpec::square(s.parse().map_err(|_| bad())?)),
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("parsing {}: {e}", path.display())))
    }

    /// Checks that need no model or dataset.
    pub fn validate(&self) -> Result<()> {
        if self.masks.0 == 0 || self.masks.1 == 0 {
            return Err(Error::Config("mask budget must be at least 1 per axis".into()));
        }
        match self.patch {
            PatchSpec::Pixels { p1, p2 } if p1 == 0 || p2 == 0 => {
                return Err(Error::Config("patch size must be positive".into()))
            }
            PatchSpec::AreaFraction(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::Config(format!(
                    "patch area fraction must lie in (0, 100%], got {}%",
                    f * 100.0
                )))
            }
            _ => {}
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.model.is_none() {
            return Err(Error::Config("no model given (--model)".into()));
        }
        if self.max_relevant_pixels > 31 {
            return Err(Error::Config(
                "max relevant pixels above 31 cannot be enumerated".into(),
            ));
        }
        if self.backend == BackendKind::Onnx {
            let o = &self.onnx;
            if o.input_height == 0 || o.input_width == 0 || o.channels == 0 {
                return Err(Error::Config("ONNX input dimensions must be positive".into()));
            }
            #[cfg(not(feature = "onnx"))]
            return Err(Error::Config(
                "this build has no ONNX support (enable the `onnx` feature)".into(),
            ));
        }
        Ok(())
    }

    /// Resolve the threshold selection to a descending list.
    pub fn threshold_values(&self, low_score_regime: bool) -> Result<Vec<f64>> {
        let sel = self.thresholds.trim();
        let values = match sel {
            "default" => default_thresholds(low_score_regime),
            "default+low" => default_thresholds(true),
            _ => {
                let families: Option<Vec<ThresholdFamily>> =
                    sel.split(',').map(|n| ThresholdFamily::parse(n.trim())).collect();
                match families {
                    Some(fs) => fs.iter().flat_map(|f| f.values().iter().copied()).collect(),
                    None => read_threshold_file(Path::new(sel))?,
                }
            }
        };
        if values.is_empty() {
            return Err(Error::Config("threshold set is empty".into()));
        }
        if let Some(t) = values.iter().find(|t| !t.is_finite()) {
            return Err(Error::Config(format!("threshold {t} is not finite")));
        }
        Ok(normalize_thresholds(values))
    }

    /// Configuration as recorded in outputs: output location and parallelism
    /// do not affect results and are left out.
    pub fn provenance(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out");
            obj.remove("workers");
        }
        v
    }

    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.provenance()).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn read_threshold_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(format!(
            "'{}' is neither a threshold family nor a readable file: {e}",
            path.display()
        ))
    })?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid threshold '{l}' in {}", path.display())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_flags() {
        assert_eq!(parse_masks("6x6").unwrap(), (6, 6));
        assert_eq!(parse_masks("4").unwrap(), (4, 4));
        assert_eq!(parse_masks("2x3").unwrap(), (2, 3));
        assert!(parse_masks("ax2").is_err());
        assert_eq!(parse_patch("2%").unwrap(), PatchSpec::AreaFraction(0.02));
        assert_eq!(parse_patch("3").unwrap(), PatchSpec::square(3));
        assert_eq!(parse_patch("2x4").unwrap(), PatchSpec::Pixels { p1: 2, p2: 4 });
        assert!(parse_patch("x%").is_err());
    }

    #[test]
    fn threshold_selection() {
        let mut c = RunConfig::default();
        assert_eq!(c.threshold_values(false).unwrap().len(), 38);
        assert_eq!(c.threshold_values(true).unwrap().len(), 45);
        c.thresholds = "standard, very_high".into();
        let v = c.threshold_values(false).unwrap();
        assert_eq!(v.len(), 13);
        assert_eq!(v[0], 0.99999);
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("t.txt");
        std::fs::write(&f, "# custom\n0.25\n0.75\n0.25\n").unwrap();
        c.thresholds = f.display().to_string();
        assert_eq!(c.threshold_values(false).unwrap(), vec![0.75, 0.25]);
        c.thresholds = "nonsense".into();
        assert!(c.threshold_values(false).unwrap_err().is_config());
    }

    #[test]
    fn validation_and_hash() {
        let mut c = RunConfig {
            model: Some("m.json".into()),
            ..RunConfig::default()
        };
        c.validate().unwrap();
        let h = c.hash();
        c.out = "elsewhere".into();
        c.workers = 8;
        assert_eq!(c.hash(), h);
        c.seed = 1;
        assert_ne!(c.hash(), h);
        c.masks = (0, 6);
        assert!(c.validate().is_err());
        let c = RunConfig { model: None, ..RunConfig::default() };
        assert!(c.validate().is_err());
    }
}

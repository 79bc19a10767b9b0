//! ONNX model backend (pure-Rust inference via tract).
//!
//! The model must take a single NCHW `f32` input of shape
//! `[1, channels, height, width]` and emit `[1, c]` (or `[c]`) scores.
//! Occluded pixels are presented as 0.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use super::{Classifier, ScoreVector};
use crate::error::{Error, Result};
use crate::image::Image;

/// How input images are brought to the model's input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResizePolicy {
    /// Reject images whose size differs from the model input.
    #[default]
    Exact,
    Nearest,
    Bilinear,
    Bicubic,
    Lanczos3,
}

impl std::str::FromStr for ResizePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            "bicubic" => Ok(Self::Bicubic),
            "lanczos3" => Ok(Self::Lanczos3),
            other => Err(Error::Config(format!("unknown resize policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnnxConfig {
    pub path: PathBuf,
    pub input_height: usize,
    pub input_width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default)]
    pub resize: ResizePolicy,
    /// Model emits logits; apply a sigmoid to obtain scores.
    #[serde(default)]
    pub logits: bool,
    /// Per-channel normalization applied after masking: `(v - mean) / std`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<Vec<f32>>,
    #[serde(default)]
    pub low_score_regime: bool,
}

fn default_channels() -> usize {
    3
}

pub struct OnnxModel {
    plan: Arc<TypedSimplePlan>,
    config: OnnxConfig,
    classes: usize,
}

fn backend_err(e: impl std::fmt::Display) -> Error {
    Error::backend(None, e.to_string())
}

impl OnnxModel {
    pub fn load(config: OnnxConfig) -> Result<Self> {
        let OnnxConfig {
            input_height: h,
            input_width: w,
            channels: ch,
            ..
        } = config;
        if h == 0 || w == 0 || ch == 0 {
            return Err(Error::Config("ONNX input dimensions must be positive".into()));
        }
        for (name, v) in [("mean", &config.mean), ("std", &config.std)] {
            if let Some(v) = v {
                if v.len() != ch {
                    return Err(Error::Config(format!("{name} needs {ch} entries")));
                }
            }
        }
        let plan = tract_onnx::onnx()
            .model_for_path(&config.path)
            .map_err(|e| Error::backend(None, format!("loading {}: {e}", config.path.display())))?
            .with_input_fact(0, f32::fact([1, ch, h, w]).into())
            .map_err(backend_err)?
            .into_optimized()
            .map_err(backend_err)?
            .into_runnable()
            .map_err(backend_err)?;
        let probe = Tensor::zero::<f32>(&[1, ch, h, w]).map_err(backend_err)?;
        let out = plan.run(tvec!(probe.into())).map_err(backend_err)?;
        let classes = out
            .first()
            .ok_or_else(|| Error::backend(None, "model has no outputs"))?
            .len();
        Ok(OnnxModel {
            plan,
            config,
            classes,
        })
    }

    pub fn config(&self) -> &OnnxConfig {
        &self.config
    }

    /// Masked image as an NCHW tensor at the model's input size.
    fn input_tensor(&self, image: &Image) -> Result<Tensor> {
        let cfg = &self.config;
        if image.channels != cfg.channels {
            return Err(Error::Shape(format!(
                "image has {} channels, model expects {}",
                image.channels, cfg.channels
            )));
        }
        let (h, w) = (cfg.input_height, cfg.input_width);
        let hwc = if image.n1 == h && image.n2 == w {
            image.masked_data()
        } else {
            let filter = match cfg.resize {
                ResizePolicy::Exact => {
                    return Err(Error::Shape(format!(
                        "image is {}x{}, model expects {h}x{w} and resizing is disabled",
                        image.n1, image.n2
                    )))
                }
                ResizePolicy::Nearest => FilterType::Nearest,
                ResizePolicy::Bilinear => FilterType::Triangle,
                ResizePolicy::Bicubic => FilterType::CatmullRom,
                ResizePolicy::Lanczos3 => FilterType::Lanczos3,
            };
            resize_hwc(image, h, w, filter)?
        };
        let mut chw = vec![0f32; cfg.channels * h * w];
        for y in 0..h {
            for x in 0..w {
                for c in 0..cfg.channels {
                    let mut v = hwc[(y * w + x) * cfg.channels + c];
                    if let Some(mean) = &cfg.mean {
                        v -= mean[c];
                    }
                    if let Some(std) = &cfg.std {
                        v /= std[c];
                    }
                    chw[c * h * w + y * w + x] = v;
                }
            }
        }
        Tensor::from_shape(&[1, cfg.channels, h, w], &chw).map_err(backend_err)
    }
}

fn resize_hwc(image: &Image, h: usize, w: usize, filter: FilterType) -> Result<Vec<f32>> {
    let (ih, iw) = (image.n1 as u32, image.n2 as u32);
    let data = image.masked_data();
    let out = match image.channels {
        1 => {
            let buf: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_raw(iw, ih, data)
                .ok_or_else(|| Error::Shape("bad image buffer".into()))?;
            image::imageops::resize(&buf, w as u32, h as u32, filter).into_raw()
        }
        3 => {
            let buf: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::from_raw(iw, ih, data)
                .ok_or_else(|| Error::Shape("bad image buffer".into()))?;
            image::imageops::resize(&buf, w as u32, h as u32, filter).into_raw()
        }
        n => return Err(Error::Unsupported(format!("resizing {n}-channel images"))),
    };
    Ok(out)
}

impl Classifier for OnnxModel {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn score(&self, image: &Image) -> Result<ScoreVector> {
        let input = self.input_tensor(image)?;
        let out = self.plan.run(tvec!(input.into())).map_err(backend_err)?;
        let view = out[0].to_plain_array_view::<f32>().map_err(backend_err)?;
        let scores = view
            .iter()
            .map(|&v| {
                let v = f64::from(v);
                if self.config.logits {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    v
                }
            })
            .collect();
        ScoreVector(scores).validated(self.classes)
    }

    fn low_score_regime(&self) -> bool {
        self.config.low_score_regime
    }
}

/// Decode an image file into `[0, 1]` RGB.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::Dataset(format!("reading {}: {e}", path.display())))?
        .to_rgb32f();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Image::new(h as usize, w as usize, 3, data)
}

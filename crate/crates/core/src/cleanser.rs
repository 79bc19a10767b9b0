//! Double-masking defense for a single binary classifier.
//!
//! Inference runs a first round with every mask applied; disagreeing masks
//! get a second round where they are composed with every mask. Certification
//! checks every unordered mask pair (including `(m, m)`) and records, per
//! mask, whether the pairs it takes part in all predict the ground truth.

use serde::{Deserialize, Serialize};

use crate::backend::BinaryView;
use crate::error::{Error, Result};
use crate::query::{OcclusionKey, QueryService};

/// Per-mask vulnerability status: `true` means every attack contained in
/// that mask is provably harmless. Serialized as `0`/`1` integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VulnStatusArray(pub Vec<bool>);

impl VulnStatusArray {
    pub fn all(len: usize, value: bool) -> Self {
        VulnStatusArray(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_safe(&self, mask: usize) -> bool {
        self.0[mask]
    }

    /// Indices of masks marked vulnerable.
    pub fn vulnerable(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &s)| !s).map(|(i, _)| i)
    }
}

impl Serialize for VulnStatusArray {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|&b| u8::from(b)))
    }
}

impl<'de> Deserialize<'de> for VulnStatusArray {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<u8>::deserialize(d)?;
        if v.iter().any(|&b| b > 1) {
            return Err(serde::de::Error::custom("vulnerability entries must be 0 or 1"));
        }
        Ok(VulnStatusArray(v.into_iter().map(|b| b == 1).collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlCertResult {
    pub certified: bool,
    pub lambda: VulnStatusArray,
}

/// Which branch of double-masking inference produced the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferCase {
    Agreed,
    Disagreer { mask: usize },
    Majority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferOutcome {
    pub label: bool,
    pub case: InferCase,
}

fn ctx(e: Error, context: String) -> Error {
    Error::Query {
        context,
        source: Box::new(e),
    }
}

/// Double-masking inference for one class.
pub fn sl_infer(view: &BinaryView<'_>, q: &QueryService<'_>) -> Result<bool> {
    sl_infer_traced(view, q).map(|o| o.label)
}

pub fn sl_infer_traced(view: &BinaryView<'_>, q: &QueryService<'_>) -> Result<InferOutcome> {
    let n = q.masks().len();
    if n == 0 {
        return Err(Error::Config("empty mask set".into()));
    }
    let first: Vec<bool> = (0..n)
        .map(|m| {
            q.decide(OcclusionKey::Single(m), view.class, view.threshold)
                .map_err(|e| ctx(e, format!("first round, mask {m}, class {}", view.class)))
        })
        .collect::<Result<_>>()?;
    let ones = first.iter().filter(|&&b| b).count();
    // ties go to 0
    let majority = ones * 2 > n;
    if first.iter().all(|&b| b == majority) {
        return Ok(InferOutcome {
            label: majority,
            case: InferCase::Agreed,
        });
    }
    for (dis, &label) in first.iter().enumerate().filter(|(_, &b)| b != majority) {
        let mut unanimous = true;
        for m in 0..n {
            let p = q
                .decide(OcclusionKey::pair(dis, m), view.class, view.threshold)
                .map_err(|e| {
                    ctx(e, format!("second round, masks ({dis}, {m}), class {}", view.class))
                })?;
            if p != label {
                unanimous = false;
                break;
            }
        }
        if unanimous {
            return Ok(InferOutcome {
                label,
                case: InferCase::Disagreer { mask: dis },
            });
        }
    }
    Ok(InferOutcome {
        label: majority,
        case: InferCase::Majority,
    })
}

/// Double-masking certification for one class against ground truth `truth`.
pub fn sl_certify(view: &BinaryView<'_>, truth: bool, q: &QueryService<'_>) -> Result<SlCertResult> {
    let ms = q.masks();
    let n = ms.len();
    if n == 0 || !ms.is_covering() {
        return Ok(SlCertResult {
            certified: false,
            lambda: VulnStatusArray::all(n, false),
        });
    }
    let mut lambda = VulnStatusArray::all(n, true);
    let mut certified = true;
    for a in 0..n {
        for b in a..n {
            let p = q
                .decide(OcclusionKey::pair(a, b), view.class, view.threshold)
                .map_err(|e| ctx(e, format!("certification, masks ({a}, {b}), class {}", view.class)))?;
            if p != truth {
                certified = false;
                lambda.0[a] = false;
                lambda.0[b] = false;
            }
        }
    }
    Ok(SlCertResult { certified, lambda })
}

//! Rectangular occlusion masks and the covering property.
//!
//! A mask set is *covering* for a patch size when every possible patch
//! placement lies entirely inside at least one mask. Mask sets are built per
//! axis: along an axis of length `n` with patch length `p` and a budget of `k`
//! masks, the mask length `m` is the smallest value whose stride
//! `s = m - p + 1` places at most `k` masks, the last one clamped to `n - m`.
//! The 2-D set is the row-major product of the two axis layouts.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};

/// Patch size request, either in pixels or as a fraction of the image area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchSpec {
    Pixels { p1: usize, p2: usize },
    /// Fraction of the total image area; resolves to a square patch of
    /// `ceil(sqrt(f) * n)` pixels per axis.
    AreaFraction(f64),
}

impl PatchSpec {
    pub fn square(p: usize) -> Self {
        PatchSpec::Pixels { p1: p, p2: p }
    }

    /// Resolve to a concrete pixel size for an `n1 x n2` image.
    pub fn resolve(&self, n1: usize, n2: usize) -> Result<PatchSize> {
        let (p1, p2) = match *self {
            PatchSpec::Pixels { p1, p2 } => (p1, p2),
            PatchSpec::AreaFraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Config(format!(
                        "patch area fraction must lie in (0, 1], got {f}"
                    )));
                }
                let side = f.sqrt();
                (
                    ((side * n1 as f64).ceil() as usize).max(1),
                    ((side * n2 as f64).ceil() as usize).max(1),
                )
            }
        };
        check_patch_axis(Axis::Rows, p1, n1)?;
        check_patch_axis(Axis::Cols, p2, n2)?;
        Ok(PatchSize { p1, p2 })
    }
}

fn check_patch_axis(axis: Axis, p: usize, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::axis(axis, "image dimension must be positive"));
    }
    if p == 0 {
        return Err(Error::axis(axis, "patch size must be at least 1 pixel"));
    }
    if p > n {
        return Err(Error::axis(
            axis,
            format!("patch size {p} exceeds image size {n}"),
        ));
    }
    Ok(())
}

/// Resolved patch size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSize {
    pub p1: usize,
    pub p2: usize,
}

/// Axis-aligned occluding rectangle; `(y0, x0)` is the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    pub y0: usize,
    pub x0: usize,
    pub m1: usize,
    pub m2: usize,
}

impl Mask {
    #[inline]
    pub fn contains_pixel(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y0 + self.m1 && x >= self.x0 && x < self.x0 + self.m2
    }

    /// True when the `h x w` rectangle at `(y, x)` lies inside this mask.
    #[inline]
    pub fn contains_rect(&self, y: usize, x: usize, h: usize, w: usize) -> bool {
        y >= self.y0 && x >= self.x0 && y + h <= self.y0 + self.m1 && x + w <= self.x0 + self.m2
    }
}

/// Layout along one axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisLayout {
    pub mask_len: usize,
    pub stride: usize,
    pub positions: Vec<usize>,
}

/// Smallest mask length for axis length `n`, patch `p` and budget `k`.
pub fn axis_layout(axis: Axis, n: usize, p: usize, k: usize) -> Result<AxisLayout> {
    check_patch_axis(axis, p, n)?;
    if k == 0 {
        return Err(Error::axis(axis, "mask budget must be at least 1"));
    }
    for m in p..n {
        let s = m - p + 1;
        let count = (n - m).div_ceil(s) + 1;
        if count <= k {
            let mut positions: Vec<usize> = (0..count - 1).map(|i| i * s).collect();
            positions.push(n - m);
            return Ok(AxisLayout {
                mask_len: m,
                stride: s,
                positions,
            });
        }
    }
    // m = n: one mask spanning the axis.
    Ok(AxisLayout {
        mask_len: n,
        stride: n - p + 1,
        positions: vec![0],
    })
}

/// Ordered mask collection. Mask indices are stable: vulnerability arrays
/// index into `masks` in this order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskSet {
    pub n1: usize,
    pub n2: usize,
    pub k1: usize,
    pub k2: usize,
    pub s1: usize,
    pub s2: usize,
    pub p1: usize,
    pub p2: usize,
    pub masks: Vec<Mask>,
    #[serde(skip)]
    covered: OnceLock<bool>,
}

impl PartialEq for MaskSet {
    fn eq(&self, other: &Self) -> bool {
        self.n1 == other.n1
            && self.n2 == other.n2
            && self.k1 == other.k1
            && self.k2 == other.k2
            && self.s1 == other.s1
            && self.s2 == other.s2
            && self.p1 == other.p1
            && self.p2 == other.p2
            && self.masks == other.masks
    }
}

/// Build the covering mask set for an `n1 x n2` image.
pub fn generate_mask_set(
    n1: usize,
    n2: usize,
    patch: PatchSpec,
    k1: usize,
    k2: usize,
) -> Result<MaskSet> {
    let PatchSize { p1, p2 } = patch.resolve(n1, n2)?;
    let rows = axis_layout(Axis::Rows, n1, p1, k1)?;
    let cols = axis_layout(Axis::Cols, n2, p2, k2)?;
    let masks = rows
        .positions
        .iter()
        .flat_map(|&y0| {
            cols.positions.iter().map(move |&x0| Mask {
                y0,
                x0,
                m1: rows.mask_len,
                m2: cols.mask_len,
            })
        })
        .collect();
    Ok(MaskSet {
        n1,
        n2,
        k1,
        k2,
        s1: rows.stride,
        s2: cols.stride,
        p1,
        p2,
        masks,
        covered: OnceLock::new(),
    })
}

impl MaskSet {
    /// Hand-built mask set. Masks must lie inside the image; covering is not
    /// required (use [`verify_covering`] to check).
    pub fn from_masks(n1: usize, n2: usize, patch: PatchSize, masks: Vec<Mask>) -> Result<Self> {
        check_patch_axis(Axis::Rows, patch.p1, n1)?;
        check_patch_axis(Axis::Cols, patch.p2, n2)?;
        for (i, m) in masks.iter().enumerate() {
            if m.m1 == 0 || m.y0 + m.m1 > n1 {
                return Err(Error::axis(Axis::Rows, format!("mask {i} leaves the image")));
            }
            if m.m2 == 0 || m.x0 + m.m2 > n2 {
                return Err(Error::axis(Axis::Cols, format!("mask {i} leaves the image")));
            }
        }
        Ok(MaskSet {
            n1,
            n2,
            k1: masks.len(),
            k2: 1,
            s1: 0,
            s2: 0,
            p1: patch.p1,
            p2: patch.p2,
            masks,
            covered: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn patch(&self) -> PatchSize {
        PatchSize {
            p1: self.p1,
            p2: self.p2,
        }
    }

    /// Number of patch placements per axis.
    pub fn placement_dims(&self) -> (usize, usize) {
        (self.n1 - self.p1 + 1, self.n2 - self.p2 + 1)
    }

    /// Memoized covering check.
    pub fn is_covering(&self) -> bool {
        *self.covered.get_or_init(|| {
            let (r, c) = self.placement_dims();
            (0..r).all(|y| {
                (0..c).all(|x| {
                    self.masks
                        .iter()
                        .any(|m| m.contains_rect(y, x, self.p1, self.p2))
                })
            })
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ms: MaskSet = serde_json::from_str(s)?;
        Self::from_masks(ms.n1, ms.n2, ms.patch(), ms.masks.clone())?;
        Ok(ms)
    }
}

/// Masks containing one patch placement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementCover {
    pub y: usize,
    pub x: usize,
    pub masks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveringReport {
    pub covered: bool,
    pub uncovered: usize,
    /// Row-major over all `(n1 - p1 + 1) * (n2 - p2 + 1)` placements.
    pub placements: Vec<PlacementCover>,
}

impl CoveringReport {
    pub fn get(&self, y: usize, x: usize) -> Option<&PlacementCover> {
        self.placements.iter().find(|p| p.y == y && p.x == x)
    }
}

pub fn verify_covering(ms: &MaskSet) -> CoveringReport {
    let (rows, cols) = ms.placement_dims();
    let mut placements = Vec::with_capacity(rows * cols);
    let mut uncovered = 0;
    for y in 0..rows {
        for x in 0..cols {
            let masks = containing(ms, y, x);
            if masks.is_empty() {
                uncovered += 1;
            }
            placements.push(PlacementCover { y, x, masks });
        }
    }
    let covered = uncovered == 0;
    let _ = ms.covered.set(covered);
    CoveringReport {
        covered,
        uncovered,
        placements,
    }
}

fn containing(ms: &MaskSet, y: usize, x: usize) -> Vec<usize> {
    ms.masks
        .iter()
        .enumerate()
        .filter(|(_, m)| m.contains_rect(y, x, ms.p1, ms.p2))
        .map(|(i, _)| i)
        .collect()
}

/// Indices of the masks that fully contain the patch placed at `(y, x)`.
pub fn masks_containing(ms: &MaskSet, y: usize, x: usize) -> Result<Vec<usize>> {
    let (rows, cols) = ms.placement_dims();
    if y >= rows || x >= cols {
        return Err(Error::PlacementOutOfBounds { y, x });
    }
    Ok(containing(ms, y, x))
}

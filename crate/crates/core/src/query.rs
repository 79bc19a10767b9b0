//! Per-image query cache shared by every class.
//!
//! Double-masking only ever looks at the image under "no mask", one mask, or
//! an unordered pair of masks. Each such occlusion pattern is evaluated once
//! and the whole score vector is reused by all per-class binary views, so the
//! number of classifier calls does not grow with the class count.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use once_cell::sync::OnceCell;
use parking_lot::Mutex;

use crate::backend::{Classifier, ScoreVector};
use crate::error::{Error, Result};
use crate::geometry::MaskSet;
use crate::image::Image;

/// Composed occlusion pattern. Pairs are stored with `a < b`; `(m, m)`
/// collapses to `Single(m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OcclusionKey {
    Clean,
    Single(usize),
    Pair(usize, usize),
}

impl OcclusionKey {
    pub fn pair(a: usize, b: usize) -> Self {
        match a.cmp(&b) {
            std::cmp::Ordering::Equal => OcclusionKey::Single(a),
            std::cmp::Ordering::Less => OcclusionKey::Pair(a, b),
            std::cmp::Ordering::Greater => OcclusionKey::Pair(b, a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    /// Cache every pattern; one evaluation per pattern per image.
    Shared,
    /// No caching; every request hits the classifier. Instrumentation only.
    Naive,
}

pub struct QueryService<'a> {
    model: &'a dyn Classifier,
    image: &'a Image,
    masks: &'a MaskSet,
    mode: QueryMode,
    cache: Mutex<HashMap<OcclusionKey, Arc<OnceCell<ScoreVector>>>>,
    evaluations: AtomicUsize,
}

impl<'a> QueryService<'a> {
    pub fn new(model: &'a dyn Classifier, image: &'a Image, masks: &'a MaskSet) -> Self {
        Self::with_mode(model, image, masks, QueryMode::Shared)
    }

    pub fn with_mode(
        model: &'a dyn Classifier,
        image: &'a Image,
        masks: &'a MaskSet,
        mode: QueryMode,
    ) -> Self {
        QueryService {
            model,
            image,
            masks,
            mode,
            cache: Mutex::new(HashMap::new()),
            evaluations: AtomicUsize::new(0),
        }
    }

    pub fn model(&self) -> &'a dyn Classifier {
        self.model
    }

    pub fn image(&self) -> &'a Image {
        self.image
    }

    pub fn masks(&self) -> &'a MaskSet {
        self.masks
    }

    pub fn mode(&self) -> QueryMode {
        self.mode
    }

    /// Number of classifier evaluations performed so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    fn evaluate(&self, key: OcclusionKey) -> Result<ScoreVector> {
        let ms = &self.masks.masks;
        let lookup = |i: usize| {
            ms.get(i)
                .ok_or_else(|| Error::Internal(format!("mask index {i} out of range")))
        };
        let scores = match key {
            OcclusionKey::Clean => self.model.score_masked(self.image, &[]),
            OcclusionKey::Single(a) => self.model.score_masked(self.image, &[lookup(a)?]),
            OcclusionKey::Pair(a, b) => {
                self.model
                    .score_masked(self.image, &[lookup(a)?, lookup(b)?])
            }
        };
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        scores.and_then(|s| s.validated(self.model.num_classes()))
    }

    /// Run `f` on the score vector for `key`.
    pub fn with_scores<R>(&self, key: OcclusionKey, f: impl FnOnce(&ScoreVector) -> R) -> Result<R> {
        match self.mode {
            QueryMode::Naive => Ok(f(&self.evaluate(key)?)),
            QueryMode::Shared => {
                let cell = self.cache.lock().entry(key).or_default().clone();
                let scores = cell.get_or_try_init(|| self.evaluate(key))?;
                Ok(f(scores))
            }
        }
    }

    pub fn scores(&self, key: OcclusionKey) -> Result<ScoreVector> {
        self.with_scores(key, |s| s.clone())
    }

    /// Binary decision `score[class] > threshold` under `key`.
    pub fn decide(&self, key: OcclusionKey, class: usize, threshold: f64) -> Result<bool> {
        self.with_scores(key, |s| s.get(class) > threshold)
    }

    /// Distinct single-mask and pair patterns for the current mask set.
    pub fn pattern_count(&self) -> usize {
        let m = self.masks.len();
        m * (m + 1) / 2
    }
}

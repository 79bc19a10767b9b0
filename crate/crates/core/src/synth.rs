//! Seeded generators for synthetic instances and suites.
//!
//! Feature pixels of a positive class are mostly bright and those of a
//! negative class mostly dark, with a configurable share of noisy pixels so
//! that some classes are only partially certifiable.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{SyntheticClass, SyntheticModel, Thresholds};
use crate::error::{Error, Result};
use crate::geometry::{generate_mask_set, MaskSet, PatchSize, PatchSpec};
use crate::image::Image;
use crate::labels::LabelBits;

/// Ranges for randomly drawn single-image instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceParams {
    pub size: (usize, usize),
    pub classes: (usize, usize),
    pub patch: (usize, usize),
    pub masks_per_axis: (usize, usize),
    pub features: (usize, usize),
    /// Probability that a feature pixel agrees with its class label.
    pub agreement: f64,
    /// Probability that a class is present.
    pub positive_rate: f64,
    /// Probability that a class defaults to 1 when all its features are
    /// occluded.
    pub default_one_rate: f64,
    pub thresholds: Vec<f64>,
}

impl Default for InstanceParams {
    fn default() -> Self {
        InstanceParams {
            size: (8, 12),
            classes: (2, 6),
            patch: (2, 3),
            masks_per_axis: (2, 3),
            features: (2, 4),
            agreement: 0.95,
            positive_rate: 0.7,
            default_one_rate: 0.3,
            thresholds: vec![0.3, 0.5, 0.7],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub seed: u64,
    pub model: SyntheticModel,
    pub image: Image,
    pub labels: LabelBits,
    pub masks: MaskSet,
    pub patch: PatchSize,
    pub thresholds: Thresholds,
}

fn draw(rng: &mut ChaCha8Rng, range: (usize, usize)) -> usize {
    rng.gen_range(range.0..=range.1)
}

fn random_classes(
    rng: &mut ChaCha8Rng,
    n1: usize,
    n2: usize,
    c: usize,
    features: (usize, usize),
    default_one_rate: f64,
) -> Result<SyntheticModel> {
    let all: Vec<[usize; 2]> = (0..n1).flat_map(|y| (0..n2).map(move |x| [y, x])).collect();
    let classes = (0..c)
        .map(|_| {
            let count = draw(rng, features).min(all.len());
            let mut feats: Vec<[usize; 2]> = all.choose_multiple(rng, count).copied().collect();
            feats.sort_unstable();
            SyntheticClass {
                features: feats,
                default: u8::from(rng.gen_bool(default_one_rate)),
            }
        })
        .collect();
    SyntheticModel::new(classes)
}

fn render(
    rng: &mut ChaCha8Rng,
    model: &SyntheticModel,
    n1: usize,
    n2: usize,
    labels: &LabelBits,
    agreement: f64,
) -> Result<Image> {
    let mut data: Vec<f32> = (0..n1 * n2).map(|_| rng.gen_range(0.0..1.0)).collect();
    for (class, spec) in model.classes.iter().enumerate() {
        for &[y, x] in &spec.features {
            let bright = if rng.gen_bool(agreement) {
                labels.get(class)
            } else {
                !labels.get(class)
            };
            data[y * n2 + x] = if bright {
                rng.gen_range(0.55..=1.0)
            } else {
                rng.gen_range(0.0..0.45)
            };
        }
    }
    Image::new(n1, n2, 1, data)
}

/// One random single-image instance, fully determined by `seed`.
pub fn random_instance(seed: u64, params: &InstanceParams) -> Result<SyntheticInstance> {
    if params.thresholds.is_empty() {
        return Err(Error::Config("instance parameters need at least one threshold".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n1 = draw(&mut rng, params.size);
    let n2 = draw(&mut rng, params.size);
    let c = draw(&mut rng, params.classes);
    let p = draw(&mut rng, params.patch);
    let k1 = draw(&mut rng, params.masks_per_axis);
    let k2 = draw(&mut rng, params.masks_per_axis);
    let model = random_classes(&mut rng, n1, n2, c, params.features, params.default_one_rate)?;
    let labels = LabelBits((0..c).map(|_| rng.gen_bool(params.positive_rate)).collect());
    let image = render(&mut rng, &model, n1, n2, &labels, params.agreement)?;
    let threshold = *params.thresholds.choose(&mut rng).expect("non-empty");
    let masks = generate_mask_set(n1, n2, PatchSpec::square(p), k1, k2)?;
    Ok(SyntheticInstance {
        seed,
        model,
        image,
        labels,
        masks,
        patch: PatchSize { p1: p, p2: p },
        thresholds: Thresholds::Global(threshold),
    })
}

/// A dataset sharing one synthetic model.
#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    pub model: SyntheticModel,
    pub items: Vec<SuiteItem>,
}

#[derive(Debug, Clone)]
pub struct SuiteItem {
    pub id: String,
    pub image: Image,
    pub labels: LabelBits,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteParams {
    pub n1: usize,
    pub n2: usize,
    pub classes: usize,
    pub images: usize,
    pub features: (usize, usize),
    pub agreement: f64,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams {
            n1: 12,
            n2: 12,
            classes: 4,
            images: 20,
            features: (2, 6),
            agreement: 0.8,
        }
    }
}

pub fn generate_suite(seed: u64, params: &SuiteParams) -> Result<SyntheticSuite> {
    if params.classes == 0 || params.images == 0 || params.n1 == 0 || params.n2 == 0 {
        return Err(Error::Config(
            "suite needs at least one class, one image and a non-empty image size".into(),
        ));
    }
    if !(0.0..=1.0).contains(&params.agreement) {
        return Err(Error::Config(format!(
            "agreement {} is not a probability",
            params.agreement
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_classes(&mut rng, params.n1, params.n2, params.classes, params.features, 0.5)?;
    let items = (0..params.images)
        .map(|i| {
            let labels = LabelBits((0..params.classes).map(|_| rng.gen_bool(0.5)).collect());
            let image = render(&mut rng, &model, params.n1, params.n2, &labels, params.agreement)?;
            Ok(SuiteItem {
                id: format!("img{i:04}"),
                image,
                labels,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SyntheticSuite { model, items })
}

//! Desk-scale datasets (synthetic blobs and textures, image folders) and the
//! two-view augmentation used for pre-training.
//!
//! Pre-training only ever sees [`Unlabeled`], which has no access to labels.

mod augment;
mod folder;

pub use augment::{augment, eval_batch, eval_view, AugmentConfig};
pub use folder::{convert_cifar10, load_image_folder, save_png};

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::probe::{read_features, write_features, Dtype, FeatureMeta};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    /// Gaussian class blobs for `shape = [d]`, oriented gratings for
    /// `shape = [C, H, W]`.
    SyntheticBlobs,
    /// `path/train/<class>/*.png` and `path/test/<class>/*.png`.
    ImageFolder,
}

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default)]
    pub source: Source,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_test_instances")]
    pub test_instances: usize,
    /// Per-sample shape: `[d]` or `[C, H, W]`.
    #[serde(default = "default_shape")]
    pub shape: Vec<usize>,
    /// Scale of the class structure relative to per-instance noise.
    #[serde(default = "one")]
    pub separation: f64,
    #[serde(default = "one")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub augment: AugmentConfig,
}

fn default_classes() -> usize {
    10
}
fn default_instances() -> usize {
    5000
}
fn default_test_instances() -> usize {
    1000
}
fn default_shape() -> Vec<usize> {
    vec![64]
}
fn one() -> f64 {
    1.0
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: Source::SyntheticBlobs,
            classes: default_classes(),
            instances: default_instances(),
            test_instances: default_test_instances(),
            shape: default_shape(),
            separation: 1.0,
            noise: 1.0,
            seed: 0,
            path: None,
            augment: AugmentConfig::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.source == Source::ImageFolder {
            if self.path.is_none() {
                return Err(invalid!("image_folder needs a path"));
            }
            return Ok(());
        }
        if self.classes < 2 {
            return Err(invalid!("need at least 2 classes, got {}", self.classes));
        }
        if self.instances < 2 * self.classes {
            return Err(invalid!("need at least 2 instances per class"));
        }
        if !(self.shape.len() == 1 || self.shape.len() == 3) || self.shape.contains(&0) {
            return Err(invalid!("shape {:?} must be [d] or [C, H, W]", self.shape));
        }
        // blobs at separation 0 are a valid structure-free control; gratings divide by it
        let min_ok = if self.shape.len() == 1 { self.separation >= 0.0 } else { self.separation > 0.0 };
        if !min_ok || !(self.noise >= 0.0) {
            return Err(invalid!("separation must be positive (or zero for blobs) and noise nonnegative"));
        }
        self.augment.validate(&self.shape)
    }

    /// Hex digest of the fields that determine the generated data.
    pub fn cache_key(&self) -> String {
        let key = serde_json::json!({
            "source": self.source,
            "classes": self.classes,
            "instances": self.instances,
            "test_instances": self.test_instances,
            "shape": self.shape,
            "separation": self.separation,
            "noise": self.noise,
            "seed": self.seed,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Labelled samples stacked along axis 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: ArrayD<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: ArrayD<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.ndim() < 2 || inputs.shape()[0] != labels.len() {
            return Err(invalid!("{} labels for inputs of shape {:?}", labels.len(), inputs.shape()));
        }
        if labels.iter().any(|&l| l >= classes) {
            return Err(invalid!("label out of range for {classes} classes"));
        }
        Ok(Self { inputs, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn inputs(&self) -> &ArrayD<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn select(&self, ids: &[usize]) -> ArrayD<f64> {
        self.inputs.select(Axis(0), ids)
    }

    /// The label-free view used for pre-training.
    pub fn unlabeled(&self) -> Unlabeled<'_> {
        Unlabeled { inputs: &self.inputs }
    }
}

/// Train and test splits of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

/// One pre-training example: two augmented views of instance `id`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoViewSample {
    pub id: usize,
    pub view1: ArrayD<f64>,
    pub view2: ArrayD<f64>,
}

/// A batch of [`TwoViewSample`]s stacked along axis 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoViewBatch {
    pub ids: Vec<usize>,
    pub view1: ArrayD<f64>,
    pub view2: ArrayD<f64>,
}

/// Draws two views of `sample` with independent generators.
pub fn two_views(
    id: usize,
    sample: ndarray::ArrayViewD<f64>,
    cfg: &AugmentConfig,
    rng1: &mut impl Rng,
    rng2: &mut impl Rng,
) -> TwoViewSample {
    TwoViewSample {
        id,
        view1: augment(sample.view(), cfg, rng1),
        view2: augment(sample, cfg, rng2),
    }
}

/// Inputs without labels.
#[derive(Debug, Clone, Copy)]
pub struct Unlabeled<'a> {
    inputs: &'a ArrayD<f64>,
}

impl Unlabeled<'_> {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn two_views(&self, id: usize, cfg: &AugmentConfig, rng1: &mut impl Rng, rng2: &mut impl Rng) -> TwoViewSample {
        two_views(id, self.inputs.index_axis(Axis(0), id), cfg, rng1, rng2)
    }

    pub fn two_view_batch(&self, ids: &[usize], cfg: &AugmentConfig, rng1: &mut impl Rng, rng2: &mut impl Rng) -> TwoViewBatch {
        let mut shape = vec![ids.len()];
        shape.extend(cfg.output_shape(self.sample_shape()));
        let mut view1 = ArrayD::zeros(IxDyn(&shape));
        let mut view2 = ArrayD::zeros(IxDyn(&shape));
        for (row, &id) in ids.iter().enumerate() {
            let s = self.two_views(id, cfg, rng1, rng2);
            view1.index_axis_mut(Axis(0), row).assign(&s.view1);
            view2.index_axis_mut(Axis(0), row).assign(&s.view2);
        }
        TwoViewBatch {
            ids: ids.to_vec(),
            view1,
            view2,
        }
    }
}

/// Shuffles `0..n` and cuts it into batches, dropping a short final batch.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks_exact(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Generates the synthetic train and test splits described by `spec`.
pub fn make_synthetic(spec: &DatasetSpec) -> Result<Splits> {
    spec.validate()?;
    if spec.source != Source::SyntheticBlobs {
        return Err(invalid!("make_synthetic needs source = synthetic_blobs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gen: Box<dyn Fn(usize, &mut ChaCha8Rng) -> ArrayD<f64>> = if spec.shape.len() == 1 {
        let d = spec.shape[0];
        let centers: Vec<Vec<f64>> = (0..spec.classes)
            .map(|_| (0..d).map(|_| spec.separation * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let noise = spec.noise;
        Box::new(move |c, r: &mut ChaCha8Rng| {
            ArrayD::from_shape_fn(IxDyn(&[d]), |i| centers[c][i[0]] + noise * r.sample::<f64, _>(StandardNormal))
        })
    } else {
        let (ch, h, w) = (spec.shape[0], spec.shape[1], spec.shape[2]);
        let classes = spec.classes;
        let palette: Vec<Vec<f64>> = (0..classes).map(|_| (0..ch).map(|_| rng.random_range(0.3..1.0)).collect()).collect();
        let (sep, noise) = (spec.separation, spec.noise);
        Box::new(move |c, r: &mut ChaCha8Rng| {
            let angle = PI * c as f64 / classes as f64 + 0.1 * r.sample::<f64, _>(StandardNormal) / sep;
            let freq = (2 + c % 3) as f64 * (1.0 + 0.05 * r.sample::<f64, _>(StandardNormal));
            let phase = r.random_range(0.0..2.0 * PI);
            let (sa, ca) = angle.sin_cos();
            let mut img = ArrayD::zeros(IxDyn(&[ch, h, w]));
            for k in 0..ch {
                for y in 0..h {
                    for x in 0..w {
                        let u = (x as f64 * ca + y as f64 * sa) / w as f64;
                        let v = 0.5 + 0.4 * palette[c][k] * (2.0 * PI * freq * u + phase).sin();
                        img[[k, y, x]] = (v + 0.1 * noise * r.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0);
                    }
                }
            }
            img
        })
    };
    let make = |n: usize, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
        let mut shape = vec![n];
        shape.extend(&spec.shape);
        let mut inputs = ArrayD::zeros(IxDyn(&shape));
        for (i, &c) in labels.iter().enumerate() {
            inputs.index_axis_mut(Axis(0), i).assign(&gen(c, rng));
        }
        Dataset::new(inputs, labels, spec.classes)
    };
    let train = make(spec.instances, &mut rng)?;
    let test = make(spec.test_instances, &mut rng)?;
    Ok(Splits { train, test })
}

fn cache_paths(dir: &Path, key: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("synthetic-{key}.train.feat")), dir.join(format!("synthetic-{key}.test.feat")))
}

fn write_split(path: &Path, ds: &Dataset) -> Result<()> {
    let n = ds.len();
    let flat = ds.inputs.to_shape((n, ds.inputs.len() / n.max(1))).expect("contiguous").to_owned();
    let mut meta = FeatureMeta::new(Dtype::F64);
    meta.labels = Some(ds.labels.clone());
    meta.extra = serde_json::json!({ "shape": ds.sample_shape(), "classes": ds.classes });
    write_features(path, &flat, &meta)
}

fn read_split(path: &Path) -> Result<Dataset> {
    let (flat, meta) = read_features(path)?;
    let shape: Vec<usize> = serde_json::from_value(meta.extra["shape"].clone())
        .map_err(|e| crate::Error::format(path, format!("bad cached shape: {e}")))?;
    let classes = meta.extra["classes"].as_u64().unwrap_or(0) as usize;
    let mut full = vec![flat.nrows()];
    full.extend(shape);
    let inputs = flat
        .into_shape_with_order(IxDyn(&full))
        .map_err(|e| crate::Error::format(path, e.to_string()))?;
    Dataset::new(inputs, meta.labels.unwrap_or_default(), classes)
}

/// Loads the splits for `spec`, caching synthetic data under `cache_dir`
/// keyed by [`DatasetSpec::cache_key`].
pub fn load_splits(spec: &DatasetSpec, cache_dir: Option<&Path>) -> Result<Splits> {
    spec.validate()?;
    match spec.source {
        Source::ImageFolder => {
            let root = spec.path.as_ref().expect("validated");
            let channels = spec.shape.first().copied().filter(|_| spec.shape.len() == 3).unwrap_or(3);
            let train = load_image_folder(&root.join("train"), channels)?;
            let test = load_image_folder(&root.join("test"), channels)?;
            spec.augment.validate(train.sample_shape())?;
            Ok(Splits { train, test })
        }
        Source::SyntheticBlobs => {
            let Some(dir) = cache_dir else {
                return make_synthetic(spec);
            };
            let (tr, te) = cache_paths(dir, &spec.cache_key());
            if tr.exists() && te.exists() {
                if let (Ok(train), Ok(test)) = (read_split(&tr), read_split(&te)) {
                    return Ok(Splits { train, test });
                }
            }
            let splits = make_synthetic(spec)?;
            write_split(&tr, &splits.train)?;
            write_split(&te, &splits.test)?;
            Ok(splits)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::l2_normalize_rows;
    use crate::probe::{fit_least_squares, knn_eval, to_dmatrix};
    use ndarray::{Array2, Ix2};

    fn vectors(ds: &Dataset) -> Array2<f64> {
        ds.inputs().clone().into_dimensionality::<Ix2>().unwrap()
    }

    #[test]
    fn separated_blobs_are_knn_perfect() {
        let spec = DatasetSpec {
            classes: 2,
            instances: 100,
            test_instances: 50,
            separation: 10.0,
            noise: 0.1,
            ..DatasetSpec::default()
        };
        let s = make_synthetic(&spec).unwrap();
        let tr = l2_normalize_rows(&vectors(&s.train)).0;
        let te = l2_normalize_rows(&vectors(&s.test)).0;
        assert_eq!(knn_eval(&tr, s.train.labels(), &te, s.test.labels(), 5, false).unwrap(), 1.0);
    }

    #[test]
    fn regeneration_is_identical() {
        let spec = DatasetSpec {
            instances: 40,
            test_instances: 10,
            ..DatasetSpec::default()
        };
        assert_eq!(make_synthetic(&spec).unwrap(), make_synthetic(&spec).unwrap());
        let img = DatasetSpec {
            shape: vec![3, 8, 8],
            ..spec.clone()
        };
        assert_eq!(make_synthetic(&img).unwrap(), make_synthetic(&img).unwrap());
        let other = DatasetSpec { seed: 1, ..spec.clone() };
        assert_ne!(make_synthetic(&spec).unwrap(), make_synthetic(&other).unwrap());
        assert_ne!(spec.cache_key(), other.cache_key());
    }

    #[test]
    fn raw_least_squares_probe_beats_chance() {
        let spec = DatasetSpec::default();
        let s = make_synthetic(&spec).unwrap();
        let onehot = |ds: &Dataset| Array2::from_shape_fn((ds.len(), 10), |(i, c)| f64::from(ds.labels()[i] == c));
        let theta = fit_least_squares(&to_dmatrix(&vectors(&s.train)), &to_dmatrix(&onehot(&s.train))).unwrap();
        let scores = to_dmatrix(&vectors(&s.test)) * theta;
        let hits = (0..s.test.len())
            .filter(|&i| {
                let row = scores.row(i);
                let best = (0..10).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                best == s.test.labels()[i]
            })
            .count();
        assert!(hits as f64 / s.test.len() as f64 > 0.1);
    }

    #[test]
    fn degenerate_specs_rejected() {
        assert!(make_synthetic(&DatasetSpec { classes: 1, ..Default::default() }).is_err());
        assert!(make_synthetic(&DatasetSpec { instances: 15, ..Default::default() }).is_err());
        assert!(make_synthetic(&DatasetSpec { shape: vec![3, 4], ..Default::default() }).is_err());
    }

    #[test]
    fn identity_augmentation_keeps_views_equal() {
        let spec = DatasetSpec {
            shape: vec![3, 8, 8],
            instances: 20,
            test_instances: 4,
            ..Default::default()
        };
        let s = make_synthetic(&spec).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let v = s.train.unlabeled().two_views(3, &AugmentConfig::identity(), &mut r1, &mut r2);
        assert_eq!(v.view1, v.view2);
        assert_eq!(v.view1, s.train.inputs().index_axis(Axis(0), 3));
    }

    #[test]
    fn crops_are_contiguous_subregions() {
        let spec = DatasetSpec {
            shape: vec![2, 10, 9],
            instances: 20,
            test_instances: 4,
            ..Default::default()
        };
        let s = make_synthetic(&spec).unwrap();
        let cfg = AugmentConfig {
            crop: Some(6),
            ..AugmentConfig::identity()
        };
        let original = s.train.inputs().index_axis(Axis(0), 0).to_owned();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let v = s.train.unlabeled().two_views(0, &cfg, &mut r1, &mut r2);
            for view in [&v.view1, &v.view2] {
                assert_eq!(view.shape(), &[2, 6, 6]);
                let found = (0..=4).any(|y| {
                    (0..=3).any(|x| original.slice(ndarray::s![.., y..y + 6, x..x + 6]).into_dyn() == view.view())
                });
                assert!(found);
            }
        }
        let centered = eval_view(original.view(), &cfg);
        assert_eq!(centered.view(), original.slice(ndarray::s![.., 2..8, 1..7]).into_dyn());
    }

    #[test]
    fn fixed_seed_reproduces_pair() {
        let s = make_synthetic(&DatasetSpec { instances: 20, test_instances: 4, ..Default::default() }).unwrap();
        let cfg = AugmentConfig {
            noise_std: 0.3,
            mask_prob: 0.2,
            scale_jitter: 0.2,
            ..AugmentConfig::identity()
        };
        let draw = || {
            let mut r1 = ChaCha8Rng::seed_from_u64(9);
            let mut r2 = ChaCha8Rng::seed_from_u64(10);
            s.train.unlabeled().two_view_batch(&[0, 1, 2], &cfg, &mut r1, &mut r2)
        };
        let a = draw();
        assert_eq!(a, draw());
        assert_ne!(a.view1, a.view2);
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            shape: vec![1, 4, 4],
            instances: 20,
            test_instances: 6,
            ..Default::default()
        };
        let first = load_splits(&spec, Some(dir.path())).unwrap();
        let files = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(files, 4);
        let second = load_splits(&spec, Some(dir.path())).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn batches_drop_remainder() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = shuffled_batches(10, 4, &mut rng);
        assert_eq!(b.len(), 2);
        let mut seen: Vec<usize> = b.concat();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 8);
    }
}

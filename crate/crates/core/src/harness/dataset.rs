//! Synthetic identity data and the analytic teacher.
//!
//! Each identity is a unit anchor in embedding space. A sample renders
//! `anchor + noise` through a fixed random linear map into an `r × r`
//! raster, then a dataset-wide affine map brings every pixel into [0,1].
//! The teacher inverts both maps with the pseudo-inverse and unit-normalizes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::HarnessError;
use crate::losses::CentroidTable;
use crate::math::{dot64, norm64, Mat64, Matrix, Vector};
use crate::occlusion::{synthesize_mask, MaskCategory, MaskSpec, MaskedSample, Raster};

/// Pairwise anchor cosine must stay below this.
pub const MAX_ANCHOR_COSINE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub num_identities: usize,
    pub samples_per_identity: usize,
    pub embed_dim: usize,
    pub raster_side: usize,
    pub noise_sigma: f64,
    /// `None` draws a category per sample.
    pub mask_category: Option<MaskCategory>,
    pub mask_coverage: f64,
    pub mask_flip: bool,
    pub mask_shift: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_identities: 32,
            samples_per_identity: 24,
            embed_dim: 16,
            raster_side: 8,
            noise_sigma: 0.05,
            mask_category: None,
            mask_coverage: 0.2,
            mask_flip: true,
            mask_shift: 1,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.num_identities < 2 {
            return bad(format!("num_identities={} < 2", self.num_identities));
        }
        if self.samples_per_identity < 2 {
            return bad(format!(
                "samples_per_identity={} < 2",
                self.samples_per_identity
            ));
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if self.raster_side * self.raster_side < self.embed_dim {
            return bad(format!(
                "raster {0}x{0} has fewer pixels than embed_dim={1}; render map not invertible",
                self.raster_side, self.embed_dim
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise_sigma={}", self.noise_sigma));
        }
        MaskSpec {
            target_coverage: self.mask_coverage,
            ..MaskSpec::default()
        }
        .validate(self.raster_side, self.raster_side)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: u32,
    /// Clean raster, masked raster and mask.
    pub masked: MaskedSample,
}

impl Sample {
    pub fn clean(&self) -> &Raster {
        &self.masked.original
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticIdentityDataset {
    pub config: DatasetConfig,
    /// `num_identities × d` unit rows.
    pub anchors: Matrix,
    /// `r² × d`.
    pub render_map: Matrix,
    /// Pixel = (raw − offset) / span.
    pub affine_offset: f64,
    pub affine_span: f64,
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn draw_anchors(
    rng: &mut ChaCha8Rng,
    count: usize,
    dim: usize,
) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while anchors.len() < count {
        attempts += 1;
        if attempts > 1000 * count {
            return Err(HarnessError::Config(format!(
                "cannot place {count} anchors in {dim} dims with cosine < {MAX_ANCHOR_COSINE}"
            )));
        }
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = norm64(&v);
        if n == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        // anchors are stored in f32, so test the rounded vector
        let v: Vec<f64> = v.iter().map(|&x| x as f32 as f64).collect();
        if anchors
            .iter()
            .all(|a| dot64(a, &v) / (norm64(a) * norm64(&v)) < MAX_ANCHOR_COSINE)
        {
            anchors.push(v);
        }
    }
    Ok(anchors)
}

/// 6:1 train/eval split size for `n` samples.
pub fn split_sizes(n: usize) -> (usize, usize) {
    let eval = (n as f64 / 7.0).round() as usize;
    (n - eval, eval)
}

/// Builds anchors, renders every sample, pastes masks and splits 6:1.
pub fn generate_dataset(config: &DatasetConfig) -> Result<SyntheticIdentityDataset, HarnessError> {
    config.validate()?;
    let (d, r) = (config.embed_dim, config.raster_side);
    let pixels = r * r;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let anchors = draw_anchors(&mut rng, config.num_identities, d)?;
    let render: Vec<f64> = (0..pixels * d)
        .map(|_| (gaussian(&mut rng) / (d as f64).sqrt()) as f32 as f64)
        .collect();

    let n = config.num_identities * config.samples_per_identity;
    let mut labels = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n);
    for (id, anchor) in anchors.iter().enumerate() {
        for _ in 0..config.samples_per_identity {
            let z: Vec<f64> = anchor
                .iter()
                .map(|&a| a + config.noise_sigma * gaussian(&mut rng))
                .collect();
            let img: Vec<f64> = (0..pixels)
                .map(|p| dot64(&render[p * d..(p + 1) * d], &z))
                .collect();
            labels.push(id as u32);
            raw.push(img);
        }
    }
    let lo = raw.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = raw
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);

    let mut samples = Vec::with_capacity(n);
    for (i, (img, label)) in raw.iter().zip(labels).enumerate() {
        let px: Vec<f32> = img
            .iter()
            .map(|&v| (((v - lo) / span) as f32).clamp(0.0, 1.0))
            .collect();
        let clean = Raster::new(r, r, 1, px)?;
        let category = config
            .mask_category
            .unwrap_or_else(|| MaskCategory::ALL[rng.random_range(0..MaskCategory::ALL.len())]);
        let spec = MaskSpec {
            category,
            target_coverage: config.mask_coverage,
            flip: config.mask_flip && rng.random_bool(0.5),
            shift: config.mask_shift,
            seed: config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i as u64,
        };
        let masked = synthesize_mask(&spec, &clean)?;
        samples.push(Sample { label, masked });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (_, n_eval) = split_sizes(n);
    let mut eval = order[..n_eval].to_vec();
    let mut train = order[n_eval..].to_vec();
    eval.sort_unstable();
    train.sort_unstable();

    let flat_anchors: Vec<f32> = anchors.iter().flatten().map(|&v| v as f32).collect();
    let dataset = SyntheticIdentityDataset {
        config: config.clone(),
        anchors: Matrix::new(config.num_identities, d, flat_anchors)?,
        render_map: Matrix::new(pixels, d, render.iter().map(|&v| v as f32).collect())?,
        affine_offset: lo,
        affine_span: span,
        samples,
        train,
        eval,
    };
    for id in 0..config.num_identities as u32 {
        if !dataset
            .train
            .iter()
            .any(|&i| dataset.samples[i].label == id)
        {
            return Err(HarnessError::Config(format!(
                "identity {id} has no training sample; increase samples_per_identity"
            )));
        }
    }
    Ok(dataset)
}

/// Solves `(AᵀA) X = Aᵀ` by Cholesky, giving the `d × p` pseudo-inverse.
fn pseudo_inverse(a: &Mat64) -> Result<Mat64, HarnessError> {
    let (p, d) = (a.rows, a.cols);
    let mut gram = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            gram[i * d + j] = (0..p).map(|k| a.data[k * d + i] * a.data[k * d + j]).sum();
        }
    }
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = gram[i * d + j] - (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return Err(HarnessError::Config("render map is rank deficient".into()));
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    let mut out = Mat64::zeros(d, p);
    for col in 0..p {
        // forward then back substitution against column `col` of Aᵀ
        let mut y = vec![0.0; d];
        for i in 0..d {
            let s: f64 = a.data[col * d + i] - (0..i).map(|k| l[i * d + k] * y[k]).sum::<f64>();
            y[i] = s / l[i * d + i];
        }
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            let s: f64 = y[i] - (i + 1..d).map(|k| l[k * d + i] * x[k]).sum::<f64>();
            x[i] = s / l[i * d + i];
        }
        for i in 0..d {
            out.data[i * p + col] = x[i];
        }
    }
    Ok(out)
}

/// Fixed analytic teacher: affine inverse, pseudo-inverse, unit norm.
#[derive(Debug, Clone)]
pub struct Teacher {
    pinv: Mat64,
    offset: f64,
    span: f64,
    anchors: Mat64,
    /// Teacher logits are this times the cosine to each identity anchor.
    pub logit_scale: f64,
}

pub const DEFAULT_TEACHER_LOGIT_SCALE: f64 = 1.0;

impl Teacher {
    pub fn new(dataset: &SyntheticIdentityDataset, logit_scale: f64) -> Result<Self, HarnessError> {
        Ok(Self {
            pinv: pseudo_inverse(&dataset.render_map.to_f64())?,
            offset: dataset.affine_offset,
            span: dataset.affine_span,
            anchors: dataset.anchors.to_f64(),
            logit_scale,
        })
    }

    pub fn embed64(&self, raster: &Raster) -> Vec<f64> {
        let raw: Vec<f64> = raster
            .pixels()
            .iter()
            .map(|&v| self.offset + v as f64 * self.span)
            .collect();
        let mut z: Vec<f64> = (0..self.pinv.rows)
            .map(|i| dot64(self.pinv.row(i), &raw))
            .collect();
        let n = norm64(&z);
        if n > 0.0 {
            z.iter_mut().for_each(|v| *v /= n);
        }
        z
    }

    pub fn logits64(&self, feature: &[f64]) -> Vec<f64> {
        (0..self.anchors.rows)
            .map(|c| self.logit_scale * dot64(self.anchors.row(c), feature))
            .collect()
    }
}

pub fn teacher_embed(
    clean: &Raster,
    dataset: &SyntheticIdentityDataset,
) -> Result<Vector, HarnessError> {
    let teacher = Teacher::new(dataset, DEFAULT_TEACHER_LOGIT_SCALE)?;
    Ok(Vector::from_f64(&teacher.embed64(clean))?)
}

/// Exact per-identity means of `features` grouped by `labels`.
pub fn compute_centroids(features: &Mat64, labels: &[u32]) -> Result<CentroidTable, HarnessError> {
    if features.rows != labels.len() {
        return Err(HarnessError::Config(format!(
            "{} features vs {} labels",
            features.rows,
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(HarnessError::Config("no features for centroids".into()));
    }
    let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        let entry = sums
            .entry(l)
            .or_insert_with(|| (vec![0.0; features.cols], 0));
        for (acc, v) in entry.0.iter_mut().zip(features.row(i)) {
            *acc += v;
        }
        entry.1 += 1;
    }
    let mut centroids = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (l, (sum, count)) in sums {
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        centroids.insert(l, Vector::from_f64(&mean)?);
        counts.insert(l, count);
    }
    Ok(CentroidTable::from_parts(centroids, counts))
}

/// Centroids over the training split, requiring every identity.
pub fn training_centroids(
    features: &Mat64,
    labels: &[u32],
    num_identities: usize,
) -> Result<CentroidTable, HarnessError> {
    let table = compute_centroids(features, labels)?;
    for id in 0..num_identities as u32 {
        if table.get(id).is_none() {
            return Err(HarnessError::EmptyIdentity(id));
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, sigma: f64) -> DatasetConfig {
        DatasetConfig {
            num_identities: 6,
            samples_per_identity: 7,
            noise_sigma: sigma,
            seed,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn noiseless_samples_of_one_identity_match() {
        let ds = generate_dataset(&small(1, 0.0)).unwrap();
        assert_eq!(ds.samples[0].clean(), ds.samples[1].clean());
        assert_ne!(ds.samples[0].clean(), ds.samples[7].clean());
    }

    #[test]
    fn split_is_six_to_one() {
        assert_eq!(split_sizes(700), (600, 100));
        let ds = generate_dataset(&small(2, 0.05)).unwrap();
        assert_eq!(ds.train.len() + ds.eval.len(), 42);
        assert_eq!(ds.eval.len(), 6);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&small(3, 0.05)).unwrap();
        let b = generate_dataset(&small(3, 0.05)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_dataset(&small(4, 0.05)).unwrap());
    }

    #[test]
    fn anchors_are_spread_unit_vectors() {
        let ds = generate_dataset(&DatasetConfig::default()).unwrap();
        let a = ds.anchors.to_f64();
        for i in 0..a.rows {
            assert!((norm64(a.row(i)) - 1.0).abs() < 1e-6);
            for j in 0..i {
                assert!(dot64(a.row(i), a.row(j)) < MAX_ANCHOR_COSINE);
            }
        }
        assert!(ds.samples.iter().all(|s| s
            .clean()
            .pixels()
            .iter()
            .all(|p| (0.0..=1.0).contains(p))));
    }

    #[test]
    fn teacher_recovers_noiseless_anchor() {
        let ds = generate_dataset(&small(5, 0.0)).unwrap();
        for s in ds.samples.iter().step_by(5) {
            let t = teacher_embed(s.clean(), &ds).unwrap();
            let anchor = ds.anchors.row(s.label as usize);
            for (x, y) in t.as_slice().iter().zip(anchor) {
                assert!((x - y).abs() < 1e-5, "{x} vs {y}");
            }
            assert!((crate::math::l2_norm(&t) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn centroid_examples() {
        let f = Mat64::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let t = compute_centroids(&f, &[3, 3]).unwrap();
        assert_eq!(t.get(3).unwrap().as_slice(), &[0.5, 0.5]);
        assert_eq!(t.count(3), 2);
        let single = compute_centroids(&f, &[0, 1]).unwrap();
        assert_eq!(single.get(1).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(
            training_centroids(&f, &[0, 2], 3).unwrap_err(),
            HarnessError::EmptyIdentity(1)
        );
        assert!(compute_centroids(&f, &[0]).is_err());
    }

    #[test]
    fn centroids_match_brute_force_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = Mat64::from_vec(
            20,
            3,
            (0..60).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let labels: Vec<u32> = (0..20).map(|_| rng.random_range(0..4)).collect();
        let t = compute_centroids(&f, &labels).unwrap();
        for id in 0..4u32 {
            let rows: Vec<usize> = (0..20).filter(|&i| labels[i] == id).collect();
            if rows.is_empty() {
                continue;
            }
            for k in 0..3 {
                let mean = rows.iter().map(|&i| f.row(i)[k]).sum::<f64>() / rows.len() as f64;
                assert_eq!(t.get(id).unwrap().as_slice()[k], mean as f32);
            }
        }
    }
}

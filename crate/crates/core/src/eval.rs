//! Verification and identification metrics over embeddings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::math::{dot64, norm64, Mat64, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("empty pair set")]
    EmptyPairs,
    #[error("pair ({0}, {0}) compares a sample with itself")]
    SelfPair(usize),
    #[error("pair set unbalanced: {positives} positive vs {negatives} negative")]
    Unbalanced { positives: usize, negatives: usize },
    #[error("pair index {0} out of range for {1} samples")]
    IndexRange(usize, usize),
    #[error("probe identity {0} has no gallery sample")]
    MissingIdentity(u32),
    #[error("empty gallery or probe set")]
    EmptySet,
}

pub fn cosine_similarity(a: &Vector, b: &Vector) -> Result<f64, EvalError> {
    if a.dim() != b.dim() {
        return Err(EvalError::DimMismatch(a.dim(), b.dim()));
    }
    cosine64(&a.to_f64(), &b.to_f64())
}

pub fn cosine64(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    let (na, nb) = (norm64(a), norm64(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    Ok((dot64(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Same/different-identity pairs of sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pairs: Vec<(usize, usize, bool)>,
}

impl PairSet {
    pub fn new(pairs: Vec<(usize, usize, bool)>) -> Result<Self, EvalError> {
        if pairs.is_empty() {
            return Err(EvalError::EmptyPairs);
        }
        if let Some(&(a, _, _)) = pairs.iter().find(|(a, b, _)| a == b) {
            return Err(EvalError::SelfPair(a));
        }
        let positives = pairs.iter().filter(|p| p.2).count();
        let negatives = pairs.len() - positives;
        if positives.abs_diff(negatives) > 1 {
            return Err(EvalError::Unbalanced {
                positives,
                negatives,
            });
        }
        Ok(Self { pairs })
    }

    /// Balanced pairs among `indices`, at most `max_pairs` in total.
    /// Positives are sampled from all same-label pairs, negatives from
    /// all different-label pairs; both sides get the same count.
    pub fn sample(
        indices: &[usize],
        labels: &[u32],
        max_pairs: usize,
        seed: u64,
    ) -> Result<Self, EvalError> {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (a, &ia) in indices.iter().enumerate() {
            for &ib in &indices[a + 1..] {
                let (la, lb) = (
                    *labels
                        .get(ia)
                        .ok_or(EvalError::IndexRange(ia, labels.len()))?,
                    *labels
                        .get(ib)
                        .ok_or(EvalError::IndexRange(ib, labels.len()))?,
                );
                if la == lb {
                    pos.push((ia, ib, true));
                } else {
                    neg.push((ia, ib, false));
                }
            }
        }
        let per_side = pos.len().min(neg.len()).min(max_pairs / 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let mut pairs: Vec<_> = pos[..per_side]
            .iter()
            .chain(&neg[..per_side])
            .copied()
            .collect();
        pairs.sort_unstable();
        Self::new(pairs)
    }

    pub fn pairs(&self) -> &[(usize, usize, bool)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.2).collect()
    }

    /// Cosine similarity of each pair under `embeddings` (one row per sample).
    pub fn similarities(&self, embeddings: &Mat64) -> Result<Vec<f64>, EvalError> {
        self.pairs
            .iter()
            .map(|&(a, b, _)| {
                if a >= embeddings.rows || b >= embeddings.rows {
                    return Err(EvalError::IndexRange(a.max(b), embeddings.rows));
                }
                cosine64(embeddings.row(a), embeddings.row(b))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub accuracy: f64,
    /// Pairs with similarity strictly above this are called "same".
    pub threshold: f64,
    /// `(fpr, tpr)` sorted by false-positive rate.
    pub roc_points: Vec<(f64, f64)>,
}

fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out = Vec::with_capacity(sorted.len() + 1);
    out.push(-1.0);
    out.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out.push(1.0);
    out
}

/// Best-accuracy threshold sweep over midpoints of the sorted distinct
/// similarities plus ±1. Ties go to the smallest threshold.
pub fn verify_scores(scores: &[f64], same: &[bool]) -> Result<VerificationReport, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyPairs);
    }
    if scores.len() != same.len() {
        return Err(EvalError::DimMismatch(scores.len(), same.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let positives = same.iter().filter(|&&s| s).count();
    let negatives = same.len() - positives;

    // start with every pair above the lowest threshold
    let mut cursor = 0;
    let (mut tp, mut fp) = (positives, negatives);
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut roc = Vec::new();
    for thr in candidate_thresholds(scores) {
        while cursor < order.len() && scores[order[cursor]] <= thr {
            if same[order[cursor]] {
                tp -= 1;
            } else {
                fp -= 1;
            }
            cursor += 1;
        }
        let correct = tp + (negatives - fp);
        let acc = correct as f64 / scores.len() as f64;
        if acc > best.0 {
            best = (acc, thr);
        }
        let rate = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        roc.push((rate(fp, negatives), rate(tp, positives)));
    }
    roc.reverse();
    Ok(VerificationReport {
        accuracy: best.0,
        threshold: best.1,
        roc_points: roc,
    })
}

/// Accuracy at a fixed threshold, for held-out threshold selection.
pub fn accuracy_at(scores: &[f64], same: &[bool], threshold: f64) -> f64 {
    let correct = scores
        .iter()
        .zip(same)
        .filter(|(&s, &y)| (s > threshold) == y)
        .count();
    correct as f64 / scores.len().max(1) as f64
}

pub fn verify_embeddings(
    embeddings: &Mat64,
    pairs: &PairSet,
) -> Result<VerificationReport, EvalError> {
    let scores = pairs.similarities(embeddings)?;
    verify_scores(&scores, &pairs.labels())
}

/// Anything that maps a batch of inputs (one row each) to embeddings.
pub trait Embedder {
    fn embed(&self, inputs: &Mat64) -> Mat64;
}

pub fn verify<E: Embedder>(
    model: &E,
    inputs: &Mat64,
    pairs: &PairSet,
) -> Result<VerificationReport, EvalError> {
    verify_embeddings(&model.embed(inputs), pairs)
}

pub fn rank1_identify<E: Embedder>(
    model: &E,
    gallery: &Mat64,
    gallery_labels: &[u32],
    probes: &Mat64,
    probe_labels: &[u32],
) -> Result<f64, EvalError> {
    rank1_embeddings(
        &model.embed(gallery),
        gallery_labels,
        &model.embed(probes),
        probe_labels,
    )
}

/// Fraction of probes whose most similar gallery row shares their label.
/// Ties go to the lowest gallery index.
pub fn rank1_embeddings(
    gallery: &Mat64,
    gallery_labels: &[u32],
    probes: &Mat64,
    probe_labels: &[u32],
) -> Result<f64, EvalError> {
    if gallery.rows == 0 || probes.rows == 0 {
        return Err(EvalError::EmptySet);
    }
    if gallery.cols != probes.cols {
        return Err(EvalError::DimMismatch(gallery.cols, probes.cols));
    }
    for &l in probe_labels {
        if !gallery_labels.contains(&l) {
            return Err(EvalError::MissingIdentity(l));
        }
    }
    let mut hits = 0;
    for p in 0..probes.rows {
        let mut best = (f64::NEG_INFINITY, 0);
        for g in 0..gallery.rows {
            let s = cosine64(probes.row(p), gallery.row(g))?;
            if s > best.0 {
                best = (s, g);
            }
        }
        if gallery_labels[best.1] == probe_labels[p] {
            hits += 1;
        }
    }
    Ok(hits as f64 / probes.rows as f64)
}

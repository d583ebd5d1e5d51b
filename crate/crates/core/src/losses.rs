//! Relational distillation losses with analytic gradients.
//!
//! Every loss compares a teacher batch against a student batch and returns
//! its value together with the gradient with respect to the student side.
//! The public functions take storage types ([`FeatureBatch`], [`Matrix`]);
//! the [`dense`] submodule holds the 64-bit kernels they delegate to, which
//! is also what the training loop and the gradient oracle call directly.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::math::{Mat64, MathError, Matrix, Vector};
use crate::tuples::{TupleError, TuplePolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Tuple(#[from] TupleError),
    #[error("{0} batch is degenerate: all rows coincide (mean pair distance {1:e})")]
    DegenerateBatch(Side, f64),
    #[error("triplet has a coincident vertex pair")]
    DegenerateTriplet,
    #[error("no centroid for identity {0}")]
    MissingCentroid(u32),
    #[error("labels length {labels} does not match {rows} rows")]
    LabelCount { labels: usize, rows: usize },
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Teacher,
    Student,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Teacher => "teacher",
            Side::Student => "student",
        })
    }
}

/// Rows below this pairwise scale count as coincident.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Embeddings for a batch, one row per sample, with identity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    features: Matrix,
    labels: Vec<u32>,
}

impl FeatureBatch {
    pub fn new(features: Matrix, labels: Vec<u32>) -> Result<Self, LossError> {
        if labels.len() != features.rows() {
            return Err(LossError::LabelCount {
                labels: labels.len(),
                rows: features.rows(),
            });
        }
        Ok(Self { features, labels })
    }

    /// Batch with every label set to zero.
    pub fn unlabeled(features: Matrix) -> Self {
        let labels = vec![0; features.rows()];
        Self { features, labels }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_i: f64,
    pub lambda_p: f64,
    pub lambda_t: f64,
    pub huber_delta: f64,
    /// Softmax temperature for the cross-entropy term.
    pub ce_temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_i: 1.0,
            lambda_p: 1.0,
            lambda_t: 2.0,
            huber_delta: 1.0,
            ce_temperature: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [
            ("lambda_i", self.lambda_i),
            ("lambda_p", self.lambda_p),
            ("lambda_t", self.lambda_t),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(LossError::InvalidWeights(format!("{name}={v}")));
            }
        }
        if !self.huber_delta.is_finite() || self.huber_delta <= 0.0 {
            return Err(MathError::InvalidDelta(self.huber_delta).into());
        }
        if !self.ce_temperature.is_finite() || self.ce_temperature <= 0.0 {
            return Err(LossError::InvalidWeights(format!(
                "ce_temperature={}",
                self.ce_temperature
            )));
        }
        Ok(())
    }
}

/// Per-identity mean teacher features.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable {
    centroids: BTreeMap<u32, Vector>,
    counts: BTreeMap<u32, usize>,
}

impl CentroidTable {
    pub fn from_parts(centroids: BTreeMap<u32, Vector>, counts: BTreeMap<u32, usize>) -> Self {
        Self { centroids, counts }
    }

    pub fn get(&self, label: u32) -> Option<&Vector> {
        self.centroids.get(&label)
    }

    pub fn count(&self, label: u32) -> usize {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Vector)> {
        self.centroids.iter().map(|(&k, v)| (k, v))
    }

    /// One centroid row per label.
    pub fn rows_for(&self, labels: &[u32]) -> Result<Mat64, LossError> {
        let dim =
            self.centroids
                .values()
                .next()
                .map(Vector::dim)
                .ok_or(LossError::MissingCentroid(
                    labels.first().copied().unwrap_or(0),
                ))?;
        let mut out = Mat64::zeros(labels.len(), dim);
        for (i, &label) in labels.iter().enumerate() {
            let c = self.get(label).ok_or(LossError::MissingCentroid(label))?;
            if c.dim() != dim {
                return Err(MathError::DimMismatch(dim, c.dim()).into());
            }
            for (dst, &src) in out.row_mut(i).iter_mut().zip(c.as_slice()) {
                *dst = src as f64;
            }
        }
        Ok(out)
    }
}

/// How component sums are reduced before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Plain sums over tuples.
    #[default]
    Sum,
    /// Each component divided by its number of contributing tuples.
    PerTuple,
    /// Like `PerTuple`, but the instance term is averaged over every
    /// feature coordinate rather than over rows.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub ce: f64,
    pub instance: f64,
    pub pair: f64,
    pub triplet: f64,
    /// Gradient of the relational terms with respect to student features.
    pub grad_student: Matrix,
    /// Gradient of the cross-entropy term with respect to student logits.
    pub grad_logits: Matrix,
    pub skipped_triplets: usize,
}

fn to_pair(out: dense::TermOutput) -> Result<(f64, Matrix), LossError> {
    let grad = out.grad.expect("gradient requested").to_matrix()?;
    Ok((out.value, grad))
}

fn check_same_shape(a: &FeatureBatch, b: &FeatureBatch) -> Result<(), LossError> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(MathError::ShapeMismatch(a.len(), a.dim(), b.len(), b.dim()).into());
    }
    Ok(())
}

/// Cross-entropy from teacher to student class distributions at temperature 1.
pub fn ce_distill(
    teacher_logits: &Matrix,
    student_logits: &Matrix,
) -> Result<(f64, Matrix), LossError> {
    let out = dense::ce_distill(
        &teacher_logits.to_f64(),
        &student_logits.to_f64(),
        1.0,
        true,
    )?;
    to_pair(out)
}

pub fn instance_loss(
    teacher: &FeatureBatch,
    student: &FeatureBatch,
) -> Result<(f64, Matrix), LossError> {
    check_same_shape(teacher, student)?;
    to_pair(dense::instance_loss(
        &teacher.features.to_f64(),
        &student.features.to_f64(),
        true,
    )?)
}

pub fn soft_instance_loss(
    teacher: &FeatureBatch,
    student: &FeatureBatch,
    centroids: &CentroidTable,
) -> Result<(f64, Matrix), LossError> {
    check_same_shape(teacher, student)?;
    // both sides are centred on the same identity; labels must agree
    for (&lt, &ls) in teacher.labels.iter().zip(&student.labels) {
        if centroids.get(lt).is_none() {
            return Err(LossError::MissingCentroid(lt));
        }
        if centroids.get(ls).is_none() {
            return Err(LossError::MissingCentroid(ls));
        }
    }
    let centers = centroids.rows_for(&teacher.labels)?;
    to_pair(dense::soft_instance_loss(
        &teacher.features.to_f64(),
        &student.features.to_f64(),
        &centers,
        true,
    )?)
}

/// Normalized pairwise distances over all unordered pairs `i < j`, in
/// lexicographic pair order, with the normalizer `mu`.
pub fn pair_potential(batch: &FeatureBatch) -> Result<(Vec<f64>, f64), LossError> {
    let pairs = crate::tuples::enumerate_pairs(batch.len(), &TuplePolicy::all())?;
    dense::pair_potential(&batch.features.to_f64(), &pairs).map_err(|e| e.for_side(Side::Teacher))
}

pub fn pair_loss(
    teacher: &FeatureBatch,
    student: &FeatureBatch,
    delta: f64,
) -> Result<(f64, Matrix), LossError> {
    check_same_shape(teacher, student)?;
    let pairs = crate::tuples::enumerate_pairs(teacher.len(), &TuplePolicy::all())?;
    to_pair(dense::pair_loss(
        &teacher.features.to_f64(),
        &student.features.to_f64(),
        delta,
        &pairs,
        true,
    )?)
}

/// Cosine of the angle at `vj` formed by `vi` and `vk`.
pub fn triplet_potential(vi: &Vector, vj: &Vector, vk: &Vector) -> Result<f64, LossError> {
    if vi.dim() != vj.dim() {
        return Err(MathError::DimMismatch(vi.dim(), vj.dim()).into());
    }
    if vk.dim() != vj.dim() {
        return Err(MathError::DimMismatch(vk.dim(), vj.dim()).into());
    }
    dense::triplet_potential(&vi.to_f64(), &vj.to_f64(), &vk.to_f64())
        .ok_or(LossError::DegenerateTriplet)
}

pub fn triplet_loss(
    teacher: &FeatureBatch,
    student: &FeatureBatch,
    delta: f64,
    policy: &TuplePolicy,
) -> Result<(f64, Matrix), LossError> {
    check_same_shape(teacher, student)?;
    let triplets = crate::tuples::enumerate_triplets(teacher.len(), policy)?;
    to_pair(dense::triplet_loss(
        &teacher.features.to_f64(),
        &student.features.to_f64(),
        delta,
        &triplets,
        true,
    )?)
}

/// Weighted sum of all components with plain tuple sums. The instance term
/// is the centroid-centred form when `centroids` is given.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    teacher: &FeatureBatch,
    teacher_logits: &Matrix,
    student: &FeatureBatch,
    student_logits: &Matrix,
    weights: &LossWeights,
    centroids: Option<&CentroidTable>,
    policy: &TuplePolicy,
) -> Result<LossReport, LossError> {
    total_loss_with(
        teacher,
        teacher_logits,
        student,
        student_logits,
        weights,
        centroids,
        policy,
        Reduction::Sum,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn total_loss_with(
    teacher: &FeatureBatch,
    teacher_logits: &Matrix,
    student: &FeatureBatch,
    student_logits: &Matrix,
    weights: &LossWeights,
    centroids: Option<&CentroidTable>,
    policy: &TuplePolicy,
    reduction: Reduction,
) -> Result<LossReport, LossError> {
    check_same_shape(teacher, student)?;
    let centers = match centroids {
        Some(table) => Some(table.rows_for(student.labels())?),
        None => None,
    };
    let r = dense::total_loss(
        &dense::LossInputs {
            teacher: &teacher.features.to_f64(),
            teacher_logits: &teacher_logits.to_f64(),
            student: &student.features.to_f64(),
            student_logits: &student_logits.to_f64(),
            centers: centers.as_ref(),
        },
        weights,
        policy,
        reduction,
    )?;
    Ok(LossReport {
        total: r.total,
        ce: r.ce,
        instance: r.instance,
        pair: r.pair,
        triplet: r.triplet,
        grad_student: r.grad_features.to_matrix()?,
        grad_logits: r.grad_logits.to_matrix()?,
        skipped_triplets: r.skipped_triplets,
    })
}

/// 64-bit loss kernels.
pub mod dense {
    use rayon::prelude::*;

    use super::{LossError, LossWeights, Reduction, Side, DEGENERATE_EPS};
    use crate::math::{dist64, dot64, huber_grad_b, huber_unchecked, norm64, Mat64, MathError};
    use crate::tuples::{enumerate_pairs, enumerate_triplets, TuplePolicy};

    const TRIPLET_CHUNK: usize = 4096;

    #[derive(Debug, Clone)]
    pub struct TermOutput {
        pub value: f64,
        pub grad: Option<Mat64>,
        /// Tuples that contributed to the value.
        pub terms: usize,
        pub skipped: usize,
    }

    impl LossError {
        pub(crate) fn for_side(self, side: Side) -> LossError {
            match self {
                LossError::DegenerateBatch(_, mu) => LossError::DegenerateBatch(side, mu),
                other => other,
            }
        }
    }

    fn same_shape(a: &Mat64, b: &Mat64) -> Result<(), LossError> {
        a.same_shape(b).map_err(LossError::from)
    }

    fn check_delta(delta: f64) -> Result<(), LossError> {
        if !delta.is_finite() || delta <= 0.0 {
            return Err(MathError::InvalidDelta(delta).into());
        }
        Ok(())
    }

    fn log_softmax_row(row: &[f64], temperature: f64) -> Vec<f64> {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
        let lse = row
            .iter()
            .map(|&z| (z / temperature - max).exp())
            .sum::<f64>()
            .ln()
            + max;
        row.iter().map(|&z| z / temperature - lse).collect()
    }

    /// Mean over rows of `-Σ_c p_t(c) log p_s(c)`.
    pub fn ce_distill(
        teacher_logits: &Mat64,
        student_logits: &Mat64,
        temperature: f64,
        want_grad: bool,
    ) -> Result<TermOutput, LossError> {
        same_shape(teacher_logits, student_logits)?;
        let n = teacher_logits.rows;
        let mut value = 0.0;
        let mut grad = want_grad.then(|| Mat64::zeros(n, teacher_logits.cols));
        for i in 0..n {
            let log_pt = log_softmax_row(teacher_logits.row(i), temperature);
            let log_ps = log_softmax_row(student_logits.row(i), temperature);
            value -= log_pt
                .iter()
                .zip(&log_ps)
                .map(|(lt, ls)| lt.exp() * ls)
                .sum::<f64>();
            if let Some(g) = grad.as_mut() {
                for (c, out) in g.row_mut(i).iter_mut().enumerate() {
                    *out = (log_ps[c].exp() - log_pt[c].exp()) / (temperature * n as f64);
                }
            }
        }
        Ok(TermOutput {
            value: value / n as f64,
            grad,
            terms: n,
            skipped: 0,
        })
    }

    fn l1_residuals<F>(n: usize, d: usize, residual: F, want_grad: bool) -> TermOutput
    where
        F: Fn(usize, usize) -> f64,
    {
        let mut value = 0.0;
        let mut grad = want_grad.then(|| Mat64::zeros(n, d));
        for i in 0..n {
            for k in 0..d {
                let r = residual(i, k);
                value += r.abs();
                if let Some(g) = grad.as_mut() {
                    // zero at exact ties
                    g.data[i * d + k] = if r > 0.0 {
                        1.0
                    } else if r < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
        }
        TermOutput {
            value,
            grad,
            terms: n,
            skipped: 0,
        }
    }

    /// `Σ_i ‖t_i − s_i‖_1`; residuals are taken as `s − t`.
    pub fn instance_loss(
        teacher: &Mat64,
        student: &Mat64,
        want_grad: bool,
    ) -> Result<TermOutput, LossError> {
        same_shape(teacher, student)?;
        let d = teacher.cols;
        Ok(l1_residuals(
            teacher.rows,
            d,
            |i, k| student.data[i * d + k] - teacher.data[i * d + k],
            want_grad,
        ))
    }

    /// `Σ_i ‖(t_i − c_i) − (s_i − c_i)‖_1` with `c_i` the row's identity centroid.
    pub fn soft_instance_loss(
        teacher: &Mat64,
        student: &Mat64,
        centers: &Mat64,
        want_grad: bool,
    ) -> Result<TermOutput, LossError> {
        same_shape(teacher, student)?;
        same_shape(teacher, centers)?;
        let d = teacher.cols;
        Ok(l1_residuals(
            teacher.rows,
            d,
            |i, k| {
                let c = centers.data[i * d + k];
                (student.data[i * d + k] - c) - (teacher.data[i * d + k] - c)
            },
            want_grad,
        ))
    }

    /// Centroid-centred residuals `s_i − c_i` and `t_i − c_i`, for logging.
    pub fn centered_residuals(rows: &Mat64, centers: &Mat64) -> Result<Mat64, LossError> {
        same_shape(rows, centers)?;
        let mut out = rows.clone();
        out.add_scaled(centers, -1.0);
        Ok(out)
    }

    /// Distances over `pairs` and their mean.
    pub fn pair_distances(
        m: &Mat64,
        pairs: &[(usize, usize)],
    ) -> Result<(Vec<f64>, f64), LossError> {
        let dist: Vec<f64> = pairs
            .iter()
            .map(|&(i, j)| dist64(m.row(i), m.row(j)))
            .collect();
        let mu = dist.iter().sum::<f64>() / dist.len().max(1) as f64;
        if !(mu >= DEGENERATE_EPS) {
            return Err(LossError::DegenerateBatch(Side::Teacher, mu));
        }
        Ok((dist, mu))
    }

    pub fn pair_potential(
        m: &Mat64,
        pairs: &[(usize, usize)],
    ) -> Result<(Vec<f64>, f64), LossError> {
        let (mut dist, mu) = pair_distances(m, pairs)?;
        dist.iter_mut().for_each(|v| *v /= mu);
        Ok((dist, mu))
    }

    /// Huber mismatch of self-normalized pair distances. The student
    /// normalizer depends on every student row, so each pair's residual
    /// feeds back into all rows through `mu`.
    pub fn pair_loss(
        teacher: &Mat64,
        student: &Mat64,
        delta: f64,
        pairs: &[(usize, usize)],
        want_grad: bool,
    ) -> Result<TermOutput, LossError> {
        same_shape(teacher, student)?;
        check_delta(delta)?;
        let (psi_t, _) = pair_potential(teacher, pairs).map_err(|e| e.for_side(Side::Teacher))?;
        let (dist_s, mu_s) =
            pair_distances(student, pairs).map_err(|e| e.for_side(Side::Student))?;
        let mut value = 0.0;
        let mut g_psi = Vec::with_capacity(pairs.len());
        for (pt, ds) in psi_t.iter().zip(&dist_s) {
            let ps = ds / mu_s;
            value += huber_unchecked(*pt, ps, delta);
            g_psi.push(huber_grad_b(*pt, ps, delta));
        }
        let grad = want_grad.then(|| {
            let count = pairs.len() as f64;
            // dL/dD_kl = g_kl/mu - (Σ g ψ)/(mu * P)
            let coupling: f64 = g_psi
                .iter()
                .zip(&dist_s)
                .map(|(g, ds)| g * ds / mu_s)
                .sum::<f64>()
                / (mu_s * count);
            let mut grad = Mat64::zeros(student.rows, student.cols);
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let dd = g_psi[p] / mu_s - coupling;
                let dist = dist_s[p];
                if dist < DEGENERATE_EPS {
                    continue;
                }
                let scale = dd / dist;
                for k in 0..student.cols {
                    let diff =
                        student.data[i * student.cols + k] - student.data[j * student.cols + k];
                    grad.data[i * student.cols + k] += scale * diff;
                    grad.data[j * student.cols + k] -= scale * diff;
                }
            }
            grad
        });
        Ok(TermOutput {
            value,
            grad,
            terms: pairs.len(),
            skipped: 0,
        })
    }

    pub fn triplet_potential(vi: &[f64], vj: &[f64], vk: &[f64]) -> Option<f64> {
        let u: Vec<f64> = vi.iter().zip(vj).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = vk.iter().zip(vj).map(|(a, b)| a - b).collect();
        let (nu, nv) = (norm64(&u), norm64(&v));
        if nu < DEGENERATE_EPS || nv < DEGENERATE_EPS {
            return None;
        }
        Some((dot64(&u, &v) / (nu * nv)).clamp(-1.0, 1.0))
    }

    struct AngleParts {
        cos: f64,
        u: Vec<f64>,
        v: Vec<f64>,
        nu: f64,
        nv: f64,
    }

    fn angle_parts(m: &Mat64, i: usize, j: usize, k: usize) -> Option<AngleParts> {
        let (ri, rj, rk) = (m.row(i), m.row(j), m.row(k));
        let u: Vec<f64> = ri.iter().zip(rj).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = rk.iter().zip(rj).map(|(a, b)| a - b).collect();
        let (nu, nv) = (norm64(&u), norm64(&v));
        if nu < DEGENERATE_EPS || nv < DEGENERATE_EPS {
            return None;
        }
        let cos = dot64(&u, &v) / (nu * nv);
        Some(AngleParts { cos, u, v, nu, nv })
    }

    /// Huber mismatch of vertex-angle cosines. Triples degenerate on either
    /// side are skipped on both.
    pub fn triplet_loss(
        teacher: &Mat64,
        student: &Mat64,
        delta: f64,
        triplets: &[(usize, usize, usize)],
        want_grad: bool,
    ) -> Result<TermOutput, LossError> {
        same_shape(teacher, student)?;
        check_delta(delta)?;
        let (rows, cols) = (student.rows, student.cols);
        // fixed chunking keeps the reduction order independent of thread count
        let partials: Vec<(f64, usize, usize, Option<Mat64>)> = triplets
            .par_chunks(TRIPLET_CHUNK)
            .map(|chunk| {
                let mut value = 0.0;
                let mut used = 0;
                let mut skipped = 0;
                let mut grad = want_grad.then(|| Mat64::zeros(rows, cols));
                for &(i, j, k) in chunk {
                    let (Some(t), Some(s)) =
                        (angle_parts(teacher, i, j, k), angle_parts(student, i, j, k))
                    else {
                        skipped += 1;
                        continue;
                    };
                    used += 1;
                    value += huber_unchecked(t.cos, s.cos, delta);
                    if let Some(g) = grad.as_mut() {
                        let gc = huber_grad_b(t.cos, s.cos, delta);
                        if gc == 0.0 {
                            continue;
                        }
                        let inv = 1.0 / (s.nu * s.nv);
                        let (cu, cv) = (s.cos / (s.nu * s.nu), s.cos / (s.nv * s.nv));
                        for c in 0..cols {
                            let du = gc * (s.v[c] * inv - cu * s.u[c]);
                            let dv = gc * (s.u[c] * inv - cv * s.v[c]);
                            g.data[i * cols + c] += du;
                            g.data[k * cols + c] += dv;
                            g.data[j * cols + c] -= du + dv;
                        }
                    }
                }
                (value, used, skipped, grad)
            })
            .collect();
        let mut out = TermOutput {
            value: 0.0,
            grad: want_grad.then(|| Mat64::zeros(rows, cols)),
            terms: 0,
            skipped: 0,
        };
        for (value, used, skipped, grad) in partials {
            out.value += value;
            out.terms += used;
            out.skipped += skipped;
            if let (Some(acc), Some(g)) = (out.grad.as_mut(), grad) {
                acc.add_scaled(&g, 1.0);
            }
        }
        Ok(out)
    }

    pub struct LossInputs<'a> {
        pub teacher: &'a Mat64,
        pub teacher_logits: &'a Mat64,
        pub student: &'a Mat64,
        pub student_logits: &'a Mat64,
        /// Identity centroid per row; switches the instance term to its soft form.
        pub centers: Option<&'a Mat64>,
    }

    #[derive(Debug, Clone)]
    pub struct DenseReport {
        pub total: f64,
        pub ce: f64,
        pub instance: f64,
        pub pair: f64,
        pub triplet: f64,
        pub grad_features: Mat64,
        pub grad_logits: Mat64,
        pub skipped_triplets: usize,
    }

    fn reduce(out: &mut TermOutput, reduction: Reduction, per_term: usize) {
        let count = match reduction {
            Reduction::Sum => return,
            Reduction::PerTuple => out.terms,
            Reduction::Mean => out.terms * per_term,
        };
        if count > 0 {
            let inv = 1.0 / count as f64;
            out.value *= inv;
            if let Some(g) = out.grad.as_mut() {
                g.scale(inv);
            }
        }
    }

    /// Components with zero weight are not evaluated and report 0.
    pub fn total_loss(
        inputs: &LossInputs<'_>,
        weights: &LossWeights,
        policy: &TuplePolicy,
        reduction: Reduction,
    ) -> Result<DenseReport, LossError> {
        weights.validate()?;
        same_shape(inputs.teacher, inputs.student)?;
        let (n, d) = (inputs.student.rows, inputs.student.cols);
        if inputs.student_logits.rows != n {
            return Err(MathError::DimMismatch(n, inputs.student_logits.rows).into());
        }
        let ce = ce_distill(
            inputs.teacher_logits,
            inputs.student_logits,
            weights.ce_temperature,
            true,
        )?;
        let mut grad_features = Mat64::zeros(n, d);
        let mut report = DenseReport {
            total: ce.value,
            ce: ce.value,
            instance: 0.0,
            pair: 0.0,
            triplet: 0.0,
            grad_features: Mat64::zeros(n, d),
            grad_logits: ce.grad.expect("requested"),
            skipped_triplets: 0,
        };
        if weights.lambda_i > 0.0 {
            let mut term = match inputs.centers {
                Some(c) => soft_instance_loss(inputs.teacher, inputs.student, c, true)?,
                None => instance_loss(inputs.teacher, inputs.student, true)?,
            };
            reduce(&mut term, reduction, d);
            report.instance = term.value;
            report.total += weights.lambda_i * term.value;
            grad_features.add_scaled(term.grad.as_ref().expect("requested"), weights.lambda_i);
        }
        if weights.lambda_p > 0.0 {
            let pairs = enumerate_pairs(n, policy)?;
            let mut term = pair_loss(
                inputs.teacher,
                inputs.student,
                weights.huber_delta,
                &pairs,
                true,
            )?;
            reduce(&mut term, reduction, 1);
            report.pair = term.value;
            report.total += weights.lambda_p * term.value;
            grad_features.add_scaled(term.grad.as_ref().expect("requested"), weights.lambda_p);
        }
        if weights.lambda_t > 0.0 {
            let triplets = enumerate_triplets(n, policy)?;
            let mut term = triplet_loss(
                inputs.teacher,
                inputs.student,
                weights.huber_delta,
                &triplets,
                true,
            )?;
            reduce(&mut term, reduction, 1);
            report.triplet = term.value;
            report.skipped_triplets = term.skipped;
            report.total += weights.lambda_t * term.value;
            grad_features.add_scaled(term.grad.as_ref().expect("requested"), weights.lambda_t);
        }
        report.grad_features = grad_features;
        Ok(report)
    }
}

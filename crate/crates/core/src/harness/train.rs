//! Mini-batch SGD on the total distillation loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{
    training_centroids, SyntheticIdentityDataset, Teacher, DEFAULT_TEACHER_LOGIT_SCALE,
};
use super::student::{Forward, Params64, StudentModel, StudentShape};
use super::HarnessError;
use crate::eval::{verify_embeddings, PairSet};
use crate::losses::dense::{self, LossInputs};
use crate::losses::{CentroidTable, LossError, LossWeights, Reduction, Side};
use crate::math::Mat64;
use crate::occlusion::baseline_inpaint;
use crate::tuples::TuplePolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InstanceMode {
    /// Direct feature matching.
    Hard,
    /// Residuals centred on the identity centroid.
    #[default]
    Soft,
}

impl InstanceMode {
    pub fn name(self) -> &'static str {
        match self {
            InstanceMode::Hard => "hard",
            InstanceMode::Soft => "soft",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hard" => Some(InstanceMode::Hard),
            "soft" => Some(InstanceMode::Soft),
            _ => None,
        }
    }
}

/// What the teacher sees for each training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TeacherSource {
    /// The clean original of the masked sample.
    #[default]
    Original,
    /// A different clean sample of the same identity.
    SameIdentity,
}

impl TeacherSource {
    pub fn name(self) -> &'static str {
        match self {
            TeacherSource::Original => "original",
            TeacherSource::SameIdentity => "same-identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(TeacherSource::Original),
            "same-identity" => Some(TeacherSource::SameIdentity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    /// Multiplier applied every `lr_step` epochs.
    pub lr_decay: f64,
    pub lr_step: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub mode: InstanceMode,
    pub policy: TuplePolicy,
    pub momentum: f64,
    pub hidden: usize,
    pub teacher_logit_scale: f64,
    pub teacher_source: TeacherSource,
    /// Cap on evaluation pairs.
    pub eval_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr0: 0.1,
            lr_decay: 0.1,
            lr_step: 24,
            epochs: 48,
            seed: 0,
            weights: LossWeights::default(),
            mode: InstanceMode::Soft,
            policy: TuplePolicy::default(),
            momentum: 0.0,
            hidden: 32,
            teacher_logit_scale: DEFAULT_TEACHER_LOGIT_SCALE,
            teacher_source: TeacherSource::Original,
            eval_pairs: 6000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.batch_size < 3 {
            return bad(format!("batch_size={} < 3", self.batch_size));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return bad(format!("lr0={}", self.lr0));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay={} outside (0,1]", self.lr_decay));
        }
        if self.lr_step == 0 {
            return bad("lr_step must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum={} outside [0,1)", self.momentum));
        }
        if self.hidden == 0 {
            return bad("hidden must be positive".into());
        }
        if !(self.teacher_logit_scale > 0.0) || !self.teacher_logit_scale.is_finite() {
            return bad(format!("teacher_logit_scale={}", self.teacher_logit_scale));
        }
        self.weights.validate()?;
        Ok(())
    }
}

/// Step schedule: `lr0` divided by `1/lr_decay` once per `lr_step` epochs.
/// Dividing keeps 0.1 → 0.01 → 0.001 exact in binary floating point.
pub fn learning_rate(config: &TrainConfig, epoch: usize) -> f64 {
    let steps = (epoch / config.lr_step) as i32;
    config.lr0 / config.lr_decay.recip().powi(steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub ce: f64,
    pub instance: f64,
    pub pair: f64,
    pub triplet: f64,
    pub total: f64,
    pub lr: f64,
}

/// Per-sample tensors shared by every run on one dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Inpainted masked rasters, one flattened row per sample.
    pub inputs: Mat64,
    pub teacher_features: Mat64,
    pub teacher_logits: Mat64,
    pub labels: Vec<u32>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub num_identities: usize,
    pub centroids: CentroidTable,
}

fn gather(m: &Mat64, idx: &[usize]) -> Mat64 {
    let mut out = Mat64::zeros(idx.len(), m.cols);
    for (dst, &i) in idx.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(m.row(i));
    }
    out
}

/// Inpaints every masked sample and runs the teacher.
pub fn prepare(
    dataset: &SyntheticIdentityDataset,
    config: &TrainConfig,
) -> Result<Prepared, HarnessError> {
    let teacher = Teacher::new(dataset, config.teacher_logit_scale)?;
    let n = dataset.samples.len();
    let pixels = dataset.config.raster_side * dataset.config.raster_side;
    let d = dataset.config.embed_dim;
    let classes = dataset.config.num_identities;
    let mut inputs = Mat64::zeros(n, pixels);
    for (i, s) in dataset.samples.iter().enumerate() {
        let filled = baseline_inpaint(&s.masked.masked, &s.masked.mask)?;
        for (dst, &p) in inputs.row_mut(i).iter_mut().zip(filled.pixels()) {
            *dst = p as f64;
        }
    }

    let labels: Vec<u32> = dataset.samples.iter().map(|s| s.label).collect();
    let mut own = Mat64::zeros(n, d);
    for (i, s) in dataset.samples.iter().enumerate() {
        own.row_mut(i).copy_from_slice(&teacher.embed64(s.clean()));
    }
    let train_labels: Vec<u32> = dataset.train.iter().map(|&i| labels[i]).collect();
    let centroids = training_centroids(&gather(&own, &dataset.train), &train_labels, classes)?;

    // same-identity mode shows the teacher another training sample of the label
    let mut rng = ChaCha8Rng::seed_from_u64(dataset.config.seed ^ 0x7EAC_4E55);
    let mut teacher_features = Mat64::zeros(n, d);
    let mut teacher_logits = Mat64::zeros(n, classes);
    for i in 0..n {
        let source = match config.teacher_source {
            TeacherSource::Original => i,
            TeacherSource::SameIdentity => {
                let peers: Vec<usize> = dataset
                    .train
                    .iter()
                    .copied()
                    .filter(|&j| j != i && labels[j] == labels[i])
                    .collect();
                if peers.is_empty() {
                    i
                } else {
                    peers[rng.random_range(0..peers.len())]
                }
            }
        };
        let t = own.row(source);
        teacher_logits
            .row_mut(i)
            .copy_from_slice(&teacher.logits64(t));
        teacher_features.row_mut(i).copy_from_slice(t);
    }
    Ok(Prepared {
        inputs,
        teacher_features,
        teacher_logits,
        labels,
        train: dataset.train.clone(),
        eval: dataset.eval.clone(),
        num_identities: classes,
        centroids,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: StudentModel,
    pub initial: StudentModel,
    pub history: Vec<EpochReport>,
}

fn batch_loss(
    params: &Params64,
    prepared: &Prepared,
    idx: &[usize],
    config: &TrainConfig,
) -> Result<(dense::DenseReport, Forward, Mat64), HarnessError> {
    let x = gather(&prepared.inputs, idx);
    let fwd = params.forward(&x);
    let teacher = gather(&prepared.teacher_features, idx);
    let teacher_logits = gather(&prepared.teacher_logits, idx);
    let centers = match config.mode {
        InstanceMode::Soft => {
            let labels: Vec<u32> = idx.iter().map(|&i| prepared.labels[i]).collect();
            Some(prepared.centroids.rows_for(&labels)?)
        }
        InstanceMode::Hard => None,
    };
    let report = dense::total_loss(
        &LossInputs {
            teacher: &teacher,
            teacher_logits: &teacher_logits,
            student: &fwd.embed,
            student_logits: &fwd.logits,
            centers: centers.as_ref(),
        },
        &config.weights,
        &config.policy,
        Reduction::Mean,
    )?;
    Ok((report, fwd, x))
}

pub fn train(
    config: &TrainConfig,
    dataset: &SyntheticIdentityDataset,
) -> Result<TrainOutcome, HarnessError> {
    let prepared = prepare(dataset, config)?;
    train_prepared(config, &prepared)
}

pub fn train_prepared(
    config: &TrainConfig,
    prepared: &Prepared,
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let shape = StudentShape {
        input: prepared.inputs.cols,
        hidden: config.hidden,
        embed: prepared.teacher_features.cols,
        classes: prepared.num_identities,
    };
    let initial = StudentModel::init(shape, config.seed)?;
    let mut params = initial.to_f64();
    let mut velocity = params.zeros_like();
    let mut history = Vec::with_capacity(config.epochs);
    let mut order = prepared.train.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546);

    for epoch in 0..config.epochs {
        let lr = learning_rate(config, epoch);
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        let mut batches = 0usize;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            if idx.len() < 3 {
                continue;
            }
            let (r, fwd, x) = match batch_loss(&params, prepared, idx, config) {
                Err(HarnessError::Loss(LossError::DegenerateBatch(Side::Student, _))) => {
                    return Err(HarnessError::Diverged {
                        epoch,
                        step,
                        what: "collapsed student embeddings",
                        history,
                    })
                }
                other => other?,
            };
            if !r.total.is_finite() {
                return Err(HarnessError::Diverged {
                    epoch,
                    step,
                    what: "non-finite loss",
                    history,
                });
            }
            let grads = params.backprop(&x, &fwd, &r.grad_features, &r.grad_logits);
            if config.momentum > 0.0 {
                velocity.momentum_update(&grads, config.momentum);
                params.sgd_step(&velocity, lr);
            } else {
                params.sgd_step(&grads, lr);
            }
            if !params.is_finite() {
                return Err(HarnessError::Diverged {
                    epoch,
                    step,
                    what: "non-finite parameters",
                    history,
                });
            }
            for (acc, v) in sums
                .iter_mut()
                .zip([r.ce, r.instance, r.pair, r.triplet, r.total])
            {
                *acc += v;
            }
            batches += 1;
        }
        let mean = |v: f64| v / batches.max(1) as f64;
        history.push(EpochReport {
            epoch,
            ce: mean(sums[0]),
            instance: mean(sums[1]),
            pair: mean(sums[2]),
            triplet: mean(sums[3]),
            total: mean(sums[4]),
            lr,
        });
    }
    Ok(TrainOutcome {
        model: StudentModel::from_f64(&params)?,
        initial,
        history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub threshold: f64,
    /// Loss components on the whole evaluation split as one batch.
    pub loss: EpochReport,
    pub pairs: usize,
}

/// Verification accuracy on balanced evaluation pairs, plus the training
/// objective evaluated on the evaluation split.
pub fn evaluate(
    model: &StudentModel,
    prepared: &Prepared,
    config: &TrainConfig,
) -> Result<EvalSummary, HarnessError> {
    let params = model.to_f64();
    let embed = params.forward(&prepared.inputs).embed;
    let pairs = PairSet::sample(
        &prepared.eval,
        &prepared.labels,
        config.eval_pairs,
        config.seed,
    )?;
    let report = verify_embeddings(&embed, &pairs)?;
    let (r, _, _) = batch_loss(&params, prepared, &prepared.eval, config)?;
    Ok(EvalSummary {
        accuracy: report.accuracy,
        threshold: report.threshold,
        loss: EpochReport {
            epoch: config.epochs,
            ce: r.ce,
            instance: r.instance,
            pair: r.pair,
            triplet: r.triplet,
            total: r.total,
            lr: learning_rate(config, config.epochs),
        },
        pairs: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::{generate_dataset, DatasetConfig};

    fn tiny_dataset() -> SyntheticIdentityDataset {
        generate_dataset(&DatasetConfig {
            num_identities: 5,
            samples_per_identity: 8,
            seed: 7,
            ..DatasetConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn schedule_is_exact() {
        let c = TrainConfig::default();
        assert_eq!(learning_rate(&c, 0), 0.1);
        assert_eq!(learning_rate(&c, 23), 0.1);
        assert_eq!(learning_rate(&c, 24), 0.01);
        assert_eq!(learning_rate(&c, 48), 0.001);
    }

    #[test]
    fn zero_epochs_leave_student_unchanged() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &ds).unwrap();
        assert_eq!(out.model, out.initial);
        assert!(out.history.is_empty());
    }

    #[test]
    fn zero_gradient_step_is_a_no_op() {
        // λ = 0 and teacher logits replaced by the student's own logits
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            epochs: 1,
            weights: LossWeights {
                lambda_i: 0.0,
                lambda_p: 0.0,
                lambda_t: 0.0,
                ..LossWeights::default()
            },
            ..TrainConfig::default()
        };
        let mut prepared = prepare(&ds, &cfg).unwrap();
        let shape = StudentShape {
            input: prepared.inputs.cols,
            hidden: cfg.hidden,
            embed: prepared.teacher_features.cols,
            classes: prepared.num_identities,
        };
        let init = StudentModel::init(shape, cfg.seed).unwrap();
        prepared.teacher_logits = init.forward(&prepared.inputs).logits;
        let out = train_prepared(&cfg, &prepared).unwrap();
        assert_eq!(out.model, init);
    }

    #[test]
    fn training_is_reproducible() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let a = train(&cfg, &ds).unwrap();
        let b = train(&cfg, &ds).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 3);
    }

    #[test]
    fn soft_and_hard_share_gradients() {
        let ds = tiny_dataset();
        let soft = TrainConfig {
            epochs: 2,
            batch_size: 16,
            mode: InstanceMode::Soft,
            ..TrainConfig::default()
        };
        let hard = TrainConfig {
            mode: InstanceMode::Hard,
            ..soft.clone()
        };
        let a = train(&soft, &ds).unwrap();
        let b = train(&hard, &ds).unwrap();
        assert_eq!(a.model, b.model);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert!((x.instance - y.instance).abs() <= 1e-12 * x.instance.max(1.0));
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let ds = tiny_dataset();
        let bad = TrainConfig {
            batch_size: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&bad, &ds), Err(HarnessError::Config(_))));
        let bad_lr = TrainConfig {
            lr0: 0.0,
            ..TrainConfig::default()
        };
        assert!(train(&bad_lr, &ds).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            lr0: 1e300,
            ..TrainConfig::default()
        };
        match train(&cfg, &ds) {
            Err(HarnessError::Diverged { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}

//! The five-variant loss ablation.

use rayon::prelude::*;

use super::dataset::{generate_dataset, DatasetConfig};
use super::train::{evaluate, prepare, train_prepared, InstanceMode, TrainConfig};
use super::HarnessError;
use crate::losses::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Ce,
    CePair,
    CePairTriplet,
    CePairTripletHard,
    CePairTripletSoft,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Ce,
        Variant::CePair,
        Variant::CePairTriplet,
        Variant::CePairTripletHard,
        Variant::CePairTripletSoft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ce => "ce",
            Variant::CePair => "ce+p",
            Variant::CePairTriplet => "ce+p+t",
            Variant::CePairTripletHard => "ce+p+t+hard-i",
            Variant::CePairTripletSoft => "ce+p+t+soft-i",
        }
    }

    /// Zeroes the weights this variant leaves out and sets the instance mode.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let w = base.weights;
        let (pair, triplet, instance) = match self {
            Variant::Ce => (false, false, None),
            Variant::CePair => (true, false, None),
            Variant::CePairTriplet => (true, true, None),
            Variant::CePairTripletHard => (true, true, Some(InstanceMode::Hard)),
            Variant::CePairTripletSoft => (true, true, Some(InstanceMode::Soft)),
        };
        TrainConfig {
            weights: LossWeights {
                lambda_p: if pair { w.lambda_p } else { 0.0 },
                lambda_t: if triplet { w.lambda_t } else { 0.0 },
                lambda_i: if instance.is_some() { w.lambda_i } else { 0.0 },
                ..w
            },
            mode: instance.unwrap_or(base.mode),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub accuracy: f64,
    pub eval_loss: f64,
    /// Per-epoch relational loss (pair + triplet) on the training split.
    pub relational: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub variant: Variant,
    pub runs: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation; zero for a single run.
    pub sd_accuracy: f64,
}

/// Trains every variant on every seed. Seed `s` fixes both the dataset
/// and the student initialization.
pub fn run_ablation(
    dataset: &DatasetConfig,
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>, HarnessError> {
    base.validate()?;
    let prepared: Vec<_> = seeds
        .par_iter()
        .map(|&seed| {
            let ds = generate_dataset(&DatasetConfig {
                seed,
                ..dataset.clone()
            })?;
            prepare(&ds, base)
        })
        .collect::<Result<_, HarnessError>>()?;
    let jobs: Vec<(usize, Variant)> = (0..seeds.len())
        .flat_map(|i| Variant::ALL.into_iter().map(move |v| (i, v)))
        .collect();
    jobs.par_iter()
        .map(|&(i, variant)| {
            let cfg = TrainConfig {
                seed: seeds[i],
                ..variant.apply(base)
            };
            let out = train_prepared(&cfg, &prepared[i])?;
            let eval = evaluate(&out.model, &prepared[i], &cfg)?;
            Ok(AblationRow {
                variant,
                seed: seeds[i],
                accuracy: eval.accuracy,
                eval_loss: eval.loss.total,
                relational: out.history.iter().map(|e| e.pair + e.triplet).collect(),
            })
        })
        .collect()
}

pub fn summarize(rows: &[AblationRow]) -> Vec<AblationSummary> {
    Variant::ALL
        .iter()
        .map(|&variant| {
            let acc: Vec<f64> = rows
                .iter()
                .filter(|r| r.variant == variant)
                .map(|r| r.accuracy)
                .collect();
            let n = acc.len();
            let mean = if n == 0 {
                0.0
            } else {
                acc.iter().sum::<f64>() / n as f64
            };
            let sd = if n < 2 {
                0.0
            } else {
                (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            AblationSummary {
                variant,
                runs: n,
                mean_accuracy: mean,
                sd_accuracy: sd,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_variants_with_expected_weights() {
        assert_eq!(Variant::ALL.len(), 5);
        let base = TrainConfig::default();
        let ce = Variant::Ce.apply(&base);
        assert_eq!(
            (
                ce.weights.lambda_i,
                ce.weights.lambda_p,
                ce.weights.lambda_t
            ),
            (0.0, 0.0, 0.0)
        );
        let hard = Variant::CePairTripletHard.apply(&base);
        assert_eq!(hard.mode, InstanceMode::Hard);
        assert_eq!(hard.weights, base.weights);
        let soft = Variant::CePairTripletSoft.apply(&base);
        assert_eq!(soft.mode, InstanceMode::Soft);
    }

    #[test]
    fn single_run_has_zero_sd() {
        let rows = vec![AblationRow {
            variant: Variant::Ce,
            seed: 0,
            accuracy: 0.7,
            eval_loss: 1.0,
            relational: vec![],
        }];
        let s = summarize(&rows);
        assert_eq!(s.len(), 5);
        assert_eq!(s[0].sd_accuracy, 0.0);
        assert_eq!(s[0].mean_accuracy, 0.7);
        assert_eq!(s[1].runs, 0);
    }
}

//! Ready-made models fitted on synthetic data, used for fixtures and as the
//! fallback when no model file is supplied.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epoching::{balance_rus, EpochSample};
use crate::features::MobilityFeatureMode;
use crate::gbt::{self, GbtError, GbtModel, ModelInfo, TrainConfig};
use crate::mobility::{mobility_training_matrix, MobilityError, MobilityLabel, MOBILITY_EPOCH_S};
use crate::synth::{derive_seed, gen_mobility_sequence, gen_subject_epochs, random_mobility_segments, SynthError};
use crate::usability::{train_usability, UsabilityError, Variant};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Usability(#[from] UsabilityError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTraining {
    pub subjects: usize,
    pub per_class: usize,
    pub fs: u32,
    pub epoch_len_s: f64,
    pub iterations: usize,
    pub eta: f64,
    pub seed: u64,
}

impl SyntheticTraining {
    pub fn new(seed: u64) -> Self {
        SyntheticTraining {
            subjects: 8,
            per_class: 50,
            fs: 256,
            epoch_len_s: 10.0,
            iterations: 100,
            eta: 0.1,
            seed,
        }
    }
}

/// Balanced synthetic epochs of `opts.subjects` subjects named S01, S02, ...
pub fn synthetic_epochs(opts: &SyntheticTraining) -> Result<Vec<EpochSample>, SynthError> {
    let mut all = Vec::new();
    for s in 0..opts.subjects {
        all.extend(gen_subject_epochs(
            &format!("S{:02}", s + 1),
            s as u64,
            opts.per_class,
            opts.fs,
            opts.epoch_len_s,
            opts.seed,
        )?);
    }
    Ok(balance_rus(&all, derive_seed(opts.seed, &[7])))
}

pub fn synthetic_usability_model(variant: Variant, opts: &SyntheticTraining) -> Result<GbtModel, TrainError> {
    let samples = synthetic_epochs(opts)?;
    let mut base = TrainConfig::new(variant.num_classes(), opts.iterations);
    base.eta = opts.eta;
    base.seed = opts.seed;
    Ok(train_usability(&samples, variant, opts.fs, opts.epoch_len_s, &base)?)
}

/// Mobility classifier fitted on `n_segments` random synthetic segments.
pub fn synthetic_mobility_model(
    fs: u32,
    mode: MobilityFeatureMode,
    n_segments: usize,
    iterations: usize,
    seed: u64,
) -> Result<GbtModel, TrainError> {
    let segments = random_mobility_segments(n_segments, seed);
    let (acc, labels) = gen_mobility_sequence(&segments, fs, derive_seed(seed, &[1]))?;
    train_mobility(&acc, &labels, fs, mode, iterations, seed)
}

pub fn train_mobility(
    acc: &crate::signal_io::TriAxialAcc,
    labels: &[MobilityLabel],
    fs: u32,
    mode: MobilityFeatureMode,
    iterations: usize,
    seed: u64,
) -> Result<GbtModel, TrainError> {
    let (layout, data) = mobility_training_matrix(acc, labels, fs, MOBILITY_EPOCH_S, mode)?;
    let mut cfg = TrainConfig::new(MobilityLabel::ALL.len(), iterations);
    cfg.seed = seed;
    let mut model = gbt::fit(&data, &cfg)?;
    model.layout = Some(layout);
    model.info = ModelInfo {
        task: "mobility".into(),
        variant: format!("{mode:?}").to_lowercase(),
        class_names: MobilityLabel::ALL.iter().map(|l| l.name().to_string()).collect(),
        epoch_len_s: Some(MOBILITY_EPOCH_S),
    };
    Ok(model)
}

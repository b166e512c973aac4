//! Sleep EEG quality analysis: artifact scoring of EEG epochs, time in bed
//! from accelerometry, spiky-noise removal and sleep statistics.

pub mod aggregate;
pub mod epoching;
pub mod features;
pub mod gbt;
pub mod metrics;
pub mod mobility;
pub mod signal_io;
pub mod sleepstats;
pub mod spiky_filter;
pub mod synth;
pub mod usability;
pub mod report;
pub mod training;

//! Calibration evaluation for language-model confidence on gendered pronoun
//! resolution.
//!
//! The pipeline reads line-delimited probability records, normalizes each
//! pronoun pair into a binary scored instance (`p_male / (p_male + p_female)`),
//! and computes ECE, ICE, MacroCE, Brier, Gender-ECE and cc-ECE over them.
//! Post-hoc calibrators, reliability diagrams and a subsampling study build on
//! the same instances.

pub mod binning;
pub mod calibrators;
pub mod diagrams;
pub mod error;
pub mod metrics;
pub mod records;
pub mod report;
pub mod resample;
pub mod synthetic;

pub use binning::{BinStats, BinningMode, BinningScheme};
pub use calibrators::{CalibratorKind, CalibratorModel, SplitSpec};
pub use diagrams::ReliabilityTable;
pub use error::{Error, Result};
pub use metrics::{GenderEceResult, GroupedEce, MetricReport};
pub use records::{DatasetManifest, Label, PronounPairRecord, ScoredInstance};
pub use resample::SubsampleStudy;

//! Sample-size ablation: ECE mean and spread over repeated subsets drawn
//! without replacement.
//!
//! Every (size, repeat) draw uses its own ChaCha8 stream derived from the
//! seed, so results do not depend on how repeats are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::BinningScheme;
use crate::error::{Error, Result};
use crate::metrics::ece;
use crate::records::ScoredInstance;

pub const DEFAULT_REPEATS: usize = 100;
pub const DEFAULT_SIZES: [usize; 5] = [50, 100, 150, 250, 500];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeResult {
    pub size: usize,
    pub mean_ece: f64,
    /// Sample standard deviation (divisor `repeats - 1`).
    pub std_ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleStudy {
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub scheme: BinningScheme,
    pub results: Vec<SizeResult>,
}

fn draw_rng(seed: u64, size_index: usize, repeat: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((size_index as u64) << 32) | repeat as u64);
    rng
}

/// Indices of one subset, sorted ascending so a full-size draw reproduces
/// the input order exactly.
pub fn draw_subset(
    n: usize,
    size: usize,
    seed: u64,
    size_index: usize,
    repeat: usize,
) -> Vec<usize> {
    let mut rng = draw_rng(seed, size_index, repeat);
    let mut idx = rand::seq::index::sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Welford mean and sample standard deviation. Identical inputs give exactly
/// that value and zero spread.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    let var = if values.len() > 1 {
        m2 / (values.len() - 1) as f64
    } else {
        0.0
    };
    (mean, var.max(0.0).sqrt())
}

pub fn subsample_study(
    instances: &[ScoredInstance],
    sizes: &[usize],
    repeats: usize,
    seed: u64,
    scheme: BinningScheme,
) -> Result<SubsampleStudy> {
    let n = instances.len();
    if repeats < 2 {
        return Err(Error::TooFewRepeats(repeats));
    }
    if let Some(&size) = sizes.iter().find(|&&s| s > n || s == 0) {
        return Err(if size == 0 {
            Error::Empty
        } else {
            Error::SizeTooLarge { size, n }
        });
    }

    let results = sizes
        .iter()
        .enumerate()
        .map(|(size_index, &size)| {
            let eces = (0..repeats)
                .into_par_iter()
                .map(|repeat| {
                    let subset: Vec<ScoredInstance> =
                        draw_subset(n, size, seed, size_index, repeat)
                            .into_iter()
                            .map(|i| instances[i].clone())
                            .collect();
                    ece(&subset, scheme)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean_ece, std_ece) = mean_std(&eces);
            Ok(SizeResult {
                size,
                mean_ece,
                std_ece,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SubsampleStudy {
        sizes: sizes.to_vec(),
        repeats,
        seed,
        scheme,
        results,
    })
}

impl SubsampleStudy {
    /// CSV laid out like the ablation table: one column per size, rows `mean`
    /// and `std`. Values use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("statistic");
        for r in &self.results {
            out.push_str(&format!(",{}", r.size));
        }
        out.push_str("\nmean");
        for r in &self.results {
            out.push_str(&format!(",{}", r.mean_ece));
        }
        out.push_str("\nstd");
        for r in &self.results {
            out.push_str(&format!(",{}", r.std_ece));
        }
        out.push('\n');
        out
    }

    /// Aligned text table with four decimals.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12}", "N");
        for r in &self.results {
            out.push_str(&format!("{:>10}", r.size));
        }
        out.push_str(&format!("\n{:<12}", "ECE (mean)"));
        for r in &self.results {
            out.push_str(&format!("{:>10.4}", r.mean_ece));
        }
        out.push_str(&format!("\n{:<12}", "ECE (std)"));
        for r in &self.results {
            out.push_str(&format!("{:>10.4}", r.std_ece));
        }
        out.push('\n');
        out
    }
}

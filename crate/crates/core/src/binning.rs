//! Confidence binning for ECE and reliability diagrams.
//!
//! Equal-width bins use half-open intervals `[lower, upper)` with the top bin
//! closed. Equal-size bins are assigned by rank after a stable sort on
//! `(score, instance_id)`, so tied scores split deterministically; their edges
//! are the largest score in each bin, which makes the intervals
//! `(lower, upper]` with the first bin closed at 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::ScoredInstance;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinningMode {
    EqualWidth,
    EqualSize,
}

impl fmt::Display for BinningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinningMode::EqualWidth => "equal-width",
            BinningMode::EqualSize => "equal-size",
        })
    }
}

impl FromStr for BinningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal-width" | "equal_width" => Ok(BinningMode::EqualWidth),
            "equal-size" | "equal_size" => Ok(BinningMode::EqualSize),
            other => Err(Error::InvalidBinning(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinningScheme {
    pub mode: BinningMode,
    pub bins: usize,
}

impl Default for BinningScheme {
    fn default() -> Self {
        BinningScheme {
            mode: BinningMode::EqualWidth,
            bins: DEFAULT_BINS,
        }
    }
}

impl BinningScheme {
    pub fn new(mode: BinningMode, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidBinning("bin count must be at least 1".into()));
        }
        Ok(BinningScheme { mode, bins })
    }

    pub fn equal_width(bins: usize) -> Self {
        Self::new(BinningMode::EqualWidth, bins).expect("bins must be positive")
    }

    pub fn equal_size(bins: usize) -> Self {
        Self::new(BinningMode::EqualSize, bins).expect("bins must be positive")
    }

    /// Scheme to use on a subpopulation of `n` instances: equal-size binning
    /// never asks for more bins than there are members.
    pub fn for_subset(self, n: usize) -> Self {
        match self.mode {
            BinningMode::EqualWidth => self,
            BinningMode::EqualSize => BinningScheme {
                mode: self.mode,
                bins: self.bins.min(n).max(1),
            },
        }
    }
}

/// Which side of each interval is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    /// `[lower, upper)`, last bin `[lower, upper]`.
    Left,
    /// `(lower, upper]`, first bin `[lower, upper]`.
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    pub values: Vec<f64>,
    pub closure: Closure,
}

impl BinEdges {
    pub fn bin_count(&self) -> usize {
        self.values.len() - 1
    }
}

/// Per-bin statistics. Empty bins report zeros with `empty` set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_conf: f64,
    pub accuracy: f64,
    pub gap: f64,
    pub empty: bool,
}

fn check_score(score: f64) -> Result<()> {
    if (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(Error::ScoreOutOfRange(score))
    }
}

fn equal_width_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|m| m as f64 / bins as f64).collect()
}

/// Rank (0-based) to bin for equal-size binning: bin `j` holds ranks in
/// `[ceil(j n / M), ceil((j + 1) n / M))`.
fn rank_bin(rank: usize, n: usize, bins: usize) -> usize {
    rank * bins / n
}

fn sorted_order(instances: &[ScoredInstance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&instances[a], &instances[b]);
        x.score
            .total_cmp(&y.score)
            .then_with(|| x.instance_id.cmp(&y.instance_id))
    });
    order
}

fn quantile_edges(sorted_scores: &[f64], bins: usize) -> Vec<f64> {
    let n = sorted_scores.len();
    let mut edges = Vec::with_capacity(bins + 1);
    edges.push(0.0);
    for j in 1..bins {
        let rank = (j * n).div_ceil(bins);
        edges.push(sorted_scores[rank - 1]);
    }
    edges.push(1.0);
    edges
}

pub fn bin_edges(scheme: BinningScheme, scores: &[f64]) -> Result<BinEdges> {
    if scheme.bins == 0 {
        return Err(Error::InvalidBinning("bin count must be at least 1".into()));
    }
    match scheme.mode {
        BinningMode::EqualWidth => Ok(BinEdges {
            values: equal_width_edges(scheme.bins),
            closure: Closure::Left,
        }),
        BinningMode::EqualSize => {
            if scores.is_empty() {
                return Err(Error::Empty);
            }
            if scheme.bins > scores.len() {
                return Err(Error::TooManyBins {
                    bins: scheme.bins,
                    instances: scores.len(),
                });
            }
            for &s in scores {
                check_score(s)?;
            }
            let mut sorted = scores.to_vec();
            sorted.sort_by(f64::total_cmp);
            Ok(BinEdges {
                values: quantile_edges(&sorted, scheme.bins),
                closure: Closure::Right,
            })
        }
    }
}

pub fn assign_bin(score: f64, edges: &BinEdges) -> Result<usize> {
    check_score(score)?;
    let last = edges.bin_count() - 1;
    let interior = &edges.values[1..edges.values.len() - 1];
    let idx = match edges.closure {
        Closure::Left => interior.partition_point(|&e| e <= score),
        Closure::Right => interior.partition_point(|&e| e < score),
    };
    Ok(idx.min(last))
}

/// Bin edges plus the bin index of every instance, in input order.
pub fn assign_bins(
    instances: &[ScoredInstance],
    scheme: BinningScheme,
) -> Result<(BinEdges, Vec<usize>)> {
    if instances.is_empty() {
        return Err(Error::Empty);
    }
    for inst in instances {
        check_score(inst.score)?;
    }
    match scheme.mode {
        BinningMode::EqualWidth => {
            let edges = bin_edges(scheme, &[])?;
            let members = instances
                .iter()
                .map(|i| assign_bin(i.score, &edges))
                .collect::<Result<Vec<_>>>()?;
            Ok((edges, members))
        }
        BinningMode::EqualSize => {
            let n = instances.len();
            if scheme.bins > n {
                return Err(Error::TooManyBins {
                    bins: scheme.bins,
                    instances: n,
                });
            }
            let order = sorted_order(instances);
            let sorted: Vec<f64> = order.iter().map(|&i| instances[i].score).collect();
            let mut members = vec![0; n];
            for (rank, &i) in order.iter().enumerate() {
                members[i] = rank_bin(rank, n, scheme.bins);
            }
            let edges = BinEdges {
                values: quantile_edges(&sorted, scheme.bins),
                closure: Closure::Right,
            };
            Ok((edges, members))
        }
    }
}

/// Summarizes already-assigned members. `confidence` and `outcome` select
/// the per-instance values averaged in each bin.
pub(crate) fn summarize<F, G>(
    instances: &[ScoredInstance],
    edges: &BinEdges,
    members: &[usize],
    confidence: F,
    outcome: G,
) -> Vec<BinStats>
where
    F: Fn(&ScoredInstance) -> f64,
    G: Fn(&ScoredInstance) -> f64,
{
    let bins = edges.bin_count();
    let mut counts = vec![0usize; bins];
    let mut conf_sums = vec![0.0; bins];
    let mut outcome_sums = vec![0.0; bins];
    for (inst, &m) in instances.iter().zip(members) {
        counts[m] += 1;
        conf_sums[m] += confidence(inst);
        outcome_sums[m] += outcome(inst);
    }
    (0..bins)
        .map(|m| {
            let (lower, upper) = (edges.values[m], edges.values[m + 1]);
            if counts[m] == 0 {
                return BinStats {
                    index: m,
                    lower,
                    upper,
                    count: 0,
                    mean_conf: 0.0,
                    accuracy: 0.0,
                    gap: 0.0,
                    empty: true,
                };
            }
            let mean_conf = conf_sums[m] / counts[m] as f64;
            let accuracy = outcome_sums[m] / counts[m] as f64;
            BinStats {
                index: m,
                lower,
                upper,
                count: counts[m],
                mean_conf,
                accuracy,
                gap: (accuracy - mean_conf).abs(),
                empty: false,
            }
        })
        .collect()
}

/// Per-bin count, mean score, label frequency and gap, ordered by bin index.
pub fn compute_bin_stats(
    instances: &[ScoredInstance],
    scheme: BinningScheme,
) -> Result<Vec<BinStats>> {
    let (edges, members) = assign_bins(instances, scheme)?;
    Ok(summarize(
        instances,
        &edges,
        &members,
        |i| i.score,
        |i| i.label.as_f64(),
    ))
}

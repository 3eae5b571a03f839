//! Regenerates the record-file fixtures used by the CLI tests and the
//! acceptance harness.
//!
//! cargo run -p pcal-core --example gen_fixtures -- crates/cli/tests/fixtures

use std::path::PathBuf;

use pcal_core::records::records_to_string;
use pcal_core::synthetic::{calibrated, overconfident, to_records};
use pcal_core::{CalibratorModel, Label, PronounPairRecord, ScoredInstance};

pub const OVERCONFIDENT_N: usize = 771;
pub const OVERCONFIDENT_PULL: f64 = 0.15;
pub const OVERCONFIDENT_SEED: u64 = 2024;

fn four() -> Vec<PronounPairRecord> {
    let rows = [
        (0.95, Label::Male),
        (0.85, Label::Male),
        (0.15, Label::Female),
        (0.30, Label::Male),
    ];
    let instances: Vec<ScoredInstance> = rows
        .iter()
        .enumerate()
        .map(|(i, &(s, y))| ScoredInstance::from_score(format!("ex{}", i + 1), s, y, None))
        .collect();
    to_records(&instances, "toy", "example")
}

fn tagged(mut instances: Vec<ScoredInstance>) -> Vec<ScoredInstance> {
    for (i, inst) in instances.iter_mut().enumerate() {
        inst.group_tag = Some(if i % 2 == 0 { "occupation" } else { "name" }.to_string());
    }
    instances
}

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir)?;

    std::fs::write(dir.join("four.jsonl"), records_to_string(&four()))?;

    let alpha = to_records(&tagged(calibrated(300, 7)), "alpha", "synthetic");
    std::fs::write(dir.join("model_alpha.jsonl"), records_to_string(&alpha))?;
    let beta = to_records(&tagged(overconfident(300, 0.3, 8)), "beta", "synthetic");
    std::fs::write(dir.join("model_beta.jsonl"), records_to_string(&beta))?;

    let over = overconfident(OVERCONFIDENT_N, OVERCONFIDENT_PULL, OVERCONFIDENT_SEED);
    std::fs::write(
        dir.join("overconfident_771.jsonl"),
        records_to_string(&to_records(&over, "synthetic-lm", "synthetic")),
    )?;

    std::fs::write(
        dir.join("identity_beta.json"),
        CalibratorModel::beta(1.0, 1.0, 0.0).to_text(),
    )?;
    Ok(())
}

//! Seeded synthetic score/label generators for tests, fixtures and benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::records::{Label, PronounPairRecord, ScoredInstance};

/// Standard deviation of the logit used by [`overconfident`].
pub const OVERCONFIDENT_LOGIT_SD: f64 = 3.0;

fn instance(i: usize, score: f64, male: bool) -> ScoredInstance {
    let label = if male { Label::Male } else { Label::Female };
    ScoredInstance::from_score(format!("syn{i:05}"), score, label, None)
}

/// Uniform scores with labels drawn as Bernoulli(score).
pub fn calibrated(n: usize, seed: u64) -> Vec<ScoredInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let s: f64 = rng.random();
            instance(i, s, rng.random_bool(s))
        })
        .collect()
}

/// Scores pushed toward 0 and 1 (sigmoid of a wide normal logit) with labels
/// drawn from the true probability `0.5 + pull * (2 s - 1)`, i.e. pulled toward
/// 0.5. Smaller `pull` means stronger overconfidence.
pub fn overconfident(n: usize, pull: f64, seed: u64) -> Vec<ScoredInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logit = Normal::new(0.0, OVERCONFIDENT_LOGIT_SD).expect("valid normal");
    (0..n)
        .map(|i| {
            let x: f64 = logit.sample(&mut rng);
            let s = 1.0 / (1.0 + (-x).exp());
            let q = (0.5 + pull * (2.0 * s - 1.0)).clamp(0.0, 1.0);
            instance(i, s, rng.random_bool(q))
        })
        .collect()
}

/// Wraps instances as records whose normalized score reproduces the
/// instance score (`p_male = s`, `p_female = 1 - s`).
pub fn to_records(
    instances: &[ScoredInstance],
    model_name: &str,
    dataset_name: &str,
) -> Vec<PronounPairRecord> {
    instances
        .iter()
        .map(|i| PronounPairRecord {
            instance_id: i.instance_id.clone(),
            dataset_name: dataset_name.to_string(),
            model_name: model_name.to_string(),
            sentence_male: format!("{} he", i.instance_id),
            sentence_female: format!("{} she", i.instance_id),
            p_male: i.score,
            p_female: 1.0 - i.score,
            human_label: i.label,
            group_tag: i.group_tag.clone(),
        })
        .collect()
}

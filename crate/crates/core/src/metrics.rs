//! Calibration and gender-disparity metrics over scored instances.
//!
//! Every metric uses the positive-class score except MacroCE, which works on
//! predicted-class confidence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::binning::{assign_bins, compute_bin_stats, summarize, BinStats, BinningScheme};
use crate::error::{Error, Result, Violation};
use crate::records::{Label, ScoredInstance};

fn non_empty(instances: &[ScoredInstance]) -> Result<()> {
    if instances.is_empty() {
        Err(Error::Empty)
    } else {
        Ok(())
    }
}

fn mean<I: Iterator<Item = f64>>(values: I) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Weighted gap sum over bins. Empty bins carry zero weight.
pub fn ece_from_bins(bins: &[BinStats]) -> f64 {
    let n: usize = bins.iter().map(|b| b.count).sum();
    bins.iter()
        .filter(|b| !b.empty)
        .map(|b| b.count as f64 / n as f64 * b.gap)
        .sum()
}

pub fn ece(instances: &[ScoredInstance], scheme: BinningScheme) -> Result<f64> {
    Ok(ece_from_bins(&compute_bin_stats(instances, scheme)?))
}

pub fn ice(instances: &[ScoredInstance]) -> Result<f64> {
    non_empty(instances)?;
    Ok(mean(
        instances.iter().map(|i| (i.label.as_f64() - i.score).abs()),
    ))
}

pub fn brier(instances: &[ScoredInstance]) -> Result<f64> {
    non_empty(instances)?;
    Ok(mean(instances.iter().map(|i| {
        let d = i.score - i.label.as_f64();
        d * d
    })))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroCe {
    pub value: f64,
    /// Mean `1 - confidence` over correct predictions.
    pub ice_pos: f64,
    /// Mean `confidence` over incorrect predictions.
    pub ice_neg: f64,
    pub correct: usize,
    pub incorrect: usize,
    /// Set when one side is empty; that side contributes 0.
    pub one_sided: bool,
}

pub fn macro_ce(instances: &[ScoredInstance]) -> Result<MacroCe> {
    non_empty(instances)?;
    let (correct, incorrect): (Vec<_>, Vec<_>) = instances.iter().partition(|i| i.is_correct());
    let ice_pos = if correct.is_empty() {
        0.0
    } else {
        mean(correct.iter().map(|i| 1.0 - i.confidence))
    };
    let ice_neg = if incorrect.is_empty() {
        0.0
    } else {
        mean(incorrect.iter().map(|i| i.confidence))
    };
    Ok(MacroCe {
        value: 0.5 * (ice_pos + ice_neg),
        ice_pos,
        ice_neg,
        correct: correct.len(),
        incorrect: incorrect.len(),
        one_sided: correct.is_empty() || incorrect.is_empty(),
    })
}

/// ECE computed separately on the male and female side of a binary
/// partition, then averaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupedEce {
    pub group_value: f64,
    pub male_value: f64,
    pub female_value: f64,
    pub male_count: usize,
    pub female_count: usize,
    /// One side was empty; `group_value` is the other side's ECE.
    pub degenerate: bool,
}

/// Result type of [`gender_ece`].
pub type GenderEceResult = GroupedEce;

/// Average of the two side values, or the single side when the other is empty.
pub fn combine_sides(male: Option<f64>, female: Option<f64>) -> (f64, bool) {
    match (male, female) {
        (Some(m), Some(f)) => (0.5 * (m + f), false),
        (Some(v), None) | (None, Some(v)) => (v, true),
        (None, None) => (0.0, true),
    }
}

fn grouped_ece<F>(
    instances: &[ScoredInstance],
    scheme: BinningScheme,
    side: F,
) -> Result<GroupedEce>
where
    F: Fn(&ScoredInstance) -> Label,
{
    non_empty(instances)?;
    let (male, female): (Vec<_>, Vec<_>) = instances
        .iter()
        .cloned()
        .partition(|i| side(i) == Label::Male);
    let side_ece = |part: &[ScoredInstance]| -> Result<Option<f64>> {
        if part.is_empty() {
            Ok(None)
        } else {
            ece(part, scheme.for_subset(part.len())).map(Some)
        }
    };
    let male_value = side_ece(&male)?;
    let female_value = side_ece(&female)?;
    let (group_value, degenerate) = combine_sides(male_value, female_value);
    if degenerate {
        log::warn!(
            "grouped ECE is one-sided ({} male, {} female)",
            male.len(),
            female.len()
        );
    }
    Ok(GroupedEce {
        group_value,
        male_value: male_value.unwrap_or(0.0),
        female_value: female_value.unwrap_or(0.0),
        male_count: male.len(),
        female_count: female.len(),
        degenerate,
    })
}

/// Gender-ECE: partition by predicted class, ECE within each side (each side
/// normalized by its own size), then average.
pub fn gender_ece(instances: &[ScoredInstance], scheme: BinningScheme) -> Result<GenderEceResult> {
    grouped_ece(instances, scheme, |i| i.predicted)
}

/// Class-conditioned ECE: as [`gender_ece`] but partitioned on the true label.
pub fn cc_ece(instances: &[ScoredInstance], scheme: BinningScheme) -> Result<GroupedEce> {
    grouped_ece(instances, scheme, |i| i.label)
}

/// Selects the equivalence classes for [`subgroup_ece`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    /// Human label, keyed `"male"` / `"female"`.
    Label,
    /// Predicted class, keyed `"male"` / `"female"`.
    Predicted,
    /// The record's group tag (occupation, identity category, entity variant).
    GroupTag,
}

fn label_name(l: Label) -> &'static str {
    match l {
        Label::Male => "male",
        Label::Female => "female",
    }
}

/// ECE of every key class, computed independently.
pub fn subgroup_ece(
    instances: &[ScoredInstance],
    key: GroupKey,
    scheme: BinningScheme,
) -> Result<BTreeMap<String, f64>> {
    non_empty(instances)?;
    let mut classes: BTreeMap<String, Vec<ScoredInstance>> = BTreeMap::new();
    let mut missing = Vec::new();
    for inst in instances {
        let k = match key {
            GroupKey::Label => Some(label_name(inst.label).to_string()),
            GroupKey::Predicted => Some(label_name(inst.predicted).to_string()),
            GroupKey::GroupTag => inst.group_tag.clone(),
        };
        match k {
            Some(k) => classes.entry(k).or_default().push(inst.clone()),
            None => missing.push(Violation {
                instance_id: inst.instance_id.clone(),
                message: "no group tag".into(),
            }),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Validation(missing));
    }
    classes
        .into_iter()
        .map(|(k, members)| {
            let v = ece(&members, scheme.for_subset(members.len()))?;
            Ok((k, v))
        })
        .collect()
}

/// Mean of the per-class ECEs, class 0 measured on mirrored scores over the
/// same bins. In the binary case this equals [`ece`].
pub fn classwise_ece(instances: &[ScoredInstance], scheme: BinningScheme) -> Result<f64> {
    let (edges, members) = assign_bins(instances, scheme)?;
    let positive = summarize(
        instances,
        &edges,
        &members,
        |i| i.score,
        |i| i.label.as_f64(),
    );
    let negative = summarize(
        instances,
        &edges,
        &members,
        |i| 1.0 - i.score,
        |i| 1.0 - i.label.as_f64(),
    );
    Ok(0.5 * (ece_from_bins(&positive) + ece_from_bins(&negative)))
}

/// Fraction of instances whose preferred pronoun matches the human label.
pub fn human_alignment(instances: &[ScoredInstance]) -> Result<f64> {
    non_empty(instances)?;
    Ok(instances.iter().filter(|i| i.is_correct()).count() as f64 / instances.len() as f64)
}

/// One evaluation row for a (model, dataset) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_name: String,
    pub dataset_name: String,
    pub n: usize,
    pub scheme: BinningScheme,
    pub ece: f64,
    pub macro_ce: f64,
    pub macro_ce_one_sided: bool,
    pub ice: f64,
    pub brier: f64,
    pub gender_ece: GenderEceResult,
    pub cc_ece: GroupedEce,
    pub human_alignment: f64,
}

pub fn metric_report(
    instances: &[ScoredInstance],
    scheme: BinningScheme,
    model_name: &str,
    dataset_name: &str,
) -> Result<MetricReport> {
    non_empty(instances)?;
    let macro_ce = macro_ce(instances)?;
    Ok(MetricReport {
        model_name: model_name.to_string(),
        dataset_name: dataset_name.to_string(),
        n: instances.len(),
        scheme,
        ece: ece(instances, scheme)?,
        macro_ce: macro_ce.value,
        macro_ce_one_sided: macro_ce.one_sided,
        ice: ice(instances)?,
        brier: brier(instances)?,
        gender_ece: gender_ece(instances, scheme)?,
        cc_ece: cc_ece(instances, scheme)?,
        human_alignment: human_alignment(instances)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn insts(scores: &[f64], labels: &[u8]) -> Vec<ScoredInstance> {
        scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&s, &y))| {
                ScoredInstance::from_score(format!("i{i}"), s, Label::try_from(y).unwrap(), None)
            })
            .collect()
    }

    fn four() -> Vec<ScoredInstance> {
        insts(&[0.95, 0.85, 0.15, 0.30], &[1, 1, 0, 1])
    }

    const EW: BinningScheme = BinningScheme {
        mode: crate::binning::BinningMode::EqualWidth,
        bins: 10,
    };

    #[test]
    fn four_instance_example() {
        let data = four();
        // bins 9, 8, 1, 3 with gaps 0.05, 0.15, 0.15, 0.70
        let expected_ece = (0.05 + 0.15 + 0.15 + 0.70) / 4.0;
        assert!((ece(&data, EW).unwrap() - 0.2625).abs() < 1e-12);
        assert!((ece(&data, EW).unwrap() - expected_ece).abs() < 1e-12);
        assert!((ice(&data).unwrap() - 0.2625).abs() < 1e-12);
        assert!((brier(&data).unwrap() - 0.134375).abs() < 1e-12);
        let m = macro_ce(&data).unwrap();
        assert!((m.ice_pos - (0.05 + 0.15 + 0.15) / 3.0).abs() < 1e-12);
        assert!((m.ice_neg - 0.70).abs() < 1e-12);
        assert!((m.value - 0.408_333_333_333_333_3).abs() < 1e-12);
        assert!(!m.one_sided);
        assert_eq!(human_alignment(&data).unwrap(), 0.75);
        assert!((classwise_ece(&data, EW).unwrap() - 0.2625).abs() < 1e-12);
    }

    #[test]
    fn perfect_calibration_is_zero() {
        let data = insts(&[1.0, 1.0, 0.0, 0.0, 1.0], &[1, 1, 0, 0, 1]);
        assert_eq!(ece(&data, EW).unwrap(), 0.0);
        assert_eq!(ice(&data).unwrap(), 0.0);
        assert_eq!(brier(&data).unwrap(), 0.0);
        assert_eq!(human_alignment(&data).unwrap(), 1.0);

        // two instances at 0.25 and 0.75 in their bins with matching frequencies
        let data = insts(
            &[0.25, 0.25, 0.25, 0.25, 0.75, 0.75, 0.75, 0.75],
            &[1, 0, 0, 0, 1, 1, 1, 0],
        );
        assert_eq!(ece(&data, EW).unwrap(), 0.0);
    }

    #[test]
    fn ice_and_brier_small_cases() {
        assert_eq!(ice(&insts(&[0.5], &[1])).unwrap(), 0.5);
        let data = insts(&[0.5, 0.5, 0.5], &[1, 0, 1]);
        assert_eq!(brier(&data).unwrap(), 0.25);
    }

    #[test]
    fn macro_ce_one_sided() {
        let m = macro_ce(&insts(&[1.0, 1.0, 0.0], &[1, 1, 0])).unwrap();
        assert_eq!((m.value, m.one_sided), (0.0, true));
        let m = macro_ce(&insts(&[1.0, 0.0], &[0, 1])).unwrap();
        assert_eq!((m.value, m.ice_neg, m.one_sided), (0.5, 1.0, true));
    }

    #[test]
    fn empty_inputs_error() {
        assert!(ece(&[], EW).is_err());
        assert!(ice(&[]).is_err());
        assert!(brier(&[]).is_err());
        assert!(macro_ce(&[]).is_err());
        assert!(gender_ece(&[], EW).is_err());
        assert!(cc_ece(&[], EW).is_err());
        assert!(classwise_ece(&[], EW).is_err());
        assert!(human_alignment(&[]).is_err());
        assert!(subgroup_ece(&[], GroupKey::Label, EW).is_err());
        assert!(metric_report(&[], EW, "m", "d").is_err());
    }

    #[test]
    fn gender_ece_side_values() {
        // published male/female side values and their group averages
        assert!((combine_sides(Some(0.085), Some(0.066)).0 - 0.0755).abs() < 1e-12);
        assert!((combine_sides(Some(0.330), Some(0.204)).0 - 0.267).abs() < 1e-12);
    }

    #[test]
    fn gender_ece_degenerate() {
        let data = insts(&[0.9, 0.8, 0.7], &[1, 0, 1]);
        let g = gender_ece(&data, EW).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.female_count, 0);
        assert_eq!(g.group_value, ece(&data, EW).unwrap());
        assert_eq!(g.group_value, g.male_value);
    }

    #[test]
    fn cc_equals_gender_when_all_correct() {
        let data = insts(&[0.9, 0.8, 0.6, 0.2, 0.1, 0.45], &[1, 1, 1, 0, 0, 0]);
        assert_eq!(cc_ece(&data, EW).unwrap(), gender_ece(&data, EW).unwrap());
    }

    #[test]
    fn cc_ece_hand_enumeration() {
        let data = insts(&[0.9, 0.8, 0.4, 0.2, 0.3, 0.6], &[1, 1, 1, 0, 0, 0]);
        // label 1: bins 9, 8, 4 singletons, acc 1 -> gaps 0.1, 0.2, 0.6
        let male = (0.1 + 0.2 + 0.6) / 3.0;
        // label 0: bins 2, 3, 6 singletons, acc 0 -> gaps 0.2, 0.3, 0.6
        let female = (0.2 + 0.3 + 0.6) / 3.0;
        let cc = cc_ece(&data, EW).unwrap();
        assert!((cc.male_value - male).abs() < 1e-12);
        assert!((cc.female_value - female).abs() < 1e-12);
        assert!((cc.group_value - (male + female) / 2.0).abs() < 1e-12);
        assert!(!cc.degenerate);
    }

    #[test]
    fn cc_ece_single_label() {
        let data = insts(&[0.9, 0.3, 0.6], &[1, 1, 1]);
        let cc = cc_ece(&data, EW).unwrap();
        assert!(cc.degenerate);
        assert_eq!(cc.male_value, ece(&data, EW).unwrap());
    }

    #[test]
    fn subgroup_by_label_single_class() {
        let data = insts(&[0.9, 0.3, 0.6], &[1, 1, 1]);
        let m = subgroup_ece(&data, GroupKey::Label, EW).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m["male"], ece(&data, EW).unwrap());
    }

    #[test]
    fn subgroup_by_tag() {
        let mut data = Vec::new();
        for (g, scores, labels) in [
            ("gay", [0.9, 0.7, 0.2], [1, 0, 0]),
            ("trans", [0.9, 0.7, 0.2], [1, 0, 0]),
            ("queer", [0.55, 0.1, 0.99], [1, 1, 1]),
        ] {
            for (j, (s, y)) in scores.iter().zip(labels).enumerate() {
                data.push(ScoredInstance::from_score(
                    format!("{g}{j}"),
                    *s,
                    Label::try_from(y).unwrap(),
                    Some(g.to_string()),
                ));
            }
        }
        let m = subgroup_ece(&data, GroupKey::GroupTag, EW).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m["gay"], m["trans"]);
        for (g, v) in &m {
            let subset: Vec<_> = data
                .iter()
                .filter(|i| i.group_tag.as_deref() == Some(g))
                .cloned()
                .collect();
            assert_eq!(*v, ece(&subset, EW).unwrap());
        }
        // untagged instance
        data.push(ScoredInstance::from_score("x", 0.5, Label::Male, None));
        assert!(matches!(
            subgroup_ece(&data, GroupKey::GroupTag, EW),
            Err(Error::Validation(v)) if v.len() == 1
        ));
    }

    #[test]
    fn classwise_singleton() {
        let data = insts(&[0.7], &[1]);
        assert!((classwise_ece(&data, EW).unwrap() - 0.3).abs() < 1e-12);
        assert!((ece(&data, EW).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn alignment_complement() {
        let data = insts(&[0.9, 0.1], &[0, 1]);
        assert_eq!(human_alignment(&data).unwrap(), 0.0);
    }

    #[test]
    fn report_composition_and_roundtrip() {
        let r = metric_report(&four(), EW, "gpt-j-6b", "genderlex").unwrap();
        assert!((r.ece - 0.2625).abs() < 1e-12);
        assert!((r.ice - 0.2625).abs() < 1e-12);
        assert!((r.brier - 0.134375).abs() < 1e-12);
        assert!((r.macro_ce - 0.4083333333333333).abs() < 1e-12);
        assert_eq!(r.human_alignment, 0.75);
        assert_eq!(r.n, 4);
        let text = serde_json::to_string(&r).unwrap();
        let back: MetricReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    fn arb_instances() -> impl Strategy<Value = Vec<ScoredInstance>> {
        proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (s, y))| {
                    ScoredInstance::from_score(
                        format!("i{i}"),
                        s,
                        if y { Label::Male } else { Label::Female },
                        None,
                    )
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn brier_below_ice(data in arb_instances()) {
            prop_assert!(brier(&data).unwrap() <= ice(&data).unwrap() + 1e-15);
        }

        #[test]
        fn single_bin_ece(data in arb_instances()) {
            let n = data.len() as f64;
            let ms = data.iter().map(|i| i.score).sum::<f64>() / n;
            let my = data.iter().map(|i| i.label.as_f64()).sum::<f64>() / n;
            prop_assert_eq!(ece(&data, BinningScheme::equal_width(1)).unwrap(), (my - ms).abs());
        }

        #[test]
        fn metrics_in_unit_interval(data in arb_instances(), bins in 1usize..20) {
            let r = metric_report(&data, BinningScheme::equal_width(bins), "m", "d").unwrap();
            for v in [r.ece, r.ice, r.brier, r.macro_ce, r.human_alignment,
                      r.gender_ece.group_value, r.cc_ece.group_value] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }

        #[test]
        fn classwise_collapses(data in arb_instances(), bins in 1usize..20) {
            let scheme = BinningScheme::equal_width(bins);
            prop_assert!((classwise_ece(&data, scheme).unwrap() - ece(&data, scheme).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn gender_ece_symmetric(data in arb_instances()) {
            // mirroring scores and labels swaps the two partitions
            let mirrored: Vec<_> = data.iter().map(|i| ScoredInstance::from_score(
                i.instance_id.clone(), 1.0 - i.score,
                if i.label == Label::Male { Label::Female } else { Label::Male }, None)).collect();
            let a = gender_ece(&data, EW).unwrap();
            let b = gender_ece(&mirrored, EW).unwrap();
            // exact ties at 0.5 stay female on both sides, so compare only when absent
            if data.iter().all(|i| i.score != 0.5) {
                prop_assert_eq!(a.male_count, b.female_count);
                prop_assert!((a.group_value - b.group_value).abs() <= 1e-9);
            }
        }

        #[test]
        fn monotone_remap_keeps_partition(data in arb_instances(), power in 0.2f64..5.0) {
            // s -> s^p / (s^p + (1-s)^p) is strictly increasing and fixes 0.5
            let remapped: Vec<_> = data.iter().map(|i| {
                let (a, b) = (i.score.powf(power), (1.0 - i.score).powf(power));
                i.with_score(if i.score == 0.5 { 0.5 } else { a / (a + b) })
            }).collect();
            for (x, y) in data.iter().zip(&remapped) {
                prop_assert_eq!(x.predicted, y.predicted);
            }
            prop_assert_eq!(human_alignment(&data).unwrap(), human_alignment(&remapped).unwrap());
            let (g1, g2) = (gender_ece(&data, EW).unwrap(), gender_ece(&remapped, EW).unwrap());
            prop_assert_eq!((g1.male_count, g1.female_count), (g2.male_count, g2.female_count));
        }
    }
}

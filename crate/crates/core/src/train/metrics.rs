//! Answer, supporting-fact and joint scores in the HotpotQA style.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

/// Lowercase, drop punctuation and the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub em: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Exact match and token-overlap F1 after normalization.
pub fn answer_metrics(pred: &str, gold: &str) -> Prf {
    let (np, ng) = (normalize_answer(pred), normalize_answer(gold));
    let em = if np == ng { 1.0 } else { 0.0 };
    let zero = Prf {
        em,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    // yes/no answers score all or nothing
    if (matches!(np.as_str(), "yes" | "no") || matches!(ng.as_str(), "yes" | "no")) && np != ng {
        return zero;
    }
    let pt: Vec<&str> = np.split_whitespace().collect();
    let gt: Vec<&str> = ng.split_whitespace().collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return zero;
    }
    let precision = same as f64 / pt.len() as f64;
    let recall = same as f64 / gt.len() as f64;
    Prf {
        em,
        precision,
        recall,
        f1: f1_of(precision, recall),
    }
}

/// Set-level scores over (title, sentence index) pairs.
pub fn sf_metrics(pred: &BTreeSet<(String, usize)>, gold: &BTreeSet<(String, usize)>) -> Prf {
    let tp = pred.intersection(gold).count() as f64;
    let fp = pred.len() as f64 - tp;
    let fn_ = gold.len() as f64 - tp;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    Prf {
        em: if fp + fn_ == 0.0 { 1.0 } else { 0.0 },
        precision,
        recall,
        f1: f1_of(precision, recall),
    }
}

/// Products of answer and SF precision/recall; EM is the product of EMs.
pub fn joint_metrics(ans: &Prf, sf: &Prf) -> Prf {
    let precision = ans.precision * sf.precision;
    let recall = ans.recall * sf.recall;
    Prf {
        em: ans.em * sf.em,
        precision,
        recall,
        f1: f1_of(precision, recall),
    }
}

/// Per-instance scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceScores {
    pub answer: Prf,
    pub sf: Prf,
    pub joint: Prf,
}

pub fn score_instance(
    pred_answer: &str,
    gold_answer: &str,
    pred_sf: &BTreeSet<(String, usize)>,
    gold_sf: &BTreeSet<(String, usize)>,
) -> InstanceScores {
    let answer = answer_metrics(pred_answer, gold_answer);
    let sf = sf_metrics(pred_sf, gold_sf);
    InstanceScores {
        answer,
        sf,
        joint: joint_metrics(&answer, &sf),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ans_em: f64,
    pub ans_f1: f64,
    pub sf_em: f64,
    pub sf_f1: f64,
    pub joint_em: f64,
    pub joint_f1: f64,
    pub graph_coverage: f64,
}

impl MetricsReport {
    /// Means over instances; `graph_coverage` is supplied separately.
    pub fn aggregate(scores: &[InstanceScores], graph_coverage: f64) -> Self {
        if scores.is_empty() {
            return MetricsReport {
                graph_coverage,
                ..Default::default()
            };
        }
        let n = scores.len() as f64;
        let mean = |f: &dyn Fn(&InstanceScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
        MetricsReport {
            ans_em: mean(&|s| s.answer.em),
            ans_f1: mean(&|s| s.answer.f1),
            sf_em: mean(&|s| s.sf.em),
            sf_f1: mean(&|s| s.sf.f1),
            joint_em: mean(&|s| s.joint.em),
            joint_f1: mean(&|s| s.joint.f1),
            graph_coverage,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(items: &[(&str, usize)]) -> BTreeSet<(String, usize)> {
        items.iter().map(|(t, i)| (t.to_string(), *i)).collect()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The  Cat!"), "cat");
        assert_eq!(normalize_answer("an apple, a day"), "apple day");
        let m = answer_metrics("The Cat", "cat");
        assert_eq!((m.em, m.f1), (1.0, 1.0));
    }

    #[test]
    fn partial_overlap() {
        let m = answer_metrics("a b", "b c");
        // "a" is an article: pred normalizes to "b"
        assert_eq!(m.f1, 2.0 / 3.0);
        let m = answer_metrics("x b", "b c");
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let m = answer_metrics("", "x");
        assert_eq!((m.em, m.f1), (0.0, 0.0));
    }

    #[test]
    fn joint_examples() {
        let gold = set(&[("t1", 0), ("t2", 1)]);
        let s = score_instance("x", "x", &gold, &gold);
        assert_eq!((s.sf.em, s.sf.f1, s.joint.em, s.joint.f1), (1.0, 1.0, 1.0, 1.0));
        let s = score_instance("y", "x", &gold, &gold);
        assert_eq!(s.joint.f1, 0.0);
        let s = score_instance("x", "x", &set(&[("t1", 0)]), &gold);
        assert!((s.sf.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.joint.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn answer_metrics_are_symmetric(a in "[a-c ]{0,8}", b in "[a-c ]{0,8}") {
            let x = answer_metrics(&a, &b);
            let y = answer_metrics(&b, &a);
            prop_assert_eq!(x.em, y.em);
            prop_assert!((x.f1 - y.f1).abs() < 1e-12);
        }

        #[test]
        fn joint_em_is_bounded(a in "[ab]{1,2}", sf in proptest::collection::btree_set(0usize..3, 0..3)) {
            let pred: BTreeSet<_> = sf.into_iter().map(|i| ("t".to_string(), i)).collect();
            let s = score_instance(&a, "a", &pred, &set(&[("t", 0), ("t", 1)]));
            prop_assert!(s.joint.em <= s.answer.em.min(s.sf.em));
            prop_assert!(s.joint.f1 <= 1.0 && s.joint.f1 >= 0.0);
        }
    }
}

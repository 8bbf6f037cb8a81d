//! Evaluation measures: corpus-level BLEU-1/2, sequence-item accuracy,
//! mean average precision over per-video class scores, and mean per-class
//! frame accuracy for the p/q protocol.

use std::collections::BTreeMap;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Corpus-level BLEU-k: modified n-gram precisions aggregated over all
/// pairs, geometric mean over n <= k, times the brevity penalty
/// (1 if total candidate length exceeds total reference length, else
/// exp(1 - r/c)). Zero precision at any order gives 0. No smoothing.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>], max_n: usize) -> Result<f64> {
    if candidates.is_empty() || candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "bleu: {} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    if !(1..=2).contains(&max_n) {
        return Err(Error::Contract(format!("bleu: max_n={max_n} not in {{1,2}}")));
    }
    let cand_total: usize = candidates.iter().map(Vec::len).sum();
    let ref_total: usize = references.iter().map(Vec::len).sum();
    if cand_total == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (cand, reference) in candidates.iter().zip(references) {
            let cand_counts = ngram_counts(cand, n);
            let ref_counts = ngram_counts(reference, n);
            for (gram, count) in &cand_counts {
                total += count;
                matched += ref_counts.get(gram).map_or(0, |r| (*r).min(*count));
            }
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln() / max_n as f64;
    }
    let bp = if cand_total > ref_total {
        1.0
    } else {
        (1.0 - ref_total as f64 / cand_total as f64).exp()
    };
    Ok(bp * log_sum.exp())
}

fn ngram_counts(seq: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if seq.len() >= n {
        for window in seq.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Fraction of reference positions where the candidate matches exactly.
/// Positions beyond the shorter sequence count as misses.
pub fn seq_item_accuracy(candidate: &[String], reference: &[String]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Contract("seq_item_accuracy: empty reference".into()));
    }
    let matches = candidate
        .iter()
        .zip(reference)
        .filter(|(c, r)| c == r)
        .count();
    Ok(matches as f64 / reference.len() as f64)
}

/// Per-class ranking scores for one video against its ground-truth set.
#[derive(Debug, Clone)]
pub struct VideoClassScores {
    /// One score per class.
    pub scores: Vec<f64>,
    /// Ground-truth class presence flags, same length as `scores`.
    pub positives: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApBreakdown {
    /// Average precision per class with at least one positive, keyed by
    /// class index.
    pub per_class: BTreeMap<usize, f64>,
    /// Classes with no positive example, excluded from the mean.
    pub excluded: Vec<usize>,
    pub mean: f64,
}

/// Mean average precision over classes. Videos are ranked by score
/// descending; ties keep the stable input order. Precision is averaged at
/// each positive's rank. Classes with zero positives are excluded and
/// reported.
pub fn mean_ap(videos: &[VideoClassScores]) -> Result<ApBreakdown> {
    let Some(first) = videos.first() else {
        return Err(Error::Contract("mean_ap: empty corpus".into()));
    };
    let n_classes = first.scores.len();
    for v in videos {
        if v.scores.len() != n_classes || v.positives.len() != n_classes {
            return Err(Error::Contract(
                "mean_ap: inconsistent class count across videos".into(),
            ));
        }
        if v.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Contract("mean_ap: non-finite score".into()));
        }
    }
    let mut per_class = BTreeMap::new();
    let mut excluded = Vec::new();
    for class in 0..n_classes {
        let scores: Vec<f64> = videos.iter().map(|v| v.scores[class]).collect();
        let positives: Vec<bool> = videos.iter().map(|v| v.positives[class]).collect();
        if !positives.iter().any(|&p| p) {
            excluded.push(class);
            continue;
        }
        per_class.insert(class, average_precision(&scores, &positives));
    }
    if per_class.is_empty() {
        return Err(Error::Contract(
            "mean_ap: no class has a positive example".into(),
        ));
    }
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(ApBreakdown {
        per_class,
        excluded,
        mean,
    })
}

/// AP for one class; stable sort keeps input order among equal scores.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let total_pos = positives.iter().filter(|&&p| p).count();
    let mut seen_pos = 0usize;
    let mut ap = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if positives[idx] {
            seen_pos += 1;
            ap += seen_pos as f64 / (rank + 1) as f64;
        }
    }
    ap / total_pos as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerClassAccuracy {
    /// (correct, total) per class name, over classes with total > 0.
    pub per_class: BTreeMap<String, (usize, usize)>,
    pub mean: f64,
}

/// Mean per-class frame accuracy over a corpus of (predicted, true) frame
/// label sequences.
pub fn mean_per_class_frame_accuracy(
    videos: &[(Vec<String>, Vec<String>)],
) -> Result<PerClassAccuracy> {
    let mut per_class: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (pred, truth) in videos {
        if pred.len() != truth.len() {
            return Err(Error::Contract(format!(
                "frame accuracy: {} predictions vs {} labels",
                pred.len(),
                truth.len()
            )));
        }
        for (p, t) in pred.iter().zip(truth) {
            let entry = per_class.entry(t.clone()).or_insert((0, 0));
            entry.1 += 1;
            if p == t {
                entry.0 += 1;
            }
        }
    }
    if per_class.is_empty() {
        return Err(Error::Contract("frame accuracy: no target frames".into()));
    }
    let mean = per_class
        .values()
        .map(|(c, t)| *c as f64 / *t as f64)
        .sum::<f64>()
        / per_class.len() as f64;
    Ok(PerClassAccuracy { per_class, mean })
}

/// Evaluation outcome for one run, serialized as the structured report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub protocol: String,
    /// Flat metric values in [0, 1].
    pub metrics: BTreeMap<String, f64>,
    /// Per-class AP (sequence modes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ap: Option<ApBreakdown>,
    /// Per-cell per-class accuracy (frame modes), keyed by "p:q".
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub frame_accuracy: BTreeMap<String, PerClassAccuracy>,
    pub evaluated: usize,
    pub skipped: usize,
    /// Videos whose future decode terminated before emitting any symbol.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flagged_videos: Vec<String>,
    /// OT evaluations that hit the iteration cap, if the loss used OT.
    #[serde(default)]
    pub ot_warnings: usize,
    /// Effective run configuration, echoed for reproducibility.
    pub config: String,
}

impl EvalReport {
    pub fn new(model: &str, protocol: &str, config: String) -> EvalReport {
        EvalReport {
            model: model.to_string(),
            protocol: protocol.to_string(),
            metrics: BTreeMap::new(),
            ap: None,
            frame_accuracy: BTreeMap::new(),
            evaluated: 0,
            skipped: 0,
            flagged_videos: Vec::new(),
            ot_warnings: 0,
            config,
        }
    }

    /// Flat key=value rendering, deterministic order.
    pub fn to_flat_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("model={}\n", self.model));
        out.push_str(&format!("protocol={}\n", self.protocol));
        out.push_str(&format!("evaluated={}\n", self.evaluated));
        out.push_str(&format!("skipped={}\n", self.skipped));
        out.push_str(&format!("ot_warnings={}\n", self.ot_warnings));
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k}={v:.12}\n"));
        }
        for (cell, acc) in &self.frame_accuracy {
            out.push_str(&format!("frame_accuracy[{cell}]={:.12}\n", acc.mean));
        }
        if !self.flagged_videos.is_empty() {
            out.push_str(&format!("flagged={}\n", self.flagged_videos.join(",")));
        }
        out
    }

    /// Per-class tables as CSV.
    pub fn to_class_csv(&self) -> String {
        let mut out = String::from("table,key,class,value\n");
        if let Some(ap) = &self.ap {
            for (class, v) in &ap.per_class {
                out.push_str(&format!("ap,,{class},{v:.12}\n"));
            }
            for class in &ap.excluded {
                out.push_str(&format!("ap_excluded,,{class},\n"));
            }
        }
        for (cell, acc) in &self.frame_accuracy {
            for (class, (correct, total)) in &acc.per_class {
                out.push_str(&format!(
                    "frame_accuracy,{cell},{class},{:.12}\n",
                    *correct as f64 / *total as f64
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seqs(items: &[&[&str]]) -> Vec<Vec<String>> {
        items
            .iter()
            .map(|s| s.iter().map(|w| w.to_string()).collect())
            .collect()
    }

    #[test]
    fn bleu_perfect_match_is_one() {
        let c = seqs(&[&["a", "b"], &["c"]]);
        assert!((bleu(&c, &c, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((bleu(&c, &c, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!(bleu(&[], &[], 1).is_err());
    }

    #[test]
    fn bleu_hand_counted_precisions() {
        let cand = seqs(&[&["a", "b", "c"]]);
        let refs = seqs(&[&["a", "b", "d"]]);
        let b1 = bleu(&cand, &refs, 1).unwrap();
        assert!((b1 - 2.0 / 3.0).abs() < 1e-9, "{b1}");
        let b2 = bleu(&cand, &refs, 2).unwrap();
        assert!((b2 - (2.0f64 / 3.0 * 0.5).sqrt()).abs() < 1e-9, "{b2}");
    }

    #[test]
    fn bleu_zero_precision_and_empty_candidate() {
        let cand = seqs(&[&["x", "y"]]);
        let refs = seqs(&[&["a", "b"]]);
        assert_eq!(bleu(&cand, &refs, 1).unwrap(), 0.0);
        let empty = seqs(&[&[]]);
        assert_eq!(bleu(&empty, &refs, 1).unwrap(), 0.0);
    }

    #[test]
    fn bleu_brevity_penalty_applies_to_short_candidates() {
        let cand = seqs(&[&["a"]]);
        let refs = seqs(&[&["a", "b"]]);
        let b1 = bleu(&cand, &refs, 1).unwrap();
        assert!((b1 - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn seq_item_accuracy_cases() {
        let a = |s: &[&str]| -> Vec<String> { s.iter().map(|w| w.to_string()).collect() };
        assert_eq!(
            seq_item_accuracy(&a(&["x", "y"]), &a(&["x", "y"])).unwrap(),
            1.0
        );
        assert_eq!(
            seq_item_accuracy(&a(&["x", "y", "z"]), &a(&["x", "y", "z", "w"])).unwrap(),
            0.75
        );
        assert_eq!(seq_item_accuracy(&a(&["p"]), &a(&["q", "r"])).unwrap(), 0.0);
        assert!(seq_item_accuracy(&a(&["p"]), &a(&[])).is_err());
        // content beyond the shorter length is irrelevant
        assert_eq!(
            seq_item_accuracy(&a(&["x", "q", "q", "q"]), &a(&["x", "y"])).unwrap(),
            0.5
        );
    }

    #[test]
    fn ap_perfect_and_reversed_rankings() {
        let videos = vec![
            VideoClassScores {
                scores: vec![1.0],
                positives: vec![true],
            },
            VideoClassScores {
                scores: vec![0.0],
                positives: vec![false],
            },
        ];
        assert!((mean_ap(&videos).unwrap().mean - 1.0).abs() < 1e-12);

        let reversed = vec![
            VideoClassScores {
                scores: vec![1.0],
                positives: vec![false],
            },
            VideoClassScores {
                scores: vec![0.0],
                positives: vec![true],
            },
        ];
        assert!((mean_ap(&reversed).unwrap().mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ap_excludes_classes_without_positives() {
        let videos = vec![
            VideoClassScores {
                scores: vec![0.9, 0.1],
                positives: vec![true, false],
            },
            VideoClassScores {
                scores: vec![0.2, 0.8],
                positives: vec![true, false],
            },
        ];
        let out = mean_ap(&videos).unwrap();
        assert_eq!(out.excluded, vec![1]);
        assert_eq!(out.per_class.len(), 1);
    }

    /// Brute-force AP over an explicit video order.
    fn ap_for_order(order: &[usize], positives: &[bool]) -> f64 {
        let total = positives.iter().filter(|&&p| p).count();
        let mut seen = 0;
        let mut ap = 0.0;
        for (rank, &idx) in order.iter().enumerate() {
            if positives[idx] {
                seen += 1;
                ap += seen as f64 / (rank + 1) as f64;
            }
        }
        ap / total as f64
    }

    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for (i, &head) in items.iter().enumerate() {
            let rest: Vec<usize> = items
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, &x)| x)
                .collect();
            for mut tail in permutations(&rest) {
                tail.insert(0, head);
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn ap_ties_resolve_to_stable_input_order_within_brute_force_bounds() {
        // 4 videos, all scores tied; positives at inputs 1 and 3.
        let scores = vec![0.5, 0.5, 0.5, 0.5];
        let positives = vec![false, true, false, true];
        let ours = average_precision(&scores, &positives);
        let stable = ap_for_order(&[0, 1, 2, 3], &positives);
        assert!((ours - stable).abs() < 1e-12);
        let all: Vec<f64> = permutations(&[0, 1, 2, 3])
            .iter()
            .map(|o| ap_for_order(o, &positives))
            .collect();
        let worst = all.iter().cloned().fold(f64::INFINITY, f64::min);
        let best = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(ours >= worst - 1e-12 && ours <= best + 1e-12);

        // Mixed ties: videos 1 and 2 tie; stable order keeps 1 before 2.
        let scores = vec![0.9, 0.4, 0.4, 0.1];
        let positives = vec![false, true, false, true];
        let ours = average_precision(&scores, &positives);
        assert!((ours - ap_for_order(&[0, 1, 2, 3], &positives)).abs() < 1e-12);
    }

    #[test]
    fn frame_accuracy_hand_counts() {
        let v = |s: &[&str]| -> Vec<String> { s.iter().map(|w| w.to_string()).collect() };
        let perfect = vec![(v(&["a", "b"]), v(&["a", "b"]))];
        assert_eq!(mean_per_class_frame_accuracy(&perfect).unwrap().mean, 1.0);

        // constant predictor over two equally frequent classes
        let constant = vec![(v(&["a", "a", "a", "a"]), v(&["a", "a", "b", "b"]))];
        assert_eq!(mean_per_class_frame_accuracy(&constant).unwrap().mean, 0.5);

        // majority-class predictor on an imbalanced 3-class corpus:
        // truth has 4 a, 2 b, 1 c; predictor says a. per-class: 1, 0, 0.
        let majority = vec![(
            v(&["a", "a", "a", "a", "a", "a", "a"]),
            v(&["a", "a", "a", "a", "b", "b", "c"]),
        )];
        let out = mean_per_class_frame_accuracy(&majority).unwrap();
        assert!((out.mean - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(out.per_class["a"], (4, 4));
        assert_eq!(out.per_class["b"], (0, 2));

        let bad = vec![(v(&["a"]), v(&["a", "b"]))];
        assert!(mean_per_class_frame_accuracy(&bad).is_err());
    }

    proptest! {
        #[test]
        fn bleu1_dominates_bleu2_and_permutation_invariance(
            corpus in proptest::collection::vec(
                (
                    proptest::collection::vec(0u8..5, 0..6),
                    proptest::collection::vec(0u8..5, 1..6),
                ),
                1..8,
            ),
            swap in proptest::collection::vec(any::<bool>(), 8),
        ) {
            let to_words = |v: &Vec<u8>| v.iter().map(|x| x.to_string()).collect::<Vec<String>>();
            let cands: Vec<Vec<String>> = corpus.iter().map(|(c, _)| to_words(c)).collect();
            let refs: Vec<Vec<String>> = corpus.iter().map(|(_, r)| to_words(r)).collect();
            let b1 = bleu(&cands, &refs, 1).unwrap();
            let b2 = bleu(&cands, &refs, 2).unwrap();
            prop_assert!((0.0..=1.0).contains(&b1));
            prop_assert!(b1 >= b2 - 1e-12);

            // jointly permuting pairs leaves corpus metrics unchanged
            let mut idx: Vec<usize> = (0..corpus.len()).collect();
            for (i, s) in swap.iter().enumerate() {
                if *s && i + 1 < idx.len() {
                    idx.swap(i, i + 1);
                }
            }
            let pc: Vec<Vec<String>> = idx.iter().map(|&i| cands[i].clone()).collect();
            let pr: Vec<Vec<String>> = idx.iter().map(|&i| refs[i].clone()).collect();
            prop_assert!((bleu(&pc, &pr, 2).unwrap() - b2).abs() < 1e-12);

            let mean_acc = |cs: &[Vec<String>], rs: &[Vec<String>]| -> f64 {
                cs.iter().zip(rs)
                    .map(|(c, r)| seq_item_accuracy(c, r).unwrap())
                    .sum::<f64>() / cs.len() as f64
            };
            prop_assert!((mean_acc(&pc, &pr) - mean_acc(&cands, &refs)).abs() < 1e-12);
        }
    }
}

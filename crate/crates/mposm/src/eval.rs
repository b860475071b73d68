//! Clustering evaluation: many-to-one accuracy, the fixed-tag-per-type upper
//! bound, tag-context mutual information, cluster error reports, and
//! percent-perfect aggregation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::TagAssignment;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("token count mismatch: predicted {pred} vs gold {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("gold tags required but absent")]
    MissingGold,
    #[error("no valid positions for context {0:?}")]
    NoValidPositions(Vec<i64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct M1Result {
    /// Token accuracy in [0, 100] under the majority mapping.
    pub accuracy: f64,
    /// Predicted cluster id -> gold tag it maps to.
    pub mapping: BTreeMap<usize, String>,
    /// (cluster id, gold tag) -> overlap token count.
    pub confusion: Vec<(usize, String, u64)>,
    pub total_tokens: u64,
}

/// Many-to-one accuracy: each predicted cluster maps to the gold tag with the
/// largest overlap (ties broken by lexicographically smallest tag), then
/// mapped token accuracy is reported as a percentage.
pub fn many_to_one(pred: &TagAssignment, gold: &Corpus) -> Result<M1Result, EvalError> {
    let gold_stream = gold.gold_tag_stream().ok_or(EvalError::MissingGold)?;
    let pred_stream = pred.flat();
    if pred_stream.len() != gold_stream.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred_stream.len(),
            gold: gold_stream.len(),
        });
    }
    let mut counts: BTreeMap<usize, BTreeMap<&str, u64>> = BTreeMap::new();
    for (&c, &g) in pred_stream.iter().zip(&gold_stream) {
        *counts.entry(c).or_default().entry(g).or_default() += 1;
    }
    let mut mapping = BTreeMap::new();
    let mut correct = 0u64;
    let mut confusion = Vec::new();
    for (&cluster, by_tag) in &counts {
        // BTreeMap iteration is tag-sorted, so strict > keeps the
        // lexicographically smallest tag on ties.
        let (mut best_tag, mut best) = ("", 0u64);
        for (&tag, &n) in by_tag {
            confusion.push((cluster, tag.to_string(), n));
            if n > best {
                best = n;
                best_tag = tag;
            }
        }
        mapping.insert(cluster, best_tag.to_string());
        correct += best;
    }
    let total = gold_stream.len() as u64;
    Ok(M1Result {
        accuracy: correct as f64 / total as f64 * 100.0,
        mapping,
        confusion,
        total_tokens: total,
    })
}

/// M-1 of the assignment that gives every word type its own cluster, i.e. the
/// ceiling for any model that predicts a fixed tag per word type.
pub fn m1_upper_bound(gold: &Corpus) -> Result<f64, EvalError> {
    if !gold.has_gold_tags() {
        return Err(EvalError::MissingGold);
    }
    let mut by_type: HashMap<&str, BTreeMap<&str, u64>> = HashMap::new();
    let mut total = 0u64;
    for sent in &gold.sentences {
        let tags = sent.gold_tags.as_ref().expect("checked above");
        for (w, t) in sent.words.iter().zip(tags) {
            *by_type.entry(w.as_str()).or_default().entry(t).or_default() += 1;
            total += 1;
        }
    }
    let correct: u64 = by_type
        .values()
        .map(|tags| tags.values().copied().max().unwrap_or(0))
        .sum();
    Ok(correct as f64 / total as f64 * 100.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiReport {
    pub context_spec: Vec<i64>,
    pub mi_nats: f64,
    pub entropy_z: f64,
    pub n_positions: u64,
    /// (context tuple, tag, count), sorted for determinism.
    pub joint_counts: Vec<(Vec<String>, String, u64)>,
}

/// Plug-in mutual information between the tag tuple at the given relative
/// offsets and the tag itself, in nats. Positions whose context window leaves
/// the sentence are skipped.
pub fn tag_mutual_information(gold: &Corpus, context_spec: &[i64]) -> Result<MiReport, EvalError> {
    tag_mutual_information_with_base(gold, context_spec, std::f64::consts::E)
}

pub fn tag_mutual_information_with_base(
    gold: &Corpus,
    context_spec: &[i64],
    base: f64,
) -> Result<MiReport, EvalError> {
    if !gold.has_gold_tags() {
        return Err(EvalError::MissingGold);
    }
    let log = |x: f64| x.ln() / base.ln();
    let mut joint: BTreeMap<(Vec<String>, String), u64> = BTreeMap::new();
    let mut n = 0u64;
    for sent in &gold.sentences {
        let tags = sent.gold_tags.as_ref().expect("checked above");
        let len = tags.len() as i64;
        for i in 0..len {
            let ctx: Option<Vec<String>> = context_spec
                .iter()
                .map(|&off| {
                    let j = i + off;
                    if (0..len).contains(&j) {
                        Some(tags[j as usize].clone())
                    } else {
                        None
                    }
                })
                .collect();
            if let Some(ctx) = ctx {
                *joint.entry((ctx, tags[i as usize].clone())).or_default() += 1;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(EvalError::NoValidPositions(context_spec.to_vec()));
    }
    let nf = n as f64;
    let mut ctx_marginal: BTreeMap<&Vec<String>, u64> = BTreeMap::new();
    let mut tag_marginal: BTreeMap<&String, u64> = BTreeMap::new();
    for ((ctx, tag), &c) in &joint {
        *ctx_marginal.entry(ctx).or_default() += c;
        *tag_marginal.entry(tag).or_default() += c;
    }
    let mut mi = 0.0;
    for ((ctx, tag), &c) in &joint {
        let p_joint = c as f64 / nf;
        let p_ctx = ctx_marginal[ctx] as f64 / nf;
        let p_tag = tag_marginal[tag] as f64 / nf;
        mi += p_joint * log(p_joint / (p_ctx * p_tag));
    }
    let entropy_z = -tag_marginal
        .values()
        .map(|&c| {
            let p = c as f64 / nf;
            p * log(p)
        })
        .sum::<f64>();
    let joint_counts = joint
        .into_iter()
        .map(|((ctx, tag), c)| (ctx, tag, c))
        .collect();
    Ok(MiReport {
        context_spec: context_spec.to_vec(),
        mi_nats: mi.max(0.0),
        entropy_z,
        n_positions: n,
        joint_counts,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub cluster: usize,
    pub size: u64,
    pub majority_tag: String,
    pub purity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WordTagConflict {
    pub word: String,
    pub predicted_cluster: usize,
    /// Gold tags this word type takes, with counts.
    pub gold_tags: Vec<(String, u64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<ClusterInfo>,
    pub gold_cluster_sizes: Vec<(String, u64)>,
    pub total_tokens: u64,
    pub small_cluster_threshold: u64,
    pub small_predicted_clusters: usize,
    pub small_gold_clusters: usize,
    /// Gold tags that are no cluster's majority tag.
    pub unrecalled_gold_tags: Vec<String>,
    /// Word types with multiple gold tags but a single predicted cluster.
    pub multi_tag_conflicts: Vec<WordTagConflict>,
}

pub const DEFAULT_SMALL_CLUSTER_THRESHOLD: u64 = 3000;

pub fn cluster_report(pred: &TagAssignment, gold: &Corpus) -> Result<ClusterReport, EvalError> {
    cluster_report_with_threshold(pred, gold, DEFAULT_SMALL_CLUSTER_THRESHOLD)
}

pub fn cluster_report_with_threshold(
    pred: &TagAssignment,
    gold: &Corpus,
    threshold: u64,
) -> Result<ClusterReport, EvalError> {
    let gold_stream = gold.gold_tag_stream().ok_or(EvalError::MissingGold)?;
    let pred_stream = pred.flat();
    if pred_stream.len() != gold_stream.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred_stream.len(),
            gold: gold_stream.len(),
        });
    }
    let words = gold.word_stream();
    let mut cluster_counts: BTreeMap<usize, BTreeMap<&str, u64>> = BTreeMap::new();
    let mut gold_sizes: BTreeMap<&str, u64> = BTreeMap::new();
    let mut type_gold: HashMap<&str, BTreeMap<&str, u64>> = HashMap::new();
    let mut type_pred: HashMap<&str, BTreeMap<usize, u64>> = HashMap::new();
    for ((&c, &g), &w) in pred_stream.iter().zip(&gold_stream).zip(&words) {
        *cluster_counts.entry(c).or_default().entry(g).or_default() += 1;
        *gold_sizes.entry(g).or_default() += 1;
        *type_gold.entry(w).or_default().entry(g).or_default() += 1;
        *type_pred.entry(w).or_default().entry(c).or_default() += 1;
    }
    let mut clusters = Vec::new();
    let mut majority_tags: Vec<&str> = Vec::new();
    for (&cluster, by_tag) in &cluster_counts {
        let size: u64 = by_tag.values().sum();
        let (mut best_tag, mut best) = ("", 0u64);
        for (&tag, &n) in by_tag {
            if n > best {
                best = n;
                best_tag = tag;
            }
        }
        majority_tags.push(best_tag);
        clusters.push(ClusterInfo {
            cluster,
            size,
            majority_tag: best_tag.to_string(),
            purity: best as f64 / size as f64,
        });
    }
    let unrecalled_gold_tags: Vec<String> = gold_sizes
        .keys()
        .filter(|t| !majority_tags.contains(*t))
        .map(|t| t.to_string())
        .collect();
    let mut multi_tag_conflicts: Vec<WordTagConflict> = type_gold
        .iter()
        .filter(|(_, tags)| tags.len() > 1)
        .filter_map(|(&w, tags)| {
            let preds = &type_pred[w];
            if preds.len() == 1 {
                Some(WordTagConflict {
                    word: w.to_string(),
                    predicted_cluster: *preds.keys().next().expect("len 1"),
                    gold_tags: tags.iter().map(|(&t, &c)| (t.to_string(), c)).collect(),
                })
            } else {
                None
            }
        })
        .collect();
    multi_tag_conflicts.sort_by(|a, b| a.word.cmp(&b.word));
    let small_predicted_clusters = clusters.iter().filter(|c| c.size < threshold).count();
    let small_gold_clusters = gold_sizes.values().filter(|&&s| s < threshold).count();
    Ok(ClusterReport {
        clusters,
        gold_cluster_sizes: gold_sizes
            .into_iter()
            .map(|(t, c)| (t.to_string(), c))
            .collect(),
        total_tokens: gold_stream.len() as u64,
        small_cluster_threshold: threshold,
        small_predicted_clusters,
        small_gold_clusters,
        unrecalled_gold_tags,
        multi_tag_conflicts,
    })
}

/// Percent of runs whose M-1 equals 100 (after rounding to 1e-9).
pub fn percent_perfect(m1_scores: &[f64]) -> f64 {
    assert!(!m1_scores.is_empty(), "percent_perfect of empty list");
    let perfect = m1_scores
        .iter()
        .filter(|&&s| ((s - 100.0) * 1e9).round() == 0.0)
        .count();
    perfect as f64 / m1_scores.len() as f64 * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;
    use crate::model::TagSource;

    fn gold_corpus(tags: &[&[&str]]) -> Corpus {
        Corpus::new(
            "g",
            tags.iter()
                .map(|sent| {
                    let words: Vec<String> = (0..sent.len()).map(|i| format!("w{i}")).collect();
                    Sentence::new(words, Some(sent.iter().map(|t| t.to_string()).collect()))
                        .unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    fn assignment(tags: &[&[usize]]) -> TagAssignment {
        TagAssignment {
            tags: tags.iter().map(|s| s.to_vec()).collect(),
            source: TagSource::LocalArgmax,
        }
    }

    #[test]
    fn perfect_clustering_scores_100() {
        let gold = gold_corpus(&[&["N", "N", "V", "V"]]);
        let pred = assignment(&[&[0, 0, 1, 1]]);
        let r = many_to_one(&pred, &gold).unwrap();
        assert_eq!(r.accuracy, 100.0);
    }

    #[test]
    fn majority_mapping_example() {
        let gold = gold_corpus(&[&["N", "V", "N", "V"]]);
        let pred = assignment(&[&[0, 0, 0, 1]]);
        let r = many_to_one(&pred, &gold).unwrap();
        assert_eq!(r.accuracy, 75.0);
        assert_eq!(r.mapping[&0], "N");
        assert_eq!(r.mapping[&1], "V");
    }

    #[test]
    fn relabeling_clusters_preserves_accuracy() {
        let gold = gold_corpus(&[&["A", "B", "A", "C", "B"]]);
        let pred = assignment(&[&[0, 1, 0, 2, 1]]);
        let relabeled = assignment(&[&[7, 3, 7, 0, 3]]);
        let a = many_to_one(&pred, &gold).unwrap().accuracy;
        let b = many_to_one(&relabeled, &gold).unwrap().accuracy;
        assert_eq!(a, b);
    }

    #[test]
    fn majority_tie_breaks_lexicographically() {
        let gold = gold_corpus(&[&["B", "A"]]);
        let pred = assignment(&[&[0, 0]]);
        let r = many_to_one(&pred, &gold).unwrap();
        assert_eq!(r.mapping[&0], "A");
    }

    #[test]
    fn length_mismatch_is_error() {
        let gold = gold_corpus(&[&["A", "B"]]);
        let pred = assignment(&[&[0]]);
        assert!(matches!(
            many_to_one(&pred, &gold),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn upper_bound_unique_types_is_100() {
        let gold = Corpus::new(
            "g",
            vec![Sentence::new(
                vec!["a".into(), "b".into()],
                Some(vec!["X".into(), "Y".into()]),
            )
            .unwrap()],
        )
        .unwrap();
        assert_eq!(m1_upper_bound(&gold).unwrap(), 100.0);
    }

    #[test]
    fn upper_bound_majority_rule() {
        // "that" 2x IN, 1x WDT -> 2 of its 3 tokens correct.
        let gold = Corpus::new(
            "g",
            vec![Sentence::new(
                vec!["that".into(), "that".into(), "that".into()],
                Some(vec!["IN".into(), "IN".into(), "WDT".into()]),
            )
            .unwrap()],
        )
        .unwrap();
        let ub = m1_upper_bound(&gold).unwrap();
        assert!((ub - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn alternating_corpus_mi_is_ln2() {
        let tags: Vec<&str> = (0..1000)
            .map(|i| if i % 2 == 0 { "A" } else { "B" })
            .collect();
        let gold = gold_corpus(&[&tags]);
        let r = tag_mutual_information(&gold, &[-1]).unwrap();
        assert!(
            (r.mi_nats - std::f64::consts::LN_2).abs() < 1e-6,
            "{}",
            r.mi_nats
        );
        assert!((r.entropy_z - std::f64::consts::LN_2).abs() < 1e-3);
    }

    #[test]
    fn mi_matches_brute_force_counts() {
        // Independent double-loop oracle over a small random corpus.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(4);
        let tag_names = ["A", "B", "C"];
        let sents: Vec<Vec<&str>> = (0..50)
            .map(|_| {
                (0..rng.random_range(1..12usize))
                    .map(|_| tag_names[rng.random_range(0..3)])
                    .collect()
            })
            .collect();
        let refs: Vec<&[&str]> = sents.iter().map(|s| s.as_slice()).collect();
        let gold = gold_corpus(&refs);
        let spec = [-2i64, -1];
        let r = tag_mutual_information(&gold, &spec).unwrap();

        // Oracle: explicit joint/marginal tables, direct formula.
        let mut joint: HashMap<(String, String, String), f64> = HashMap::new();
        let mut n = 0.0;
        for s in &sents {
            for i in 0..s.len() {
                if i >= 2 {
                    *joint
                        .entry((s[i - 2].into(), s[i - 1].into(), s[i].into()))
                        .or_default() += 1.0;
                    n += 1.0;
                }
            }
        }
        let mut pc: HashMap<(String, String), f64> = HashMap::new();
        let mut pz: HashMap<String, f64> = HashMap::new();
        for ((a, b, z), c) in &joint {
            *pc.entry((a.clone(), b.clone())).or_default() += c;
            *pz.entry(z.clone()).or_default() += c;
        }
        let mut mi = 0.0;
        for ((a, b, z), c) in &joint {
            let pj = c / n;
            mi += pj * (pj / (pc[&(a.clone(), b.clone())] / n * pz[z] / n)).ln();
        }
        assert!((r.mi_nats - mi).abs() < 1e-12);
        assert_eq!(r.n_positions as f64, n);
    }

    #[test]
    fn iid_uniform_tags_have_near_zero_mi() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let tags: Vec<&str> = (0..1_000_000)
            .map(|_| if rng.random_bool(0.5) { "A" } else { "B" })
            .collect();
        let gold = gold_corpus(&[&tags]);
        let r = tag_mutual_information(&gold, &[-1]).unwrap();
        assert!(r.mi_nats <= 0.01, "{}", r.mi_nats);
    }

    #[test]
    fn mi_error_when_no_valid_positions() {
        let gold = gold_corpus(&[&["A"]]);
        assert!(matches!(
            tag_mutual_information(&gold, &[-5]),
            Err(EvalError::NoValidPositions(_))
        ));
    }

    #[test]
    fn cluster_report_perfect_purity_and_sums() {
        let gold = gold_corpus(&[&["N", "N", "V"]]);
        let pred = assignment(&[&[0, 0, 1]]);
        let r = cluster_report(&pred, &gold).unwrap();
        assert!(r.clusters.iter().all(|c| c.purity == 1.0));
        let sum: u64 = r.clusters.iter().map(|c| c.size).sum();
        assert_eq!(sum, r.total_tokens);
        assert!(r.unrecalled_gold_tags.is_empty());
    }

    #[test]
    fn cluster_report_flags_multi_tag_types() {
        let gold = Corpus::new(
            "g",
            vec![Sentence::new(
                vec!["that".into(), "that".into(), "dog".into()],
                Some(vec!["IN".into(), "WDT".into(), "NN".into()]),
            )
            .unwrap()],
        )
        .unwrap();
        let pred = assignment(&[&[0, 0, 1]]);
        let r = cluster_report(&pred, &gold).unwrap();
        assert_eq!(r.multi_tag_conflicts.len(), 1);
        assert_eq!(r.multi_tag_conflicts[0].word, "that");
    }

    #[test]
    fn percent_perfect_arithmetic() {
        let p = percent_perfect(&[100.0, 100.0, 90.0]);
        assert!((p - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(percent_perfect(&[100.0, 100.0]), 100.0);
        assert_eq!(percent_perfect(&[99.9]), 0.0);
    }
}

//! Property tests for the evaluation and data invariants, checked against
//! brute-force oracles on randomly generated cases.

use std::collections::{BTreeMap, HashMap};

use mposm::corpus::{build_vocabulary, rechunk, Corpus, Sentence};
use mposm::eval::{many_to_one, percent_perfect};
use mposm::model::{TagAssignment, TagSource};
use mposm::synth::{enumerate_tag_sequences, generate_dataset, SynthVariant, SyntheticSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn make_pair(pred: &[usize], gold: &[u8]) -> (TagAssignment, Corpus) {
    assert_eq!(pred.len(), gold.len());
    let words: Vec<String> = (0..gold.len()).map(|i| format!("w{i}")).collect();
    let tags: Vec<String> = gold.iter().map(|g| format!("g{g}")).collect();
    let corpus = Corpus::new("prop", vec![Sentence::new(words, Some(tags)).unwrap()]).unwrap();
    let assignment = TagAssignment {
        tags: vec![pred.to_vec()],
        source: TagSource::LocalArgmax,
    };
    (assignment, corpus)
}

/// Independent many-to-one oracle: per-cluster best gold overlap, found by
/// scanning every (cluster, tag) pair.
fn m1_oracle(pred: &[usize], gold: &[u8]) -> f64 {
    let mut overlap: HashMap<(usize, u8), u64> = HashMap::new();
    for (&c, &g) in pred.iter().zip(gold) {
        *overlap.entry((c, g)).or_default() += 1;
    }
    let mut best: BTreeMap<usize, u64> = BTreeMap::new();
    for (&(c, _), &n) in &overlap {
        let e = best.entry(c).or_default();
        if n > *e {
            *e = n;
        }
    }
    best.values().sum::<u64>() as f64 / pred.len() as f64 * 100.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn m1_matches_brute_force_oracle(
        case in prop::collection::vec((0usize..6, 0u8..5), 1..60)
    ) {
        let pred: Vec<usize> = case.iter().map(|&(c, _)| c).collect();
        let gold: Vec<u8> = case.iter().map(|&(_, g)| g).collect();
        let (assignment, corpus) = make_pair(&pred, &gold);
        let got = many_to_one(&assignment, &corpus).unwrap().accuracy;
        let expected = m1_oracle(&pred, &gold);
        prop_assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn m1_is_invariant_under_cluster_relabeling(
        case in prop::collection::vec((0usize..6, 0u8..5), 1..60),
        perm_seed in 0u64..1000
    ) {
        let pred: Vec<usize> = case.iter().map(|&(c, _)| c).collect();
        let gold: Vec<u8> = case.iter().map(|&(_, g)| g).collect();
        // Permute cluster ids with a random bijection on 0..6.
        let mut perm: Vec<usize> = (0..6).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(perm_seed);
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let relabeled: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let (a1, c1) = make_pair(&pred, &gold);
        let (a2, c2) = make_pair(&relabeled, &gold);
        let x = many_to_one(&a1, &c1).unwrap().accuracy;
        let y = many_to_one(&a2, &c2).unwrap().accuracy;
        prop_assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn m1_never_decreases_under_refinement(
        case in prop::collection::vec((0usize..4, 0u8..4), 1..60),
        split_cluster in 0usize..4,
        split_mask in prop::collection::vec(any::<bool>(), 60)
    ) {
        let pred: Vec<usize> = case.iter().map(|&(c, _)| c).collect();
        let gold: Vec<u8> = case.iter().map(|&(_, g)| g).collect();
        // Refine: move a random subset of one cluster into a fresh cluster id.
        let refined: Vec<usize> = pred
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if c == split_cluster && split_mask[i] {
                    4 + split_cluster
                } else {
                    c
                }
            })
            .collect();
        let (a1, c1) = make_pair(&pred, &gold);
        let (a2, c2) = make_pair(&refined, &gold);
        let coarse = many_to_one(&a1, &c1).unwrap().accuracy;
        let fine = many_to_one(&a2, &c2).unwrap().accuracy;
        prop_assert!(fine >= coarse - 1e-12, "refinement dropped m1: {coarse} -> {fine}");
    }

    #[test]
    fn percent_perfect_counts_only_hundreds(scores in prop::collection::vec(0.0f64..=100.0, 1..40)) {
        let pct = percent_perfect(&scores);
        let exact = scores.iter().filter(|&&s| s >= 100.0 - 1e-9).count() as f64
            / scores.len() as f64
            * 100.0;
        prop_assert!((pct - exact).abs() < 1e-9);
    }

    #[test]
    fn rechunking_conserves_the_token_multiset(seed in 0u64..500) {
        let spec = SyntheticSpec {
            variant: SynthVariant::D0,
            n_sentences: 40,
            seed,
            ..SyntheticSpec::default()
        };
        let (corpus, _) = generate_dataset(&spec);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 1);
        let rechunked = rechunk(&corpus, &mut rng);
        let count = |c: &Corpus| {
            let mut m: BTreeMap<String, u64> = BTreeMap::new();
            for s in &c.sentences {
                for w in &s.words {
                    *m.entry(w.clone()).or_default() += 1;
                }
            }
            m
        };
        prop_assert_eq!(count(&corpus), count(&rechunked));
    }

    #[test]
    fn generated_gold_sequences_always_match_the_grammar(
        seed in 0u64..300,
        variant_idx in 0usize..3
    ) {
        let variant = [SynthVariant::D0, SynthVariant::Morph, SynthVariant::D24][variant_idx];
        let spec = SyntheticSpec {
            variant,
            n_sentences: 30,
            seed,
            ..SyntheticSpec::default()
        };
        let (corpus, _) = generate_dataset(&spec);
        let valid: Vec<Vec<&str>> = enumerate_tag_sequences(variant);
        for s in &corpus.sentences {
            let tags: Vec<&str> =
                s.gold_tags.as_ref().unwrap().iter().map(|t| t.as_str()).collect();
            prop_assert!(valid.contains(&tags), "invalid gold {tags:?}");
        }
    }

    #[test]
    fn vocabulary_ids_are_dense_and_stable(seed in 0u64..300) {
        let spec = SyntheticSpec {
            variant: SynthVariant::D24,
            n_sentences: 20,
            seed,
            ..SyntheticSpec::default()
        };
        let (corpus, _) = generate_dataset(&spec);
        let vocab = build_vocabulary(&corpus);
        let again = build_vocabulary(&corpus);
        prop_assert_eq!(vocab.hash64(), again.hash64());
        for (id, word) in vocab.id_to_word.iter().enumerate() {
            prop_assert_eq!(vocab.word_id(word), id);
        }
        prop_assert_eq!(vocab.unk_id, vocab.size());
    }
}

//! Controlled agreement-learning datasets generated from three fixed
//! tag-level regular expressions, with symmetric n1/v1 vs n2/v2 branches and
//! (optionally) morphological suffixes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::corpus::{Corpus, Sentence, MASK_TOKEN, UNK_TOKEN};

pub const SYNTH_TAGS: [&str; 6] = ["n1", "n2", "v1", "v2", "o1", "o2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthVariant {
    /// (o1 o2){1,2}(n1 v1 | n2 v2) — n and v adjacent.
    D0,
    /// Same tag regex as D0, but every word carries its tag as a suffix.
    Morph,
    /// (o1 o2){1,2}(n1 (o1 o2){1,2} v1 | n2 (o1 o2){1,2} v2) — n and v
    /// separated by 2-4 tokens.
    D24,
}

impl SynthVariant {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d0" => Some(SynthVariant::D0),
            "morph" => Some(SynthVariant::Morph),
            "d24" | "d2-4" | "d(2-4)" => Some(SynthVariant::D24),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SynthVariant::D0 => "d0",
            SynthVariant::Morph => "morph",
            SynthVariant::D24 => "d24",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub variant: SynthVariant,
    pub n_sentences: usize,
    pub words_per_tag: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            variant: SynthVariant::D0,
            n_sentences: 40_000,
            words_per_tag: 5,
            seed: 0,
        }
    }
}

/// tag name -> its word inventory, in SYNTH_TAGS order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub words: Vec<Vec<String>>,
}

impl Lexicon {
    pub fn words_for(&self, tag: &str) -> &[String] {
        let idx = SYNTH_TAGS
            .iter()
            .position(|t| *t == tag)
            .expect("known tag");
        &self.words[idx]
    }
}

fn random_stem<R: Rng>(rng: &mut R, min: usize, max: usize) -> String {
    let len = rng.random_range(min..=max);
    (0..len)
        .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
        .collect()
}

pub fn make_lexicon(spec: &SyntheticSpec) -> Lexicon {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed ^ 0x006c_6578_6963_6f6e);
    let mut seen: HashSet<String> = HashSet::new();
    seen.insert(MASK_TOKEN.to_string());
    seen.insert(UNK_TOKEN.to_string());
    let mut words = Vec::with_capacity(SYNTH_TAGS.len());
    for tag in SYNTH_TAGS {
        let mut tag_words = Vec::with_capacity(spec.words_per_tag);
        while tag_words.len() < spec.words_per_tag {
            let word = match spec.variant {
                SynthVariant::Morph => format!("{}-{}", random_stem(&mut rng, 3, 6), tag),
                _ => random_stem(&mut rng, 4, 8),
            };
            if seen.insert(word.clone()) {
                tag_words.push(word);
            }
        }
        words.push(tag_words);
    }
    Lexicon { words }
}

/// One tag sequence matching the variant's regex; repetition counts and the
/// n1/n2 branch are chosen uniformly and independently.
pub fn sample_tag_sequence<R: Rng>(variant: SynthVariant, rng: &mut R) -> Vec<&'static str> {
    let prefix_reps = rng.random_range(1..=2usize);
    let branch_one = rng.random_bool(0.5);
    match variant {
        SynthVariant::D24 => {
            let mid_reps = rng.random_range(1..=2usize);
            expand_template(variant, prefix_reps, Some(mid_reps), branch_one)
        }
        _ => expand_template(variant, prefix_reps, None, branch_one),
    }
}

fn expand_template(
    variant: SynthVariant,
    prefix_reps: usize,
    mid_reps: Option<usize>,
    branch_one: bool,
) -> Vec<&'static str> {
    let mut tags = Vec::new();
    for _ in 0..prefix_reps {
        tags.push("o1");
        tags.push("o2");
    }
    let (n, v) = if branch_one {
        ("n1", "v1")
    } else {
        ("n2", "v2")
    };
    tags.push(n);
    if matches!(variant, SynthVariant::D24) {
        for _ in 0..mid_reps.expect("mid reps required for D24") {
            tags.push("o1");
            tags.push("o2");
        }
    }
    tags.push(v);
    tags
}

/// All tag sequences a variant can produce. Small enough to enumerate; used
/// both by tests and by the analyze tooling as an independent validity check.
pub fn enumerate_tag_sequences(variant: SynthVariant) -> Vec<Vec<&'static str>> {
    let mut out = Vec::new();
    for prefix in 1..=2 {
        for &branch in &[true, false] {
            match variant {
                SynthVariant::D24 => {
                    for mid in 1..=2 {
                        out.push(expand_template(variant, prefix, Some(mid), branch));
                    }
                }
                _ => out.push(expand_template(variant, prefix, None, branch)),
            }
        }
    }
    out
}

/// Generate the full corpus with gold tags. Sentences come in mirrored pairs:
/// each sampled template is emitted once with the (n1, v1) branch and once
/// with (n2, v2), with identical repetition counts; word draws within a tag
/// stay independent per copy.
pub fn generate_dataset(spec: &SyntheticSpec) -> (Corpus, Lexicon) {
    let lexicon = make_lexicon(spec);
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let n_sentences = if spec.n_sentences % 2 == 1 {
        eprintln!(
            "warning: n_sentences {} is odd; rounding up to {}",
            spec.n_sentences,
            spec.n_sentences + 1
        );
        spec.n_sentences + 1
    } else {
        spec.n_sentences
    };
    let mut sentences = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences / 2 {
        let prefix_reps = rng.random_range(1..=2usize);
        let mid_reps = match spec.variant {
            SynthVariant::D24 => Some(rng.random_range(1..=2usize)),
            _ => None,
        };
        for &branch_one in &[true, false] {
            let tags = expand_template(spec.variant, prefix_reps, mid_reps, branch_one);
            let words: Vec<String> = tags
                .iter()
                .map(|tag| {
                    let inventory = lexicon.words_for(tag);
                    inventory[rng.random_range(0..inventory.len())].clone()
                })
                .collect();
            let gold: Vec<String> = tags.iter().map(|t| t.to_string()).collect();
            sentences.push(Sentence {
                words,
                gold_tags: Some(gold),
            });
        }
    }
    let corpus = Corpus {
        name: format!("synth-{}", spec.variant.name()),
        sentences,
    };
    (corpus, lexicon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn d0_lengths_are_4_or_6() {
        let lens: HashSet<usize> = enumerate_tag_sequences(SynthVariant::D0)
            .iter()
            .map(|s| s.len())
            .collect();
        assert_eq!(lens, HashSet::from([4, 6]));
    }

    #[test]
    fn d24_lengths_are_6_8_or_10() {
        let lens: HashSet<usize> = enumerate_tag_sequences(SynthVariant::D24)
            .iter()
            .map(|s| s.len())
            .collect();
        assert_eq!(lens, HashSet::from([6, 8, 10]));
    }

    #[test]
    fn sampled_sequences_match_the_regex() {
        let valid: HashSet<Vec<&str>> = enumerate_tag_sequences(SynthVariant::D24)
            .into_iter()
            .collect();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..500 {
            let seq = sample_tag_sequence(SynthVariant::D24, &mut rng);
            assert!(valid.contains(&seq), "invalid sequence {seq:?}");
        }
        let valid: HashSet<Vec<&str>> = enumerate_tag_sequences(SynthVariant::D0)
            .into_iter()
            .collect();
        for _ in 0..500 {
            let seq = sample_tag_sequence(SynthVariant::D0, &mut rng);
            assert!(valid.contains(&seq), "invalid sequence {seq:?}");
        }
    }

    #[test]
    fn d24_agreement_distance_is_2_to_4() {
        for seq in enumerate_tag_sequences(SynthVariant::D24) {
            let n = seq.iter().position(|t| t.starts_with('n')).unwrap();
            let v = seq.iter().position(|t| t.starts_with('v')).unwrap();
            let between = v - n - 1;
            assert!((2..=4).contains(&between), "distance {between}");
            assert_eq!(seq[n].as_bytes()[1], seq[v].as_bytes()[1]);
        }
    }

    #[test]
    fn lexicon_is_deterministic_and_distinct() {
        let spec = SyntheticSpec {
            variant: SynthVariant::D0,
            seed: 5,
            ..Default::default()
        };
        let a = make_lexicon(&spec);
        let b = make_lexicon(&spec);
        assert_eq!(a, b);
        let all: HashSet<&String> = a.words.iter().flatten().collect();
        assert_eq!(all.len(), 6 * spec.words_per_tag);
        assert!(!all.contains(&MASK_TOKEN.to_string()));
        assert!(!all.contains(&UNK_TOKEN.to_string()));
    }

    #[test]
    fn morph_words_carry_tag_suffix() {
        let spec = SyntheticSpec {
            variant: SynthVariant::Morph,
            seed: 2,
            ..Default::default()
        };
        let lex = make_lexicon(&spec);
        for (i, tag) in SYNTH_TAGS.iter().enumerate() {
            for w in &lex.words[i] {
                assert!(w.ends_with(&format!("-{tag}")), "{w} lacks -{tag}");
            }
        }
    }

    #[test]
    fn dataset_branches_are_exactly_symmetric() {
        let spec = SyntheticSpec {
            variant: SynthVariant::D0,
            n_sentences: 2000,
            seed: 9,
            ..Default::default()
        };
        let (corpus, _) = generate_dataset(&spec);
        assert_eq!(corpus.sentences.len(), 2000);
        let mut with_n1 = 0;
        let mut with_n2 = 0;
        for s in &corpus.sentences {
            let tags = s.gold_tags.as_ref().unwrap();
            let has_n1 = tags.iter().any(|t| t == "n1");
            let has_n2 = tags.iter().any(|t| t == "n2");
            // branches are exclusive and complete
            assert!(has_n1 ^ has_n2);
            if has_n1 {
                with_n1 += 1;
                assert!(tags.iter().any(|t| t == "v1"));
                assert!(!tags.iter().any(|t| t == "v2"));
            } else {
                with_n2 += 1;
                assert!(tags.iter().any(|t| t == "v2"));
                assert!(!tags.iter().any(|t| t == "v1"));
            }
        }
        assert_eq!(with_n1, with_n2);
    }

    #[test]
    fn same_seed_regenerates_identical_corpus() {
        let spec = SyntheticSpec {
            variant: SynthVariant::D24,
            n_sentences: 100,
            seed: 42,
            ..Default::default()
        };
        let (a, la) = generate_dataset(&spec);
        let (b, lb) = generate_dataset(&spec);
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn odd_n_sentences_rounds_up() {
        let spec = SyntheticSpec {
            variant: SynthVariant::D0,
            n_sentences: 7,
            seed: 1,
            ..Default::default()
        };
        let (c, _) = generate_dataset(&spec);
        assert_eq!(c.sentences.len(), 8);
    }
}

//! Length-bucketed, padded mini-batches over id-mapped sentences.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Corpus, Vocabulary};

/// One padded mini-batch. Sentences are grouped by similar length; shorter
/// ones are padded with word id 0 and excluded from masking and loss via the
/// length information.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Indices into the source corpus.
    pub sentence_ids: Vec<usize>,
    /// [B][max_len] padded word ids.
    pub word_ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
    /// Flat token offset of each sentence in the source corpus (for
    /// feature-file alignment).
    pub token_offsets: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.sentence_ids.len()
    }
}

pub fn map_sentences(corpus: &Corpus, vocab: &Vocabulary) -> Vec<Vec<usize>> {
    corpus
        .sentences
        .iter()
        .map(|s| s.words.iter().map(|w| vocab.word_id(w)).collect())
        .collect()
}

/// Shuffle sentences, sort stably by length so each chunk is near-uniform,
/// chunk into batches, then shuffle batch order.
pub fn make_batches<R: Rng>(
    sentences: &[Vec<usize>],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| sentences[i].len());
    let token_offsets = flat_offsets(sentences);
    let mut batches: Vec<Batch> = order
        .chunks(batch_size.max(1))
        .map(|chunk| build_batch(sentences, chunk, &token_offsets))
        .collect();
    batches.shuffle(rng);
    batches
}

/// Deterministic batches in corpus order (evaluation / prediction).
pub fn make_eval_batches(sentences: &[Vec<usize>], batch_size: usize) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.sort_by_key(|&i| sentences[i].len());
    let token_offsets = flat_offsets(sentences);
    order
        .chunks(batch_size.max(1))
        .map(|chunk| build_batch(sentences, chunk, &token_offsets))
        .collect()
}

fn flat_offsets(sentences: &[Vec<usize>]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(sentences.len());
    let mut off = 0;
    for s in sentences {
        offsets.push(off);
        off += s.len();
    }
    offsets
}

fn build_batch(sentences: &[Vec<usize>], chunk: &[usize], token_offsets: &[usize]) -> Batch {
    let lengths: Vec<usize> = chunk.iter().map(|&i| sentences[i].len()).collect();
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    let word_ids = chunk
        .iter()
        .map(|&i| {
            let mut ids = sentences[i].clone();
            ids.resize(max_len, 0);
            ids
        })
        .collect();
    Batch {
        sentence_ids: chunk.to_vec(),
        word_ids,
        lengths,
        max_len,
        token_offsets: chunk.iter().map(|&i| token_offsets[i]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn batches_cover_every_sentence_once() {
        let sentences: Vec<Vec<usize>> = (0..37).map(|i| vec![0; 1 + i % 5]).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let batches = make_batches(&sentences, 8, &mut rng);
        let mut seen: Vec<usize> = batches
            .iter()
            .flat_map(|b| b.sentence_ids.clone())
            .collect();
        seen.sort();
        assert_eq!(seen, (0..37).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.size() <= 8);
            for (ids, &len) in b.word_ids.iter().zip(&b.lengths) {
                assert_eq!(ids.len(), b.max_len);
                assert!(len <= b.max_len);
            }
        }
    }

    #[test]
    fn batching_is_deterministic_given_seed() {
        let sentences: Vec<Vec<usize>> = (0..20).map(|i| vec![i; 1 + i % 3]).collect();
        let a = make_batches(&sentences, 4, &mut ChaCha20Rng::seed_from_u64(9));
        let b = make_batches(&sentences, 4, &mut ChaCha20Rng::seed_from_u64(9));
        let ids_a: Vec<Vec<usize>> = a.iter().map(|x| x.sentence_ids.clone()).collect();
        let ids_b: Vec<Vec<usize>> = b.iter().map(|x| x.sentence_ids.clone()).collect();
        assert_eq!(ids_a, ids_b);
    }
}

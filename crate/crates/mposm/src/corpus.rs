//! Corpus loading, vocabulary construction, rechunking, and ingestion of
//! pretrained-embedding and precomputed-feature files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved placeholder strings. Lexicon/corpus words must never collide with these.
pub const MASK_TOKEN: &str = "<mask>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty corpus in {path}")]
    Empty { path: String },
    #[error("{0}")]
    Invalid(String),
    #[error("feature file mismatch: {0}")]
    FeatureMismatch(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    TwoColumnTsv,
    WordsOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub words: Vec<String>,
    pub gold_tags: Option<Vec<String>>,
}

impl Sentence {
    pub fn new(words: Vec<String>, gold_tags: Option<Vec<String>>) -> Result<Self> {
        if words.is_empty() {
            return Err(CorpusError::Invalid(
                "sentence must have length >= 1".into(),
            ));
        }
        if words.iter().any(|w| w.is_empty()) {
            return Err(CorpusError::Invalid("empty-string word".into()));
        }
        if let Some(tags) = &gold_tags {
            if tags.len() != words.len() {
                return Err(CorpusError::Invalid(format!(
                    "gold tag count {} != word count {}",
                    tags.len(),
                    words.len()
                )));
            }
        }
        Ok(Sentence { words, gold_tags })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, sentences: Vec<Sentence>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(CorpusError::Invalid("corpus must be non-empty".into()));
        }
        Ok(Corpus {
            name: name.into(),
            sentences,
        })
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }

    pub fn has_gold_tags(&self) -> bool {
        self.sentences.iter().all(|s| s.gold_tags.is_some())
    }

    /// Flat gold-tag stream; `None` if any sentence is untagged.
    pub fn gold_tag_stream(&self) -> Option<Vec<&str>> {
        let mut out = Vec::with_capacity(self.token_count());
        for s in &self.sentences {
            let tags = s.gold_tags.as_ref()?;
            out.extend(tags.iter().map(|t| t.as_str()));
        }
        Some(out)
    }

    pub fn word_stream(&self) -> Vec<&str> {
        self.sentences
            .iter()
            .flat_map(|s| s.words.iter().map(|w| w.as_str()))
            .collect()
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    let mut sentences = Vec::new();
    match format {
        CorpusFormat::TwoColumnTsv => {
            let mut words = Vec::new();
            let mut tags = Vec::new();
            for (idx, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| CorpusError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                let lineno = idx + 1;
                if line.is_empty() {
                    if !words.is_empty() {
                        sentences.push(Sentence::new(
                            std::mem::take(&mut words),
                            Some(std::mem::take(&mut tags)),
                        )?);
                    }
                    continue;
                }
                let mut cols = line.split('\t');
                let (word, tag) = match (cols.next(), cols.next(), cols.next()) {
                    (Some(w), Some(t), None) if !w.is_empty() && !t.is_empty() => (w, t),
                    _ => {
                        return Err(CorpusError::Parse {
                            line: lineno,
                            msg: format!("expected \"word<TAB>tag\", got {line:?}"),
                        })
                    }
                };
                words.push(word.to_string());
                tags.push(tag.to_string());
            }
            if !words.is_empty() {
                sentences.push(Sentence::new(words, Some(tags))?);
            }
        }
        CorpusFormat::WordsOnly => {
            for (idx, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| CorpusError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let words: Vec<String> = line.split_whitespace().map(|w| w.to_string()).collect();
                if words.is_empty() {
                    return Err(CorpusError::Parse {
                        line: idx + 1,
                        msg: "empty sentence line".into(),
                    });
                }
                sentences.push(Sentence::new(words, None)?);
            }
        }
    }
    if sentences.is_empty() {
        return Err(CorpusError::Empty {
            path: path.display().to_string(),
        });
    }
    Corpus::new(name, sentences)
}

pub fn write_corpus(corpus: &Corpus, path: &Path, format: CorpusFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    };
    match format {
        CorpusFormat::TwoColumnTsv => {
            for sent in &corpus.sentences {
                let tags = sent.gold_tags.as_ref().ok_or_else(|| {
                    CorpusError::Invalid("cannot write untagged sentence as two_column_tsv".into())
                })?;
                for (word, tag) in sent.words.iter().zip(tags) {
                    writeln!(w, "{word}\t{tag}").map_err(io_err)?;
                }
                writeln!(w).map_err(io_err)?;
            }
        }
        CorpusFormat::WordsOnly => {
            for sent in &corpus.sentences {
                writeln!(w, "{}", sent.words.join(" ")).map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}

/// Word/character inventories with exact token frequencies. Immutable after
/// construction; id assignment follows first occurrence so it is order-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub word_to_id: HashMap<String, usize>,
    pub id_to_word: Vec<String>,
    pub char_to_id: HashMap<char, usize>,
    pub id_to_char: Vec<char>,
    pub word_counts: Vec<u64>,
    pub total_tokens: u64,
    pub unk_id: usize,
    pub unk_char_id: usize,
}

impl Vocabulary {
    /// Number of word types, excluding the reserved unk slot.
    pub fn size(&self) -> usize {
        self.id_to_word.len()
    }

    /// Total rows needed by an embedding table (types + unk).
    pub fn n_rows(&self) -> usize {
        self.id_to_word.len() + 1
    }

    pub fn n_chars(&self) -> usize {
        self.id_to_char.len() + 1
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_to_id.get(word).copied().unwrap_or(self.unk_id)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_to_id.get(&c).copied().unwrap_or(self.unk_char_id)
    }

    /// Empirical P(x) = count(x)/total_tokens over known types.
    pub fn empirical_p(&self) -> Vec<f64> {
        let total = self.total_tokens as f64;
        self.word_counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// FNV-1a over the id-ordered type list; used to bind checkpoints to a vocabulary.
    pub fn hash64(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for w in &self.id_to_word {
            eat(w.as_bytes());
            eat(&[0]);
        }
        for &c in &self.id_to_char {
            eat(c.to_string().as_bytes());
        }
        h
    }
}

pub fn build_vocabulary(corpus: &Corpus) -> Vocabulary {
    let mut word_to_id: HashMap<String, usize> = HashMap::new();
    let mut id_to_word: Vec<String> = Vec::new();
    let mut word_counts: Vec<u64> = Vec::new();
    let mut char_to_id: HashMap<char, usize> = HashMap::new();
    let mut id_to_char: Vec<char> = Vec::new();
    let mut total = 0u64;
    for sent in &corpus.sentences {
        for word in &sent.words {
            total += 1;
            match word_to_id.get(word) {
                Some(&id) => word_counts[id] += 1,
                None => {
                    let id = id_to_word.len();
                    word_to_id.insert(word.clone(), id);
                    id_to_word.push(word.clone());
                    word_counts.push(1);
                }
            }
            for c in word.chars() {
                if let std::collections::hash_map::Entry::Vacant(e) = char_to_id.entry(c) {
                    e.insert(id_to_char.len());
                    id_to_char.push(c);
                }
            }
        }
    }
    let unk_id = id_to_word.len();
    let unk_char_id = id_to_char.len();
    Vocabulary {
        word_to_id,
        id_to_word,
        char_to_id,
        id_to_char,
        word_counts,
        total_tokens: total,
        unk_id,
        unk_char_id,
    }
}

/// Concatenate the token stream and re-split it at random boundaries. Chunk
/// lengths are drawn with replacement from the input's empirical
/// sentence-length distribution; the final chunk may come up short. Gold tags
/// travel with their words.
pub fn rechunk<R: Rng>(corpus: &Corpus, rng: &mut R) -> Corpus {
    let lengths: Vec<usize> = corpus.sentences.iter().map(|s| s.len()).collect();
    let tokens: Vec<(&String, Option<&String>)> = corpus
        .sentences
        .iter()
        .flat_map(|s| {
            s.words.iter().enumerate().map(move |(i, w)| {
                let tag = s.gold_tags.as_ref().map(|t| &t[i]);
                (w, tag)
            })
        })
        .collect();
    let mut sentences = Vec::new();
    let mut pos = 0;
    while pos < tokens.len() {
        let want = lengths[rng.random_range(0..lengths.len())];
        let take = want.min(tokens.len() - pos);
        let chunk = &tokens[pos..pos + take];
        let words: Vec<String> = chunk.iter().map(|(w, _)| (*w).clone()).collect();
        let gold: Option<Vec<String>> = chunk
            .iter()
            .map(|(_, t)| t.cloned())
            .collect::<Option<Vec<_>>>();
        sentences.push(Sentence {
            words,
            gold_tags: gold,
        });
        pos += take;
    }
    Corpus {
        name: format!("{}-rechunked", corpus.name),
        sentences,
    }
}

/// Concatenate two corpora, original sentences first.
pub fn combine(original: &Corpus, rechunked: &Corpus) -> Result<Corpus> {
    if original.sentences.is_empty() || rechunked.sentences.is_empty() {
        return Err(CorpusError::Invalid(
            "combine requires two non-empty corpora".into(),
        ));
    }
    let mut sentences = original.sentences.clone();
    sentences.extend(rechunked.sentences.iter().cloned());
    Ok(Corpus {
        name: format!("{}+{}", original.name, rechunked.name),
        sentences,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingCoverage {
    pub covered: usize,
    pub vocab_size: usize,
    pub duplicates: usize,
    pub dim: usize,
}

/// Load word vectors in "word v1 ... vd" text format. An optional first line
/// of exactly two integer fields ("V d") is treated as a header. Rows for
/// uncovered words (and unk) are drawn uniform in [-s, s] with s equal to the
/// mean per-dimension standard deviation of covered rows. Duplicate words:
/// last occurrence wins.
pub fn load_pretrained_embeddings<R: Rng>(
    path: &Path,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<(Array2<f64>, EmbeddingCoverage)> {
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let mut dim: Option<usize> = None;
    let mut rows: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut covered_rows: Vec<Vec<f64>> = Vec::new();
    let mut duplicates = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if idx == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok()) {
            continue; // header line
        }
        if fields.len() < 2 {
            return Err(CorpusError::Parse {
                line: idx + 1,
                msg: "expected word followed by vector components".into(),
            });
        }
        let word = fields[0];
        let vec: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CorpusError::Parse {
                line: idx + 1,
                msg: format!("bad float: {e}"),
            })?;
        match dim {
            None => dim = Some(vec.len()),
            Some(d) if d != vec.len() => {
                return Err(CorpusError::Parse {
                    line: idx + 1,
                    msg: format!("dimension mismatch: expected {d}, got {}", vec.len()),
                })
            }
            _ => {}
        }
        if let Some(&id) = vocab.word_to_id.get(word) {
            if rows.insert(id, vec.clone()).is_some() {
                duplicates += 1;
            }
        }
        covered_rows.push(vec);
    }
    let dim = dim.ok_or_else(|| CorpusError::Empty {
        path: path.display().to_string(),
    })?;
    let covered = rows.len();
    if covered == 0 {
        eprintln!(
            "warning: embedding file {} covers none of the {} vocabulary types",
            path.display(),
            vocab.size()
        );
    }
    if duplicates > 0 {
        eprintln!(
            "warning: {} duplicate word(s) in embedding file; last occurrence kept",
            duplicates
        );
    }
    // OOV init range from the per-dimension spread of covered rows.
    let range = if rows.is_empty() {
        0.1f64
    } else {
        let n = rows.len() as f64;
        let mut acc = 0f64;
        for d in 0..dim {
            let mean: f64 = rows.values().map(|v| v[d]).sum::<f64>() / n;
            let var: f64 = rows.values().map(|v| (v[d] - mean).powi(2)).sum::<f64>() / n;
            acc += var.sqrt();
        }
        (acc / dim as f64).max(1e-6)
    };
    let mut matrix = Array2::<f64>::zeros((vocab.n_rows(), dim));
    for r in 0..vocab.n_rows() {
        match rows.get(&r) {
            Some(v) => {
                for (d, &x) in v.iter().enumerate() {
                    matrix[[r, d]] = x;
                }
            }
            None => {
                for d in 0..dim {
                    matrix[[r, d]] = rng.random_range(-range..=range);
                }
            }
        }
    }
    Ok((
        matrix,
        EmbeddingCoverage {
            covered,
            vocab_size: vocab.size(),
            duplicates,
            dim,
        },
    ))
}

/// Per-token real vectors aligned to a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub corpus_name: String,
    pub dim: usize,
    /// Row-major [token_count, dim] in corpus order.
    pub vectors: Array2<f64>,
    /// Flat offset of each sentence's first token.
    pub sentence_offsets: Vec<usize>,
}

impl FeatureFile {
    pub fn token_vector(&self, sentence: usize, token: usize) -> ndarray::ArrayView1<'_, f64> {
        self.vectors.row(self.sentence_offsets[sentence] + token)
    }
}

#[derive(Serialize, Deserialize)]
struct FeatureManifest {
    corpus_name: String,
    token_count: usize,
    dim: usize,
}

const FEATURE_MAGIC: &[u8; 4] = b"MPFF";
const FEATURE_VERSION: u32 = 1;

pub fn write_feature_file(path: &Path, corpus: &Corpus, vectors: &Array2<f64>) -> Result<()> {
    let io_err = |e: std::io::Error| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    };
    if vectors.nrows() != corpus.token_count() {
        return Err(CorpusError::FeatureMismatch(format!(
            "vector rows {} != corpus token count {}",
            vectors.nrows(),
            corpus.token_count()
        )));
    }
    let manifest = FeatureManifest {
        corpus_name: corpus.name.clone(),
        token_count: vectors.nrows(),
        dim: vectors.ncols(),
    };
    let header = serde_json::to_vec(&manifest)
        .map_err(|e| CorpusError::Invalid(format!("manifest encode failed: {e}")))?;
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(FEATURE_MAGIC).map_err(io_err)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&(header.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&header).map_err(io_err)?;
    for &x in vectors.iter() {
        w.write_all(&x.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_feature_file(path: &Path, corpus: &Corpus) -> Result<FeatureFile> {
    let io_err = |e: std::io::Error| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != FEATURE_MAGIC {
        return Err(CorpusError::FeatureMismatch("bad magic".into()));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4).map_err(io_err)?;
    let version = u32::from_le_bytes(buf4);
    if version != FEATURE_VERSION {
        return Err(CorpusError::FeatureMismatch(format!(
            "unsupported version {version}"
        )));
    }
    r.read_exact(&mut buf4).map_err(io_err)?;
    let header_len = u32::from_le_bytes(buf4) as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header).map_err(io_err)?;
    let manifest: FeatureManifest = serde_json::from_slice(&header)
        .map_err(|e| CorpusError::FeatureMismatch(format!("bad manifest: {e}")))?;
    if manifest.token_count != corpus.token_count() {
        // Name the first sentence where the cumulative count diverges.
        let mut cum = 0;
        let mut first_bad = corpus.sentences.len().saturating_sub(1);
        for (i, s) in corpus.sentences.iter().enumerate() {
            cum += s.len();
            if cum > manifest.token_count {
                first_bad = i;
                break;
            }
        }
        return Err(CorpusError::FeatureMismatch(format!(
            "token count {} != corpus token count {} (first misaligned sentence: {})",
            manifest.token_count,
            corpus.token_count(),
            first_bad
        )));
    }
    if manifest.corpus_name != corpus.name {
        return Err(CorpusError::FeatureMismatch(format!(
            "manifest names corpus {:?} but got {:?}",
            manifest.corpus_name, corpus.name
        )));
    }
    let n = manifest.token_count * manifest.dim;
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw).map_err(io_err)?;
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let vectors = Array2::from_shape_vec((manifest.token_count, manifest.dim), data)
        .expect("shape checked above");
    let mut sentence_offsets = Vec::with_capacity(corpus.sentences.len());
    let mut off = 0;
    for s in &corpus.sentences {
        sentence_offsets.push(off);
        off += s.len();
    }
    Ok(FeatureFile {
        corpus_name: manifest.corpus_name,
        dim: manifest.dim,
        vectors,
        sentence_offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn tmpfile(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn corpus_from(sentences: &[&[&str]]) -> Corpus {
        Corpus::new(
            "test",
            sentences
                .iter()
                .map(|s| Sentence::new(s.iter().map(|w| w.to_string()).collect(), None).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn loads_two_column_tsv() {
        let f = tmpfile("the\tDT\ncat\tNN\n\n");
        let c = load_corpus(f.path(), CorpusFormat::TwoColumnTsv).unwrap();
        assert_eq!(c.sentences.len(), 1);
        assert_eq!(c.sentences[0].words, vec!["the", "cat"]);
        assert_eq!(
            c.sentences[0].gold_tags.as_deref().unwrap(),
            ["DT".to_string(), "NN".to_string()]
        );
    }

    #[test]
    fn loads_words_only() {
        let f = tmpfile("a b c\n");
        let c = load_corpus(f.path(), CorpusFormat::WordsOnly).unwrap();
        assert_eq!(c.sentences.len(), 1);
        assert_eq!(c.sentences[0].len(), 3);
        assert!(c.sentences[0].gold_tags.is_none());
    }

    #[test]
    fn tsv_parse_error_names_line() {
        let f = tmpfile("oops\n");
        match load_corpus(f.path(), CorpusFormat::TwoColumnTsv) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_error() {
        let f = tmpfile("");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::WordsOnly),
            Err(CorpusError::Empty { .. })
        ));
    }

    #[test]
    fn round_trips_both_formats() {
        let f = tmpfile("the\tDT\ncat\tNN\n\nruns\tVBZ\n\n");
        let c = load_corpus(f.path(), CorpusFormat::TwoColumnTsv).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_corpus(&c, out.path(), CorpusFormat::TwoColumnTsv).unwrap();
        let c2 = load_corpus(out.path(), CorpusFormat::TwoColumnTsv).unwrap();
        assert_eq!(c.sentences, c2.sentences);

        let c = corpus_from(&[&["a", "b"], &["c"]]);
        let out = tempfile::NamedTempFile::new().unwrap();
        write_corpus(&c, out.path(), CorpusFormat::WordsOnly).unwrap();
        let c2 = load_corpus(out.path(), CorpusFormat::WordsOnly).unwrap();
        assert_eq!(c.sentences, c2.sentences);
    }

    #[test]
    fn vocabulary_counts_and_probabilities() {
        let c = corpus_from(&[&["a", "a", "b"]]);
        let v = build_vocabulary(&c);
        assert_eq!(v.size(), 2);
        assert_eq!(v.word_counts[v.word_to_id["a"]], 2);
        assert_eq!(v.word_counts[v.word_to_id["b"]], 1);
        assert_eq!(v.total_tokens, 3);
        let p = v.empirical_p();
        assert!((p[v.word_to_id["a"]] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Unseen word maps to unk.
        assert_eq!(v.word_id("zzz"), v.unk_id);
    }

    #[test]
    fn vocabulary_is_order_stable() {
        let c = corpus_from(&[&["b", "a"], &["a", "c"]]);
        let v1 = build_vocabulary(&c);
        let v2 = build_vocabulary(&c);
        assert_eq!(v1, v2);
        assert_eq!(v1.word_to_id["b"], 0);
        assert_eq!(v1.word_to_id["a"], 1);
        assert_eq!(v1.word_to_id["c"], 2);
        assert_eq!(v1.hash64(), v2.hash64());
    }

    #[test]
    fn rechunk_conserves_token_stream() {
        let c = Corpus::new(
            "t",
            vec![
                Sentence::new(
                    vec!["a".into(), "b".into()],
                    Some(vec!["X".into(), "Y".into()]),
                )
                .unwrap(),
                Sentence::new(
                    vec!["c".into(), "d".into(), "e".into()],
                    Some(vec!["X".into(), "Z".into(), "Y".into()]),
                )
                .unwrap(),
            ],
        )
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let r = rechunk(&c, &mut rng);
        assert_eq!(r.word_stream(), c.word_stream());
        assert_eq!(r.gold_tag_stream(), c.gold_tag_stream());
    }

    #[test]
    fn rechunk_is_deterministic() {
        let c = corpus_from(&[&["a", "b", "c"], &["d", "e"], &["f"]]);
        let r1 = rechunk(&c, &mut ChaCha20Rng::seed_from_u64(3));
        let r2 = rechunk(&c, &mut ChaCha20Rng::seed_from_u64(3));
        assert_eq!(r1, r2);
    }

    #[test]
    fn combine_concatenates_in_order() {
        let a = corpus_from(&[&["a"], &["b"]]);
        let b = corpus_from(&[&["c"]]);
        let c = combine(&a, &b).unwrap();
        assert_eq!(c.sentences.len(), 3);
        assert_eq!(c.token_count(), a.token_count() + b.token_count());
        assert_eq!(c.sentences[0].words, vec!["a"]);
        assert_eq!(c.sentences[2].words, vec!["c"]);
    }

    #[test]
    fn combine_rejects_empty() {
        let a = corpus_from(&[&["a"]]);
        let empty = Corpus {
            name: "e".into(),
            sentences: vec![],
        };
        assert!(combine(&a, &empty).is_err());
        assert!(combine(&empty, &a).is_err());
    }

    #[test]
    fn embeddings_report_coverage_and_fill_oov() {
        let c = corpus_from(&[&["a", "b", "c"]]);
        let v = build_vocabulary(&c);
        let f = tmpfile("a 1.0 2.0\nb 3.0 4.0\n");
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let (m, cov) = load_pretrained_embeddings(f.path(), &v, &mut rng).unwrap();
        assert_eq!(cov.covered, 2);
        assert_eq!(cov.vocab_size, 3);
        assert_eq!(m.nrows(), 4); // 3 types + unk
        assert_eq!(m.ncols(), 2);
        assert_eq!(m[[v.word_to_id["a"], 0]], 1.0);
        assert_eq!(m[[v.word_to_id["b"], 1]], 4.0);
    }

    #[test]
    fn embeddings_header_detected_and_duplicates_last_wins() {
        let c = corpus_from(&[&["a", "b"]]);
        let v = build_vocabulary(&c);
        let f = tmpfile("2 2\na 1.0 1.0\na 5.0 5.0\nb 2.0 2.0\n");
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let (m, cov) = load_pretrained_embeddings(f.path(), &v, &mut rng).unwrap();
        assert_eq!(cov.duplicates, 1);
        assert_eq!(m[[v.word_to_id["a"], 0]], 5.0);
    }

    #[test]
    fn embeddings_dimension_mismatch_is_error() {
        let c = corpus_from(&[&["a"]]);
        let v = build_vocabulary(&c);
        let f = tmpfile("a 1.0 2.0\nb 3.0\n");
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(load_pretrained_embeddings(f.path(), &v, &mut rng).is_err());
    }

    #[test]
    fn feature_file_round_trip_and_mismatch() {
        let c = corpus_from(&[&["a", "b"], &["c"]]);
        let vecs = Array2::from_shape_vec((3, 2), vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_feature_file(f.path(), &c, &vecs).unwrap();
        let ff = load_feature_file(f.path(), &c).unwrap();
        assert_eq!(ff.vectors, vecs);
        assert_eq!(ff.token_vector(1, 0).to_vec(), vec![5., 6.]);

        let shorter = corpus_from(&[&["a", "b"]]);
        let err = load_feature_file(f.path(), &shorter).unwrap_err();
        assert!(matches!(err, CorpusError::FeatureMismatch(_)));
    }
}

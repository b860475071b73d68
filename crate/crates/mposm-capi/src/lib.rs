//! C ABI over the mposm workbench: opaque handles, integer error codes, and
//! a thread-local message for the last failure. The matching declarations
//! live in `include/mposm.h`.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use mposm::config::ExperimentConfig;
use mposm::corpus::{build_vocabulary, load_corpus, Corpus, CorpusFormat, Vocabulary};
use mposm::eval;
use mposm::model::{DataCtx, Mposm};
use mposm::synth::{generate_dataset, SynthVariant, SyntheticSpec};
use mposm::train::{self, TrainConfig};

pub const MPOSM_OK: c_int = 0;
pub const MPOSM_ERR_NULL_ARGUMENT: c_int = 1;
pub const MPOSM_ERR_UTF8: c_int = 2;
pub const MPOSM_ERR_IO: c_int = 3;
pub const MPOSM_ERR_CONFIG: c_int = 4;
pub const MPOSM_ERR_TRAIN: c_int = 5;
pub const MPOSM_ERR_EVAL: c_int = 6;
pub const MPOSM_ERR_BUFFER_TOO_SMALL: c_int = 7;
pub const MPOSM_ERR_PANIC: c_int = 8;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(code: c_int, msg: impl Into<String>) -> c_int {
    set_error(msg);
    code
}

fn guard(f: impl FnOnce() -> c_int) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => fail(MPOSM_ERR_PANIC, "internal panic"),
    }
}

/// Copy the message for the most recent error on this thread into `buf`.
/// Always NUL-terminates when `len > 0`. Returns the full message length
/// (excluding the NUL), so callers can detect truncation.
///
/// # Safety
/// `buf`, when non-NULL, must point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mposm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

pub struct MposmCorpus {
    corpus: Corpus,
}

pub struct MposmSession {
    config: ExperimentConfig,
    corpus: Corpus,
    vocab: Vocabulary,
    model: Mposm,
    trained: bool,
}

unsafe fn cstr_to_str<'a>(s: *const c_char) -> Result<&'a str, c_int> {
    if s.is_null() {
        return Err(MPOSM_ERR_NULL_ARGUMENT);
    }
    CStr::from_ptr(s).to_str().map_err(|_| MPOSM_ERR_UTF8)
}

/// Load a corpus from disk. `format` is 0 for two-column word<TAB>tag lines,
/// 1 for whitespace-separated words only.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mposm_corpus_load(
    path: *const c_char,
    format: c_int,
    out: *mut *mut MposmCorpus,
) -> c_int {
    guard(|| {
        if out.is_null() {
            return fail(MPOSM_ERR_NULL_ARGUMENT, "out is null");
        }
        let path = match cstr_to_str(path) {
            Ok(p) => p,
            Err(code) => return fail(code, "bad path argument"),
        };
        let fmt = match format {
            0 => CorpusFormat::TwoColumnTsv,
            1 => CorpusFormat::WordsOnly,
            other => return fail(MPOSM_ERR_CONFIG, format!("unknown corpus format {other}")),
        };
        match load_corpus(Path::new(path), fmt) {
            Ok(corpus) => {
                *out = Box::into_raw(Box::new(MposmCorpus { corpus }));
                MPOSM_OK
            }
            Err(e) => fail(MPOSM_ERR_IO, e.to_string()),
        }
    })
}

/// Generate an agreement benchmark. `variant` is one of "d0", "morph", "d24".
///
/// # Safety
/// `variant` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mposm_corpus_generate(
    variant: *const c_char,
    n_sentences: usize,
    seed: u64,
    out: *mut *mut MposmCorpus,
) -> c_int {
    guard(|| {
        if out.is_null() {
            return fail(MPOSM_ERR_NULL_ARGUMENT, "out is null");
        }
        let variant = match cstr_to_str(variant) {
            Ok(v) => v,
            Err(code) => return fail(code, "bad variant argument"),
        };
        let variant = match SynthVariant::parse(variant) {
            Some(v) => v,
            None => {
                return fail(
                    MPOSM_ERR_CONFIG,
                    format!("unknown synthetic variant `{variant}` (expected d0, morph, or d24)"),
                )
            }
        };
        if n_sentences == 0 {
            return fail(MPOSM_ERR_CONFIG, "n_sentences must be >= 1");
        }
        let spec = SyntheticSpec {
            variant,
            n_sentences,
            seed,
            ..SyntheticSpec::default()
        };
        let (corpus, _lexicon) = generate_dataset(&spec);
        *out = Box::into_raw(Box::new(MposmCorpus { corpus }));
        MPOSM_OK
    })
}

/// # Safety
/// `corpus` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn mposm_corpus_free(corpus: *mut MposmCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// # Safety
/// `corpus` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mposm_corpus_token_count(corpus: *const MposmCorpus) -> usize {
    if corpus.is_null() {
        return 0;
    }
    (*corpus).corpus.token_count()
}

/// Create a training session over a corpus. `config_text` uses the same
/// `key = value` format as the CLI; pass NULL or "" for defaults.
///
/// # Safety
/// `corpus` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mposm_session_new(
    corpus: *const MposmCorpus,
    config_text: *const c_char,
    out: *mut *mut MposmSession,
) -> c_int {
    guard(|| {
        if corpus.is_null() || out.is_null() {
            return fail(MPOSM_ERR_NULL_ARGUMENT, "corpus or out is null");
        }
        let text = if config_text.is_null() {
            ""
        } else {
            match cstr_to_str(config_text) {
                Ok(t) => t,
                Err(code) => return fail(code, "bad config text"),
            }
        };
        let config = match ExperimentConfig::parse(text, ExperimentConfig::default()) {
            Ok(c) => c,
            Err(e) => return fail(MPOSM_ERR_CONFIG, e.to_string()),
        };
        let corpus = (*corpus).corpus.clone();
        let vocab = build_vocabulary(&corpus);
        let mut rng = ChaCha20Rng::seed_from_u64(config.train.seed);
        let model = match Mposm::new(config.model.clone(), &vocab, None, None, &mut rng) {
            Ok(m) => m,
            Err(e) => return fail(MPOSM_ERR_CONFIG, e.to_string()),
        };
        *out = Box::into_raw(Box::new(MposmSession {
            config,
            corpus,
            vocab,
            model,
            trained: false,
        }));
        MPOSM_OK
    })
}

/// # Safety
/// `session` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn mposm_session_free(session: *mut MposmSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Train to completion under the session's schedule. Overrides `max_epochs`
/// when `max_epochs > 0`.
///
/// # Safety
/// `session` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mposm_session_train(
    session: *mut MposmSession,
    max_epochs: usize,
) -> c_int {
    guard(|| {
        if session.is_null() {
            return fail(MPOSM_ERR_NULL_ARGUMENT, "session is null");
        }
        let s = &mut *session;
        let cfg = TrainConfig {
            max_epochs: if max_epochs > 0 {
                max_epochs
            } else {
                s.config.train.max_epochs
            },
            ..s.config.train.clone()
        };
        match train::train(&mut s.model, &cfg, &s.corpus, &s.vocab, None, None) {
            Ok(_) => {
                s.trained = true;
                MPOSM_OK
            }
            Err(e) => fail(MPOSM_ERR_TRAIN, e.to_string()),
        }
    })
}

/// Predict one tag id per token, flattened in corpus order. Call with `tags`
/// NULL to query the required length via `*n_tags_out`.
///
/// # Safety
/// `session` must be a live handle; `tags`, when non-NULL, must point to at
/// least `tags_len` elements; `n_tags_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mposm_session_predict(
    session: *const MposmSession,
    tags: *mut usize,
    tags_len: usize,
    n_tags_out: *mut usize,
) -> c_int {
    guard(|| {
        if session.is_null() || n_tags_out.is_null() {
            return fail(MPOSM_ERR_NULL_ARGUMENT, "session or n_tags_out is null");
        }
        let s = &*session;
        let needed = s.corpus.token_count();
        *n_tags_out = needed;
        if tags.is_null() {
            return MPOSM_OK;
        }
        if tags_len < needed {
            return fail(
                MPOSM_ERR_BUFFER_TOO_SMALL,
                format!("need {needed} elements, got {tags_len}"),
            );
        }
        let ctx = DataCtx::new(&s.vocab, None);
        match s.model.predict_tags(&s.corpus, &ctx) {
            Ok(assignment) => {
                for (i, tag) in assignment.flat().into_iter().enumerate() {
                    *tags.add(i) = tag;
                }
                MPOSM_OK
            }
            Err(e) => fail(MPOSM_ERR_EVAL, e.to_string()),
        }
    })
}

/// Many-to-one accuracy (percent) of the current model against the corpus
/// gold tags.
///
/// # Safety
/// `session` must be a live handle and `accuracy_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mposm_session_m1(
    session: *const MposmSession,
    accuracy_out: *mut c_double,
) -> c_int {
    guard(|| {
        if session.is_null() || accuracy_out.is_null() {
            return fail(MPOSM_ERR_NULL_ARGUMENT, "session or accuracy_out is null");
        }
        let s = &*session;
        let ctx = DataCtx::new(&s.vocab, None);
        let assignment = match s.model.predict_tags(&s.corpus, &ctx) {
            Ok(a) => a,
            Err(e) => return fail(MPOSM_ERR_EVAL, e.to_string()),
        };
        match eval::many_to_one(&assignment, &s.corpus) {
            Ok(r) => {
                *accuracy_out = r.accuracy;
                MPOSM_OK
            }
            Err(e) => fail(MPOSM_ERR_EVAL, e.to_string()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    #[test]
    fn generate_session_train_predict_round_trip() {
        unsafe {
            let variant = CString::new("d0").unwrap();
            let mut corpus: *mut MposmCorpus = ptr::null_mut();
            assert_eq!(
                mposm_corpus_generate(variant.as_ptr(), 40, 3, &mut corpus),
                MPOSM_OK
            );
            let n = mposm_corpus_token_count(corpus);
            assert!(n >= 40 * 4);

            let config = CString::new(
                "model.n_tags = 6\nmodel.char_emb_dim = 8\nmodel.word_emb_dim = 10\nmodel.pos_emb_dim = 8\nmodel.hidden_dim = 10\nmodel.context = 1\ntrain.batch_size = 16\n",
            )
            .unwrap();
            let mut session: *mut MposmSession = ptr::null_mut();
            assert_eq!(
                mposm_session_new(corpus, config.as_ptr(), &mut session),
                MPOSM_OK
            );
            assert_eq!(mposm_session_train(session, 1), MPOSM_OK);

            let mut needed = 0usize;
            assert_eq!(
                mposm_session_predict(session, ptr::null_mut(), 0, &mut needed),
                MPOSM_OK
            );
            assert_eq!(needed, n);
            let mut tags = vec![0usize; needed];
            assert_eq!(
                mposm_session_predict(session, tags.as_mut_ptr(), tags.len(), &mut needed),
                MPOSM_OK
            );
            assert!(tags.iter().all(|&t| t < 6));

            let mut acc = 0.0f64;
            assert_eq!(mposm_session_m1(session, &mut acc), MPOSM_OK);
            assert!((0.0..=100.0).contains(&acc));

            mposm_session_free(session);
            mposm_corpus_free(corpus);
        }
    }

    #[test]
    fn errors_set_messages_and_codes() {
        unsafe {
            let mut corpus: *mut MposmCorpus = ptr::null_mut();
            let bad = CString::new("zzz").unwrap();
            assert_eq!(
                mposm_corpus_generate(bad.as_ptr(), 10, 0, &mut corpus),
                MPOSM_ERR_CONFIG
            );
            let mut buf = [0i8; 256];
            let len = mposm_last_error(buf.as_mut_ptr(), buf.len());
            assert!(len > 0);
            let msg = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
            assert!(msg.contains("zzz"), "{msg}");

            assert_eq!(
                mposm_corpus_load(ptr::null(), 0, &mut corpus),
                MPOSM_ERR_NULL_ARGUMENT
            );

            let variant = CString::new("d0").unwrap();
            assert_eq!(
                mposm_corpus_generate(variant.as_ptr(), 10, 0, &mut corpus),
                MPOSM_OK
            );
            let cfg = CString::new("model.mask_rate = 9").unwrap();
            let mut session: *mut MposmSession = ptr::null_mut();
            assert_eq!(
                mposm_session_new(corpus, cfg.as_ptr(), &mut session),
                MPOSM_ERR_CONFIG
            );
            mposm_corpus_free(corpus);
        }
    }
}

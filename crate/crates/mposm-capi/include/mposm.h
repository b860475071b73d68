/* C interface for the mposm part-of-speech induction workbench.
 *
 * Conventions:
 *   - Functions returning int return MPOSM_OK (0) on success and a nonzero
 *     mposm_error code on failure; mposm_last_error() then holds a message
 *     for the calling thread.
 *   - Handles are opaque and must be released with the matching *_free.
 *   - Strings are NUL-terminated UTF-8.
 */

#ifndef MPOSM_H
#define MPOSM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum mposm_error {
    MPOSM_OK = 0,
    MPOSM_ERR_NULL_ARGUMENT = 1,
    MPOSM_ERR_UTF8 = 2,
    MPOSM_ERR_IO = 3,
    MPOSM_ERR_CONFIG = 4,
    MPOSM_ERR_TRAIN = 5,
    MPOSM_ERR_EVAL = 6,
    MPOSM_ERR_BUFFER_TOO_SMALL = 7,
    MPOSM_ERR_PANIC = 8,
};

enum mposm_corpus_format {
    /* one "word<TAB>gold_tag" pair per line, blank line between sentences */
    MPOSM_FORMAT_TSV = 0,
    /* one sentence per line, whitespace-separated words */
    MPOSM_FORMAT_WORDS = 1,
};

typedef struct MposmCorpus MposmCorpus;
typedef struct MposmSession MposmSession;

/* Copies the last error message on this thread into buf (NUL-terminated
 * whenever len > 0) and returns the full message length, so a return value
 * >= len means the message was truncated. */
size_t mposm_last_error(char *buf, size_t len);

/* format: see mposm_corpus_format. */
int mposm_corpus_load(const char *path, int format, MposmCorpus **out);

/* variant: "d0", "morph", or "d24". n_sentences of 0 is rejected. */
int mposm_corpus_generate(const char *variant, size_t n_sentences,
                          uint64_t seed, MposmCorpus **out);

void mposm_corpus_free(MposmCorpus *corpus);

size_t mposm_corpus_token_count(const MposmCorpus *corpus);

/* config_text uses the same "key = value" lines as the CLI config files;
 * NULL or "" keeps all defaults. The corpus is copied into the session. */
int mposm_session_new(const MposmCorpus *corpus, const char *config_text,
                      MposmSession **out);

void mposm_session_free(MposmSession *session);

/* Trains to completion under the session's schedule; max_epochs > 0
 * overrides the configured epoch cap. */
int mposm_session_train(MposmSession *session, size_t max_epochs);

/* Writes one induced tag id per token, flattened in corpus order. Pass
 * tags = NULL to query the required element count through n_tags_out. */
int mposm_session_predict(const MposmSession *session, size_t *tags,
                          size_t tags_len, size_t *n_tags_out);

/* Many-to-one accuracy in percent against the corpus gold tags. */
int mposm_session_m1(const MposmSession *session, double *accuracy_out);

#ifdef __cplusplus
}
#endif

#endif /* MPOSM_H */

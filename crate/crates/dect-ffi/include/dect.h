/* C interface to the dect dementia-detection pipeline. */

#ifndef DECT_H
#define DECT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes for every fallible entry point.
 */
typedef enum DectStatus {
  DECT_STATUS_OK = 0,
  DECT_STATUS_NULL_ARGUMENT = 1,
  DECT_STATUS_INVALID_UTF8 = 2,
  DECT_STATUS_IO = 3,
  DECT_STATUS_INVALID_INPUT = 4,
  DECT_STATUS_RUN_FAILED = 5,
} DectStatus;

/**
 * Opaque transcript-corpus handle.
 */
typedef struct DectCorpus DectCorpus;

/**
 * Binary classification metrics with AD as the positive class.
 */
typedef struct DectMetrics {
  double accuracy;
  double f1;
  uint64_t true_pos;
  uint64_t false_pos;
  uint64_t false_neg;
  uint64_t true_neg;
  uint64_t n;
} DectMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the library version as a static NUL-terminated string.
 */
const char *dect_version(void);

/**
 * Returns the last error message recorded on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *dect_last_error(void);

/**
 * Loads a JSONL corpus file into a new handle.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum DectStatus dect_corpus_load(const char *path, struct DectCorpus **out);

/**
 * Builds the deterministic planted synthetic corpus.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum DectStatus dect_corpus_planted(uint64_t n, uint64_t seed, struct DectCorpus **out);

/**
 * Number of transcripts in the corpus; 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or a live handle from this library.
 */
uint64_t dect_corpus_len(const struct DectCorpus *corpus);

/**
 * Number of transcripts carrying the given label ("AD" or "NC").
 *
 * # Safety
 * `corpus` must be null or a live handle; `label` a valid string.
 */
uint64_t dect_corpus_count_label(const struct DectCorpus *corpus, const char *label);

/**
 * Writes the corpus as JSONL.
 *
 * # Safety
 * `corpus` must be a live handle and `path` a valid string.
 */
enum DectStatus dect_corpus_save(const struct DectCorpus *corpus, const char *path);

/**
 * Releases a corpus handle. Null is ignored.
 *
 * # Safety
 * `corpus` must be null or a handle produced by this library, freed once.
 */
void dect_corpus_free(struct DectCorpus *corpus);

/**
 * Runs the pipeline described by a config file (extract, augment, train one
 * seed, evaluate) and writes the held-out metrics into `out`.
 *
 * # Safety
 * `config_path` must be a valid NUL-terminated string, `out` a valid pointer.
 */
enum DectStatus dect_run_train_eval(const char *config_path, struct DectMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DECT_H */

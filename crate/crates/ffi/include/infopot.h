#ifndef INFOPOT_H
#define INFOPOT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call.
typedef enum InfopotStatus {
  INFOPOT_STATUS_OK = 0,
  INFOPOT_STATUS_NULL_POINTER = 1,
  INFOPOT_STATUS_INVALID_UTF8 = 2,
  INFOPOT_STATUS_INVALID_ARGUMENT = 3,
  // The quantity is not defined for the input, e.g. IP with no
  // question answered in either condition.
  INFOPOT_STATUS_UNDEFINED = 4,
  INFOPOT_STATUS_PIPELINE = 5,
  INFOPOT_STATUS_PANIC = 6,
} InfopotStatus;

// Opaque run handle.
typedef struct InfopotPipeline InfopotPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. The
// pointer stays valid until the next call into this library on the
// same thread.
const char *infopot_last_error(void);

// Static version string; do not free.
const char *infopot_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void infopot_string_free(char *s);

// Jaccard similarity of the lowercase alphanumeric token sets of `a` and `b`.
//
// # Safety
// `a` and `b` must be nul-terminated strings; `out` must be writable.
enum InfopotStatus infopot_jaccard(const char *a, const char *b, double *out);

// ROUGE-L F1 of `candidate` against `reference`.
//
// # Safety
// Both strings must be nul-terminated; `out` must be writable.
enum InfopotStatus infopot_rouge_l(const char *reference, const char *candidate, double *out);

// Information potential from the four contingency cells. Returns
// `Undefined` when every question was missed in both conditions.
//
// # Safety
// `out` must be writable.
enum InfopotStatus infopot_information_potential(uint64_t both_correct,
                                                 uint64_t context_only,
                                                 uint64_t direct_only,
                                                 uint64_t both_incorrect,
                                                 double *out);

// Reduces an evaluator reply to `'A'`..`'D'`, or `0` when no letter can
// be read.
//
// # Safety
// `raw` must be nul-terminated; `out_letter` must be writable.
enum InfopotStatus infopot_parse_answer_letter(const char *raw, char *out_letter);

// Parses generator output into `{chunk_id, raw_text, parsed, rejects}`
// JSON.
//
// # Safety
// Strings must be nul-terminated; `out_json` must be writable.
enum InfopotStatus infopot_parse_mcqs_json(const char *chunk_id, const char *raw, char **out_json);

// Splits `text` into chunks of `chunk_words` words and returns them as a
// JSON array.
//
// # Safety
// Strings must be nul-terminated; `out_json` must be writable.
enum InfopotStatus infopot_chunk_json(const char *doc_id,
                                      const char *text,
                                      size_t chunk_words,
                                      char **out_json);

// Opens the run described by a TOML config file.
//
// # Safety
// `config_path` must be nul-terminated; `out` must be writable.
enum InfopotStatus infopot_pipeline_open(const char *config_path, struct InfopotPipeline **out);

// Runs one stage by name (`chunk`, `generate`, ...) and returns its
// outcome as JSON.
//
// # Safety
// `pipeline` must come from [`infopot_pipeline_open`]; `stage` must be
// nul-terminated; `out_json` must be writable.
enum InfopotStatus infopot_pipeline_run_stage(struct InfopotPipeline *pipeline,
                                              const char *stage,
                                              char **out_json);

// Runs every stage in order; returns the list of outcomes as JSON.
//
// # Safety
// `pipeline` must come from [`infopot_pipeline_open`]; `out_json` must be
// writable.
enum InfopotStatus infopot_pipeline_run_all(struct InfopotPipeline *pipeline, char **out_json);

// Writes the report bundle for a scored run and returns it as JSON.
//
// # Safety
// `pipeline` must come from [`infopot_pipeline_open`]; `out_json` must be
// writable.
enum InfopotStatus infopot_pipeline_report_json(struct InfopotPipeline *pipeline, char **out_json);

// Releases a pipeline handle. Null is ignored.
//
// # Safety
// `pipeline` must come from [`infopot_pipeline_open`] and not have been
// freed already.
void infopot_pipeline_free(struct InfopotPipeline *pipeline);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INFOPOT_H */

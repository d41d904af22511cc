#ifndef MTKIT_H
#define MTKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MtkFilterDecision {
  MTK_FILTER_DECISION_KEEP = 0,
  MTK_FILTER_DECISION_DROP_MISSING_SCORE = 1,
  MTK_FILTER_DECISION_DROP_BICLEANER_LOW = 2,
  MTK_FILTER_DECISION_DROP_KIWI_FWD_LOW = 3,
  MTK_FILTER_DECISION_DROP_KIWI_REV_LOW = 4,
} MtkFilterDecision;

typedef enum MtkFinish {
  MTK_FINISH_EOS = 0,
  MTK_FINISH_NEWLINE_TRUNCATED = 1,
  MTK_FINISH_LENGTH_CAPPED = 2,
} MtkFinish;

// Result code of every fallible call.
typedef enum MtkStatus {
  MTK_STATUS_OK = 0,
  MTK_STATUS_NULL_POINTER = 1,
  MTK_STATUS_INVALID_UTF8 = 2,
  MTK_STATUS_INVALID_ARGUMENT = 3,
  MTK_STATUS_EMPTY_CORPUS = 4,
  MTK_STATUS_PANIC = 99,
} MtkStatus;

typedef enum MtkTemplate {
  MTK_TEMPLATE_ZERO_SHOT = 0,
  MTK_TEMPLATE_FEW_SHOT1 = 1,
  MTK_TEMPLATE_FEW_SHOT2 = 2,
  MTK_TEMPLATE_FEW_SHOT3 = 3,
} MtkTemplate;

typedef enum MtkTokenizer {
  // Default BLEU tokenization.
  MTK_TOKENIZER_MTEVAL13A = 0,
  // Chinese: CJK characters become separate tokens.
  MTK_TOKENIZER_ZH = 1,
  // Whitespace split only.
  MTK_TOKENIZER_NONE = 2,
} MtkTokenizer;

// Collects example shots for one prompt layout.
typedef struct MtkPromptBuilder MtkPromptBuilder;

// Accumulates sufficient statistics for corpus BLEU and chrF.
typedef struct MtkScorer MtkScorer;

// Library version as a static string; do not free.
const char *mtk_version(void);

// Copy of the calling thread's last error message, or NULL if the last
// call succeeded. Free with [`mtk_string_free`].
char *mtk_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void mtk_string_free(char *s);

// Sentence-level BLEU (exponential smoothing, effective order) on 0..100.
//
// # Safety
// `hyp` and `reference` must be valid NUL-terminated strings, `out` a
// valid pointer.
enum MtkStatus mtk_sentence_bleu(const char *hyp,
                                 const char *reference,
                                 enum MtkTokenizer tok,
                                 double *out);

// Sentence-level chrF (character 6-grams, beta 2) on 0..100.
//
// # Safety
// As for [`mtk_sentence_bleu`].
enum MtkStatus mtk_sentence_chrf(const char *hyp, const char *reference, double *out);

// New empty corpus scorer. Never returns NULL.
struct MtkScorer *mtk_scorer_new(enum MtkTokenizer tok);

// Adds one hypothesis/reference pair.
//
// # Safety
// `scorer` must be a live handle; the strings must be valid.
enum MtkStatus mtk_scorer_add(struct MtkScorer *scorer, const char *hyp, const char *reference);

// Number of pairs added so far.
//
// # Safety
// `scorer` must be a live handle or NULL (which yields 0).
size_t mtk_scorer_len(const struct MtkScorer *scorer);

// Unsmoothed corpus BLEU over everything added.
//
// # Safety
// `scorer` must be a live handle and `out` valid.
enum MtkStatus mtk_scorer_bleu(const struct MtkScorer *scorer, double *out);

// Corpus chrF over everything added.
//
// # Safety
// `scorer` must be a live handle and `out` valid.
enum MtkStatus mtk_scorer_chrf(const struct MtkScorer *scorer, double *out);

// Releases a scorer. NULL is ignored.
//
// # Safety
// `scorer` must come from [`mtk_scorer_new`] and not be used afterwards.
void mtk_scorer_free(struct MtkScorer *scorer);

// New prompt builder for display-name languages ("German", "English").
// Returns NULL on invalid arguments; see [`mtk_last_error`].
//
// # Safety
// The language strings must be valid NUL-terminated strings.
struct MtkPromptBuilder *mtk_prompt_new(enum MtkTemplate template_,
                                        const char *source_language,
                                        const char *target_language);

// Appends an example pair.
//
// # Safety
// `builder` must be a live handle; the strings must be valid.
enum MtkStatus mtk_prompt_add_shot(struct MtkPromptBuilder *builder,
                                   const char *source,
                                   const char *target);

// Renders the prompt for `source`. The builder keeps its shots, so it can
// render several sources.
//
// # Safety
// `builder` must be a live handle, `source` valid, `out` a valid pointer.
// The string stored in `*out` must be freed with [`mtk_string_free`].
enum MtkStatus mtk_prompt_render(const struct MtkPromptBuilder *builder,
                                 const char *source,
                                 char **out);

// Releases a prompt builder. NULL is ignored.
//
// # Safety
// `builder` must come from [`mtk_prompt_new`] and not be used afterwards.
void mtk_prompt_free(struct MtkPromptBuilder *builder);

// Extracts the translation from a raw completion: leading whitespace is
// stripped and the text is cut at the first line break.
//
// `finish_reason` and `stop_reason` are the endpoint's fields and may be
// NULL.
//
// # Safety
// `raw` must be valid; `out_text` and `out_finish` valid pointers. The
// string stored in `*out_text` must be freed with [`mtk_string_free`].
enum MtkStatus mtk_postprocess(const char *raw,
                               const char *finish_reason,
                               const char *stop_reason,
                               char **out_text,
                               enum MtkFinish *out_finish);

// Applies the conjunctive filter rule (`score >= threshold` on all three
// scores). NaN marks an absent score, which always drops the segment.
//
// # Safety
// `out` must be a valid pointer.
enum MtkStatus mtk_filter_decision(double bicleaner,
                                   double kiwi_fwd,
                                   double kiwi_rev,
                                   double bicleaner_min,
                                   double kiwi_min,
                                   enum MtkFilterDecision *out);

#endif  /* MTKIT_H */

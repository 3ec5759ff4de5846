#ifndef ADVSL_H
#define ADVSL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Zero is success.
 */
typedef enum {
  ADVSL_STATUS_OK = 0,
  ADVSL_STATUS_CONTRACT = 1,
  ADVSL_STATUS_NON_FINITE = 2,
  ADVSL_STATUS_FORMAT = 3,
  ADVSL_STATUS_IO = 4,
  ADVSL_STATUS_CONFIG = 5,
  ADVSL_STATUS_DIMENSION = 6,
  ADVSL_STATUS_JSON = 7,
  ADVSL_STATUS_NULL_ARGUMENT = 8,
  ADVSL_STATUS_INVALID_UTF8 = 9,
  ADVSL_STATUS_PANIC = 10,
} AdvslStatus;

/**
 * A loaded checkpoint ready for prediction.
 */
typedef struct AdvslClassifier AdvslClassifier;

/**
 * A bilingual dictionary used for code-switching.
 */
typedef struct AdvslDictionary AdvslDictionary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next advsl call on the same thread.
 */
const char *advsl_last_error_message(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void advsl_string_free(char *s);

/**
 * Loads a JSON checkpoint written by `advsl train` or `advsl selflearn`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
AdvslStatus advsl_classifier_load(const char *path, AdvslClassifier **out);

/**
 * # Safety
 * `handle` must come from [`advsl_classifier_load`] and not be used afterwards.
 */
void advsl_classifier_free(AdvslClassifier *handle);

/**
 * Number of classes, or 0 for a NULL handle.
 *
 * # Safety
 * `handle` must be NULL or a live classifier.
 */
size_t advsl_classifier_num_classes(const AdvslClassifier *handle);

/**
 * Name of class `index`, owned by the handle; NULL when out of range.
 *
 * # Safety
 * `handle` must be NULL or a live classifier.
 */
const char *advsl_classifier_class_name(const AdvslClassifier *handle, size_t index);

/**
 * Classifies raw text. Writes the predicted class to `out_class` and, when
 * `probs` is not NULL, the class distribution into `probs[0..probs_len]`;
 * `probs_len` must then equal the number of classes.
 *
 * # Safety
 * `handle` must be a live classifier, `text` NUL-terminated, `out_class`
 * valid, and `probs` NULL or writable for `probs_len` doubles.
 */
AdvslStatus advsl_classifier_predict(const AdvslClassifier *handle,
                                     const char *text,
                                     size_t *out_class,
                                     double *probs,
                                     size_t probs_len);

/**
 * Loads a `source target` per line dictionary. `seed` fixes which
 * translation is used for words with several.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` a valid pointer.
 */
AdvslStatus advsl_dictionary_load(const char *path,
                                  uint64_t seed,
                                  bool lowercase,
                                  AdvslDictionary **out);

/**
 * # Safety
 * `handle` must come from [`advsl_dictionary_load`] and not be used afterwards.
 */
void advsl_dictionary_free(AdvslDictionary *handle);

/**
 * Code-switches one text. The result is written to `out` and must be
 * released with [`advsl_string_free`]; `replaced`, when not NULL, receives
 * the number of replaced tokens.
 *
 * # Safety
 * `handle` must be a live dictionary, `text` NUL-terminated, `out` valid,
 * and `replaced` NULL or valid.
 */
AdvslStatus advsl_dictionary_switch(const AdvslDictionary *handle,
                                    const char *text,
                                    char **out,
                                    size_t *replaced);

/**
 * Worst-case perturbation `epsilon * g / |g|` for a row-major `rows x cols`
 * gradient. Rows with `mask[i] == 0` are ignored and left zero; `mask` may
 * be NULL to use every row. A gradient with norm at most 1e-12 gives zeros.
 *
 * # Safety
 * `grad` and `out` must hold `rows * cols` doubles; `mask` must be NULL or
 * hold `rows` bytes.
 */
AdvslStatus advsl_adversarial_direction(const double *grad,
                                        size_t rows,
                                        size_t cols,
                                        const uint8_t *mask,
                                        double epsilon,
                                        double *out);

/**
 * Library version as a static NUL-terminated string.
 */
const char *advsl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADVSL_H */

#ifndef SL2LAB_H
#define SL2LAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Status codes returned by every entry point.
 */
typedef enum Sl2Status {
  SL2_STATUS_OK = 0,
  SL2_STATUS_NULL_POINTER = 1,
  SL2_STATUS_INVALID_UTF8 = 2,
  SL2_STATUS_INVALID_INPUT = 3,
  SL2_STATUS_PRECONDITION = 4,
  SL2_STATUS_CAP_EXCEEDED = 5,
  SL2_STATUS_IO = 6,
  SL2_STATUS_PANIC = 7,
} Sl2Status;

/**
 * A symmetric generator set of integral matrix pairs.
 */
typedef struct Sl2Generators Sl2Generators;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy of the last error message on this thread, or null if there was none.
 * Release with `sl2_string_free`.
 */
char *sl2_last_error(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void sl2_string_free(char *s);

/**
 * Parse a generator file body (JSON array of matrix pairs, closed under
 * inversion).
 *
 * # Safety
 * `json` must be a nul-terminated string; `out_handle` must be writable.
 */
enum Sl2Status sl2_generators_from_json(const char *json, struct Sl2Generators **out_handle);

/**
 * The built-in Zariski-dense generator set (two pairs and their inverses).
 *
 * # Safety
 * `out_handle` must be writable.
 */
enum Sl2Status sl2_generators_zariski_dense(struct Sl2Generators **out_handle);

/**
 * Number of pairs in the set.
 *
 * # Safety
 * `handle` must be a live handle; `out_len` must be writable.
 */
enum Sl2Status sl2_generators_len(const struct Sl2Generators *handle, uintptr_t *out_len);

/**
 * Release a generator handle. Null is ignored.
 *
 * # Safety
 * `handle` must come from this library and not have been freed.
 */
void sl2_generators_free(struct Sl2Generators *handle);

/**
 * `|SL2(Z/qZ)|`; fails if it does not fit in 64 bits.
 *
 * # Safety
 * `out_order` must be writable.
 */
enum Sl2Status sl2_group_order(uint64_t q, uint64_t *out_order);

/**
 * Second largest eigenvalue of the random-walk operator on the Cayley graph
 * of `pi_{q,q}(<S>)`, and the number of vertices.
 *
 * # Safety
 * `handle` must be a live handle; out-pointers must be writable (`out_n`
 * may be null).
 */
enum Sl2Status sl2_lambda2(const struct Sl2Generators *handle,
                           uint64_t q,
                           double *out_lambda2,
                           uintptr_t *out_n);

/**
 * Check `xyx^-1y^-1 = 1 + xy - yx` over all `x, y = 1 mod p` in
 * `SL2(Z/p^n)`; reports pairs checked and violations.
 *
 * # Safety
 * Out-pointers must be writable.
 */
enum Sl2Status sl2_commutator_sweep(uint64_t p,
                                    uint32_t n,
                                    uint64_t *out_pairs,
                                    uint64_t *out_violations);

/**
 * Run the gluing experiment on the diagonal set `{(g, g)}` over
 * `SL2(Z/q3)`, optionally adding the Zariski-dense generators, and return
 * the report as JSON. Release the string with `sl2_string_free`.
 *
 * # Safety
 * `out_json` must be writable.
 */
enum Sl2Status sl2_glue_diagonal_json(uint64_t q3, bool with_dense, double theta, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SL2LAB_H */

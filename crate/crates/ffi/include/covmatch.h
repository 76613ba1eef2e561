#ifndef COVMATCH_H
#define COVMATCH_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CmStatus {
  CM_STATUS_OK = 0,
  CM_STATUS_NULL_POINTER = 1,
  CM_STATUS_INVALID_ARGUMENT = 2,
  CM_STATUS_NUMERICAL = 3,
  CM_STATUS_BUDGET = 4,
  CM_STATUS_IO = 5,
  CM_STATUS_PANIC = 6,
} CmStatus;

typedef enum CmGraphKind {
  CM_GRAPH_KIND_UNDIRECTED = 0,
  CM_GRAPH_KIND_DIRECTED = 1,
} CmGraphKind;

/**
 * Dense real matrix owned by the library.
 */
typedef struct CmMatrix CmMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *cm_last_error(void);

/**
 * Copy a row-major `rows x cols` buffer into a new matrix.
 *
 * # Safety
 * `data` must point to `rows * cols` readable doubles.
 */
enum CmStatus cm_matrix_new(uintptr_t rows,
                            uintptr_t cols,
                            const double *data,
                            struct CmMatrix **out);

/**
 * # Safety
 * `m` must be null or a handle from this library not yet freed.
 */
void cm_matrix_free(struct CmMatrix *m);

/**
 * # Safety
 * `m` must be a live handle; `rows` and `cols` writable.
 */
enum CmStatus cm_matrix_shape(const struct CmMatrix *m, uintptr_t *rows, uintptr_t *cols);

/**
 * Copy the matrix into a row-major buffer of `len` doubles.
 *
 * # Safety
 * `m` must be a live handle; `out` must hold `len` writable doubles.
 */
enum CmStatus cm_matrix_read(const struct CmMatrix *m, double *out, uintptr_t len);

/**
 * Random undirected graph with `m` edges and weights of magnitude in [0.1, 1].
 *
 * # Safety
 * `out` must be writable.
 */
enum CmStatus cm_gen_undirected(uintptr_t n, uintptr_t m, uint64_t seed, struct CmMatrix **out);

/**
 * Random DAG with edge probability `p` and weight magnitudes in [0.5, 2].
 *
 * # Safety
 * `out` must be writable.
 */
enum CmStatus cm_gen_dag(uintptr_t n, double p, uint64_t seed, struct CmMatrix **out);

/**
 * Random directed graph with cycles, `m` edges, weight magnitudes in [0.1, 1].
 *
 * # Safety
 * `out` must be writable.
 */
enum CmStatus cm_gen_cyclic(uintptr_t n, uintptr_t m, uint64_t seed, struct CmMatrix **out);

/**
 * Population covariance `(I - S)^-1 (I - S)^-T` of a white-noise SEM.
 *
 * # Safety
 * `s` must be a live handle; `out` writable.
 */
enum CmStatus cm_asymptotic_cov(const struct CmMatrix *s,
                                enum CmGraphKind kind,
                                struct CmMatrix **out);

/**
 * Sample covariance of `t` SEM samples.
 *
 * # Safety
 * `s` must be a live handle; `out` writable.
 */
enum CmStatus cm_sample_cov(const struct CmMatrix *s,
                            enum CmGraphKind kind,
                            uintptr_t t,
                            uint64_t seed,
                            struct CmMatrix **out);

/**
 * Undirected recovery by exhaustive search (N <= 24) or branch and bound.
 *
 * # Safety
 * `cov` must be a live handle; `out` writable; `objective` null or writable.
 */
enum CmStatus cm_identify_undirected(const struct CmMatrix *cov,
                                     double alpha,
                                     struct CmMatrix **out,
                                     double *objective);

/**
 * Directed recovery by candidate-set basin hopping with the desk budget.
 * `cycles == 0` keeps the preset cycle count.
 *
 * # Safety
 * `cov` must be a live handle; `out` writable; `cost` null or writable.
 */
enum CmStatus cm_identify_directed(const struct CmMatrix *cov,
                                   double alpha,
                                   uintptr_t cycles,
                                   uint64_t seed,
                                   uintptr_t workers,
                                   struct CmMatrix **out,
                                   double *cost);

/**
 * Normalized squared error `||est - truth||_F^2 / ||truth||_F^2`.
 *
 * # Safety
 * Both handles must be live; `out` writable.
 */
enum CmStatus cm_nse(const struct CmMatrix *truth, const struct CmMatrix *estimate, double *out);

/**
 * Kendall copula covariance of an `N x T` data matrix.
 *
 * # Safety
 * `data` must be a live handle; `out` writable.
 */
enum CmStatus cm_kendall_cov(const struct CmMatrix *data, struct CmMatrix **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COVMATCH_H */

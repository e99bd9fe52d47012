#ifndef LOWRANK_SGD_H
#define LOWRANK_SGD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  LSGD_STATUS_OK = 0,
  LSGD_STATUS_NULL_POINTER = 1,
  /**
   * Argument out of range or inconsistent with the others.
   */
  LSGD_STATUS_INVALID_ARGUMENT = 2,
  LSGD_STATUS_PARSE = 3,
  LSGD_STATUS_CONVERGENCE = 4,
  /**
   * A strict certificate policy met a failing certificate.
   */
  LSGD_STATUS_CERTIFICATE = 5,
  LSGD_STATUS_DENSE_CAP = 6,
  LSGD_STATUS_IO = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  LSGD_STATUS_PANIC = 8,
} LsgdStatus;

/**
 * PSD matrix `V diag(w) Vᵀ` with orthonormal `V`. Opaque.
 */
typedef struct LsgdFactor LsgdFactor;

/**
 * Dense symmetric matrix. Opaque.
 */
typedef struct LsgdMatrix LsgdMatrix;

/**
 * Synthetic least-squares instance with a known optimum. Opaque.
 */
typedef struct LsgdSynthetic LsgdSynthetic;

typedef struct {
  /**
   * 1 when the rank-r projection is exact.
   */
  int32_t certified;
  /**
   * `Σ_{i≤r} λ_i − 1 − r·λ_{r+1}`.
   */
  double margin;
  double threshold;
} LsgdCertificate;

typedef struct {
  /**
   * Horizon T.
   */
  size_t iterations;
  /**
   * Fixed step size; 0 selects the theorem step for this instance and T.
   */
  double eta;
  /**
   * Minibatch size; 0 selects the theorem batch size.
   */
  size_t batch;
  /**
   * Projection rank; 0 uses the rank of X*.
   */
  size_t rank;
  uint64_t seed;
  /**
   * 1 returns a sampled iterate, 2 the average of all iterates.
   */
  int32_t output_option;
  /**
   * Distance of the warm start from X*; negative selects half the
   * theorem radius. Ignored when a start point is passed.
   */
  double start_radius;
} LsgdRunOptions;

typedef struct {
  double final_objective;
  double fraction_certified;
  size_t max_rank;
  size_t escalated_steps;
  size_t full_spectrum_steps;
  /**
   * `max_t ‖X_t − X*‖_F²`.
   */
  double max_distance_sq;
  double eta;
  size_t batch;
  double total_seconds;
} LsgdRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *lsgd_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lsgd_version(void);

/**
 * Copies an `n × n` row-major array; the input is symmetrized.
 */
LsgdStatus lsgd_matrix_new(size_t n, const double *data, LsgdMatrix **out);

void lsgd_matrix_free(LsgdMatrix *m);

void lsgd_factor_free(LsgdFactor *f);

/**
 * Dimension `n`, or 0 for NULL.
 */
size_t lsgd_factor_dim(const LsgdFactor *f);

/**
 * Number of stored components, or 0 for NULL.
 */
size_t lsgd_factor_rank(const LsgdFactor *f);

/**
 * Copies the `rank` weights into `out` (length `len`, at least `rank`).
 */
LsgdStatus lsgd_factor_weights(const LsgdFactor *f, double *out, size_t len);

/**
 * Copies the `n × rank` basis column-major into `out`.
 */
LsgdStatus lsgd_factor_basis(const LsgdFactor *f, double *out, size_t len);

/**
 * Writes the dense `n × n` matrix row-major into `out`.
 */
LsgdStatus lsgd_factor_to_dense(const LsgdFactor *f, double *out, size_t len);

/**
 * Squared Frobenius distance between two factors of equal dimension.
 */
LsgdStatus lsgd_factor_distance_sq(const LsgdFactor *a, const LsgdFactor *b, double *out);

/**
 * Solves `Σ max(0, v_i − λ) = mass` for `values` sorted non-increasing.
 */
LsgdStatus lsgd_simplex_threshold(const double *values, size_t len, double mass, double *lambda);

/**
 * Exact projection onto `{X ⪰ 0, tr X = 1}` from the full spectrum.
 */
LsgdStatus lsgd_project_full(const LsgdMatrix *m, LsgdFactor **out);

/**
 * Rank-`r` projection from the top `r + 1` eigenpairs. When the certificate
 * fails the call still succeeds, `*out` is set to NULL and `report`
 * explains why.
 */
LsgdStatus lsgd_project_lowrank(const LsgdMatrix *m,
                                size_t r,
                                LsgdFactor **out,
                                LsgdCertificate *report);

LsgdStatus lsgd_synthetic_generate(size_t n,
                                   size_t r_star,
                                   double delta,
                                   double sigma,
                                   uint64_t seed,
                                   LsgdSynthetic **out);

/**
 * Loads an instance from the JSON document written by `lowrank-sgd gen`.
 */
LsgdStatus lsgd_synthetic_from_json(const char *json, LsgdSynthetic **out);

void lsgd_synthetic_free(LsgdSynthetic *s);

/**
 * Eigengap of the gradient at the optimum, or NaN for NULL.
 */
double lsgd_synthetic_gap(const LsgdSynthetic *s);

/**
 * Copy of the optimum X*.
 */
LsgdStatus lsgd_synthetic_optimum(const LsgdSynthetic *s, LsgdFactor **out);

LsgdStatus lsgd_synthetic_objective(const LsgdSynthetic *s, const LsgdFactor *x, double *out);

LsgdRunOptions lsgd_run_options_default(void);

/**
 * Runs SGD on a synthetic instance. `start` may be NULL (warm start per
 * `opts.start_radius`); `final_iterate` may be NULL when not wanted.
 */
LsgdStatus lsgd_synthetic_run(const LsgdSynthetic *s,
                              const LsgdFactor *start,
                              const LsgdRunOptions *opts,
                              LsgdRunSummary *summary,
                              LsgdFactor **final_iterate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOWRANK_SGD_H */

#ifndef QDECAY_H
#define QDECAY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum QdStatus {
  QD_STATUS_OK = 0,
  QD_STATUS_NULL_POINTER = 1,
  QD_STATUS_DOMAIN = 2,
  QD_STATUS_NOT_BRACKETED = 3,
  QD_STATUS_DEGENERATE_STATE = 4,
  QD_STATUS_INCOMPLETE_BASIS = 5,
  QD_STATUS_QUADRATURE_BUDGET = 6,
  QD_STATUS_BOUNDARY_CONTAMINATION = 7,
  QD_STATUS_DEGENERATE_COMBINATION = 8,
  QD_STATUS_CONFIG = 9,
  QD_STATUS_IO = 10,
  QD_STATUS_BUFFER_TOO_SMALL = 11,
  QD_STATUS_PANIC = 12,
} QdStatus;

/**
 * Spectral decomposition of a state in the scattering basis.
 */
typedef struct QdDecomposition QdDecomposition;

/**
 * Finite-range potential.
 */
typedef struct QdPotential QdPotential;

/**
 * Initial state sampled on a radial grid.
 */
typedef struct QdState QdState;

/**
 * Power-law fit summary.
 */
typedef struct QdFit {
  double exponent;
  double intercept;
  double residual;
  double window_lo;
  double window_hi;
  size_t samples;
  bool unstable;
} QdFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a NUL-terminated string with static lifetime.
 */
const char *qd_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t qd_last_error(char *buf, size_t len);

/**
 * `lambda · δ(r - a)`.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum QdStatus qd_potential_delta_shell(double lambda, double a, struct QdPotential **out);

/**
 * # Safety
 * `p` must be null or a handle from this library, not yet freed.
 */
void qd_potential_free(struct QdPotential *p);

/**
 * Jost function `f(k)` at complex momentum `k = re + i im`.
 *
 * # Safety
 * Handles and output pointers must be valid.
 */
enum QdStatus qd_jost(const struct QdPotential *potential,
                      double re,
                      double im,
                      double *out_re,
                      double *out_im);

/**
 * `f(0)`; vanishes at a zero-energy resonance.
 *
 * # Safety
 * Handles and output pointers must be valid.
 */
enum QdStatus qd_jost_at_zero(const struct QdPotential *potential, double *out);

/**
 * Bound-state momenta `κ` (energy `-κ²`), ascending. `count` receives the
 * number found; `BufferTooSmall` is returned when it exceeds `capacity`.
 *
 * # Safety
 * `kappa` must point to `capacity` writable values (or be null when
 * `capacity` is zero).
 */
enum QdStatus qd_bound_states(const struct QdPotential *potential,
                              double *kappa,
                              size_t capacity,
                              size_t *count);

/**
 * `sqrt(2/R) sin(n π r / R)` on `n_points` nodes of `[0, r_max]`.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum QdStatus qd_state_sine_box(uint32_t mode,
                                double radius,
                                double r_max,
                                size_t n_points,
                                struct QdState **out);

/**
 * Normalized Gaussian bump supported in `[0, radius]`.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum QdStatus qd_state_gaussian_bump(double center,
                                     double width,
                                     double radius,
                                     double r_max,
                                     size_t n_points,
                                     struct QdState **out);

/**
 * New state with the bound components of `potential` removed.
 *
 * # Safety
 * Handles and `out` must be valid.
 */
enum QdStatus qd_state_project_bound(const struct QdState *state,
                                     const struct QdPotential *potential,
                                     struct QdState **out);

/**
 * # Safety
 * `s` must be null or a handle from this library, not yet freed.
 */
void qd_state_free(struct QdState *s);

/**
 * Decomposes `state` with default quadrature settings. A positive `k_max`
 * fixes the momentum cutoff; zero or negative selects it automatically.
 *
 * # Safety
 * Handles and `out` must be valid.
 */
enum QdStatus qd_decompose(const struct QdState *state,
                           const struct QdPotential *potential,
                           double k_max,
                           struct QdDecomposition **out);

/**
 * Continuum plus bound weight; 1 for a complete basis.
 *
 * # Safety
 * Handles and output pointers must be valid.
 */
enum QdStatus qd_decomposition_parseval(const struct QdDecomposition *decomposition, double *out);

/**
 * # Safety
 * `d` must be null or a handle from this library, not yet freed.
 */
void qd_decomposition_free(struct QdDecomposition *d);

/**
 * `P(t) = ∫₀^R |Ψ(r, t)|² dr` from a single spectral propagation.
 *
 * # Safety
 * Handles and output pointers must be valid.
 */
enum QdStatus qd_nonescape(const struct QdDecomposition *decomposition,
                           double t,
                           double region_radius,
                           double *out);

/**
 * Nonescape curve at `n` times with the panel-halving check. Values that
 * pass are written in order to `values`; `reliable` receives how many.
 *
 * # Safety
 * `times` and `values` must each hold `n` values.
 */
enum QdStatus qd_decay_curve(const struct QdDecomposition *decomposition,
                             double region_radius,
                             const double *times,
                             size_t n,
                             double *values,
                             size_t *reliable);

/**
 * Least-squares power law through `(times, values)`. A window with
 * `window_hi <= window_lo` selects the default (last 1.5 decades).
 *
 * # Safety
 * `times` and `values` must each hold `n` values; `out` must be valid.
 */
enum QdStatus qd_fit_exponent(const double *times,
                              const double *values,
                              size_t n,
                              double window_lo,
                              double window_hi,
                              struct QdFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QDECAY_H */

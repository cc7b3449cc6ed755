#ifndef FLOWSDE_H
#define FLOWSDE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FlowsdeStatus {
  FLOWSDE_STATUS_OK = 0,
  FLOWSDE_STATUS_NULL_POINTER = 1,
  FLOWSDE_STATUS_INVALID_PARAMETER = 2,
  FLOWSDE_STATUS_POLE = 3,
  FLOWSDE_STATUS_DOMAIN = 4,
  FLOWSDE_STATUS_DIMENSION_MISMATCH = 5,
  FLOWSDE_STATUS_INSUFFICIENT_DATA = 6,
  FLOWSDE_STATUS_PANIC = 7,
} FlowsdeStatus;

typedef enum FlowsdeFamily {
  FLOWSDE_FAMILY_DETERMINISTIC = 0,
  FLOWSDE_FAMILY_CONSTANT = 1,
  FLOWSDE_FAMILY_SINGULAR = 2,
  FLOWSDE_FAMILY_NON_SINGULAR = 3,
  FLOWSDE_FAMILY_ZERO_ENDS = 4,
  /**
   * Uses `n` and `m` of [`FlowsdeSampler`].
   */
  FLOWSDE_FAMILY_CUSTOM_POWER = 5,
} FlowsdeFamily;

/**
 * Simulated trajectories of one trial.
 */
typedef struct FlowsdeEnsemble FlowsdeEnsemble;

/**
 * A flow field with a Gaussian `p1`.
 */
typedef struct FlowsdeField FlowsdeField;

/**
 * Diffusion schedule `g~(t) = alpha t^(n/2) (1-t)^(m/2)`.
 */
typedef struct FlowsdeSampler {
  enum FlowsdeFamily family;
  double alpha;
  uint32_t n;
  int32_t m;
} FlowsdeSampler;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a successful call.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *flowsde_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *flowsde_version(void);

/**
 * Flow from `N(mean0, var0 I)` to `N(mean1, var1 I)`; `mean0` and `mean1` have `dim` entries.
 *
 * # Safety
 * `mean0` and `mean1` must point to `dim` readable doubles; `out` must be writable.
 */
enum FlowsdeStatus flowsde_field_gaussian(size_t dim,
                                          const double *mean0,
                                          double var0,
                                          const double *mean1,
                                          double var1,
                                          struct FlowsdeField **out);

/**
 * Flow from a mixture of `components` isotropic Gaussians to `N(mean1, var1 I)`.
 * `means` is `[components x dim]`; `weights` and `variances` have `components` entries.
 *
 * # Safety
 * All pointers must reference arrays of the stated shapes; `out` must be writable.
 */
enum FlowsdeStatus flowsde_field_mixture(size_t dim,
                                         size_t components,
                                         const double *weights,
                                         const double *means,
                                         const double *variances,
                                         const double *mean1,
                                         double var1,
                                         struct FlowsdeField **out);

/**
 * # Safety
 * `field` must come from a `flowsde_field_*` constructor and not be used afterwards.
 */
void flowsde_field_free(struct FlowsdeField *field);

/**
 * Dimension of the field, or 0 for a null handle.
 *
 * # Safety
 * `field` must be null or a live handle.
 */
size_t flowsde_field_dim(const struct FlowsdeField *field);

/**
 * Writes `v(x, t)` to `out` (`dim` entries).
 *
 * # Safety
 * `field` must be live; `x` and `out` must reference `dim` doubles.
 */
enum FlowsdeStatus flowsde_velocity(const struct FlowsdeField *field,
                                    const double *x,
                                    double t,
                                    double *out);

/**
 * Writes the score imputed from the velocity to `out`; fails with a domain error at `t = 0`.
 *
 * # Safety
 * As [`flowsde_velocity`].
 */
enum FlowsdeStatus flowsde_score(const struct FlowsdeField *field,
                                 const double *x,
                                 double t,
                                 double *out);

/**
 * Evaluates `g~(t)`.
 *
 * # Safety
 * `sampler` and `out` must be valid pointers.
 */
enum FlowsdeStatus flowsde_g_tilde(const struct FlowsdeSampler *sampler, double t, double *out);

/**
 * Reverse-time drift (`dim` entries) and diffusion of the sampler at `(x, t)`.
 *
 * # Safety
 * `field` and `sampler` must be live; `x` and `drift` must reference `dim` doubles;
 * `diffusion` must be writable.
 */
enum FlowsdeStatus flowsde_reverse_coefficients(const struct FlowsdeField *field,
                                                const struct FlowsdeSampler *sampler,
                                                const double *x,
                                                double t,
                                                double *drift,
                                                double *diffusion);

/**
 * Runs `count` reverse-time trajectories from `p1` at `t_start` to `t = 0` over
 * `num_steps` Euler–Maruyama steps. A non-finite `t_start` selects the family default
 * (`1`, or `1 - 1e-3` for families with a pole at `t = 1`).
 *
 * # Safety
 * `field` and `sampler` must be live; `out` must be writable.
 */
enum FlowsdeStatus flowsde_simulate(const struct FlowsdeField *field,
                                    const struct FlowsdeSampler *sampler,
                                    double t_start,
                                    size_t num_steps,
                                    size_t count,
                                    uint64_t seed,
                                    uint64_t trial,
                                    bool final_step_noise,
                                    struct FlowsdeEnsemble **out);

/**
 * # Safety
 * `ensemble` must come from [`flowsde_simulate`] and not be used afterwards.
 */
void flowsde_ensemble_free(struct FlowsdeEnsemble *ensemble);

/**
 * # Safety
 * `ensemble` must be null or live.
 */
size_t flowsde_ensemble_count(const struct FlowsdeEnsemble *ensemble);

/**
 * # Safety
 * `ensemble` must be null or live.
 */
size_t flowsde_ensemble_dim(const struct FlowsdeEnsemble *ensemble);

/**
 * Number of recorded times (`num_steps + 1`).
 *
 * # Safety
 * `ensemble` must be null or live.
 */
size_t flowsde_ensemble_num_times(const struct FlowsdeEnsemble *ensemble);

/**
 * # Safety
 * `ensemble` must be null or live.
 */
bool flowsde_ensemble_diverged(const struct FlowsdeEnsemble *ensemble);

/**
 * Copies the recorded times (descending) into `out`, which holds `len` doubles.
 *
 * # Safety
 * `ensemble` must be live; `out` must reference `len` writable doubles.
 */
enum FlowsdeStatus flowsde_ensemble_times(const struct FlowsdeEnsemble *ensemble,
                                          double *out,
                                          size_t len);

/**
 * Copies the `t = 0` states, `[count x dim]`, into `out`, which holds `len` doubles.
 *
 * # Safety
 * `ensemble` must be live; `out` must reference `len` writable doubles.
 */
enum FlowsdeStatus flowsde_ensemble_final_states(const struct FlowsdeEnsemble *ensemble,
                                                 double *out,
                                                 size_t len);

/**
 * `KL(N(m1, v1) || N(m2, v2))`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FlowsdeStatus flowsde_gaussian_kl(double m1, double v1, double m2, double v2, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWSDE_H */

#ifndef DRIFTGP_H
#define DRIFTGP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  DRIFT_GP_KERNEL_AUTO = 0,
  DRIFT_GP_KERNEL_RBF = 1,
  DRIFT_GP_KERNEL_MATERN52 = 2,
  DRIFT_GP_KERNEL_RATIONAL_QUADRATIC = 3,
  DRIFT_GP_KERNEL_POLYNOMIAL = 4,
  DRIFT_GP_KERNEL_PERIODIC = 5,
} DriftGpKernel;

typedef enum {
  DRIFT_GP_KPI_R2 = 0,
  DRIFT_GP_KPI_MSE = 1,
} DriftGpKpi;

typedef enum {
  DRIFT_GP_STATUS_OK = 0,
  DRIFT_GP_STATUS_NULL_POINTER = 1,
  DRIFT_GP_STATUS_INVALID_INPUT = 2,
  DRIFT_GP_STATUS_VALIDATION = 3,
  DRIFT_GP_STATUS_NUMERICAL = 4,
  DRIFT_GP_STATUS_STATE = 5,
  DRIFT_GP_STATUS_PANIC = 6,
} DriftGpStatus;

typedef enum {
  DRIFT_GP_VERDICT_NONE = 0,
  DRIFT_GP_VERDICT_INCREMENTAL = 1,
  DRIFT_GP_VERDICT_ABRUPT = 2,
} DriftGpVerdict;

/**
 * Opaque model handle.
 */
typedef struct DriftGpModel DriftGpModel;

/**
 * Model settings. Start from [`driftgp_config_default`].
 */
typedef struct {
  size_t max_inducing;
  /**
   * Decay rate per batch; ignored unless `decay_enabled`.
   */
  double gamma;
  bool decay_enabled;
  DriftGpKernel initial_kernel;
  double ik_threshold;
  double uncertainty_threshold;
  double zeta;
  double rho;
  DriftGpKpi kpi;
  /**
   * KPI window capacity; 0 selects the lower window bound.
   */
  size_t window_capacity;
  double val_fraction;
} DriftGpConfig;

/**
 * Outcome of one update. `r2` is NaN when undefined for the batch.
 */
typedef struct {
  uint64_t batch_index;
  double mse;
  double r2;
  DriftGpVerdict verdict;
  bool hyperopt_ran;
  bool kernel_switched;
  DriftGpKernel active_kernel;
  size_t inducing_count;
  size_t absorbed_count;
} DriftGpStepReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Defaults: 100 inducing points, decay 0.99, RBF, R² KPI, ρ 0.006, ζ 0.005.
 */
DriftGpConfig driftgp_config_default(void);

/**
 * Fits a model on an initial batch of `n` rows. `config` may be null for defaults.
 * On success `*out` owns the model; release it with [`driftgp_model_free`].
 *
 * # Safety
 * `x` must address `n * d` values, `y` `n` values, and `out` one writable pointer.
 */
DriftGpStatus driftgp_model_new(const DriftGpConfig *config,
                                const double *x,
                                const double *y,
                                size_t n,
                                size_t d,
                                DriftGpModel **out);

/**
 * Processes one mini-batch. On failure the model is left as it was.
 *
 * # Safety
 * `model` must be a live handle; `x` must address `n * d` values and `y` `n` values.
 * `report` may be null.
 */
DriftGpStatus driftgp_model_update(DriftGpModel *model,
                                   const double *x,
                                   const double *y,
                                   size_t n,
                                   size_t d,
                                   DriftGpStepReport *report);

/**
 * Posterior mean and latent (noise-free) variance at `n` query rows. `variance` may be null.
 *
 * # Safety
 * `model` must be a live handle; `x` must address `n * d` values; `mean` (and
 * `variance` when non-null) must have room for `n` values.
 */
DriftGpStatus driftgp_model_predict(const DriftGpModel *model,
                                    const double *x,
                                    size_t n,
                                    size_t d,
                                    double *mean,
                                    double *variance);

/**
 * Number of retained inducing points, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t driftgp_model_inducing_count(const DriftGpModel *model);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void driftgp_model_free(DriftGpModel *model);

/**
 * Message of the most recent failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *driftgp_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRIFTGP_H */

#ifndef KDGM_H
#define KDGM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum KdgmStatus {
  KDGM_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or wrong slice length.
   */
  KDGM_STATUS_INVALID_ARGUMENT = 1,
  KDGM_STATUS_IO = 2,
  /**
   * The model file failed validation.
   */
  KDGM_STATUS_FORMAT = 3,
  /**
   * A query fell outside the trained domain.
   */
  KDGM_STATUS_OUT_OF_DOMAIN = 4,
  /**
   * Inconsistent parameters, such as a pricing request the model cannot serve.
   */
  KDGM_STATUS_CONFIG = 5,
  KDGM_STATUS_OTHER = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  KDGM_STATUS_PANIC = 7,
} KdgmStatus;

typedef enum KdgmModelKind {
  KDGM_MODEL_KIND_GBM = 0,
  KDGM_MODEL_KIND_HESTON = 1,
  KDGM_MODEL_KIND_TD_HESTON = 2,
} KdgmModelKind;

typedef enum KdgmOptionKind {
  KDGM_OPTION_KIND_CALL = 0,
  KDGM_OPTION_KIND_PUT = 1,
} KdgmOptionKind;

/**
 * A loaded model. Opaque to C.
 */
typedef struct KdgmModel KdgmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model file. On success `*out` owns the model; release it with
 * [`kdgm_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KdgmStatus kdgm_model_load(const char *path, struct KdgmModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`kdgm_model_load`] and not be used afterwards.
 */
void kdgm_model_free(struct KdgmModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum KdgmStatus kdgm_model_kind(const struct KdgmModel *model, enum KdgmModelKind *out);

/**
 * Number of network inputs.
 *
 * # Safety
 * `model` must be a live handle or null (which gives 0).
 */
uintptr_t kdgm_model_input_dim(const struct KdgmModel *model);

/**
 * Lower and upper bound of input `coord`.
 *
 * # Safety
 * `model` must be a live handle; `lo` and `hi` valid pointers.
 */
enum KdgmStatus kdgm_model_bounds(const struct KdgmModel *model,
                                  uintptr_t coord,
                                  double *lo,
                                  double *hi);

/**
 * The learned CDF at one input row of length `len`.
 *
 * # Safety
 * `input` must point to `len` doubles; `out` must be valid.
 */
enum KdgmStatus kdgm_model_eval(const struct KdgmModel *model,
                                const double *input,
                                uintptr_t len,
                                double *out);

/**
 * One-factor density at `(t, x, y, sigma)` with differencing step `delta`.
 *
 * # Safety
 * `model` must be a live handle and `out` valid.
 */
enum KdgmStatus kdgm_density_1d(const struct KdgmModel *model,
                                double t,
                                double x,
                                double y,
                                double sigma,
                                double delta,
                                double *out);

/**
 * Two-factor density at `(t, x, v, y, z)`; `params` are the inputs after
 * `z` (four for the constant-parameter model, none otherwise).
 *
 * # Safety
 * `params` must point to `n_params` doubles; `out` must be valid.
 */
enum KdgmStatus kdgm_density_2d(const struct KdgmModel *model,
                                double t,
                                double x,
                                double v,
                                double y,
                                double z,
                                const double *params,
                                uintptr_t n_params,
                                double delta,
                                double *out);

/**
 * Prices a vanilla option under a one-factor model by quadrature over
 * the network density.
 *
 * # Safety
 * `model` must be a live handle and `out` valid.
 */
enum KdgmStatus kdgm_price_1d(const struct KdgmModel *model,
                              enum KdgmOptionKind kind,
                              double spot,
                              double strike,
                              double maturity,
                              double sigma,
                              uintptr_t mesh_points,
                              double *out);

/**
 * Prices a vanilla option under a two-factor model. `vol` sets the width
 * of the log-price integration range.
 *
 * # Safety
 * `params` must point to `n_params` doubles; `out` must be valid.
 */
enum KdgmStatus kdgm_price_2d(const struct KdgmModel *model,
                              enum KdgmOptionKind kind,
                              double spot,
                              double strike,
                              double maturity,
                              double v0,
                              const double *params,
                              uintptr_t n_params,
                              double vol,
                              uintptr_t mesh_points,
                              double *out);

/**
 * Black-Scholes price with zero rates.
 */
double kdgm_bs_price(double spot,
                     double strike,
                     double sigma,
                     double maturity,
                     enum KdgmOptionKind kind);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * excluding the terminator.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null with `len == 0`.
 */
uintptr_t kdgm_last_error(char *buf, uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KDGM_H */

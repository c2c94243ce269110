#ifndef CBI_LAB_H
#define CBI_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum CbiStatus {
  CBI_STATUS_OK = 0,
  CBI_STATUS_NULL_POINTER = 1,
  CBI_STATUS_INVALID_UTF8 = 2,
  CBI_STATUS_PARSE = 3,
  CBI_STATUS_VALIDATION = 4,
  CBI_STATUS_SPECTRAL = 5,
  CBI_STATUS_QUADRATURE = 6,
  CBI_STATUS_COEFFICIENTS = 7,
  CBI_STATUS_MOMENTS = 8,
  CBI_STATUS_SIMULATION = 9,
  CBI_STATUS_HARNESS = 10,
  CBI_STATUS_IO = 11,
  CBI_STATUS_BUFFER_TOO_SMALL = 12,
  CBI_STATUS_INVALID_ARGUMENT = 13,
  CBI_STATUS_PANIC = 14,
} CbiStatus;

typedef enum CbiRegime {
  CBI_REGIME_SUBCRITICAL = -1,
  CBI_REGIME_CRITICAL = 0,
  CBI_REGIME_SUPERCRITICAL = 1,
} CbiRegime;

// Opaque validated model.
typedef struct CbiModel CbiModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cbi_version(void);

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *cbi_last_error(void);

// Parses and validates a JSON model document.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a writable pointer.
enum CbiStatus cbi_model_from_json(const char *json, struct CbiModel **out);

// Releases a model. NULL is ignored.
//
// # Safety
// `model` must come from [`cbi_model_from_json`] and not be used afterwards.
void cbi_model_free(struct CbiModel *model);

// # Safety
// Pointers must be valid or NULL.
enum CbiStatus cbi_model_dim(const struct CbiModel *model, size_t *out);

// Regime and spectral bound of the effective branching matrix.
//
// # Safety
// Pointers must be valid or NULL.
enum CbiStatus cbi_classify(const struct CbiModel *model, enum CbiRegime *regime, double *s);

// Perron vectors `u`, `v` (each `d` values) and the decay constants. For
// `d = 1`, `kappa` is `+inf`.
//
// # Safety
// `u` and `v` must hold `len` doubles; other pointers must be valid.
enum CbiStatus cbi_perron(const struct CbiModel *model,
                          double *u,
                          double *v,
                          size_t len,
                          double *kappa,
                          double *cconst);

// Coefficients `a = <v, betatilde>` and `b = <Cbar v, v>` of the limit
// diffusion `dX = a dt + sqrt(b X^+) dW`.
//
// # Safety
// Pointers must be valid or NULL.
enum CbiStatus cbi_limit_coefficients(const struct CbiModel *model, double *a, double *b);

// `E(X_t)` into `out` (`d` values).
//
// # Safety
// `out` must hold `len` doubles.
enum CbiStatus cbi_mean_at(const struct CbiModel *model, double t, double *out, size_t len);

// `e^{tA}` for a row-major `d x d` matrix `a`, written row-major into `out`.
//
// # Safety
// `a` and `out` must each hold `d * d` doubles.
enum CbiStatus cbi_matrix_exp(const double *a, size_t d, double t, double *out);

// Integer-time skeleton `X_0, ..., X_horizon` of one CBI path drawn from
// stream `stream` of `seed`, with adaptive steps no longer than `max_dt`.
// Written row-major: `out[k * d + i]` is coordinate `i` at time `k`.
//
// # Safety
// `out` must hold `len >= (horizon + 1) * d` doubles.
enum CbiStatus cbi_simulate_skeleton(const struct CbiModel *model,
                                     size_t horizon,
                                     double max_dt,
                                     uint64_t seed,
                                     uint64_t stream,
                                     double *out,
                                     size_t len);

// `n` exact draws of the limit at time `t` started from 0.
//
// # Safety
// `out` must hold `n` doubles.
enum CbiStatus cbi_sample_limit_exact(double a,
                                      double b,
                                      double t,
                                      size_t n,
                                      uint64_t seed,
                                      double *out);

// Kolmogorov–Smirnov distance of `n` samples to `Gamma(shape, rate)`.
//
// # Safety
// `samples` must hold `n` doubles.
enum CbiStatus cbi_ks_gamma(const double *samples,
                            size_t n,
                            double shape,
                            double rate,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CBI_LAB_H */

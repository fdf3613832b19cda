#ifndef AGMON_LAB_H
#define AGMON_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AgmonStatus {
  AGMON_STATUS_OK = 0,
  AGMON_STATUS_NULL_POINTER = 1,
  AGMON_STATUS_INVALID_ARGUMENT = 2,
  AGMON_STATUS_UNKNOWN_MODEL = 3,
  AGMON_STATUS_NUMERICAL = 4,
  AGMON_STATUS_IO = 5,
  AGMON_STATUS_PANIC = 6,
  AGMON_STATUS_BUFFER_TOO_SMALL = 7,
  // The run completed but at least one verdict failed.
  AGMON_STATUS_VERDICT_FAILED = 8,
} AgmonStatus;

// Opaque model handle.
typedef struct AgmonModel AgmonModel;

// Opaque phase-series handle.
typedef struct AgmonPhaseSeries AgmonPhaseSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// NUL-terminated crate version; static storage.
const char *agmon_version(void);

// Copies the calling thread's last error message (NUL-terminated) into
// `buf`. `needed` receives the required capacity including the NUL; pass a
// null `buf` with `cap = 0` to query it.
//
// # Safety
// `buf` must be valid for `cap` bytes; `needed` may be null.
enum AgmonStatus agmon_last_error(char *buf, size_t cap, size_t *needed);

// Builds a catalogue model. `params_json` is a JSON object of numeric
// overrides, or null for the defaults.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum AgmonStatus agmon_model_new(const char *name,
                                 const char *params_json,
                                 struct AgmonModel **out);

// # Safety
// `model` must come from [`agmon_model_new`] and not be used afterwards.
void agmon_model_free(struct AgmonModel *model);

// Reference energy E, collar half-width r₀ and the margin min(V − E).
//
// # Safety
// `model` must be a live handle; outputs must be writable.
enum AgmonStatus agmon_model_info(const struct AgmonModel *model,
                                  double *energy,
                                  double *collar_width,
                                  double *margin);

// V − E at `(x', x_n)`.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum AgmonStatus agmon_model_excess(const struct AgmonModel *model,
                                    double xprime,
                                    double xn,
                                    double *out);

// Flat Poisson multiplier `e^{−(ρ/h)√(1+ξ²)}`.
//
// # Safety
// `out` must be writable.
enum AgmonStatus agmon_poisson_multiplier(double xi, double rho, double h, double *out);

// Applies the flat half-plane Poisson operator at height ρ to `n` samples
// (`n` a power of two) of period `length`. `im` / `out_im` may be null for
// real data.
//
// # Safety
// Input arrays must hold `n` values and output arrays `n` slots.
enum AgmonStatus agmon_halfplane_poisson(const double *re,
                                         const double *im,
                                         size_t n,
                                         double length,
                                         double h,
                                         double rho,
                                         double *out_re,
                                         double *out_im);

// Fraction of semiclassical Fourier mass outside |ξ| ≤ δ.
//
// # Safety
// Input arrays must hold `n` values; `out` must be writable.
enum AgmonStatus agmon_exterior_mass_fraction(const double *re,
                                              const double *im,
                                              size_t n,
                                              double length,
                                              double h,
                                              double delta,
                                              double *out);

// `f_λ(P)` of a symmetric row-major `n × n` matrix via the
// Helffer–Sjöstrand quadrature (`spectral = 0`) or an eigendecomposition
// (`spectral = 1`).
//
// # Safety
// `p` must hold `n²` values and `out` `n²` slots.
enum AgmonStatus agmon_hs_apply(const double *p,
                                size_t n,
                                double lambda,
                                double h,
                                int32_t spectral,
                                double *out);

// Formal phase series of order `order` on the ξ' grid `xi[0..nxi]`.
// `ambient = 0` selects the Agmon-metric normalization.
//
// # Safety
// `model` must be live, `xi` must hold `nxi` values, `out` writable.
enum AgmonStatus agmon_phase_series_new(const struct AgmonModel *model,
                                        size_t order,
                                        const double *xi,
                                        size_t nxi,
                                        int32_t ambient,
                                        struct AgmonPhaseSeries **out);

// # Safety
// `series` must come from [`agmon_phase_series_new`] and not be used afterwards.
void agmon_phase_series_free(struct AgmonPhaseSeries *series);

// `φ₁` and `∂_{x_n}φ₁` at `(ξ', x_n)` for a tangentially constant series.
// In the Agmon normalization `φ₁` excludes the zero-section term `x_n`.
//
// # Safety
// `series` must be live; outputs must be writable.
enum AgmonStatus agmon_phase_eval(const struct AgmonPhaseSeries *series,
                                  double xi,
                                  double xn,
                                  double *phase,
                                  double *derivative);

// Runs every experiment in a JSON config file. `out_dir` and `only` may be
// null. Returns [`AgmonStatus::VerdictFailed`] when the run finished with
// failing verdicts; `failed` receives their count.
//
// # Safety
// String arguments must be NUL-terminated; `failed` may be null.
enum AgmonStatus agmon_run_config(const char *path,
                                  const char *out_dir,
                                  const char *only,
                                  size_t *failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGMON_LAB_H */

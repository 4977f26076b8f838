#ifndef REVLAB_H
#define REVLAB_H

/* Generated by cbindgen from the revlab-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Band profile selector for `rv_metric_bridge_torus`.
typedef enum {
  // a = cos x on the band: isometric to a spherical equatorial band.
  RV_BAND_PROFILE_COS = 0,
  // a = sqrt(1 - x^2): the same circle traced by height.
  RV_BAND_PROFILE_SQRT = 1,
} RvBandProfile;

// Result code for every fallible call in this ABI.
typedef enum {
  RV_STATUS_OK = 0,
  // A required pointer argument was null.
  RV_STATUS_NULL_ARGUMENT = 1,
  // An argument value was rejected before any work started.
  RV_STATUS_INVALID_ARGUMENT = 2,
  // Metric construction failed; see `rv_last_error`.
  RV_STATUS_CONSTRUCTION_FAILED = 3,
  // The eigenvalue solve failed or the grid was too coarse.
  RV_STATUS_SOLVE_FAILED = 4,
  // A spectral functional rejected the query (for example a lambda
  // beyond the table's range).
  RV_STATUS_EVALUATION_FAILED = 5,
  // The caller's buffer cannot hold the result; the required size was
  // written to the length out pointer.
  RV_STATUS_BUFFER_TOO_SMALL = 6,
  // A panic was caught at the ABI boundary.
  RV_STATUS_PANIC = 7,
} RvStatus;

// Opaque surface-of-revolution metric.
typedef struct RvMetric RvMetric;

// Opaque eigenmode table. Keeps a copy of the metric it was assembled on,
// so functional queries cannot be evaluated against the wrong geometry.
typedef struct RvTable RvTable;

// Cotangent-bundle state of a geodesic: base point and covector.
typedef struct {
  double x;
  double theta;
  double xi_x;
  double xi_theta;
} RvPhasePoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` as a
// NUL-terminated string, truncating if needed.
//
// Returns the byte length required to hold the full message including the
// terminator. `buf` may be null (with `cap` 0) to query the length alone.
// The message describes the most recent call on this thread that returned a
// status other than `Ok`.
//
// # Safety
// `buf` must be null or valid for writes of `cap` bytes.
size_t rv_last_error(char *buf, size_t cap);

// Returns the crate version as a static NUL-terminated string.
const char *rv_version(void);

// Flat torus with constant profile value `profile_value` (the profile
// circle has circumference 2π times this) and the given base circle length.
//
// # Safety
// `out` must be valid for a single pointer write.
RvStatus rv_metric_flat_torus(double profile_value, double base_length, RvMetric **out);

// Unit round sphere (profile sin x on [0, π]).
//
// # Safety
// `out` must be valid for a single pointer write.
RvStatus rv_metric_round_sphere(RvMetric **out);

// Flat torus with a grafted curved band of half-width `band_half_width`,
// glued over bridge zones of width `bridge_width` to a flat part of length
// `flat_length` (which must be at least 2π).
//
// # Safety
// `out` must be valid for a single pointer write.
RvStatus rv_metric_bridge_torus(double band_half_width,
                                double bridge_width,
                                double flat_length,
                                RvBandProfile profile,
                                RvMetric **out);

// Torus profile a(x) = mean_radius + Σ amp_i · mean_radius · cos(m_i · 2πx/L + phase_i).
//
// `modes`, `amps`, and `phases` are parallel arrays of length `count`.
// Amplitudes are relative to `mean_radius`; construction fails if the
// resulting profile is not strictly positive.
//
// # Safety
// `modes`, `amps`, and `phases` must be valid for reads of `count` elements;
// `out` must be valid for a single pointer write.
RvStatus rv_metric_trig_series(double mean_radius,
                               double base_length,
                               const uint32_t *modes,
                               const double *amps,
                               const double *phases,
                               size_t count,
                               RvMetric **out);

// Releases a metric handle. Null is a no-op.
//
// # Safety
// `metric` must be null or a handle from an `rv_metric_*` constructor that
// has not been freed.
void rv_metric_free(RvMetric *metric);

// Surface area of the metric.
//
// # Safety
// `metric` must be a live handle; `out` must be valid for one f64 write.
RvStatus rv_metric_area(const RvMetric *metric, double *out);

// Length of the base circle (the x period, or pole-to-pole length on a
// sphere topology).
//
// # Safety
// `metric` must be a live handle; `out` must be valid for one f64 write.
RvStatus rv_metric_base_length(const RvMetric *metric, double *out);

// Profile value a(x) and its first two derivatives.
//
// # Safety
// `metric` must be a live handle; `out_a`, `out_da`, `out_d2a` must each be
// valid for one f64 write.
RvStatus rv_metric_profile(const RvMetric *metric,
                           double x,
                           double *out_a,
                           double *out_da,
                           double *out_d2a);

// Gauss curvature -a''(x)/a(x) at x.
//
// # Safety
// `metric` must be a live handle; `out` must be valid for one f64 write.
RvStatus rv_metric_curvature(const RvMetric *metric, double x, double *out);

// Flows the unit-speed geodesic leaving (x0, theta0) at direction angle
// `psi` (measured from the x axis) for time `t`, which may be negative.
//
// `tolerance` is the per-step error tolerance; pass 0 or a negative value
// for the default (1e-10).
//
// # Safety
// `metric` must be a live handle; `out` must be valid for one
// `RvPhasePoint` write.
RvStatus rv_geodesic_flow(const RvMetric *metric,
                          double x0,
                          double theta0,
                          double psi,
                          double t,
                          double tolerance,
                          RvPhasePoint *out);

// Solves the eigenmode table of the metric up to `lambda_max`.
//
// `grid_size` is the radial discretization (at least 128); the solve
// re-checks itself at twice the grid and fails if eigenvalues drift beyond
// `accuracy_target` (relative; pass 0 or negative for the default 1e-3).
// `cluster_tol` groups near-degenerate eigenvalues (relative; 0 or negative
// for the default 1e-6). Runtime grows roughly like grid_size · lambda_max².
//
// # Safety
// `metric` must be a live handle; `out` must be valid for a single pointer
// write.
RvStatus rv_table_assemble(const RvMetric *metric,
                           double lambda_max,
                           size_t grid_size,
                           double accuracy_target,
                           double cluster_tol,
                           RvTable **out);

// Releases a table handle. Null is a no-op.
//
// # Safety
// `table` must be null or a handle from `rv_table_assemble` that has not
// been freed.
void rv_table_free(RvTable *table);

// Number of eigenmodes in the table (each ±n pair counts twice).
//
// # Safety
// `table` must be a live handle; `out` must be valid for one write.
RvStatus rv_table_mode_count(const RvTable *table, size_t *out);

// Number of eigenvalue clusters after near-degeneracy grouping.
//
// # Safety
// `table` must be a live handle; `out` must be valid for one write.
RvStatus rv_table_cluster_count(const RvTable *table, size_t *out);

// The lambda ceiling the table was assembled to.
//
// # Safety
// `table` must be a live handle; `out` must be valid for one f64 write.
RvStatus rv_table_lambda_max(const RvTable *table, double *out);

// Copies the sorted eigenvalue list (square roots of Laplace eigenvalues,
// multiplicity included) into `buf`.
//
// Writes the number of values the table holds to `written`. When `cap` is
// too small, returns `BufferTooSmall` and copies nothing; `written` still
// receives the required count, so a null `buf` with `cap` 0 sizes the
// buffer.
//
// # Safety
// `buf` must be null or valid for writes of `cap` f64 values; `written`
// must be valid for one write; `table` must be a live handle.
RvStatus rv_table_lambdas(const RvTable *table, double *buf, size_t cap, size_t *written);

// Largest value over the eigenvalue cluster at `lambda` of the pointwise
// norm of a unit-mass combination of that cluster's eigenfunctions.
//
// Fails if no cluster sits within the table's grouping tolerance of
// `lambda`.
//
// # Safety
// `table` must be a live handle; `out` must be valid for one f64 write.
RvStatus rv_sup_norm(const RvTable *table, double x, double theta, double lambda, double *out);

// Local Weyl remainder at one point and one lambda: the spectral function
// E_lambda(x, x) minus its lambda²/4π main term.
//
// # Safety
// `table` must be a live handle; `out` must be valid for one f64 write.
RvStatus rv_weyl_remainder(const RvTable *table,
                           double x,
                           double theta,
                           double lambda,
                           double *out);

// Fourier coefficients of the return-time measure at a point: coefficient
// k is the E-weighted average of exp(i · t · lambda_j · k) over modes with
// lambda_j ≤ lambda.
//
// Writes coefficients k = 0..=k_max into `out_re`/`out_im` (k_max + 1
// entries each; coefficient 0 is exactly 1). Negative k follows by complex
// conjugation. `out_diagnostic` receives max over 1 ≤ k ≤ k_max of the
// coefficient modulus, the flatness diagnostic of the measure; it may be
// null if not wanted.
//
// # Safety
// `table` must be a live handle; `out_re` and `out_im` must be valid for
// writes of k_max + 1 f64 values; `out_diagnostic` must be null or valid
// for one f64 write.
RvStatus rv_return_measure(const RvTable *table,
                           double x,
                           double theta,
                           double t,
                           double lambda,
                           size_t k_max,
                           double *out_re,
                           double *out_im,
                           double *out_diagnostic);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* REVLAB_H */

//! C ABI over the revlab core.
//!
//! Conventions, once for the whole surface:
//!
//! * Handles (`RvMetric`, `RvTable`) are opaque, created by `rv_*` constructors
//!   and released by the matching `rv_*_free`. A handle is immutable after
//!   creation, so sharing one across threads for reads is fine; freeing it
//!   while another call uses it is not.
//! * Every fallible function returns an `RvStatus` and writes results through
//!   out pointers only on `Ok`. On any other status the out values are
//!   untouched and `rv_last_error` returns a message for the calling thread.
//! * Passing a null handle or null out pointer is reported as `NullArgument`,
//!   never dereferenced. Panics from the core are caught at the boundary and
//!   reported as `Panic`.

use std::cell::RefCell;
use std::os::raw::c_char;
use std::panic::{self, AssertUnwindSafe};

use revlab::geometry::{
    build_bridge_metric, flat_torus, round_sphere, trig_series_torus, BandProfile, BridgeSpec,
    ProfileMetric,
};
use revlab::geodesics::{flow_geodesic, unit_covector, FlowParams};
use revlab::spectrum::{assemble_spectral_table, SolveSettings, SpectralTable};
use revlab::weyl::{local_weyl_series, return_time_measure, sup_norm_functional, SurfacePoint};

/// Result code for every fallible call in this ABI.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RvStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument value was rejected before any work started.
    InvalidArgument = 2,
    /// Metric construction failed; see `rv_last_error`.
    ConstructionFailed = 3,
    /// The eigenvalue solve failed or the grid was too coarse.
    SolveFailed = 4,
    /// A spectral functional rejected the query (for example a lambda
    /// beyond the table's range).
    EvaluationFailed = 5,
    /// The caller's buffer cannot hold the result; the required size was
    /// written to the length out pointer.
    BufferTooSmall = 6,
    /// A panic was caught at the ABI boundary.
    Panic = 7,
}

/// Band profile selector for `rv_metric_bridge_torus`.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RvBandProfile {
    /// a = cos x on the band: isometric to a spherical equatorial band.
    Cos = 0,
    /// a = sqrt(1 - x^2): the same circle traced by height.
    Sqrt = 1,
}

/// Cotangent-bundle state of a geodesic: base point and covector.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RvPhasePoint {
    pub x: f64,
    pub theta: f64,
    pub xi_x: f64,
    pub xi_theta: f64,
}

/// Opaque surface-of-revolution metric.
pub struct RvMetric {
    inner: ProfileMetric,
}

/// Opaque eigenmode table. Keeps a copy of the metric it was assembled on,
/// so functional queries cannot be evaluated against the wrong geometry.
pub struct RvTable {
    table: SpectralTable,
    metric: ProfileMetric,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|slot| {
        let mut bytes = slot.borrow_mut();
        bytes.clear();
        bytes.extend_from_slice(msg.as_bytes());
    });
}

fn fail(status: RvStatus, msg: &str) -> RvStatus {
    set_error(msg);
    status
}

/// Runs a closure, converting a panic into `RvStatus::Panic`.
fn guarded(f: impl FnOnce() -> RvStatus) -> RvStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".to_string());
            fail(RvStatus::Panic, &msg)
        }
    }
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating if needed.
///
/// Returns the byte length required to hold the full message including the
/// terminator. `buf` may be null (with `cap` 0) to query the length alone.
/// The message describes the most recent call on this thread that returned a
/// status other than `Ok`.
///
/// # Safety
/// `buf` must be null or valid for writes of `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn rv_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let bytes = slot.borrow();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Returns the crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> RvStatus {
    *out = Box::into_raw(Box::new(value));
    RvStatus::Ok
}

/// Flat torus with constant profile value `profile_value` (the profile
/// circle has circumference 2π times this) and the given base circle length.
///
/// # Safety
/// `out` must be valid for a single pointer write.
#[no_mangle]
pub unsafe extern "C" fn rv_metric_flat_torus(
    profile_value: f64,
    base_length: f64,
    out: *mut *mut RvMetric,
) -> RvStatus {
    if out.is_null() {
        return fail(RvStatus::NullArgument, "out is null");
    }
    guarded(|| match flat_torus(profile_value, base_length) {
        Ok(inner) => unsafe { write_handle(out, RvMetric { inner }) },
        Err(e) => fail(RvStatus::ConstructionFailed, &e.to_string()),
    })
}

/// Unit round sphere (profile sin x on [0, π]).
///
/// # Safety
/// `out` must be valid for a single pointer write.
#[no_mangle]
pub unsafe extern "C" fn rv_metric_round_sphere(out: *mut *mut RvMetric) -> RvStatus {
    if out.is_null() {
        return fail(RvStatus::NullArgument, "out is null");
    }
    guarded(|| unsafe { write_handle(out, RvMetric { inner: round_sphere() }) })
}

/// Flat torus with a grafted curved band of half-width `band_half_width`,
/// glued over bridge zones of width `bridge_width` to a flat part of length
/// `flat_length` (which must be at least 2π).
///
/// # Safety
/// `out` must be valid for a single pointer write.
#[no_mangle]
pub unsafe extern "C" fn rv_metric_bridge_torus(
    band_half_width: f64,
    bridge_width: f64,
    flat_length: f64,
    profile: RvBandProfile,
    out: *mut *mut RvMetric,
) -> RvStatus {
    if out.is_null() {
        return fail(RvStatus::NullArgument, "out is null");
    }
    let band_profile = match profile {
        RvBandProfile::Cos => BandProfile::RoundCos,
        RvBandProfile::Sqrt => BandProfile::SqrtChord,
    };
    let spec = BridgeSpec {
        band_half_width,
        bridge_width,
        flat_length,
        band_profile,
    };
    guarded(|| match build_bridge_metric(spec) {
        Ok(inner) => unsafe { write_handle(out, RvMetric { inner }) },
        Err(e) => fail(RvStatus::ConstructionFailed, &e.to_string()),
    })
}

/// Torus profile a(x) = mean_radius + Σ amp_i · mean_radius · cos(m_i · 2πx/L + phase_i).
///
/// `modes`, `amps`, and `phases` are parallel arrays of length `count`.
/// Amplitudes are relative to `mean_radius`; construction fails if the
/// resulting profile is not strictly positive.
///
/// # Safety
/// `modes`, `amps`, and `phases` must be valid for reads of `count` elements;
/// `out` must be valid for a single pointer write.
#[no_mangle]
pub unsafe extern "C" fn rv_metric_trig_series(
    mean_radius: f64,
    base_length: f64,
    modes: *const u32,
    amps: *const f64,
    phases: *const f64,
    count: usize,
    out: *mut *mut RvMetric,
) -> RvStatus {
    if out.is_null() || (count > 0 && (modes.is_null() || amps.is_null() || phases.is_null())) {
        return fail(RvStatus::NullArgument, "array or out pointer is null");
    }
    let harmonics: Vec<(u32, f64, f64)> = (0..count)
        .map(|i| (*modes.add(i), *amps.add(i), *phases.add(i)))
        .collect();
    guarded(|| {
        let label = format!("trig-series({count} harmonics)");
        match trig_series_torus(mean_radius, base_length, &harmonics, label) {
            Ok(inner) => unsafe { write_handle(out, RvMetric { inner }) },
            Err(e) => fail(RvStatus::ConstructionFailed, &e.to_string()),
        }
    })
}

/// Releases a metric handle. Null is a no-op.
///
/// # Safety
/// `metric` must be null or a handle from an `rv_metric_*` constructor that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn rv_metric_free(metric: *mut RvMetric) {
    if !metric.is_null() {
        drop(Box::from_raw(metric));
    }
}

/// Surface area of the metric.
///
/// # Safety
/// `metric` must be a live handle; `out` must be valid for one f64 write.
#[no_mangle]
pub unsafe extern "C" fn rv_metric_area(metric: *const RvMetric, out: *mut f64) -> RvStatus {
    let Some(m) = metric.as_ref() else {
        return fail(RvStatus::NullArgument, "metric is null");
    };
    if out.is_null() {
        return fail(RvStatus::NullArgument, "out is null");
    }
    *out = m.inner.area();
    RvStatus::Ok
}

/// Length of the base circle (the x period, or pole-to-pole length on a
/// sphere topology).
///
/// # Safety
/// `metric` must be a live handle; `out` must be valid for one f64 write.
#[no_mangle]
pub unsafe extern "C" fn rv_metric_base_length(
    metric: *const RvMetric,
    out: *mut f64,
) -> RvStatus {
    let Some(m) = metric.as_ref() else {
        return fail(RvStatus::NullArgument, "metric is null");
    };
    if out.is_null() {
        return fail(RvStatus::NullArgument, "out is null");
    }
    *out = m.inner.base_length();
    RvStatus::Ok
}

/// Profile value a(x) and its first two derivatives.
///
/// # Safety
/// `metric` must be a live handle; `out_a`, `out_da`, `out_d2a` must each be
/// valid for one f64 write.
#[no_mangle]
pub unsafe extern "C" fn rv_metric_profile(
    metric: *const RvMetric,
    x: f64,
    out_a: *mut f64,
    out_da: *mut f64,
    out_d2a: *mut f64,
) -> RvStatus {
    let Some(m) = metric.as_ref() else {
        return fail(RvStatus::NullArgument, "metric is null");
    };
    if out_a.is_null() || out_da.is_null() || out_d2a.is_null() {
        return fail(RvStatus::NullArgument, "out pointer is null");
    }
    if !x.is_finite() {
        return fail(RvStatus::InvalidArgument, "x is not finite");
    }
    guarded(|| {
        let s = m.inner.sample(x);
        *out_a = s.a;
        *out_da = s.da;
        *out_d2a = s.d2a;
        RvStatus::Ok
    })
}

/// Gauss curvature -a''(x)/a(x) at x.
///
/// # Safety
/// `metric` must be a live handle; `out` must be valid for one f64 write.
#[no_mangle]
pub unsafe extern "C" fn rv_metric_curvature(
    metric: *const RvMetric,
    x: f64,
    out: *mut f64,
) -> RvStatus {
    let Some(m) = metric.as_ref() else {
        return fail(RvStatus::NullArgument, "metric is null");
    };
    if out.is_null() {
        return fail(RvStatus::NullArgument, "out is null");
    }
    if !x.is_finite() {
        return fail(RvStatus::InvalidArgument, "x is not finite");
    }
    guarded(|| {
        *out = m.inner.curvature(x);
        RvStatus::Ok
    })
}

/// Flows the unit-speed geodesic leaving (x0, theta0) at direction angle
/// `psi` (measured from the x axis) for time `t`, which may be negative.
///
/// `tolerance` is the per-step error tolerance; pass 0 or a negative value
/// for the default (1e-10).
///
/// # Safety
/// `metric` must be a live handle; `out` must be valid for one
/// `RvPhasePoint` write.
#[no_mangle]
pub unsafe extern "C" fn rv_geodesic_flow(
    metric: *const RvMetric,
    x0: f64,
    theta0: f64,
    psi: f64,
    t: f64,
    tolerance: f64,
    out: *mut RvPhasePoint,
) -> RvStatus {
    let Some(m) = metric.as_ref() else {
        return fail(RvStatus::NullArgument, "metric is null");
    };
    if out.is_null() {
        return fail(RvStatus::NullArgument, "out is null");
    }
    if ![x0, theta0, psi, t, tolerance].iter().all(|v| v.is_finite()) {
        return fail(RvStatus::InvalidArgument, "arguments must be finite");
    }
    let mut params = FlowParams::default();
    if tolerance > 0.0 {
        params.tolerance = tolerance;
    }
    guarded(|| {
        let start = unit_covector(&m.inner, x0, theta0, psi);
        match flow_geodesic(&m.inner, &start, t, &params) {
            Ok(end) => {
                *out = RvPhasePoint {
                    x: end.x,
                    theta: end.theta,
                    xi_x: end.xi_x,
                    xi_theta: end.xi_theta,
                };
                RvStatus::Ok
            }
            Err(e) => fail(RvStatus::EvaluationFailed, &e.to_string()),
        }
    })
}

/// Solves the eigenmode table of the metric up to `lambda_max`.
///
/// `grid_size` is the radial discretization (at least 128); the solve
/// re-checks itself at twice the grid and fails if eigenvalues drift beyond
/// `accuracy_target` (relative; pass 0 or negative for the default 1e-3).
/// `cluster_tol` groups near-degenerate eigenvalues (relative; 0 or negative
/// for the default 1e-6). Runtime grows roughly like grid_size · lambda_max².
///
/// # Safety
/// `metric` must be a live handle; `out` must be valid for a single pointer
/// write.
#[no_mangle]
pub unsafe extern "C" fn rv_table_assemble(
    metric: *const RvMetric,
    lambda_max: f64,
    grid_size: usize,
    accuracy_target: f64,
    cluster_tol: f64,
    out: *mut *mut RvTable,
) -> RvStatus {
    let Some(m) = metric.as_ref() else {
        return fail(RvStatus::NullArgument, "metric is null");
    };
    if out.is_null() {
        return fail(RvStatus::NullArgument, "out is null");
    }
    if !(lambda_max.is_finite() && lambda_max > 0.0) {
        return fail(RvStatus::InvalidArgument, "lambda_max must be positive");
    }
    let settings = SolveSettings {
        grid_size,
        lambda_max,
        accuracy_target: if accuracy_target > 0.0 {
            accuracy_target
        } else {
            1e-3
        },
        check_grid: true,
    };
    let cluster_tol = if cluster_tol > 0.0 { cluster_tol } else { 1e-6 };
    guarded(|| match assemble_spectral_table(&m.inner, &settings, cluster_tol) {
        Ok(table) => unsafe {
            write_handle(
                out,
                RvTable {
                    table,
                    metric: m.inner.clone(),
                },
            )
        },
        Err(e) => fail(RvStatus::SolveFailed, &e.to_string()),
    })
}

/// Releases a table handle. Null is a no-op.
///
/// # Safety
/// `table` must be null or a handle from `rv_table_assemble` that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn rv_table_free(table: *mut RvTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Number of eigenmodes in the table (each ±n pair counts twice).
///
/// # Safety
/// `table` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rv_table_mode_count(table: *const RvTable, out: *mut usize) -> RvStatus {
    let Some(t) = table.as_ref() else {
        return fail(RvStatus::NullArgument, "table is null");
    };
    if out.is_null() {
        return fail(RvStatus::NullArgument, "out is null");
    }
    *out = t.table.entries.len();
    RvStatus::Ok
}

/// Number of eigenvalue clusters after near-degeneracy grouping.
///
/// # Safety
/// `table` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn rv_table_cluster_count(
    table: *const RvTable,
    out: *mut usize,
) -> RvStatus {
    let Some(t) = table.as_ref() else {
        return fail(RvStatus::NullArgument, "table is null");
    };
    if out.is_null() {
        return fail(RvStatus::NullArgument, "out is null");
    }
    *out = t.table.clusters.len();
    RvStatus::Ok
}

/// The lambda ceiling the table was assembled to.
///
/// # Safety
/// `table` must be a live handle; `out` must be valid for one f64 write.
#[no_mangle]
pub unsafe extern "C" fn rv_table_lambda_max(table: *const RvTable, out: *mut f64) -> RvStatus {
    let Some(t) = table.as_ref() else {
        return fail(RvStatus::NullArgument, "table is null");
    };
    if out.is_null() {
        return fail(RvStatus::NullArgument, "out is null");
    }
    *out = t.table.lambda_max;
    RvStatus::Ok
}

/// Copies the sorted eigenvalue list (square roots of Laplace eigenvalues,
/// multiplicity included) into `buf`.
///
/// Writes the number of values the table holds to `written`. When `cap` is
/// too small, returns `BufferTooSmall` and copies nothing; `written` still
/// receives the required count, so a null `buf` with `cap` 0 sizes the
/// buffer.
///
/// # Safety
/// `buf` must be null or valid for writes of `cap` f64 values; `written`
/// must be valid for one write; `table` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rv_table_lambdas(
    table: *const RvTable,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> RvStatus {
    let Some(t) = table.as_ref() else {
        return fail(RvStatus::NullArgument, "table is null");
    };
    if written.is_null() {
        return fail(RvStatus::NullArgument, "written is null");
    }
    let need = t.table.entries.len();
    *written = need;
    if cap < need {
        return fail(
            RvStatus::BufferTooSmall,
            &format!("need {need} values, have room for {cap}"),
        );
    }
    if need > 0 && buf.is_null() {
        return fail(RvStatus::NullArgument, "buf is null");
    }
    for (i, entry) in t.table.entries.iter().enumerate() {
        *buf.add(i) = entry.lambda;
    }
    RvStatus::Ok
}

/// Largest value over the eigenvalue cluster at `lambda` of the pointwise
/// norm of a unit-mass combination of that cluster's eigenfunctions.
///
/// Fails if no cluster sits within the table's grouping tolerance of
/// `lambda`.
///
/// # Safety
/// `table` must be a live handle; `out` must be valid for one f64 write.
#[no_mangle]
pub unsafe extern "C" fn rv_sup_norm(
    table: *const RvTable,
    x: f64,
    theta: f64,
    lambda: f64,
    out: *mut f64,
) -> RvStatus {
    let Some(t) = table.as_ref() else {
        return fail(RvStatus::NullArgument, "table is null");
    };
    if out.is_null() {
        return fail(RvStatus::NullArgument, "out is null");
    }
    if ![x, theta, lambda].iter().all(|v| v.is_finite()) {
        return fail(RvStatus::InvalidArgument, "arguments must be finite");
    }
    guarded(|| {
        let point = SurfacePoint::new(x, theta);
        match sup_norm_functional(&t.table, &t.metric, point, lambda) {
            Ok(v) => {
                *out = v;
                RvStatus::Ok
            }
            Err(e) => fail(RvStatus::EvaluationFailed, &e.to_string()),
        }
    })
}

/// Local Weyl remainder at one point and one lambda: the spectral function
/// E_lambda(x, x) minus its lambda²/4π main term.
///
/// # Safety
/// `table` must be a live handle; `out` must be valid for one f64 write.
#[no_mangle]
pub unsafe extern "C" fn rv_weyl_remainder(
    table: *const RvTable,
    x: f64,
    theta: f64,
    lambda: f64,
    out: *mut f64,
) -> RvStatus {
    let Some(t) = table.as_ref() else {
        return fail(RvStatus::NullArgument, "table is null");
    };
    if out.is_null() {
        return fail(RvStatus::NullArgument, "out is null");
    }
    if ![x, theta, lambda].iter().all(|v| v.is_finite()) {
        return fail(RvStatus::InvalidArgument, "arguments must be finite");
    }
    guarded(|| {
        let point = SurfacePoint::new(x, theta);
        match local_weyl_series(&t.table, &t.metric, point, &[lambda]) {
            Ok(series) => {
                *out = series.remainder[0];
                RvStatus::Ok
            }
            Err(e) => fail(RvStatus::EvaluationFailed, &e.to_string()),
        }
    })
}

/// Fourier coefficients of the return-time measure at a point: coefficient
/// k is the E-weighted average of exp(i · t · lambda_j · k) over modes with
/// lambda_j ≤ lambda.
///
/// Writes coefficients k = 0..=k_max into `out_re`/`out_im` (k_max + 1
/// entries each; coefficient 0 is exactly 1). Negative k follows by complex
/// conjugation. `out_diagnostic` receives max over 1 ≤ k ≤ k_max of the
/// coefficient modulus, the flatness diagnostic of the measure; it may be
/// null if not wanted.
///
/// # Safety
/// `table` must be a live handle; `out_re` and `out_im` must be valid for
/// writes of k_max + 1 f64 values; `out_diagnostic` must be null or valid
/// for one f64 write.
#[no_mangle]
pub unsafe extern "C" fn rv_return_measure(
    table: *const RvTable,
    x: f64,
    theta: f64,
    t: f64,
    lambda: f64,
    k_max: usize,
    out_re: *mut f64,
    out_im: *mut f64,
    out_diagnostic: *mut f64,
) -> RvStatus {
    let Some(handle) = table.as_ref() else {
        return fail(RvStatus::NullArgument, "table is null");
    };
    if out_re.is_null() || out_im.is_null() {
        return fail(RvStatus::NullArgument, "out array is null");
    }
    if ![x, theta, t, lambda].iter().all(|v| v.is_finite()) {
        return fail(RvStatus::InvalidArgument, "arguments must be finite");
    }
    guarded(|| {
        let point = SurfacePoint::new(x, theta);
        match return_time_measure(&handle.table, &handle.metric, point, t, lambda, k_max) {
            Ok(measure) => {
                for k in 0..=k_max {
                    let c = measure.coefficient(k as i32).expect("k within range");
                    *out_re.add(k) = c.re;
                    *out_im.add(k) = c.im;
                }
                if !out_diagnostic.is_null() {
                    *out_diagnostic = measure.diagnostic_max;
                }
                RvStatus::Ok
            }
            Err(e) => fail(RvStatus::EvaluationFailed, &e.to_string()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use std::ptr;

    fn last_error() -> String {
        let mut buf = vec![0i8; 256];
        let need = unsafe { rv_last_error(buf.as_mut_ptr(), buf.len()) };
        assert!(need <= buf.len(), "error message truncated");
        let bytes: Vec<u8> = buf
            .iter()
            .take_while(|&&b| b != 0)
            .map(|&b| b as u8)
            .collect();
        String::from_utf8(bytes).unwrap()
    }

    fn flat_table() -> (*mut RvMetric, *mut RvTable) {
        let mut metric = ptr::null_mut();
        let status = unsafe { rv_metric_flat_torus(1.0, 2.0 * PI, &mut metric) };
        assert_eq!(status, RvStatus::Ok);
        let mut table = ptr::null_mut();
        let status = unsafe { rv_table_assemble(metric, 5.5, 512, 1e-3, 1e-3, &mut table) };
        assert_eq!(status, RvStatus::Ok, "{}", last_error());
        (metric, table)
    }

    #[test]
    fn metric_queries_report_flat_geometry() {
        let mut metric = ptr::null_mut();
        assert_eq!(
            unsafe { rv_metric_flat_torus(1.0, 2.0 * PI, &mut metric) },
            RvStatus::Ok
        );
        let mut area = 0.0;
        assert_eq!(unsafe { rv_metric_area(metric, &mut area) }, RvStatus::Ok);
        assert!((area - 4.0 * PI * PI).abs() <= 1e-9);
        let (mut a, mut da, mut d2a) = (0.0, 0.0, 0.0);
        assert_eq!(
            unsafe { rv_metric_profile(metric, 0.7, &mut a, &mut da, &mut d2a) },
            RvStatus::Ok
        );
        assert_eq!((a, da, d2a), (1.0, 0.0, 0.0));
        let mut k = 1.0;
        assert_eq!(unsafe { rv_metric_curvature(metric, 0.3, &mut k) }, RvStatus::Ok);
        assert_eq!(k, 0.0);
        unsafe { rv_metric_free(metric) };
    }

    #[test]
    fn construction_failures_set_messages() {
        let mut metric = ptr::null_mut();
        let status = unsafe { rv_metric_flat_torus(-1.0, 2.0 * PI, &mut metric) };
        assert_eq!(status, RvStatus::ConstructionFailed);
        assert!(last_error().contains("circumference"), "{}", last_error());
        assert_eq!(
            unsafe { rv_metric_round_sphere(ptr::null_mut()) },
            RvStatus::NullArgument
        );
        let mut area = f64::NAN;
        assert_eq!(
            unsafe { rv_metric_area(ptr::null(), &mut area) },
            RvStatus::NullArgument
        );
        assert!(area.is_nan(), "out must stay untouched on failure");
    }

    #[test]
    fn table_matches_lattice_count_and_sizes_buffers() {
        let (metric, table) = flat_table();
        // Independent count of lattice points k² + n² ≤ 5.5².
        let mut expected = 0usize;
        for k in -6i64..=6 {
            for n in -6i64..=6 {
                if ((k * k + n * n) as f64) <= 5.5 * 5.5 {
                    expected += 1;
                }
            }
        }
        let mut count = 0usize;
        assert_eq!(unsafe { rv_table_mode_count(table, &mut count) }, RvStatus::Ok);
        assert_eq!(count, expected);

        let mut needed = 0usize;
        let status = unsafe { rv_table_lambdas(table, ptr::null_mut(), 0, &mut needed) };
        assert_eq!(status, RvStatus::BufferTooSmall);
        assert_eq!(needed, expected);
        let mut lambdas = vec![0.0f64; needed];
        let status =
            unsafe { rv_table_lambdas(table, lambdas.as_mut_ptr(), lambdas.len(), &mut needed) };
        assert_eq!(status, RvStatus::Ok);
        assert!(lambdas.windows(2).all(|w| w[0] <= w[1]));
        assert!((lambdas[0] - 0.0).abs() <= 1e-6);
        unsafe {
            rv_table_free(table);
            rv_metric_free(metric);
        }
    }

    #[test]
    fn functionals_agree_with_lattice_values() {
        let (metric, table) = flat_table();
        // Cluster at lambda 5 holds the 12 representations of 25; each mode
        // contributes 1/4π² pointwise.
        let mut sup = 0.0;
        assert_eq!(
            unsafe { rv_sup_norm(table, 0.3, 0.7, 5.0, &mut sup) },
            RvStatus::Ok,
            "{}",
            last_error()
        );
        assert!(
            (sup - 12.0f64.sqrt() / (2.0 * PI)).abs() <= 5e-3,
            "sup {sup}"
        );

        let mut remainder = 0.0;
        assert_eq!(
            unsafe { rv_weyl_remainder(table, 0.3, 0.7, 5.2, &mut remainder) },
            RvStatus::Ok
        );
        // E(5.2) averages to the lattice count with norm ≤ 5.2 over area
        // 4π²; the main term is 5.2²/4π.
        let mut count = 0usize;
        for k in -6i64..=6 {
            for n in -6i64..=6 {
                if ((k * k + n * n) as f64) <= 5.2 * 5.2 {
                    count += 1;
                }
            }
        }
        let expected = count as f64 / (4.0 * PI * PI) - 5.2 * 5.2 / (4.0 * PI);
        assert!((remainder - expected).abs() <= 2e-2, "remainder {remainder}");

        let mut re = [0.0; 4];
        let mut im = [0.0; 4];
        let mut diag = 0.0;
        assert_eq!(
            unsafe {
                rv_return_measure(
                    table,
                    0.3,
                    0.7,
                    1.0,
                    5.5,
                    3,
                    re.as_mut_ptr(),
                    im.as_mut_ptr(),
                    &mut diag,
                )
            },
            RvStatus::Ok
        );
        assert_eq!((re[0], im[0]), (1.0, 0.0));
        let max_k = (1..=3)
            .map(|k| (re[k] * re[k] + im[k] * im[k]).sqrt())
            .fold(0.0, f64::max);
        assert!((diag - max_k).abs() <= 1e-15);
        assert!(diag < 1.0);

        let status = unsafe { rv_sup_norm(table, 0.0, 0.0, 4.7, &mut sup) };
        assert_eq!(status, RvStatus::EvaluationFailed);
        unsafe {
            rv_table_free(table);
            rv_metric_free(metric);
        }
    }

    #[test]
    fn sphere_geodesic_closes_after_full_period() {
        let mut metric = ptr::null_mut();
        assert_eq!(unsafe { rv_metric_round_sphere(&mut metric) }, RvStatus::Ok);
        let mut end = RvPhasePoint {
            x: 0.0,
            theta: 0.0,
            xi_x: 0.0,
            xi_theta: 0.0,
        };
        let status =
            unsafe { rv_geodesic_flow(metric, PI / 2.0, 0.25, 0.9, 2.0 * PI, 0.0, &mut end) };
        assert_eq!(status, RvStatus::Ok, "{}", last_error());
        assert!((end.x - PI / 2.0).abs() <= 1e-6);
        let dtheta = (end.theta - 0.25).rem_euclid(2.0 * PI);
        assert!(dtheta.min(2.0 * PI - dtheta) <= 1e-6);
        unsafe { rv_metric_free(metric) };
    }

    #[test]
    fn bridge_and_trig_constructors_build() {
        let mut bridge = ptr::null_mut();
        assert_eq!(
            unsafe {
                rv_metric_bridge_torus(0.25, 0.25, 2.0 * PI + 1.0, RvBandProfile::Cos, &mut bridge)
            },
            RvStatus::Ok
        );
        let mut len = 0.0;
        assert_eq!(unsafe { rv_metric_base_length(bridge, &mut len) }, RvStatus::Ok);
        assert!((len - (1.0 + 2.0 * PI + 1.0)).abs() <= 1e-12);

        let modes = [1u32, 3];
        let amps = [0.02, -0.01];
        let phases = [0.0, 1.2];
        let mut trig = ptr::null_mut();
        assert_eq!(
            unsafe {
                rv_metric_trig_series(
                    1.0,
                    2.0 * PI,
                    modes.as_ptr(),
                    amps.as_ptr(),
                    phases.as_ptr(),
                    2,
                    &mut trig,
                )
            },
            RvStatus::Ok
        );
        let mut bad = ptr::null_mut();
        assert_eq!(
            unsafe {
                rv_metric_bridge_torus(0.25, 0.25, 1.0, RvBandProfile::Cos, &mut bad)
            },
            RvStatus::ConstructionFailed
        );
        assert!(last_error().contains("flat_length"), "{}", last_error());
        unsafe {
            rv_metric_free(bridge);
            rv_metric_free(trig);
        }
    }
}

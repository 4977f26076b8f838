//! Spectral functionals over an assembled eigenbasis: local and global
//! Weyl series with remainders, cluster sup-norm functionals, growth
//! exponent fits, and return-time measures.
//!
//! Everything here is a pure function of an immutable [`SpectralTable`]
//! plus the metric that evaluates its radial profiles.

use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::ProfileMetric;
use crate::spectrum::{Cluster, ModeShape, SpectralTable};

/// Geometric bins per decade used by growth fits unless overridden.
pub const DEFAULT_BINS_PER_DECADE: usize = 8;

#[derive(Debug, Error)]
pub enum WeylError {
    #[error("no eigenvalue cluster within tolerance of λ = {lambda}")]
    NoCluster { lambda: f64 },
    #[error("λ = {lambda} outside the table range [0, {lambda_max}]")]
    OutOfRange { lambda: f64, lambda_max: f64 },
    #[error("evaluation grid must be finite and non-decreasing")]
    BadGrid,
    #[error("growth fit needs at least 3 nonempty bins, found {found}")]
    TooFewBins { found: usize },
    #[error("growth fit input rejected: {reason}")]
    BadFitInput { reason: String },
    #[error("k_max must be at least 1, got {k_max}")]
    BadKMax { k_max: usize },
}

/// Point on the surface in (base, angle) coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SurfacePoint {
    pub x: f64,
    pub theta: f64,
}

impl SurfacePoint {
    pub fn new(x: f64, theta: f64) -> Self {
        SurfacePoint { x, theta }
    }
}

/// Local counting series at a fixed point: E(λ) = Σ_{λ_ν ≤ λ} |φ_ν|²,
/// its smooth main term λ²/(4π), and the remainder E − main.
#[derive(Clone, Debug)]
pub struct WeylSeries {
    pub point: SurfacePoint,
    /// Non-decreasing evaluation grid.
    pub lambdas: Vec<f64>,
    /// Right-continuous step sums; non-decreasing, 0 before the first
    /// eigenvalue.
    pub e: Vec<f64>,
    pub main: Vec<f64>,
    /// e − main, exactly.
    pub remainder: Vec<f64>,
    /// Smallest C with |remainder| ≤ C·λ over grid points λ ≥ 1.
    pub uniform_c: f64,
    /// Set when sampled radial profiles are coarser than a tenth of the
    /// shortest wavelength on the grid, so interpolation is suspect.
    pub undersampled: bool,
}

/// Squared modulus |φ_ν(x, ·)|²; independent of θ.
fn entry_weight(table: &SpectralTable, idx: usize, metric: &ProfileMetric, x: f64) -> f64 {
    table.entries[idx].radial_abs(metric, x).powi(2)
}

pub fn local_weyl_series(
    table: &SpectralTable,
    metric: &ProfileMetric,
    point: SurfacePoint,
    lambda_grid: &[f64],
) -> Result<WeylSeries, WeylError> {
    check_grid(lambda_grid, table.lambda_max)?;
    let mut prefix = Vec::with_capacity(table.entries.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for idx in 0..table.entries.len() {
        acc += entry_weight(table, idx, metric, point.x);
        prefix.push(acc);
    }
    let four_pi = 4.0 * std::f64::consts::PI;
    let mut e = Vec::with_capacity(lambda_grid.len());
    let mut main = Vec::with_capacity(lambda_grid.len());
    let mut remainder = Vec::with_capacity(lambda_grid.len());
    let mut uniform_c = 0.0f64;
    for &lambda in lambda_grid {
        let count = table.count_below(lambda);
        let ev = prefix[count];
        let mv = lambda * lambda / four_pi;
        let rv = ev - mv;
        if lambda >= 1.0 {
            uniform_c = uniform_c.max(rv.abs() / lambda);
        }
        e.push(ev);
        main.push(mv);
        remainder.push(rv);
    }
    let top = lambda_grid.last().copied().unwrap_or(0.0);
    Ok(WeylSeries {
        point,
        lambdas: lambda_grid.to_vec(),
        e,
        main,
        remainder,
        uniform_c,
        undersampled: sampling_too_coarse(table, top),
    })
}

fn check_grid(grid: &[f64], lambda_max: f64) -> Result<(), WeylError> {
    if grid.iter().any(|l| !l.is_finite()) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(WeylError::BadGrid);
    }
    for &lambda in grid {
        if lambda < 0.0 || lambda > lambda_max {
            return Err(WeylError::OutOfRange {
                lambda,
                lambda_max,
            });
        }
    }
    Ok(())
}

/// True when some sampled profile's grid step exceeds a tenth of the
/// wavelength 2π/λ.
fn sampling_too_coarse(table: &SpectralTable, lambda: f64) -> bool {
    if lambda <= 0.0 {
        return false;
    }
    table.entries.iter().any(|entry| match &entry.shape {
        ModeShape::Sampled(mode) => mode.grid.h() > (2.0 * std::f64::consts::PI / lambda) / 10.0,
        _ => false,
    })
}

/// Peak value over the λ-cluster's eigenspace at the point: the square
/// root of the jump of E there, √(Σ_{λ_ν ∈ cluster} |φ_ν(point)|²).
pub fn sup_norm_functional(
    table: &SpectralTable,
    metric: &ProfileMetric,
    point: SurfacePoint,
    lambda: f64,
) -> Result<f64, WeylError> {
    let cluster = table
        .cluster_at(lambda)
        .ok_or(WeylError::NoCluster { lambda })?;
    Ok(table.cluster_weight_at(metric, cluster, point.x).sqrt())
}

/// Unit coefficient vector maximizing |Σ c_ν φ_ν(point)| over the
/// cluster's eigenspace: c_ν ∝ conj(φ_ν(point)). Zero vector when the
/// whole eigenspace vanishes at the point.
pub fn cluster_maximizer(
    table: &SpectralTable,
    metric: &ProfileMetric,
    cluster: &Cluster,
    point: SurfacePoint,
) -> Vec<Complex64> {
    let values: Vec<Complex64> = table.entries[cluster.start..cluster.end]
        .iter()
        .map(|e| e.value_at(metric, point.x, point.theta))
        .collect();
    let norm = values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![Complex64::new(0.0, 0.0); values.len()];
    }
    values.iter().map(|v| v.conj() / norm).collect()
}

/// Log-log least-squares fit of an upper envelope over geometric bins.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthFit {
    /// Envelope points (λ, value): the argmax pair of each nonempty bin.
    pub pairs: Vec<(f64, f64)>,
    /// Fitted slope of ln(value) against ln(λ).
    pub exponent: f64,
    /// Fitted ln(value) at ln(λ) = 0.
    pub intercept: f64,
    /// Root-mean-square residual of the log fit over envelope points.
    pub residual: f64,
    pub method: String,
}

/// Bins λ geometrically, keeps each bin's maximum value (upper envelope,
/// so the fit tracks the limsup rather than the mean), and fits a power
/// law through the envelope.
pub fn growth_exponent_fit(
    pairs: &[(f64, f64)],
    bins_per_decade: usize,
) -> Result<GrowthFit, WeylError> {
    if bins_per_decade == 0 {
        return Err(WeylError::BadFitInput {
            reason: "bins_per_decade must be positive".to_string(),
        });
    }
    for &(lambda, value) in pairs {
        if !(lambda > 0.0 && lambda.is_finite() && value > 0.0 && value.is_finite()) {
            return Err(WeylError::BadFitInput {
                reason: format!("pair ({lambda}, {value}) not positive finite"),
            });
        }
    }
    let lmin = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let lmax = pairs.iter().map(|p| p.0).fold(0.0f64, f64::max);
    if !(lmax > lmin) {
        return Err(WeylError::BadFitInput {
            reason: "λ values are constant".to_string(),
        });
    }
    let span = (lmax / lmin).log10();
    let total_bins = (span * bins_per_decade as f64).floor() as usize + 1;
    let mut envelope: Vec<Option<(f64, f64)>> = vec![None; total_bins];
    for &(lambda, value) in pairs {
        let idx = (((lambda / lmin).log10() * bins_per_decade as f64).floor() as usize)
            .min(total_bins - 1);
        let keep = match envelope[idx] {
            Some((_, best)) => value > best,
            None => true,
        };
        if keep {
            envelope[idx] = Some((lambda, value));
        }
    }
    let points: Vec<(f64, f64)> = envelope.into_iter().flatten().collect();
    if points.len() < 3 {
        return Err(WeylError::TooFewBins {
            found: points.len(),
        });
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(lambda, value) in &points {
        let x = lambda.ln();
        let y = value.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let denom = n * sxx - sx * sx;
    let exponent = (n * sxy - sx * sy) / denom;
    let intercept = (sy - exponent * sx) / n;
    let mut ss = 0.0;
    for &(lambda, value) in &points {
        let d = value.ln() - (exponent * lambda.ln() + intercept);
        ss += d * d;
    }
    Ok(GrowthFit {
        pairs: points,
        exponent,
        intercept,
        residual: (ss / n).sqrt(),
        method: format!("upper-envelope geometric bins, {bins_per_decade} per decade"),
    })
}

/// Fourier coefficients of the return-time distribution of frequencies
/// below λ, weighted by eigenfunction mass at the point.
#[derive(Clone, Debug)]
pub struct ReturnMeasure {
    pub t: f64,
    pub lambda: f64,
    pub point: SurfacePoint,
    /// (k, μ̂(k)) for k = −k_max … k_max, ascending. μ̂(0) = 1 exactly
    /// and μ̂(−k) = conj(μ̂(k)) by construction.
    pub coefficients: Vec<(i32, Complex64)>,
    /// max_{1 ≤ k ≤ k_max} |μ̂(k)|; small iff the distribution is close
    /// to uniform on the circle.
    pub diagnostic_max: f64,
}

impl ReturnMeasure {
    pub fn coefficient(&self, k: i32) -> Option<Complex64> {
        self.coefficients
            .iter()
            .find(|(kk, _)| *kk == k)
            .map(|(_, c)| *c)
    }
}

/// μ̂(k) = (1/E) Σ W_c e^{iTλ̄_c k} over clusters with mean λ̄_c ≤ λ,
/// where W_c is the cluster's eigenfunction mass at the point. Phases use
/// clustered eigenvalues so numerical degeneracy splitting cannot smear
/// them.
pub fn return_time_measure(
    table: &SpectralTable,
    metric: &ProfileMetric,
    point: SurfacePoint,
    t: f64,
    lambda: f64,
    k_max: usize,
) -> Result<ReturnMeasure, WeylError> {
    if k_max < 1 {
        return Err(WeylError::BadKMax { k_max });
    }
    if !(0.0..=table.lambda_max).contains(&lambda) {
        return Err(WeylError::OutOfRange {
            lambda,
            lambda_max: table.lambda_max,
        });
    }
    let mut masses: Vec<(f64, f64)> = Vec::new();
    for cluster in &table.clusters {
        if cluster.lambda > lambda {
            continue;
        }
        let w = table.cluster_weight_at(metric, cluster, point.x);
        if w > 0.0 {
            masses.push((cluster.lambda, w));
        }
    }
    let e: f64 = masses.iter().map(|(_, w)| w).sum();
    let mut coefficients = Vec::with_capacity(2 * k_max + 1);
    let mut diagnostic_max = 0.0f64;
    for k in 0..=k_max as i32 {
        let mut sum = Complex64::new(0.0, 0.0);
        for &(mean, w) in &masses {
            sum += w * Complex64::from_polar(1.0, t * mean * k as f64);
        }
        let mu = sum / e;
        if k >= 1 {
            diagnostic_max = diagnostic_max.max(mu.norm());
        }
        coefficients.push((k, mu));
    }
    let mut full: Vec<(i32, Complex64)> = coefficients
        .iter()
        .skip(1)
        .map(|(k, c)| (-k, c.conj()))
        .rev()
        .collect();
    full.extend(coefficients);
    Ok(ReturnMeasure {
        t,
        lambda,
        point,
        coefficients: full,
        diagnostic_max,
    })
}

/// Integrated counting function against its smooth term Area·λ²/(4π).
#[derive(Clone, Debug, Serialize)]
pub struct GlobalWeyl {
    pub lambdas: Vec<f64>,
    /// N(λ): eigenvalues at or below λ, with multiplicity.
    pub counts: Vec<f64>,
    pub main: Vec<f64>,
    pub remainder: Vec<f64>,
}

pub fn global_weyl(table: &SpectralTable, lambda_grid: &[f64]) -> Result<GlobalWeyl, WeylError> {
    check_grid(lambda_grid, table.lambda_max)?;
    let four_pi = 4.0 * std::f64::consts::PI;
    let mut counts = Vec::with_capacity(lambda_grid.len());
    let mut main = Vec::with_capacity(lambda_grid.len());
    let mut remainder = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let n = table.count_below(lambda) as f64;
        let m = table.area * lambda * lambda / four_pi;
        counts.push(n);
        main.push(m);
        remainder.push(n - m);
    }
    Ok(GlobalWeyl {
        lambdas: lambda_grid.to_vec(),
        counts,
        main,
        remainder,
    })
}

/// Surface integral of the local series against the count N(λ). The two
/// agree by orthonormality, so the relative gap measures quadrature and
/// normalization error end to end.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceCheck {
    pub lambda: f64,
    pub count: f64,
    pub integral: f64,
    pub relative_gap: f64,
}

/// Integrates E_λ(x, x) over the surface and compares with N(λ).
///
/// The quadrature route follows the table's shape family: sampled tables
/// reuse the solver's midpoint grid (the integral is then the sum of the
/// modes' recomputed norms), closed-form sphere tables use Gauss-Legendre
/// nodes that integrate the polynomial integrand exactly, and flat-torus
/// tables integrate their constant density in closed form.
pub fn trace_identity_check(
    table: &SpectralTable,
    metric: &ProfileMetric,
    lambda: f64,
) -> Result<TraceCheck, WeylError> {
    if !(0.0..=table.lambda_max).contains(&lambda) {
        return Err(WeylError::OutOfRange {
            lambda,
            lambda_max: table.lambda_max,
        });
    }
    let idx = table.count_below(lambda);
    let count = idx as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let integral = match table.entries.first().map(|e| &e.shape) {
        None => 0.0,
        Some(ModeShape::Sampled(first)) => {
            let grid = first.grid;
            let a: Vec<f64> = (0..grid.size).map(|i| metric.sample(grid.x(i)).a).collect();
            let mut total = 0.0;
            for entry in &table.entries[..idx] {
                let ModeShape::Sampled(mode) = &entry.shape else {
                    unreachable!("sampled tables hold only sampled shapes");
                };
                let norm: f64 = mode.u.iter().zip(&a).map(|(u, ai)| u * u * ai).sum();
                total += two_pi * grid.h() * norm;
            }
            total
        }
        Some(ModeShape::TorusWave { area, .. }) => {
            // Constant density N/Area integrates to N.
            let density: f64 = table.entries[..idx]
                .iter()
                .map(|_| 1.0 / area)
                .sum();
            density * area
        }
        Some(ModeShape::SphereHarmonic { .. }) => {
            let max_ell = table.entries[..idx]
                .iter()
                .map(|e| match e.shape {
                    ModeShape::SphereHarmonic { ell } => ell,
                    _ => unreachable!("sphere tables hold only harmonics"),
                })
                .max()
                .unwrap_or(0);
            // Degree 2·max_ell integrand needs max_ell + 1 nodes.
            let nodes = crate::spectrum::analytic::gauss_legendre(max_ell as usize + 1);
            let mut total = 0.0;
            for (tq, wq) in nodes {
                let mut density = 0.0;
                for entry in &table.entries[..idx] {
                    let ModeShape::SphereHarmonic { ell } = entry.shape else {
                        unreachable!();
                    };
                    let p = crate::spectrum::analytic::legendre_orthonormal(
                        ell,
                        entry.n.unsigned_abs(),
                        tq,
                    );
                    density += p * p / two_pi;
                }
                total += wq * density;
            }
            two_pi * total
        }
    };
    let relative_gap = if count > 0.0 {
        (integral - count).abs() / count
    } else {
        integral.abs()
    };
    Ok(TraceCheck {
        lambda,
        count,
        integral,
        relative_gap,
    })
}

/// CSV rows lambda,e,main,remainder after a header line.
pub fn write_weyl_csv<W: Write>(series: &WeylSeries, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "lambda,e,main,remainder")?;
    for i in 0..series.lambdas.len() {
        writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e}",
            series.lambdas[i], series.e[i], series.main[i], series.remainder[i]
        )?;
    }
    Ok(())
}

/// CSV rows k,re,im,abs after a header line.
pub fn write_return_measure_csv<W: Write>(
    measure: &ReturnMeasure,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "k,re,im,abs")?;
    for (k, c) in &measure.coefficients {
        writeln!(out, "{k},{:.17e},{:.17e},{:.17e}", c.re, c.im, c.norm())?;
    }
    Ok(())
}

/// CSV rows lambda,count,main,remainder after a header line.
pub fn write_global_weyl_csv<W: Write>(series: &GlobalWeyl, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "lambda,count,main,remainder")?;
    for i in 0..series.lambdas.len() {
        writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e}",
            series.lambdas[i], series.counts[i], series.main[i], series.remainder[i]
        )?;
    }
    Ok(())
}

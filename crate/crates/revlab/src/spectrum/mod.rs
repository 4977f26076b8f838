//! Laplace spectra of profile metrics by separation of variables.
//!
//! On g = dx² + a(x)²dθ² every eigenfunction splits into equivariant
//! pieces Φ = e^{inθ}u(x) where u solves the radial Sturm–Liouville
//! problem −(a u′)′ + (n²/a)u = λ²a u with weight a(x)dx. Each n is
//! discretized in flux form on a half-offset grid, symmetrized to an
//! ordinary symmetric eigenproblem by the √a conjugation, and solved by
//! bisection plus inverse iteration ([`tridiag`]). Tables merge modes
//! across n, cluster numerically equal eigenvalues into eigenspaces, and
//! expose pointwise evaluation. The flat torus and the round sphere also
//! have exact closed-form tables ([`analytic`]) used as oracles.

pub mod analytic;
pub mod tridiag;

use std::io::{BufRead, BufWriter, Write as IoWrite};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ProfileMetric, Topology};
use tridiag::BorderedTridiag;

/// Inclusive slack applied to the λ² ceiling so exact boundary
/// eigenvalues (lattice points, ℓ(ℓ+1) hits) stay in the table.
const CEILING_SLACK: f64 = 1e-9;
/// Maximum allowed deviation of a mode's surface L² norm from 1.
pub const NORM_CHECK_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("grid size {grid_size} too small, need at least 128")]
    GridTooSmall { grid_size: usize },
    #[error("lambda_max must be positive, got {lambda_max}")]
    BadLambdaMax { lambda_max: f64 },
    #[error("eigensolver failed for mode n = {n} at grid {grid_size}: {source}")]
    Eigensolver {
        n: i32,
        grid_size: usize,
        #[source]
        source: tridiag::SolveError,
    },
    #[error(
        "grid {grid_size} too coarse for mode n = {n}: eigenvalue drift {drift:.3e} \
         against grid {} exceeds the target {allowed:.3e}", 2 * grid_size
    )]
    GridTooCoarse {
        n: i32,
        grid_size: usize,
        drift: f64,
        allowed: f64,
    },
    #[error("mode n = {n}, j = {j}: surface norm deviates from 1 by {deviation:.3e}")]
    NormCheck { n: i32, j: usize, deviation: f64 },
    #[error(
        "mode n = {n} returned λ = {lambda:.6e} below the cutoff certificate \
         |n|/max(a) = {floor:.6e}"
    )]
    CutoffViolation { n: i32, lambda: f64, floor: f64 },
    #[error("discrete operator for mode n = {n} produced eigenvalue {value:.3e} < 0")]
    NegativeEigenvalue { n: i32, value: f64 },
    #[error("cache read at {path}: {reason}")]
    CacheFormat { path: String, reason: String },
    #[error("cache I/O at {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Half-offset radial grid: size points x_i = (i + ½)h with h = L/size,
/// so no point touches a sphere pole.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub base_length: f64,
    pub size: usize,
}

impl RadialGrid {
    pub fn h(&self) -> f64 {
        self.base_length / self.size as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h()
    }
}

/// One equivariant eigenfunction Φ = e^{inθ}u(x). For n ≠ 0 the same
/// radial profile serves both signs of n; the two table entries span the
/// real two-dimensional eigenspace.
#[derive(Clone, Debug)]
pub struct EquivariantMode {
    /// Fourier index: eigenvalue of −i ∂/∂θ.
    pub n: i32,
    /// Radial quantum number, counting up in λ within this n.
    pub j: usize,
    /// Frequency: −ΔΦ = λ²Φ.
    pub lambda: f64,
    /// Radial samples on `grid`, normalized so ∬ |Φ|² a dx dθ = 1 under
    /// the grid's midpoint rule, real, positive at the first index where
    /// |u| reaches half its maximum.
    pub u: Vec<f64>,
    pub grid: RadialGrid,
    /// |quadrature norm − 1| as recomputed from the stored samples.
    pub norm_check: f64,
}

impl EquivariantMode {
    /// Interpolated radial value at base coordinate x (cubic Lagrange).
    ///
    /// Out-of-range stencil points wrap on a torus and reflect at sphere
    /// poles with parity (−1)^n, so odd-n modes vanish at the poles and
    /// even-n modes extrapolate with zero slope, matching u ~ dist^|n|.
    pub fn radial_value(&self, metric: &ProfileMetric, x: f64) -> f64 {
        let h = self.grid.h();
        let s = metric.canonical_x(x) / h - 0.5;
        let k = s.floor() as i64;
        let f = s - k as f64;
        let w = [
            -f * (f - 1.0) * (f - 2.0) / 6.0,
            (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
            -(f + 1.0) * f * (f - 2.0) / 2.0,
            (f + 1.0) * f * (f - 1.0) / 6.0,
        ];
        let mut value = 0.0;
        for (offset, weight) in w.iter().enumerate() {
            value += weight * self.fetch(metric, k + offset as i64 - 1);
        }
        value
    }

    /// Sample index with ghost resolution outside [0, size).
    fn fetch(&self, metric: &ProfileMetric, idx: i64) -> f64 {
        let size = self.u.len() as i64;
        match metric.topology() {
            Topology::Torus => self.u[idx.rem_euclid(size) as usize],
            Topology::Sphere => {
                let parity = if self.n % 2 == 0 { 1.0 } else { -1.0 };
                let mut idx = idx;
                let mut sign = 1.0;
                // Canonical x keeps us within one reflection of the base.
                if idx < 0 {
                    idx = -1 - idx;
                    sign = parity;
                } else if idx >= size {
                    idx = 2 * size - 1 - idx;
                    sign = parity;
                }
                sign * self.u[idx.clamp(0, size - 1) as usize]
            }
        }
    }
}

/// How a table entry evaluates pointwise.
#[derive(Clone, Debug)]
pub enum ModeShape {
    /// Numerically solved radial profile, shared between ±n entries.
    Sampled(Arc<EquivariantMode>),
    /// Flat-torus plane wave e^{i(2πk x / L + nθ)} / √Area.
    TorusWave { k: i64, base_length: f64, area: f64 },
    /// Spherical harmonic of degree ell with order n; radial part is the
    /// orthonormal associated Legendre function in cos x.
    SphereHarmonic { ell: u32 },
}

/// One basis eigenfunction of the merged table.
#[derive(Clone, Debug)]
pub struct TableEntry {
    pub lambda: f64,
    pub n: i32,
    pub j: usize,
    pub shape: ModeShape,
}

impl TableEntry {
    /// |Φ(x, θ)|, independent of θ since the angular factor has modulus 1.
    pub fn radial_abs(&self, metric: &ProfileMetric, x: f64) -> f64 {
        match &self.shape {
            ModeShape::Sampled(mode) => mode.radial_value(metric, x).abs(),
            ModeShape::TorusWave { area, .. } => 1.0 / area.sqrt(),
            ModeShape::SphereHarmonic { ell } => {
                let t = metric.canonical_x(x).cos();
                (analytic::legendre_orthonormal(*ell, self.n.unsigned_abs(), t)
                    / (2.0 * std::f64::consts::PI).sqrt())
                .abs()
            }
        }
    }

    /// Complex value Φ(x, θ). Sampled and sphere entries carry the real
    /// radial profile times e^{inθ}; torus entries are plane waves.
    pub fn value_at(&self, metric: &ProfileMetric, x: f64, theta: f64) -> Complex64 {
        let angular = Complex64::from_polar(1.0, self.n as f64 * theta);
        match &self.shape {
            ModeShape::Sampled(mode) => angular * mode.radial_value(metric, x),
            ModeShape::TorusWave {
                k,
                base_length,
                area,
            } => {
                let phase = 2.0 * std::f64::consts::PI * *k as f64 * x / base_length;
                Complex64::from_polar(1.0 / area.sqrt(), phase) * angular
            }
            ModeShape::SphereHarmonic { ell } => {
                let t = metric.canonical_x(x).cos();
                angular * analytic::legendre_orthonormal(*ell, self.n.unsigned_abs(), t)
                    / (2.0 * std::f64::consts::PI).sqrt()
            }
        }
    }
}

/// Contiguous run of table entries whose eigenvalues agree within the
/// clustering tolerance; stands in for the eigenspace V_λ.
#[derive(Clone, Copy, Debug)]
pub struct Cluster {
    /// Mean eigenvalue of the members.
    pub lambda: f64,
    /// Entry index range [start, end).
    pub start: usize,
    pub end: usize,
}

impl Cluster {
    pub fn multiplicity(&self) -> usize {
        self.end - self.start
    }
}

/// Merged, sorted eigenbasis below a frequency cutoff.
#[derive(Clone, Debug)]
pub struct SpectralTable {
    /// Ascending by (λ, |n|, n, j).
    pub entries: Vec<TableEntry>,
    pub lambda_max: f64,
    /// Certified: any |n| > n_max has λ > lambda_max since λ ≥ |n|/max(a).
    pub n_max: i32,
    pub label: String,
    pub cluster_tol: f64,
    pub clusters: Vec<Cluster>,
    pub area: f64,
}

impl SpectralTable {
    /// Number of basis entries with λ_ν ≤ lambda.
    pub fn count_below(&self, lambda: f64) -> usize {
        self.entries.partition_point(|e| e.lambda <= lambda)
    }

    /// The cluster whose mean eigenvalue matches `lambda` within the
    /// table's clustering tolerance.
    pub fn cluster_at(&self, lambda: f64) -> Option<&Cluster> {
        let tol = self.cluster_tol * (1.0 + lambda.abs());
        self.clusters
            .iter()
            .min_by(|a, b| {
                (a.lambda - lambda)
                    .abs()
                    .total_cmp(&(b.lambda - lambda).abs())
            })
            .filter(|c| (c.lambda - lambda).abs() <= tol)
    }

    /// Σ |Φ_ν(x, ·)|² over one cluster; θ-independent.
    pub fn cluster_weight_at(&self, metric: &ProfileMetric, cluster: &Cluster, x: f64) -> f64 {
        self.entries[cluster.start..cluster.end]
            .iter()
            .map(|e| e.radial_abs(metric, x).powi(2))
            .sum()
    }
}

fn sort_entries(entries: &mut [TableEntry]) {
    entries.sort_by(|a, b| {
        a.lambda
            .total_cmp(&b.lambda)
            .then_with(|| a.n.unsigned_abs().cmp(&b.n.unsigned_abs()))
            .then_with(|| a.n.cmp(&b.n))
            .then_with(|| a.j.cmp(&b.j))
    });
}

pub(crate) fn build_clusters(entries: &[TableEntry], cluster_tol: f64) -> Vec<Cluster> {
    let mut clusters = Vec::new();
    let mut start = 0;
    for i in 1..=entries.len() {
        let split = i == entries.len() || {
            let gap = entries[i].lambda - entries[i - 1].lambda;
            gap > cluster_tol * (1.0 + entries[i].lambda.abs())
        };
        if split && i > start {
            let mean = entries[start..i].iter().map(|e| e.lambda).sum::<f64>() / (i - start) as f64;
            clusters.push(Cluster {
                lambda: mean,
                start,
                end: i,
            });
            start = i;
        }
    }
    clusters
}

/// Parameters of a per-mode radial solve.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SolveSettings {
    pub grid_size: usize,
    pub lambda_max: f64,
    /// Relative eigenvalue accuracy the grid must deliver; enforced by
    /// re-solving at twice the grid and comparing.
    pub accuracy_target: f64,
    /// Disables the doubling verification (the verification pass itself
    /// and size-scaling experiments set this).
    pub check_grid: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings {
            grid_size: 2048,
            lambda_max: 30.0,
            accuracy_target: 1e-3,
            check_grid: true,
        }
    }
}

pub(crate) fn eigenvalue_ceiling(lambda_max: f64) -> f64 {
    lambda_max * lambda_max * (1.0 + CEILING_SLACK) + CEILING_SLACK
}

/// Symmetrized flux-form discretization of the radial operator for mode n.
///
/// Row i of the weighted problem: [−m_{i+1}(u_{i+1}−u_i) + m_i(u_i−u_{i−1})]/h²
/// + (n²/a_i)u_i = λ² a_i u_i with wall weights m_j = a(jh). Conjugating
/// by √a_i gives a symmetric matrix; a torus closes the chain through a
/// corner entry, sphere pole walls carry weight 0 so no closure is needed
/// (the n²/a² term enforces decay for n ≠ 0).
fn radial_matrix(metric: &ProfileMetric, n: i32, grid: RadialGrid) -> BorderedTridiag {
    let size = grid.size;
    let h = grid.h();
    let nn = (n as f64) * (n as f64);
    let a: Vec<f64> = (0..size).map(|i| metric.sample(grid.x(i)).a).collect();
    let mut walls: Vec<f64> = (0..=size).map(|j| metric.sample(j as f64 * h).a).collect();
    match metric.topology() {
        Topology::Torus => {
            // One geometric point; keep the two ends bit-identical.
            let shared = walls[0];
            walls[size] = shared;
        }
        Topology::Sphere => {
            walls[0] = 0.0;
            walls[size] = 0.0;
        }
    }
    let h2 = h * h;
    let diag: Vec<f64> = (0..size)
        .map(|i| (walls[i] + walls[i + 1]) / (h2 * a[i]) + nn / (a[i] * a[i]))
        .collect();
    let offdiag: Vec<f64> = (0..size - 1)
        .map(|i| -walls[i + 1] / (h2 * (a[i] * a[i + 1]).sqrt()))
        .collect();
    let corner = match metric.topology() {
        Topology::Torus => -walls[0] / (h2 * (a[0] * a[size - 1]).sqrt()),
        Topology::Sphere => 0.0,
    };
    BorderedTridiag {
        diag,
        offdiag,
        corner,
    }
}

/// All equivariant eigenfunctions with Fourier index n and λ ≤ lambda_max.
pub fn solve_equivariant_modes(
    metric: &ProfileMetric,
    n: i32,
    settings: &SolveSettings,
) -> Result<Vec<EquivariantMode>, SpectrumError> {
    if settings.grid_size < 128 {
        return Err(SpectrumError::GridTooSmall {
            grid_size: settings.grid_size,
        });
    }
    if !(settings.lambda_max > 0.0) {
        return Err(SpectrumError::BadLambdaMax {
            lambda_max: settings.lambda_max,
        });
    }
    let grid = RadialGrid {
        base_length: metric.base_length(),
        size: settings.grid_size,
    };
    let ceiling = eigenvalue_ceiling(settings.lambda_max);
    let matrix = radial_matrix(metric, n, grid);
    let pairs = matrix
        .eigen_below(ceiling)
        .map_err(|source| SpectrumError::Eigensolver {
            n,
            grid_size: settings.grid_size,
            source,
        })?;
    let h = grid.h();
    let two_pi = 2.0 * std::f64::consts::PI;
    let a: Vec<f64> = (0..grid.size).map(|i| metric.sample(grid.x(i)).a).collect();
    let floor = n.unsigned_abs() as f64 / metric.max_profile();
    let mut modes = Vec::with_capacity(pairs.len());
    for (j, pair) in pairs.into_iter().enumerate() {
        if pair.value < -1e-6 {
            return Err(SpectrumError::NegativeEigenvalue {
                n,
                value: pair.value,
            });
        }
        let lambda = pair.value.max(0.0).sqrt();
        if lambda < floor - 10.0 * settings.accuracy_target * (1.0 + lambda) {
            return Err(SpectrumError::CutoffViolation { n, lambda, floor });
        }
        // v is unit in l²; u = v/√(2πh a) makes the surface L² norm 1.
        let mut u: Vec<f64> = pair
            .vector
            .iter()
            .zip(&a)
            .map(|(v, ai)| v / (two_pi * h * ai).sqrt())
            .collect();
        fix_phase(&mut u);
        let norm = two_pi * h * u.iter().zip(&a).map(|(ui, ai)| ui * ui * ai).sum::<f64>();
        let norm_check = (norm - 1.0).abs();
        if norm_check > NORM_CHECK_TOL {
            return Err(SpectrumError::NormCheck {
                n,
                j,
                deviation: norm_check,
            });
        }
        modes.push(EquivariantMode {
            n,
            j,
            lambda,
            u,
            grid,
            norm_check,
        });
    }
    if settings.check_grid {
        verify_grid(metric, n, settings, &modes, ceiling)?;
    }
    Ok(modes)
}

/// Sign convention: u > 0 at the first sample where |u| reaches half its
/// maximum.
fn fix_phase(u: &mut [f64]) {
    let max = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(first) = u.iter().find(|v| v.abs() >= 0.5 * max) {
        if *first < 0.0 {
            for v in u.iter_mut() {
                *v = -*v;
            }
        }
    }
}

/// Re-solves eigenvalues only at twice the grid and rejects the coarse
/// grid when any matched eigenvalue drifts beyond the accuracy target.
fn verify_grid(
    metric: &ProfileMetric,
    n: i32,
    settings: &SolveSettings,
    modes: &[EquivariantMode],
    ceiling: f64,
) -> Result<(), SpectrumError> {
    let fine_grid = RadialGrid {
        base_length: metric.base_length(),
        size: 2 * settings.grid_size,
    };
    let fine = radial_matrix(metric, n, fine_grid)
        .eigenvalues_below(ceiling)
        .map_err(|source| SpectrumError::Eigensolver {
            n,
            grid_size: fine_grid.size,
            source,
        })?;
    let fine_lambdas: Vec<f64> = fine
        .iter()
        .flat_map(|(value, mult)| {
            std::iter::repeat(value.max(0.0).sqrt()).take(*mult)
        })
        .collect();
    let shared = modes.len().min(fine_lambdas.len());
    for i in 0..shared {
        let drift = (modes[i].lambda - fine_lambdas[i]).abs();
        let allowed = settings.accuracy_target * (1.0 + fine_lambdas[i]);
        if drift > allowed {
            return Err(SpectrumError::GridTooCoarse {
                n,
                grid_size: settings.grid_size,
                drift,
                allowed,
            });
        }
    }
    // A tail present on only one grid must sit at the ceiling, where
    // inclusion legitimately flips with discretization error.
    let edge_band = settings.accuracy_target * (1.0 + settings.lambda_max);
    let coarse_tail = modes[shared..].iter().map(|m| m.lambda);
    let fine_tail = fine_lambdas[shared..].iter().copied();
    for lambda in coarse_tail.chain(fine_tail) {
        let drift = (lambda - settings.lambda_max).abs();
        if drift > edge_band {
            return Err(SpectrumError::GridTooCoarse {
                n,
                grid_size: settings.grid_size,
                drift,
                allowed: edge_band,
            });
        }
    }
    Ok(())
}

/// Solves every |n| ≤ ceil(lambda_max · max a) and merges into a sorted,
/// clustered table. Each n > 0 mode appears twice, as ±n, sharing one
/// radial profile.
pub fn assemble_spectral_table(
    metric: &ProfileMetric,
    settings: &SolveSettings,
    cluster_tol: f64,
) -> Result<SpectralTable, SpectrumError> {
    let n_max = (settings.lambda_max * metric.max_profile()).ceil() as i32;
    let per_n: Vec<Vec<EquivariantMode>> = (0..=n_max)
        .into_par_iter()
        .map(|n| solve_equivariant_modes(metric, n, settings))
        .collect::<Result<_, _>>()?;
    let mut entries = Vec::new();
    for modes in per_n {
        for mode in modes {
            let shared = Arc::new(mode);
            entries.push(TableEntry {
                lambda: shared.lambda,
                n: shared.n,
                j: shared.j,
                shape: ModeShape::Sampled(shared.clone()),
            });
            if shared.n > 0 {
                entries.push(TableEntry {
                    lambda: shared.lambda,
                    n: -shared.n,
                    j: shared.j,
                    shape: ModeShape::Sampled(shared),
                });
            }
        }
    }
    sort_entries(&mut entries);
    let clusters = build_clusters(&entries, cluster_tol);
    Ok(SpectralTable {
        entries,
        lambda_max: settings.lambda_max,
        n_max,
        label: metric.label().to_string(),
        cluster_tol,
        clusters,
        area: metric.area(),
    })
}

/// Pointwise norms of one basis entry over an evaluation grid.
#[derive(Clone, Debug)]
pub struct ModeStatistics {
    /// max |Φ| over the grid (= max |u| since |e^{inθ}| = 1).
    pub sup_norm: f64,
    /// (p, ‖Φ‖_p) for p ∈ {2, 4, 6}, area-weighted; p = 2 should be ≈ 1.
    pub lp_norms: Vec<(u32, f64)>,
    /// True when the grid is coarser than 10 points per wavelength 2π/λ.
    pub undersampled: bool,
}

/// Sup and L^p norms by quadrature with weight a(x) dx dθ over a sorted
/// grid of base coordinates.
pub fn mode_statistics(
    entry: &TableEntry,
    metric: &ProfileMetric,
    eval_grid: &[f64],
) -> ModeStatistics {
    assert!(eval_grid.len() >= 2, "need at least two evaluation points");
    let values: Vec<f64> = eval_grid
        .iter()
        .map(|&x| entry.radial_abs(metric, x))
        .collect();
    let weights: Vec<f64> = eval_grid.iter().map(|&x| metric.sample(x).a).collect();
    let sup_norm = values.iter().fold(0.0f64, |m, v| m.max(*v));
    let two_pi = 2.0 * std::f64::consts::PI;
    let lp_norms = [2u32, 4, 6]
        .iter()
        .map(|&p| {
            let mut integral = 0.0;
            for i in 0..eval_grid.len() - 1 {
                let dx = eval_grid[i + 1] - eval_grid[i];
                let f0 = values[i].powi(p as i32) * weights[i];
                let f1 = values[i + 1].powi(p as i32) * weights[i + 1];
                integral += 0.5 * (f0 + f1) * dx;
            }
            if metric.topology() == Topology::Torus {
                // Close the loop from the last sample back to the first.
                let dx = metric.base_length() - (eval_grid[eval_grid.len() - 1] - eval_grid[0]);
                let f0 = values[eval_grid.len() - 1].powi(p as i32) * weights[eval_grid.len() - 1];
                let f1 = values[0].powi(p as i32) * weights[0];
                integral += 0.5 * (f0 + f1) * dx;
            }
            (p, (two_pi * integral).powf(1.0 / p as f64))
        })
        .collect();
    let max_gap = eval_grid
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0f64, f64::max);
    let lambda = match &entry.shape {
        ModeShape::Sampled(m) => m.lambda,
        _ => entry.lambda,
    };
    let undersampled = lambda > 0.0 && max_gap > (two_pi / lambda) / 10.0;
    ModeStatistics {
        sup_norm,
        lp_norms,
        undersampled,
    }
}

/// Cache header persisted alongside the mode CSV.
#[derive(Debug, Serialize, Deserialize)]
pub struct TableCacheHeader {
    pub format_version: u32,
    pub label: String,
    pub base_length: f64,
    pub topology: String,
    pub grid_size: usize,
    pub lambda_max: f64,
    pub n_max: i32,
    pub cluster_tol: f64,
    pub accuracy_target: f64,
    pub area: f64,
    pub mode_rows: usize,
}

pub const TABLE_CACHE_VERSION: u32 = 1;

fn cache_io(path: &Path, source: std::io::Error) -> SpectrumError {
    SpectrumError::CacheIo {
        path: path.display().to_string(),
        source,
    }
}

/// Writes header.json plus modes.csv (columns n, j, lambda, u samples;
/// one row per distinct radial profile, n ≥ 0).
pub fn save_sampled_table(
    dir: &Path,
    table: &SpectralTable,
    metric: &ProfileMetric,
    settings: &SolveSettings,
) -> Result<(), SpectrumError> {
    std::fs::create_dir_all(dir).map_err(|e| cache_io(dir, e))?;
    let distinct: Vec<&Arc<EquivariantMode>> = table
        .entries
        .iter()
        .filter(|e| e.n >= 0)
        .filter_map(|e| match &e.shape {
            ModeShape::Sampled(m) => Some(m),
            _ => None,
        })
        .collect();
    let header = TableCacheHeader {
        format_version: TABLE_CACHE_VERSION,
        label: table.label.clone(),
        base_length: metric.base_length(),
        topology: format!("{:?}", metric.topology()),
        grid_size: settings.grid_size,
        lambda_max: table.lambda_max,
        n_max: table.n_max,
        cluster_tol: table.cluster_tol,
        accuracy_target: settings.accuracy_target,
        area: table.area,
        mode_rows: distinct.len(),
    };
    let header_path = dir.join("header.json");
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    std::fs::write(&header_path, text).map_err(|e| cache_io(&header_path, e))?;
    let csv_path = dir.join("modes.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| cache_io(&csv_path, e))?;
    let mut out = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        write!(out, "n,j,lambda")?;
        let size = distinct.first().map(|m| m.u.len()).unwrap_or(0);
        for i in 0..size {
            write!(out, ",u{i}")?;
        }
        writeln!(out)?;
        for mode in &distinct {
            write!(out, "{},{},{:.17e}", mode.n, mode.j, mode.lambda)?;
            for v in &mode.u {
                write!(out, ",{v:.17e}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    })()
    .map_err(|e| cache_io(&csv_path, e))?;
    Ok(())
}

/// Rebuilds a table from a cache directory. The metric supplies the
/// weight a(x) for recomputing norm checks and must match the cached
/// label; cluster boundaries are rebuilt, not stored.
pub fn load_sampled_table(dir: &Path, metric: &ProfileMetric) -> Result<SpectralTable, SpectrumError> {
    let header_path = dir.join("header.json");
    let text = std::fs::read_to_string(&header_path).map_err(|e| cache_io(&header_path, e))?;
    let header: TableCacheHeader =
        serde_json::from_str(&text).map_err(|e| SpectrumError::CacheFormat {
            path: header_path.display().to_string(),
            reason: e.to_string(),
        })?;
    let bad = |reason: String| SpectrumError::CacheFormat {
        path: header_path.display().to_string(),
        reason,
    };
    if header.format_version != TABLE_CACHE_VERSION {
        return Err(bad(format!(
            "format version {} != {}",
            header.format_version, TABLE_CACHE_VERSION
        )));
    }
    if header.label != metric.label() {
        return Err(bad(format!(
            "cached label {:?} does not match metric {:?}",
            header.label,
            metric.label()
        )));
    }
    let grid = RadialGrid {
        base_length: header.base_length,
        size: header.grid_size,
    };
    let csv_path = dir.join("modes.csv");
    let file = std::fs::File::open(&csv_path).map_err(|e| cache_io(&csv_path, e))?;
    let reader = std::io::BufReader::new(file);
    let h = grid.h();
    let two_pi = 2.0 * std::f64::consts::PI;
    let a: Vec<f64> = (0..grid.size).map(|i| metric.sample(grid.x(i)).a).collect();
    let mut entries = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| cache_io(&csv_path, e))?;
        if line_no == 0 {
            continue;
        }
        let mut fields = line.split(',');
        let parse = |s: Option<&str>, what: &str| -> Result<f64, SpectrumError> {
            s.and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| SpectrumError::CacheFormat {
                    path: csv_path.display().to_string(),
                    reason: format!("row {line_no}: bad {what}"),
                })
        };
        let n = parse(fields.next(), "n")? as i32;
        let j = parse(fields.next(), "j")? as usize;
        let lambda = parse(fields.next(), "lambda")?;
        let u: Vec<f64> = fields
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| SpectrumError::CacheFormat {
                path: csv_path.display().to_string(),
                reason: format!("row {line_no}: {e}"),
            })?;
        if u.len() != grid.size {
            return Err(SpectrumError::CacheFormat {
                path: csv_path.display().to_string(),
                reason: format!("row {line_no}: {} samples, expected {}", u.len(), grid.size),
            });
        }
        let norm = two_pi * h * u.iter().zip(&a).map(|(ui, ai)| ui * ui * ai).sum::<f64>();
        let norm_check = (norm - 1.0).abs();
        if norm_check > NORM_CHECK_TOL {
            return Err(SpectrumError::NormCheck {
                n,
                j,
                deviation: norm_check,
            });
        }
        let mode = Arc::new(EquivariantMode {
            n,
            j,
            lambda,
            u,
            grid,
            norm_check,
        });
        entries.push(TableEntry {
            lambda,
            n,
            j,
            shape: ModeShape::Sampled(mode.clone()),
        });
        if n > 0 {
            entries.push(TableEntry {
                lambda,
                n: -n,
                j,
                shape: ModeShape::Sampled(mode),
            });
        }
    }
    sort_entries(&mut entries);
    let clusters = build_clusters(&entries, header.cluster_tol);
    Ok(SpectralTable {
        entries,
        lambda_max: header.lambda_max,
        n_max: header.n_max,
        label: header.label,
        cluster_tol: header.cluster_tol,
        clusters,
        area: header.area,
    })
}

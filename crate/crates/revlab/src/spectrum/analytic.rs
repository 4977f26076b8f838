//! Exact spectra for the two model surfaces.
//!
//! The flat torus and the round sphere have closed-form eigenbases, so
//! their tables need no discretization: they anchor the numeric solver
//! (eigenvalues, multiplicities, pointwise values) and serve the Weyl
//! functionals directly at frequencies where a finite grid would smear
//! nearby clusters together.

use std::f64::consts::PI;

use super::{
    build_clusters, eigenvalue_ceiling, sort_entries, Cluster, ModeShape, SpectralTable,
    TableEntry,
};

/// Clusters of an analytic table group only exact coincidences, so the
/// tolerance merely absorbs the rounding of λ = √(λ²).
const ANALYTIC_CLUSTER_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
pub enum AnalyticKind {
    /// Profile a ≡ circumference on a periodic base of the given length.
    FlatTorus {
        circumference: f64,
        base_length: f64,
    },
    /// Unit round sphere: a(x) = sin x on [0, π].
    RoundSphere,
}

/// Closed-form spectral table with every λ ≤ lambda_max.
///
/// Flat torus: λ² = (2πk/L)² + (n/c)², eigenfunctions
/// e^{i(2πkx/L + nθ)}/√Area, radial index j enumerating k as 0, 1, −1,
/// 2, −2, … Round sphere: λ_ℓ = √(ℓ(ℓ+1)) with the 2ℓ+1 orders m as n,
/// j = ℓ − |m| counting radial zeros; radial parts are orthonormal
/// associated Legendre functions in cos x, so |Φ| at a pole is
/// √((2ℓ+1)/4π) for m = 0 and zero otherwise.
pub fn analytic_spectrum(kind: AnalyticKind, lambda_max: f64) -> SpectralTable {
    assert!(lambda_max > 0.0, "lambda_max must be positive");
    let ceiling = eigenvalue_ceiling(lambda_max);
    let mut entries = Vec::new();
    let (label, n_max, area) = match kind {
        AnalyticKind::FlatTorus {
            circumference: c,
            base_length: l,
        } => {
            assert!(c > 0.0 && l > 0.0, "torus dimensions must be positive");
            let area = 2.0 * PI * c * l;
            let n_max = (lambda_max * c).floor() as i32;
            let wave = 2.0 * PI / l;
            for n in -n_max..=n_max {
                let angular = (n as f64 / c).powi(2);
                let mut k = 0i64;
                loop {
                    let mu = (wave * k as f64).powi(2) + angular;
                    if mu > ceiling {
                        break;
                    }
                    let lambda = mu.sqrt();
                    let signed: &[i64] = if k == 0 { &[0] } else { &[k, -k] };
                    for &signed_k in signed {
                        let j = if signed_k == 0 {
                            0
                        } else if signed_k > 0 {
                            (2 * signed_k - 1) as usize
                        } else {
                            (-2 * signed_k) as usize
                        };
                        entries.push(TableEntry {
                            lambda,
                            n,
                            j,
                            shape: ModeShape::TorusWave {
                                k: signed_k,
                                base_length: l,
                                area,
                            },
                        });
                    }
                    k += 1;
                }
            }
            (format!("analytic flat torus c={c} L={l}"), n_max, area)
        }
        AnalyticKind::RoundSphere => {
            let area = 4.0 * PI;
            let mut ell = 0u32;
            while (ell as f64) * (ell as f64 + 1.0) <= ceiling {
                let lambda = ((ell as f64) * (ell as f64 + 1.0)).sqrt();
                for m in -(ell as i32)..=(ell as i32) {
                    entries.push(TableEntry {
                        lambda,
                        n: m,
                        j: (ell as i32 - m.abs()) as usize,
                        shape: ModeShape::SphereHarmonic { ell },
                    });
                }
                ell += 1;
            }
            ("analytic round sphere".to_string(), ell as i32 - 1, area)
        }
    };
    sort_entries(&mut entries);
    let clusters: Vec<Cluster> = build_clusters(&entries, ANALYTIC_CLUSTER_TOL);
    SpectralTable {
        entries,
        lambda_max,
        n_max,
        label,
        cluster_tol: ANALYTIC_CLUSTER_TOL,
        clusters,
        area,
    }
}

/// Orthonormal associated Legendre function: ∫_{−1}^{1} P̃_{ℓm}² dt = 1,
/// no Condon–Shortley sign. Stable m-seeded three-term ascent.
pub fn legendre_orthonormal(ell: u32, m: u32, t: f64) -> f64 {
    if m > ell {
        return 0.0;
    }
    let s2 = (1.0 - t * t).max(0.0);
    // Seed P̃_m^m = c_m (1−t²)^{m/2}, c_0 = √(1/2), c_m = c_{m−1}√((2m+1)/2m).
    let mut c = (0.5f64).sqrt();
    for i in 1..=m {
        c *= ((2.0 * i as f64 + 1.0) / (2.0 * i as f64)).sqrt();
    }
    let mut p_prev = c * s2.powf(m as f64 / 2.0);
    if ell == m {
        return p_prev;
    }
    // P̃_{m+1}^m = √(2m+3) t P̃_m^m.
    let mut p = (2.0 * m as f64 + 3.0).sqrt() * t * p_prev;
    let mf = m as f64;
    for l in (m + 1)..ell {
        let lf = l as f64;
        let a = ((2.0 * lf + 1.0) * (2.0 * lf + 3.0) / ((lf + 1.0 - mf) * (lf + 1.0 + mf)))
            .sqrt();
        let b = ((2.0 * lf + 3.0) * (lf - mf) * (lf + mf)
            / ((2.0 * lf - 1.0) * (lf + 1.0 - mf) * (lf + 1.0 + mf)))
            .sqrt();
        let next = a * t * p - b * p_prev;
        p_prev = p;
        p = next;
    }
    p
}

/// Gauss–Legendre nodes and weights on [−1, 1], exact for polynomials of
/// degree ≤ 2n − 1. Newton iteration on P_n from the Chebyshev guess.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut rule = vec![(0.0, 0.0); n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // P_n(x) and P_n'(x) by the standard recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for l in 2..=n {
                let lf = l as f64;
                let p2 = ((2.0 * lf - 1.0) * x * p1 - (lf - 1.0) * p0) / lf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule[i] = (-x, w);
        rule[n - 1 - i] = (x, w);
    }
    rule
}

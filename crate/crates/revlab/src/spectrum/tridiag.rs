//! Eigensolver for symmetric tridiagonal matrices with an optional
//! periodic corner entry.
//!
//! The corner couples indices 0 and n−1, which is exactly the structure
//! the periodic radial discretization produces; corner = 0 gives a plain
//! tridiagonal chain. Factoring A − σI by elimination in natural order
//! keeps the fill confined to the last row and column, so the factor
//! stays O(n): pivots p, subdiagonal multipliers l, and a border row m.
//! The sign count of the pivots equals the number of eigenvalues below σ
//! (Sylvester inertia), which drives bisection; eigenvectors come from
//! inverse iteration on the same factorization with deterministic seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Smallest pivot magnitude used during solves; factoring at an exact
/// eigenvalue floors the singular pivot instead of dividing by zero.
const PIVOT_FLOOR: f64 = 1e-290;
/// Relative width at which bisection stops and emits a value.
const BISECT_REL_TOL: f64 = 1e-12;
/// Eigenvalues closer than this (relative) share one orthogonalization
/// group during inverse iteration. Bisection can split an exact double
/// eigenvalue by ~sqrt(eps) through border-pivot cancellation, so the
/// tolerance sits well above that scale.
const GROUP_REL_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("matrix too small (n = {n}, need at least 3)")]
    TooSmall { n: usize },
    #[error("eigenvector iteration stalled at value {value:.6e} (residual {residual:.3e})")]
    NoConvergence { value: f64, residual: f64 },
}

/// Symmetric matrix with diagonal `diag`, first off-diagonal `offdiag`,
/// and `corner` at (0, n−1).
#[derive(Clone, Debug)]
pub struct BorderedTridiag {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
    pub corner: f64,
}

/// One eigenpair; degenerate values appear once per independent vector.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

struct Factor {
    /// Pivots of A − σI.
    p: Vec<f64>,
    /// Subdiagonal multipliers, l[i] eliminates row i+1 (i ≤ n−3).
    l: Vec<f64>,
    /// Border-row multipliers, m[i] eliminates row n−1 against row i.
    m: Vec<f64>,
}

impl BorderedTridiag {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.offdiag[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.offdiag[i] * v[i + 1];
            }
            out[i] = s;
        }
        out[0] += self.corner * v[n - 1];
        out[n - 1] += self.corner * v[0];
        out
    }

    /// Number of eigenvalues strictly below sigma.
    pub fn count_below(&self, sigma: f64) -> usize {
        let n = self.n();
        assert!(n >= 3);
        let d = &self.diag;
        let e = &self.offdiag;
        let mut count = 0usize;
        let mut p = floor_pivot(d[0] - sigma);
        let mut b = self.corner;
        let mut last = d[n - 1] - sigma;
        for i in 0..n - 2 {
            if p < 0.0 {
                count += 1;
            }
            last -= b * b / p;
            let orig = if i + 1 == n - 2 { e[n - 2] } else { 0.0 };
            let b_next = orig - e[i] * b / p;
            let p_next = floor_pivot(d[i + 1] - sigma - e[i] * e[i] / p);
            p = p_next;
            b = b_next;
        }
        if p < 0.0 {
            count += 1;
        }
        last -= b * b / p;
        if floor_pivot(last) < 0.0 {
            count += 1;
        }
        count
    }

    fn factor(&self, sigma: f64) -> Factor {
        let n = self.n();
        let d = &self.diag;
        let e = &self.offdiag;
        let mut p = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(2)];
        let mut m = vec![0.0; n - 1];
        let mut b = self.corner;
        let mut last = d[n - 1] - sigma;
        p[0] = floor_pivot(d[0] - sigma);
        for i in 0..n - 2 {
            m[i] = b / p[i];
            last -= b * m[i];
            let orig = if i + 1 == n - 2 { e[n - 2] } else { 0.0 };
            b = orig - e[i] * m[i];
            l[i] = e[i] / p[i];
            p[i + 1] = floor_pivot(d[i + 1] - sigma - e[i] * l[i]);
        }
        m[n - 2] = b / p[n - 2];
        last -= b * m[n - 2];
        p[n - 1] = floor_pivot(last);
        Factor { p, l, m }
    }

    /// All eigenvalues strictly below `ceiling`, ascending, with
    /// orthonormal eigenvectors (degeneracies expanded).
    pub fn eigen_below(&self, ceiling: f64) -> Result<Vec<EigenPair>, SolveError> {
        let values = self.eigenvalues_below(ceiling)?;
        self.vectors_for(&values)
    }

    /// Eigenvalues strictly below `ceiling` as (value, multiplicity),
    /// ascending, without computing vectors. Values for degenerate pairs
    /// carry the bisection's ~sqrt(eps) splitting noise; eigen_below
    /// polishes them through Rayleigh quotients, this path does not.
    pub fn eigenvalues_below(&self, ceiling: f64) -> Result<Vec<(f64, usize)>, SolveError> {
        let n = self.n();
        if n < 3 {
            return Err(SolveError::TooSmall { n });
        }
        let lo = self.gershgorin_low();
        if ceiling <= lo {
            return Ok(Vec::new());
        }
        Ok(self.bisect_values(lo, ceiling))
    }

    /// Row-sum bound on the operator norm; the attainable residual floor
    /// scales with this, not with the eigenvalue.
    fn norm_bound(&self) -> f64 {
        let n = self.n();
        let mut hi = 0.0f64;
        for i in 0..n {
            let mut r = self.diag[i].abs();
            if i > 0 {
                r += self.offdiag[i - 1].abs();
            }
            if i + 1 < n {
                r += self.offdiag[i].abs();
            }
            if i == 0 || i == n - 1 {
                r += self.corner.abs();
            }
            hi = hi.max(r);
        }
        hi
    }

    fn gershgorin_low(&self) -> f64 {
        let n = self.n();
        let mut lo = f64::INFINITY;
        for i in 0..n {
            let mut r = 0.0;
            if i > 0 {
                r += self.offdiag[i - 1].abs();
            }
            if i + 1 < n {
                r += self.offdiag[i].abs();
            }
            if i == 0 || i == n - 1 {
                r += self.corner.abs();
            }
            lo = lo.min(self.diag[i] - r);
        }
        lo - 1.0
    }

    /// Bisection on the inertia count. Returns (value, multiplicity)
    /// ascending; clusters narrower than the stop width merge.
    fn bisect_values(&self, lo: f64, hi: f64) -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        let c_lo = self.count_below(lo);
        let c_hi = self.count_below(hi);
        let mut stack = vec![(lo, hi, c_lo, c_hi)];
        while let Some((a, b, ca, cb)) = stack.pop() {
            if cb == ca {
                continue;
            }
            let mid = 0.5 * (a + b);
            let width = b - a;
            let stop = BISECT_REL_TOL * (1.0 + mid.abs());
            if width <= stop || width <= 8.0 * f64::EPSILON * a.abs().max(b.abs()) {
                out.push((mid, cb - ca));
                continue;
            }
            // Roundoff near a singular leading minor can perturb the raw
            // count by one; clamping to the bracket keeps the recursion
            // monotone.
            let cm = self.count_below(mid).clamp(ca, cb);
            // Push the upper half first so the lower half pops first and
            // the output comes out ascending.
            stack.push((mid, b, cm, cb));
            stack.push((a, mid, ca, cm));
        }
        out
    }

    fn solve(&self, f: &Factor, rhs: &[f64], out: &mut [f64]) {
        let n = self.n();
        // Forward: L z = rhs (unit lower triangular with border row).
        out.copy_from_slice(rhs);
        for i in 1..n - 1 {
            out[i] -= f.l[i - 1] * out[i - 1];
        }
        let mut border = out[n - 1];
        for i in 0..n - 1 {
            border -= f.m[i] * out[i];
        }
        out[n - 1] = border;
        // Diagonal.
        for i in 0..n {
            out[i] /= f.p[i];
        }
        // Back: Lᵀ x = w.
        for i in (0..n - 1).rev() {
            let mut v = out[i] - f.m[i] * out[n - 1];
            if i < n - 2 {
                v -= f.l[i] * out[i + 1];
            }
            out[i] = v;
        }
    }

    fn vectors_for(&self, values: &[(f64, usize)]) -> Result<Vec<EigenPair>, SolveError> {
        let mut pairs: Vec<EigenPair> = Vec::new();
        let mut ordinal = 0u64;
        let mut idx = 0;
        while idx < values.len() {
            // A group is a maximal chain of values with tiny gaps; vectors
            // inside a group are orthogonalized against each other.
            let mut end = idx + 1;
            while end < values.len() {
                let gap = values[end].0 - values[end - 1].0;
                if gap > GROUP_REL_TOL * (1.0 + values[end].0.abs()) {
                    break;
                }
                end += 1;
            }
            let group_start = pairs.len();
            for &(value, mult) in &values[idx..end] {
                for _copy in 0..mult {
                    let v = self.iterate_with_backoff(value, &pairs[group_start..], ordinal)?;
                    ordinal += 1;
                    pairs.push(EigenPair { value, vector: v });
                }
            }
            // Polish the reported values with Rayleigh quotients.
            for pair in &mut pairs[group_start..] {
                let av = self.matvec(&pair.vector);
                pair.value = dot(&pair.vector, &av);
            }
            pairs[group_start..].sort_by(|a, b| a.value.total_cmp(&b.value));
            idx = end;
        }
        Ok(pairs)
    }

    /// Near a degenerate pair the border pivot cancels catastrophically,
    /// so both the bisected value and a factorization exactly there can
    /// be off by ~sqrt(eps). Backing the shift off by more than that
    /// window (but far less than the gap to the next cluster) restores a
    /// usable factorization; the Rayleigh polish recovers the value.
    fn iterate_with_backoff(
        &self,
        value: f64,
        group: &[EigenPair],
        ordinal: u64,
    ) -> Result<Vec<f64>, SolveError> {
        const BACKOFF: [f64; 4] = [0.0, 1e-7, -2e-7, 1e-5];
        let mut last = None;
        for off in BACKOFF {
            let f = self.factor(value + off * (1.0 + value.abs()));
            match self.inverse_iterate(&f, value, group, ordinal) {
                Ok(v) => return Ok(v),
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap())
    }

    fn inverse_iterate(
        &self,
        f: &Factor,
        value: f64,
        group: &[EigenPair],
        ordinal: u64,
    ) -> Result<Vec<f64>, SolveError> {
        let n = self.n();
        // Fixed seeds keep results independent of any run configuration.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_BA5E ^ (ordinal.wrapping_mul(0x9E37_79B9)));
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthogonalize(&mut v, group);
        normalize(&mut v);
        let mut w = vec![0.0; n];
        let mut last_residual = f64::INFINITY;
        // Roundoff in the matvec alone costs ~eps times the row sums, so a
        // fine grid (entries ~1/h^2) cannot reach a fixed absolute residual.
        let floor = 64.0 * f64::EPSILON * self.norm_bound();
        for _iter in 0..24 {
            self.solve(f, &v, &mut w);
            let scale = w.iter().map(|x| x * x).sum::<f64>();
            if w.iter().any(|x| !x.is_finite()) || !scale.is_finite() {
                // Floored pivots overflowed the solve (the components or
                // their squared sum); try the next shift.
                return Err(SolveError::NoConvergence {
                    value,
                    residual: f64::INFINITY,
                });
            }
            orthogonalize(&mut w, group);
            let norm = normalize(&mut w);
            if norm == 0.0 {
                // Solve collapsed onto the excluded span; restart.
                for x in w.iter_mut() {
                    *x = rng.random_range(-1.0..1.0);
                }
                orthogonalize(&mut w, group);
                normalize(&mut w);
            }
            std::mem::swap(&mut v, &mut w);
            let av = self.matvec(&v);
            let lam = dot(&v, &av);
            let mut r2 = 0.0;
            for i in 0..n {
                let d = av[i] - lam * v[i];
                r2 += d * d;
            }
            last_residual = r2.sqrt();
            // A tiny residual alone can certify an eigenvector of the
            // wrong eigenvalue when the factorization is garbage, so the
            // Rayleigh quotient must also stay near the claimed value.
            if last_residual <= (1e-10 * (1.0 + lam.abs())).max(floor)
                && (lam - value).abs() <= 1e-5 * (1.0 + value.abs())
            {
                return Ok(v);
            }
        }
        Err(SolveError::NoConvergence {
            value,
            residual: last_residual,
        })
    }
}

fn floor_pivot(p: f64) -> f64 {
    if p.abs() < PIVOT_FLOOR {
        if p < 0.0 {
            -PIVOT_FLOOR
        } else {
            PIVOT_FLOOR
        }
    } else {
        p
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

fn orthogonalize(v: &mut [f64], against: &[EigenPair]) {
    // Two classical Gram–Schmidt passes keep the loss of orthogonality
    // at roundoff level.
    for _ in 0..2 {
        for p in against {
            let c = dot(v, &p.vector);
            for (x, y) in v.iter_mut().zip(&p.vector) {
                *x -= c * y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Cyclic Jacobi rotations on a dense copy; independent of the
    /// bisection path.
    fn dense_eigenvalues(m: &BorderedTridiag) -> Vec<f64> {
        let n = m.n();
        let mut a = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            a[i][i] = m.diag[i];
            if i + 1 < n {
                a[i][i + 1] = m.offdiag[i];
                a[i + 1][i] = m.offdiag[i];
            }
        }
        a[0][n - 1] += m.corner;
        a[n - 1][0] += m.corner;
        for _sweep in 0..200 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[p][q] * a[p][q];
                }
            }
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut vals: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        vals.sort_by(f64::total_cmp);
        vals
    }

    fn circle_laplacian(n: usize) -> BorderedTridiag {
        BorderedTridiag {
            diag: vec![2.0; n],
            offdiag: vec![-1.0; n - 1],
            corner: -1.0,
        }
    }

    #[test]
    fn periodic_second_difference_spectrum() {
        // Closed form: eigenvalues 4 sin²(πk/n), k = 0..n−1, double for
        // 0 < k < n/2.
        let n = 8;
        let m = circle_laplacian(n);
        let pairs = m.eigen_below(10.0).unwrap();
        assert_eq!(pairs.len(), n);
        let mut expected: Vec<f64> = (0..n)
            .map(|k| 4.0 * (PI * k as f64 / n as f64).sin().powi(2))
            .collect();
        expected.sort_by(f64::total_cmp);
        for (p, e) in pairs.iter().zip(&expected) {
            assert!((p.value - e).abs() < 1e-9, "{} vs {}", p.value, e);
        }
        // Orthonormality across the doubled values.
        for i in 0..n {
            for j in i..n {
                let d = dot(&pairs[i].vector, &pairs[j].vector);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-9, "gram({i},{j}) = {d}");
            }
        }
    }

    #[test]
    fn open_chain_matches_closed_form() {
        // tridiag(−1, 2, −1) with zero corner: 4 sin²(kπ/(2(n+1))).
        let n = 9;
        let m = BorderedTridiag {
            diag: vec![2.0; n],
            offdiag: vec![-1.0; n - 1],
            corner: 0.0,
        };
        let pairs = m.eigen_below(10.0).unwrap();
        assert_eq!(pairs.len(), n);
        for (k, p) in pairs.iter().enumerate() {
            let e = 4.0 * ((k + 1) as f64 * PI / (2.0 * (n + 1) as f64)).sin().powi(2);
            assert!((p.value - e).abs() < 1e-10, "k={k}: {} vs {e}", p.value);
        }
    }

    #[test]
    fn counts_match_dense_oracle() {
        let m = BorderedTridiag {
            diag: vec![0.7, -0.3, 1.9, 0.2, -1.1, 0.8, 1.4],
            offdiag: vec![0.5, -0.6, 0.9, 0.3, -0.2, 0.7],
            corner: 0.4,
        };
        let dense = dense_eigenvalues(&m);
        for &sigma in &[-3.0, -1.0, -0.5, 0.0, 0.3, 1.0, 2.0, 4.0] {
            let want = dense.iter().filter(|&&v| v < sigma).count();
            assert_eq!(m.count_below(sigma), want, "sigma {sigma}");
        }
    }

    #[test]
    fn residuals_meet_tolerance() {
        let m = circle_laplacian(64);
        let pairs = m.eigen_below(4.1).unwrap();
        assert_eq!(pairs.len(), 64);
        for p in &pairs {
            let av = m.matvec(&p.vector);
            let mut r2 = 0.0;
            for i in 0..64 {
                let d = av[i] - p.value * p.vector[i];
                r2 += d * d;
            }
            assert!(r2.sqrt() <= 1e-8 * (1.0 + p.value.abs()));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn spectrum_matches_dense_oracle(
            n in 6usize..14,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = BorderedTridiag {
                diag: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
                offdiag: (0..n - 1).map(|_| rng.random_range(-1.5..1.5)).collect(),
                corner: rng.random_range(-1.0..1.0),
            };
            let dense = dense_eigenvalues(&m);
            let ceiling = dense[n - 1] + 1.0;
            let pairs = m.eigen_below(ceiling).unwrap();
            prop_assert_eq!(pairs.len(), n);
            for (p, d) in pairs.iter().zip(&dense) {
                prop_assert!((p.value - d).abs() < 1e-8, "{} vs {}", p.value, d);
            }
            for i in 0..n {
                let av = m.matvec(&pairs[i].vector);
                let mut r2 = 0.0;
                for k in 0..n {
                    let d = av[k] - pairs[i].value * pairs[i].vector[k];
                    r2 += d * d;
                }
                prop_assert!(r2.sqrt() <= 1e-8 * (1.0 + pairs[i].value.abs()));
                for j in i + 1..n {
                    let g = dot(&pairs[i].vector, &pairs[j].vector).abs();
                    prop_assert!(g < 1e-7, "gram({},{}) = {}", i, j, g);
                }
            }
        }
    }
}

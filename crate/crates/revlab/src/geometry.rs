//! Profile metrics for surfaces of revolution.
//!
//! The metric is g = dx² + a(x)²dθ² in arclength coordinates. Sphere-type
//! profiles vanish at the two poles x = 0 and x = base_length with unit
//! slope (smooth closure); torus-type profiles are periodic and strictly
//! positive. Gauss curvature is K = -a″/a.
//!
//! Besides the reference metrics (flat torus, round sphere, custom trig
//! profiles) this module builds the bridged band torus: a round band of
//! angular half-width ε glued through C^∞ monotone bridges to a flat
//! cylinder whose radius is half the band-edge radius. Band geodesics with
//! Clairaut constant |I| > a(ε) never leave the band, which is what makes
//! the metric interesting for loopset and sup-norm experiments.

use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

/// Tolerance for periodic wrap residuals of torus profiles.
pub const WRAP_TOL: f64 = 1e-10;
/// Tolerance for sphere pole closure: a = 0, a′ = ±1 at the poles.
pub const POLE_CLOSURE_TOL: f64 = 1e-8;
/// Grid used by construction-time validation.
const VALIDATION_GRID: usize = 4096;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("profile parameter {name} = {value} out of range: {reason}")]
    BadParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("profile positivity violated at x = {x}: a = {a}")]
    NonPositive { x: f64, a: f64 },
    #[error("pole closure violated: {what} at x = {x} is {value}, expected {expected}")]
    PoleClosure {
        what: &'static str,
        x: f64,
        value: f64,
        expected: f64,
    },
    #[error("profile not periodic: {what} differs by {residual:.3e} at the wrap point (tolerance {tol:.1e})")]
    NotPeriodic {
        what: &'static str,
        residual: f64,
        tol: f64,
    },
    #[error("profile derivative data inconsistent at x = {x}: |{what} - central difference| = {residual:.3e}")]
    DerivativeMismatch {
        what: &'static str,
        x: f64,
        residual: f64,
    },
    #[error("bridge profile not monotone on the bridge zone: a′ = {slope:.3e} at x = {x}")]
    BridgeNotMonotone { x: f64, slope: f64 },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Topology {
    /// Two poles where a vanishes; x ranges over [0, base_length].
    Sphere,
    /// Periodic positive profile; x ranges over the circle of circumference base_length.
    Torus,
}

/// Profile value with its first two derivatives at a point.
#[derive(Clone, Copy, Debug)]
pub struct ProfileSample {
    pub a: f64,
    pub da: f64,
    pub d2a: f64,
}

pub type ProfileFn = dyn Fn(f64) -> ProfileSample + Send + Sync;

/// A surface of revolution, immutable after construction.
///
/// The profile callable is exact (closed form), not sampled, so the flow
/// can evaluate a and a′ at arbitrary points. Area and profile extrema are
/// computed once at build time.
#[derive(Clone)]
pub struct ProfileMetric {
    topology: Topology,
    base_length: f64,
    profile: Arc<ProfileFn>,
    label: String,
    area: f64,
    min_a: f64,
    max_a: f64,
}

impl std::fmt::Debug for ProfileMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProfileMetric")
            .field("topology", &self.topology)
            .field("base_length", &self.base_length)
            .field("label", &self.label)
            .field("area", &self.area)
            .finish()
    }
}

impl ProfileMetric {
    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn base_length(&self) -> f64 {
        self.base_length
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Surface area 2π ∫ a(x) dx.
    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn min_profile(&self) -> f64 {
        self.min_a
    }

    pub fn max_profile(&self) -> f64 {
        self.max_a
    }

    /// Wrap or clamp a base coordinate into the fundamental domain.
    pub fn canonical_x(&self, x: f64) -> f64 {
        match self.topology {
            Topology::Torus => x.rem_euclid(self.base_length),
            Topology::Sphere => x.clamp(0.0, self.base_length),
        }
    }

    /// Evaluate (a, a′, a″). Torus coordinates are wrapped; sphere
    /// coordinates are clamped to the closed base interval.
    pub fn sample(&self, x: f64) -> ProfileSample {
        (self.profile)(self.canonical_x(x))
    }

    /// Gauss curvature K = -a″/a. At sphere poles the 0/0 limit is taken
    /// by stepping a small distance into the interior.
    pub fn curvature(&self, x: f64) -> f64 {
        const POLE_STEP: f64 = 1e-6;
        let mut xc = self.canonical_x(x);
        if self.topology == Topology::Sphere {
            let s = self.sample(xc);
            if s.a.abs() < 1e-9 {
                xc = if xc < 0.5 * self.base_length {
                    POLE_STEP
                } else {
                    self.base_length - POLE_STEP
                };
            }
        }
        let s = self.sample(xc);
        -s.d2a / s.a
    }
}

/// Gauss curvature sample plus the residuals used by validation.
#[derive(Clone, Debug)]
pub struct ProfileDiagnostics {
    pub label: String,
    pub grid_size: usize,
    pub min_a: f64,
    pub max_a: f64,
    pub area: f64,
    pub curvature_min: f64,
    pub curvature_max: f64,
    /// Max |a″ - central difference of a′| / (1 + |a″|) over the grid.
    pub max_d2a_residual: f64,
    /// Max |a′ - central difference of a| / (1 + |a′|) over the grid.
    pub max_da_residual: f64,
    /// Torus: wrap residuals of (a, a′, a″); sphere: pole closure residuals.
    pub boundary_residual: f64,
}

/// Sample invariant residuals over a diagnostic grid. Reports, never fails.
pub fn profile_diagnostics(metric: &ProfileMetric, grid_size: usize) -> ProfileDiagnostics {
    let n = grid_size.max(16);
    let ll = metric.base_length;
    let interior_pad = match metric.topology {
        // Curvature and difference quotients need a margin from the poles.
        Topology::Sphere => ll * 1e-3,
        Topology::Torus => 0.0,
    };
    let lo = interior_pad;
    let hi = ll - interior_pad;
    let mut min_a = f64::INFINITY;
    let mut max_a = f64::NEG_INFINITY;
    let mut kmin = f64::INFINITY;
    let mut kmax = f64::NEG_INFINITY;
    let mut r2 = 0.0f64;
    let mut r1 = 0.0f64;
    let fd_h = (ll / n as f64).min(3e-5);
    for i in 0..=n {
        let x = lo + (hi - lo) * i as f64 / n as f64;
        let s = metric.sample(x);
        min_a = min_a.min(s.a);
        max_a = max_a.max(s.a);
        let k = metric.curvature(x);
        kmin = kmin.min(k);
        kmax = kmax.max(k);
        if x - fd_h >= 0.0 && x + fd_h <= ll || metric.topology == Topology::Torus {
            let sp = metric.sample(x + fd_h);
            let sm = metric.sample(x - fd_h);
            r1 = r1.max(((sp.a - sm.a) / (2.0 * fd_h) - s.da).abs() / (1.0 + s.da.abs()));
            r2 = r2.max(((sp.da - sm.da) / (2.0 * fd_h) - s.d2a).abs() / (1.0 + s.d2a.abs()));
        }
    }
    let boundary_residual = match metric.topology {
        Topology::Torus => {
            let s0 = (metric.profile)(0.0);
            let sl = (metric.profile)(ll);
            (s0.a - sl.a)
                .abs()
                .max((s0.da - sl.da).abs())
                .max((s0.d2a - sl.d2a).abs())
        }
        Topology::Sphere => {
            let s0 = (metric.profile)(0.0);
            let sl = (metric.profile)(ll);
            s0.a.abs()
                .max(sl.a.abs())
                .max((s0.da - 1.0).abs())
                .max((sl.da + 1.0).abs())
        }
    };
    ProfileDiagnostics {
        label: metric.label.clone(),
        grid_size: n,
        min_a,
        max_a,
        area: metric.area,
        curvature_min: kmin,
        curvature_max: kmax,
        max_d2a_residual: r2,
        max_da_residual: r1,
        boundary_residual,
    }
}

/// Reference metric constructors.
#[derive(Clone)]
pub enum MetricKind {
    /// a ≡ c on a circle of the given length.
    FlatTorus { circumference: f64, base_length: f64 },
    /// a = sin x on [0, π]: the unit round sphere.
    RoundSphere,
    /// Caller-supplied closed-form profile.
    CustomProfile {
        topology: Topology,
        base_length: f64,
        profile: Arc<ProfileFn>,
        label: String,
    },
}

pub fn build_profile_metric(kind: MetricKind) -> Result<ProfileMetric, GeometryError> {
    match kind {
        MetricKind::FlatTorus {
            circumference,
            base_length,
        } => flat_torus(circumference, base_length),
        MetricKind::RoundSphere => Ok(round_sphere()),
        MetricKind::CustomProfile {
            topology,
            base_length,
            profile,
            label,
        } => custom_profile(topology, base_length, profile, label),
    }
}

pub fn flat_torus(circumference: f64, base_length: f64) -> Result<ProfileMetric, GeometryError> {
    if !(circumference > 0.0 && circumference.is_finite()) {
        return Err(GeometryError::BadParameter {
            name: "circumference",
            value: circumference,
            reason: "must be positive and finite",
        });
    }
    if !(base_length > 0.0 && base_length.is_finite()) {
        return Err(GeometryError::BadParameter {
            name: "base_length",
            value: base_length,
            reason: "must be positive and finite",
        });
    }
    let c = circumference;
    Ok(ProfileMetric {
        topology: Topology::Torus,
        base_length,
        profile: Arc::new(move |_x| ProfileSample {
            a: c,
            da: 0.0,
            d2a: 0.0,
        }),
        label: format!("flat-torus(c={c},L={base_length})"),
        area: 2.0 * PI * c * base_length,
        min_a: c,
        max_a: c,
    })
}

pub fn round_sphere() -> ProfileMetric {
    ProfileMetric {
        topology: Topology::Sphere,
        base_length: PI,
        profile: Arc::new(|x| ProfileSample {
            a: x.sin(),
            da: x.cos(),
            d2a: -x.sin(),
        }),
        label: "round-sphere".to_string(),
        area: 4.0 * PI,
        min_a: 0.0,
        max_a: 1.0,
    }
}

/// Validate and wrap a caller-supplied profile.
pub fn custom_profile(
    topology: Topology,
    base_length: f64,
    profile: Arc<ProfileFn>,
    label: String,
) -> Result<ProfileMetric, GeometryError> {
    if !(base_length > 0.0 && base_length.is_finite()) {
        return Err(GeometryError::BadParameter {
            name: "base_length",
            value: base_length,
            reason: "must be positive and finite",
        });
    }
    validate_profile(topology, base_length, profile.as_ref())?;
    let (area, min_a, max_a) = measure_profile(topology, base_length, profile.as_ref());
    Ok(ProfileMetric {
        topology,
        base_length,
        profile,
        label,
        area,
        min_a,
        max_a,
    })
}

/// Torus profile c·(1 + Σ amplitude_m · cos(2πm x/L + phase_m)).
///
/// Harmonic frequencies are integer multiples of the base frequency, so the
/// profile is exactly periodic for any base length.
pub fn trig_series_torus(
    mean_radius: f64,
    base_length: f64,
    harmonics: &[(u32, f64, f64)],
    label: String,
) -> Result<ProfileMetric, GeometryError> {
    if !(mean_radius > 0.0 && mean_radius.is_finite()) {
        return Err(GeometryError::BadParameter {
            name: "mean_radius",
            value: mean_radius,
            reason: "must be positive and finite",
        });
    }
    let terms: Vec<(f64, f64, f64)> = harmonics
        .iter()
        .map(|&(m, amp, phase)| (2.0 * PI * m as f64 / base_length, amp * mean_radius, phase))
        .collect();
    let profile = move |x: f64| {
        let mut a = mean_radius;
        let mut da = 0.0;
        let mut d2a = 0.0;
        for &(w, amp, phase) in &terms {
            let arg = w * x + phase;
            a += amp * arg.cos();
            da -= amp * w * arg.sin();
            d2a -= amp * w * w * arg.cos();
        }
        ProfileSample { a, da, d2a }
    };
    custom_profile(Topology::Torus, base_length, Arc::new(profile), label)
}

/// Band profile used on |x| ≤ ε of the bridged torus.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BandProfile {
    /// a = cos x: the band is isometric to an equatorial band of the unit
    /// sphere (arclength coordinates), so trapped geodesics are great
    /// circle arcs. Default.
    RoundCos,
    /// a = √(1 - x²): the unit circle traced by height instead of
    /// arclength; curvature 1/(1 - x²)² grows toward the band edge.
    SqrtChord,
}

/// Parameters of the bridged band torus.
///
/// Base circle layout (signed coordinate s, band centered at s = 0):
///   band [-ε, ε], bridges ±[ε, ε + bridge_width], flat part of length
///   flat_length filling the rest. Total base length 2ε + 2w + flat_length.
#[derive(Clone, Copy, Debug)]
pub struct BridgeSpec {
    pub band_half_width: f64,
    pub bridge_width: f64,
    pub flat_length: f64,
    pub band_profile: BandProfile,
}

impl Default for BridgeSpec {
    fn default() -> Self {
        BridgeSpec {
            band_half_width: 0.25,
            bridge_width: 0.25,
            flat_length: 2.0 * PI + 1.0,
            band_profile: BandProfile::RoundCos,
        }
    }
}

impl BridgeSpec {
    pub fn base_length(&self) -> f64 {
        2.0 * self.band_half_width + 2.0 * self.bridge_width + self.flat_length
    }

    fn band_edge_value(&self) -> f64 {
        band_eval(self.band_profile, self.band_half_width).a
    }

    /// Constant profile value on the flat part: half the band edge value.
    pub fn flat_value(&self) -> f64 {
        0.5 * self.band_edge_value()
    }
}

fn band_eval(kind: BandProfile, s: f64) -> ProfileSample {
    match kind {
        BandProfile::RoundCos => ProfileSample {
            a: s.cos(),
            da: -s.sin(),
            d2a: -s.cos(),
        },
        BandProfile::SqrtChord => {
            let q = 1.0 - s * s;
            let r = q.sqrt();
            ProfileSample {
                a: r,
                da: -s / r,
                d2a: -1.0 / (q * r),
            }
        }
    }
}

/// exp(-1/t) with two derivatives; identically 0 for t ≤ 0.
fn cutoff_exp(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let h = (-1.0 / t).exp();
    let t2 = t * t;
    (h, h / t2, h * (1.0 - 2.0 * t) / t2.powi(2))
}

/// C^∞ step: 0 for t ≤ 0, 1 for t ≥ 1, strictly increasing between.
/// Returns (S, S′, S″).
pub(crate) fn smooth_step(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let (g, dg, d2g) = cutoff_exp(t);
    let (gb, dgb_raw, d2gb) = cutoff_exp(1.0 - t);
    let dgb = -dgb_raw; // chain rule for h(1-t)
    let w = g + gb;
    let dw = dg + dgb;
    let u = dg * gb - g * dgb;
    let s = g / w;
    let ds = u / (w * w);
    let d2s = (d2g * gb - g * d2gb) / (w * w) - 2.0 * u * dw / (w * w * w);
    (s, ds, d2s)
}

/// Build the bridged band torus.
///
/// On the bridge zone t = (|s| - ε)/w ∈ [0, 1] the profile is
///   a = B(s)·χ₁(t) + A_flat·χ₂(t) + f(t)·(1 - χ₁ - χ₂)
/// with χ₁ = 1 - S(2t) (supported in the first half), χ₂ = S(2t - 1)
/// (second half), so χ₁ + χ₂ ≤ 1, B the band formula continued past ε, and
/// f the smooth-step interpolant from the band edge value down to A_flat.
/// All three pieces are non-increasing there, which keeps the glued profile
/// monotone; monotonicity is still verified numerically after construction.
pub fn build_bridge_metric(spec: BridgeSpec) -> Result<ProfileMetric, GeometryError> {
    let eps = spec.band_half_width;
    let w = spec.bridge_width;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(GeometryError::BadParameter {
            name: "band_half_width",
            value: eps,
            reason: "must lie in (0, 1/2)",
        });
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(GeometryError::BadParameter {
            name: "bridge_width",
            value: w,
            reason: "must be positive and finite",
        });
    }
    if !(spec.flat_length >= 2.0 * PI) {
        return Err(GeometryError::BadParameter {
            name: "flat_length",
            value: spec.flat_length,
            reason: "must be at least 2π so band loops are the only short returns",
        });
    }
    // The band formula is evaluated on [0, ε + w]; it must stay positive
    // there and above the flat value so the bridge can decrease onto it.
    let band_limit = match spec.band_profile {
        BandProfile::RoundCos => 0.5 * PI,
        BandProfile::SqrtChord => 1.0,
    };
    if eps + w >= band_limit {
        return Err(GeometryError::BadParameter {
            name: "bridge_width",
            value: w,
            reason: "band formula leaves its domain before the bridge ends",
        });
    }
    let a_edge = spec.band_edge_value();
    let a_flat = spec.flat_value();
    if band_eval(spec.band_profile, eps + w).a <= a_flat {
        return Err(GeometryError::BadParameter {
            name: "bridge_width",
            value: w,
            reason: "band formula falls below the flat value inside the bridge zone",
        });
    }

    let base_length = spec.base_length();
    let kind = spec.band_profile;
    let profile = move |x: f64| -> ProfileSample {
        // Signed coordinate with the band center at 0.
        let mut s = x.rem_euclid(base_length);
        if s > 0.5 * base_length {
            s -= base_length;
        }
        let u = s.abs();
        if u <= eps {
            let b = band_eval(kind, s);
            return b; // band formulas are even with odd derivative
        }
        let t = (u - eps) / w;
        if t >= 1.0 {
            return ProfileSample {
                a: a_flat,
                da: 0.0,
                d2a: 0.0,
            };
        }
        let b = band_eval(kind, u);
        let (s1, ds1, d2s1) = smooth_step(2.0 * t);
        let (chi1, dchi1, d2chi1) = (1.0 - s1, -2.0 * ds1, -4.0 * d2s1);
        let (s2, ds2, d2s2) = smooth_step(2.0 * t - 1.0);
        let (chi2, dchi2, d2chi2) = (s2, 2.0 * ds2, 4.0 * d2s2);
        let (sf, dsf, d2sf) = smooth_step(t);
        let f = a_edge + (a_flat - a_edge) * sf;
        let df = (a_flat - a_edge) * dsf;
        let d2f = (a_flat - a_edge) * d2sf;
        let chi3 = 1.0 - chi1 - chi2;
        let dchi3 = -dchi1 - dchi2;
        let d2chi3 = -d2chi1 - d2chi2;
        // Band derivatives are per unit length; cutoff derivatives per unit
        // t. Work in t, then rescale.
        let bt = b.da * w;
        let btt = b.d2a * w * w;
        let a = b.a * chi1 + a_flat * chi2 + f * chi3;
        let at = bt * chi1 + b.a * dchi1 + a_flat * dchi2 + df * chi3 + f * dchi3;
        let att = btt * chi1 + 2.0 * bt * dchi1 + b.a * d2chi1 + a_flat * d2chi2 + d2f * chi3
            + 2.0 * df * dchi3
            + f * d2chi3;
        let sgn = if s >= 0.0 { 1.0 } else { -1.0 };
        ProfileSample {
            a,
            da: sgn * at / w,
            d2a: att / (w * w),
        }
    };

    let label = format!(
        "bridge-torus(band={},eps={eps},bridge={w},flat={})",
        match kind {
            BandProfile::RoundCos => "cos",
            BandProfile::SqrtChord => "sqrt",
        },
        spec.flat_length
    );
    let metric = custom_profile(Topology::Torus, base_length, Arc::new(profile), label)?;

    // Monotone bridge check: a′ ≤ 0 on [ε, ε + w] (reflection symmetry
    // covers the negative side).
    for i in 0..=512 {
        let x = eps + w * i as f64 / 512.0;
        let s = metric.sample(x);
        if s.da > 1e-12 {
            return Err(GeometryError::BridgeNotMonotone { x, slope: s.da });
        }
    }
    Ok(metric)
}

/// Area by composite Simpson plus sampled extrema (parabolic refinement at
/// the discrete argmax/argmin).
fn measure_profile(topology: Topology, base_length: f64, profile: &ProfileFn) -> (f64, f64, f64) {
    let n = 1 << 15; // Simpson intervals; profile evaluation is cheap
    let h = base_length / n as f64;
    let mut sum = 0.0;
    let mut min_a = f64::INFINITY;
    let mut max_a = f64::NEG_INFINITY;
    let mut samples = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let a = profile(i as f64 * h).a;
        samples.push(a);
        min_a = min_a.min(a);
        max_a = max_a.max(a);
        let wgt = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += wgt * a;
    }
    let area = 2.0 * PI * sum * h / 3.0;
    // One parabolic refinement step sharpens the extrema beyond the grid.
    let refine = |idx: usize, samples: &[f64]| -> f64 {
        if idx == 0 || idx + 1 >= samples.len() {
            return samples[idx];
        }
        let (ym, y0, yp) = (samples[idx - 1], samples[idx], samples[idx + 1]);
        let denom = ym - 2.0 * y0 + yp;
        if denom.abs() < 1e-300 {
            return y0;
        }
        let delta = 0.5 * (ym - yp) / denom;
        y0 - 0.25 * (ym - yp) * delta
    };
    let imax = samples
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let imin = samples
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    max_a = max_a.max(refine(imax, &samples));
    if topology == Topology::Torus {
        min_a = min_a.min(refine(imin, &samples));
    } else {
        min_a = 0.0;
    }
    (area, min_a, max_a)
}

fn validate_profile(
    topology: Topology,
    base_length: f64,
    profile: &ProfileFn,
) -> Result<(), GeometryError> {
    let n = VALIDATION_GRID;
    match topology {
        Topology::Torus => {
            let s0 = profile(0.0);
            let sl = profile(base_length);
            let checks = [
                ("a", (s0.a - sl.a).abs()),
                ("a'", (s0.da - sl.da).abs()),
                ("a''", (s0.d2a - sl.d2a).abs()),
            ];
            for (what, residual) in checks {
                if residual > WRAP_TOL {
                    return Err(GeometryError::NotPeriodic {
                        what,
                        residual,
                        tol: WRAP_TOL,
                    });
                }
            }
            for i in 0..n {
                let x = base_length * i as f64 / n as f64;
                let s = profile(x);
                if !(s.a > 0.0) {
                    return Err(GeometryError::NonPositive { x, a: s.a });
                }
            }
        }
        Topology::Sphere => {
            let s0 = profile(0.0);
            let sl = profile(base_length);
            if s0.a.abs() > POLE_CLOSURE_TOL {
                return Err(GeometryError::PoleClosure {
                    what: "a",
                    x: 0.0,
                    value: s0.a,
                    expected: 0.0,
                });
            }
            if sl.a.abs() > POLE_CLOSURE_TOL {
                return Err(GeometryError::PoleClosure {
                    what: "a",
                    x: base_length,
                    value: sl.a,
                    expected: 0.0,
                });
            }
            if (s0.da - 1.0).abs() > POLE_CLOSURE_TOL {
                return Err(GeometryError::PoleClosure {
                    what: "a'",
                    x: 0.0,
                    value: s0.da,
                    expected: 1.0,
                });
            }
            if (sl.da + 1.0).abs() > POLE_CLOSURE_TOL {
                return Err(GeometryError::PoleClosure {
                    what: "a'",
                    x: base_length,
                    value: sl.da,
                    expected: -1.0,
                });
            }
            for i in 1..n {
                let x = base_length * i as f64 / n as f64;
                let s = profile(x);
                if !(s.a > 0.0) {
                    return Err(GeometryError::NonPositive { x, a: s.a });
                }
            }
        }
    }
    // Derivative consistency: a′ and a″ against central differences.
    let fd_h = 1e-5 * base_length.max(1.0);
    let lo = fd_h;
    let hi = base_length - fd_h;
    let m = 257;
    for i in 0..m {
        let x = lo + (hi - lo) * i as f64 / (m - 1) as f64;
        let s = profile(x);
        let sp = profile(x + fd_h);
        let sm = profile(x - fd_h);
        let r1 = ((sp.a - sm.a) / (2.0 * fd_h) - s.da).abs();
        let r2 = ((sp.da - sm.da) / (2.0 * fd_h) - s.d2a).abs();
        let tol1 = 1e-4 * (1.0 + s.da.abs());
        let tol2 = 1e-3 * (1.0 + s.d2a.abs());
        if r1 > tol1 {
            return Err(GeometryError::DerivativeMismatch {
                what: "a'",
                x,
                residual: r1,
            });
        }
        if r2 > tol2 {
            return Err(GeometryError::DerivativeMismatch {
                what: "a''",
                x,
                residual: r2,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bridge_default() -> ProfileMetric {
        build_bridge_metric(BridgeSpec::default()).unwrap()
    }

    #[test]
    fn flat_torus_profile_is_constant() {
        let m = flat_torus(1.0, 2.0 * PI).unwrap();
        for i in 0..64 {
            let x = i as f64 * 0.1 - 1.0;
            let s = m.sample(x);
            assert_eq!(s.a, 1.0);
            assert_eq!(s.da, 0.0);
            assert_eq!(s.d2a, 0.0);
            assert_eq!(m.curvature(x), 0.0);
        }
        assert!((m.area() - 4.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn round_sphere_profile() {
        let m = round_sphere();
        assert_eq!(m.topology(), Topology::Sphere);
        assert!((m.sample(PI / 2.0).a - 1.0).abs() < 1e-15);
        for i in 1..64 {
            let x = PI * i as f64 / 64.0;
            assert!(
                (m.curvature(x) - 1.0).abs() < 1e-9,
                "curvature at {x}: {}",
                m.curvature(x)
            );
        }
        // Curvature limit at the poles.
        assert!((m.curvature(0.0) - 1.0).abs() < 1e-6);
        assert!((m.curvature(PI) - 1.0).abs() < 1e-6);
        assert!((m.area() - 4.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn custom_two_plus_cos_is_valid_torus() {
        let m = custom_profile(
            Topology::Torus,
            2.0 * PI,
            Arc::new(|x: f64| ProfileSample {
                a: 2.0 + x.cos(),
                da: -x.sin(),
                d2a: -x.cos(),
            }),
            "two-plus-cos".into(),
        )
        .unwrap();
        assert!((m.sample(0.0).a - 3.0).abs() < 1e-15);
        assert!((m.min_profile() - 1.0).abs() < 1e-9);
        assert!((m.max_profile() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(flat_torus(-1.0, 2.0 * PI).is_err());
        assert!(flat_torus(1.0, 0.0).is_err());
        let spec = BridgeSpec {
            flat_length: 1.0,
            ..BridgeSpec::default()
        };
        assert!(matches!(
            build_bridge_metric(spec),
            Err(GeometryError::BadParameter {
                name: "flat_length",
                ..
            })
        ));
        let spec = BridgeSpec {
            band_half_width: 0.75,
            ..BridgeSpec::default()
        };
        assert!(build_bridge_metric(spec).is_err());
        // Sphere-type profile violating pole closure.
        let bad = custom_profile(
            Topology::Sphere,
            PI,
            Arc::new(|x: f64| ProfileSample {
                a: (x.sin() + 0.1).max(0.0),
                da: x.cos(),
                d2a: -x.sin(),
            }),
            "bad-closure".into(),
        );
        assert!(bad.is_err());
        // Non-periodic profile offered as a torus.
        let bad = custom_profile(
            Topology::Torus,
            2.0 * PI,
            Arc::new(|x: f64| ProfileSample {
                a: 2.0 + 0.1 * x,
                da: 0.1,
                d2a: 0.0,
            }),
            "drift".into(),
        );
        assert!(matches!(bad, Err(GeometryError::NotPeriodic { .. })));
    }

    #[test]
    fn bridge_round_cos_frozen_values() {
        let m = bridge_default();
        assert!((m.sample(0.0).a - 1.0).abs() < 1e-15);
        let flat_expected = 0.5 * 0.25f64.cos(); // 0.48446...
        let spec = BridgeSpec::default();
        let x_flat = spec.band_half_width + spec.bridge_width + 0.5 * spec.flat_length;
        assert!((m.sample(x_flat).a - flat_expected).abs() < 1e-15);
        assert!((m.sample(x_flat).da).abs() < 1e-300);
        // Band region is exactly cos x.
        assert!((m.sample(0.2).a - 0.2f64.cos()).abs() < 1e-15);
        assert!((m.curvature(0.2) - 1.0).abs() < 1e-12);
        // Flat part has zero curvature.
        assert_eq!(m.curvature(x_flat), 0.0);
    }

    #[test]
    fn bridge_paper_sqrt_frozen_values() {
        let spec = BridgeSpec {
            band_profile: BandProfile::SqrtChord,
            ..BridgeSpec::default()
        };
        let m = build_bridge_metric(spec).unwrap();
        let edge = (1.0f64 - 0.0625).sqrt(); // 0.96824...
        assert!((m.sample(0.25).a - edge).abs() < 1e-12);
        let x_flat = spec.band_half_width + spec.bridge_width + 0.5 * spec.flat_length;
        assert!((m.sample(x_flat).a - 0.5 * edge).abs() < 1e-15);
        // Intrinsic curvature of the sqrt band is (1 - x²)^{-2}, not 1.
        let x = 0.2f64;
        let expected = 1.0 / (1.0 - x * x).powi(2);
        assert!((m.curvature(x) - expected).abs() < 1e-9);
    }

    #[test]
    fn bridge_profile_symmetric() {
        let m = bridge_default();
        let spec = BridgeSpec::default();
        let reach = spec.band_half_width + spec.bridge_width;
        for i in 0..=2048 {
            let x = reach * i as f64 / 2048.0;
            let p = m.sample(x);
            let q = m.sample(-x);
            assert!((p.a - q.a).abs() < 1e-12, "asymmetry at {x}");
            assert!((p.da + q.da).abs() < 1e-12);
            assert!((p.d2a - q.d2a).abs() < 1e-12);
        }
    }

    #[test]
    fn bridge_monotone_and_smooth() {
        let m = bridge_default();
        let spec = BridgeSpec::default();
        let eps = spec.band_half_width;
        let w = spec.bridge_width;
        let mut prev = f64::INFINITY;
        for i in 0..=4096 {
            let x = eps + w * i as f64 / 4096.0;
            let s = m.sample(x);
            assert!(s.da <= 1e-12, "a' = {} at {x}", s.da);
            assert!(s.a <= prev + 1e-15);
            prev = s.a;
        }
        // C² across the junctions: central differences straddling them.
        let d = profile_diagnostics(&m, 4096);
        assert!(d.max_da_residual < 1e-4, "da residual {}", d.max_da_residual);
        assert!(d.max_d2a_residual < 1e-3, "d2a residual {}", d.max_d2a_residual);
        assert!(d.boundary_residual < 1e-12);
    }

    #[test]
    fn bridge_curvature_regions() {
        let m = bridge_default();
        // Round band: curvature 1 in the interior of the band.
        for i in 0..32 {
            let x = -0.24 + 0.48 * i as f64 / 31.0;
            assert!((m.curvature(x) - 1.0).abs() < 1e-10);
        }
        // Flat part: exactly 0.
        let spec = BridgeSpec::default();
        let x0 = spec.band_half_width + spec.bridge_width;
        for i in 1..32 {
            let x = x0 + spec.flat_length * i as f64 / 33.0;
            assert_eq!(m.curvature(x), 0.0);
        }
    }

    #[test]
    fn diagnostics_on_reference_metrics() {
        let d = profile_diagnostics(&flat_torus(1.0, 2.0 * PI).unwrap(), 512);
        assert_eq!(d.curvature_min, 0.0);
        assert_eq!(d.curvature_max, 0.0);
        let d = profile_diagnostics(&round_sphere(), 512);
        assert!(d.curvature_min > 1.0 - 1e-6 && d.curvature_max < 1.0 + 1e-6);
        assert!(d.boundary_residual < 1e-12);
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let a = bridge_default();
        let b = bridge_default();
        for i in 0..=4096 {
            let x = a.base_length() * i as f64 / 4096.0;
            let (p, q) = (a.sample(x), b.sample(x));
            assert_eq!(p.a.to_bits(), q.a.to_bits());
            assert_eq!(p.da.to_bits(), q.da.to_bits());
            assert_eq!(p.d2a.to_bits(), q.d2a.to_bits());
        }
        assert_eq!(a.area().to_bits(), b.area().to_bits());
    }

    #[test]
    fn smooth_step_shape() {
        assert_eq!(smooth_step(-1.0).0, 0.0);
        assert_eq!(smooth_step(2.0).0, 1.0);
        let (s, ds, _) = smooth_step(0.5);
        assert!((s - 0.5).abs() < 1e-15); // symmetry point
        assert!(ds > 0.0);
        let mut prev = 0.0;
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let (v, dv, _) = smooth_step(t);
            assert!(v >= prev - 1e-15);
            assert!(dv >= 0.0);
            prev = v;
        }
        // Derivative consistency by central differences.
        for &t in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let h = 1e-6;
            let (_, ds, d2s) = smooth_step(t);
            let fd1 = (smooth_step(t + h).0 - smooth_step(t - h).0) / (2.0 * h);
            let fd2 = (smooth_step(t + h).1 - smooth_step(t - h).1) / (2.0 * h);
            assert!((ds - fd1).abs() < 1e-8);
            assert!((d2s - fd2).abs() < 1e-6);
        }
    }

    #[test]
    fn trig_series_matches_perturbation_form() {
        let m = trig_series_torus(
            2.0,
            2.0 * PI,
            &[(1, 0.05, 0.3), (3, -0.02, 1.1)],
            "trig".into(),
        )
        .unwrap();
        let x = 0.7;
        let expected = 2.0 * (1.0 + 0.05 * (x + 0.3f64).cos() - 0.02 * (3.0 * x + 1.1f64).cos());
        assert!((m.sample(x).a - expected).abs() < 1e-12);
    }
}

//! Geodesic flow, loop detection, and Jacobi fields.
//!
//! The flow is the Hamiltonian flow of p(x, ξ) = √(ξ_x² + ξ_θ²/a(x)²) on
//! the unit cosphere bundle, integrated with an adaptive embedded
//! Runge–Kutta pair. Two quantities are conserved exactly by the equations
//! and serve as a-posteriori error monitors: p itself and the Clairaut
//! integral I = ξ_θ = a(x)·sin ψ. Geodesics on sphere-type metrics that
//! hit a pole are exactly the meridians (I = 0); those are propagated by
//! the analytic reflection rule instead of the chart ODE.
//!
//! Loop detection watches the squared chart distance to the base point
//! along the trajectory, brackets local minima by a derivative sign
//! change, refines by bisection, and accepts minima below loop_tol². A
//! direction scan clusters looping directions into intervals, refines the
//! interval boundaries, and reports the total direction measure together
//! with the return-time spectrum.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{ProfileMetric, Topology};

/// Clairaut values below this are treated as exact meridians.
const MERIDIAN_TOL: f64 = 1e-12;
/// Chart distance below which the loop watcher caps the step size.
const WATCH_RADIUS: f64 = 0.2;
/// Tolerance on the direction angle for declaring a loop smoothly closed.
const SMOOTH_ANGLE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("step size underflow at t = {t:.6} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget exhausted at t = {t:.6} after {steps} steps")]
    MaxSteps { t: f64, steps: u64 },
    #[error("invariant drift {drift:.3e} exceeds budget at t = {t:.6}")]
    InvariantDrift { t: f64, drift: f64 },
}

/// A point of the cotangent bundle in chart coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhasePoint {
    pub x: f64,
    pub theta: f64,
    pub xi_x: f64,
    pub xi_theta: f64,
}

impl PhasePoint {
    /// Cosphere norm p(x, ξ); 1 on the unit bundle.
    pub fn cosphere_norm(&self, metric: &ProfileMetric) -> f64 {
        let a = metric.sample(self.x).a;
        (self.xi_x * self.xi_x + (self.xi_theta / a).powi(2)).sqrt()
    }

    /// Clairaut integral I = ξ_θ, conserved along geodesics.
    pub fn clairaut(&self) -> f64 {
        self.xi_theta
    }

    /// Direction angle ψ ∈ [0, 2π) relative to the meridian direction.
    pub fn direction_angle(&self, metric: &ProfileMetric) -> f64 {
        let a = metric.sample(self.x).a;
        let psi = (self.xi_theta / a).atan2(self.xi_x);
        psi.rem_euclid(2.0 * PI)
    }

    /// Time reversal: the same point with the covector negated.
    pub fn reversed(&self) -> PhasePoint {
        PhasePoint {
            x: self.x,
            theta: self.theta,
            xi_x: -self.xi_x,
            xi_theta: -self.xi_theta,
        }
    }
}

/// Unit covector at (x₀, θ₀) with direction angle ψ from the meridian:
/// ξ_x = cos ψ, ξ_θ = a(x₀)·sin ψ.
pub fn unit_covector(metric: &ProfileMetric, x0: f64, theta0: f64, psi: f64) -> PhasePoint {
    let a = metric.sample(x0).a;
    PhasePoint {
        x: metric.canonical_x(x0),
        theta: theta0,
        xi_x: psi.cos(),
        xi_theta: a * psi.sin(),
    }
}

pub fn clairaut_integral(point: &PhasePoint) -> f64 {
    point.clairaut()
}

#[derive(Clone, Copy, Debug)]
pub struct FlowParams {
    /// Per-step local error tolerance (both absolute and relative scale).
    pub tolerance: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: u64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            tolerance: 1e-10,
            h_max: 0.1,
            h_min: 1e-13,
            max_steps: 20_000_000,
        }
    }
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One embedded Dormand–Prince step. Returns (y_next, error_norm) where
/// error_norm ≤ 1 means the step meets the tolerance.
fn dp_step<const N: usize>(
    rhs: &mut impl FnMut(f64, &[f64; N]) -> [f64; N],
    t: f64,
    y: &[f64; N],
    h: f64,
    tol: f64,
) -> ([f64; N], f64) {
    let mut k = [[0.0f64; N]; 7];
    k[0] = rhs(t, y);
    for s in 1..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = DP_A[s][j];
            if a != 0.0 {
                for i in 0..N {
                    ys[i] += h * a * kj[i];
                }
            }
        }
        k[s] = rhs(t + DP_C[s] * h, &ys);
    }
    let mut y5 = *y;
    let mut err = [0.0f64; N];
    for (s, ks) in k.iter().enumerate() {
        for i in 0..N {
            y5[i] += h * DP_B5[s] * ks[i];
            err[i] += h * (DP_B5[s] - DP_B4[s]) * ks[i];
        }
    }
    let mut norm2 = 0.0;
    for i in 0..N {
        let scale = tol * (1.0 + y[i].abs().max(y5[i].abs()));
        let e = err[i] / scale;
        norm2 += e * e;
    }
    (y5, (norm2 / N as f64).sqrt())
}

/// Adaptive stepper for an N-dimensional first-order system.
struct Stepper<'a, const N: usize, F: FnMut(f64, &[f64; N]) -> [f64; N]> {
    rhs: F,
    t: f64,
    y: [f64; N],
    h: f64,
    params: &'a FlowParams,
    /// Externally imposed cap on the next step (loop watcher).
    h_cap: f64,
    steps: u64,
    /// Extra accept predicate on (state before, state after); rejecting
    /// shrinks the step like a large error.
    accept: Option<Box<dyn Fn(&[f64; N], &[f64; N]) -> bool + 'a>>,
}

impl<'a, const N: usize, F: FnMut(f64, &[f64; N]) -> [f64; N]> Stepper<'a, N, F> {
    fn new(rhs: F, t0: f64, y0: [f64; N], params: &'a FlowParams) -> Self {
        Stepper {
            rhs,
            t: t0,
            y: y0,
            h: params.h_max.min(1e-3),
            params,
            h_cap: f64::INFINITY,
            steps: 0,
            accept: None,
        }
    }

    /// Advance by one accepted step, not beyond t_end. Returns false once
    /// t_end is reached.
    fn step_toward(&mut self, t_end: f64) -> Result<bool, FlowError> {
        if self.t >= t_end {
            return Ok(false);
        }
        loop {
            self.steps += 1;
            if self.steps > self.params.max_steps {
                return Err(FlowError::MaxSteps {
                    t: self.t,
                    steps: self.steps,
                });
            }
            let h = self.h.min(self.h_cap).min(t_end - self.t);
            let (y_new, err) = dp_step(&mut self.rhs, self.t, &self.y, h, self.params.tolerance);
            let ok = err <= 1.0 && self.accept.as_ref().map_or(true, |f| f(&self.y, &y_new));
            if ok {
                self.t += h;
                self.y = y_new;
                let grow = if err > 0.0 {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                } else {
                    5.0
                };
                self.h = (h * grow).min(self.params.h_max);
                return Ok(true);
            }
            let shrink = if err.is_finite() && err > 1.0 {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.5
            };
            self.h = h * shrink;
            if self.h < self.params.h_min {
                return Err(FlowError::StepUnderflow { t: self.t, h: self.h });
            }
        }
    }
}

fn geodesic_rhs(metric: &ProfileMetric) -> impl FnMut(f64, &[f64; 4]) -> [f64; 4] + Copy + '_ {
    move |_t, y| {
        let s = metric.sample(y[0]);
        let inv_a2 = 1.0 / (s.a * s.a);
        let p = (y[2] * y[2] + y[3] * y[3] * inv_a2).sqrt();
        [
            y[2] / p,
            y[3] * inv_a2 / p,
            y[3] * y[3] * s.da * inv_a2 / (s.a * p),
            0.0,
        ]
    }
}

/// Position of a meridian geodesic on a sphere-type metric after time t.
/// x zigzags at unit speed between the poles; each pole crossing flips the
/// x-direction and shifts θ by π.
fn meridian_point(metric: &ProfileMetric, start: &PhasePoint, t: f64) -> PhasePoint {
    let len = metric.base_length();
    let mag = start.xi_x.abs();
    // Unfold the zigzag onto the double cover of period 2·len.
    let u0 = if start.xi_x >= 0.0 {
        start.x
    } else {
        2.0 * len - start.x
    };
    let u = (u0 + t).rem_euclid(2.0 * len);
    let (x, dir) = if u <= len { (u, 1.0) } else { (2.0 * len - u, -1.0) };
    let crossings = ((u0 + t) / len).floor() - (u0 / len).floor();
    PhasePoint {
        x,
        theta: (start.theta + PI * crossings).rem_euclid(2.0 * PI),
        xi_x: dir * mag,
        xi_theta: start.xi_theta,
    }
}

/// Step acceptance for geodesic systems (state layout [x, θ, ξ_x, ξ_θ, ..]):
/// the point must stay inside the chart on sphere-type metrics, and the
/// cosphere norm may move by at most a whisker per step. The norm gate
/// catches thin high-derivative bursts (bridge cutoff seams) that the
/// embedded error estimate can miss when all stage points straddle them.
fn flow_guard<'m, const N: usize>(
    metric: &'m ProfileMetric,
    tolerance: f64,
) -> Option<Box<dyn Fn(&[f64; N], &[f64; N]) -> bool + 'm>> {
    let gate = (10.0 * tolerance).max(1e-12);
    let sphere = metric.topology() == Topology::Sphere;
    let len = metric.base_length();
    let p_of = move |y: &[f64; N]| {
        let a = metric.sample(y[0]).a;
        (y[2] * y[2] + (y[3] / a).powi(2)).sqrt()
    };
    Some(Box::new(move |old: &[f64; N], new: &[f64; N]| {
        if sphere && (new[0] <= 0.0 || new[0] >= len) {
            return false;
        }
        (p_of(new) - p_of(old)).abs() <= gate
    }))
}

fn phase_from(y: &[f64; 4]) -> PhasePoint {
    PhasePoint {
        x: y[0],
        theta: y[1],
        xi_x: y[2],
        xi_theta: y[3],
    }
}

/// Flow the geodesic for time t (t may be negative: time reversal).
pub fn flow_geodesic(
    metric: &ProfileMetric,
    start: &PhasePoint,
    t: f64,
    params: &FlowParams,
) -> Result<PhasePoint, FlowError> {
    if t == 0.0 {
        return Ok(*start);
    }
    if t < 0.0 {
        // Reverse the covector, flow forward, reverse back.
        let rev = flow_geodesic(metric, &start.reversed(), -t, params)?;
        return Ok(rev.reversed());
    }
    if metric.topology() == Topology::Sphere && start.xi_theta.abs() <= MERIDIAN_TOL {
        return Ok(meridian_point(metric, start, t));
    }
    let y0 = [start.x, start.theta, start.xi_x, start.xi_theta];
    let p0 = start.cosphere_norm(metric);
    let mut stepper = Stepper::new(geodesic_rhs(metric), 0.0, y0, params);
    stepper.accept = flow_guard(metric, params.tolerance);
    while stepper.step_toward(t)? {
        let drift = (phase_from(&stepper.y).cosphere_norm(metric) - p0).abs();
        if drift > 100.0 * params.tolerance.max(1e-12) {
            return Err(FlowError::InvariantDrift { t: stepper.t, drift });
        }
    }
    Ok(phase_from(&stepper.y))
}

/// Flow with a dense record of the accepted steps.
pub fn flow_trajectory(
    metric: &ProfileMetric,
    start: &PhasePoint,
    t: f64,
    params: &FlowParams,
) -> Result<Vec<(f64, PhasePoint)>, FlowError> {
    assert!(t >= 0.0, "dense trajectories run forward");
    let mut out = vec![(0.0, *start)];
    if metric.topology() == Topology::Sphere && start.xi_theta.abs() <= MERIDIAN_TOL {
        // Record pole crossings and the endpoint.
        let len = metric.base_length();
        let first = if start.xi_x >= 0.0 {
            len - start.x
        } else {
            start.x
        };
        let mut next = first;
        while next < t {
            out.push((next, meridian_point(metric, start, next)));
            next += len;
        }
        out.push((t, meridian_point(metric, start, t)));
        return Ok(out);
    }
    let y0 = [start.x, start.theta, start.xi_x, start.xi_theta];
    let mut stepper = Stepper::new(geodesic_rhs(metric), 0.0, y0, params);
    stepper.accept = flow_guard(metric, params.tolerance);
    while stepper.step_toward(t)? {
        out.push((stepper.t, phase_from(&stepper.y)));
    }
    Ok(out)
}

fn wrap_signed(v: f64, period: f64) -> f64 {
    let w = v.rem_euclid(period);
    if w > 0.5 * period {
        w - period
    } else {
        w
    }
}

/// A detected geodesic loop at a base point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LoopHit {
    pub time: f64,
    /// Angle between the outgoing and the returning direction, in [0, π].
    pub return_angle: f64,
    /// Chart distance to the base point at the detected minimum.
    pub miss_distance: f64,
    pub smooth_closed: bool,
}

struct LoopWatcher<'m> {
    metric: &'m ProfileMetric,
    x0: f64,
    theta0: f64,
    a0: f64,
    base_length: f64,
    torus: bool,
}

impl<'m> LoopWatcher<'m> {
    fn new(metric: &'m ProfileMetric, x0: f64, theta0: f64) -> Self {
        LoopWatcher {
            metric,
            x0,
            theta0,
            a0: metric.sample(x0).a,
            base_length: metric.base_length(),
            torus: metric.topology() == Topology::Torus,
        }
    }

    /// Squared chart distance to the base point and its time derivative.
    /// The wrap cut sits at distance ≥ min(L/2, a₀π) from the base, so a
    /// genuine near-return never straddles it.
    fn gauge(&self, y: &[f64; 4]) -> (f64, f64) {
        let dx = if self.torus {
            wrap_signed(y[0] - self.x0, self.base_length)
        } else {
            y[0] - self.x0
        };
        let dth = wrap_signed(y[1] - self.theta0, 2.0 * PI);
        let g = dx * dx + self.a0 * self.a0 * dth * dth;
        let s = self.metric.sample(y[0]);
        let inv_a2 = 1.0 / (s.a * s.a);
        let p = (y[2] * y[2] + y[3] * y[3] * inv_a2).sqrt();
        let gp = 2.0 * dx * y[2] / p + 2.0 * self.a0 * self.a0 * dth * y[3] * inv_a2 / p;
        (g, gp)
    }
}

/// First return time of the geodesic with direction ψ to within loop_tol of
/// the base point, or None if no return happens by t_max.
pub fn loop_length(
    metric: &ProfileMetric,
    base: (f64, f64),
    psi: f64,
    t_max: f64,
    loop_tol: f64,
    params: &FlowParams,
) -> Result<Option<LoopHit>, FlowError> {
    first_loop(metric, base, psi, t_max, loop_tol, 0.1, params)
}

pub(crate) fn first_loop(
    metric: &ProfileMetric,
    base: (f64, f64),
    psi: f64,
    t_max: f64,
    loop_tol: f64,
    min_return_time: f64,
    params: &FlowParams,
) -> Result<Option<LoopHit>, FlowError> {
    let (x0, theta0) = (metric.canonical_x(base.0), base.1);
    let start = unit_covector(metric, x0, theta0, psi);
    let watcher = LoopWatcher::new(metric, x0, theta0);

    if metric.topology() == Topology::Sphere && start.xi_theta.abs() <= MERIDIAN_TOL {
        return Ok(meridian_first_loop(metric, t_max));
    }

    let y0 = [start.x, start.theta, start.xi_x, start.xi_theta];
    let mut stepper = Stepper::new(geodesic_rhs(metric), 0.0, y0, params);
    let scan_h_max = params.h_max.min(0.05);
    stepper.h_cap = scan_h_max;
    stepper.accept = flow_guard(metric, params.tolerance);
    let (_, mut gp_prev) = watcher.gauge(&y0);
    let mut t_prev = 0.0;
    let mut y_prev = y0;
    while stepper.step_toward(t_max)? {
        let (g, gp) = watcher.gauge(&stepper.y);
        let t = stepper.t;
        if gp_prev < 0.0 && gp >= 0.0 {
            if let Some(hit) =
                refine_minimum(metric, &watcher, &y_prev, t_prev, t, psi, loop_tol, params)?
            {
                if hit.time >= min_return_time {
                    return Ok(Some(hit));
                }
            }
        }
        // Cap the next step while close to the base so no sub-tolerance dip
        // can fit between samples (the gauge is 1-Lipschitz in time).
        stepper.h_cap = if g < WATCH_RADIUS * WATCH_RADIUS {
            (g.sqrt() / 3.0).max(2.0 * loop_tol)
        } else {
            scan_h_max
        };
        gp_prev = gp;
        t_prev = t;
        y_prev = stepper.y;
    }
    Ok(None)
}

/// Bisect the bracketed minimum of the gauge and accept it as a loop when
/// the distance falls below loop_tol.
#[allow(clippy::too_many_arguments)]
fn refine_minimum(
    metric: &ProfileMetric,
    watcher: &LoopWatcher,
    y_left: &[f64; 4],
    t_left: f64,
    t_right: f64,
    psi: f64,
    loop_tol: f64,
    params: &FlowParams,
) -> Result<Option<LoopHit>, FlowError> {
    let start = phase_from(y_left);
    let mut lo = 0.0f64;
    let mut hi = t_right - t_left;
    let eval = |dt: f64| -> Result<([f64; 4], f64, f64), FlowError> {
        let p = flow_geodesic(metric, &start, dt, params)?;
        let y = [p.x, p.theta, p.xi_x, p.xi_theta];
        let (g, gp) = watcher.gauge(&y);
        Ok((y, g, gp))
    };
    for _ in 0..60 {
        if hi - lo < 1e-13 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (_, _, gp) = eval(mid)?;
        if gp < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dt = 0.5 * (lo + hi);
    let (y, g, _) = eval(dt)?;
    if g.sqrt() > loop_tol {
        return Ok(None);
    }
    let s = metric.sample(y[0]);
    let v_ret = [y[2], y[3] / s.a];
    let v0 = [psi.cos(), psi.sin()];
    let dot = (v_ret[0] * v0[0] + v_ret[1] * v0[1])
        / (v_ret[0] * v_ret[0] + v_ret[1] * v_ret[1]).sqrt();
    let angle = dot.clamp(-1.0, 1.0).acos();
    Ok(Some(LoopHit {
        time: t_left + dt,
        return_angle: angle,
        miss_distance: g.sqrt(),
        smooth_closed: angle <= SMOOTH_ANGLE_TOL,
    }))
}

/// Meridians on a sphere-type metric return to any base point after one
/// full closed meridian of length 2·base_length, exactly.
fn meridian_first_loop(metric: &ProfileMetric, t_max: f64) -> Option<LoopHit> {
    let period = 2.0 * metric.base_length();
    if period <= t_max {
        Some(LoopHit {
            time: period,
            return_angle: 0.0,
            miss_distance: 0.0,
            smooth_closed: true,
        })
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LoopsetParams {
    pub t_max: f64,
    pub n_directions: usize,
    pub loop_tol: f64,
    /// Return-time tolerance for clustering directions into components.
    pub cluster_return_tol: f64,
    /// Resolution floor for boundary refinement in ψ.
    pub psi_floor: f64,
    pub min_return_time: f64,
    pub flow: FlowParams,
}

impl Default for LoopsetParams {
    fn default() -> Self {
        LoopsetParams {
            t_max: 2.0 * PI + 0.1,
            n_directions: 4096,
            loop_tol: 1e-4,
            cluster_return_tol: 1e-3,
            psi_floor: 2.0 * PI / (1 << 20) as f64,
            min_return_time: 0.1,
            flow: FlowParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DirectionSample {
    pub psi: f64,
    pub clairaut: f64,
    pub hit: Option<LoopHit>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LoopComponent {
    /// Refined boundaries; start ≤ end after unwrapping (end may exceed 2π
    /// for components crossing ψ = 0).
    pub psi_start: f64,
    pub psi_end: f64,
    pub extent: f64,
    pub return_time_mean: f64,
    pub return_time_min: f64,
    pub return_time_max: f64,
    pub sample_count: usize,
    /// Isolated directions: no looping neighborhood survives refinement.
    /// They contribute zero to the measure estimate.
    pub isolated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LoopsetReport {
    pub base_x: f64,
    pub base_theta: f64,
    pub t_max: f64,
    pub n_directions: usize,
    pub loop_tol: f64,
    pub samples: Vec<DirectionSample>,
    pub components: Vec<LoopComponent>,
    pub measure_estimate: f64,
    /// Sorted distinct component return times.
    pub lsp: Vec<f64>,
    /// True when the base point sits at a pole and the report is the
    /// analytic answer (all meridians; no scan performed).
    pub pole_analytic: bool,
    /// Number of boundary refinements that stopped at the resolution floor.
    pub floor_hits: usize,
    /// Directions whose integration failed; they count as non-looping.
    pub flow_failures: usize,
}

/// Scan directions at a base point and estimate the loopset measure.
pub fn loopset_scan(
    metric: &ProfileMetric,
    base: (f64, f64),
    params: &LoopsetParams,
) -> Result<LoopsetReport, FlowError> {
    assert!(params.n_directions >= 64, "direction grid too coarse");
    let x0 = metric.canonical_x(base.0);
    if metric.topology() == Topology::Sphere && metric.sample(x0).a.abs() < 1e-9 {
        // Every direction is a meridian; the scan chart is degenerate. The
        // loopset is the full circle with return time one meridian length.
        let period = 2.0 * metric.base_length();
        let looped = period <= params.t_max;
        return Ok(LoopsetReport {
            base_x: x0,
            base_theta: base.1,
            t_max: params.t_max,
            n_directions: 0,
            loop_tol: params.loop_tol,
            samples: Vec::new(),
            components: if looped {
                vec![LoopComponent {
                    psi_start: 0.0,
                    psi_end: 2.0 * PI,
                    extent: 2.0 * PI,
                    return_time_mean: period,
                    return_time_min: period,
                    return_time_max: period,
                    sample_count: 0,
                    isolated: false,
                }]
            } else {
                Vec::new()
            },
            measure_estimate: if looped { 2.0 * PI } else { 0.0 },
            lsp: if looped { vec![period] } else { Vec::new() },
            pole_analytic: true,
            floor_hits: 0,
            flow_failures: 0,
        });
    }

    let n = params.n_directions;
    let a0 = metric.sample(x0).a;
    let results: Vec<(DirectionSample, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let psi = 2.0 * PI * i as f64 / n as f64;
            let clairaut = a0 * psi.sin();
            match first_loop(
                metric,
                (x0, base.1),
                psi,
                params.t_max,
                params.loop_tol,
                params.min_return_time,
                &params.flow,
            ) {
                Ok(hit) => (DirectionSample { psi, clairaut, hit }, true),
                Err(_) => (
                    DirectionSample {
                        psi,
                        clairaut,
                        hit: None,
                    },
                    false,
                ),
            }
        })
        .collect();
    let flow_failures = results.iter().filter(|(_, ok)| !ok).count();
    let samples: Vec<DirectionSample> = results.into_iter().map(|(s, _)| s).collect();

    let (components, floor_hits) = cluster_components(metric, (x0, base.1), &samples, params)?;
    let measure_estimate: f64 = components
        .iter()
        .filter(|c| !c.isolated)
        .map(|c| c.extent)
        .sum::<f64>()
        .min(2.0 * PI);
    let mut lsp: Vec<f64> = Vec::new();
    for c in &components {
        let t = c.return_time_mean;
        if !lsp
            .iter()
            .any(|&u| (u - t).abs() <= params.cluster_return_tol)
        {
            lsp.push(t);
        }
    }
    lsp.sort_by(f64::total_cmp);
    Ok(LoopsetReport {
        base_x: x0,
        base_theta: base.1,
        t_max: params.t_max,
        n_directions: n,
        loop_tol: params.loop_tol,
        samples,
        components,
        measure_estimate,
        lsp,
        pole_analytic: false,
        floor_hits,
        flow_failures,
    })
}

/// Group looping grid directions into circular runs, split runs at return
/// time jumps, then refine the run boundaries by bisection down to the
/// resolution floor.
fn cluster_components(
    metric: &ProfileMetric,
    base: (f64, f64),
    samples: &[DirectionSample],
    params: &LoopsetParams,
) -> Result<(Vec<LoopComponent>, usize), FlowError> {
    let n = samples.len();
    let looping: Vec<bool> = samples.iter().map(|s| s.hit.is_some()).collect();
    let n_loops = looping.iter().filter(|&&b| b).count();
    if n_loops == 0 {
        return Ok((Vec::new(), 0));
    }
    let step = 2.0 * PI / n as f64;

    let mut runs: Vec<Vec<usize>> = Vec::new();
    if n_loops == n {
        // Full circle of loopers: a single component, unless return-time
        // jumps split it. Unwrap the circle at the first jump if any.
        let mut split_at = None;
        for i in 0..n {
            let t0 = samples[i].hit.unwrap().time;
            let t1 = samples[(i + 1) % n].hit.unwrap().time;
            if (t1 - t0).abs() > params.cluster_return_tol {
                split_at = Some((i + 1) % n);
                break;
            }
        }
        match split_at {
            None => {
                let times: Vec<f64> = samples.iter().map(|s| s.hit.unwrap().time).collect();
                let mean = times.iter().sum::<f64>() / n as f64;
                let (tmin, tmax) = min_max(&times);
                return Ok((
                    vec![LoopComponent {
                        psi_start: 0.0,
                        psi_end: 2.0 * PI,
                        extent: 2.0 * PI,
                        return_time_mean: mean,
                        return_time_min: tmin,
                        return_time_max: tmax,
                        sample_count: n,
                        isolated: false,
                    }],
                    0,
                ));
            }
            Some(s0) => {
                runs.push((0..n).map(|k| (s0 + k) % n).collect());
            }
        }
    } else {
        let start = (0..n)
            .find(|&i| !looping[i] && looping[(i + 1) % n])
            .map(|i| (i + 1) % n)
            .unwrap();
        let mut i = start;
        let mut visited = 0;
        while visited < n {
            if looping[i] {
                let mut run = Vec::new();
                while looping[i] && visited < n {
                    run.push(i);
                    i = (i + 1) % n;
                    visited += 1;
                }
                runs.push(run);
            } else {
                i = (i + 1) % n;
                visited += 1;
            }
        }
    }

    // Split runs at return-time jumps between adjacent members.
    let mut pieces: Vec<Vec<usize>> = Vec::new();
    for run in runs {
        let mut cur: Vec<usize> = Vec::new();
        for &i in &run {
            if let Some(&prev) = cur.last() {
                let tp = samples[prev].hit.unwrap().time;
                let ti = samples[i].hit.unwrap().time;
                if (ti - tp).abs() > params.cluster_return_tol {
                    pieces.push(std::mem::take(&mut cur));
                }
            }
            cur.push(i);
        }
        if !cur.is_empty() {
            pieces.push(cur);
        }
    }

    let mut floor_hits = 0usize;
    let mut components = Vec::new();
    for piece in &pieces {
        let times: Vec<f64> = piece.iter().map(|&i| samples[i].hit.unwrap().time).collect();
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let (tmin, tmax) = min_max(&times);
        let first = *piece.first().unwrap();
        let last = *piece.last().unwrap();
        // Refine outward from the outermost looping samples.
        let left = refine_boundary(
            metric,
            base,
            samples[first].psi,
            -step,
            samples[first].hit.unwrap().time,
            params,
            &mut floor_hits,
        )?;
        let right = refine_boundary(
            metric,
            base,
            samples[last].psi,
            step,
            samples[last].hit.unwrap().time,
            params,
            &mut floor_hits,
        )?;
        let mut end = right;
        if end < left {
            end += 2.0 * PI;
        }
        let extent = (end - left).max(0.0);
        let isolated = piece.len() == 1 && extent <= 3.0 * params.psi_floor;
        components.push(LoopComponent {
            psi_start: left,
            psi_end: end,
            extent,
            return_time_mean: mean,
            return_time_min: tmin,
            return_time_max: tmax,
            sample_count: piece.len(),
            isolated,
        });
    }
    Ok((components, floor_hits))
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
            (lo.min(t), hi.max(t))
        })
}

/// Bisect between a looping direction and its neighbor offset by `step`;
/// a direction belongs to the component when it loops with a return time
/// within the cluster tolerance of the edge reference time.
fn refine_boundary(
    metric: &ProfileMetric,
    base: (f64, f64),
    psi_in: f64,
    step: f64,
    t_ref: f64,
    params: &LoopsetParams,
    floor_hits: &mut usize,
) -> Result<f64, FlowError> {
    let mut inside = psi_in;
    let mut outside = psi_in + step;
    let belongs = |psi: f64| -> Result<bool, FlowError> {
        let hit = first_loop(
            metric,
            base,
            psi.rem_euclid(2.0 * PI),
            params.t_max,
            params.loop_tol,
            params.min_return_time,
            &params.flow,
        )?;
        Ok(matches!(hit, Some(h) if (h.time - t_ref).abs() <= params.cluster_return_tol))
    };
    if belongs(outside)? {
        // The neighbor loops with a compatible time after all (it was cut
        // off by a jump elsewhere in the chain); no sub-grid boundary to
        // find between these two.
        return Ok(outside.rem_euclid(2.0 * PI));
    }
    while (outside - inside).abs() > params.psi_floor {
        let mid = 0.5 * (inside + outside);
        if belongs(mid)? {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    *floor_hits += 1;
    Ok((0.5 * (inside + outside)).rem_euclid(2.0 * PI))
}

/// Transfer matrix of the normal Jacobi equation Y″ + K(γ(t))Y = 0 along a
/// geodesic, with the conjugate times (zeros of the solution with
/// Y(0) = 0, Y′(0) = 1).
#[derive(Clone, Debug)]
pub struct JacobiTransfer {
    /// Columns are the images of (1, 0) and (0, 1) initial data (Y, Y′).
    pub matrix: [[f64; 2]; 2],
    pub conjugate_times: Vec<f64>,
}

pub fn jacobi_transfer(
    metric: &ProfileMetric,
    base: (f64, f64),
    psi: f64,
    t: f64,
    params: &FlowParams,
) -> Result<JacobiTransfer, FlowError> {
    assert!(t > 0.0);
    let start = unit_covector(metric, base.0, base.1, psi);

    if metric.topology() == Topology::Sphere && start.xi_theta.abs() <= MERIDIAN_TOL {
        // Meridian: x(t) is analytic, integrate the Jacobi system alone.
        let rhs = move |tt: f64, y: &[f64; 4]| -> [f64; 4] {
            let pos = meridian_point(metric, &start, tt);
            let k = metric.curvature(pos.x);
            [y[1], -k * y[0], y[3], -k * y[2]]
        };
        let y0 = [1.0, 0.0, 0.0, 1.0];
        let (final_y, conjugate) = integrate_with_zeros(rhs, y0, t, 2, params, None)?;
        return Ok(JacobiTransfer {
            matrix: [[final_y[0], final_y[2]], [final_y[1], final_y[3]]],
            conjugate_times: conjugate,
        });
    }

    let rhs = move |_tt: f64, y: &[f64; 8]| -> [f64; 8] {
        let s = metric.sample(y[0]);
        let inv_a2 = 1.0 / (s.a * s.a);
        let p = (y[2] * y[2] + y[3] * y[3] * inv_a2).sqrt();
        let k = -s.d2a / s.a;
        [
            y[2] / p,
            y[3] * inv_a2 / p,
            y[3] * y[3] * s.da * inv_a2 / (s.a * p),
            0.0,
            y[5],
            -k * y[4],
            y[7],
            -k * y[6],
        ]
    };
    let y0 = [
        start.x,
        start.theta,
        start.xi_x,
        start.xi_theta,
        1.0,
        0.0,
        0.0,
        1.0,
    ];
    let guard = flow_guard(metric, params.tolerance);
    let (final_y, conjugate) = integrate_with_zeros(rhs, y0, t, 6, params, guard)?;
    Ok(JacobiTransfer {
        matrix: [[final_y[4], final_y[6]], [final_y[5], final_y[7]]],
        conjugate_times: conjugate,
    })
}

/// Integrate and record the zero crossings of component `watch` (the
/// second Jacobi solution), refining each crossing by bisection from the
/// step's start state.
fn integrate_with_zeros<'a, const N: usize>(
    rhs: impl FnMut(f64, &[f64; N]) -> [f64; N] + Copy,
    y0: [f64; N],
    t: f64,
    watch: usize,
    params: &'a FlowParams,
    guard: Option<Box<dyn Fn(&[f64; N], &[f64; N]) -> bool + 'a>>,
) -> Result<([f64; N], Vec<f64>), FlowError> {
    let mut stepper = Stepper::new(rhs, 0.0, y0, params);
    stepper.accept = guard;
    let mut zeros = Vec::new();
    let mut prev_t = 0.0f64;
    let mut prev_y = y0;
    while stepper.step_toward(t)? {
        let v_left = prev_y[watch];
        let v_right = stepper.y[watch];
        if v_left != 0.0 && v_right == 0.0 {
            zeros.push(stepper.t);
        } else if v_left != 0.0 && v_left.signum() != v_right.signum() {
            // Bisect by re-integrating from the step start.
            let mut lo = 0.0;
            let mut hi = stepper.t - prev_t;
            let s_left = v_left.signum();
            for _ in 0..60 {
                if hi - lo < 1e-12 {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let mut sub = Stepper::new(rhs, prev_t, prev_y, params);
                while sub.step_toward(prev_t + mid)? {}
                if sub.y[watch].signum() == s_left {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            zeros.push(prev_t + 0.5 * (lo + hi));
        }
        prev_t = stepper.t;
        prev_y = stepper.y;
    }
    Ok((stepper.y, zeros))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_bridge_metric, flat_torus, round_sphere, BridgeSpec};

    fn torus() -> ProfileMetric {
        flat_torus(1.0, 2.0 * PI).unwrap()
    }

    #[test]
    fn flat_torus_straight_line() {
        let m = torus();
        let start = PhasePoint {
            x: 0.0,
            theta: 0.0,
            xi_x: 1.0,
            xi_theta: 0.0,
        };
        let p = flow_geodesic(&m, &start, 2.0 * PI, &FlowParams::default()).unwrap();
        let cx = m.canonical_x(p.x);
        assert!(cx.min(2.0 * PI - cx) < 1e-9);
        assert!(p.theta.abs() < 1e-9);
        assert!((p.xi_x - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lattice_direction_closes_at_2pi_sqrt5() {
        let m = torus();
        let psi = 0.5f64.atan(); // direction (2, 1)/√5 in (x, θ)
        let hit = loop_length(&m, (0.0, 0.0), psi, 15.0, 1e-4, &FlowParams::default())
            .unwrap()
            .expect("lattice geodesic closes");
        let expected = 2.0 * PI * 5.0f64.sqrt();
        assert!(
            (hit.time - expected).abs() < 1e-6,
            "time {} vs {}",
            hit.time,
            expected
        );
        assert!(hit.smooth_closed);
    }

    #[test]
    fn irrational_direction_never_closes() {
        let m = torus();
        let psi = 2.0f64.sqrt().atan();
        let hit = loop_length(&m, (0.0, 0.0), psi, 50.0, 1e-6, &FlowParams::default()).unwrap();
        assert!(hit.is_none());
    }

    #[test]
    fn sphere_equator_closes() {
        let m = round_sphere();
        let start = unit_covector(&m, PI / 2.0, 0.0, PI / 2.0);
        let p = flow_geodesic(&m, &start, 2.0 * PI, &FlowParams::default()).unwrap();
        assert!((p.x - PI / 2.0).abs() < 1e-8);
        assert!(wrap_signed(p.theta, 2.0 * PI).abs() < 1e-8);
        let hit = loop_length(
            &m,
            (PI / 2.0, 0.0),
            PI / 2.0,
            7.0,
            1e-4,
            &FlowParams::default(),
        )
        .unwrap()
        .unwrap();
        assert!((hit.time - 2.0 * PI).abs() < 1e-6);
    }

    #[test]
    fn sphere_generic_direction_closes_at_2pi() {
        let m = round_sphere();
        for &psi in &[0.3, 1.1, 2.0, 4.4] {
            let hit = loop_length(&m, (1.1, 0.4), psi, 7.0, 1e-4, &FlowParams::default())
                .unwrap()
                .unwrap_or_else(|| panic!("direction {psi} must close"));
            assert!(
                (hit.time - 2.0 * PI).abs() < 1e-6,
                "psi {psi}: {}",
                hit.time
            );
            assert!(hit.smooth_closed);
        }
    }

    #[test]
    fn meridian_passes_poles_exactly() {
        let m = round_sphere();
        let start = unit_covector(&m, PI / 2.0, 0.3, 0.0);
        let p = flow_geodesic(&m, &start, 2.0 * PI, &FlowParams::default()).unwrap();
        assert!((p.x - PI / 2.0).abs() < 1e-12);
        assert!(wrap_signed(p.theta - 0.3, 2.0 * PI).abs() < 1e-12);
        assert!((p.xi_x - 1.0).abs() < 1e-12);
        // Quarter turn lands on the far pole.
        let q = flow_geodesic(&m, &start, PI / 2.0, &FlowParams::default()).unwrap();
        assert!((q.x - PI).abs() < 1e-12);
        // Half turn: opposite meridian, heading back.
        let r = flow_geodesic(&m, &start, PI, &FlowParams::default()).unwrap();
        assert!((r.x - PI / 2.0).abs() < 1e-12);
        assert!(wrap_signed(r.theta - (0.3 + PI), 2.0 * PI).abs() < 1e-12);
        assert!((r.xi_x + 1.0).abs() < 1e-12);
    }

    #[test]
    fn invariants_conserved_long_time() {
        let bridge = build_bridge_metric(BridgeSpec::default()).unwrap();
        let cases = [
            (round_sphere(), 0.9, 0.7),
            (torus(), 0.5, 1.2),
            (bridge, 0.1, 0.9),
        ];
        for (m, x0, psi) in cases {
            let start = unit_covector(&m, x0, 0.0, psi);
            let i0 = start.clairaut();
            let traj = flow_trajectory(&m, &start, 50.0, &FlowParams::default()).unwrap();
            for (t, p) in &traj {
                assert!(
                    (p.cosphere_norm(&m) - 1.0).abs() < 1e-8,
                    "{} p drift at t={t}",
                    m.label()
                );
                assert!((p.clairaut() - i0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn time_reversal_returns_to_start() {
        let m = build_bridge_metric(BridgeSpec::default()).unwrap();
        let start = unit_covector(&m, 0.2, 1.0, 0.8);
        let fwd = flow_geodesic(&m, &start, 17.0, &FlowParams::default()).unwrap();
        let back = flow_geodesic(&m, &fwd, -17.0, &FlowParams::default()).unwrap();
        assert!((back.x - start.x).abs() < 1e-6);
        assert!(wrap_signed(back.theta - start.theta, 2.0 * PI).abs() < 1e-6);
        assert!((back.xi_x - start.xi_x).abs() < 1e-6);
        assert!((back.xi_theta - start.xi_theta).abs() < 1e-6);
    }

    #[test]
    fn jacobi_flat_torus_transfer() {
        let m = torus();
        let t = 3.7;
        let j = jacobi_transfer(&m, (0.0, 0.0), 0.9, t, &FlowParams::default()).unwrap();
        assert!((j.matrix[0][0] - 1.0).abs() < 1e-9);
        assert!((j.matrix[0][1] - t).abs() < 1e-9);
        assert!(j.matrix[1][0].abs() < 1e-9);
        assert!((j.matrix[1][1] - 1.0).abs() < 1e-9);
        assert!(j.conjugate_times.is_empty());
    }

    #[test]
    fn jacobi_sphere_conjugate_times() {
        let m = round_sphere();
        for &psi in &[0.0, 0.7, PI / 2.0] {
            let j = jacobi_transfer(&m, (PI / 2.0, 0.0), psi, 7.0, &FlowParams::default()).unwrap();
            assert_eq!(
                j.conjugate_times.len(),
                2,
                "psi {psi}: {:?}",
                j.conjugate_times
            );
            assert!((j.conjugate_times[0] - PI).abs() < 1e-4);
            assert!((j.conjugate_times[1] - 2.0 * PI).abs() < 1e-4);
            // The Wronskian of the two columns stays 1.
            let det = j.matrix[0][0] * j.matrix[1][1] - j.matrix[0][1] * j.matrix[1][0];
            assert!((det - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn loopset_sphere_full_circle() {
        let m = round_sphere();
        let params = LoopsetParams {
            n_directions: 256,
            t_max: 7.0,
            ..LoopsetParams::default()
        };
        let rep = loopset_scan(&m, (1.0, 0.0), &params).unwrap();
        assert!(!rep.pole_analytic);
        assert_eq!(rep.flow_failures, 0);
        assert!(
            (rep.measure_estimate - 2.0 * PI).abs() < 0.01 * 2.0 * PI,
            "measure {}",
            rep.measure_estimate
        );
        assert_eq!(rep.lsp.len(), 1);
        assert!((rep.lsp[0] - 2.0 * PI).abs() < 1e-3);
        for c in &rep.components {
            assert!(c.return_time_max - c.return_time_min <= 1e-3);
        }
    }

    #[test]
    fn loopset_pole_base_analytic() {
        let m = round_sphere();
        let rep = loopset_scan(&m, (0.0, 0.0), &LoopsetParams::default()).unwrap();
        assert!(rep.pole_analytic);
        assert_eq!(rep.measure_estimate, 2.0 * PI);
        assert_eq!(rep.lsp, vec![2.0 * PI]);
    }

    #[test]
    fn loopset_flat_torus_measure_near_zero() {
        let m = torus();
        let params = LoopsetParams {
            n_directions: 512,
            t_max: 20.0,
            ..LoopsetParams::default()
        };
        let rep = loopset_scan(&m, (0.0, 0.0), &params).unwrap();
        assert!(
            rep.measure_estimate <= 0.02,
            "measure {}",
            rep.measure_estimate
        );
        // The axis directions loop; they must show up as thin components.
        assert!(!rep.components.is_empty());
        assert!(rep.lsp.iter().any(|&t| (t - 2.0 * PI).abs() < 1e-3));
    }

    #[test]
    fn bridge_band_psi_symmetry() {
        // At the band equator the profile is even in x, so ψ and π − ψ
        // give mirror geodesics with identical return times.
        let m = build_bridge_metric(BridgeSpec::default()).unwrap();
        let p = FlowParams::default();
        for &psi in &[1.45f64, 1.35] {
            let a = loop_length(&m, (0.0, 0.0), psi, 6.4, 1e-4, &p)
                .unwrap()
                .expect("trapped direction loops");
            let b = loop_length(&m, (0.0, 0.0), PI - psi, 6.4, 1e-4, &p)
                .unwrap()
                .expect("mirror direction loops");
            assert!((a.time - b.time).abs() < 1e-6);
            assert!((a.time - 2.0 * PI).abs() < 1e-3);
        }
        // Directions that escape the band circle the long way; neither
        // closes within one band period.
        let c = loop_length(&m, (0.0, 0.0), 0.3, 6.4, 1e-4, &p).unwrap();
        let d = loop_length(&m, (0.0, 0.0), PI - 0.3, 6.4, 1e-4, &p).unwrap();
        assert!(c.is_none() && d.is_none());
    }

    #[test]
    fn loopset_measure_monotone_in_tol() {
        let m = build_bridge_metric(BridgeSpec::default()).unwrap();
        let base = LoopsetParams {
            n_directions: 128,
            ..LoopsetParams::default()
        };
        let tight = loopset_scan(
            &m,
            (0.0, 0.0),
            &LoopsetParams {
                loop_tol: 1e-4,
                ..base
            },
        )
        .unwrap();
        let loose = loopset_scan(
            &m,
            (0.0, 0.0),
            &LoopsetParams {
                loop_tol: 1e-3,
                ..base
            },
        )
        .unwrap();
        assert!(tight.measure_estimate <= loose.measure_estimate + 1e-6);
        // The trapped band has width 4ε in ψ (two arcs around ±θ).
        assert!(
            (tight.measure_estimate - 1.0).abs() < 0.1,
            "measure {}",
            tight.measure_estimate
        );
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(10))]

            #[test]
            fn conservation_and_reversibility(
                psi in 0.05f64..(2.0 * PI - 0.05),
                x0 in -4.0f64..4.0,
            ) {
                let m = build_bridge_metric(BridgeSpec::default()).unwrap();
                let start = unit_covector(&m, x0, 0.3, psi);
                let params = FlowParams::default();
                let end = flow_geodesic(&m, &start, 12.0, &params).unwrap();
                prop_assert!((end.cosphere_norm(&m) - 1.0).abs() < 1e-8);
                prop_assert!((end.clairaut() - start.clairaut()).abs() < 1e-12);
                let back = flow_geodesic(&m, &end, -12.0, &params).unwrap();
                prop_assert!((back.x - start.x).abs() < 1e-6);
                prop_assert!(
                    wrap_signed(back.theta - start.theta, 2.0 * PI).abs() < 1e-6
                );
            }

            #[test]
            fn sphere_loops_everywhere(
                psi in 0.05f64..(2.0 * PI - 0.05),
                x0 in 0.4f64..(PI - 0.4),
            ) {
                let m = round_sphere();
                let hit = loop_length(&m, (x0, 0.0), psi, 7.0, 1e-4, &FlowParams::default())
                    .unwrap();
                prop_assert!(hit.is_some());
                prop_assert!((hit.unwrap().time - 2.0 * PI).abs() < 1e-5);
            }
        }
    }
}

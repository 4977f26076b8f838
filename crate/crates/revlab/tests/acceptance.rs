//! Acceptance gate: one orchestrated run of every scenario at its normative
//! settings, each criterion evaluated at its stated tolerance. One verdict
//! line prints per criterion; the suite asserts only after all lines print.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to watch verdicts
//! as they appear.

use std::f64::consts::PI;
use std::time::Instant;

use revlab::geodesics::{
    flow_geodesic, flow_trajectory, jacobi_transfer, unit_covector, FlowParams, PhasePoint,
};
use revlab::geometry::ProfileMetric;
use revlab::lab::{
    export_report, run_scenario, verify_report, CachePolicy, ScenarioConfig, ScenarioKind,
    ScenarioReport,
};
use revlab::weyl::{sup_norm_functional, SurfacePoint};

struct Verdict {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn record(verdicts: &mut Vec<Verdict>, name: &'static str, passed: bool, detail: String) {
    println!("{name}: {} ({detail})", if passed { "PASS" } else { "FAIL" });
    verdicts.push(Verdict {
        name,
        passed,
        detail,
    });
}

/// Normative config for a scenario: library defaults, shared output root,
/// cache disabled so every timing below is a real computation.
fn scenario_config(kind: ScenarioKind, out_dir: &std::path::Path) -> ScenarioConfig {
    ScenarioConfig {
        scenario: kind,
        out_dir: out_dir.to_path_buf(),
        cache: CachePolicy::Off,
        ..Default::default()
    }
}

fn check_state(report: &ScenarioReport, name: &str) -> (bool, String) {
    match report.find_check(name) {
        Some(check) => {
            let value = check
                .value
                .map(|v| format!("{v:.4e}"))
                .unwrap_or_else(|| "none".to_string());
            (
                check.passed,
                format!("{name}={value} (need {} {:.1e})", check.op, check.threshold),
            )
        }
        None => (false, format!("{name} missing")),
    }
}

/// Independent lattice frequencies of the flat torus with c = 1, L = 2pi:
/// sqrt(k^2 + n^2) over all integer pairs, sorted, below the bound.
fn flat_lattice_oracle(bound: f64) -> Vec<f64> {
    let top = bound.ceil() as i64 + 1;
    let b2 = bound * bound;
    let mut out = Vec::new();
    for k in -top..=top {
        for n in -top..=top {
            let m = (k * k + n * n) as f64;
            if m <= b2 {
                out.push(m.sqrt());
            }
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Max deviation between a trajectory's conserved quantities and their
/// start values: cosphere norm (the generator) and the angular momentum.
fn invariant_drift(
    metric: &ProfileMetric,
    start: &PhasePoint,
    t: f64,
    params: &FlowParams,
) -> Result<f64, revlab::geodesics::FlowError> {
    let trajectory = flow_trajectory(metric, start, t, params)?;
    let p0 = start.cosphere_norm(metric);
    let i0 = start.clairaut();
    let mut worst = 0.0f64;
    for (_, point) in &trajectory {
        worst = worst.max((point.cosphere_norm(metric) - p0).abs());
        worst = worst.max((point.clairaut() - i0).abs());
    }
    Ok(worst)
}

fn reversal_gap(
    metric: &ProfileMetric,
    start: &PhasePoint,
    t: f64,
    params: &FlowParams,
) -> Result<f64, revlab::geodesics::FlowError> {
    let end = flow_geodesic(metric, start, t, params)?;
    let back = flow_geodesic(metric, &end, -t, params)?;
    let gap = (back.x - start.x)
        .abs()
        .max((back.theta - start.theta).abs())
        .max((back.xi_x - start.xi_x).abs())
        .max((back.xi_theta - start.xi_theta).abs());
    Ok(gap)
}

#[test]
fn acceptance_criteria() {
    let out_root = tempfile::tempdir().expect("tempdir");
    let mut verdicts: Vec<Verdict> = Vec::new();

    // Scenario runs at normative settings. Reports carry the per-scenario
    // checks; criteria below read them and add their own oracles.
    let run = |kind: ScenarioKind| -> ScenarioReport {
        let config = scenario_config(kind, out_root.path());
        let t = Instant::now();
        let report = run_scenario(&config).unwrap_or_else(|e| panic!("{kind} run failed: {e}"));
        eprintln!("[{kind} ran in {:.1}s]", t.elapsed().as_secs_f64());
        for line in &report.log {
            eprintln!("[{kind}] {line}");
        }
        report
    };
    let flat = run(ScenarioKind::FlatTorus);
    let sphere = run(ScenarioKind::RoundSphere);
    let bridge_t = Instant::now();
    let bridge = run(ScenarioKind::BridgeTorus);
    let bridge_elapsed = bridge_t.elapsed().as_secs_f64();
    let perturbed = run(ScenarioKind::PerturbedTorus);
    let reports = [&flat, &sphere, &bridge, &perturbed];

    for report in reports {
        assert!(
            report.failures.is_empty(),
            "{} experiments failed: {:?}",
            report.kind,
            report.failures
        );
        let dir = export_report(report).expect("export");
        let outcome = verify_report(&dir).expect("verify");
        assert!(outcome.clean(), "{}: {outcome:?}", report.kind);
    }

    // Criterion 1: dual-route spectra. The analytic flat table matches an
    // independent lattice enumeration to roundoff; numeric tables match
    // analytic ones within relative 1e-3 (sphere: multiplicities exact);
    // both numeric builds together stay under two minutes.
    {
        let bound = 39.5;
        let oracle = flat_lattice_oracle(bound);
        let table = &flat.functional_table;
        let count = table.count_below(bound);
        let mut lattice_ok = count == oracle.len();
        let mut worst = 0.0f64;
        if lattice_ok {
            for (i, &expect) in oracle.iter().enumerate() {
                let dev = (table.entries[i].lambda - expect).abs() / (1.0 + expect);
                worst = worst.max(dev);
            }
            lattice_ok = worst <= 1e-12;
        }
        let (flat_cmp_ok, flat_cmp) = check_state(&flat, "numeric-matches-analytic");
        let (sphere_cmp_ok, sphere_cmp) = check_state(&sphere, "numeric-matches-analytic");
        let table_time = flat.timing("numeric-table").unwrap_or(f64::INFINITY)
            + sphere.timing("numeric-table").unwrap_or(f64::INFINITY);
        let in_budget = table_time <= 120.0;
        record(
            &mut verdicts,
            "criterion-1 dual-route spectra",
            lattice_ok && flat_cmp_ok && sphere_cmp_ok && in_budget,
            format!(
                "lattice {count}/{} dev {worst:.1e}; {flat_cmp}; {sphere_cmp}; tables {table_time:.0}s of 120s",
                oracle.len()
            ),
        );
    }

    // Criterion 2: pole concentration on the sphere. Numeric pole amplitudes
    // match sqrt((2l+1)/4pi) within 1e-3 for l <= 30, and their growth
    // exponent is 1/2 within 0.05.
    {
        let resolved = scenario_config(ScenarioKind::RoundSphere, out_root.path())
            .resolve()
            .expect("sphere resolves");
        let pole = SurfacePoint { x: 0.0, theta: 0.0 };
        let mut worst = 0.0f64;
        let mut checked = 0usize;
        let mut value_err: Option<String> = None;
        for cluster in &sphere.numeric_table.clusters {
            let ell = (-0.5 + (0.25 + cluster.lambda * cluster.lambda).sqrt()).round();
            if ell > 30.0 {
                continue;
            }
            let expect = ((2.0 * ell + 1.0) / (4.0 * PI)).sqrt();
            match sup_norm_functional(&sphere.numeric_table, &resolved.metric, pole, cluster.lambda)
            {
                Ok(value) => {
                    worst = worst.max((value - expect).abs());
                    checked += 1;
                }
                Err(e) => value_err = Some(e.to_string()),
            }
        }
        let values_ok = value_err.is_none() && checked >= 31 && worst <= 1e-3;
        let (exp_ok, exp_detail) = check_state(&sphere, "pole-sup-exponent-dev");
        record(
            &mut verdicts,
            "criterion-2 pole concentration",
            values_ok && exp_ok,
            format!(
                "{checked} levels, amplitude dev {worst:.2e} of 1e-3{}; {exp_detail}",
                value_err.map(|e| format!(" [{e}]")).unwrap_or_default()
            ),
        );
    }

    // Criterion 3: flat baseline functionals stay slow-growing.
    {
        let (sup_ok, sup_detail) = check_state(&flat, "sup-exponent");
        let (rem_ok, rem_detail) = check_state(&flat, "remainder-exponent");
        record(
            &mut verdicts,
            "criterion-3 flat growth exponents",
            sup_ok && rem_ok,
            format!("{sup_detail}; {rem_detail}"),
        );
    }

    // Criterion 4: loopset structure. Sphere: every direction loops at 2pi.
    // Flat: almost nothing loops. Bridge: the band equator traps a measure
    // within 10% of the closed form and its return spectrum contains 2pi.
    {
        let (sphere_ok, sphere_detail) = check_state(&sphere, "loopset-full-circle-dev");
        let (flat_ok, flat_detail) = check_state(&flat, "loopset-measure");
        let (band_ok, band_detail) = check_state(&bridge, "band-trapped-measure-dev");
        let (lsp_ok, lsp_detail) = check_state(&bridge, "lsp-contains-great-circle");
        let scan_time = flat.timing("loopsets").unwrap_or(f64::INFINITY)
            + sphere.timing("loopsets").unwrap_or(f64::INFINITY)
            + bridge.timing("loopsets").unwrap_or(f64::INFINITY);
        let in_budget = scan_time <= 180.0;
        record(
            &mut verdicts,
            "criterion-4 loopset structure",
            sphere_ok && flat_ok && band_ok && lsp_ok && in_budget,
            format!(
                "{sphere_detail}; {flat_detail}; {band_detail}; {lsp_detail}; scans {scan_time:.0}s of 180s"
            ),
        );
    }

    // Criterion 5: bridge spectra to lambda 60. Positive trapped measure,
    // the band point's remainder outgrows the flat point's by 0.15 in the
    // exponent, and no sup exponent reaches 0.45. Whole scenario in ten
    // minutes.
    {
        let positive = bridge
            .loopsets
            .iter()
            .find(|r| r.base == "band")
            .map(|r| r.report.measure_estimate > 0.0)
            .unwrap_or(false);
        let (gap_ok, gap_detail) = check_state(&bridge, "band-remainder-excess");
        let (cap_ok, cap_detail) = check_state(&bridge, "sup-exponent-cap");
        let in_budget = bridge_elapsed <= 600.0;
        record(
            &mut verdicts,
            "criterion-5 bridge spectra",
            positive && gap_ok && cap_ok && in_budget,
            format!(
                "trapped measure positive: {positive}; {gap_detail}; {cap_detail}; run {bridge_elapsed:.0}s of 600s"
            ),
        );
    }

    // Criterion 6: return-time measures at lambda 40. Flat: near-uniform for
    // T in {1, 2pi} (harmonics k = 1..5 below 0.15). Sphere pole at T = 2pi:
    // a point mass at angle pi, mu-hat(1) within 0.15 of -1.
    {
        let (flat_ok, flat_detail) = check_state(&flat, "return-measure-uniform");
        let (anchor_ok, anchor_detail) = check_state(&sphere, "pole-return-anchor");
        record(
            &mut verdicts,
            "criterion-6 return measures",
            flat_ok && anchor_ok,
            format!("{flat_detail}; {anchor_detail}"),
        );
    }

    // Criterion 7: geodesic integrity on every scenario metric: conserved
    // quantities drift below 1e-8 out to t = 50, time reversal returns the
    // start within 1e-6, and sphere conjugate times sit at pi and 2pi
    // within 1e-4.
    {
        let params = FlowParams::default();
        let mut worst_drift = 0.0f64;
        let mut worst_reversal = 0.0f64;
        let mut flow_err: Option<String> = None;
        let psis = [0.6, 1.2, 2.0, 4.0, 5.5];
        let metrics: Vec<(String, ProfileMetric, (f64, f64))> = [
            (ScenarioKind::FlatTorus, (0.3, 0.7)),
            (ScenarioKind::RoundSphere, (PI / 2.0 - 0.4, 0.2)),
            (ScenarioKind::BridgeTorus, (0.1, 0.5)),
            (ScenarioKind::PerturbedTorus, (0.3, 0.7)),
        ]
        .into_iter()
        .map(|(kind, base)| {
            let resolved = scenario_config(kind, out_root.path())
                .resolve()
                .expect("metric resolves");
            (kind.to_string(), resolved.metric, base)
        })
        .collect();
        for (name, metric, base) in &metrics {
            for &psi in &psis {
                let start = unit_covector(metric, base.0, base.1, psi);
                match invariant_drift(metric, &start, 50.0, &params) {
                    Ok(drift) => worst_drift = worst_drift.max(drift),
                    Err(e) => flow_err = Some(format!("{name} psi={psi}: {e}")),
                }
                match reversal_gap(metric, &start, 50.0, &params) {
                    Ok(gap) => worst_reversal = worst_reversal.max(gap),
                    Err(e) => flow_err = Some(format!("{name} psi={psi}: {e}")),
                }
            }
        }
        let sphere_metric = &metrics[1].1;
        let transfer = jacobi_transfer(sphere_metric, (PI / 2.0, 0.0), 0.9, 2.0 * PI + 0.3, &params)
            .expect("jacobi flow");
        let conjugate_ok = transfer.conjugate_times.len() == 2
            && (transfer.conjugate_times[0] - PI).abs() <= 1e-4
            && (transfer.conjugate_times[1] - 2.0 * PI).abs() <= 1e-4;
        let passed = flow_err.is_none()
            && worst_drift <= 1e-8
            && worst_reversal <= 1e-6
            && conjugate_ok;
        record(
            &mut verdicts,
            "criterion-7 geodesic integrity",
            passed,
            format!(
                "drift {worst_drift:.1e} of 1e-8; reversal {worst_reversal:.1e} of 1e-6; conjugate times {:?}{}",
                transfer.conjugate_times,
                flow_err.map(|e| format!(" [{e}]")).unwrap_or_default()
            ),
        );
    }

    // Criterion 8: the trace identity closes to 1e-6 on every scenario at
    // lambda in {10, 20, 30}.
    {
        let mut passed = true;
        let mut parts = Vec::new();
        for report in reports {
            let (ok, detail) = check_state(report, "trace-identity");
            passed &= ok;
            parts.push(format!("{}: {detail}", report.kind));
            let lambdas: Vec<f64> = report
                .traces
                .iter()
                .filter(|t| t.table == "numeric")
                .map(|t| t.check.lambda)
                .collect();
            if lambdas != [10.0, 20.0, 30.0] {
                passed = false;
                parts.push(format!("{} probed {lambdas:?}", report.kind));
            }
        }
        record(
            &mut verdicts,
            "criterion-8 trace identity",
            passed,
            parts.join("; "),
        );
    }

    // Criterion 9: return times within each loopset component agree to 1e-3
    // across every scenario.
    {
        let mut passed = true;
        let mut parts = Vec::new();
        for report in reports {
            if report.loopsets.is_empty() {
                passed = false;
                parts.push(format!("{}: no loopset scans", report.kind));
                continue;
            }
            let (ok, detail) = check_state(report, "loopset-component-spread");
            passed &= ok;
            parts.push(format!("{}: {detail}", report.kind));
        }
        record(
            &mut verdicts,
            "criterion-9 loopset coherence",
            passed,
            parts.join("; "),
        );
    }

    let failed: Vec<&Verdict> = verdicts.iter().filter(|v| !v.passed).collect();
    assert!(
        failed.is_empty(),
        "{} of {} criteria failed: {}",
        failed.len(),
        verdicts.len(),
        failed
            .iter()
            .map(|v| format!("{} ({})", v.name, v.detail))
            .collect::<Vec<_>>()
            .join("; ")
    );
}

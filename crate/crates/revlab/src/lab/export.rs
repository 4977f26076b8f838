//! Deterministic report directories.
//!
//! `export_report` writes a scenario report to
//! `<out_dir>/<scenario>-<config-hash>/`. Every file name is a fixed
//! function of the config hash and the experiment labels, every byte is a
//! fixed function of the report, and `manifest.json` lists the SHA-256 of
//! each written file. Wall-clock notes go to `run.log`, which is the one
//! file kept out of the manifest so reruns stay byte-identical.
//!
//! `verify_report` re-hashes a directory against its manifest and re-derives
//! each stored check verdict from its stored numbers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geodesics::LoopsetReport;
use crate::weyl::{write_global_weyl_csv, write_return_measure_csv, write_weyl_csv};

use super::config::ReportFormat;
use super::{
    AcceptanceCheck, ExperimentFailure, PointFit, ScenarioReport, TableComparison, TraceRecord,
};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("report io at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("report encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("verify: {reason}")]
    Verify { reason: String },
}

fn io_err(path: &Path, source: std::io::Error) -> ExportError {
    ExportError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

#[derive(Serialize)]
struct ComponentSummary {
    psi_start: f64,
    psi_end: f64,
    extent: f64,
    return_time_mean: f64,
    return_time_spread: f64,
    sample_count: usize,
    isolated: bool,
}

#[derive(Serialize)]
struct LoopsetSummary {
    base: String,
    base_x: f64,
    base_theta: f64,
    n_directions: usize,
    measure_estimate: f64,
    lsp: Vec<f64>,
    pole_analytic: bool,
    floor_hits: usize,
    flow_failures: usize,
    components: Vec<ComponentSummary>,
}

impl LoopsetSummary {
    fn new(base: &str, report: &LoopsetReport) -> Self {
        LoopsetSummary {
            base: base.to_string(),
            base_x: report.base_x,
            base_theta: report.base_theta,
            n_directions: report.n_directions,
            measure_estimate: report.measure_estimate,
            lsp: report.lsp.clone(),
            pole_analytic: report.pole_analytic,
            floor_hits: report.floor_hits,
            flow_failures: report.flow_failures,
            components: report
                .components
                .iter()
                .map(|c| ComponentSummary {
                    psi_start: c.psi_start,
                    psi_end: c.psi_end,
                    extent: c.extent,
                    return_time_mean: c.return_time_mean,
                    return_time_spread: c.return_time_max - c.return_time_min,
                    sample_count: c.sample_count,
                    isolated: c.isolated,
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct CoeffRow {
    k: i32,
    re: f64,
    im: f64,
    abs: f64,
}

#[derive(Serialize)]
struct MeasureSummary {
    point: String,
    t: f64,
    lambda: f64,
    diagnostic_max: f64,
    coefficients: Vec<CoeffRow>,
}

#[derive(Serialize)]
struct SeriesSummary {
    point: String,
    grid_points: usize,
    uniform_c: f64,
    undersampled: bool,
}

#[derive(Serialize)]
struct GlobalSummary {
    grid_points: usize,
    final_count: f64,
    final_main: f64,
    final_remainder: f64,
    max_abs_remainder: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario: String,
    label: &'a str,
    config_hash: &'a str,
    area: f64,
    lambda_max: f64,
    functional_source: &'a str,
    numeric_entries: usize,
    functional_entries: usize,
    config: &'a super::ScenarioConfig,
    checks: &'a [AcceptanceCheck],
    failures: &'a [ExperimentFailure],
    sup_fits: &'a [PointFit],
    remainder_fits: &'a [PointFit],
    traces: &'a [TraceRecord],
    comparison: Option<&'a TableComparison>,
    loopsets: Vec<LoopsetSummary>,
    measures: Vec<MeasureSummary>,
    series: Vec<SeriesSummary>,
    global: Option<GlobalSummary>,
}

fn format_t(t: f64) -> String {
    format!("{t:.4}")
}

struct Writer {
    dir: PathBuf,
    manifest: BTreeMap<String, String>,
}

impl Writer {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), ExportError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.manifest.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }
}

/// Write the report directory and return its path.
pub fn export_report(report: &ScenarioReport) -> Result<PathBuf, ExportError> {
    let dir = report
        .config
        .out_dir
        .join(format!("{}-{}", report.kind, report.config_hash));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut w = Writer {
        dir: dir.clone(),
        manifest: BTreeMap::new(),
    };
    let formats = &report.config.formats;
    let csv = formats.contains(&ReportFormat::Csv);
    let json = formats.contains(&ReportFormat::Json);
    let plot = formats.contains(&ReportFormat::Plotdata);

    let summary = Summary {
        scenario: report.kind.to_string(),
        label: &report.label,
        config_hash: &report.config_hash,
        area: report.area,
        lambda_max: report.lambda_max,
        functional_source: &report.functional_source,
        numeric_entries: report.numeric_table.entries.len(),
        functional_entries: report.functional_table.entries.len(),
        config: &report.config,
        checks: &report.checks,
        failures: &report.failures,
        sup_fits: &report.sup_fits,
        remainder_fits: &report.remainder_fits,
        traces: &report.traces,
        comparison: report.comparison.as_ref(),
        loopsets: report
            .loopsets
            .iter()
            .map(|r| LoopsetSummary::new(&r.base, &r.report))
            .collect(),
        measures: report
            .measures
            .iter()
            .map(|m| MeasureSummary {
                point: m.point.clone(),
                t: m.measure.t,
                lambda: m.measure.lambda,
                diagnostic_max: m.measure.diagnostic_max,
                coefficients: m
                    .measure
                    .coefficients
                    .iter()
                    .map(|&(k, c)| CoeffRow {
                        k,
                        re: c.re,
                        im: c.im,
                        abs: c.norm(),
                    })
                    .collect(),
            })
            .collect(),
        series: report
            .weyl
            .iter()
            .map(|s| SeriesSummary {
                point: s.point.clone(),
                grid_points: s.series.lambdas.len(),
                uniform_c: s.series.uniform_c,
                undersampled: s.series.undersampled,
            })
            .collect(),
        global: report.global.as_ref().map(|g| {
            let last = g.lambdas.len().saturating_sub(1);
            GlobalSummary {
                grid_points: g.lambdas.len(),
                final_count: g.counts.get(last).copied().unwrap_or(0.0),
                final_main: g.main.get(last).copied().unwrap_or(0.0),
                final_remainder: g.remainder.get(last).copied().unwrap_or(0.0),
                max_abs_remainder: g.remainder.iter().fold(0.0f64, |m, &r| m.max(r.abs())),
            }
        }),
    };
    w.put("summary.json", &serde_json::to_vec_pretty(&summary)?)?;

    if json && !(report.sup_fits.is_empty() && report.remainder_fits.is_empty()) {
        #[derive(Serialize)]
        struct Fits<'a> {
            sup: &'a [PointFit],
            remainder: &'a [PointFit],
        }
        w.put(
            "supnorm_fit.json",
            &serde_json::to_vec_pretty(&Fits {
                sup: &report.sup_fits,
                remainder: &report.remainder_fits,
            })?,
        )?;
    }

    if csv {
        for s in &report.weyl {
            let mut buf = Vec::new();
            write_weyl_csv(&s.series, &mut buf).expect("vec write");
            w.put(&format!("weyl_{}.csv", s.point), &buf)?;
        }
        if let Some(global) = &report.global {
            let mut buf = Vec::new();
            write_global_weyl_csv(global, &mut buf).expect("vec write");
            w.put("global_weyl.csv", &buf)?;
        }
        let primary = report.eval_points.first().map(|(n, _)| n.clone());
        for m in &report.measures {
            let name = if Some(&m.point) == primary.as_ref() {
                format!("mu_T{}.csv", format_t(m.measure.t))
            } else {
                format!("mu_{}_T{}.csv", m.point, format_t(m.measure.t))
            };
            let mut buf = Vec::new();
            write_return_measure_csv(&m.measure, &mut buf).expect("vec write");
            w.put(&name, &buf)?;
        }
        for record in &report.loopsets {
            let mut buf = String::from("psi,clairaut,return_time,return_angle\n");
            for s in &record.report.samples {
                match &s.hit {
                    Some(hit) => buf.push_str(&format!(
                        "{:.17e},{:.17e},{:.17e},{:.17e}\n",
                        s.psi, s.clairaut, hit.time, hit.return_angle
                    )),
                    None => buf.push_str(&format!("{:.17e},{:.17e},,\n", s.psi, s.clairaut)),
                }
            }
            w.put(&format!("loopset_{}.csv", record.base), buf.as_bytes())?;
        }
    }

    if plot {
        for s in &report.weyl {
            let mut buf = String::new();
            for i in 0..s.series.lambdas.len() {
                buf.push_str(&format!(
                    "{:.17e} {:.17e}\n",
                    s.series.lambdas[i], s.series.remainder[i]
                ));
            }
            w.put(&format!("remainder_{}.dat", s.point), buf.as_bytes())?;
        }
        for f in &report.sup_fits {
            if f.table != "functional" {
                continue;
            }
            let mut buf = String::new();
            for &(l, v) in &f.fit.pairs {
                buf.push_str(&format!("{l:.17e} {v:.17e}\n"));
            }
            w.put(&format!("supnorm_{}.dat", f.point), buf.as_bytes())?;
        }
    }

    let manifest_bytes = serde_json::to_vec_pretty(&w.manifest)?;
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, &manifest_bytes).map_err(|e| io_err(&manifest_path, e))?;

    // Timing notes last, outside the manifest.
    let log_path = dir.join("run.log");
    fs::write(&log_path, report.log.join("\n") + "\n").map_err(|e| io_err(&log_path, e))?;

    Ok(dir)
}

/// Result of re-checking a report directory.
#[derive(Debug, Default)]
pub struct VerifyOutcome {
    pub files_checked: usize,
    /// Files listed in the manifest but absent on disk.
    pub missing: Vec<String>,
    /// Files whose bytes no longer match the manifest.
    pub hash_mismatches: Vec<String>,
    /// Checks whose stored verdict disagrees with their stored numbers.
    pub verdict_mismatches: Vec<String>,
    /// Checks that honestly failed when the report was written.
    pub failed_checks: Vec<String>,
}

impl VerifyOutcome {
    /// Integrity only: failed checks are an honest part of a clean report.
    pub fn clean(&self) -> bool {
        self.missing.is_empty()
            && self.hash_mismatches.is_empty()
            && self.verdict_mismatches.is_empty()
    }
}

#[derive(Deserialize)]
struct StoredChecks {
    checks: Vec<AcceptanceCheck>,
}

/// Re-hash every manifest entry and re-derive every check verdict.
pub fn verify_report(dir: &Path) -> Result<VerifyOutcome, ExportError> {
    let manifest_path = dir.join("manifest.json");
    let manifest_bytes = fs::read(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: BTreeMap<String, String> = serde_json::from_slice(&manifest_bytes)?;
    let mut outcome = VerifyOutcome::default();
    for (name, expected) in &manifest {
        let path = dir.join(name);
        match fs::read(&path) {
            Ok(bytes) => {
                outcome.files_checked += 1;
                if &sha256_hex(&bytes) != expected {
                    outcome.hash_mismatches.push(name.clone());
                }
            }
            Err(_) => outcome.missing.push(name.clone()),
        }
    }
    if !manifest.contains_key("summary.json") {
        return Err(ExportError::Verify {
            reason: "manifest does not list summary.json".to_string(),
        });
    }
    let summary_path = dir.join("summary.json");
    let summary_bytes = fs::read(&summary_path).map_err(|e| io_err(&summary_path, e))?;
    let stored: StoredChecks = serde_json::from_slice(&summary_bytes)?;
    for check in &stored.checks {
        if check.passed != check.evaluate() {
            outcome.verdict_mismatches.push(check.name.clone());
        }
        if !check.passed {
            outcome.failed_checks.push(check.name.clone());
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::super::tests::smoke_config;
    use super::super::{run_scenario, ScenarioKind};
    use super::*;

    #[test]
    fn export_verifies_and_reruns_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let config = smoke_config(dir.path().to_path_buf());
        let report = run_scenario(&config).unwrap();
        let report_dir = export_report(&report).unwrap();
        assert_eq!(
            report_dir.file_name().unwrap().to_str().unwrap(),
            format!("{}-{}", ScenarioKind::FlatTorus, report.config_hash)
        );

        for name in [
            "summary.json",
            "manifest.json",
            "run.log",
            "weyl_base.csv",
            "global_weyl.csv",
            "mu_T1.0000.csv",
            "loopset_base.csv",
            "supnorm_fit.json",
            "remainder_base.dat",
            "supnorm_base.dat",
        ] {
            assert!(report_dir.join(name).exists(), "missing {name}");
        }
        let manifest_bytes = fs::read(report_dir.join("manifest.json")).unwrap();
        let manifest: BTreeMap<String, String> =
            serde_json::from_slice(&manifest_bytes).unwrap();
        assert!(!manifest.contains_key("run.log"), "run.log must stay unmanifested");
        assert!(!manifest.contains_key("manifest.json"));

        let outcome = verify_report(&report_dir).unwrap();
        assert!(outcome.clean(), "{outcome:?}");
        assert_eq!(outcome.files_checked, manifest.len());

        // Second run: table comes from cache, bytes must not move.
        let report2 = run_scenario(&config).unwrap();
        export_report(&report2).unwrap();
        let manifest2 = fs::read(report_dir.join("manifest.json")).unwrap();
        assert_eq!(manifest_bytes, manifest2, "rerun changed exported bytes");
    }

    #[test]
    fn verify_catches_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = smoke_config(dir.path().to_path_buf());
        // Keep this test light: no plot or csv files.
        config.formats = vec![super::super::ReportFormat::Json];
        config.loopset.n_directions = 64;
        let report = run_scenario(&config).unwrap();
        let report_dir = export_report(&report).unwrap();

        let target = report_dir.join("supnorm_fit.json");
        let mut bytes = fs::read(&target).unwrap();
        bytes.push(b' ');
        fs::write(&target, &bytes).unwrap();
        let outcome = verify_report(&report_dir).unwrap();
        assert!(!outcome.clean());
        assert_eq!(outcome.hash_mismatches, vec!["supnorm_fit.json".to_string()]);

        // Flipping a stored verdict without its numbers is also caught.
        let summary_path = report_dir.join("summary.json");
        let text = fs::read_to_string(&summary_path).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let checks = value["checks"].as_array_mut().unwrap();
        let first = checks.first_mut().unwrap();
        let stored = first["passed"].as_bool().unwrap();
        first["passed"] = serde_json::Value::Bool(!stored);
        fs::write(&summary_path, serde_json::to_vec_pretty(&value).unwrap()).unwrap();
        let outcome = verify_report(&report_dir).unwrap();
        assert!(!outcome.verdict_mismatches.is_empty());
    }

    #[test]
    fn missing_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = verify_report(dir.path()).unwrap_err();
        assert!(matches!(err, ExportError::Io { .. }), "{err}");
    }
}

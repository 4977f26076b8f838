//! Scenario configuration: TOML-friendly input structs plus the resolution
//! step that fills scenario defaults and validates every field.
//!
//! Raw configs keep most knobs optional so a file only states what it
//! overrides. `ScenarioConfig::resolve` produces a [`ResolvedScenario`] with
//! every value pinned; the runner never reads the raw struct.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geodesics::{FlowParams, LoopsetParams};
use crate::geometry::{
    build_bridge_metric, flat_torus, round_sphere, trig_series_torus, BandProfile, BridgeSpec,
    GeometryError, ProfileMetric,
};
use crate::spectrum::analytic::AnalyticKind;
use crate::spectrum::SolveSettings;
use crate::weyl::SurfacePoint;

/// Highest frequency the solver accepts without an explicit override. Dense
/// grids keep discretization error under control below this ceiling; going
/// higher is allowed but the config must say so.
pub const LAMBDA_CEILING: f64 = 60.0;

/// Largest cached table, in estimated bytes on disk.
pub const CACHE_MAX_BYTES: u64 = 150_000_000;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("metric construction failed: {0}")]
    Geometry(#[from] GeometryError),
    #[error("could not parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("could not read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// The five built-in experiment families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Constant profile: lattice spectrum, empty loopsets away from nothing,
    /// the flat baseline for every functional.
    FlatTorus,
    /// a = sin x: maximal spherical symmetry, pole concentration, full-circle
    /// loopsets everywhere.
    RoundSphere,
    /// Flat torus with a curved band grafted in across a monotone bridge;
    /// the band equator traps a positive measure of directions.
    BridgeTorus,
    /// Trig-series perturbation of the flat torus with seeded random
    /// coefficients; generically no loopsets at all.
    PerturbedTorus,
    /// Caller-specified trig-series profile.
    Custom,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::FlatTorus,
        ScenarioKind::RoundSphere,
        ScenarioKind::BridgeTorus,
        ScenarioKind::PerturbedTorus,
        ScenarioKind::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::FlatTorus => "flat-torus",
            ScenarioKind::RoundSphere => "round-sphere",
            ScenarioKind::BridgeTorus => "bridge-torus",
            ScenarioKind::PerturbedTorus => "perturbed-torus",
            ScenarioKind::Custom => "custom",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            ScenarioKind::FlatTorus => {
                "constant profile; lattice spectrum, flat baseline for all functionals"
            }
            ScenarioKind::RoundSphere => {
                "unit sphere; pole concentration and full-circle loopsets"
            }
            ScenarioKind::BridgeTorus => {
                "flat torus with a grafted curved band; trapped directions at the band equator"
            }
            ScenarioKind::PerturbedTorus => {
                "seeded random trig perturbation of the flat torus; generically loopset-free"
            }
            ScenarioKind::Custom => "explicit trig-series profile from the config file",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Metric parameters. Every field is optional; fields that do not apply to
/// the chosen scenario are rejected so a typo cannot silently do nothing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricParams {
    /// Constant profile value of the flat model (flat and perturbed tori).
    pub circumference: Option<f64>,
    /// Period of the x coordinate (flat, perturbed, custom).
    pub base_length: Option<f64>,
    /// Bridge torus: half-width of the curved band.
    pub band_half_width: Option<f64>,
    /// Bridge torus: width of each transition bridge.
    pub bridge_width: Option<f64>,
    /// Bridge torus: length of the flat remainder.
    pub flat_length: Option<f64>,
    /// Bridge torus band shape: "cos" (default) or "sqrt".
    pub band_profile: Option<String>,
    /// Custom and perturbed tori: mean profile value.
    pub mean_radius: Option<f64>,
    /// Custom torus: (harmonic index, relative amplitude, phase) terms.
    pub harmonics: Option<Vec<(u32, f64, f64)>>,
}

impl MetricParams {
    /// Names of the fields that are set, for cross-scenario rejection.
    fn set_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.circumference.is_some() {
            out.push("metric.circumference");
        }
        if self.base_length.is_some() {
            out.push("metric.base_length");
        }
        if self.band_half_width.is_some() {
            out.push("metric.band_half_width");
        }
        if self.bridge_width.is_some() {
            out.push("metric.bridge_width");
        }
        if self.flat_length.is_some() {
            out.push("metric.flat_length");
        }
        if self.band_profile.is_some() {
            out.push("metric.band_profile");
        }
        if self.mean_radius.is_some() {
            out.push("metric.mean_radius");
        }
        if self.harmonics.is_some() {
            out.push("metric.harmonics");
        }
        out
    }
}

/// Loopset scan knobs. Defaults match the library-level scan defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopsetConfig {
    /// Base points as (x, theta); scenario defaults apply when absent.
    pub base_points: Option<Vec<[f64; 2]>>,
    /// Extra seeded-random base points (perturbed torus defaults to 5).
    pub random_base_points: Option<usize>,
    pub t_max: f64,
    pub n_directions: usize,
    pub loop_tol: f64,
}

impl Default for LoopsetConfig {
    fn default() -> Self {
        let d = LoopsetParams::default();
        LoopsetConfig {
            base_points: None,
            random_base_points: None,
            t_max: d.t_max,
            n_directions: d.n_directions,
            loop_tol: d.loop_tol,
        }
    }
}

/// Spectral-table cache behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CachePolicy {
    /// Reuse a stored table when its key and checksum match; store fresh
    /// solves unless they exceed the size guard.
    Auto,
    /// Always recompute, never read or write the cache.
    Off,
}

/// Export formats for `lab run`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    /// Per-experiment CSV files.
    Csv,
    /// summary.json plus fit records.
    Json,
    /// Two-column whitespace `.dat` files for plotting tools.
    Plotdata,
}

/// Raw scenario configuration as read from TOML or built in code.
///
/// Optional fields resolve to scenario-dependent defaults; see
/// [`ScenarioConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub metric: MetricParams,
    /// Frequency cutoff for the functional table.
    pub lambda_max: Option<f64>,
    /// Frequency cutoff for the numeric cross-check table on scenarios whose
    /// functional table is analytic. Ignored elsewhere.
    pub numeric_lambda_max: Option<f64>,
    /// Radial grid size for numeric solves.
    pub grid_size: Option<usize>,
    /// Relative eigenvalue accuracy target for numeric solves.
    pub accuracy_target: Option<f64>,
    /// Cluster tolerance (relative) for numeric tables.
    pub cluster_tol: Option<f64>,
    /// Use the closed-form spectrum for functionals where one exists.
    pub analytic_table: Option<bool>,
    /// Sampling step in lambda for counting-function traces.
    pub lambda_step: f64,
    /// Lower end of the fit window for sup-norm growth exponents.
    pub sup_fit_lambda_min: f64,
    /// Lower end of the fit window for remainder growth exponents.
    pub remainder_fit_lambda_min: f64,
    /// Evaluation points as (x, theta); scenario defaults apply when absent.
    pub eval_points: Option<Vec<[f64; 2]>>,
    /// Return-measure times.
    pub return_times: Vec<f64>,
    /// Frequency at which return measures are evaluated; defaults to
    /// min(40, lambda_max).
    pub measure_lambda: Option<f64>,
    /// Largest harmonic k probed by the return measure diagnostic.
    pub k_max: usize,
    pub loopset: LoopsetConfig,
    pub out_dir: PathBuf,
    /// Seed for every randomized ingredient (perturbation coefficients,
    /// random base points).
    pub seed: u64,
    pub cache: CachePolicy,
    pub cache_max_bytes: u64,
    /// Hard ceiling on lambda_max unless overridden.
    pub lambda_ceiling: f64,
    pub override_lambda_ceiling: bool,
    pub formats: Vec<ReportFormat>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: ScenarioKind::FlatTorus,
            metric: MetricParams::default(),
            lambda_max: None,
            numeric_lambda_max: None,
            grid_size: None,
            accuracy_target: None,
            cluster_tol: None,
            analytic_table: None,
            lambda_step: 0.02,
            sup_fit_lambda_min: 5.0,
            remainder_fit_lambda_min: 10.0,
            eval_points: None,
            return_times: vec![1.0, 2.0 * PI],
            measure_lambda: None,
            k_max: 5,
            loopset: LoopsetConfig::default(),
            out_dir: PathBuf::from("reports"),
            seed: 0,
            cache: CachePolicy::Auto,
            cache_max_bytes: CACHE_MAX_BYTES,
            lambda_ceiling: LAMBDA_CEILING,
            override_lambda_ceiling: false,
            formats: vec![ReportFormat::Csv, ReportFormat::Json, ReportFormat::Plotdata],
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// A fully pinned scenario: metric built, every knob resolved, randomness
/// already drawn. The runner consumes this and nothing else.
#[derive(Debug)]
pub struct ResolvedScenario {
    pub kind: ScenarioKind,
    pub metric: ProfileMetric,
    /// Settings for the numeric table (always built; it feeds the trace
    /// identity and, where no analytic table exists, every functional).
    pub numeric: SolveSettings,
    pub numeric_cluster_tol: f64,
    /// Closed-form spectrum used for functionals, when available and enabled.
    pub analytic: Option<AnalyticKind>,
    /// Functional-table cutoff (analytic table when present, else numeric).
    pub lambda_max: f64,
    /// Labeled evaluation points for Weyl series, sup fits and measures.
    pub eval_points: Vec<(String, SurfacePoint)>,
    /// Labeled loopset base points.
    pub base_points: Vec<(String, (f64, f64))>,
    pub loopset: LoopsetParams,
    pub return_times: Vec<f64>,
    pub measure_lambda: f64,
    pub k_max: usize,
    pub lambda_step: f64,
    pub sup_fit_lambda_min: f64,
    pub remainder_fit_lambda_min: f64,
    /// Bridge band half-width when the scenario is the bridge torus; drives
    /// the trapped-measure reference value.
    pub band_half_width: Option<f64>,
    pub seed: u64,
}

fn require_positive(field: &'static str, value: f64) -> Result<f64, ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ConfigError::Invalid {
            field,
            reason: format!("must be positive and finite, got {value}"),
        })
    }
}

fn reject_foreign_metric_fields(
    scenario: ScenarioKind,
    params: &MetricParams,
    allowed: &[&'static str],
) -> Result<(), ConfigError> {
    for field in params.set_fields() {
        if !allowed.contains(&field) {
            return Err(ConfigError::Invalid {
                field: "metric",
                reason: format!("`{field}` does not apply to scenario `{scenario}`"),
            });
        }
    }
    Ok(())
}

fn parse_band_profile(name: &str) -> Result<BandProfile, ConfigError> {
    match name {
        "cos" => Ok(BandProfile::RoundCos),
        "sqrt" => Ok(BandProfile::SqrtChord),
        other => Err(ConfigError::Invalid {
            field: "metric.band_profile",
            reason: format!("unknown band profile `{other}` (expected \"cos\" or \"sqrt\")"),
        }),
    }
}

/// Scenario-dependent defaults that feed resolution.
struct ScenarioDefaults {
    lambda_max: f64,
    numeric_lambda_max: f64,
    grid_size: usize,
    accuracy_target: f64,
    cluster_tol: f64,
    analytic: bool,
}

fn defaults_for(kind: ScenarioKind) -> ScenarioDefaults {
    match kind {
        ScenarioKind::FlatTorus => ScenarioDefaults {
            lambda_max: 40.0,
            numeric_lambda_max: 30.0,
            grid_size: 2048,
            accuracy_target: 1e-3,
            cluster_tol: 1e-4,
            analytic: true,
        },
        ScenarioKind::RoundSphere => ScenarioDefaults {
            lambda_max: 40.0,
            numeric_lambda_max: 31.0,
            grid_size: 2048,
            accuracy_target: 1e-3,
            // Numeric sphere clusters must absorb the cross-n spread of a
            // degenerate level, which grows with lambda error.
            cluster_tol: 0.02,
            analytic: true,
        },
        ScenarioKind::BridgeTorus => ScenarioDefaults {
            lambda_max: 60.0,
            numeric_lambda_max: 60.0,
            // Coarser grids leave discretization drift in the top decade
            // of lambda that swamps the remainder contrast between the
            // band and the flat part.
            grid_size: 4096,
            accuracy_target: 1e-3,
            cluster_tol: 1e-6,
            analytic: false,
        },
        ScenarioKind::PerturbedTorus | ScenarioKind::Custom => ScenarioDefaults {
            lambda_max: 30.0,
            numeric_lambda_max: 30.0,
            grid_size: 2048,
            accuracy_target: 1e-3,
            cluster_tol: 1e-6,
            analytic: false,
        },
    }
}

/// Draw the perturbation series for the perturbed torus: five harmonics with
/// relative amplitude in [-0.05, 0.05] and phase in [0, 2pi). The draw order
/// (amplitude then phase, m = 1..=5, then random base points) is part of the
/// config contract; changing it changes every seeded scenario.
fn perturbation_harmonics(rng: &mut ChaCha8Rng) -> Vec<(u32, f64, f64)> {
    (1..=5u32)
        .map(|m| {
            let amp = rng.random_range(-0.05..=0.05);
            let phase = rng.random_range(0.0..2.0 * PI);
            (m, amp, phase)
        })
        .collect()
}

impl ScenarioConfig {
    /// Validate every field and fill scenario defaults.
    pub fn resolve(&self) -> Result<ResolvedScenario, ConfigError> {
        let kind = self.scenario;
        let d = defaults_for(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let mut band_layout = None;
        let metric = match kind {
            ScenarioKind::FlatTorus => {
                reject_foreign_metric_fields(
                    kind,
                    &self.metric,
                    &["metric.circumference", "metric.base_length"],
                )?;
                let c = self.metric.circumference.unwrap_or(1.0);
                let length = self.metric.base_length.unwrap_or(2.0 * PI);
                flat_torus(c, length)?
            }
            ScenarioKind::RoundSphere => {
                reject_foreign_metric_fields(kind, &self.metric, &[])?;
                round_sphere()
            }
            ScenarioKind::BridgeTorus => {
                reject_foreign_metric_fields(
                    kind,
                    &self.metric,
                    &[
                        "metric.band_half_width",
                        "metric.bridge_width",
                        "metric.flat_length",
                        "metric.band_profile",
                    ],
                )?;
                let base = BridgeSpec::default();
                let spec = BridgeSpec {
                    band_half_width: self.metric.band_half_width.unwrap_or(base.band_half_width),
                    bridge_width: self.metric.bridge_width.unwrap_or(base.bridge_width),
                    flat_length: self.metric.flat_length.unwrap_or(base.flat_length),
                    band_profile: match &self.metric.band_profile {
                        Some(name) => parse_band_profile(name)?,
                        None => base.band_profile,
                    },
                };
                band_layout = Some((spec.band_half_width, spec.bridge_width));
                build_bridge_metric(spec)?
            }
            ScenarioKind::PerturbedTorus => {
                reject_foreign_metric_fields(
                    kind,
                    &self.metric,
                    &["metric.mean_radius", "metric.base_length"],
                )?;
                let c = self.metric.mean_radius.unwrap_or(1.0);
                let length = self.metric.base_length.unwrap_or(2.0 * PI);
                let harmonics = perturbation_harmonics(&mut rng);
                let label = format!(
                    "perturbed-torus(c={c},L={length},seed={seed})",
                    seed = self.seed
                );
                trig_series_torus(c, length, &harmonics, label)?
            }
            ScenarioKind::Custom => {
                reject_foreign_metric_fields(
                    kind,
                    &self.metric,
                    &[
                        "metric.mean_radius",
                        "metric.base_length",
                        "metric.harmonics",
                    ],
                )?;
                let c = self.metric.mean_radius.unwrap_or(1.0);
                let length = self.metric.base_length.unwrap_or(2.0 * PI);
                let harmonics = self.metric.harmonics.clone().unwrap_or_default();
                let mut label = format!("custom-torus(c={c},L={length},h=[");
                for (i, (m, amp, phase)) in harmonics.iter().enumerate() {
                    if i > 0 {
                        label.push(';');
                    }
                    label.push_str(&format!("{m}:{amp}:{phase}"));
                }
                label.push_str("])");
                trig_series_torus(c, length, &harmonics, label)?
            }
        };

        let lambda_max = self.lambda_max.unwrap_or(d.lambda_max);
        require_positive("lambda_max", lambda_max)?;
        let lambda_ceiling = require_positive("lambda_ceiling", self.lambda_ceiling)?;
        if lambda_max > lambda_ceiling && !self.override_lambda_ceiling {
            return Err(ConfigError::Invalid {
                field: "lambda_max",
                reason: format!(
                    "{lambda_max} exceeds the ceiling {lambda_ceiling}; raise grid_size and set \
                     override_lambda_ceiling = true to go higher"
                ),
            });
        }
        let numeric_lambda_max = self
            .numeric_lambda_max
            .unwrap_or(d.numeric_lambda_max)
            .min(lambda_max);
        require_positive("numeric_lambda_max", numeric_lambda_max)?;

        let grid_size = self.grid_size.unwrap_or(d.grid_size);
        if grid_size < 16 {
            return Err(ConfigError::Invalid {
                field: "grid_size",
                reason: format!("{grid_size} is too small (need at least 16)"),
            });
        }
        let accuracy_target =
            require_positive("accuracy_target", self.accuracy_target.unwrap_or(d.accuracy_target))?;
        let numeric_cluster_tol =
            require_positive("cluster_tol", self.cluster_tol.unwrap_or(d.cluster_tol))?;
        let lambda_step = require_positive("lambda_step", self.lambda_step)?;
        let sup_fit_lambda_min = require_positive("sup_fit_lambda_min", self.sup_fit_lambda_min)?;
        let remainder_fit_lambda_min =
            require_positive("remainder_fit_lambda_min", self.remainder_fit_lambda_min)?;

        let analytic_enabled = self.analytic_table.unwrap_or(d.analytic);
        if self.analytic_table == Some(true) && !d.analytic {
            return Err(ConfigError::Invalid {
                field: "analytic_table",
                reason: format!("scenario `{kind}` has no closed-form spectrum"),
            });
        }
        let analytic = if analytic_enabled && d.analytic {
            Some(match kind {
                ScenarioKind::FlatTorus => AnalyticKind::FlatTorus {
                    circumference: self.metric.circumference.unwrap_or(1.0),
                    base_length: metric.base_length(),
                },
                ScenarioKind::RoundSphere => AnalyticKind::RoundSphere,
                _ => unreachable!("analytic defaults are flat/sphere only"),
            })
        } else {
            None
        };
        // Without an analytic table the numeric one carries the functionals,
        // so it must reach the functional cutoff.
        let numeric_lambda_max = if analytic.is_none() {
            lambda_max
        } else {
            numeric_lambda_max
        };

        if self.return_times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(ConfigError::Invalid {
                field: "return_times",
                reason: "every return time must be positive and finite".to_string(),
            });
        }
        let measure_lambda = self
            .measure_lambda
            .unwrap_or_else(|| lambda_max.min(40.0));
        require_positive("measure_lambda", measure_lambda)?;
        if measure_lambda > lambda_max {
            return Err(ConfigError::Invalid {
                field: "measure_lambda",
                reason: format!("{measure_lambda} exceeds lambda_max {lambda_max}"),
            });
        }
        if self.k_max == 0 {
            return Err(ConfigError::Invalid {
                field: "k_max",
                reason: "must be at least 1".to_string(),
            });
        }

        let eval_points =
            resolve_eval_points(kind, &metric, band_layout, self.eval_points.as_deref())?;
        let base_points = resolve_base_points(
            kind,
            &metric,
            self.loopset.base_points.as_deref(),
            self.loopset.random_base_points,
            &mut rng,
        )?;

        require_positive("loopset.t_max", self.loopset.t_max)?;
        require_positive("loopset.loop_tol", self.loopset.loop_tol)?;
        if self.loopset.n_directions < 64 {
            return Err(ConfigError::Invalid {
                field: "loopset.n_directions",
                reason: format!("{} is too few (need at least 64)", self.loopset.n_directions),
            });
        }
        let loopset = LoopsetParams {
            t_max: self.loopset.t_max,
            n_directions: self.loopset.n_directions,
            loop_tol: self.loopset.loop_tol,
            flow: FlowParams::default(),
            ..LoopsetParams::default()
        };

        require_positive("cache_max_bytes", self.cache_max_bytes as f64)?;

        Ok(ResolvedScenario {
            kind,
            metric,
            numeric: SolveSettings {
                grid_size,
                lambda_max: numeric_lambda_max,
                accuracy_target,
                check_grid: true,
            },
            numeric_cluster_tol,
            analytic,
            lambda_max,
            eval_points,
            base_points,
            loopset,
            return_times: self.return_times.clone(),
            measure_lambda,
            k_max: self.k_max,
            lambda_step,
            sup_fit_lambda_min,
            remainder_fit_lambda_min,
            band_half_width: band_layout.map(|(eps, _)| eps),
            seed: self.seed,
        })
    }
}

/// Default evaluation points, chosen to separate concentration regimes:
/// poles vs equator on the sphere, band vs bridge vs flat on the bridge
/// torus, a single representative point on homogeneous tori.
fn resolve_eval_points(
    kind: ScenarioKind,
    metric: &ProfileMetric,
    band_layout: Option<(f64, f64)>,
    explicit: Option<&[[f64; 2]]>,
) -> Result<Vec<(String, SurfacePoint)>, ConfigError> {
    if let Some(points) = explicit {
        if points.is_empty() {
            return Err(ConfigError::Invalid {
                field: "eval_points",
                reason: "must not be empty when given".to_string(),
            });
        }
        return points
            .iter()
            .enumerate()
            .map(|(i, &[x, theta])| {
                if !x.is_finite() || !theta.is_finite() {
                    return Err(ConfigError::Invalid {
                        field: "eval_points",
                        reason: format!("point {i} has a non-finite coordinate"),
                    });
                }
                Ok((format!("p{i}"), SurfacePoint { x, theta }))
            })
            .collect();
    }
    Ok(match kind {
        ScenarioKind::RoundSphere => vec![
            ("pole".to_string(), SurfacePoint { x: 0.0, theta: 0.0 }),
            (
                "equator".to_string(),
                SurfacePoint {
                    x: PI / 2.0,
                    theta: 0.0,
                },
            ),
        ],
        ScenarioKind::BridgeTorus => {
            // Band on [-eps, eps], bridges beside it, flat section filling
            // the rest; one point per regime.
            let length = metric.base_length();
            let (eps, w) = band_layout.expect("bridge scenario carries its layout");
            vec![
                ("band".to_string(), SurfacePoint { x: 0.0, theta: 0.0 }),
                (
                    "bridge".to_string(),
                    SurfacePoint {
                        x: eps + w / 2.0,
                        theta: 0.0,
                    },
                ),
                (
                    "flat".to_string(),
                    SurfacePoint {
                        x: eps + w + (length - 2.0 * eps - 2.0 * w) / 2.0,
                        theta: 0.0,
                    },
                ),
            ]
        }
        _ => vec![("base".to_string(), SurfacePoint { x: 0.0, theta: 0.0 })],
    })
}

fn resolve_base_points(
    kind: ScenarioKind,
    metric: &ProfileMetric,
    explicit: Option<&[[f64; 2]]>,
    random_count: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(String, (f64, f64))>, ConfigError> {
    let mut out: Vec<(String, (f64, f64))> = Vec::new();
    if let Some(points) = explicit {
        for (i, &[x, theta]) in points.iter().enumerate() {
            if !x.is_finite() || !theta.is_finite() {
                return Err(ConfigError::Invalid {
                    field: "loopset.base_points",
                    reason: format!("point {i} has a non-finite coordinate"),
                });
            }
            out.push((format!("b{i}"), (x, theta)));
        }
    } else {
        match kind {
            ScenarioKind::RoundSphere => {
                out.push(("equator".to_string(), (PI / 2.0, 0.0)));
            }
            ScenarioKind::BridgeTorus => {
                out.push(("band".to_string(), (0.0, 0.0)));
            }
            ScenarioKind::PerturbedTorus => {}
            _ => {
                out.push(("base".to_string(), (0.0, 0.0)));
            }
        }
    }
    let default_random = if kind == ScenarioKind::PerturbedTorus { 5 } else { 0 };
    let random_count = random_count.unwrap_or(default_random);
    for i in 0..random_count {
        let x = rng.random_range(0.0..metric.base_length());
        out.push((format!("r{i}"), (x, 0.0)));
    }
    if out.is_empty() {
        return Err(ConfigError::Invalid {
            field: "loopset.base_points",
            reason: "no base points: give some or set random_base_points".to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_preserves_fields() {
        let text = r#"
scenario = "bridge-torus"
lambda_max = 50.0
grid_size = 512
seed = 7

[metric]
band_half_width = 0.3
bridge_width = 0.2
flat_length = 7.0

[loopset]
n_directions = 1024
"#;
        let config = ScenarioConfig::from_toml(text).unwrap();
        assert_eq!(config.scenario, ScenarioKind::BridgeTorus);
        assert_eq!(config.lambda_max, Some(50.0));
        assert_eq!(config.grid_size, Some(512));
        assert_eq!(config.seed, 7);
        assert_eq!(config.metric.band_half_width, Some(0.3));
        assert_eq!(config.loopset.n_directions, 1024);
        let echoed = ScenarioConfig::from_toml(&config.to_toml()).unwrap();
        assert_eq!(echoed, config);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ScenarioConfig::from_toml("scenario = \"flat-torus\"\nlambdamax = 3").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)), "{err}");
    }

    #[test]
    fn defaults_resolve_per_scenario() {
        let flat = ScenarioConfig::default().resolve().unwrap();
        assert_eq!(flat.lambda_max, 40.0);
        assert_eq!(flat.numeric.lambda_max, 30.0);
        assert_eq!(flat.numeric.grid_size, 2048);
        assert!(flat.analytic.is_some());
        assert_eq!(flat.eval_points.len(), 1);
        assert_eq!(flat.measure_lambda, 40.0);

        let sphere = ScenarioConfig {
            scenario: ScenarioKind::RoundSphere,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(sphere.numeric.lambda_max, 31.0);
        assert_eq!(sphere.eval_points.len(), 2);
        assert_eq!(sphere.eval_points[0].0, "pole");

        let bridge = ScenarioConfig {
            scenario: ScenarioKind::BridgeTorus,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(bridge.lambda_max, 60.0);
        assert!(bridge.analytic.is_none());
        // Numeric table must reach the functional cutoff here.
        assert_eq!(bridge.numeric.lambda_max, 60.0);
        assert_eq!(bridge.eval_points.len(), 3);
        assert_eq!(bridge.band_half_width, Some(0.25));
        let names: Vec<&str> = bridge.eval_points.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["band", "bridge", "flat"]);
        // Default layout: band [-1/4, 1/4], bridge width 1/4.
        let bx = bridge.eval_points[1].1.x;
        assert!((bx - 0.375).abs() < 1e-3, "bridge midpoint {bx}");
        let fx = bridge.eval_points[2].1.x;
        let expect_fx = 0.5 + (bridge.metric.base_length() - 1.0) / 2.0;
        assert!((fx - expect_fx).abs() < 1e-3, "flat midpoint {fx}");
    }

    #[test]
    fn bridge_rejects_short_flat_section() {
        let config = ScenarioConfig {
            scenario: ScenarioKind::BridgeTorus,
            metric: MetricParams {
                flat_length: Some(1.0),
                ..Default::default()
            },
            ..Default::default()
        };
        let err = config.resolve().unwrap_err();
        match err {
            ConfigError::Geometry(GeometryError::BadParameter { name, .. }) => {
                assert_eq!(name, "flat_length")
            }
            other => panic!("expected geometry error, got {other}"),
        }
    }

    #[test]
    fn foreign_metric_fields_are_rejected() {
        let config = ScenarioConfig {
            scenario: ScenarioKind::RoundSphere,
            metric: MetricParams {
                circumference: Some(2.0),
                ..Default::default()
            },
            ..Default::default()
        };
        let err = config.resolve().unwrap_err();
        match err {
            ConfigError::Invalid { field, reason } => {
                assert_eq!(field, "metric");
                assert!(reason.contains("circumference"), "{reason}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn ceiling_blocks_large_lambda_unless_overridden() {
        let config = ScenarioConfig {
            lambda_max: Some(80.0),
            ..Default::default()
        };
        let err = config.resolve().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "lambda_max", .. }), "{err}");
        let config = ScenarioConfig {
            lambda_max: Some(80.0),
            override_lambda_ceiling: true,
            ..Default::default()
        };
        assert_eq!(config.resolve().unwrap().lambda_max, 80.0);
    }

    #[test]
    fn negative_tolerances_are_rejected() {
        let config = ScenarioConfig {
            accuracy_target: Some(-1e-3),
            ..Default::default()
        };
        let err = config.resolve().unwrap_err();
        assert!(
            matches!(err, ConfigError::Invalid { field: "accuracy_target", .. }),
            "{err}"
        );
        let config = ScenarioConfig {
            lambda_step: 0.0,
            ..Default::default()
        };
        assert!(config.resolve().is_err());
    }

    #[test]
    fn perturbed_scenario_is_seed_deterministic() {
        let config = ScenarioConfig {
            scenario: ScenarioKind::PerturbedTorus,
            seed: 42,
            ..Default::default()
        };
        let a = config.resolve().unwrap();
        let b = config.resolve().unwrap();
        assert_eq!(a.metric.label(), b.metric.label());
        assert_eq!(a.base_points.len(), 5);
        for (pa, pb) in a.base_points.iter().zip(&b.base_points) {
            assert_eq!(pa.1 .0.to_bits(), pb.1 .0.to_bits());
        }
        for i in 0..32 {
            let x = a.metric.base_length() * (i as f64) / 32.0;
            assert_eq!(
                a.metric.sample(x).a.to_bits(),
                b.metric.sample(x).a.to_bits()
            );
        }
        let other = ScenarioConfig { seed: 43, ..config }.resolve().unwrap();
        assert_ne!(a.metric.label(), other.metric.label());
        let same_profile = (0..32).all(|i| {
            let x = a.metric.base_length() * (i as f64) / 32.0;
            a.metric.sample(x).a == other.metric.sample(x).a
        });
        assert!(!same_profile, "different seeds must perturb differently");
    }

    #[test]
    fn analytic_table_cannot_be_forced_on_bridge() {
        let config = ScenarioConfig {
            scenario: ScenarioKind::BridgeTorus,
            analytic_table: Some(true),
            ..Default::default()
        };
        let err = config.resolve().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "analytic_table", .. }), "{err}");
    }

    #[test]
    fn measure_lambda_capped_by_lambda_max() {
        let config = ScenarioConfig {
            lambda_max: Some(20.0),
            measure_lambda: Some(25.0),
            ..Default::default()
        };
        assert!(config.resolve().is_err());
        let config = ScenarioConfig {
            lambda_max: Some(20.0),
            ..Default::default()
        };
        assert_eq!(config.resolve().unwrap().measure_lambda, 20.0);
    }
}

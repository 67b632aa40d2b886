//! Run configuration: one TOML file, every section optional, unknown keys
//! rejected.

use serde::{Deserialize, Serialize};
use shadowing::assimilate::AssimilationConfig;
use shadowing::models::{RijkeConfig, ScanOptions};
use shadowing::nilss::{SamplerOptions, ShadowingOptions};
use shadowing::optimize::DescentConfig;
use shadowing::perturbation::{Case, DerivativeProvider};

/// Version of the configuration dialect understood by this build.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub lorenz63: LorenzConfig,
    pub rijke: RijkeConfig,
    pub simulate: SimulateConfig,
    #[serde(rename = "perturbation-growth")]
    pub perturbation_growth: GrowthConfig,
    pub lyapunov: LyapunovConfig,
    #[serde(rename = "clv-angles")]
    pub clv_angles: ClvConfig,
    pub bifurcation: BifurcationConfig,
    pub sensitivity: SensitivityConfig,
    pub optimize: OptimizeConfig,
    pub assimilate: AssimilateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            lorenz63: LorenzConfig::default(),
            rijke: RijkeConfig::default(),
            simulate: SimulateConfig::default(),
            perturbation_growth: GrowthConfig::default(),
            lyapunov: LyapunovConfig::default(),
            clv_angles: ClvConfig::default(),
            bifurcation: BifurcationConfig::default(),
            sensitivity: SensitivityConfig::default(),
            optimize: OptimizeConfig::default(),
            assimilate: AssimilateConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LorenzConfig {
    /// The parameter `s` (rho).
    pub s: f64,
    pub dt: f64,
}

impl Default for LorenzConfig {
    fn default() -> Self {
        LorenzConfig { s: shadowing::models::LORENZ_RHO, dt: shadowing::models::LORENZ_DT }
    }
}

/// Shared by every subcommand: where the orbit starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StartConfig {
    /// Explicit initial state; overrides the seeded random one.
    pub initial: Option<Vec<f64>>,
    /// Standard deviation of the seeded random initial state.
    pub initial_spread: f64,
    /// Time units integrated before anything is recorded.
    pub runup: f64,
}

impl Default for StartConfig {
    fn default() -> Self {
        StartConfig { initial: None, initial_spread: 0.05, runup: 100.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub start: StartConfig,
    pub time: f64,
    /// Write every `stride`-th state.
    pub stride: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { start: StartConfig::default(), time: 100.0, stride: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthConfig {
    pub start: StartConfig,
    pub time: f64,
    /// Initial separation of the two primal orbits.
    pub eps: f64,
    /// Window for the reported log-slopes, in time units from the start.
    pub slope_window: f64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig { start: StartConfig { runup: 500.0, ..Default::default() }, time: 100.0, eps: 1e-4, slope_window: 100.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovConfig {
    pub start: StartConfig,
    pub k: usize,
    pub time: f64,
    /// Basis alignment before averaging, in time units.
    pub align: f64,
    pub provider: DerivativeProvider,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig {
            start: StartConfig { runup: 500.0, ..Default::default() },
            k: 3,
            time: 200.0,
            align: 5.0,
            provider: DerivativeProvider::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClvConfig {
    pub start: StartConfig,
    pub k: usize,
    pub window: f64,
    /// Spin-up before and spin-down after the window, in time units.
    pub spin: f64,
    /// Write every `stride`-th step of the angle series.
    pub stride: usize,
    pub provider: DerivativeProvider,
}

impl Default for ClvConfig {
    fn default() -> Self {
        ClvConfig {
            start: StartConfig { runup: 500.0, ..Default::default() },
            k: 3,
            window: 100.0,
            spin: 20.0,
            stride: 10,
            provider: DerivativeProvider::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BifurcationConfig {
    pub start: f64,
    pub end: f64,
    pub step: f64,
    pub scan: ScanOptions,
}

impl Default for BifurcationConfig {
    fn default() -> Self {
        BifurcationConfig { start: 0.1, end: 8.0, step: 0.1, scan: ScanOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    pub start: StartConfig,
    pub case: Case,
    /// Parameter names; empty means all.
    pub params: Vec<String>,
    /// Observable names; empty means all.
    pub observables: Vec<String>,
    pub sampler: SamplerOptions,
    pub shadowing: ShadowingOptions,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            start: StartConfig { runup: 0.0, ..Default::default() },
            case: Case::Tangent,
            params: Vec::new(),
            observables: Vec::new(),
            sampler: SamplerOptions { runup: 500.0, ..Default::default() },
            shadowing: ShadowingOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeConfig {
    pub start: StartConfig,
    /// Initial parameter value.
    pub initial_parameter: f64,
    pub descent: DescentConfig,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            start: StartConfig { runup: 0.0, ..Default::default() },
            initial_parameter: 6.5,
            descent: DescentConfig { samples: 10, ..Default::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssimilateConfig {
    /// Reference states are taken from one orbit, `spacing` time units apart.
    pub start: StartConfig,
    pub spacing: f64,
    pub experiments: usize,
    pub observable: String,
    pub noise_variance: f64,
    /// State components that receive background noise; empty means all.
    pub mask: Vec<usize>,
    pub descent: AssimilationConfig,
}

impl Default for AssimilateConfig {
    fn default() -> Self {
        AssimilateConfig {
            start: StartConfig::default(),
            spacing: 3.7,
            experiments: 20,
            observable: "J_ac".into(),
            noise_variance: 0.1,
            mask: Vec::new(),
            descent: AssimilationConfig { parameter: "beta".into(), window: 20.0, spinup: 6.0, ..Default::default() },
        }
    }
}

/// One rejected key with the reason.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeyError {
    pub key: String,
    pub message: String,
}

impl RunConfig {
    /// Defaults with the model-specific names and run lengths filled in.
    pub fn for_model(model: Model) -> Self {
        let mut c = RunConfig::default();
        if model == Model::Lorenz63 {
            let start = StartConfig { runup: 50.0, ..Default::default() };
            c.simulate.start = start.clone();
            c.perturbation_growth.start = start.clone();
            c.perturbation_growth.time = 20.0;
            c.perturbation_growth.slope_window = 15.0;
            c.lyapunov.start = start.clone();
            c.lyapunov.time = 500.0;
            c.clv_angles.start = start.clone();
            c.sensitivity.sampler = SamplerOptions { window: 15.0, samples: 100, runup: 50.0, ..Default::default() };
            c.optimize.initial_parameter = 28.0;
            c.optimize.descent = DescentConfig {
                parameter: "s".into(),
                observable: "z".into(),
                window: 15.0,
                runup: 50.0,
                samples: 10,
                ..Default::default()
            };
            c.assimilate.start = start;
            c.assimilate.observable = "z".into();
            c.assimilate.mask = vec![2];
            c.assimilate.descent = AssimilationConfig::default();
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Lorenz63,
    Rijke,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Lorenz63 => "lorenz63",
            Model::Rijke => "rijke",
        }
    }
}

/// Parse `text` over `base`, collecting every unknown or ill-typed key
/// rather than stopping at the first.
pub fn parse(text: &str, base: &RunConfig) -> Result<RunConfig, Vec<KeyError>> {
    let user: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        vec![KeyError { key: String::new(), message: e.message().to_string() }]
    })?;
    let mut table: toml::Table = toml::Table::try_from(base).map_err(|e| vec![KeyError { key: String::new(), message: e.to_string() }])?;
    merge(&mut table, user);
    let mut errors = Vec::new();
    for _ in 0..256 {
        match serde_path_to_error::deserialize::<_, RunConfig>(toml::Value::Table(table.clone())) {
            Ok(cfg) if errors.is_empty() => return Ok(cfg),
            Ok(_) => return Err(errors),
            Err(e) => {
                let message = e.inner().to_string().lines().next().unwrap_or_default().to_string();
                let mut path: Vec<String> = e
                    .path()
                    .iter()
                    .filter_map(|s| match s {
                        serde_path_to_error::Segment::Map { key } => Some(key.clone()),
                        serde_path_to_error::Segment::Seq { index } => Some(index.to_string()),
                        _ => None,
                    })
                    .collect();
                if let Some(name) = unknown_field(&message) {
                    if path.last() != Some(&name) {
                        path.push(name);
                    }
                }
                let key = path.join(".");
                let removed = !path.is_empty() && remove(&mut table, &path);
                errors.push(KeyError { key, message });
                if !removed {
                    return Err(errors);
                }
            }
        }
    }
    Err(errors)
}

/// Overlay `user` on `base`, descending into tables present in both.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

fn remove(table: &mut toml::Table, path: &[String]) -> bool {
    match path {
        [] => false,
        [last] => table.remove(last).is_some(),
        [head, rest @ ..] => match table.get_mut(head) {
            Some(toml::Value::Table(t)) => remove(t, rest),
            // a bad element drops the whole array
            Some(toml::Value::Array(_)) => table.remove(head).is_some(),
            _ => false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(parse(&text, &RunConfig::default()).unwrap(), cfg);
        let lorenz = RunConfig::for_model(Model::Lorenz63);
        assert_eq!(parse(&toml::to_string(&lorenz).unwrap(), &RunConfig::default()).unwrap(), lorenz);
    }

    #[test]
    fn user_values_override_nested_defaults() {
        let cfg = parse("[sensitivity.sampler]\nsamples = 7\n", &RunConfig::default()).unwrap();
        assert_eq!(cfg.sensitivity.sampler.samples, 7);
        assert_eq!(cfg.sensitivity.sampler.runup, 500.0);
    }

    #[test]
    fn every_bad_key_is_listed() {
        let text = "version = 1\nbogus = 3\n[lyapunov]\nk = \"three\"\ntime = 5.0\nextra = 1\n[rijke]\nbeta = 7.0\nxf = 0.2\n";
        let errs = parse(text, &RunConfig::default()).unwrap_err();
        let keys: Vec<&str> = errs.iter().map(|e| e.key.as_str()).collect();
        assert_eq!(errs.len(), 4, "{errs:?}");
        for k in ["bogus", "lyapunov.k", "lyapunov.extra", "rijke.xf"] {
            assert!(keys.contains(&k), "{k} missing from {keys:?}");
        }
    }

    #[test]
    fn empty_file_is_model_default() {
        assert_eq!(parse("", &RunConfig::default()).unwrap(), RunConfig::default());
        let lorenz = RunConfig::for_model(Model::Lorenz63);
        assert_eq!(parse("", &lorenz).unwrap(), lorenz);
    }
}

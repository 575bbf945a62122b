//! Run configuration, presets and the per-stage seed fan-out.
//!
//! A run is described by a TOML file whose sections mirror [`RunConfig`];
//! every key is optional and falls back to the defaults below. The single
//! global `seed` is split into stage seeds with
//! `derive_named(seed, <stage name>)`, so any stage can be rerun alone and
//! reproduce the same numbers.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use trussmodal_core::baselines::BaselineConfig;
use trussmodal_core::fem::SimulationConfig;
use trussmodal_core::identify::IdentifyConfig;
use trussmodal_core::population::TrapezoidSpec;
use trussmodal_core::seed;
use trussmodal_core::sensing::SensingConfig;
use trussmodal_nn::network::{ModelConfig, Variant};
use trussmodal_nn::training::TrainConfig;

use crate::error::{CliError, Result};

/// Environment variable selecting the compute device. Only `cpu` exists.
pub const DEVICE_ENV: &str = "TRUSSMODAL_DEVICE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenPopulation,
    Simulate,
    Sense,
    Train,
    Decompose,
    Identify,
    Baseline,
    Ablate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] =
        [Stage::GenPopulation, Stage::Simulate, Stage::Sense, Stage::Train, Stage::Decompose, Stage::Identify, Stage::Baseline, Stage::Ablate, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenPopulation => "gen-population",
            Stage::Simulate => "simulate",
            Stage::Sense => "sense",
            Stage::Train => "train",
            Stage::Decompose => "decompose",
            Stage::Identify => "identify",
            Stage::Baseline => "baseline",
            Stage::Ablate => "ablate",
            Stage::Report => "report",
        }
    }

    /// Stages whose artifacts this one reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::GenPopulation => &[],
            Stage::Simulate => &[Stage::GenPopulation],
            Stage::Sense => &[Stage::Simulate],
            Stage::Train => &[Stage::Sense],
            Stage::Decompose => &[Stage::Train],
            Stage::Identify => &[Stage::Decompose],
            Stage::Baseline => &[Stage::Sense],
            Stage::Ablate => &[Stage::Identify],
            Stage::Report => &[Stage::Identify],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| CliError::Config(format!("unknown stage {s:?}")))
    }
}

/// Model variants compared by the ablation stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoGnn,
    SetLstm,
    NoIndependence,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoGnn, Ablation::SetLstm, Ablation::NoIndependence];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoGnn => "no_gnn",
            Ablation::SetLstm => "set_lstm",
            Ablation::NoIndependence => "no_independence",
        }
    }

    pub fn variant(self) -> Variant {
        match self {
            Ablation::NoGnn => Variant::NoGnn,
            Ablation::SetLstm => Variant::SetLstm,
            Ablation::Full | Ablation::NoIndependence => Variant::Full,
        }
    }

    pub fn independence(self) -> bool {
        self != Ablation::NoIndependence
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub count: usize,
    pub boundary: TrapezoidSpec,
    /// Train, validation and test fractions.
    pub split_fractions: [f64; 3],
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self { count: 100, boundary: TrapezoidSpec::default(), split_fractions: [0.8, 0.05, 0.15] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Variants trained in addition to the main (full) model.
    pub variants: Vec<Ablation>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { variants: vec![Ablation::NoGnn, Ablation::SetLstm, Ablation::NoIndependence] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Stages executed by `run`, in dependency order.
    pub stages: Vec<Stage>,
    /// Reference modes graded by identification (modes 1..=n).
    pub n_target_modes: usize,
    pub population: PopulationConfig,
    pub simulation: SimulationConfig,
    pub sensing: SensingConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub identify: IdentifyConfig,
    pub baseline: BaselineConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl RunConfig {
    /// Full-scale recipe: 100 trusses, 2000-sample records, `P = 7`.
    pub fn full() -> Self {
        Self {
            seed: 2024,
            out_dir: PathBuf::from("runs/full"),
            stages: Stage::ALL.to_vec(),
            n_target_modes: 4,
            population: PopulationConfig::default(),
            simulation: SimulationConfig::default(),
            sensing: SensingConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            identify: IdentifyConfig::default(),
            baseline: BaselineConfig::default(),
            ablation: AblationConfig::default(),
        }
    }

    /// Laptop-scale recipe: 10 trusses, records decimated to 1000 samples
    /// at 100 Hz, `P = 5`, batches of 2 and 1500 epochs.
    pub fn desk() -> Self {
        let mut c = Self::full();
        c.out_dir = PathBuf::from("runs/desk");
        c.population.count = 10;
        c.sensing.decimation = 2;
        c.model.n_modes = 5;
        c.model.input_len = 1000;
        c.train.batch_size = 2;
        c.train.learning_rate = 1e-3;
        c.train.epochs = 1500;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(CliError::Config(format!("unknown preset {other:?} (expected full or desk)"))),
        }
    }

    /// Read a TOML file; missing keys take the values of `base`.
    pub fn from_toml(text: &str, base: &RunConfig) -> Result<Self> {
        let mut merged = toml::Table::try_from(base).map_err(|e| CliError::Config(e.to_string()))?;
        let overrides: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        merge(&mut merged, overrides);
        let config: RunConfig = merged.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, base: &RunConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration serialises")
    }

    /// Signal length after decimation.
    pub fn signal_len(&self) -> usize {
        self.simulation.n_steps.div_ceil(self.sensing.decimation.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.population.count == 0 {
            return fail("population.count must be positive".into());
        }
        self.population.boundary.validate().map_err(|e| CliError::Config(e.to_string()))?;
        trussmodal_core::graphdata::split_counts(self.population.count, self.population.split_fractions).map_err(|e| CliError::Config(e.to_string()))?;
        if self.sensing.decimation == 0 {
            return fail("sensing.decimation must be at least 1".into());
        }
        if self.model.input_len != self.signal_len() {
            return fail(format!(
                "model.input_len is {} but the sensed records have {} samples (simulation.n_steps / sensing.decimation)",
                self.model.input_len,
                self.signal_len()
            ));
        }
        if self.model.n_modes < self.n_target_modes {
            return fail(format!("model.n_modes ({}) must be at least n_target_modes ({})", self.model.n_modes, self.n_target_modes));
        }
        if self.n_target_modes == 0 || self.n_target_modes > self.simulation.n_reference_modes {
            return fail("n_target_modes must lie in 1..=simulation.n_reference_modes".into());
        }
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.ablation.variants.contains(&Ablation::Full) {
            return fail("ablation.variants lists extra variants; the full model is the main run".into());
        }
        device()?;
        Ok(())
    }

    /// Stage seed: `derive_named(seed, stage)`.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive_named(self.seed, stage)
    }

    pub fn population_seed(&self) -> u64 {
        self.stage_seed("population")
    }

    pub fn train_config(&self, ablation: Ablation) -> TrainConfig {
        TrainConfig { seed: self.stage_seed("train"), independence_enabled: ablation.independence(), ..self.train.clone() }
    }

    pub fn model_config(&self, ablation: Ablation) -> ModelConfig {
        ModelConfig { variant: ablation.variant(), ..self.model.clone() }
    }

    /// SHA-256 of the canonical JSON form, recorded in every manifest.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        canonical.stages.clear();
        hex(&Sha256::digest(serde_json::to_vec(&canonical).expect("run configuration serialises")))
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// The device named by [`DEVICE_ENV`]; unset means `cpu`.
pub fn device() -> Result<String> {
    match std::env::var(DEVICE_ENV) {
        Err(_) => Ok("cpu".into()),
        Ok(v) if v.eq_ignore_ascii_case("cpu") => Ok("cpu".into()),
        Ok(v) => Err(CliError::Config(format!("{DEVICE_ENV}={v}: only the cpu device is available"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        RunConfig::full().validate().unwrap();
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn partial_toml_overrides_nested_keys_only() {
        let c = RunConfig::from_toml("seed = 5\n[train]\nepochs = 12\n", &RunConfig::desk()).unwrap();
        assert_eq!((c.seed, c.train.epochs), (5, 12));
        assert_eq!(c.train.batch_size, 2);
        assert_eq!(c.model.n_modes, 5);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::desk();
        let back = RunConfig::from_toml(&c.to_toml(), &RunConfig::full()).unwrap();
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn inconsistent_signal_length_is_a_config_error() {
        let err = RunConfig::from_toml("[sensing]\ndecimation = 4\n", &RunConfig::desk()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn stage_seeds_differ() {
        let c = RunConfig::desk();
        assert_ne!(c.stage_seed("train"), c.population_seed());
        assert_eq!(c.stage_seed("train"), RunConfig::desk().stage_seed("train"));
    }

    #[test]
    fn stage_names_parse() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("fly".parse::<Stage>().is_err());
    }
}

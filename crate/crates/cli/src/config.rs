//! Run configuration: one TOML file holding every hyperparameter, with
//! defaults for anything left out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use spinfield::conformal::BatchSpec;
use spinfield::indices::Direction;
use spinfield::ingest::{default_indicator_spec, group_labels, validate_spec, IndicatorSpec, LoadOptions, SynthParams};
use spinfield::sampler::{AnnealingSchedule, Boundary, ChainConfig, CoolingMode, InitState};
use spinfield::stats::SdConvention;
use spinfield::Engine;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub engines: Vec<Engine>,
    /// Parallel chains per engine.
    pub chains: usize,
    /// Worker threads for the chains; all available cores when unset.
    pub workers: Option<usize>,
    pub data: DataSection,
    pub synth: SynthSection,
    pub indicators: Vec<IndicatorSpec>,
    pub indices: IndicesSection,
    pub model: ModelSection,
    pub sampler: SamplerSection,
    pub conformal: ConformalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let indicators = default_indicator_spec();
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            engines: vec![Engine::Ising, Engine::Langevin],
            chains: 6,
            workers: None,
            data: DataSection::default(),
            synth: SynthSection::default(),
            indices: IndicesSection::for_spec(&indicators),
            indicators,
            model: ModelSection::default(),
            sampler: SamplerSection::default(),
            conformal: ConformalSection::default(),
        }
    }
}

/// Input table. Without `path`, a synthetic dataset is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub delimiter: char,
    pub unit_id_column: String,
    pub target_column: String,
    /// Empty string disables the centre/periphery column.
    pub center_periph_column: String,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = LoadOptions::default();
        Self {
            path: None,
            delimiter: d.delimiter,
            unit_id_column: d.unit_id_column,
            target_column: d.target_column,
            center_periph_column: d.center_periph_column.unwrap_or_default(),
        }
    }
}

impl DataSection {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            delimiter: self.delimiter,
            unit_id_column: self.unit_id_column.clone(),
            target_column: self.target_column.clone(),
            center_periph_column: (!self.center_periph_column.is_empty())
                .then(|| self.center_periph_column.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_units: usize,
    pub category_weights: [Vec<f64>; 5],
    pub correlation: f64,
    pub target_mean: f64,
    pub target_slope: f64,
    pub profile_effect_sd: f64,
    pub noise_sd: f64,
    pub central_share: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let p = SynthParams::default();
        Self {
            n_units: 1383,
            category_weights: p.category_weights,
            correlation: p.correlation,
            target_mean: p.target_mean,
            target_slope: p.target_slope,
            profile_effect_sd: p.profile_effect_sd,
            noise_sd: p.noise_sd,
            central_share: p.central_share,
        }
    }
}

impl SynthSection {
    pub fn params(&self, spec: &[IndicatorSpec]) -> SynthParams {
        SynthParams {
            category_weights: self.category_weights.clone(),
            correlation: self.correlation,
            target_mean: self.target_mean,
            target_slope: self.target_slope,
            profile_effect_sd: self.profile_effect_sd,
            noise_sd: self.noise_sd,
            central_share: self.central_share,
            spec: spec.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicesSection {
    pub sd_convention: SdConvention,
    /// Penalty direction per composite; unlisted composites are negative.
    pub directions: BTreeMap<String, Direction>,
    /// Number of principal components feeding the field; all when unset.
    pub pca_retain: Option<usize>,
}

impl Default for IndicesSection {
    fn default() -> Self {
        Self::for_spec(&default_indicator_spec())
    }
}

impl IndicesSection {
    fn for_spec(spec: &[IndicatorSpec]) -> Self {
        Self {
            sd_convention: SdConvention::Sample,
            directions: group_labels(spec)
                .into_iter()
                .map(|g| (g, Direction::Negative))
                .collect(),
            pca_retain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub lambda: f64,
    /// Temperature used for likelihood ratios against the reference.
    pub temperature: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            temperature: 1.0,
        }
    }
}

/// Annealing schedule of one engine; unset fields take the engine default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub t0: Option<f64>,
    pub cooling: Option<f64>,
    pub t_min: Option<f64>,
    pub mode: Option<CoolingMode>,
    pub dt0: Option<f64>,
    pub proposal_sd: Option<f64>,
}

impl ScheduleSection {
    pub fn resolve(&self, engine: Engine) -> AnnealingSchedule<f64> {
        let d = match engine {
            Engine::Ising => AnnealingSchedule::metropolis_default(),
            Engine::Langevin => AnnealingSchedule::langevin_default(),
        };
        AnnealingSchedule {
            t0: self.t0.unwrap_or(d.t0),
            cooling: self.cooling.unwrap_or(d.cooling),
            t_min: self.t_min.unwrap_or(d.t_min),
            mode: self.mode.unwrap_or(d.mode),
            dt0: self.dt0.unwrap_or(d.dt0),
            proposal_sd: self.proposal_sd.unwrap_or(d.proposal_sd),
        }
    }

    fn explicit(s: AnnealingSchedule<f64>) -> Self {
        Self {
            t0: Some(s.t0),
            cooling: Some(s.cooling),
            t_min: Some(s.t_min),
            mode: Some(s.mode),
            dt0: Some(s.dt0),
            proposal_sd: Some(s.proposal_sd),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub n_iters: u64,
    pub burn_in_frac: f64,
    pub thin: u64,
    pub retain_last: usize,
    pub energy_stride: u64,
    pub refresh_every: u64,
    pub ising: ScheduleSection,
    pub langevin: ScheduleSection,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let c = ChainConfig::<f64>::new(Engine::Ising);
        Self {
            n_iters: c.n_iters,
            burn_in_frac: c.burn_in_frac,
            thin: c.thin,
            retain_last: c.retain_last,
            energy_stride: c.energy_stride,
            refresh_every: c.refresh_every,
            ising: ScheduleSection::default(),
            langevin: ScheduleSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalSection {
    pub n_total: usize,
    pub n_batches: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub calib_frac: f64,
    pub repetitions: usize,
}

impl Default for ConformalSection {
    fn default() -> Self {
        let b = BatchSpec::default();
        Self {
            n_total: b.n_total,
            n_batches: b.n_batches,
            batch_size: b.batch_size,
            alpha: b.alpha,
            calib_frac: b.calib_frac,
            repetitions: b.repetitions,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let spec = cfg.indicators.clone();
        for g in group_labels(&spec) {
            cfg.indices.directions.entry(g).or_default();
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative data paths are taken relative to the config file.
        if let Some(p) = &cfg.data.path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.data.path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    /// Chain seeds of `engine` start at this value, one per chain.
    pub fn base_seed(&self, engine: Engine) -> u64 {
        let offset = match engine {
            Engine::Ising => 0,
            Engine::Langevin => 1_000_000,
        };
        self.seed.wrapping_add(offset)
    }

    pub fn schedule(&self, engine: Engine) -> AnnealingSchedule<f64> {
        match engine {
            Engine::Ising => self.sampler.ising.resolve(engine),
            Engine::Langevin => self.sampler.langevin.resolve(engine),
        }
    }

    pub fn chain_config(&self, engine: Engine) -> ChainConfig<f64> {
        ChainConfig {
            engine,
            n_iters: self.sampler.n_iters,
            burn_in_frac: self.sampler.burn_in_frac,
            thin: self.sampler.thin,
            retain_last: self.sampler.retain_last,
            seed: self.base_seed(engine),
            schedule: self.schedule(engine),
            init: InitState::Reference,
            boundary: Boundary::for_domain(engine.domain()),
            energy_stride: self.sampler.energy_stride,
            refresh_every: self.sampler.refresh_every,
        }
    }

    pub fn batch_spec(&self) -> BatchSpec {
        let c = &self.conformal;
        BatchSpec {
            n_total: c.n_total,
            n_batches: c.n_batches,
            batch_size: c.batch_size,
            alpha: c.alpha,
            calib_frac: c.calib_frac,
            seed: self.seed,
            repetitions: c.repetitions,
        }
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.engines.is_empty() {
            return bad("engines must list at least one engine".into());
        }
        if self.chains == 0 {
            return bad("chains must be at least 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if let Some(p) = &self.data.path {
            if !p.is_file() {
                return bad(format!("data file {} does not exist", p.display()));
            }
        } else if self.synth.n_units < 2 {
            return bad("synth.n_units must be at least 2".into());
        }
        validate_spec(&self.indicators).map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.model.lambda > 0.0) || !(self.model.temperature > 0.0) {
            return bad("model.lambda and model.temperature must be positive".into());
        }
        for &e in &self.engines {
            self.chain_config(e)
                .validate()
                .map_err(|err| CliError::Config(format!("sampler ({}): {err}", e.name())))?;
        }
        let spec = self.batch_spec();
        spec.validate()
            .map_err(|e| CliError::Config(format!("BatchSpec: {e}")))?;
        let pool = self.chains * self.sampler.retain_last;
        if spec.n_total > pool {
            return bad(format!(
                "BatchSpec: n_total {} exceeds the retained pool of {} configurations ({} chains x retain_last {})",
                spec.n_total, pool, self.chains, self.sampler.retain_last
            ));
        }
        Ok(())
    }

    /// Copy with every default written out and the data path made absolute.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        let mut seen = Vec::new();
        r.engines.retain(|e| {
            let fresh = !seen.contains(e);
            seen.push(*e);
            fresh
        });
        r.data.path = r
            .data
            .path
            .as_ref()
            .map(|p| std::fs::canonicalize(p).unwrap_or_else(|_| p.clone()));
        r.sampler.ising = ScheduleSection::explicit(self.schedule(Engine::Ising));
        r.sampler.langevin = ScheduleSection::explicit(self.schedule(Engine::Langevin));
        r
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn hash(&self) -> String {
        hex_digest(self.to_toml().as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

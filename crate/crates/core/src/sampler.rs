//! Annealed MCMC engines over the soft-spin Hamiltonian.
//!
//! * Metropolis: single-site Gaussian proposals accepted with
//!   `min{1, exp(−ΔH/T)}`; in [`CoolingMode::OnAccept`] the temperature only
//!   drops after an accepted move.
//! * Langevin: synchronous Euler–Maruyama updates
//!   `s ← s − Δt ∇H + √(2TΔt) η`, with `Δt = Δt₀ · T/T₀` so drift and noise
//!   shrink together as the system cools.
//!
//! Chains are independent: each owns its configuration, group-sum cache and
//! RNG stream (`ChaCha8` seeded from `base_seed + chain_index`).

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::EnergyModel;
use crate::graph::GroupSums;
use crate::ingest::ScaleDomain;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(String),
    #[error("divergence at iteration {iteration} (unit {unit})")]
    DivergenceDetected { iteration: u64, unit: usize },
    #[error("need {needed} retained configurations, have {available}")]
    InsufficientSamples { needed: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Ising,
    Langevin,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Ising => "ising",
            Engine::Langevin => "langevin",
        }
    }

    /// Domain each engine simulates in.
    pub fn domain(self) -> ScaleDomain {
        match self {
            Engine::Ising => ScaleDomain::IsingScaled,
            Engine::Langevin => ScaleDomain::RawPercent,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Engine::Ising => "Continuous Ising",
            Engine::Langevin => "Langevin dynamics",
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ising" => Ok(Engine::Ising),
            "langevin" => Ok(Engine::Langevin),
            other => Err(format!("unknown engine `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoolingMode {
    /// Cool after every accepted proposal.
    OnAccept,
    /// Cool after every iteration.
    PerStep,
    /// Constant temperature (no annealing).
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealingSchedule<S> {
    pub t0: S,
    pub cooling: S,
    pub t_min: S,
    pub mode: CoolingMode,
    /// Langevin base step Δt₀.
    pub dt0: S,
    /// Metropolis Gaussian proposal scale.
    pub proposal_sd: S,
}

impl<S: Scalar> AnnealingSchedule<S> {
    pub fn metropolis_default() -> Self {
        Self {
            t0: S::one(),
            cooling: S::lit(0.9995),
            t_min: S::lit(1e-3),
            mode: CoolingMode::OnAccept,
            dt0: S::lit(1e-4),
            proposal_sd: S::lit(0.05),
        }
    }

    pub fn langevin_default() -> Self {
        Self {
            mode: CoolingMode::PerStep,
            ..Self::metropolis_default()
        }
    }

    /// Constant temperature `t`.
    pub fn fixed(t: S, dt0: S, proposal_sd: S) -> Self {
        Self {
            t0: t,
            cooling: S::lit(0.5),
            t_min: S::zero(),
            mode: CoolingMode::Fixed,
            dt0,
            proposal_sd,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::InvalidConfig(m.to_owned()));
        if !(self.t0 > S::zero()) {
            return bad("t0 must be positive");
        }
        if !(self.t_min >= S::zero() && self.t0 > self.t_min) {
            return bad("need t0 > t_min >= 0");
        }
        if !(self.cooling > S::zero() && self.cooling < S::one()) {
            return bad("cooling must lie in (0, 1)");
        }
        if !(self.dt0 > S::zero()) {
            return bad("dt0 must be positive");
        }
        if !(self.proposal_sd > S::zero()) {
            return bad("proposal_sd must be positive");
        }
        Ok(())
    }
}

/// Temperature evolution of one chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState<S> {
    schedule: AnnealingSchedule<S>,
    temperature: S,
}

impl<S: Scalar> ScheduleState<S> {
    pub fn new(schedule: AnnealingSchedule<S>) -> Self {
        Self {
            temperature: schedule.t0,
            schedule,
        }
    }

    pub fn temperature(&self) -> S {
        self.temperature
    }

    /// Langevin step size `Δt₀ · T / T₀`.
    pub fn step_size(&self) -> S {
        self.schedule.dt0 * self.temperature / self.schedule.t0
    }

    fn cool(&mut self) {
        self.temperature = (self.schedule.cooling * self.temperature).max(self.schedule.t_min);
    }

    pub fn after_accept(&mut self) {
        if self.schedule.mode == CoolingMode::OnAccept {
            self.cool();
        }
    }

    pub fn after_step(&mut self) {
        if self.schedule.mode == CoolingMode::PerStep {
            self.cool();
        }
    }
}

/// What happens to values that leave the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary<S> {
    /// Fold back into `[lo, hi]`; keeps Gaussian proposals symmetric.
    Reflect { lo: S, hi: S },
    /// Clamp into `[lo, hi]`.
    Clamp { lo: S, hi: S },
    Unbounded,
}

impl<S: Scalar> Boundary<S> {
    /// Reflecting for the scaled domain, clamping for raw percentages.
    pub fn for_domain(domain: ScaleDomain) -> Self {
        let (lo, hi) = domain.bounds();
        match domain {
            ScaleDomain::IsingScaled => Boundary::Reflect { lo, hi },
            ScaleDomain::RawPercent => Boundary::Clamp { lo, hi },
        }
    }

    pub fn apply(&self, x: S) -> S {
        match *self {
            Boundary::Reflect { lo, hi } => reflect(x, lo, hi),
            Boundary::Clamp { lo, hi } => x.max(lo).min(hi),
            Boundary::Unbounded => x,
        }
    }

    /// True when `x` is beyond ten domain widths of the interval (or not
    /// finite).
    pub fn diverged(&self, x: S) -> bool {
        if !x.is_finite() {
            return true;
        }
        match *self {
            Boundary::Reflect { lo, hi } | Boundary::Clamp { lo, hi } => {
                let guard = S::lit(10.0) * (hi - lo);
                x < lo - guard || x > hi + guard
            }
            Boundary::Unbounded => false,
        }
    }
}

/// Folds `x` into `[lo, hi]` by repeated mirror reflection.
pub fn reflect<S: Scalar>(x: S, lo: S, hi: S) -> S {
    if x >= lo && x <= hi {
        return x;
    }
    let width = hi - lo;
    let period = width + width;
    let mut y = (x - lo) % period;
    if y < S::zero() {
        y += period;
    }
    if y > width {
        y = period - y;
    }
    lo + y
}

/// Metropolis acceptance for energy change `delta_h` at temperature `t`,
/// given a uniform draw `u` in [0, 1).
#[inline]
pub fn metropolis_accept<S: Scalar>(delta_h: S, t: S, u: S) -> bool {
    delta_h <= S::zero() || u < (-delta_h / t).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitState<S> {
    /// Start at the observed configuration.
    Reference,
    Custom(Vec<S>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig<S> {
    pub engine: Engine,
    pub n_iters: u64,
    pub burn_in_frac: f64,
    pub thin: u64,
    pub retain_last: usize,
    pub seed: u64,
    pub schedule: AnnealingSchedule<S>,
    pub init: InitState<S>,
    pub boundary: Boundary<S>,
    /// Energy is recorded every `energy_stride` iterations (and at 0).
    pub energy_stride: u64,
    /// Full recomputation of group sums and energy every this many steps.
    pub refresh_every: u64,
}

impl<S: Scalar> ChainConfig<S> {
    /// Defaults for an engine in its native domain.
    pub fn new(engine: Engine) -> Self {
        Self {
            engine,
            n_iters: 600_000,
            burn_in_frac: 0.10,
            thin: 60,
            retain_last: 9_000,
            seed: 0,
            schedule: match engine {
                Engine::Ising => AnnealingSchedule::metropolis_default(),
                Engine::Langevin => AnnealingSchedule::langevin_default(),
            },
            init: InitState::Reference,
            boundary: Boundary::for_domain(engine.domain()),
            energy_stride: 10,
            refresh_every: 100_000,
        }
    }

    pub fn burn_in(&self) -> u64 {
        (self.burn_in_frac * self.n_iters as f64).floor() as u64
    }

    /// Number of thinned post-burn-in snapshots the run produces.
    pub fn available_snapshots(&self) -> u64 {
        (self.n_iters - self.burn_in()) / self.thin.max(1)
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: String| Err(SamplerError::InvalidConfig(m));
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.burn_in_frac) {
            return bad(format!("burn_in_frac {} outside [0, 1)", self.burn_in_frac));
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        if self.energy_stride == 0 || self.refresh_every == 0 {
            return bad("energy_stride and refresh_every must be at least 1".into());
        }
        if self.retain_last as u64 > self.available_snapshots() {
            return bad(format!(
                "retain_last {} exceeds the {} thinned post-burn-in snapshots",
                self.retain_last,
                self.available_snapshots()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyPoint<S> {
    pub iteration: u64,
    pub energy: S,
    pub temperature: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace<S> {
    pub engine: Engine,
    pub seed: u64,
    pub energies: Vec<EnergyPoint<S>>,
    /// Oldest first; the last `retain_last` thinned post-burn-in states.
    pub retained: Vec<Vec<S>>,
    pub accept_count: u64,
    pub final_temperature: S,
    pub final_state: Vec<S>,
    pub n_iters: u64,
    pub burn_in: u64,
    pub schedule: AnnealingSchedule<S>,
}

/// Outcome of one Metropolis proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetropolisMove<S> {
    pub unit: usize,
    pub proposal: S,
    pub accepted: bool,
}

/// Mutable state of one chain.
#[derive(Debug, Clone)]
pub struct ChainState<'m, S> {
    model: &'m EnergyModel<S>,
    s: Vec<S>,
    sums: GroupSums<S>,
    energy: S,
    schedule: ScheduleState<S>,
    boundary: Boundary<S>,
    rng: ChaCha8Rng,
    scratch: Vec<S>,
}

impl<'m, S: Scalar> ChainState<'m, S> {
    pub fn new(
        model: &'m EnergyModel<S>,
        init: Vec<S>,
        schedule: AnnealingSchedule<S>,
        boundary: Boundary<S>,
        seed: u64,
    ) -> Self {
        assert_eq!(init.len(), model.n_units(), "initial state length mismatch");
        let sums = GroupSums::new(model.graph(), &init);
        let energy = model.hamiltonian_with_sums(&init, &sums);
        Self {
            model,
            scratch: vec![S::zero(); init.len()],
            s: init,
            sums,
            energy,
            schedule: ScheduleState::new(schedule),
            boundary,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn state(&self) -> &[S] {
        &self.s
    }

    /// Energy tracked incrementally (Metropolis) or as of the last refresh.
    pub fn energy(&self) -> S {
        self.energy
    }

    pub fn temperature(&self) -> S {
        self.schedule.temperature()
    }

    /// Full recomputation of the group sums and the energy.
    pub fn refresh(&mut self) {
        self.sums.refresh(self.model.graph(), &self.s);
        self.energy = self.model.hamiltonian_with_sums(&self.s, &self.sums);
    }

    #[inline]
    fn normal(&mut self) -> S {
        S::lit(self.rng.sample::<f64, _>(StandardNormal))
    }

    /// Single-site Gaussian proposal with Metropolis acceptance.
    pub fn metropolis_step(&mut self) -> MetropolisMove<S> {
        let n = self.s.len();
        let i = self.rng.random_range(0..n);
        let eta = self.normal() * self.schedule.schedule.proposal_sd;
        let proposal = self.boundary.apply(self.s[i] + eta);
        let delta = self.model.delta_h(&self.sums, &self.s, i, proposal);
        let t = self.schedule.temperature();
        let accepted = delta <= S::zero() || {
            let u = S::lit(self.rng.random::<f64>());
            metropolis_accept(delta, t, u)
        };
        if accepted {
            self.sums.update(self.model.graph(), i, self.s[i], proposal);
            self.s[i] = proposal;
            self.energy += delta;
            self.schedule.after_accept();
        }
        self.schedule.after_step();
        MetropolisMove {
            unit: i,
            proposal,
            accepted,
        }
    }

    /// Synchronous Euler–Maruyama update of every unit. `iteration` is only
    /// used to label a divergence.
    pub fn langevin_step(&mut self, iteration: u64) -> Result<(), SamplerError> {
        let t = self.schedule.temperature();
        let dt = self.schedule.step_size();
        let noise = (S::lit(2.0) * t * dt).sqrt();
        let mut scratch = std::mem::take(&mut self.scratch);
        self.model.grad_into(&self.s, &self.sums, &mut scratch);
        for i in 0..self.s.len() {
            let eta = self.normal();
            let x = self.s[i] - dt * scratch[i] + noise * eta;
            if self.boundary.diverged(x) {
                self.scratch = scratch;
                return Err(SamplerError::DivergenceDetected { iteration, unit: i });
            }
            scratch[i] = self.boundary.apply(x);
        }
        std::mem::swap(&mut self.s, &mut scratch);
        self.scratch = scratch;
        self.sums.refresh(self.model.graph(), &self.s);
        self.schedule.after_accept();
        self.schedule.after_step();
        Ok(())
    }

    fn current_energy(&mut self, engine: Engine) -> S {
        if engine == Engine::Langevin {
            self.energy = self.model.hamiltonian_with_sums(&self.s, &self.sums);
        }
        self.energy
    }
}

/// Runs one chain: `n_iters` engine steps, burn-in discarded, every
/// `thin`-th later state kept, and only the last `retain_last` of those
/// returned.
pub fn run_chain<S: Scalar>(
    model: &EnergyModel<S>,
    cfg: &ChainConfig<S>,
    s_ref: &[S],
) -> Result<ChainTrace<S>, SamplerError> {
    cfg.validate()?;
    let init = match &cfg.init {
        InitState::Reference => s_ref.to_vec(),
        InitState::Custom(v) => v.clone(),
    };
    if init.len() != model.n_units() {
        return Err(SamplerError::InvalidConfig(format!(
            "initial state has {} entries for {} units",
            init.len(),
            model.n_units()
        )));
    }
    let mut chain = ChainState::new(model, init, cfg.schedule, cfg.boundary, cfg.seed);
    let burn = cfg.burn_in();
    let mut energies = vec![EnergyPoint {
        iteration: 0,
        energy: chain.energy(),
        temperature: chain.temperature(),
    }];
    let mut retained: VecDeque<Vec<S>> = VecDeque::with_capacity(cfg.retain_last);
    let mut accept_count = 0u64;

    for t in 1..=cfg.n_iters {
        match cfg.engine {
            Engine::Ising => {
                if chain.metropolis_step().accepted {
                    accept_count += 1;
                }
            }
            Engine::Langevin => {
                chain.langevin_step(t)?;
                accept_count += 1;
            }
        }
        if t % cfg.refresh_every == 0 {
            chain.refresh();
        }
        if t % cfg.energy_stride == 0 {
            let energy = chain.current_energy(cfg.engine);
            energies.push(EnergyPoint {
                iteration: t,
                energy,
                temperature: chain.temperature(),
            });
        }
        if cfg.retain_last > 0 && t > burn && (t - burn).is_multiple_of(cfg.thin) {
            if retained.len() == cfg.retain_last {
                retained.pop_front();
            }
            retained.push_back(chain.state().to_vec());
        }
    }

    Ok(ChainTrace {
        engine: cfg.engine,
        seed: cfg.seed,
        energies,
        retained: retained.into(),
        accept_count,
        final_temperature: chain.temperature(),
        final_state: chain.state().to_vec(),
        n_iters: cfg.n_iters,
        burn_in: burn,
        schedule: cfg.schedule,
    })
}

/// `k_chains` independent chains seeded `base_seed + chain_index`, on at
/// most `workers` threads (rayon's default pool when `None`). Results are in
/// chain order and do not depend on scheduling.
pub fn run_parallel<S: Scalar>(
    model: &EnergyModel<S>,
    cfg: &ChainConfig<S>,
    s_ref: &[S],
    k_chains: usize,
    base_seed: u64,
    workers: Option<usize>,
) -> Result<Vec<Result<ChainTrace<S>, SamplerError>>, SamplerError> {
    if k_chains == 0 {
        return Err(SamplerError::InvalidConfig("need at least one chain".into()));
    }
    let run = || {
        (0..k_chains)
            .into_par_iter()
            .map(|k| {
                let mut c = cfg.clone();
                c.seed = base_seed.wrapping_add(k as u64);
                run_chain(model, &c, s_ref)
            })
            .collect::<Vec<_>>()
    };
    match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| SamplerError::InvalidConfig(e.to_string()))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

/// The `n` most recent retained states pooled across chains: newest of
/// every chain first (in chain order), then the next newest, and so on.
pub fn pool_recent<S: Scalar>(
    traces: &[ChainTrace<S>],
    n: usize,
) -> Result<Vec<&[S]>, SamplerError> {
    let available: usize = traces.iter().map(|t| t.retained.len()).sum();
    if available < n {
        return Err(SamplerError::InsufficientSamples {
            needed: n,
            available,
        });
    }
    let mut out = Vec::with_capacity(n);
    let mut depth = 0;
    while out.len() < n {
        for t in traces {
            if depth < t.retained.len() && out.len() < n {
                out.push(t.retained[t.retained.len() - 1 - depth].as_slice());
            }
        }
        depth += 1;
    }
    Ok(out)
}

/// Elementwise mean of the pooled `last_n` most recent states, mapped back
/// to percent.
pub fn posterior_mean<S: Scalar>(
    traces: &[ChainTrace<S>],
    last_n: usize,
    domain: ScaleDomain,
) -> Result<Vec<S>, SamplerError> {
    if last_n == 0 {
        return Err(SamplerError::InsufficientSamples {
            needed: 1,
            available: 0,
        });
    }
    let pool = pool_recent(traces, last_n)?;
    let n_units = pool[0].len();
    let mut acc = vec![S::zero(); n_units];
    for cfg in &pool {
        for (a, &v) in acc.iter_mut().zip(cfg.iter()) {
            *a += v;
        }
    }
    let denom = S::from_count(pool.len());
    Ok(acc.into_iter().map(|a| domain.inverse(a / denom)).collect())
}

//! Soft-spin Hamiltonian
//!
//! `H(s) = −½ Σ_{i,j} J_ij s_i s_j − Σ_i h_i s_i + (λ/2) Σ_i s_i²`
//!
//! with the double sum over ordered pairs, plus local increments, the
//! gradient, and energy/likelihood comparisons against a reference state.

use thiserror::Error;

use crate::graph::{neighbor_sum, GroupSums, InteractionGraph};
use crate::indices::ExternalField;
use crate::ingest::ScaleDomain;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("invalid energy model: {0}")]
    InvalidModel(String),
    #[error("reference energy is zero")]
    DivisionByZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel<S> {
    graph: InteractionGraph,
    field: ExternalField<S>,
    lambda_reg: S,
    temperature: S,
}

impl<S: Scalar> EnergyModel<S> {
    pub fn new(
        graph: InteractionGraph,
        field: ExternalField<S>,
        lambda_reg: S,
        temperature: S,
    ) -> Result<Self, EnergyError> {
        if field.len() != graph.n_units() {
            return Err(EnergyError::InvalidModel(format!(
                "field has {} entries for {} units",
                field.len(),
                graph.n_units()
            )));
        }
        if field.h.iter().any(|h| !h.is_finite()) {
            return Err(EnergyError::InvalidModel("non-finite field".into()));
        }
        if !(lambda_reg > S::zero()) {
            return Err(EnergyError::InvalidModel("lambda must be positive".into()));
        }
        if !(temperature > S::zero()) {
            return Err(EnergyError::InvalidModel("temperature must be positive".into()));
        }
        Ok(Self {
            graph,
            field,
            lambda_reg,
            temperature,
        })
    }

    pub fn graph(&self) -> &InteractionGraph {
        &self.graph
    }

    pub fn field(&self) -> &[S] {
        &self.field.h
    }

    pub fn lambda(&self) -> S {
        self.lambda_reg
    }

    pub fn temperature(&self) -> S {
        self.temperature
    }

    pub fn n_units(&self) -> usize {
        self.graph.n_units()
    }

    pub fn hamiltonian(&self, s: &[S]) -> S {
        let sums = GroupSums::new(&self.graph, s);
        self.hamiltonian_with_sums(s, &sums)
    }

    /// Hamiltonian using already-current group sums.
    pub fn hamiltonian_with_sums(&self, s: &[S], sums: &GroupSums<S>) -> S {
        assert_eq!(s.len(), self.n_units(), "configuration length mismatch");
        let half = S::lit(0.5);
        // Σ_{i≠j, same group} s_i s_j = Σ_g [(Σ_g s)² − Σ_g s²]
        let mut coupling = S::zero();
        for (g, grp) in self.graph.groups.iter().enumerate() {
            if grp.members.len() < 2 {
                continue;
            }
            let total = sums.group_sum(g);
            let sq: S = grp.members.iter().map(|&i| s[i] * s[i]).sum();
            coupling += total * total - sq;
        }
        let mut field = S::zero();
        let mut reg = S::zero();
        for (&si, &hi) in s.iter().zip(&self.field.h) {
            field += hi * si;
            reg += si * si;
        }
        -half * coupling - field + half * self.lambda_reg * reg
    }

    /// `H(s with s_i ← s_new) − H(s)` in O(1).
    #[inline]
    pub fn delta_h(&self, sums: &GroupSums<S>, s: &[S], i: usize, s_new: S) -> S {
        let old = s[i];
        let delta = s_new - old;
        let nb = neighbor_sum(&self.graph, sums, s, i);
        -delta * nb - self.field.h[i] * delta
            + S::lit(0.5) * self.lambda_reg * (s_new * s_new - old * old)
    }

    /// `(∇H)_i = −Σ_j J_ij s_j − h_i + λ s_i`.
    pub fn grad(&self, s: &[S]) -> Vec<S> {
        let sums = GroupSums::new(&self.graph, s);
        let mut out = vec![S::zero(); s.len()];
        self.grad_into(s, &sums, &mut out);
        out
    }

    pub fn grad_into(&self, s: &[S], sums: &GroupSums<S>, out: &mut [S]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = -neighbor_sum(&self.graph, sums, s, i) - self.field.h[i] + self.lambda_reg * s[i];
        }
    }
}

/// A configuration in a given domain, with an advisory cached energy.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinConfiguration<S> {
    pub values: Vec<S>,
    pub domain: ScaleDomain,
    pub cached_energy: Option<S>,
}

impl<S: Scalar> SpinConfiguration<S> {
    pub fn new(values: Vec<S>, domain: ScaleDomain) -> Self {
        Self {
            values,
            domain,
            cached_energy: None,
        }
    }

    /// Cached energy if present, otherwise computes and stores it.
    pub fn energy(&mut self, m: &EnergyModel<S>) -> S {
        if let Some(e) = self.cached_energy {
            return e;
        }
        let e = m.hamiltonian(&self.values);
        self.cached_energy = Some(e);
        e
    }

    pub fn to_percent(&self) -> Vec<S> {
        self.values.iter().map(|&v| self.domain.inverse(v)).collect()
    }
}

/// `H / H_ref`.
pub fn energy_ratio<S: Scalar>(h: S, h_ref: S) -> Result<S, EnergyError> {
    if h_ref == S::zero() {
        return Err(EnergyError::DivisionByZero);
    }
    Ok(h / h_ref)
}

/// `log(P(s)/P(s_ref)) = −(H − H_ref)/T`; the partition function cancels.
pub fn log_likelihood_ratio<S: Scalar>(h: S, h_ref: S, temperature: S) -> S {
    -(h - h_ref) / temperature
}

//! Conceptual similarity network: units sharing an identical categorical
//! profile are fully interconnected with unit weight.
//!
//! The coupling matrix is a disjoint union of cliques, so it is stored as a
//! partition of the unit indices and never materialized.

use std::collections::BTreeMap;

use crate::ingest::{Dataset, Profile};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub profile: Profile,
    /// Canonical unit indices, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    /// Ordered by profile tuple.
    pub groups: Vec<Group>,
    pub unit_to_group: Vec<usize>,
}

impl InteractionGraph {
    /// Groups units by profile, indexing them in slice order.
    pub fn from_profiles(profiles: &[Profile]) -> Self {
        let mut by_profile: BTreeMap<Profile, Vec<usize>> = BTreeMap::new();
        for (i, p) in profiles.iter().enumerate() {
            by_profile.entry(*p).or_default().push(i);
        }
        let mut unit_to_group = vec![0; profiles.len()];
        let groups: Vec<Group> = by_profile
            .into_iter()
            .enumerate()
            .map(|(g, (profile, members))| {
                for &i in &members {
                    unit_to_group[i] = g;
                }
                Group { profile, members }
            })
            .collect();
        Self {
            groups,
            unit_to_group,
        }
    }

    pub fn n_units(&self) -> usize {
        self.unit_to_group.len()
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.unit_to_group[i]
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.members.len()).collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.groups[self.unit_to_group[i]].members.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.groups
            .iter()
            .map(|g| g.members.len() * (g.members.len().saturating_sub(1)) / 2)
            .sum()
    }

    /// Implied coupling `J_ij`.
    pub fn coupling(&self, i: usize, j: usize) -> bool {
        i != j && self.unit_to_group[i] == self.unit_to_group[j]
    }
}

/// Two units are adjacent iff all five profile attributes coincide.
pub fn build_graph(d: &Dataset) -> InteractionGraph {
    let profiles: Vec<Profile> = d.records.iter().map(|r| r.profile).collect();
    InteractionGraph::from_profiles(&profiles)
}

/// Per-group sums of a configuration, kept in step with the spins so that
/// `Σ_j J_ij s_j` is available in O(1). Each chain owns its own copy.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSums<S> {
    sums: Vec<S>,
    updates_since_refresh: usize,
}

impl<S: Scalar> GroupSums<S> {
    pub fn new(g: &InteractionGraph, s: &[S]) -> Self {
        let mut out = Self {
            sums: vec![S::zero(); g.groups.len()],
            updates_since_refresh: 0,
        };
        out.refresh(g, s);
        out
    }

    /// Recomputes every sum from scratch.
    pub fn refresh(&mut self, g: &InteractionGraph, s: &[S]) {
        for (sum, grp) in self.sums.iter_mut().zip(&g.groups) {
            *sum = grp.members.iter().map(|&i| s[i]).sum();
        }
        self.updates_since_refresh = 0;
    }

    /// Records that unit `i` moved from `old` to `new`.
    #[inline]
    pub fn update(&mut self, g: &InteractionGraph, i: usize, old: S, new: S) {
        self.sums[g.unit_to_group[i]] += new - old;
        self.updates_since_refresh += 1;
    }

    pub fn updates_since_refresh(&self) -> usize {
        self.updates_since_refresh
    }

    pub fn group_sum(&self, group: usize) -> S {
        self.sums[group]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.sums
    }
}

/// `Σ_j J_ij s_j` for unit `i`.
#[inline]
pub fn neighbor_sum<S: Scalar>(g: &InteractionGraph, sums: &GroupSums<S>, s: &[S], i: usize) -> S {
    if g.groups[g.unit_to_group[i]].members.len() == 1 {
        return S::zero();
    }
    sums.group_sum(g.unit_to_group[i]) - s[i]
}

/// Extreme eigenvalues of the coupling matrix. A clique of size `m` has
/// spectrum `{m − 1, −1 (×(m − 1))}`; singletons contribute 0.
pub fn spectrum_extremes<S: Scalar>(g: &InteractionGraph) -> (S, S) {
    let largest = g.group_sizes().into_iter().max().unwrap_or(0);
    if largest >= 2 {
        (S::from_count(largest - 1), -S::one())
    } else {
        (S::zero(), S::zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(code: u8) -> Profile {
        Profile([code, 1, 1, 0, 1])
    }

    fn brute_neighbor_sum(g: &InteractionGraph, s: &[f64], i: usize) -> f64 {
        (0..s.len()).filter(|&j| g.coupling(i, j)).map(|j| s[j]).sum()
    }

    #[test]
    fn distinct_profiles_are_edgeless() {
        let g = InteractionGraph::from_profiles(&[p(1), p(2), p(3)]);
        assert_eq!(g.groups.len(), 3);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(spectrum_extremes::<f64>(&g), (0.0, 0.0));
    }

    #[test]
    fn identical_profiles_form_one_clique() {
        let g = InteractionGraph::from_profiles(&[p(1); 4]);
        assert_eq!(g.groups.len(), 1);
        assert!((0..4).all(|i| g.degree(i) == 3));
        assert_eq!(spectrum_extremes::<f64>(&g), (3.0, -1.0));
    }

    #[test]
    fn aab_has_single_edge() {
        let profiles = [p(1), p(1), p(2)];
        let g = InteractionGraph::from_profiles(&profiles);
        let mut edges = Vec::new();
        for i in 0..3 {
            for j in (i + 1)..3 {
                if profiles[i] == profiles[j] {
                    edges.push((i, j));
                }
                assert_eq!(g.coupling(i, j), profiles[i] == profiles[j]);
            }
        }
        assert_eq!(edges, vec![(0, 1)]);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn neighbor_sum_examples() {
        let g = InteractionGraph::from_profiles(&[p(1), p(1), p(1), p(2)]);
        let s = [2.0, 3.0, 5.0, 7.0];
        let sums = GroupSums::new(&g, &s);
        assert_eq!(neighbor_sum(&g, &sums, &s, 0), 8.0);
        assert_eq!(neighbor_sum(&g, &sums, &s, 3), 0.0);
    }

    #[test]
    fn incremental_sums_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let profiles: Vec<Profile> = (0..60).map(|_| p(rng.random_range(1..=3))).collect();
        let g = InteractionGraph::from_profiles(&profiles);
        let mut s: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut sums = GroupSums::new(&g, &s);
        for _ in 0..1000 {
            let i = rng.random_range(0..60);
            let new = rng.random_range(-1.0..1.0);
            sums.update(&g, i, s[i], new);
            s[i] = new;
            let q = rng.random_range(0..60);
            let fast = neighbor_sum(&g, &sums, &s, q);
            let slow = brute_neighbor_sum(&g, &s, q);
            assert_relative_eq!(fast, slow, epsilon = 1e-12, max_relative = 1e-10);
        }
        assert_eq!(sums.updates_since_refresh(), 1000);
    }

    #[test]
    fn degree_sum_identity() {
        let profiles: Vec<Profile> = [1, 1, 2, 3, 3, 3, 1].iter().map(|&c| p(c)).collect();
        let g = InteractionGraph::from_profiles(&profiles);
        let total: usize = (0..g.n_units()).map(|i| g.degree(i)).sum();
        let via_sizes: usize = g.group_sizes().iter().map(|m| m * (m - 1)).sum();
        assert_eq!(total, via_sizes);
    }
}

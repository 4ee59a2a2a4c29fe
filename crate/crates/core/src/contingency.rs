//! Contingency vectors: enumeration, uniform sampling, feasibility and the
//! projection from continuous generator output onto feasible k-outage patterns.

use std::collections::BTreeSet;

use itertools::Itertools;
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, NetworkCase};
use crate::rng;

/// Binary outage pattern over the N contingencable branches, stored as the
/// sorted list of outaged positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContingencyVector {
    n: usize,
    outages: Vec<usize>,
}

impl ContingencyVector {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            outages: Vec::new(),
        }
    }

    pub fn from_positions(n: usize, mut positions: Vec<usize>) -> Result<Self> {
        positions.sort_unstable();
        positions.dedup();
        if let Some(&p) = positions.last() {
            if p >= n {
                return Err(Error::Dimension(format!(
                    "position {p} out of range for N={n}"
                )));
            }
        }
        Ok(Self {
            n,
            outages: positions,
        })
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        Self {
            n: bits.len(),
            outages: bits
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| i)
                .collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Hamming weight.
    pub fn k(&self) -> usize {
        self.outages.len()
    }

    pub fn outages(&self) -> &[usize] {
        &self.outages
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.outages.binary_search(&pos).is_ok()
    }

    pub fn bits(&self) -> Vec<bool> {
        let mut b = vec![false; self.n];
        for &p in &self.outages {
            b[p] = true;
        }
        b
    }

    /// `{0,1}^N` embedding.
    pub fn to_real(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        for &p in &self.outages {
            v[p] = 1.0;
        }
        v
    }

    /// 1-based branch-table row numbers of the outaged branches.
    pub fn branch_numbers(&self, case: &NetworkCase) -> Vec<usize> {
        self.outages
            .iter()
            .map(|&p| case.contingency_branch(p) + 1)
            .collect()
    }
}

/// The feasible set F_k: weight in `[k_min, k_max]`, no excluded element, no islanding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibleSetSpec {
    pub k_min: usize,
    pub k_max: usize,
    #[serde(default)]
    pub excluded: BTreeSet<usize>,
}

impl FeasibleSetSpec {
    pub fn exact(k: usize) -> Self {
        Self::range(k, k)
    }

    pub fn range(k_min: usize, k_max: usize) -> Self {
        Self {
            k_min,
            k_max,
            excluded: BTreeSet::new(),
        }
    }

    pub fn with_excluded(mut self, excluded: impl IntoIterator<Item = usize>) -> Self {
        self.excluded = excluded.into_iter().collect();
        self
    }

    /// Same exclusions, fixed weight `k`.
    pub fn at(&self, k: usize) -> Self {
        Self {
            k_min: k,
            k_max: k,
            excluded: self.excluded.clone(),
        }
    }

    fn validate(&self, case: &NetworkCase) -> Result<()> {
        if self.k_min < 1 || self.k_min > self.k_max {
            return Err(Error::InvalidArgument(format!(
                "invalid k range [{}, {}]",
                self.k_min, self.k_max
            )));
        }
        if self.k_max > case.n_contingencable() {
            return Err(Error::InvalidArgument(format!(
                "k_max {} exceeds N={}",
                self.k_max,
                case.n_contingencable()
            )));
        }
        Ok(())
    }

    pub fn is_feasible(&self, case: &NetworkCase, c: &ContingencyVector) -> bool {
        c.n() == case.n_contingencable()
            && (self.k_min..=self.k_max).contains(&c.k())
            && c.outages().iter().all(|p| !self.excluded.contains(p))
            && grid::is_connected(case, c)
    }
}

/// Every feasible pattern, weight by weight, each weight in lexicographic order
/// of the outage position lists.
pub fn enumerate_feasible<'a>(
    case: &'a NetworkCase,
    spec: &'a FeasibleSetSpec,
) -> Result<impl Iterator<Item = ContingencyVector> + 'a> {
    spec.validate(case)?;
    let n = case.n_contingencable();
    let allowed: Vec<usize> = (0..n)
        .filter(|p| !spec.excluded.contains(p) && !case.is_bridge(*p))
        .collect();
    Ok((spec.k_min..=spec.k_max).flat_map(move |k| {
        allowed
            .clone()
            .into_iter()
            .combinations(k)
            .map(move |pos| ContingencyVector { n, outages: pos })
            .filter(move |c| grid::is_connected(case, c))
    }))
}

pub const REJECTION_BUDGET: usize = 10_000;

/// Uniform draw over the feasible set by rejection: draw k uniformly in the
/// spec's range, then a uniform weight-k vector, until feasible.
pub fn uniform_sample(
    case: &NetworkCase,
    spec: &FeasibleSetSpec,
    seed: u64,
) -> Result<ContingencyVector> {
    let mut rng = rng::stream(seed, &[]);
    uniform_sample_with(case, spec, &mut rng)
}

pub fn uniform_sample_with(
    case: &NetworkCase,
    spec: &FeasibleSetSpec,
    rng: &mut rng::Rng,
) -> Result<ContingencyVector> {
    spec.validate(case)?;
    let n = case.n_contingencable();
    for _ in 0..REJECTION_BUDGET {
        let k = rng.random_range(spec.k_min..=spec.k_max);
        let mut outages = index::sample(rng, n, k).into_vec();
        outages.sort_unstable();
        let c = ContingencyVector { n, outages };
        if spec.is_feasible(case, &c) {
            return Ok(c);
        }
    }
    Err(Error::NearEmptyFeasibleSet(REJECTION_BUDGET))
}

/// Projects a real vector onto a feasible weight-k pattern (`spec` must fix k).
///
/// The k largest entries are selected, ties going to the lower index. Elements
/// that can never be feasible (excluded, or whose single outage already
/// islands the grid) are skipped. If the selection still islands, the
/// lowest-valued selected entry is repeatedly swapped for the highest-valued
/// untried entry; if that runs out of candidates, a greedy pass in rank order
/// keeps every entry that leaves the grid connected.
pub fn project(
    case: &NetworkCase,
    raw: &[f64],
    spec: &FeasibleSetSpec,
) -> Result<ContingencyVector> {
    spec.validate(case)?;
    if spec.k_min != spec.k_max {
        return Err(Error::InvalidArgument("projection needs a fixed k".into()));
    }
    let k = spec.k_min;
    let n = case.n_contingencable();
    if raw.len() != n {
        return Err(Error::Dimension(format!(
            "raw length {} but N={n}",
            raw.len()
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "projection input is not finite".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n)
        .filter(|p| !spec.excluded.contains(p) && !case.is_bridge(*p))
        .collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]).then(a.cmp(&b)));
    if order.len() < k {
        return Err(Error::ProjectionInfeasible { k });
    }
    let make = |sel: &[usize]| {
        let mut outages = sel.to_vec();
        outages.sort_unstable();
        ContingencyVector { n, outages }
    };

    // Selected entries, kept in descending rank order.
    let mut selected: Vec<usize> = order[..k].to_vec();
    let c = make(&selected);
    if grid::is_connected(case, &c) {
        return Ok(c);
    }
    for &candidate in &order[k..] {
        selected.pop();
        selected.push(candidate);
        let c = make(&selected);
        if grid::is_connected(case, &c) {
            return Ok(c);
        }
    }

    let mut greedy = Vec::with_capacity(k);
    for &candidate in &order {
        greedy.push(candidate);
        if !grid::is_connected(case, &make(&greedy)) {
            greedy.pop();
        } else if greedy.len() == k {
            return Ok(make(&greedy));
        }
    }
    Err(Error::ProjectionInfeasible { k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::grid::tests::{bus, gen, line, path3};
    use crate::grid::BusType;
    use proptest::prelude::*;

    /// Four buses in a ring plus a chord: every pair of branches can be removed
    /// from the 5-edge graph... except pairs that isolate a degree-2 bus.
    fn ring4() -> NetworkCase {
        NetworkCase::new(
            "ring4",
            100.0,
            (1..=4)
                .map(|i| {
                    bus(
                        i,
                        if i == 1 { BusType::Slack } else { BusType::Pq },
                        1.0,
                        0.0,
                    )
                })
                .collect(),
            vec![
                line(1, 2, 0.01, 0.1),
                line(2, 3, 0.01, 0.1),
                line(3, 4, 0.01, 0.1),
                line(4, 1, 0.01, 0.1),
            ],
            vec![gen(1, 0.0, 1.0)],
        )
        .unwrap()
    }

    /// Complete graph on four buses: no pair of outages islands it.
    fn k4() -> NetworkCase {
        let mut lines = Vec::new();
        for i in 1..=4 {
            for j in i + 1..=4 {
                lines.push(line(i, j, 0.01, 0.1));
            }
        }
        NetworkCase::new(
            "k4",
            100.0,
            (1..=4)
                .map(|i| {
                    bus(
                        i,
                        if i == 1 { BusType::Slack } else { BusType::Pq },
                        1.0,
                        0.0,
                    )
                })
                .collect(),
            lines,
            vec![gen(1, 0.0, 1.0)],
        )
        .unwrap()
    }

    fn cv(n: usize, p: &[usize]) -> ContingencyVector {
        ContingencyVector::from_positions(n, p.to_vec()).unwrap()
    }

    #[test]
    fn enumerates_all_pairs_of_a_four_edge_mesh() {
        // A 4-cycle survives any single outage, and any pair islands it, so use
        // K4 restricted to four branches via exclusions instead.
        let case = k4();
        let spec = FeasibleSetSpec::exact(2).with_excluded([4, 5]);
        let got: Vec<_> = enumerate_feasible(&case, &spec).unwrap().collect();
        let want: Vec<_> = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]
            .iter()
            .map(|p| cv(6, p))
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn all_lines_out_of_a_ring_is_empty() {
        let case = ring4();
        assert_eq!(
            enumerate_feasible(&case, &FeasibleSetSpec::exact(4))
                .unwrap()
                .count(),
            0
        );
        assert_eq!(
            enumerate_feasible(&case, &FeasibleSetSpec::exact(1))
                .unwrap()
                .count(),
            4
        );
    }

    #[test]
    fn uniform_sample_respects_exclusions_and_seed() {
        let case = NetworkCase::new(
            "tri",
            100.0,
            (1..=3)
                .map(|i| {
                    bus(
                        i,
                        if i == 1 { BusType::Slack } else { BusType::Pq },
                        1.0,
                        0.0,
                    )
                })
                .collect(),
            vec![
                line(1, 2, 0.01, 0.1),
                line(2, 3, 0.01, 0.1),
                line(1, 3, 0.01, 0.1),
            ],
            vec![gen(1, 0.0, 1.0)],
        )
        .unwrap();
        let spec = FeasibleSetSpec::exact(1).with_excluded([1]);
        for seed in 0..200 {
            let c = uniform_sample(&case, &spec, seed).unwrap();
            assert!(c.outages() == [0] || c.outages() == [2]);
            assert_eq!(c, uniform_sample(&case, &spec, seed).unwrap());
        }
    }

    #[test]
    fn uniform_sample_reports_empty_feasible_set() {
        let case = path3();
        let err = uniform_sample(&case, &FeasibleSetSpec::exact(1), 5).unwrap_err();
        assert!(matches!(err, Error::NearEmptyFeasibleSet(REJECTION_BUDGET)));
    }

    #[test]
    fn projection_examples() {
        let case = k4();
        let raw = [0.9, 0.1, 0.8, 0.2, -1.0, -1.0];
        assert_eq!(
            project(&case, &raw, &FeasibleSetSpec::exact(2))
                .unwrap()
                .outages(),
            [0, 2]
        );
        let raw = [0.5, 0.5, 0.1, 0.0, 0.0, 0.0];
        assert_eq!(
            project(&case, &raw, &FeasibleSetSpec::exact(1))
                .unwrap()
                .outages(),
            [0]
        );
    }

    #[test]
    fn projection_repairs_a_bridge() {
        // Path 1-2-3 plus a parallel pair 2-3: branch 0 is a bridge, branches 1
        // and 2 are not.
        let case = NetworkCase::new(
            "bridge",
            100.0,
            (1..=3)
                .map(|i| {
                    bus(
                        i,
                        if i == 1 { BusType::Slack } else { BusType::Pq },
                        1.0,
                        0.0,
                    )
                })
                .collect(),
            vec![
                line(1, 2, 0.01, 0.1),
                line(2, 3, 0.01, 0.1),
                line(2, 3, 0.01, 0.2),
            ],
            vec![gen(1, 0.0, 1.0)],
        )
        .unwrap();
        let raw = [5.0f64, 0.3, 0.7];
        // Brute force: best-ranked feasible singleton.
        let best = (0..3)
            .filter(|&p| FeasibleSetSpec::exact(1).is_feasible(&case, &cv(3, &[p])))
            .max_by(|&a, &b| raw[a].total_cmp(&raw[b]))
            .unwrap();
        assert_eq!(
            project(&case, &raw, &FeasibleSetSpec::exact(1))
                .unwrap()
                .outages(),
            [best]
        );
        // Both parallel branches together island bus 3.
        assert!(matches!(
            project(&case, &raw, &FeasibleSetSpec::exact(2)),
            Err(Error::ProjectionInfeasible { k: 2 })
        ));
    }

    #[test]
    fn projection_rejects_bad_input() {
        let case = k4();
        assert!(project(&case, &[0.0; 5], &FeasibleSetSpec::exact(1)).is_err());
        assert!(project(&case, &[f64::NAN; 6], &FeasibleSetSpec::exact(1)).is_err());
        assert!(project(&case, &[0.0; 6], &FeasibleSetSpec::range(1, 2)).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_feasible_idempotent_and_rank_invariant(
            raw in prop::collection::vec(-3.0f64..3.0, 20),
            k in 1usize..5,
        ) {
            let case = cases::ieee14();
            let spec = FeasibleSetSpec::exact(k);
            match project(&case, &raw, &spec) {
                Ok(c) => {
                    prop_assert!(spec.is_feasible(&case, &c));
                    prop_assert_eq!(project(&case, &c.to_real(), &spec).unwrap(), c.clone());
                    let warped: Vec<f64> = raw.iter().map(|v| (2.0 * v).exp() + 7.0).collect();
                    prop_assert_eq!(project(&case, &warped, &spec).unwrap(), c);
                }
                Err(e) => {
                    let ok = matches!(e, Error::ProjectionInfeasible { .. });
                    prop_assert!(ok);
                }
            }
        }
    }
}

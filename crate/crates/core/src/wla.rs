//! Credibility-driven weight learning.
//!
//! Every normal node keeps a [`CredibilityLedger`] with one entry per tracked
//! neighbor. Each step it scores neighbor `j` by a reward
//! `r = exp(-s * θ(k))` of the observed discrepancy `s`, multiplies the reward
//! into the credibility `Q_ij`, and normalizes credibilities over its current
//! neighbors to obtain the consensus weights.
//!
//! Credibilities are products of values in `(0, 1]` and underflow within a few
//! thousand steps for a faulty neighbor, so the ledger stores
//! `L_ij = ln Q_ij` and normalizes with a max-shifted softmax. The largest term
//! is always `exp(0) = 1`, which keeps the denominator at least one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Total weight of a faulty node's default frozen row.
pub const DEFAULT_FAULTY_ROW_TOTAL: f64 = 0.8;

/// `θ(k) = theta0 + theta_slope * k`, the rate of the exponential reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSchedule {
    pub theta0: f64,
    pub theta_slope: f64,
}

impl Default for RewardSchedule {
    fn default() -> Self {
        RewardSchedule {
            theta0: 1e-4,
            theta_slope: 1e-6,
        }
    }
}

impl RewardSchedule {
    pub fn new(theta0: f64, theta_slope: f64) -> Result<Self> {
        let sched = RewardSchedule { theta0, theta_slope };
        sched.validate("reward")?;
        Ok(sched)
    }

    pub(crate) fn validate(&self, field: &str) -> Result<()> {
        if !(self.theta0.is_finite() && self.theta0 > 0.0) {
            return Err(Error::validation(format!("{field}.theta0"), "must be finite and > 0"));
        }
        if !(self.theta_slope.is_finite() && self.theta_slope >= 0.0) {
            return Err(Error::validation(
                format!("{field}.theta_slope"),
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn theta(&self, k: u64) -> f64 {
        self.theta0 + self.theta_slope * k as f64
    }

    /// `ln f(s, k) = -s * θ(k)`.
    pub fn log_reward(&self, s: f64, k: u64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::Argument(format!("discrepancy must be >= 0, got {s}")));
        }
        Ok(-s * self.theta(k))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LedgerKind {
    /// Tracks exactly the fixed in-neighbor set.
    Fixed,
    /// Tracks every other node and re-applies each node's last reward while it
    /// is out of contact.
    Stochastic,
}

/// Log-domain credibility state of one normal node.
#[derive(Clone, Debug, PartialEq)]
pub struct CredibilityLedger {
    owner: usize,
    kind: LedgerKind,
    tracked: Vec<bool>,
    log_cred: Vec<f64>,
    last_log_reward: Vec<f64>,
    n_tracked: usize,
}

impl CredibilityLedger {
    /// Ledger for a fixed topology tracking `neighbors` (ids < `n`, no `owner`).
    pub fn fixed(owner: usize, n: usize, neighbors: &[usize]) -> Result<Self> {
        if owner >= n {
            return Err(Error::Argument(format!("owner {owner} out of range for {n} nodes")));
        }
        let mut tracked = vec![false; n];
        for &j in neighbors {
            if j >= n || j == owner {
                return Err(Error::Argument(format!("node {owner} cannot track {j}")));
            }
            tracked[j] = true;
        }
        let n_tracked = tracked.iter().filter(|&&t| t).count();
        Ok(CredibilityLedger {
            owner,
            kind: LedgerKind::Fixed,
            tracked,
            log_cred: vec![0.0; n],
            last_log_reward: Vec::new(),
            n_tracked,
        })
    }

    /// Ledger for a stochastic topology, tracking every node except `owner`.
    pub fn stochastic(owner: usize, n: usize) -> Result<Self> {
        if owner >= n {
            return Err(Error::Argument(format!("owner {owner} out of range for {n} nodes")));
        }
        let mut tracked = vec![true; n];
        tracked[owner] = false;
        Ok(CredibilityLedger {
            owner,
            kind: LedgerKind::Stochastic,
            tracked,
            log_cred: vec![0.0; n],
            last_log_reward: vec![0.0; n],
            n_tracked: n - 1,
        })
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn kind(&self) -> LedgerKind {
        self.kind
    }

    pub fn is_tracked(&self, j: usize) -> bool {
        self.tracked.get(j).copied().unwrap_or(false)
    }

    /// `L_ij = ln Q_ij`, or `None` for an untracked node.
    pub fn log_credibility(&self, j: usize) -> Option<f64> {
        self.is_tracked(j).then(|| self.log_cred[j])
    }

    /// `ln r_ij` from the last contact (stochastic ledgers only).
    pub fn last_log_reward(&self, j: usize) -> Option<f64> {
        (self.kind == LedgerKind::Stochastic && self.is_tracked(j)).then(|| self.last_log_reward[j])
    }

    /// Adds `c` to every credibility. Weights are invariant under this shift.
    pub fn shift(&mut self, c: f64) {
        for (l, &t) in self.log_cred.iter_mut().zip(&self.tracked) {
            if t {
                *l += c;
            }
        }
    }

    /// Overwrites `L_ij`; used to seed ledgers in tests and tools.
    pub fn set_log_credibility(&mut self, j: usize, value: f64) -> Result<()> {
        if !self.is_tracked(j) {
            return Err(Error::Contract(format!("node {} does not track {j}", self.owner)));
        }
        self.log_cred[j] = value;
        Ok(())
    }

    fn check_observations(&self, observations: &[(usize, f64)]) -> Result<()> {
        let mut prev: Option<usize> = None;
        for &(j, s) in observations {
            if !self.is_tracked(j) {
                return Err(Error::Contract(format!(
                    "node {} received an observation for untracked node {j}",
                    self.owner
                )));
            }
            if prev.is_some_and(|p| p >= j) {
                return Err(Error::Contract(
                    "observations must be keyed by strictly ascending node id".into(),
                ));
            }
            if !(s >= 0.0) {
                return Err(Error::Argument(format!("discrepancy for {j} is {s}")));
            }
            prev = Some(j);
        }
        Ok(())
    }

    /// Fixed-topology update: `L_ij += ln f(s_ij, k)` for every tracked `j`.
    ///
    /// `observations` must cover exactly the tracked neighbors, ascending.
    pub fn observe_fixed(
        &mut self,
        observations: &[(usize, f64)],
        k: u64,
        sched: &RewardSchedule,
    ) -> Result<()> {
        if self.kind != LedgerKind::Fixed {
            return Err(Error::Contract("observe_fixed on a stochastic ledger".into()));
        }
        self.check_observations(observations)?;
        if observations.len() != self.n_tracked {
            return Err(Error::Contract(format!(
                "node {} expected {} observations, got {}",
                self.owner,
                self.n_tracked,
                observations.len()
            )));
        }
        let theta = sched.theta(k);
        for &(j, s) in observations {
            self.log_cred[j] -= s * theta;
        }
        Ok(())
    }

    /// Stochastic-topology update. Current neighbors (the observation keys)
    /// get a fresh reward; every other tracked node has its last reward
    /// applied again. A node never contacted keeps `ln r = 0`.
    pub fn observe_stochastic(
        &mut self,
        observations: &[(usize, f64)],
        k: u64,
        sched: &RewardSchedule,
    ) -> Result<()> {
        if self.kind != LedgerKind::Stochastic {
            return Err(Error::Contract("observe_stochastic on a fixed ledger".into()));
        }
        self.check_observations(observations)?;
        let theta = sched.theta(k);
        for &(j, s) in observations {
            self.last_log_reward[j] = -s * theta;
        }
        for ((l, &r), &t) in self
            .log_cred
            .iter_mut()
            .zip(&self.last_log_reward)
            .zip(&self.tracked)
        {
            if t {
                *l += r;
            }
        }
        Ok(())
    }

    fn normalize(&self, neighbors: &[usize], scale: f64) -> Result<WeightRow> {
        let mut max = f64::NEG_INFINITY;
        for &j in neighbors {
            if !self.is_tracked(j) {
                return Err(Error::Contract(format!("node {} does not track {j}", self.owner)));
            }
            max = max.max(self.log_cred[j]);
        }
        let mut entries: Vec<(usize, f64)> = neighbors
            .iter()
            .map(|&j| (j, (self.log_cred[j] - max).exp()))
            .collect();
        let total: f64 = entries.iter().map(|e| e.1).sum();
        for e in &mut entries {
            e.1 = scale * e.1 / total;
        }
        Ok(WeightRow {
            owner: self.owner,
            entries,
        })
    }

    /// `a_ij = Q_ij / Σ Q * (1 - 1/|N_i|)` over the fixed neighbor set.
    ///
    /// A single neighbor gives scale 0: the node then never moves toward anyone.
    pub fn weights_fixed(&self, neighbors: &[usize]) -> Result<WeightRow> {
        if neighbors.is_empty() {
            return Err(Error::Contract(format!(
                "node {} has an empty neighbor set",
                self.owner
            )));
        }
        let scale = 1.0 - 1.0 / neighbors.len() as f64;
        self.normalize(neighbors, scale)
    }

    /// `a_ij = Q_ij / Σ Q * γ` over this step's neighbors; empty row if none.
    pub fn weights_stochastic(&self, current: &[usize], gamma: f64) -> Result<WeightRow> {
        check_gamma(gamma)?;
        if current.is_empty() {
            return Ok(WeightRow::empty(self.owner));
        }
        self.normalize(current, gamma)
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::validation("gamma", format!("{gamma} not in (0, 1)")));
    }
    Ok(())
}

/// One node's consensus weights, sparse over its neighbors. Absent ids weigh 0.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightRow {
    owner: usize,
    entries: Vec<(usize, f64)>,
}

impl WeightRow {
    pub fn new(owner: usize, mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        WeightRow { owner, entries }
    }

    pub fn empty(owner: usize) -> Self {
        WeightRow {
            owner,
            entries: Vec::new(),
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, j: usize) -> f64 {
        self.entries
            .binary_search_by_key(&j, |e| e.0)
            .map_or(0.0, |pos| self.entries[pos].1)
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// `Σ_j a_ij (v_j - v_i)`.
    pub fn apply(&self, values: &[f64]) -> f64 {
        let own = values[self.owner];
        self.entries.iter().map(|&(j, a)| a * (values[j] - own)).sum()
    }
}

/// The constant row `a_ij(k) = a_ij(0)` used by faulty nodes when they act
/// normally.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenRow(WeightRow);

/// Validates and freezes a faulty node's initial row: entries must be
/// finite and nonnegative and sum to strictly less than one.
pub fn faulty_weight_row(initial: WeightRow) -> Result<FrozenRow> {
    if initial.entries.iter().any(|e| !(e.1.is_finite() && e.1 >= 0.0)) {
        return Err(Error::validation(
            "faulty_row",
            format!("node {} has a negative or non-finite weight", initial.owner),
        ));
    }
    if initial.entries.iter().any(|e| e.0 == initial.owner) {
        return Err(Error::validation(
            "faulty_row",
            format!("node {} has a self weight", initial.owner),
        ));
    }
    let sum = initial.sum();
    if sum >= 1.0 {
        return Err(Error::validation(
            "faulty_row",
            format!(
                "initial row of node {} sums to {sum}; need sum of a_ij(0) < 1",
                initial.owner
            ),
        ));
    }
    Ok(FrozenRow(initial))
}

impl FrozenRow {
    /// `total / |candidates|` on every candidate.
    pub fn uniform(owner: usize, candidates: &[usize], total: f64) -> Result<Self> {
        let w = if candidates.is_empty() {
            0.0
        } else {
            total / candidates.len() as f64
        };
        faulty_weight_row(WeightRow::new(
            owner,
            candidates.iter().map(|&j| (j, w)).collect(),
        ))
    }

    pub fn row(&self) -> &WeightRow {
        &self.0
    }

    /// The frozen row with every entry outside `current` zeroed.
    pub fn restricted(&self, current: &[usize]) -> WeightRow {
        WeightRow {
            owner: self.0.owner,
            entries: self
                .0
                .entries
                .iter()
                .filter(|e| current.binary_search(&e.0).is_ok())
                .copied()
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DEFAULT_SCHEDULE: RewardSchedule = RewardSchedule {
        theta0: 1e-4,
        theta_slope: 1e-6,
    };

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn log_reward_examples() {
        assert_eq!(DEFAULT_SCHEDULE.log_reward(0.0, 17).unwrap(), 0.0);
        let lr = DEFAULT_SCHEDULE.log_reward(1000.0, 0).unwrap();
        assert!(close(lr, -0.1, 1e-15));
        assert!(close(lr.exp(), 0.904837418, 1e-9));
        assert!(DEFAULT_SCHEDULE.log_reward(10.0, 5).unwrap() > DEFAULT_SCHEDULE.log_reward(20.0, 5).unwrap());
        assert!(DEFAULT_SCHEDULE.log_reward(-1.0, 0).is_err());
        assert!(DEFAULT_SCHEDULE.log_reward(f64::NAN, 0).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(RewardSchedule::new(0.0, 0.0).is_err());
        assert!(RewardSchedule::new(1e-4, -1.0).is_err());
        assert_eq!(RewardSchedule::default(), DEFAULT_SCHEDULE);
    }

    #[test]
    fn observe_fixed_examples() {
        let mut ledger = CredibilityLedger::fixed(0, 3, &[1, 2]).unwrap();
        ledger.observe_fixed(&[(1, 0.0), (2, 0.0)], 0, &DEFAULT_SCHEDULE).unwrap();
        assert_eq!(ledger.log_credibility(1), Some(0.0));

        let mut single = CredibilityLedger::fixed(0, 2, &[1]).unwrap();
        single.observe_fixed(&[(1, 1000.0)], 0, &DEFAULT_SCHEDULE).unwrap();
        assert!(close(single.log_credibility(1).unwrap(), -0.1, 1e-12));
        single.observe_fixed(&[(1, 1000.0)], 1, &DEFAULT_SCHEDULE).unwrap();
        assert!(close(single.log_credibility(1).unwrap(), -0.201, 1e-12));
    }

    #[test]
    fn observe_fixed_contract() {
        let mut ledger = CredibilityLedger::fixed(0, 4, &[1, 2]).unwrap();
        assert!(matches!(
            ledger.observe_fixed(&[(1, 0.0), (3, 0.0)], 0, &DEFAULT_SCHEDULE),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            ledger.observe_fixed(&[(1, 0.0)], 0, &DEFAULT_SCHEDULE),
            Err(Error::Contract(_))
        ));
        assert!(ledger.observe_stochastic(&[], 0, &DEFAULT_SCHEDULE).is_err());
    }

    #[test]
    fn observe_stochastic_examples() {
        let sched = RewardSchedule::new(1e-4, 0.0).unwrap();
        let mut ledger = CredibilityLedger::stochastic(0, 4).unwrap();
        for k in 0..5 {
            ledger.observe_stochastic(&[], k, &sched).unwrap();
        }
        assert_eq!(ledger.log_credibility(3), Some(0.0));

        // One contact with ln r = -0.1, then three silent steps.
        ledger.observe_stochastic(&[(1, 1000.0)], 5, &sched).unwrap();
        for k in 6..9 {
            ledger.observe_stochastic(&[], k, &sched).unwrap();
        }
        assert!(close(ledger.log_credibility(1).unwrap(), -0.4, 1e-12));

        // A zero-discrepancy contact resets the stale reward.
        ledger.observe_stochastic(&[(1, 0.0)], 9, &sched).unwrap();
        let frozen = ledger.log_credibility(1).unwrap();
        for k in 10..15 {
            ledger.observe_stochastic(&[], k, &sched).unwrap();
        }
        assert_eq!(ledger.log_credibility(1).unwrap(), frozen);
        assert!(ledger.observe_stochastic(&[(0, 1.0)], 15, &sched).is_err());
    }

    #[test]
    fn weights_fixed_examples() {
        let ledger = CredibilityLedger::fixed(0, 4, &[1, 2, 3]).unwrap();
        let row = ledger.weights_fixed(&[1, 2]).unwrap();
        assert!(close(row.get(1), 0.25, 1e-15) && close(row.get(2), 0.25, 1e-15));
        let row = ledger.weights_fixed(&[1, 2, 3]).unwrap();
        for j in 1..4 {
            assert!(close(row.get(j), 2.0 / 9.0, 1e-15));
        }
        assert_eq!(row.get(0), 0.0);

        let mut skewed = CredibilityLedger::fixed(0, 3, &[1, 2]).unwrap();
        skewed.set_log_credibility(2, 3f64.ln()).unwrap();
        let row = skewed.weights_fixed(&[1, 2]).unwrap();
        assert!(close(row.get(1), 0.125, 1e-15));
        assert!(close(row.get(2), 0.375, 1e-15));
        assert!(skewed.weights_fixed(&[]).is_err());
    }

    #[test]
    fn single_neighbor_has_zero_scale() {
        let ledger = CredibilityLedger::fixed(0, 2, &[1]).unwrap();
        let row = ledger.weights_fixed(&[1]).unwrap();
        assert_eq!(row.sum(), 0.0);
    }

    #[test]
    fn weights_stochastic_examples() {
        let ledger = CredibilityLedger::stochastic(0, 5).unwrap();
        let row = ledger.weights_stochastic(&[1, 2, 3, 4], 0.8).unwrap();
        for j in 1..5 {
            assert!(close(row.get(j), 0.2, 1e-15));
        }
        assert_eq!(ledger.weights_stochastic(&[], 0.8).unwrap().sum(), 0.0);

        let mut skewed = CredibilityLedger::stochastic(0, 3).unwrap();
        skewed.set_log_credibility(2, 3f64.ln()).unwrap();
        let row = skewed.weights_stochastic(&[1, 2], 0.8).unwrap();
        assert!(close(row.get(1), 0.2, 1e-15));
        assert!(close(row.get(2), 0.6, 1e-15));
        assert!(matches!(
            skewed.weights_stochastic(&[1], 1.0),
            Err(Error::Validation { .. })
        ));
        assert!(skewed.weights_stochastic(&[1], 0.0).is_err());
    }

    #[test]
    fn extreme_credibilities_do_not_underflow() {
        let mut ledger = CredibilityLedger::fixed(0, 3, &[1, 2]).unwrap();
        ledger.set_log_credibility(1, -1e6).unwrap();
        ledger.set_log_credibility(2, -2e6).unwrap();
        let row = ledger.weights_fixed(&[1, 2]).unwrap();
        assert!(close(row.get(1), 0.5, 1e-15));
        assert_eq!(row.get(2), 0.0);
    }

    #[test]
    fn frozen_row_examples() {
        let row = FrozenRow::uniform(0, &[1, 2, 3, 4], 0.8).unwrap();
        for j in 1..5 {
            assert!(close(row.row().get(j), 0.2, 1e-15));
        }
        let bad = WeightRow::new(0, vec![(1, 0.6), (2, 0.6)]);
        assert!(matches!(faulty_weight_row(bad), Err(Error::Validation { .. })));
        let one = WeightRow::new(0, vec![(1, 0.5), (2, 0.5)]);
        assert!(faulty_weight_row(one).is_err());
        let r = row.restricted(&[2, 4]);
        assert_eq!(r.entries(), &[(2, 0.2), (4, 0.2)]);
        assert_eq!(r.get(1), 0.0);
    }

    /// Algorithms 1-2 evaluated literally with products of rewards.
    struct DirectProduct {
        q: Vec<f64>,
        r: Vec<f64>,
    }

    impl DirectProduct {
        fn new(n: usize) -> Self {
            DirectProduct {
                q: vec![1.0; n],
                r: vec![1.0; n],
            }
        }
        fn observe(&mut self, obs: &[(usize, f64)], k: u64, sched: &RewardSchedule, stochastic: bool) {
            let theta = sched.theta0 + sched.theta_slope * k as f64;
            if stochastic {
                for &(j, s) in obs {
                    self.r[j] = (-s * theta).exp();
                }
                for j in 0..self.q.len() {
                    self.q[j] *= self.r[j];
                }
            } else {
                for &(j, s) in obs {
                    self.q[j] *= (-s * theta).exp();
                }
            }
        }
        fn weights(&self, nbrs: &[usize], scale: f64) -> Vec<f64> {
            let total: f64 = nbrs.iter().map(|&j| self.q[j]).sum();
            nbrs.iter().map(|&j| self.q[j] / total * scale).collect()
        }
    }

    fn obs_strategy(n: usize) -> impl Strategy<Value = Vec<Vec<(bool, f64)>>> {
        prop::collection::vec(
            prop::collection::vec((any::<bool>(), 0.0f64..1e4), n),
            1..=50,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn fixed_matches_direct_product(steps in obs_strategy(6)) {
            let nbrs = [1usize, 2, 3, 4, 5];
            let mut ledger = CredibilityLedger::fixed(0, 6, &nbrs).unwrap();
            let mut oracle = DirectProduct::new(6);
            for (k, step) in steps.iter().enumerate() {
                let obs: Vec<_> = nbrs.iter().map(|&j| (j, step[j].1)).collect();
                ledger.observe_fixed(&obs, k as u64, &DEFAULT_SCHEDULE).unwrap();
                oracle.observe(&obs, k as u64, &DEFAULT_SCHEDULE, false);
                let row = ledger.weights_fixed(&nbrs).unwrap();
                let expect = oracle.weights(&nbrs, 0.8);
                for (idx, &j) in nbrs.iter().enumerate() {
                    prop_assert!(close(row.get(j), expect[idx], 1e-9));
                }
            }
        }

        #[test]
        fn stochastic_matches_direct_product(steps in obs_strategy(6)) {
            let mut ledger = CredibilityLedger::stochastic(0, 6).unwrap();
            let mut oracle = DirectProduct::new(6);
            for (k, step) in steps.iter().enumerate() {
                let obs: Vec<_> = (1..6).filter(|&j| step[j].0).map(|j| (j, step[j].1)).collect();
                ledger.observe_stochastic(&obs, k as u64, &DEFAULT_SCHEDULE).unwrap();
                oracle.observe(&obs, k as u64, &DEFAULT_SCHEDULE, true);
                let current: Vec<usize> = obs.iter().map(|o| o.0).collect();
                let row = ledger.weights_stochastic(&current, 0.8).unwrap();
                if current.is_empty() {
                    prop_assert_eq!(row.sum(), 0.0);
                    continue;
                }
                let expect = oracle.weights(&current, 0.8);
                for (idx, &j) in current.iter().enumerate() {
                    prop_assert!(close(row.get(j), expect[idx], 1e-9));
                }
            }
        }

        #[test]
        fn row_sums_are_exact(
            logs in prop::collection::vec(-1e4f64..0.0, 1..40),
            mask in prop::collection::vec(any::<bool>(), 40),
            gamma in 0.01f64..0.99,
        ) {
            let n = logs.len() + 1;
            let nbrs: Vec<usize> = (1..n).collect();
            let mut fixed = CredibilityLedger::fixed(0, n, &nbrs).unwrap();
            let mut stoch = CredibilityLedger::stochastic(0, n).unwrap();
            for (idx, &l) in logs.iter().enumerate() {
                fixed.set_log_credibility(idx + 1, l).unwrap();
                stoch.set_log_credibility(idx + 1, l).unwrap();
            }
            let row = fixed.weights_fixed(&nbrs).unwrap();
            prop_assert!(close(row.sum(), 1.0 - 1.0 / nbrs.len() as f64, 1e-12));
            let current: Vec<usize> = nbrs.iter().copied().filter(|&j| mask[j - 1]).collect();
            let row = stoch.weights_stochastic(&current, gamma).unwrap();
            let expect = if current.is_empty() { 0.0 } else { gamma };
            prop_assert!(close(row.sum(), expect, 1e-12));
            prop_assert!(row.entries().iter().all(|e| e.1 >= 0.0 && e.1 < 1.0));
        }

        #[test]
        fn shift_invariance(
            logs in prop::collection::vec(-500f64..0.0, 2..20),
            c in -1e3f64..1e3,
        ) {
            let n = logs.len() + 1;
            let nbrs: Vec<usize> = (1..n).collect();
            let mut a = CredibilityLedger::stochastic(0, n).unwrap();
            for (idx, &l) in logs.iter().enumerate() {
                a.set_log_credibility(idx + 1, l).unwrap();
            }
            let mut b = a.clone();
            b.shift(c);
            let fa = a.weights_stochastic(&nbrs, 0.8).unwrap();
            let fb = b.weights_stochastic(&nbrs, 0.8).unwrap();
            for &j in &nbrs {
                prop_assert!(close(fa.get(j), fb.get(j), 1e-12));
            }
        }

        #[test]
        fn dominance(la in -600f64..0.0, gap in 1e-6f64..100.0, others in prop::collection::vec(-600f64..0.0, 0..6)) {
            let n = others.len() + 3;
            let nbrs: Vec<usize> = (1..n).collect();
            let mut ledger = CredibilityLedger::fixed(0, n, &nbrs).unwrap();
            ledger.set_log_credibility(1, la - gap).unwrap();
            ledger.set_log_credibility(2, la).unwrap();
            for (idx, &l) in others.iter().enumerate() {
                ledger.set_log_credibility(idx + 3, l).unwrap();
            }
            let row = ledger.weights_fixed(&nbrs).unwrap();
            prop_assert!(row.get(1) < row.get(2));
        }

        #[test]
        fn reward_bounds(s in 0.0f64..1e6, k in 0u64..1_000_000) {
            let r = DEFAULT_SCHEDULE.log_reward(s, k).unwrap().exp();
            prop_assert!(r > 0.0 || s * DEFAULT_SCHEDULE.theta(k) > 700.0);
            prop_assert!(r <= 1.0);
            if s * DEFAULT_SCHEDULE.theta(k) > 1e-15 {
                prop_assert!(r < 1.0);
            }
            prop_assert_eq!(DEFAULT_SCHEDULE.log_reward(0.0, k).unwrap().exp(), 1.0);
        }

        #[test]
        fn credibility_is_non_increasing(obs in prop::collection::vec(0.0f64..1e4, 1..100)) {
            let mut ledger = CredibilityLedger::fixed(0, 2, &[1]).unwrap();
            let mut prev = 0.0;
            for (k, &s) in obs.iter().enumerate() {
                ledger.observe_fixed(&[(1, s)], k as u64, &DEFAULT_SCHEDULE).unwrap();
                let now = ledger.log_credibility(1).unwrap();
                prop_assert!(now <= prev);
                prev = now;
            }
        }
    }
}

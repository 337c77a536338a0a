//! Clock synchronization on top of the credibility ledger.
//!
//! Node `i` owns an unobservable hardware clock `τ*_i(t) = α*_i t + β*_i` and
//! a logical clock `τ_i = α_i τ*_i + β_i`. Each round `k` (at `t_k = k T`)
//! every node broadcasts its readings; a normal node then
//!
//! 1. estimates `η_ij = α*_j / α*_i` from the hardware readings of rounds
//!    `k` and `k - 1`,
//! 2. scores and moves its skew correction:
//!    `α_i += Σ a'_ij (η_ij α_j - α_i + w'_ij)`,
//! 3. scores and moves its offset correction with the round-`k` value of `α_i`:
//!    `β_i += Σ a''_ij (τ_j - α_i τ*_i - β_i + w''_ij)`.
//!
//! Skew and offset keep separate ledgers with separate reward schedules.
//! Consensus of `x' = α α*` and `x'' = α β* + β` over the normal nodes is
//! what synchronizes the logical clocks.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fault::{ifn_acts_normal, sample_noise, sample_random, FaultClass, NoiseSpec, RandomSpec};
use crate::rng::{purpose, StreamKey};
use crate::topology::{is_rooted_subgraph, Digraph};
use crate::wla::{CredibilityLedger, FrozenRow, RewardSchedule, WeightRow, DEFAULT_FAULTY_ROW_TOTAL};
use crate::consensus::WeightMatrix;

/// `τ*(t) = alpha t + beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HardwareClock {
    pub alpha: f64,
    pub beta: f64,
}

impl HardwareClock {
    pub fn read(&self, t: f64) -> f64 {
        self.alpha * t + self.beta
    }
}

/// Ratio estimate `(τ*_j(t1) - τ*_j(t2)) / (τ*_i(t1) - τ*_i(t2))` from two
/// readings of each clock, given as `(reading at t1, reading at t2)`.
pub fn eta(readings_j: (f64, f64), readings_i: (f64, f64)) -> Result<f64> {
    let den = readings_i.0 - readings_i.1;
    if den == 0.0 || !den.is_finite() {
        return Err(Error::Numerical(format!(
            "ratio estimate with denominator {den}; sampling instants must differ"
        )));
    }
    Ok((readings_j.0 - readings_j.1) / den)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClockConfig {
    pub topology: Digraph,
    pub nodes: Vec<FaultClass>,
    /// Bound on the channel noise of the skew exchange.
    pub skew_noise: NoiseSpec,
    /// Bound on the channel noise of the offset exchange.
    pub offset_noise: NoiseSpec,
    pub skew_reward: RewardSchedule,
    pub offset_reward: RewardSchedule,
    pub alpha_star_init: RandomSpec,
    pub beta_star_init: RandomSpec,
    pub alpha0: f64,
    pub beta0: f64,
    pub random_alpha: RandomSpec,
    pub random_beta: RandomSpec,
    pub period: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Normal nodes keep their initial equal-credibility rows.
    pub wla_disabled: bool,
    pub snapshot_steps: Vec<usize>,
}

impl ClockConfig {
    /// Defaults of the 16-node experiment on `topology`, all nodes normal.
    ///
    /// The skew channel bound is 1/1000 of the offset bound: skew residuals
    /// are ratios near 1, and a bound of 5 on them makes every `α_i` a random
    /// walk with unit-scale steps.
    pub fn with_defaults(topology: Digraph) -> Self {
        let n = topology.n();
        ClockConfig {
            topology,
            nodes: vec![FaultClass::Normal; n],
            skew_noise: NoiseSpec { bound: 5e-3 },
            offset_noise: NoiseSpec { bound: 5.0 },
            skew_reward: RewardSchedule {
                theta0: 0.1,
                theta_slope: 1e-3,
            },
            offset_reward: RewardSchedule::default(),
            alpha_star_init: RandomSpec { lo: 0.7, hi: 1.3 },
            beta_star_init: RandomSpec { lo: 0.0, hi: 100.0 },
            alpha0: 1.0,
            beta0: 0.1,
            random_alpha: RandomSpec { lo: 0.0, hi: 5.0 },
            random_beta: RandomSpec { lo: 0.0, hi: 50.0 },
            period: 1.0,
            max_iter: 1000,
            seed: 0,
            wla_disabled: false,
            snapshot_steps: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.topology.n()
    }

    pub fn normal_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_normal()).collect()
    }

    pub fn faulty_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| !self.nodes[i].is_normal()).collect()
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        let n = self.n();
        if self.nodes.len() != n {
            return Err(Error::validation(
                "nodes",
                format!("{} node specs for {n} nodes", self.nodes.len()),
            ));
        }
        for (i, class) in self.nodes.iter().enumerate() {
            class.validate(&format!("nodes[{i}]"))?;
        }
        self.skew_noise.validate("clock.skew_noise")?;
        self.offset_noise.validate("clock.offset_noise")?;
        self.skew_reward.validate("clock.skew_reward")?;
        self.offset_reward.validate("clock.offset_reward")?;
        self.alpha_star_init.validate("clock.alpha_star")?;
        self.beta_star_init.validate("clock.beta_star")?;
        self.random_alpha.validate("clock.random_alpha")?;
        self.random_beta.validate("clock.random_beta")?;
        if !(self.alpha_star_init.lo > 0.0) {
            return Err(Error::validation("clock.alpha_star", "hardware skews must be > 0"));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::validation("clock.period", "must be finite and > 0"));
        }
        if !self.alpha0.is_finite() || !self.beta0.is_finite() {
            return Err(Error::validation("clock.alpha0", "initial corrections must be finite"));
        }
        if let Some(&s) = self.snapshot_steps.iter().find(|&&s| s > self.max_iter) {
            return Err(Error::validation(
                "snapshot_steps",
                format!("step {s} beyond max_iter {}", self.max_iter),
            ));
        }
        let normal = self.normal_nodes();
        if normal.is_empty() {
            return Err(Error::validation("nodes", "at least one normal node is required"));
        }
        for i in self.faulty_nodes() {
            FrozenRow::uniform(i, self.topology.nbrs(i), DEFAULT_FAULTY_ROW_TOTAL)?;
        }
        let mut warnings = Vec::new();
        if !is_rooted_subgraph(&self.topology, &normal)? {
            warnings.push("the normal-node subgraph is not rooted".to_string());
        }
        for &i in &normal {
            if self.topology.nbrs(i).len() < 2 {
                warnings.push(format!("normal node {} has fewer than two in-neighbors", i + 1));
            }
        }
        Ok(warnings)
    }
}

/// Maximum pairwise spread over `normal` of `x'`, `x''` and `τ = x' t + x''`.
pub fn clock_disagreement(
    x_prime: &[f64],
    x_dprime: &[f64],
    t: f64,
    normal: &[usize],
) -> Result<(f64, f64, f64)> {
    if normal.len() < 2 {
        return Err(Error::Argument("clock disagreement needs at least two normal nodes".into()));
    }
    let n = x_prime.len().min(x_dprime.len());
    if let Some(&i) = normal.iter().find(|&&i| i >= n) {
        return Err(Error::Argument(format!("node {i} out of range")));
    }
    let spread = |f: &dyn Fn(usize) -> f64| {
        let (lo, hi) = normal
            .iter()
            .map(|&i| f(i))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    };
    Ok((
        spread(&|i| x_prime[i]),
        spread(&|i| x_dprime[i]),
        spread(&|i| x_prime[i] * t + x_dprime[i]),
    ))
}

/// Everything one node did in one round; enough to replay its update.
#[derive(Clone, Debug, PartialEq)]
pub struct ClockNodeStep {
    /// True when the node ran the normal law this round.
    pub acted_normal: bool,
    pub skew_row: WeightRow,
    pub offset_row: WeightRow,
    /// `(j, η_ij)` per in-neighbor.
    pub eta: Vec<(usize, f64)>,
    /// `(j, w'_ij)` per in-neighbor (empty when not acting normally).
    pub skew_noise: Vec<(usize, f64)>,
    /// `(j, w''_ij)` per in-neighbor (empty when not acting normally).
    pub offset_noise: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClockStepReport {
    pub k: usize,
    pub alpha_before: Vec<f64>,
    pub beta_before: Vec<f64>,
    pub nodes: Vec<ClockNodeStep>,
}

enum ClockAgent {
    Normal { skew: CredibilityLedger, offset: CredibilityLedger },
    Frozen(FrozenRow),
}

struct ClockKeys {
    skew: StreamKey,
    offset: StreamKey,
    fault: StreamKey,
}

/// A running clock replica.
pub struct ClockSim<'a> {
    cfg: &'a ClockConfig,
    k: usize,
    hardware: Vec<HardwareClock>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    agents: Vec<ClockAgent>,
    keys: Vec<ClockKeys>,
    skew_weights: WeightMatrix,
    offset_weights: WeightMatrix,
}

impl<'a> ClockSim<'a> {
    pub fn new(cfg: &'a ClockConfig, replica: u64) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n();
        let g = &cfg.topology;
        let mut params = StreamKey::derive(cfg.seed, &[replica, purpose::CLOCK_PARAMS]).stream(0);
        let hardware = (0..n)
            .map(|_| {
                let alpha = sample_random(&cfg.alpha_star_init, &mut params);
                let beta = sample_random(&cfg.beta_star_init, &mut params);
                HardwareClock { alpha, beta }
            })
            .collect();

        let mut skew_weights = WeightMatrix::zeros(n);
        let mut offset_weights = WeightMatrix::zeros(n);
        let mut agents = Vec::with_capacity(n);
        for (i, class) in cfg.nodes.iter().enumerate() {
            let nbrs = g.nbrs(i);
            let agent = if class.is_normal() && !cfg.wla_disabled {
                let skew = CredibilityLedger::fixed(i, n, nbrs)?;
                let offset = CredibilityLedger::fixed(i, n, nbrs)?;
                if !nbrs.is_empty() {
                    record(&mut skew_weights, &skew.weights_fixed(nbrs)?);
                    record(&mut offset_weights, &offset.weights_fixed(nbrs)?);
                }
                ClockAgent::Normal { skew, offset }
            } else {
                let row = if class.is_normal() {
                    // Equal credibility, as a fresh ledger would weigh them.
                    let total = if nbrs.is_empty() { 0.0 } else { 1.0 - 1.0 / nbrs.len() as f64 };
                    FrozenRow::uniform(i, nbrs, total)?
                } else {
                    FrozenRow::uniform(i, nbrs, DEFAULT_FAULTY_ROW_TOTAL)?
                };
                record(&mut skew_weights, row.row());
                record(&mut offset_weights, row.row());
                ClockAgent::Frozen(row)
            };
            agents.push(agent);
        }
        let keys = (0..n as u64)
            .map(|i| ClockKeys {
                skew: StreamKey::derive(cfg.seed, &[replica, purpose::SKEW_NOISE, i]),
                offset: StreamKey::derive(cfg.seed, &[replica, purpose::OFFSET_NOISE, i]),
                fault: StreamKey::derive(cfg.seed, &[replica, purpose::FAULT, i]),
            })
            .collect();
        Ok(ClockSim {
            cfg,
            k: 0,
            hardware,
            alpha: vec![cfg.alpha0; n],
            beta: vec![cfg.beta0; n],
            agents,
            keys,
            skew_weights,
            offset_weights,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn hardware(&self) -> &[HardwareClock] {
        &self.hardware
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.cfg.period
    }

    /// `x'_i = α_i α*_i`.
    pub fn x_prime(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.hardware).map(|(a, h)| a * h.alpha).collect()
    }

    /// `x''_i = α_i β*_i + β_i`.
    pub fn x_dprime(&self) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(&self.beta)
            .zip(&self.hardware)
            .map(|((a, b), h)| a * h.beta + b)
            .collect()
    }

    /// Logical readings `τ_i(t_k)` at the current round.
    pub fn logical_times(&self) -> Vec<f64> {
        let t = self.time(self.k);
        (0..self.alpha.len())
            .map(|i| self.alpha[i] * self.hardware[i].read(t) + self.beta[i])
            .collect()
    }

    pub fn skew_weights(&self) -> &WeightMatrix {
        &self.skew_weights
    }

    pub fn offset_weights(&self) -> &WeightMatrix {
        &self.offset_weights
    }

    /// Runs round `k`: broadcast, skew update, offset update.
    pub fn step(&mut self) -> Result<ClockStepReport> {
        if self.k >= self.cfg.max_iter {
            return Err(Error::Argument(format!("round {} beyond max_iter", self.k)));
        }
        let k = self.k;
        let t_now = self.time(k);
        // Round 0 pairs with a silent exchange one period earlier.
        let t_prev = t_now - self.cfg.period;
        let hw_now: Vec<f64> = self.hardware.iter().map(|h| h.read(t_now)).collect();
        let hw_prev: Vec<f64> = self.hardware.iter().map(|h| h.read(t_prev)).collect();
        let tau: Vec<f64> = (0..self.alpha.len())
            .map(|i| self.alpha[i] * hw_now[i] + self.beta[i])
            .collect();
        let view = RoundView {
            cfg: self.cfg,
            k,
            hw_now: &hw_now,
            hw_prev: &hw_prev,
            tau: &tau,
            alpha: &self.alpha,
            beta: &self.beta,
        };
        let keys = &self.keys;
        let results: Vec<Result<(f64, f64, ClockNodeStep)>> = if self.agents.len() >= 256 {
            self.agents
                .par_iter_mut()
                .enumerate()
                .map(|(i, agent)| view.update(i, agent, &keys[i]))
                .collect()
        } else {
            self.agents
                .iter_mut()
                .enumerate()
                .map(|(i, agent)| view.update(i, agent, &keys[i]))
                .collect()
        };

        let alpha_before = self.alpha.clone();
        let beta_before = self.beta.clone();
        let mut nodes = Vec::with_capacity(results.len());
        for (i, r) in results.into_iter().enumerate() {
            let (a, b, step) = r?;
            self.alpha[i] = a;
            self.beta[i] = b;
            record(&mut self.skew_weights, &step.skew_row);
            record(&mut self.offset_weights, &step.offset_row);
            nodes.push(step);
        }
        self.k += 1;
        Ok(ClockStepReport {
            k,
            alpha_before,
            beta_before,
            nodes,
        })
    }
}

fn record(m: &mut WeightMatrix, row: &WeightRow) {
    for &(j, a) in row.entries() {
        m.set(row.owner(), j, a);
    }
}

struct RoundView<'r> {
    cfg: &'r ClockConfig,
    k: usize,
    hw_now: &'r [f64],
    hw_prev: &'r [f64],
    tau: &'r [f64],
    alpha: &'r [f64],
    beta: &'r [f64],
}

impl RoundView<'_> {
    fn update(&self, i: usize, agent: &mut ClockAgent, keys: &ClockKeys) -> Result<(f64, f64, ClockNodeStep)> {
        let cfg = self.cfg;
        let nbrs = cfg.topology.nbrs(i);
        let step = self.k as u64;

        let acted_normal = match cfg.nodes[i] {
            FaultClass::Normal => true,
            class => {
                let mut fault = keys.fault.stream(step);
                let coin = match class {
                    FaultClass::Intermittent { p_normal } => ifn_acts_normal(p_normal, &mut fault),
                    _ => false,
                };
                let ra = sample_random(&cfg.random_alpha, &mut fault);
                let rb = sample_random(&cfg.random_beta, &mut fault);
                if !coin {
                    let ClockAgent::Frozen(row) = agent else {
                        unreachable!("faulty nodes hold frozen rows")
                    };
                    let report = ClockNodeStep {
                        acted_normal: false,
                        skew_row: row.row().clone(),
                        offset_row: row.row().clone(),
                        eta: Vec::new(),
                        skew_noise: Vec::new(),
                        offset_noise: Vec::new(),
                    };
                    return Ok((self.alpha[i] + ra, self.beta[i] + rb, report));
                }
                true
            }
        };
        debug_assert!(acted_normal);

        let eta_row: Vec<(usize, f64)> = nbrs
            .iter()
            .map(|&j| Ok((j, eta((self.hw_now[j], self.hw_prev[j]), (self.hw_now[i], self.hw_prev[i]))?)))
            .collect::<Result<_>>()?;

        let mut skew_rng = keys.skew.stream(step);
        let skew_noise: Vec<(usize, f64)> = nbrs
            .iter()
            .map(|&j| (j, sample_noise(&cfg.skew_noise, &mut skew_rng)))
            .collect();
        let skew_res: Vec<(usize, f64)> = eta_row
            .iter()
            .zip(&skew_noise)
            .map(|(&(j, e), &(_, w))| (j, e * self.alpha[j] - self.alpha[i] + w))
            .collect();

        let mut offset_rng = keys.offset.stream(step);
        let offset_noise: Vec<(usize, f64)> = nbrs
            .iter()
            .map(|&j| (j, sample_noise(&cfg.offset_noise, &mut offset_rng)))
            .collect();
        let offset_res: Vec<(usize, f64)> = offset_noise
            .iter()
            .map(|&(j, w)| (j, self.tau[j] - self.alpha[i] * self.hw_now[i] - self.beta[i] + w))
            .collect();

        let (skew_row, offset_row) = match agent {
            ClockAgent::Normal { skew, offset } => {
                let abs = |v: &[(usize, f64)]| v.iter().map(|&(j, r)| (j, r.abs())).collect::<Vec<_>>();
                skew.observe_fixed(&abs(&skew_res), step, &cfg.skew_reward)?;
                offset.observe_fixed(&abs(&offset_res), step, &cfg.offset_reward)?;
                if nbrs.is_empty() {
                    (WeightRow::empty(i), WeightRow::empty(i))
                } else {
                    (skew.weights_fixed(nbrs)?, offset.weights_fixed(nbrs)?)
                }
            }
            ClockAgent::Frozen(row) => (row.row().clone(), row.row().clone()),
        };
        let move_by = |row: &WeightRow, res: &[(usize, f64)]| -> f64 {
            res.iter().map(|&(j, r)| row.get(j) * r).sum()
        };
        let a = self.alpha[i] + move_by(&skew_row, &skew_res);
        let b = self.beta[i] + move_by(&offset_row, &offset_res);
        Ok((
            a,
            b,
            ClockNodeStep {
                acted_normal: true,
                skew_row,
                offset_row,
                eta: eta_row,
                skew_noise,
                offset_noise,
            },
        ))
    }
}

/// Per-round record of a clock run (index `k` = state at round `k`).
#[derive(Clone, Debug, PartialEq)]
pub struct ClockTrace {
    pub n: usize,
    pub normal: Vec<usize>,
    pub faulty: Vec<usize>,
    pub period: f64,
    pub hardware: Vec<HardwareClock>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub x_prime: Vec<Vec<f64>>,
    pub x_dprime: Vec<Vec<f64>>,
    /// `tau[k][i] = τ_i(t_k)`.
    pub tau: Vec<Vec<f64>>,
    /// `(Δx', Δx'', Δτ)` per round over the normal nodes.
    pub disagreement: Vec<(f64, f64, f64)>,
    pub skew_snapshots: std::collections::BTreeMap<usize, WeightMatrix>,
    pub offset_snapshots: std::collections::BTreeMap<usize, WeightMatrix>,
}

pub fn run_clock(cfg: &ClockConfig) -> Result<ClockTrace> {
    run_clock_replica(cfg, 0)
}

pub fn run_clock_replica(cfg: &ClockConfig, replica: u64) -> Result<ClockTrace> {
    let mut sim = ClockSim::new(cfg, replica)?;
    let normal = cfg.normal_nodes();
    let mut trace = ClockTrace {
        n: cfg.n(),
        faulty: cfg.faulty_nodes(),
        normal,
        period: cfg.period,
        hardware: sim.hardware().to_vec(),
        alpha: Vec::with_capacity(cfg.max_iter + 1),
        beta: Vec::with_capacity(cfg.max_iter + 1),
        x_prime: Vec::with_capacity(cfg.max_iter + 1),
        x_dprime: Vec::with_capacity(cfg.max_iter + 1),
        tau: Vec::with_capacity(cfg.max_iter + 1),
        disagreement: Vec::with_capacity(cfg.max_iter + 1),
        skew_snapshots: Default::default(),
        offset_snapshots: Default::default(),
    };
    let snap: std::collections::BTreeSet<usize> = cfg.snapshot_steps.iter().copied().collect();
    loop {
        let k = sim.k();
        let xp = sim.x_prime();
        let xpp = sim.x_dprime();
        let d = if trace.normal.len() >= 2 {
            clock_disagreement(&xp, &xpp, sim.time(k), &trace.normal)?
        } else {
            (0.0, 0.0, 0.0)
        };
        trace.disagreement.push(d);
        trace.tau.push(sim.logical_times());
        trace.alpha.push(sim.alpha().to_vec());
        trace.beta.push(sim.beta().to_vec());
        trace.x_prime.push(xp);
        trace.x_dprime.push(xpp);
        if snap.contains(&k) {
            trace.skew_snapshots.insert(k, sim.skew_weights().clone());
            trace.offset_snapshots.insert(k, sim.offset_weights().clone());
        }
        if k == cfg.max_iter {
            break;
        }
        sim.step()?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_substream;

    fn ring(n: usize) -> Digraph {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Digraph::from_edges(n, &edges, true).unwrap()
    }

    #[test]
    fn hardware_read_examples() {
        let perfect = HardwareClock { alpha: 1.0, beta: 0.0 };
        assert_eq!(perfect.read(42.5), 42.5);
        let c = HardwareClock { alpha: 1.3, beta: 100.0 };
        assert!((c.read(10.0) - 113.0).abs() < 1e-12);
        assert!(((c.read(7.0) - c.read(3.0)) - 1.3 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn eta_examples() {
        let i = HardwareClock { alpha: 0.8, beta: 17.0 };
        let j = HardwareClock { alpha: 1.2, beta: -4.0 };
        let e = eta((j.read(7.0), j.read(3.0)), (i.read(7.0), i.read(3.0))).unwrap();
        assert!((e - 1.5).abs() < 1e-12);
        let same = eta((i.read(2.0), i.read(1.0)), (i.read(2.0), i.read(1.0))).unwrap();
        assert_eq!(same, 1.0);
        assert!(matches!(eta((1.0, 0.0), (2.0, 2.0)), Err(Error::Numerical(_))));
    }

    #[test]
    fn eta_exact_and_reciprocal() {
        let mut rng = derive_substream(12, &[1]);
        for _ in 0..10_000 {
            let i = HardwareClock { alpha: rng.uniform(0.7, 1.3), beta: rng.uniform(0.0, 100.0) };
            let j = HardwareClock { alpha: rng.uniform(0.7, 1.3), beta: rng.uniform(0.0, 100.0) };
            let k = rng.uniform(1.0, 1000.0).floor();
            let e_ij = eta((j.read(k), j.read(k - 1.0)), (i.read(k), i.read(k - 1.0))).unwrap();
            let e_ji = eta((i.read(k), i.read(k - 1.0)), (j.read(k), j.read(k - 1.0))).unwrap();
            assert!((e_ij - j.alpha / i.alpha).abs() < 1e-12);
            assert!((e_ij * e_ji - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disagreement_examples() {
        let d = clock_disagreement(&[1.0, 1.1], &[5.0, 7.0], 10.0, &[0, 1]).unwrap();
        assert!((d.0 - 0.1).abs() < 1e-12 && (d.1 - 2.0).abs() < 1e-12 && (d.2 - 3.0).abs() < 1e-12);
        assert_eq!(clock_disagreement(&[2.0; 3], &[1.0; 3], 4.0, &[0, 1, 2]).unwrap(), (0.0, 0.0, 0.0));
        let a = clock_disagreement(&[1.0, 1.2, 0.9], &[3.0, 1.0, 2.0], 5.0, &[0, 1, 2]).unwrap();
        let b = clock_disagreement(&[1.0, 1.2, 0.9], &[3.0, 1.0, 2.0], 5.0, &[2, 0, 1]).unwrap();
        assert_eq!(a, b);
        assert!(clock_disagreement(&[1.0], &[1.0], 0.0, &[0]).is_err());
    }

    fn noiseless(mut cfg: ClockConfig) -> ClockConfig {
        cfg.skew_noise = NoiseSpec { bound: 0.0 };
        cfg.offset_noise = NoiseSpec { bound: 0.0 };
        cfg
    }

    #[test]
    fn identical_clocks_are_a_fixed_point() {
        let mut cfg = noiseless(ClockConfig::with_defaults(ring(5)));
        cfg.alpha_star_init = RandomSpec { lo: 1.1, hi: 1.1 };
        cfg.beta_star_init = RandomSpec { lo: 3.0, hi: 3.0 };
        cfg.max_iter = 20;
        let trace = run_clock(&cfg).unwrap();
        for k in 0..=20 {
            assert!(trace.alpha[k].iter().all(|&a| a == 1.0));
            assert!(trace.beta[k].iter().all(|&b| (b - 0.1).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_rounds_keeps_initial_values() {
        let mut cfg = ClockConfig::with_defaults(ring(4));
        cfg.max_iter = 0;
        let trace = run_clock(&cfg).unwrap();
        assert_eq!(trace.tau.len(), 1);
        for i in 0..4 {
            let h = trace.hardware[i];
            assert_eq!(trace.tau[0][i], 1.0 * h.read(0.0) + 0.1);
        }
    }

    /// Checks, node by node, that one round moved `x'` and `x''` exactly as
    /// the closed-loop model predicts from the recorded weights and noises.
    fn check_fidelity(sim: &ClockSim, report: &ClockStepReport, normal: &[usize]) {
        let h = sim.hardware();
        let t = sim.time(report.k);
        let xp0: Vec<f64> = (0..h.len()).map(|i| report.alpha_before[i] * h[i].alpha).collect();
        let xpp0: Vec<f64> = (0..h.len())
            .map(|i| report.alpha_before[i] * h[i].beta + report.beta_before[i])
            .collect();
        let xp1 = sim.x_prime();
        let xpp1 = sim.x_dprime();
        for &i in normal {
            let node = &report.nodes[i];
            let a1 = &node.skew_row;
            let a2 = &node.offset_row;
            // Skew: Σ a'(x'_j - x'_i) + α*_i Σ a' w'.
            let w1: f64 = node.skew_noise.iter().map(|&(j, w)| a1.get(j) * w).sum::<f64>() * h[i].alpha;
            let skew_model = xp0[i] + a1.entries().iter().map(|&(j, a)| a * (xp0[j] - xp0[i])).sum::<f64>() + w1;
            assert!((xp1[i] - skew_model).abs() < 1e-9, "skew residual {}", xp1[i] - skew_model);
            // Offset: Σ a''(x''_j - x''_i) + Δx'_i β*/α* + Σ a''((x'_j - x'_i) t + w'').
            let w2 = (xp1[i] - xp0[i]) * h[i].beta / h[i].alpha
                + node
                    .offset_noise
                    .iter()
                    .map(|&(j, w)| a2.get(j) * ((xp0[j] - xp0[i]) * t + w))
                    .sum::<f64>();
            let offset_model =
                xpp0[i] + a2.entries().iter().map(|&(j, a)| a * (xpp0[j] - xpp0[i])).sum::<f64>() + w2;
            assert!(
                (xpp1[i] - offset_model).abs() < 1e-6,
                "offset residual {}",
                xpp1[i] - offset_model
            );
            // The skew residual is (x'_j - x'_i) / α*_i + w'.
            for (&(j, e), &(_, w)) in node.eta.iter().zip(&node.skew_noise) {
                let lhs = e * report.alpha_before[j] - report.alpha_before[i] + w;
                let rhs = (xp0[j] - xp0[i]) / h[i].alpha + w;
                assert!((lhs - rhs).abs() < 1e-9);
            }
            // The offset residual is x'_j t + x''_j - x'_i t - x''_i.
            for &(j, _) in &node.offset_noise {
                let tau_j = report.alpha_before[j] * h[j].read(t) + report.beta_before[j];
                let lhs = tau_j - report.alpha_before[i] * h[i].read(t) - report.beta_before[i];
                let rhs = xp0[j] * t + xpp0[j] - xp0[i] * t - xpp0[i];
                assert!((lhs - rhs).abs() < 1e-6 * (1.0 + rhs.abs()));
            }
        }
    }

    #[test]
    fn closed_loop_model_matches_every_round() {
        let g = Digraph::from_edges(
            6,
            &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)],
            true,
        )
        .unwrap();
        let mut cfg = ClockConfig::with_defaults(g);
        cfg.nodes[2] = FaultClass::Persistent;
        cfg.nodes[4] = FaultClass::Intermittent { p_normal: 0.8 };
        cfg.max_iter = 300;
        cfg.seed = 3;
        let mut sim = ClockSim::new(&cfg, 0).unwrap();
        let mut acting: Vec<usize> = Vec::new();
        for _ in 0..300 {
            let report = sim.step().unwrap();
            acting.clear();
            acting.extend((0..6).filter(|&i| report.nodes[i].acted_normal));
            check_fidelity(&sim, &report, &acting);
        }
    }

    #[test]
    fn noiseless_faultless_synchronization() {
        let mut cfg = noiseless(ClockConfig::with_defaults(ring(8)));
        cfg.max_iter = 2000;
        cfg.seed = 2;
        let trace = run_clock(&cfg).unwrap();
        assert!(trace.disagreement[1000].0 < 1e-6, "{:?}", trace.disagreement[1000]);
        assert!(trace.disagreement[2000].2 < 1e-3, "{:?}", trace.disagreement[2000]);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut cfg = ClockConfig::with_defaults(ring(6));
        cfg.nodes[1] = FaultClass::Intermittent { p_normal: 0.5 };
        cfg.max_iter = 100;
        cfg.snapshot_steps = vec![100];
        assert_eq!(run_clock(&cfg).unwrap(), run_clock(&cfg).unwrap());
    }

    #[test]
    fn disabled_learning_keeps_initial_rows() {
        let mut cfg = ClockConfig::with_defaults(ring(5));
        cfg.wla_disabled = true;
        cfg.max_iter = 10;
        cfg.snapshot_steps = vec![0, 10];
        let trace = run_clock(&cfg).unwrap();
        assert_eq!(trace.skew_snapshots[&0], trace.skew_snapshots[&10]);
        assert!((trace.skew_snapshots[&10].get(0, 1) - 0.25).abs() < 1e-15);
    }
}

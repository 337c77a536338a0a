//! Experiment configuration files.
//!
//! A config is a TOML document. Node ids in files are 1-based; everything
//! inside the library is 0-based. Loading fills every default explicitly, so
//! [`ExperimentConfig::to_toml`] writes a self-describing file that reloads
//! to the same experiment.
//!
//! ```toml
//! kind = "consensus"          # consensus | sweep | clock
//! seed = 1
//! max_iter = 1000
//! snapshot_steps = [1000]
//!
//! [topology]
//! type = "fixed"              # or "stochastic" with n, edge_prob, symmetric
//! n = 10
//! edges = [[2, 1], [2, 5]]    # [from, to]; mirrored when symmetric = true
//!
//! [faults]
//! pfn = [1]
//! ifn = [5, 8]
//! p_normal = 0.8
//! random = { lo = 0.0, hi = 1000.0 }
//! ```
//!
//! The presets under `presets/` show every section.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::ClockConfig;
use crate::consensus::{InitState, SimConfig, SweepConfig};
use crate::error::{Error, Result};
use crate::fault::{FaultClass, NodeSpec, NoiseSpec, RandomSpec};
use crate::topology::{Digraph, TopologyProvider};
use crate::wla::{check_gamma, RewardSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Consensus,
    Sweep,
    Clock,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::validation("output.format", format!("unknown format `{other}`"))),
        }
    }
}

fn default_seed() -> u64 {
    1
}
fn default_max_iter() -> usize {
    1000
}
fn default_gamma() -> f64 {
    0.8
}
fn default_one() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_p_normal() -> f64 {
    0.8
}
fn default_random() -> RandomSpec {
    RandomSpec { lo: 0.0, hi: 1000.0 }
}
fn default_noise() -> NoiseSpec {
    NoiseSpec { bound: 10.0 }
}

/// The file form of a config, with every default filled in after loading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub kind: Kind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Weight budget of stochastic-topology learning.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Independent replicas of a consensus run.
    #[serde(default = "default_one")]
    pub replicas: usize,
    /// Convergence threshold on `V`; half the noise bound when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub snapshot_steps: Vec<usize>,
    pub topology: TopologySection,
    #[serde(default)]
    pub faults: FaultSection,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub reward: RewardSchedule,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub record: RecordSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faulty_row: Vec<FaultyRowSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock: Option<ClockSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum TopologySection {
    Fixed {
        n: usize,
        #[serde(default = "default_true")]
        symmetric: bool,
        edges: Vec<[usize; 2]>,
    },
    Stochastic {
        n: usize,
        edge_prob: f64,
        #[serde(default = "default_true")]
        symmetric: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    #[serde(default)]
    pub pfn: Vec<usize>,
    #[serde(default)]
    pub ifn: Vec<usize>,
    /// Probability that an intermittent node acts normally in a step.
    #[serde(default = "default_p_normal")]
    pub p_normal: f64,
    #[serde(default = "default_random")]
    pub random: RandomSpec,
}

impl Default for FaultSection {
    fn default() -> Self {
        FaultSection {
            pfn: Vec::new(),
            ifn: Vec::new(),
            p_normal: default_p_normal(),
            random: default_random(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum InitSection {
    Values { values: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
}

impl Default for InitSection {
    fn default() -> Self {
        InitSection::Uniform { lo: 0.0, hi: 1000.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSection {
    #[serde(default = "default_true")]
    pub states: bool,
    #[serde(default)]
    pub topology: bool,
    #[serde(default = "default_true")]
    pub rootedness: bool,
}

impl Default for RecordSection {
    fn default() -> Self {
        RecordSection {
            states: true,
            topology: false,
            rootedness: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub format: Format,
}

/// Explicit initial row of a faulty node: `weights = [[j, a_ij], ...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultyRowSection {
    pub node: usize,
    pub weights: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Nodes made intermittent at each swept fault probability.
    pub ifn: Vec<usize>,
    pub probs: Vec<f64>,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockSection {
    pub skew_noise: f64,
    pub offset_noise: f64,
    pub skew_reward: RewardSchedule,
    pub offset_reward: RewardSchedule,
    pub alpha_star: RandomSpec,
    pub beta_star: RandomSpec,
    pub alpha0: f64,
    pub beta0: f64,
    pub random_alpha: RandomSpec,
    pub random_beta: RandomSpec,
    pub period: f64,
    #[serde(default)]
    pub wla_disabled: bool,
}

impl Default for ClockSection {
    fn default() -> Self {
        let d = ClockConfig::with_defaults(Digraph::edgeless(1).expect("n = 1"));
        ClockSection {
            skew_noise: d.skew_noise.bound,
            offset_noise: d.offset_noise.bound,
            skew_reward: d.skew_reward,
            offset_reward: d.offset_reward,
            alpha_star: d.alpha_star_init,
            beta_star: d.beta_star_init,
            alpha0: d.alpha0,
            beta0: d.beta0,
            random_alpha: d.random_alpha,
            random_beta: d.random_beta,
            period: d.period,
            wla_disabled: false,
        }
    }
}

/// A consensus experiment: `replicas` independent runs of `sim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusRun {
    pub sim: SimConfig,
    pub replicas: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Experiment {
    Consensus(ConsensusRun),
    Sweep(SweepConfig),
    Clock(ClockConfig),
}

/// A validated config together with the file form it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub file: ConfigFile,
    pub experiment: Experiment,
}

#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub warnings: Vec<String>,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<LoadedConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

/// Parses and validates config text; `origin` is only used in messages.
pub fn parse_config(text: &str, origin: impl AsRef<Path>) -> Result<LoadedConfig> {
    let mut file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse {
        path: origin.as_ref().to_path_buf(),
        message: e.to_string(),
    })?;
    if file.kind == Kind::Clock && file.clock.is_none() {
        file.clock = Some(ClockSection::default());
    }
    ExperimentConfig::from_file(file)
}

impl ExperimentConfig {
    pub fn from_file(file: ConfigFile) -> Result<LoadedConfig> {
        let (experiment, warnings) = build(&file)?;
        Ok(LoadedConfig {
            config: ExperimentConfig { file, experiment },
            warnings,
        })
    }

    pub fn kind(&self) -> Kind {
        self.file.kind
    }

    pub fn seed(&self) -> u64 {
        self.file.seed
    }

    pub fn format(&self) -> Format {
        self.file.output.format
    }

    /// Rebuilds with command-line overrides applied to the file form.
    pub fn with_overrides(
        &self,
        seed: Option<u64>,
        snapshot_steps: Option<Vec<usize>>,
        format: Option<Format>,
    ) -> Result<LoadedConfig> {
        let mut file = self.file.clone();
        if let Some(seed) = seed {
            file.seed = seed;
        }
        if let Some(steps) = snapshot_steps {
            file.snapshot_steps = steps;
        }
        if let Some(format) = format {
            file.output.format = format;
        }
        ExperimentConfig::from_file(file)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.file).map_err(|e| Error::Export(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 of the normalized TOML form, hex encoded.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

fn node_index(field: &str, id: usize, n: usize) -> Result<usize> {
    if id == 0 || id > n {
        return Err(Error::validation(field, format!("node {id} outside 1..={n}")));
    }
    Ok(id - 1)
}

fn node_list(field: &str, ids: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let i = node_index(field, id, n)?;
        if out.contains(&i) {
            return Err(Error::validation(field, format!("node {id} listed twice")));
        }
        out.push(i);
    }
    Ok(out)
}

fn topology(section: &TopologySection) -> Result<(TopologyProvider, usize)> {
    match section {
        TopologySection::Fixed { n, symmetric, edges } => {
            if *n == 0 {
                return Err(Error::validation("topology.n", "must be positive"));
            }
            let mut pairs = Vec::with_capacity(edges.len());
            for &[from, to] in edges {
                let a = node_index("topology.edges", from, *n)?;
                let b = node_index("topology.edges", to, *n)?;
                if a == b {
                    return Err(Error::validation("topology.edges", format!("self-loop on node {from}")));
                }
                pairs.push((a, b));
            }
            let g = Digraph::from_edges(*n, &pairs, *symmetric)?;
            Ok((TopologyProvider::Fixed(g), *n))
        }
        &TopologySection::Stochastic { n, edge_prob, symmetric } => {
            let provider = TopologyProvider::Stochastic { n, edge_prob, symmetric };
            provider.validate()?;
            Ok((provider, n))
        }
    }
}

fn fault_classes(file: &ConfigFile, n: usize) -> Result<Vec<FaultClass>> {
    let f = &file.faults;
    if !(0.0..=1.0).contains(&f.p_normal) {
        return Err(Error::validation("faults.p_normal", format!("{} is not a probability", f.p_normal)));
    }
    let mut classes = vec![FaultClass::Normal; n];
    for i in node_list("faults.pfn", &f.pfn, n)? {
        classes[i] = FaultClass::Persistent;
    }
    for i in node_list("faults.ifn", &f.ifn, n)? {
        if classes[i] != FaultClass::Normal {
            return Err(Error::validation("faults.ifn", format!("node {} is already persistent", i + 1)));
        }
        classes[i] = FaultClass::Intermittent { p_normal: f.p_normal };
    }
    Ok(classes)
}

fn sim_config(file: &ConfigFile) -> Result<SimConfig> {
    let (provider, n) = topology(&file.topology)?;
    check_gamma(file.gamma)?;
    file.faults.random.validate("faults.random")?;
    let nodes = fault_classes(file, n)?
        .into_iter()
        .map(|class| NodeSpec { class, random: file.faults.random })
        .collect();
    let init = match &file.init {
        InitSection::Values { values } => InitState::Explicit(values.clone()),
        &InitSection::Uniform { lo, hi } => InitState::Uniform(RandomSpec { lo, hi }),
    };
    let mut faulty_rows = BTreeMap::new();
    for row in &file.faulty_row {
        let i = node_index("faulty_row.node", row.node, n)?;
        let mut entries = Vec::with_capacity(row.weights.len());
        for &(j, a) in &row.weights {
            entries.push((node_index("faulty_row.weights", j, n)?, a));
        }
        let sum: f64 = entries.iter().map(|e| e.1).sum();
        if sum >= 1.0 {
            return Err(Error::validation(
                "faulty_row",
                format!("initial row of node {} sums to {sum}; need sum of a_ij(0) < 1", row.node),
            ));
        }
        if faulty_rows.insert(i, entries).is_some() {
            return Err(Error::validation("faulty_row", format!("node {} given twice", row.node)));
        }
    }
    Ok(SimConfig {
        topology: provider,
        nodes,
        noise: file.noise,
        reward: file.reward,
        gamma: file.gamma,
        init,
        max_iter: file.max_iter,
        seed: file.seed,
        snapshot_steps: file.snapshot_steps.clone(),
        faulty_rows,
        record_states: file.record.states,
        record_topology: file.record.topology,
        report_rootedness: file.record.rootedness,
    })
}

fn threshold(file: &ConfigFile) -> Result<f64> {
    let t = file.threshold.unwrap_or(file.noise.bound / 2.0);
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::validation("threshold", "must be finite and > 0"));
    }
    Ok(t)
}

fn build(file: &ConfigFile) -> Result<(Experiment, Vec<String>)> {
    if file.kind != Kind::Sweep && file.sweep.is_some() {
        return Err(Error::validation("sweep", "only valid with kind = \"sweep\""));
    }
    if file.kind != Kind::Clock && file.clock.is_some() {
        return Err(Error::validation("clock", "only valid with kind = \"clock\""));
    }
    match file.kind {
        Kind::Consensus => {
            if file.replicas == 0 {
                return Err(Error::validation("replicas", "must be >= 1"));
            }
            let sim = sim_config(file)?;
            let warnings = sim.validate()?;
            let threshold = threshold(file)?;
            Ok((
                Experiment::Consensus(ConsensusRun {
                    sim,
                    replicas: file.replicas,
                    threshold,
                }),
                warnings,
            ))
        }
        Kind::Sweep => {
            let section = file
                .sweep
                .as_ref()
                .ok_or_else(|| Error::validation("sweep", "missing [sweep] section"))?;
            let base = sim_config(file)?;
            let n = base.n();
            let ifn_nodes = node_list("sweep.ifn", &section.ifn, n)?;
            if let Some(&i) = ifn_nodes.iter().find(|&&i| !base.nodes[i].class.is_normal()) {
                return Err(Error::validation(
                    "sweep.ifn",
                    format!("node {} is also listed under [faults]", i + 1),
                ));
            }
            let sweep = SweepConfig {
                base,
                ifn_nodes,
                random: file.faults.random,
                probs: section.probs.clone(),
                reps: section.reps,
                threshold: threshold(file)?,
            };
            sweep.validate()?;
            let warnings = sweep.config_for(0.0).validate()?;
            Ok((Experiment::Sweep(sweep), warnings))
        }
        Kind::Clock => {
            let c = file.clock.clone().unwrap_or_default();
            let (provider, n) = topology(&file.topology)?;
            let TopologyProvider::Fixed(g) = provider else {
                return Err(Error::validation("topology.type", "clock experiments need a fixed topology"));
            };
            let cfg = ClockConfig {
                topology: g,
                nodes: fault_classes(file, n)?,
                skew_noise: NoiseSpec { bound: c.skew_noise },
                offset_noise: NoiseSpec { bound: c.offset_noise },
                skew_reward: c.skew_reward,
                offset_reward: c.offset_reward,
                alpha_star_init: c.alpha_star,
                beta_star_init: c.beta_star,
                alpha0: c.alpha0,
                beta0: c.beta0,
                random_alpha: c.random_alpha,
                random_beta: c.random_beta,
                period: c.period,
                max_iter: file.max_iter,
                seed: file.seed,
                wla_disabled: c.wla_disabled,
                snapshot_steps: file.snapshot_steps.clone(),
            };
            let warnings = cfg.validate()?;
            Ok((Experiment::Clock(cfg), warnings))
        }
    }
}

//! Node behavior classes and the random sources they draw from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Distribution of a faulty node's random control input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSpec {
    pub lo: f64,
    pub hi: f64,
}

impl RandomSpec {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let spec = RandomSpec { lo, hi };
        spec.validate("random")?;
        Ok(spec)
    }

    pub(crate) fn validate(&self, field: &str) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo > self.hi {
            return Err(Error::validation(
                field,
                format!("need finite lo <= hi, got [{}, {}]", self.lo, self.hi),
            ));
        }
        Ok(())
    }
}

/// Bound `ω` on process and channel noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub bound: f64,
}

impl NoiseSpec {
    pub fn new(bound: f64) -> Result<Self> {
        let spec = NoiseSpec { bound };
        spec.validate("noise.bound")?;
        Ok(spec)
    }

    pub(crate) fn validate(&self, field: &str) -> Result<()> {
        if !self.bound.is_finite() || self.bound < 0.0 {
            return Err(Error::validation(field, "noise bound must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Behavioral class of a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FaultClass {
    Normal,
    /// Persistent faulty node: a random control input every step.
    Persistent,
    /// Intermittent faulty node: acts normally with probability `p_normal`
    /// each step, like a persistent one otherwise.
    Intermittent { p_normal: f64 },
}

impl FaultClass {
    pub fn is_normal(&self) -> bool {
        matches!(self, FaultClass::Normal)
    }

    pub(crate) fn validate(&self, field: &str) -> Result<()> {
        if let FaultClass::Intermittent { p_normal } = self {
            if !(0.0..=1.0).contains(p_normal) {
                return Err(Error::validation(field, format!("p_normal {p_normal} not in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A node's class together with the distribution of its random input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeSpec {
    pub class: FaultClass,
    pub random: RandomSpec,
}

impl NodeSpec {
    pub fn normal() -> Self {
        NodeSpec {
            class: FaultClass::Normal,
            random: RandomSpec { lo: 0.0, hi: 0.0 },
        }
    }

    pub fn pfn(random: RandomSpec) -> Self {
        NodeSpec {
            class: FaultClass::Persistent,
            random,
        }
    }

    pub fn ifn(p_normal: f64, random: RandomSpec) -> Self {
        NodeSpec {
            class: FaultClass::Intermittent { p_normal },
            random,
        }
    }
}

/// One draw of a faulty node's random input.
pub fn sample_random(spec: &RandomSpec, rng: &mut Stream) -> f64 {
    rng.uniform(spec.lo, spec.hi)
}

/// Noise drawn from `Uniform(-ω, ω)`, strictly inside the bound; exactly 0
/// when `ω = 0`. Always consumes one word.
pub fn sample_noise(spec: &NoiseSpec, rng: &mut Stream) -> f64 {
    let u = rng.open_unit();
    if spec.bound == 0.0 {
        return 0.0;
    }
    spec.bound * (2.0 * u - 1.0)
}

/// The intermittent node's per-step coin.
pub fn ifn_acts_normal(p_normal: f64, rng: &mut Stream) -> bool {
    rng.bernoulli(p_normal)
}

//! The random field `(T_x, e(x,y))` and the open-bond rule.
//!
//! Nothing is stored: every value is a pure function of the global seed and
//! an entity key (kind, coordinates, direction), so explorations that touch
//! the same site or bond in any order agree. Each entity owns one 64-bit
//! word and samplers use inverse CDFs.
//!
//! Bond clocks are drawn once at unit rate and scaled, `e_λ = e_1 / λ`,
//! which couples all values of λ monotonically on the same seed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Dim, OrientedBond, Site, MAX_DIM};

/// Law of the infection duration `T_x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecoveryDist {
    Constant { value: f64 },
    Exponential { mean: f64 },
    Uniform { low: f64, high: f64 },
    /// `P(T > t) = (scale / t)^shape` for `t >= scale`.
    Pareto { shape: f64, scale: f64 },
}

impl RecoveryDist {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "recovery {name} must be finite and strictly positive, got {v}"
                )))
            }
        };
        match *self {
            RecoveryDist::Constant { value } => positive("value", value),
            RecoveryDist::Exponential { mean } => positive("mean", mean),
            RecoveryDist::Uniform { low, high } => {
                positive("low", low)?;
                positive("high", high)?;
                if high <= low {
                    return Err(Error::Config(format!(
                        "uniform recovery needs low < high, got {low} >= {high}"
                    )));
                }
                Ok(())
            }
            RecoveryDist::Pareto { shape, scale } => {
                positive("shape", shape)?;
                positive("scale", scale)
            }
        }
    }

    /// Inverse CDF at `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            RecoveryDist::Constant { value } => value,
            RecoveryDist::Exponential { mean } => -mean * (-u).ln_1p(),
            RecoveryDist::Uniform { low, high } => low + (high - low) * u,
            RecoveryDist::Pareto { shape, scale } => scale * (1.0 - u).powf(-1.0 / shape),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            RecoveryDist::Constant { value } => value,
            RecoveryDist::Exponential { mean } => mean,
            RecoveryDist::Uniform { low, high } => 0.5 * (low + high),
            RecoveryDist::Pareto { shape, scale } => {
                if shape > 1.0 {
                    shape * scale / (shape - 1.0)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Whether `E[T^r] < ∞`.
    pub fn has_moment(&self, r: f64) -> bool {
        match *self {
            RecoveryDist::Pareto { shape, .. } => shape > r,
            _ => true,
        }
    }
}

impl fmt::Display for RecoveryDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            RecoveryDist::Constant { value } => write!(f, "const:{value}"),
            RecoveryDist::Exponential { mean } => write!(f, "exp:{mean}"),
            RecoveryDist::Uniform { low, high } => write!(f, "uniform:{low},{high}"),
            RecoveryDist::Pareto { shape, scale } => write!(f, "pareto:{shape},{scale}"),
        }
    }
}

impl FromStr for RecoveryDist {
    type Err = Error;

    /// `const:T0`, `exp:MEAN`, `uniform:A,B` or `pareto:SHAPE,SCALE`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, params) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("recovery {s:?} is not of the form kind:params")))?;
        let nums = params
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number {p:?} in recovery {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let want = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::Parse(format!(
                    "recovery kind {kind:?} takes {n} parameter(s), got {}",
                    nums.len()
                )))
            }
        };
        let dist = match kind.trim() {
            "const" | "constant" => {
                want(1)?;
                RecoveryDist::Constant { value: nums[0] }
            }
            "exp" | "exponential" => {
                want(1)?;
                RecoveryDist::Exponential { mean: nums[0] }
            }
            "uniform" => {
                want(2)?;
                RecoveryDist::Uniform {
                    low: nums[0],
                    high: nums[1],
                }
            }
            "pareto" => {
                want(2)?;
                RecoveryDist::Pareto {
                    shape: nums[0],
                    scale: nums[1],
                }
            }
            other => return Err(Error::Parse(format!("unknown recovery kind {other:?}"))),
        };
        dist.validate()?;
        Ok(dist)
    }
}

impl Serialize for RecoveryDist {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RecoveryDist {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub dim: Dim,
    pub lambda: f64,
    pub recovery: RecoveryDist,
    pub seed: u64,
}

const KIND_SITE: u64 = 0x5349_5445;
const KIND_BOND: u64 = 0x424f_4e44;
const KIND_SPRINKLE: u64 = 0x5350_524b;

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finaliser.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, word: u64) -> u64 {
    mix64(h.wrapping_add(GAMMA) ^ word.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Hash state after absorbing an entity's kind and site; shared by the
/// bonds leaving one site.
#[inline]
pub(crate) fn site_prefix(seed: u64, kind: u64, coords: &[i64; MAX_DIM]) -> u64 {
    let mut h = absorb(mix64(seed ^ GAMMA), kind);
    for &c in coords {
        h = absorb(h, c as u64);
    }
    h
}

/// The word owned by the entity `(prefix, dir)`.
#[inline]
pub(crate) fn entity_word(prefix: u64, dir: u64) -> u64 {
    mix64(absorb(prefix, dir) ^ 0x1)
}

/// Maps a word to the open interval (0, 1).
#[inline]
pub(crate) fn open_unit(w: u64) -> f64 {
    ((w >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Seed of the `replica`-th independent copy of a field with base seed `base`.
pub fn replica_seed(base: u64, replica: u64) -> u64 {
    mix64(mix64(base ^ 0x7265_706c) ^ replica.wrapping_mul(GAMMA))
}

impl FieldConfig {
    pub fn new(dim: Dim, lambda: f64, recovery: RecoveryDist, seed: u64) -> Result<Self> {
        let cfg = FieldConfig {
            dim,
            lambda,
            recovery,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Config(format!(
                "infection rate must be finite and positive, got {}",
                self.lambda
            )));
        }
        self.recovery.validate()
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        FieldConfig { lambda, ..*self }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        FieldConfig { seed, ..*self }
    }

    /// The configuration of replica `i`, derived from this seed.
    pub fn replica(&self, i: u64) -> Self {
        self.with_seed(replica_seed(self.seed, i))
    }

    #[inline]
    pub(crate) fn recovery_raw(&self, coords: &[i64; MAX_DIM]) -> f64 {
        let w = entity_word(site_prefix(self.seed, KIND_SITE, coords), 0);
        self.recovery.quantile(open_unit(w))
    }

    #[inline]
    pub(crate) fn bond_prefix(&self, coords: &[i64; MAX_DIM]) -> u64 {
        site_prefix(self.seed, KIND_BOND, coords)
    }

    #[inline]
    pub(crate) fn unit_clock_word(w: u64) -> f64 {
        -(-open_unit(w)).ln_1p()
    }

    #[inline]
    pub(crate) fn unit_clock_raw(&self, coords: &[i64; MAX_DIM], dir: usize) -> f64 {
        Self::unit_clock_word(entity_word(self.bond_prefix(coords), dir as u64))
    }

    /// `T_x`, the infection duration of `x`.
    pub fn recovery_time(&self, x: &Site) -> f64 {
        self.recovery_raw(&raw(x))
    }

    /// The unit-rate clock `e_1(x, y)`.
    pub fn unit_clock(&self, b: &OrientedBond) -> f64 {
        self.unit_clock_raw(&raw(&b.from), b.direction().index())
    }

    /// `e_λ(x, y) = e_1(x, y) / λ`.
    pub fn edge_clock(&self, b: &OrientedBond) -> f64 {
        self.unit_clock(b) / self.lambda
    }

    /// `X(x, y) = 1{e(x, y) < T_x}`.
    pub fn is_open(&self, b: &OrientedBond) -> bool {
        self.edge_clock(b) < self.recovery_time(&b.from)
    }

    /// Independent Bernoulli(`eps`) bond variable used for sprinkling.
    pub fn sprinkle(&self, b: &OrientedBond, eps: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::InvalidArgument(format!(
                "sprinkling probability {eps} outside [0, 1]"
            )));
        }
        let w = entity_word(site_prefix(self.seed, KIND_SPRINKLE, &raw(&b.from)), b.direction().index() as u64);
        Ok(open_unit(w) < eps)
    }

    /// `max{X_λ, Y_eps}`.
    pub fn is_open_sprinkled(&self, b: &OrientedBond, eps: f64) -> Result<bool> {
        Ok(self.is_open(b) || self.sprinkle(b, eps)?)
    }
}

#[inline]
fn raw(x: &Site) -> [i64; MAX_DIM] {
    let mut c = [0; MAX_DIM];
    c[..x.coords().len()].copy_from_slice(x.coords());
    c
}

/// Convenience: all `2d` outgoing bonds of `x`.
pub fn out_bonds(x: &Site) -> impl Iterator<Item = OrientedBond> + '_ {
    x.dim().directions().map(move |d| OrientedBond::from_step(*x, d))
}

//! Monte Carlo g-computation of the population average overall effect (PAOE)
//! and an exact enumeration oracle for small blocks.
//!
//! Both policies are simulated with common random numbers: random streams are
//! keyed by tier and chain, never by policy, so identical policies give an
//! estimate of exactly zero and swapping the policies negates it exactly.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::BlockDataset;
use crate::graph::{Tier, TieredChainGraph};
use crate::model::{
    fit_pseudolikelihood, CompiledModel, FitOptions, ModelError, ModelParams, Sharing,
};
use crate::rng::{derive_seed, stream_rng};
use crate::sampler::TierSampler;

/// Monte Carlo draws per independent chain.
pub const DRAWS_PER_CHAIN: usize = 2500;
/// Default unit limit for exact enumeration.
pub const DEFAULT_EXACT_MAX_UNITS: u32 = 6;

const AUTO_G_TAG: u64 = 0x6175_746f_2d67;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("invalid policy {input:?}: {reason}")]
    Policy { input: String, reason: String },
    #[error("invalid estimator configuration: {0}")]
    Config(String),
    #[error(
        "exact enumeration over {variables} variables ({m} units) exceeds the limit of \
         {max_units} units; use a long Monte Carlo run with the true parameters instead"
    )]
    TooLarge {
        m: u32,
        variables: usize,
        max_units: u32,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Treatment-assignment policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Policy {
    /// Every unit treated independently with probability `alpha`.
    Bernoulli(f64),
    /// Treatment drawn from the fitted treatment-tier model given covariates.
    Natural,
}

impl Policy {
    pub fn bernoulli(alpha: f64) -> Result<Self, EstimateError> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Policy::Bernoulli(alpha))
        } else {
            Err(EstimateError::Policy {
                input: alpha.to_string(),
                reason: "probability must lie strictly between 0 and 1".into(),
            })
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Bernoulli(a) => write!(f, "bernoulli:{a}"),
            Policy::Natural => f.write_str("natural"),
        }
    }
}

impl FromStr for Policy {
    type Err = EstimateError;

    /// Accepts `natural`, `bernoulli:<alpha>` or a bare probability.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "natural" {
            return Ok(Policy::Natural);
        }
        let num = s.strip_prefix("bernoulli:").unwrap_or(s);
        let alpha: f64 = num.parse().map_err(|_| EstimateError::Policy {
            input: s.to_string(),
            reason: "expected natural, bernoulli:<alpha> or a probability".into(),
        })?;
        Policy::bernoulli(alpha).map_err(|_| EstimateError::Policy {
            input: s.to_string(),
            reason: "probability must lie strictly between 0 and 1".into(),
        })
    }
}

impl Serialize for Policy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Monte Carlo settings of the g-computation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoGConfig {
    /// Monte Carlo draws per policy.
    pub t: usize,
    /// Sweeps per dependent tier before the first draw of each chain.
    pub burn_in: usize,
    /// Sweeps per dependent tier between draws.
    pub thin: usize,
    pub seed: u64,
    /// Parameter sharing used when fitting the model from data.
    pub sharing: Sharing,
}

impl Default for AutoGConfig {
    fn default() -> Self {
        AutoGConfig {
            t: 10_000,
            burn_in: 1000,
            thin: 100,
            seed: 0,
            sharing: Sharing::None,
        }
    }
}

impl AutoGConfig {
    pub fn validate(&self) -> Result<(), EstimateError> {
        if self.t == 0 {
            return Err(EstimateError::Config("T must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(EstimateError::Config("thin must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub paoe: f64,
    /// Mean outcome under each policy.
    pub per_policy_means: [f64; 2],
    pub policy1: Policy,
    pub policy2: Policy,
    #[serde(rename = "T")]
    pub t: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

/// Fits the model on `data` and estimates `E[Y | policy1] - E[Y | policy2]`.
pub fn auto_g_paoe(
    data: &BlockDataset,
    graph: &TieredChainGraph,
    policy1: Policy,
    policy2: Policy,
    config: &AutoGConfig,
) -> Result<EffectEstimate, EstimateError> {
    config.validate()?;
    let params = fit_pseudolikelihood(data, graph, config.sharing, &FitOptions::default())?;
    auto_g_with_params(graph, &params, policy1, policy2, config)
}

/// As [`auto_g_paoe`] with the model parameters given.
pub fn auto_g_with_params(
    graph: &TieredChainGraph,
    params: &ModelParams,
    policy1: Policy,
    policy2: Policy,
    config: &AutoGConfig,
) -> Result<EffectEstimate, EstimateError> {
    config.validate()?;
    let model = CompiledModel::new(graph, params)?;
    let sampler = TierSampler::new(graph, &model);
    let m1 = policy_mean(graph, &model, &sampler, policy1, config);
    let m2 = if policy2 == policy1 {
        m1
    } else {
        policy_mean(graph, &model, &sampler, policy2, config)
    };
    Ok(EffectEstimate {
        paoe: m1 - m2,
        per_policy_means: [m1, m2],
        policy1,
        policy2,
        t: config.t,
        burn_in: config.burn_in,
        thin: config.thin,
        seed: config.seed,
    })
}

/// Average outcome over units and draws under one policy. Depends only on
/// the policy and the configuration, never on which side of the contrast the
/// policy is on.
fn policy_mean(
    graph: &TieredChainGraph,
    model: &CompiledModel,
    sampler: &TierSampler,
    policy: Policy,
    config: &AutoGConfig,
) -> f64 {
    let seed = derive_seed(config.seed, &[AUTO_G_TAG]);
    let chains = config.t.div_ceil(DRAWS_PER_CHAIN);
    let y_cols = sampler.columns(Tier::Y).to_vec();
    let sums: Vec<u64> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let chain_seed = derive_seed(seed, &[c as u64]);
            let mut rng_l = stream_rng(chain_seed, 0);
            let mut rng_a = stream_rng(chain_seed, 1);
            let mut rng_y = stream_rng(chain_seed, 2);
            let draws = DRAWS_PER_CHAIN.min(config.t - c * DRAWS_PER_CHAIN);
            let mut x = vec![0u8; model.width()];
            sampler.initialize(&mut x, &mut rng_l);
            let mut step = |x: &mut Vec<u8>, sweeps: usize| {
                sampler.advance(model, x, Tier::L, sweeps, &mut rng_l);
                match policy {
                    Policy::Bernoulli(alpha) => {
                        for &col in sampler.columns(Tier::A) {
                            x[col] = u8::from(rng_a.gen::<f64>() < alpha);
                        }
                    }
                    Policy::Natural => sampler.advance(model, x, Tier::A, sweeps, &mut rng_a),
                }
                sampler.advance(model, x, Tier::Y, sweeps, &mut rng_y);
            };
            step(&mut x, config.burn_in);
            let mut total = 0u64;
            for _ in 0..draws {
                step(&mut x, config.thin);
                total += y_cols.iter().map(|&c| x[c] as u64).sum::<u64>();
            }
            total
        })
        .collect();
    let total: u64 = sums.iter().sum();
    total as f64 / (config.t as f64 * graph.m() as f64)
}

/// One treatment-tier draw from the fitted model given covariates in `x`,
/// after `burn_in` sweeps from fair-coin starting values.
pub fn natural_policy_sampler<R: Rng>(
    graph: &TieredChainGraph,
    params: &ModelParams,
    x: &mut [u8],
    burn_in: usize,
    rng: &mut R,
) -> Result<(), EstimateError> {
    let model = CompiledModel::new(graph, params)?;
    let sampler = TierSampler::new(graph, &model);
    for &c in sampler.columns(Tier::A) {
        x[c] = u8::from(rng.gen::<bool>());
    }
    sampler.advance(&model, x, Tier::A, burn_in, rng);
    Ok(())
}

/// Unnormalized log-density of one tier's assignment given the earlier tiers.
fn tier_energy(model: &CompiledModel, cols: &[usize], in_tier: &[bool], x: &[u8]) -> f64 {
    let mut e = 0.0;
    for &c in cols {
        if x[c] == 0 {
            continue;
        }
        e += model.main(c);
        for &(src, w) in model.terms(c) {
            let f = if in_tier[src] { 0.5 } else { 1.0 };
            e += f * w * x[src] as f64;
        }
    }
    e
}

/// Normalized distribution over the `2^cols` assignments of a tier, writing
/// each assignment into `x` in turn.
fn tier_distribution(
    model: &CompiledModel,
    cols: &[usize],
    in_tier: &[bool],
    x: &mut [u8],
) -> Vec<f64> {
    let states = 1usize << cols.len();
    let mut logw: Vec<f64> = (0..states)
        .map(|s| {
            set_state(x, cols, s);
            tier_energy(model, cols, in_tier, x)
        })
        .collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in logw.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    for w in logw.iter_mut() {
        *w /= total;
    }
    logw
}

fn set_state(x: &mut [u8], cols: &[usize], s: usize) {
    for (i, &c) in cols.iter().enumerate() {
        x[c] = ((s >> i) & 1) as u8;
    }
}

/// Exact PAOE by enumerating every covariate, treatment and outcome
/// configuration of one block.
pub fn exact_paoe(
    graph: &TieredChainGraph,
    params: &ModelParams,
    policy1: Policy,
    policy2: Policy,
    max_units: u32,
) -> Result<f64, EstimateError> {
    if graph.m() > max_units {
        return Err(EstimateError::TooLarge {
            m: graph.m(),
            variables: graph.num_variables(),
            max_units,
        });
    }
    if policy1 == policy2 {
        return Ok(0.0);
    }
    let model = CompiledModel::new(graph, params)?;
    let sampler = TierSampler::new(graph, &model);
    let width = model.width();
    let cols = |t| sampler.columns(t).to_vec();
    let (l_cols, a_cols, y_cols) = (cols(Tier::L), cols(Tier::A), cols(Tier::Y));
    let mask = |cs: &[usize]| {
        let mut v = vec![false; width];
        for &c in cs {
            v[c] = true;
        }
        v
    };
    let (l_in, a_in, y_in) = (mask(&l_cols), mask(&a_cols), mask(&y_cols));
    let m = graph.m() as f64;

    let mut x = vec![0u8; width];
    let p_l = tier_distribution(&model, &l_cols, &l_in, &mut x);
    let l_states: Vec<usize> = (0..p_l.len()).collect();
    let parts: Vec<f64> = l_states
        .par_iter()
        .map(|&ls| {
            let mut x = vec![0u8; width];
            set_state(&mut x, &l_cols, ls);
            let natural = tier_distribution(&model, &a_cols, &a_in, &mut x);
            let mut acc = 0.0;
            for (as_, nat) in natural.iter().enumerate() {
                set_state(&mut x, &a_cols, as_);
                let ones = as_.count_ones() as i32;
                let zeros = a_cols.len() as i32 - ones;
                let weight = |pol: Policy| match pol {
                    Policy::Natural => *nat,
                    Policy::Bernoulli(a) => a.powi(ones) * (1.0 - a).powi(zeros),
                };
                let dw = weight(policy1) - weight(policy2);
                if dw == 0.0 {
                    continue;
                }
                let p_y = tier_distribution(&model, &y_cols, &y_in, &mut x);
                let mean_y: f64 = p_y
                    .iter()
                    .enumerate()
                    .map(|(ys, p)| p * ys.count_ones() as f64)
                    .sum::<f64>()
                    / m;
                acc += dw * mean_y;
            }
            p_l[ls] * acc
        })
        .collect();
    Ok(parts.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_parsing() {
        assert_eq!("natural".parse::<Policy>().unwrap(), Policy::Natural);
        assert_eq!(
            "bernoulli:0.7".parse::<Policy>().unwrap(),
            Policy::Bernoulli(0.7)
        );
        assert_eq!("0.3".parse::<Policy>().unwrap(), Policy::Bernoulli(0.3));
        assert!("1.0".parse::<Policy>().is_err());
        assert!("sometimes".parse::<Policy>().is_err());
        assert_eq!(Policy::Bernoulli(0.7).to_string(), "bernoulli:0.7");
    }

    #[test]
    fn zero_draws_rejected() {
        let cfg = AutoGConfig {
            t: 0,
            ..AutoGConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(EstimateError::Config(_))));
    }
}

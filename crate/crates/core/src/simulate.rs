//! Ground-truth graphs and Gibbs data generation.
//!
//! The generating model is
//!
//! ```text
//! P(L_i = 1)          = expit(tau1)
//! P(A_i = 1 | ...)    = expit(beta1 L_i + beta2 sum_{j ~ i} A_j)
//! P(Y_i = 1 | ...)    = expit(nu1 L_i + nu2 A_i + nu3 sum_{j ~ i} A_j + nu4 sum_{j ~ i} Y_j)
//! ```
//!
//! over a `k`-regular unit network, with several covariates entering through
//! their sum.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::BlockDataset;
use crate::graph::{
    all_unit_pairs, EdgeKind, EdgePrototype, GraphError, Tier, TieredChainGraph, VarKind,
};
use crate::model::{CompiledModel, ModelError, ModelParams, Sharing};
use crate::rng::{derive_seed, stream_rng};
use crate::sampler::TierSampler;

/// Blocks generated by one Gibbs chain before a fresh chain is started.
pub const BLOCKS_PER_CHAIN: usize = 64;

const GENERATE_TAG: u64 = 0x6765_6e65;
const SHUFFLE_TAG: u64 = 0x7368_7566;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("infeasible network: m={m}, k={k}: {reason}")]
    Infeasible { m: u32, k: u32, reason: String },
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("cannot shuffle network: {0}")]
    Shuffle(String),
    #[error("coefficient {name} must be finite, got {value}")]
    Coefficient { name: &'static str, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Coefficients of the generating equations:
/// `P(L = 1) = expit(tau1)`,
/// `P(A_i = 1 | .) = expit(beta1 L_i + beta2 sum_j A_j)` and
/// `P(Y_i = 1 | .) = expit(nu1 L_i + nu2 A_i + nu3 sum_j A_j + nu4 sum_j Y_j)`,
/// with sums over the network neighbours of `i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenCoefficients {
    pub tau1: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    /// Outcome-outcome coupling between adjacent units.
    pub nu4: f64,
}

impl Default for GenCoefficients {
    fn default() -> Self {
        GenCoefficients {
            tau1: 0.5,
            beta1: -1.5,
            beta2: 0.8,
            nu1: -1.0,
            nu2: 1.0,
            nu3: 1.0,
            nu4: 0.8,
        }
    }
}

impl GenCoefficients {
    pub fn zeros() -> Self {
        GenCoefficients {
            tau1: 0.0,
            beta1: 0.0,
            beta2: 0.0,
            nu1: 0.0,
            nu2: 0.0,
            nu3: 0.0,
            nu4: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [
            ("tau1", self.tau1),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("nu1", self.nu1),
            ("nu2", self.nu2),
            ("nu3", self.nu3),
            ("nu4", self.nu4),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(SimError::Coefficient { name, value });
            }
        }
        Ok(())
    }

    /// Conditional-model parameters of `graph` under these coefficients.
    /// Edges outside the generating family get coefficient zero.
    pub fn params_for(&self, graph: &TieredChainGraph) -> ModelParams {
        let mut params = ModelParams::zeros(graph, Sharing::Homogeneous);
        for (v, main) in params.main.iter_mut() {
            *main = match v.kind {
                VarKind::L(_) => self.tau1,
                _ => 0.0,
            };
        }
        for (e, w) in params.pairwise.iter_mut() {
            let cross = e.is_cross_unit();
            *w = match (e.tail.kind, e.head.kind, cross) {
                (VarKind::L(_), VarKind::A, false) => self.beta1,
                (VarKind::L(_), VarKind::Y, false) => self.nu1,
                (VarKind::A, VarKind::Y, false) => self.nu2,
                (VarKind::A, VarKind::A, true) => self.beta2,
                (VarKind::A, VarKind::Y, true) => self.nu3,
                (VarKind::Y, VarKind::Y, true) => self.nu4,
                _ => 0.0,
            };
        }
        params
    }
}

/// Gibbs chain settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub n: usize,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.thin < 1 {
            return Err(SimError::Config("thin must be at least 1".into()));
        }
        if self.n < 1 {
            return Err(SimError::Config("n must be at least 1".into()));
        }
        Ok(())
    }
}

/// Prototypes of the generating family: `A--A`, `Y--Y` and `A->Y`.
pub fn truth_prototypes() -> BTreeSet<EdgePrototype> {
    [
        EdgePrototype::new(VarKind::A, VarKind::A, EdgeKind::Undirected),
        EdgePrototype::new(VarKind::Y, VarKind::Y, EdgeKind::Undirected),
        EdgePrototype::new(VarKind::A, VarKind::Y, EdgeKind::Directed),
    ]
    .into_iter()
    .collect()
}

/// Circulant `k`-regular network on units `1..=m`: unit `i` is joined to
/// `i +- 1, ..., i +- k/2`, plus the opposite unit when `k` is odd.
pub fn k_regular_network(m: u32, k: u32) -> Result<BTreeSet<(u32, u32)>, SimError> {
    let infeasible = |reason: &str| SimError::Infeasible {
        m,
        k,
        reason: reason.to_string(),
    };
    if m == 0 {
        return Err(infeasible("need at least one unit"));
    }
    if k > 0 && k >= m {
        return Err(infeasible("k must be smaller than m"));
    }
    if !(k * m).is_multiple_of(2) {
        return Err(infeasible("k * m must be even"));
    }
    let mut pairs = BTreeSet::new();
    let mut join = |i: u32, off: u32| {
        let j = (i + off) % m;
        if i != j {
            let (a, b) = (i.min(j) + 1, i.max(j) + 1);
            pairs.insert((a, b));
        }
    };
    for i in 0..m {
        for off in 1..=k / 2 {
            join(i, off);
        }
        if k % 2 == 1 {
            join(i, m / 2);
        }
    }
    Ok(pairs)
}

/// Truth graph: the generating prototypes on a `k`-regular network.
pub fn build_k_regular_truth(m: u32, k: u32, p: u32) -> Result<TieredChainGraph, SimError> {
    let network = k_regular_network(m, k)?;
    Ok(TieredChainGraph::homogeneous(
        m,
        p,
        &network,
        &truth_prototypes(),
    )?)
}

/// Unit template only, no network ties.
pub fn empty_graph(m: u32, p: u32) -> TieredChainGraph {
    TieredChainGraph::empty(m, p)
}

/// Draws `config.n` blocks from `graph` with the given coefficients.
pub fn gibbs_generate(
    graph: &TieredChainGraph,
    coeffs: &GenCoefficients,
    config: &SamplerConfig,
) -> Result<BlockDataset, SimError> {
    coeffs.validate()?;
    gibbs_generate_params(graph, &coeffs.params_for(graph), config)
}

/// Draws `config.n` blocks from `graph` under arbitrary parameters.
///
/// Blocks are produced by independent chains of [`BLOCKS_PER_CHAIN`] blocks.
/// Each chain starts from fair coin flips, runs `burn_in` sweeps per tier and
/// then emits a block every `thin` sweeps, updating tiers in the order
/// `L, A, Y`. Tiers whose variables are independent given earlier tiers are
/// drawn exactly in one sweep. Covariates are redrawn for every block, so
/// `thin` is also the number of sweeps the treatment and outcome tiers get to
/// settle on them; a very small `thin` biases tiers with within-tier ties.
pub fn gibbs_generate_params(
    graph: &TieredChainGraph,
    params: &ModelParams,
    config: &SamplerConfig,
) -> Result<BlockDataset, SimError> {
    config.validate()?;
    let model = CompiledModel::new(graph, params)?;
    let sampler = TierSampler::new(graph, &model);
    let d = graph.num_variables();
    let seed = derive_seed(config.seed, &[GENERATE_TAG]);
    let chains = config.n.div_ceil(BLOCKS_PER_CHAIN);
    let chunks: Vec<Vec<u8>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let count = BLOCKS_PER_CHAIN.min(config.n - c * BLOCKS_PER_CHAIN);
            let mut x = vec![0u8; d];
            sampler.initialize(&mut x, &mut rng);
            for tier in Tier::ALL {
                sampler.advance(&model, &mut x, tier, config.burn_in, &mut rng);
            }
            let mut out = Vec::with_capacity(count * d);
            for _ in 0..count {
                for tier in Tier::ALL {
                    sampler.advance(&model, &mut x, tier, config.thin, &mut rng);
                }
                out.extend_from_slice(&x);
            }
            out
        })
        .collect();
    Ok(
        BlockDataset::new(graph.m(), graph.p(), chunks.concat())
            .expect("sampler emits binary rows"),
    )
}

/// Same prototypes placed on a random network with as many pairs as the
/// truth's, redrawn until it differs from the truth.
pub fn shuffle_network(graph: &TieredChainGraph, seed: u64) -> Result<TieredChainGraph, SimError> {
    let truth = graph.network();
    let all: Vec<(u32, u32)> = all_unit_pairs(graph.m()).into_iter().collect();
    if truth.is_empty() {
        return Err(SimError::Shuffle("the network has no ties".into()));
    }
    if truth.len() >= all.len() {
        return Err(SimError::Shuffle(format!(
            "all {} unit pairs are adjacent, so no different network of the same size exists",
            all.len()
        )));
    }
    let protos = graph.prototypes();
    let mut rng = stream_rng(derive_seed(seed, &[SHUFFLE_TAG]), 0);
    loop {
        let drawn: BTreeSet<(u32, u32)> = sample(&mut rng, all.len(), truth.len())
            .into_iter()
            .map(|i| all[i])
            .collect();
        if drawn != truth {
            let mut cross = BTreeSet::new();
            for &(i, j) in &drawn {
                for proto in &protos {
                    cross.extend(proto.between(i, j));
                }
            }
            return Ok(TieredChainGraph::new(
                graph.m(),
                graph.p(),
                graph.unit_edges().iter().copied(),
                cross,
            )?);
        }
    }
}

//! Binary auto-logistic conditional models on a tiered chain graph.
//!
//! Each variable's conditional given its boundary is
//! `expit(main_v + sum_u theta_uv * x_u)`. Directed edges carry a coefficient
//! in the head's conditional only; an undirected edge's coefficient appears in
//! both endpoints' conditionals.

mod fit;
mod score;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fit::{
    expit, factor_specs, fit_factor, fit_factor_from, softplus, FactorFit, FactorLayout,
    FactorSpec, FitOptions, ParamKey, VertexTerms,
};
pub use score::{local_set, LocalSet, Scorer};

use crate::data::BlockDataset;
use crate::graph::{Edge, GraphError, TieredChainGraph, VariableId, ViolationKind};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dataset has m={data_m}, p={data_p} but the graph has m={graph_m}, p={graph_p}")]
    DimensionMismatch {
        data_m: u32,
        data_p: u32,
        graph_m: u32,
        graph_p: u32,
    },
    #[error("no value supplied for boundary variable {0}")]
    MissingBoundary(VariableId),
    #[error("variable {0} is not in the graph")]
    UnknownVariable(VariableId),
    #[error("edge {0} is not in the graph")]
    EdgeAbsent(Edge),
    #[error("edge {0} is already in the graph")]
    EdgePresent(Edge),
    #[error("edge {edge} violates {rule}")]
    IllegalEdge { edge: Edge, rule: ViolationKind },
    #[error("model has no parameter for {0}")]
    MissingParameter(String),
    #[error(
        "pseudolikelihood optimizer did not converge within {iterations} iterations \
         (gradient max-norm {grad_norm:.3e}, tolerance {tolerance:e})"
    )]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        tolerance: f64,
    },
    #[error("params file: {0}")]
    Params(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// How parameters are tied across units.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Sharing {
    /// One parameter per variable and per edge.
    #[default]
    None,
    /// One main effect per variable kind, one parameter per unit-template
    /// edge and one per network-tie prototype.
    Homogeneous,
    /// As `Homogeneous`, but with one main effect per variable.
    Ties,
}

impl std::fmt::Display for Sharing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sharing::None => "none",
            Sharing::Homogeneous => "homogeneous",
            Sharing::Ties => "ties",
        })
    }
}

impl std::str::FromStr for Sharing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Sharing::None),
            "homogeneous" => Ok(Sharing::Homogeneous),
            "ties" => Ok(Sharing::Ties),
            _ => Err(format!(
                "unknown sharing {s:?} (expected none, homogeneous or ties)"
            )),
        }
    }
}

/// Coefficients of the conditional models, stored per variable and per edge
/// whatever the sharing scheme.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    pub sharing: Sharing,
    pub main: BTreeMap<VariableId, f64>,
    pub pairwise: BTreeMap<Edge, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    sharing: Sharing,
    main: BTreeMap<String, f64>,
    pairwise: BTreeMap<String, f64>,
}

impl ModelParams {
    /// All-zero parameters for every variable and edge of `graph`.
    pub fn zeros(graph: &TieredChainGraph, sharing: Sharing) -> Self {
        ModelParams {
            sharing,
            main: graph.variables().into_iter().map(|v| (v, 0.0)).collect(),
            pairwise: graph.edges().into_iter().map(|e| (e, 0.0)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let raw = RawParams {
            sharing: self.sharing,
            main: self.main.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            pairwise: self
                .pairwise
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("params serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: RawParams = serde_json::from_str(text).map_err(|e| {
            ModelError::Params(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        let mut main = BTreeMap::new();
        for (k, v) in raw.main {
            let id: VariableId = k
                .parse()
                .map_err(|e| ModelError::Params(format!("main key {k:?}: {e}")))?;
            main.insert(id, v);
        }
        let mut pairwise = BTreeMap::new();
        for (k, v) in raw.pairwise {
            let e: Edge = k
                .parse()
                .map_err(|e| ModelError::Params(format!("pairwise key {k:?}: {e}")))?;
            pairwise.insert(e, v);
        }
        Ok(ModelParams {
            sharing: raw.sharing,
            main,
            pairwise,
        })
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Params(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks that `graph`'s variables and edges have exactly one parameter each.
    pub fn check_against(&self, graph: &TieredChainGraph) -> Result<(), ModelError> {
        for v in graph.variables() {
            if !self.main.contains_key(&v) {
                return Err(ModelError::MissingParameter(format!("main {v}")));
            }
        }
        for e in graph.edges() {
            if !self.pairwise.contains_key(&e) {
                return Err(ModelError::MissingParameter(format!("edge {e}")));
            }
        }
        if let Some(e) = self.pairwise.keys().find(|e| !graph.contains_edge(e)) {
            return Err(ModelError::EdgeAbsent(*e));
        }
        Ok(())
    }
}

/// Linear predictors of every variable's conditional, laid out by data column.
#[derive(Clone, Debug)]
pub struct CompiledModel {
    p: u32,
    main: Vec<f64>,
    terms: Vec<Vec<(usize, f64)>>,
}

impl CompiledModel {
    pub fn new(graph: &TieredChainGraph, params: &ModelParams) -> Result<Self, ModelError> {
        params.check_against(graph)?;
        let d = graph.num_variables();
        let p = graph.p();
        let mut main = vec![0.0; d];
        for v in graph.variables() {
            main[v.column(p)] = params.main[&v];
        }
        let mut terms = vec![Vec::new(); d];
        for e in graph.edges() {
            let w = params.pairwise[&e];
            terms[e.head.column(p)].push((e.tail.column(p), w));
            if e.kind == crate::graph::EdgeKind::Undirected {
                terms[e.tail.column(p)].push((e.head.column(p), w));
            }
        }
        Ok(CompiledModel { p, main, terms })
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn width(&self) -> usize {
        self.main.len()
    }

    /// Linear predictor of column `col` given a full assignment.
    pub fn eta(&self, col: usize, x: &[u8]) -> f64 {
        self.terms[col]
            .iter()
            .fold(self.main[col], |acc, &(c, w)| acc + w * x[c] as f64)
    }

    /// `P(x_col = 1 | rest)`.
    pub fn prob_one(&self, col: usize, x: &[u8]) -> f64 {
        expit(self.eta(col, x))
    }

    pub fn main(&self, col: usize) -> f64 {
        self.main[col]
    }

    pub fn terms(&self, col: usize) -> &[(usize, f64)] {
        &self.terms[col]
    }
}

/// `P(v = 1 | boundary)` from an assignment that covers the boundary of `v`.
pub fn conditional_prob(
    params: &ModelParams,
    graph: &TieredChainGraph,
    v: VariableId,
    assignment: &BTreeMap<VariableId, u8>,
) -> Result<f64, ModelError> {
    if !graph.contains_variable(v) {
        return Err(ModelError::UnknownVariable(v));
    }
    let adj = graph.adjacency(v)?;
    let mut eta = *params
        .main
        .get(&v)
        .ok_or_else(|| ModelError::MissingParameter(format!("main {v}")))?;
    for e in graph.edges().iter().filter(|e| e.enters(v)) {
        let u = e.other(v);
        debug_assert!(adj.boundary.contains(&u));
        let x = *assignment.get(&u).ok_or(ModelError::MissingBoundary(u))?;
        let w = *params
            .pairwise
            .get(e)
            .ok_or_else(|| ModelError::MissingParameter(format!("edge {e}")))?;
        eta += w * x as f64;
    }
    Ok(expit(eta))
}

pub(crate) fn check_dims(data: &BlockDataset, graph: &TieredChainGraph) -> Result<(), ModelError> {
    if data.m() != graph.m() || data.p() != graph.p() {
        return Err(ModelError::DimensionMismatch {
            data_m: data.m(),
            data_p: data.p(),
            graph_m: graph.m(),
            graph_p: graph.p(),
        });
    }
    Ok(())
}

/// Sum over blocks and variables of `ln p(x_v | bd(v))`.
pub fn log_pseudolikelihood(
    data: &BlockDataset,
    graph: &TieredChainGraph,
    params: &ModelParams,
) -> Result<f64, ModelError> {
    check_dims(data, graph)?;
    let model = CompiledModel::new(graph, params)?;
    let mut total = 0.0;
    for row in data.rows() {
        for col in 0..model.width() {
            let eta = model.eta(col, row);
            let signed = if row[col] == 1 { eta } else { -eta };
            total -= softplus(-signed);
        }
    }
    Ok(total)
}

/// Gradient of [`log_pseudolikelihood`] with respect to every per-variable
/// and per-edge coefficient, in the same layout as `params`.
pub fn log_pseudolikelihood_gradient(
    data: &BlockDataset,
    graph: &TieredChainGraph,
    params: &ModelParams,
) -> Result<ModelParams, ModelError> {
    check_dims(data, graph)?;
    let model = CompiledModel::new(graph, params)?;
    let p = graph.p();
    let mut resid = vec![0.0; model.width()];
    let mut grad = ModelParams::zeros(graph, params.sharing);
    let edges = graph.edges();
    let mut edge_grad = vec![0.0; edges.len()];
    for row in data.rows() {
        for (col, r) in resid.iter_mut().enumerate() {
            *r = row[col] as f64 - model.prob_one(col, row);
        }
        for (e, g) in edges.iter().zip(edge_grad.iter_mut()) {
            let (t, h) = (e.tail.column(p), e.head.column(p));
            *g += resid[h] * row[t] as f64;
            if e.kind == crate::graph::EdgeKind::Undirected {
                *g += resid[t] * row[h] as f64;
            }
        }
        for v in grad.main.iter_mut() {
            *v.1 += resid[v.0.column(p)];
        }
    }
    for (e, g) in edges.iter().zip(edge_grad) {
        grad.pairwise.insert(*e, g);
    }
    Ok(grad)
}

/// Number of free parameters under the given sharing scheme.
pub fn param_count(graph: &TieredChainGraph, sharing: Sharing) -> usize {
    factor_specs(graph, sharing, None)
        .iter()
        .map(FactorSpec::num_params)
        .sum()
}

/// Maximizes the penalized pseudolikelihood jointly over each factor.
pub fn fit_pseudolikelihood(
    data: &BlockDataset,
    graph: &TieredChainGraph,
    sharing: Sharing,
    opts: &FitOptions,
) -> Result<ModelParams, ModelError> {
    check_dims(data, graph)?;
    let mut params = ModelParams {
        sharing,
        ..Default::default()
    };
    for spec in factor_specs(graph, sharing, None) {
        let fit = fit_factor(data, &spec, opts)?;
        expand_into(&fit, &mut params);
    }
    Ok(params)
}

/// Writes a factor's fitted values into per-variable and per-edge maps.
pub fn expand_into(fit: &FactorFit, params: &mut ModelParams) {
    let index: BTreeMap<ParamKey, f64> = fit
        .keys
        .iter()
        .copied()
        .zip(fit.theta.iter().copied())
        .collect();
    for &v in &fit.spec.vertices {
        params
            .main
            .insert(v, index[&ParamKey::for_main(v, fit.spec.sharing)]);
    }
    for e in &fit.spec.edges {
        params
            .pairwise
            .insert(*e, index[&ParamKey::for_edge(e, fit.spec.sharing)]);
    }
}

/// `2 ln PL - k ln n` at the fitted parameters.
pub fn pbic(
    data: &BlockDataset,
    graph: &TieredChainGraph,
    sharing: Sharing,
    opts: &FitOptions,
) -> Result<f64, ModelError> {
    check_dims(data, graph)?;
    Scorer::new(data, *opts, false).pbic(graph, sharing)
}

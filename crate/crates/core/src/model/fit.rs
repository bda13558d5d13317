//! Joint pseudolikelihood fitting of one factor of the model.
//!
//! The log-pseudolikelihood separates into independent factors: with no
//! parameter sharing each block of the graph is a factor (undirected
//! interactions couple the conditionals of all block members), and with
//! homogeneous sharing each tier is a factor (tied parameters couple all
//! units). A factor is fitted by damped Newton ascent on the average
//! log-pseudolikelihood minus a ridge penalty.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::{ModelError, Sharing};
use crate::data::BlockDataset;
use crate::graph::{Edge, EdgePrototype, Tier, TieredChainGraph, VarKind, VariableId};

/// Optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    /// Ridge weight on the squared parameter norm, relative to the average
    /// log-pseudolikelihood per block.
    pub ridge: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    /// Bound on the magnitude of main effects.
    pub main_clamp: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            ridge: 1e-4,
            max_iter: 500,
            grad_tol: 1e-8,
            rel_tol: 1e-10,
            main_clamp: 15.0,
        }
    }
}

/// Identity of one free parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKey {
    Main(VariableId),
    Edge(Edge),
    SharedMain(VarKind),
    SharedTemplate(EdgePrototype),
    SharedCross(EdgePrototype),
}

impl ParamKey {
    pub fn is_main(&self) -> bool {
        matches!(self, ParamKey::Main(_) | ParamKey::SharedMain(_))
    }

    /// Parameter carrying the main effect of `v`.
    pub fn for_main(v: VariableId, sharing: Sharing) -> Self {
        match sharing {
            Sharing::None | Sharing::Ties => ParamKey::Main(v),
            Sharing::Homogeneous => ParamKey::SharedMain(v.kind),
        }
    }

    /// Parameter carrying the interaction of edge `e`.
    pub fn for_edge(e: &Edge, sharing: Sharing) -> Self {
        match sharing {
            Sharing::None => ParamKey::Edge(*e),
            _ if e.is_cross_unit() => ParamKey::SharedCross(e.prototype()),
            _ => ParamKey::SharedTemplate(e.prototype()),
        }
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamKey::Main(v) => write!(f, "main {v}"),
            ParamKey::Edge(e) => write!(f, "edge {e}"),
            ParamKey::SharedMain(k) => write!(f, "main {k}"),
            ParamKey::SharedTemplate(p) => write!(f, "unit {p}"),
            ParamKey::SharedCross(p) => write!(f, "tie {p}"),
        }
    }
}

/// The random vertices of a factor and the edges entering them. Two equal
/// specs always produce the same fit on the same data, which makes specs
/// usable as cache keys.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FactorSpec {
    pub sharing: Sharing,
    pub tier: Tier,
    pub vertices: Vec<VariableId>,
    pub edges: Vec<Edge>,
}

impl FactorSpec {
    pub fn param_keys(&self) -> BTreeSet<ParamKey> {
        let mut keys: BTreeSet<ParamKey> = self
            .vertices
            .iter()
            .map(|v| ParamKey::for_main(*v, self.sharing))
            .collect();
        keys.extend(
            self.edges
                .iter()
                .map(|e| ParamKey::for_edge(e, self.sharing)),
        );
        keys
    }

    pub fn num_params(&self) -> usize {
        self.param_keys().len()
    }
}

/// Splits a graph into independently fitted factors, restricted to `tiers`
/// when given. Output is sorted.
pub fn factor_specs(
    graph: &TieredChainGraph,
    sharing: Sharing,
    tiers: Option<&BTreeSet<Tier>>,
) -> Vec<FactorSpec> {
    let idx = graph.index();
    let wanted = |t: Tier| tiers.is_none_or(|ts| ts.contains(&t));
    let edges = graph.edges();
    let mut out = Vec::new();
    match sharing {
        Sharing::None => {
            for block in idx.blocks() {
                let tier = block.iter().next().expect("blocks are nonempty").tier();
                if !wanted(tier) {
                    continue;
                }
                let block_edges = edges
                    .iter()
                    .filter(|e| block.contains(&e.head))
                    .copied()
                    .collect();
                out.push(FactorSpec {
                    sharing,
                    tier,
                    vertices: block.into_iter().collect(),
                    edges: block_edges,
                });
            }
        }
        Sharing::Homogeneous | Sharing::Ties => {
            for tier in Tier::ALL {
                if !wanted(tier) {
                    continue;
                }
                out.push(FactorSpec {
                    sharing,
                    tier,
                    vertices: graph.tier_variables(tier),
                    edges: edges
                        .iter()
                        .filter(|e| e.head.tier() == tier)
                        .copied()
                        .collect(),
                });
            }
        }
    }
    out.sort();
    out
}

/// One vertex's linear predictor: `sum_k theta[param_k] * x[source_k]`, with
/// `None` standing for the constant 1.
#[derive(Clone, Debug)]
pub struct VertexTerms {
    pub vertex: VariableId,
    pub column: usize,
    pub features: Vec<(usize, Option<usize>)>,
}

/// Parameter layout of a factor.
#[derive(Clone, Debug)]
pub struct FactorLayout {
    pub keys: Vec<ParamKey>,
    pub terms: Vec<VertexTerms>,
}

impl FactorLayout {
    pub fn new(spec: &FactorSpec, p: u32) -> Self {
        let keys: Vec<ParamKey> = spec.param_keys().into_iter().collect();
        let index: BTreeMap<ParamKey, usize> =
            keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let terms = spec
            .vertices
            .iter()
            .map(|&v| {
                let mut features = vec![(index[&ParamKey::for_main(v, spec.sharing)], None)];
                for e in &spec.edges {
                    if e.enters(v) {
                        let k = index[&ParamKey::for_edge(e, spec.sharing)];
                        features.push((k, Some(e.other(v).column(p))));
                    }
                }
                VertexTerms {
                    vertex: v,
                    column: v.column(p),
                    features,
                }
            })
            .collect();
        FactorLayout { keys, terms }
    }
}

/// Fitted factor.
#[derive(Clone, Debug)]
pub struct FactorFit {
    pub spec: FactorSpec,
    pub keys: Vec<ParamKey>,
    pub theta: Vec<f64>,
    /// Log-pseudolikelihood of the factor's vertices at `theta`.
    pub loglik: f64,
    /// Per-vertex score components `2 * sum_blocks ln p(v | bd(v))`.
    pub components: Vec<(VariableId, f64)>,
    pub iterations: usize,
}

impl FactorFit {
    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    /// Contribution of this factor to PBIC.
    pub fn pbic(&self, n: usize) -> f64 {
        2.0 * self.loglik - self.theta.len() as f64 * (n as f64).ln()
    }
}

/// Distinct feature vectors with their outcome counts, pooled over vertices
/// and blocks.
struct Patterns {
    /// Parameter indices for each signature.
    signatures: Vec<Vec<usize>>,
    /// (signature, feature values, count of x = 1, count of x = 0)
    rows: Vec<(usize, Vec<u8>, f64, f64)>,
}

fn collect_patterns(data: &BlockDataset, layout: &FactorLayout) -> Patterns {
    let mut sig_index: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut signatures = Vec::new();
    let mut counts: BTreeMap<(usize, Vec<u8>), (f64, f64)> = BTreeMap::new();
    for term in &layout.terms {
        let params: Vec<usize> = term
            .features
            .iter()
            .map(|f| f.0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let sig = *sig_index.entry(params.clone()).or_insert_with(|| {
            signatures.push(params.clone());
            signatures.len() - 1
        });
        let slot: Vec<usize> = term
            .features
            .iter()
            .map(|f| params.binary_search(&f.0).expect("param listed"))
            .collect();
        for row in data.rows() {
            let mut z = vec![0u8; params.len()];
            for (s, f) in slot.iter().zip(&term.features) {
                z[*s] += f.1.map_or(1, |c| row[c]);
            }
            let entry = counts.entry((sig, z)).or_insert((0.0, 0.0));
            if row[term.column] == 1 {
                entry.0 += 1.0;
            } else {
                entry.1 += 1.0;
            }
        }
    }
    Patterns {
        signatures,
        rows: counts
            .into_iter()
            .map(|((s, z), (c1, c0))| (s, z, c1, c0))
            .collect(),
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Patterns {
    fn eta(&self, sig: usize, z: &[u8], theta: &[f64]) -> f64 {
        self.signatures[sig]
            .iter()
            .zip(z)
            .map(|(&k, &c)| theta[k] * c as f64)
            .sum()
    }

    /// Total log-pseudolikelihood (not averaged, no penalty).
    fn loglik(&self, theta: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|(s, z, c1, c0)| {
                let eta = self.eta(*s, z, theta);
                c1 * eta - (c1 + c0) * softplus(eta)
            })
            .sum()
    }

    fn objective(&self, theta: &[f64], n: f64, ridge: f64) -> f64 {
        self.loglik(theta) / n - ridge * theta.iter().map(|t| t * t).sum::<f64>()
    }

    fn grad_hess(&self, theta: &[f64], n: f64, ridge: f64) -> (DVector<f64>, DMatrix<f64>) {
        let k = theta.len();
        let mut g = DVector::zeros(k);
        let mut h = DMatrix::zeros(k, k);
        for (s, z, c1, c0) in &self.rows {
            let params = &self.signatures[*s];
            let eta = self.eta(*s, z, theta);
            let mu = expit(eta);
            let total = c1 + c0;
            let r = (c1 - total * mu) / n;
            let w = total * mu * (1.0 - mu) / n;
            for (a, (&pa, &za)) in params.iter().zip(z).enumerate() {
                if za == 0 {
                    continue;
                }
                let za = za as f64;
                g[pa] += r * za;
                for (&pb, &zb) in params[a..].iter().zip(&z[a..]) {
                    if zb != 0 {
                        h[(pa, pb)] += w * za * zb as f64;
                    }
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                let v = h[(i, j)] + h[(j, i)];
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        for i in 0..k {
            g[i] -= 2.0 * ridge * theta[i];
            h[(i, i)] += 2.0 * ridge;
        }
        (g, h)
    }
}

/// Maximizes the penalized average log-pseudolikelihood of one factor.
pub fn fit_factor(
    data: &BlockDataset,
    spec: &FactorSpec,
    opts: &FitOptions,
) -> Result<FactorFit, ModelError> {
    fit_factor_from(data, spec, opts, None)
}

/// As [`fit_factor`], starting from `start` instead of zeros.
pub fn fit_factor_from(
    data: &BlockDataset,
    spec: &FactorSpec,
    opts: &FitOptions,
    start: Option<&[f64]>,
) -> Result<FactorFit, ModelError> {
    let layout = FactorLayout::new(spec, data.p());
    let patterns = collect_patterns(data, &layout);
    let k = layout.keys.len();
    let is_main: Vec<bool> = layout.keys.iter().map(ParamKey::is_main).collect();
    let n = data.n().max(1) as f64;
    let mut theta = match start {
        Some(s) if s.len() == k => s.to_vec(),
        _ => vec![0.0; k],
    };
    let clamp = |theta: &mut Vec<f64>| {
        for (t, &m) in theta.iter_mut().zip(&is_main) {
            if m {
                *t = t.clamp(-opts.main_clamp, opts.main_clamp);
            }
        }
    };
    clamp(&mut theta);
    let mut f = patterns.objective(&theta, n, opts.ridge);
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < opts.max_iter {
        let (g, h) = patterns.grad_hess(&theta, n, opts.ridge);
        grad_norm = g.amax();
        if grad_norm <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.clone(),
        };
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(a, s)| a + t * s)
                .collect();
            clamp(&mut cand);
            let fc = patterns.objective(&cand, n, opts.ridge);
            if fc >= f + 1e-4 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            // no ascent possible at machine precision
            converged = true;
            break;
        };
        let change = (fc - f).abs() / f.abs().max(1.0);
        theta = cand;
        f = fc;
        if change <= opts.rel_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(ModelError::NotConverged {
            iterations: opts.max_iter,
            grad_norm,
            tolerance: opts.grad_tol,
        });
    }
    let loglik = patterns.loglik(&theta);
    let components = vertex_components(data, &layout, &theta);
    Ok(FactorFit {
        spec: spec.clone(),
        keys: layout.keys,
        theta,
        loglik,
        components,
        iterations,
    })
}

fn vertex_components(
    data: &BlockDataset,
    layout: &FactorLayout,
    theta: &[f64],
) -> Vec<(VariableId, f64)> {
    layout
        .terms
        .iter()
        .map(|term| {
            let s: f64 = data
                .rows()
                .map(|row| {
                    let eta: f64 = term
                        .features
                        .iter()
                        .map(|&(k, c)| theta[k] * c.map_or(1.0, |c| row[c] as f64))
                        .sum();
                    if row[term.column] == 1 {
                        -softplus(-eta)
                    } else {
                        -softplus(eta)
                    }
                })
                .sum();
            (term.vertex, 2.0 * s)
        })
        .collect()
}

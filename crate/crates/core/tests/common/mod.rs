//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cgnet::data::BlockDataset;
use cgnet::graph::{
    complete_tiered_graph, default_unit_template, Edge, EdgeKind, EdgePrototype, TieredChainGraph,
    VariableId,
};
use cgnet::model::Sharing;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Two pairs of units, each pair joined by `A--A`, `Y--Y` and `A->Y` both ways.
pub fn figure_one() -> TieredChainGraph {
    let mut cross = BTreeSet::new();
    for (i, j) in [(1, 2), (3, 4)] {
        cross.insert(Edge::undirected(VariableId::a(i), VariableId::a(j)));
        cross.insert(Edge::undirected(VariableId::y(i), VariableId::y(j)));
        cross.insert(Edge::directed(VariableId::a(i), VariableId::y(j)));
        cross.insert(Edge::directed(VariableId::a(j), VariableId::y(i)));
    }
    TieredChainGraph::new(4, 1, default_unit_template(1), cross).unwrap()
}

pub fn random_dataset(m: u32, p: u32, n: usize, seed: u64) -> BlockDataset {
    let mut r = rng(seed);
    let width = m as usize * (p as usize + 2);
    let bias: Vec<f64> = (0..width).map(|_| r.gen_range(0.2..0.8)).collect();
    let values = (0..n * width)
        .map(|i| u8::from(r.gen::<f64>() < bias[i % width]))
        .collect();
    BlockDataset::new(m, p, values).unwrap()
}

/// Random tier-legal graph: a random subset of the within-unit template and of
/// all legal network ties.
pub fn random_graph(m: u32, p: u32, seed: u64, density: f64) -> TieredChainGraph {
    let mut r = rng(seed);
    let full = complete_tiered_graph(m, p);
    let template: BTreeSet<EdgePrototype> = full
        .unit_edges()
        .iter()
        .filter(|_| r.gen::<f64>() < 0.7)
        .copied()
        .collect();
    let cross: BTreeSet<Edge> = full
        .cross_edges()
        .iter()
        .filter(|_| r.gen::<f64>() < density)
        .copied()
        .collect();
    TieredChainGraph::new(m, p, template, cross).unwrap()
}

pub fn random_cross_edge(graph: &TieredChainGraph, seed: u64) -> Option<Edge> {
    let edges: Vec<Edge> = graph.cross_edges().iter().copied().collect();
    edges.choose(&mut rng(seed)).copied()
}

/// Parameter index of every coefficient of the graph under `sharing`, plus
/// per-variable lists of `(parameter, source)` with `None` for the intercept.
pub struct Design {
    pub names: Vec<String>,
    pub terms: BTreeMap<VariableId, Vec<(usize, Option<VariableId>)>>,
}

pub fn design(graph: &TieredChainGraph, sharing: Sharing) -> Design {
    let mut names: Vec<String> = Vec::new();
    let mut id = |name: String| -> usize {
        if let Some(i) = names.iter().position(|n| *n == name) {
            i
        } else {
            names.push(name);
            names.len() - 1
        }
    };
    let mut terms: BTreeMap<VariableId, Vec<(usize, Option<VariableId>)>> = BTreeMap::new();
    for v in graph.variables() {
        let name = match sharing {
            Sharing::None | Sharing::Ties => format!("main {v}"),
            Sharing::Homogeneous => format!("main {}", v.kind),
        };
        let i = id(name);
        terms.entry(v).or_default().push((i, None));
    }
    for e in graph.edges() {
        let proto = e.prototype();
        let name = match sharing {
            Sharing::None => format!("edge {e}"),
            _ if e.tail.unit != e.head.unit => format!("cross {proto:?}"),
            _ => format!("unit {proto:?}"),
        };
        let i = id(name);
        terms.entry(e.head).or_default().push((i, Some(e.tail)));
        if e.kind == EdgeKind::Undirected {
            terms.entry(e.tail).or_default().push((i, Some(e.head)));
        }
    }
    Design { names, terms }
}

/// Sum of `ln p(x_v | rest)` over blocks and variables.
pub fn lpl(data: &BlockDataset, d: &Design, theta: &[f64]) -> f64 {
    let mut total = 0.0;
    for b in 0..data.n() {
        for (v, ts) in &d.terms {
            let eta: f64 = ts
                .iter()
                .map(|(k, src)| theta[*k] * src.map_or(1.0, |u| data.get(b, u) as f64))
                .sum();
            let p1 = sigmoid(eta);
            total += if data.get(b, *v) == 1 {
                p1.ln()
            } else {
                (1.0 - p1).ln()
            };
        }
    }
    total
}

/// Maximizes `lpl / n - ridge * |theta|^2` by damped Newton over the whole
/// graph at once, with a Hessian assembled row by row.
pub fn joint_fit(data: &BlockDataset, d: &Design, ridge: f64) -> Vec<f64> {
    let k = d.names.len();
    let n = data.n() as f64;
    let objective = |t: &[f64]| lpl(data, d, t) / n - ridge * t.iter().map(|x| x * x).sum::<f64>();
    let mut theta = vec![0.0; k];
    let mut f = objective(&theta);
    for _ in 0..200 {
        let mut g = vec![0.0; k];
        let mut h = vec![vec![0.0; k]; k];
        for b in 0..data.n() {
            for (v, ts) in &d.terms {
                let z: Vec<(usize, f64)> = ts
                    .iter()
                    .map(|(i, src)| (*i, src.map_or(1.0, |u| data.get(b, u) as f64)))
                    .collect();
                let eta: f64 = z.iter().map(|(i, x)| theta[*i] * x).sum();
                let mu = sigmoid(eta);
                let r = data.get(b, *v) as f64 - mu;
                for &(i, xi) in &z {
                    g[i] += r * xi / n;
                    for &(j, xj) in &z {
                        h[i][j] += mu * (1.0 - mu) * xi * xj / n;
                    }
                }
            }
        }
        for i in 0..k {
            g[i] -= 2.0 * ridge * theta[i];
            h[i][i] += 2.0 * ridge;
        }
        if g.iter().all(|x| x.abs() < 1e-12) {
            break;
        }
        let step = solve(h, g.clone());
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let fc = objective(&cand);
            if fc >= f || t < 1e-12 {
                theta = cand;
                f = fc;
                break;
            }
            t /= 2.0;
        }
        if t * step.iter().fold(0.0f64, |a, s| a.max(s.abs())) < 1e-13 {
            break;
        }
    }
    theta
}

/// Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())
            .unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// `2 ln PL - k ln n` from a whole-graph fit.
pub fn oracle_pbic(data: &BlockDataset, graph: &TieredChainGraph, sharing: Sharing) -> f64 {
    let d = design(graph, sharing);
    let theta = joint_fit(data, &d, 1e-4);
    2.0 * lpl(data, &d, &theta) - d.names.len() as f64 * (data.n() as f64).ln()
}

/// Every binary assignment of `d` variables, as little-endian bit vectors.
pub fn all_assignments(d: usize) -> Vec<Vec<u8>> {
    (0..1usize << d)
        .map(|s| (0..d).map(|i| ((s >> i) & 1) as u8).collect())
        .collect()
}

/// `(L, A, Y)` values of every unit of a block.
pub type BlockState = (Vec<u8>, Vec<u8>, Vec<u8>);

/// The generating model written out directly from its coefficients on a
/// given unit network, with one covariate per unit. Tier distributions are
/// normalized by enumerating all `2^m` states of the tier.
pub struct TruthModel {
    pub m: u32,
    pub network: BTreeSet<(u32, u32)>,
    pub c: cgnet::simulate::GenCoefficients,
}

impl TruthModel {
    pub fn new(m: u32, network: BTreeSet<(u32, u32)>, c: cgnet::simulate::GenCoefficients) -> Self {
        TruthModel { m, network, c }
    }

    fn neighbours(&self, i: usize) -> Vec<usize> {
        self.network
            .iter()
            .filter_map(|&(a, b)| {
                if a as usize == i + 1 {
                    Some(b as usize - 1)
                } else if b as usize == i + 1 {
                    Some(a as usize - 1)
                } else {
                    None
                }
            })
            .collect()
    }

    fn pair_sum(&self, x: &[u8]) -> f64 {
        self.network
            .iter()
            .map(|&(a, b)| (x[a as usize - 1] * x[b as usize - 1]) as f64)
            .sum()
    }

    fn normalize(&self, energy: impl Fn(&[u8]) -> f64) -> Vec<(Vec<u8>, f64)> {
        let states = all_assignments(self.m as usize);
        let w: Vec<f64> = states.iter().map(|s| energy(s).exp()).collect();
        let z: f64 = w.iter().sum();
        states.into_iter().zip(w).map(|(s, w)| (s, w / z)).collect()
    }

    pub fn l_dist(&self) -> Vec<(Vec<u8>, f64)> {
        let t = self.c.tau1;
        self.normalize(|l| l.iter().map(|&x| x as f64 * t).sum())
    }

    pub fn a_dist(&self, l: &[u8]) -> Vec<(Vec<u8>, f64)> {
        self.normalize(|a| {
            (0..a.len())
                .map(|i| a[i] as f64 * self.c.beta1 * l[i] as f64)
                .sum::<f64>()
                + self.c.beta2 * self.pair_sum(a)
        })
    }

    pub fn y_dist(&self, l: &[u8], a: &[u8]) -> Vec<(Vec<u8>, f64)> {
        self.normalize(|y| {
            (0..y.len())
                .map(|i| {
                    let spill: f64 = self.neighbours(i).iter().map(|&j| a[j] as f64).sum();
                    y[i] as f64
                        * (self.c.nu1 * l[i] as f64 + self.c.nu2 * a[i] as f64 + self.c.nu3 * spill)
                })
                .sum::<f64>()
                + self.c.nu4 * self.pair_sum(y)
        })
    }

    /// Probability of every `(L, A, Y)` configuration.
    pub fn joint(&self) -> Vec<(BlockState, f64)> {
        let mut out = Vec::new();
        for (l, pl) in self.l_dist() {
            for (a, pa) in self.a_dist(&l) {
                for (y, py) in self.y_dist(&l, &a) {
                    out.push(((l.clone(), a.clone(), y), pl * pa * py));
                }
            }
        }
        out
    }

    /// Mean outcome with treatment drawn iid with probability `alpha`, or
    /// from the natural treatment tier when `alpha` is `None`.
    pub fn policy_mean(&self, alpha: Option<f64>) -> f64 {
        let mut total = 0.0;
        for (l, pl) in self.l_dist() {
            let policy: Vec<(Vec<u8>, f64)> = match alpha {
                None => self.a_dist(&l),
                Some(al) => all_assignments(self.m as usize)
                    .into_iter()
                    .map(|a| {
                        let p = a
                            .iter()
                            .map(|&x| if x == 1 { al } else { 1.0 - al })
                            .product();
                        (a, p)
                    })
                    .collect(),
            };
            for (a, pa) in policy {
                let ey: f64 = self
                    .y_dist(&l, &a)
                    .iter()
                    .map(|(y, py)| py * y.iter().map(|&v| v as f64).sum::<f64>() / self.m as f64)
                    .sum();
                total += pl * pa * ey;
            }
        }
        total
    }
}

/// Empirical distribution of `(L, A, Y)` configurations of a dataset with
/// one covariate, keyed like [`TruthModel::joint`].
pub fn empirical_joint(data: &BlockDataset) -> BTreeMap<BlockState, f64> {
    let mut counts = BTreeMap::new();
    for b in 0..data.n() {
        let units = 1..=data.m();
        let l = units
            .clone()
            .map(|i| data.get(b, VariableId::l(i, 1)))
            .collect();
        let a = units
            .clone()
            .map(|i| data.get(b, VariableId::a(i)))
            .collect();
        let y = units.map(|i| data.get(b, VariableId::y(i))).collect();
        *counts.entry((l, a, y)).or_insert(0.0) += 1.0 / data.n() as f64;
    }
    counts
}

pub fn total_variation<K: Ord>(exact: &[(K, f64)], empirical: &BTreeMap<K, f64>) -> f64 {
    let mut tv = 0.0;
    let mut covered = 0.0;
    for (k, p) in exact {
        let q = empirical.get(k).copied().unwrap_or(0.0);
        covered += q;
        tv += (p - q).abs();
    }
    // Mass on configurations missing from `exact`.
    tv += (1.0 - covered).max(0.0);
    tv / 2.0
}

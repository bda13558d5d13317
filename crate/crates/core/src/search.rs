//! Greedy PBIC search over network ties.
//!
//! All procedures share one engine: from the current graph, score every
//! candidate move, apply the best one if it raises PBIC by more than a small
//! threshold, and stop otherwise. Moves differ by granularity: single ties,
//! all ties between a unit pair, or all homologs of a prototype.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BlockDataset;
use crate::graph::{
    all_legal_prototypes, all_unit_pairs, complete_tiered_graph, Edge, EdgePrototype, Tier,
    TieredChainGraph,
};
use crate::model::{check_dims, FitOptions, ModelError, Scorer, Sharing};

/// Which structure-learning procedure to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Tie-by-tie backward search on each tier.
    #[serde(rename = "hetero")]
    Heterogeneous,
    /// Unit-pair deletions with a known prototype set.
    #[serde(rename = "homo-known-proto")]
    HomoKnownProto,
    /// Prototype deletions on a known network.
    #[serde(rename = "homo-known-net")]
    HomoKnownNetwork,
    /// Unit-pair search followed by prototype search.
    #[serde(rename = "homo")]
    Homogeneous,
}

impl SearchMode {
    pub fn name(self) -> &'static str {
        match self {
            SearchMode::Heterogeneous => "hetero",
            SearchMode::HomoKnownProto => "homo-known-proto",
            SearchMode::HomoKnownNetwork => "homo-known-net",
            SearchMode::Homogeneous => "homo",
        }
    }

    /// Sharing used when none is requested explicitly.
    pub fn default_sharing(self) -> Sharing {
        match self {
            SearchMode::Heterogeneous => Sharing::None,
            _ => Sharing::Ties,
        }
    }
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hetero" => Ok(SearchMode::Heterogeneous),
            "homo-known-proto" => Ok(SearchMode::HomoKnownProto),
            "homo-known-net" => Ok(SearchMode::HomoKnownNetwork),
            "homo" => Ok(SearchMode::Homogeneous),
            _ => Err(format!(
                "unknown mode {s:?} (expected hetero, homo, homo-known-proto or homo-known-net)"
            )),
        }
    }
}

/// Size of the first-iteration search space of each procedure, counted in
/// (prototype, unit pair) units. A directed prototype places two ties on a
/// pair, so the heterogeneous search scores up to twice this many ties.
pub fn candidate_move_count(mode: SearchMode, m: u32, prototype_count: usize) -> usize {
    let pairs = (m as usize * m.saturating_sub(1) as usize) / 2;
    match mode {
        SearchMode::Heterogeneous => prototype_count * pairs,
        SearchMode::HomoKnownProto => pairs,
        SearchMode::HomoKnownNetwork => prototype_count,
        SearchMode::Homogeneous => pairs + prototype_count,
    }
}

/// One accepted move.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Move {
    DeleteEdge(Edge),
    DeletePair(u32, u32),
    DeletePrototype(EdgePrototype),
    AddEdge(Edge),
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Move::DeleteEdge(e) => write!(f, "{e}"),
            Move::DeletePair(i, j) => write!(f, "pair {i}-{j}"),
            Move::DeletePrototype(p) => write!(f, "prototype {p}"),
            Move::AddEdge(e) => write!(f, "add {e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub iteration: usize,
    pub item: Move,
    pub score_before: f64,
    pub score_after: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub graph: TieredChainGraph,
    pub network: BTreeSet<(u32, u32)>,
    /// Surviving prototypes, reported by the homogeneous procedures.
    pub prototypes: Option<BTreeSet<EdgePrototype>>,
    pub trace: Vec<TraceStep>,
    pub final_pbic: f64,
    pub sharing: Sharing,
}

impl SearchResult {
    pub fn cross_edges(&self) -> &BTreeSet<Edge> {
        self.graph.cross_edges()
    }

    /// Trace as CSV with columns `iteration,deleted_item,pbic`; row 0 holds
    /// the starting score.
    pub fn trace_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "deleted_item", "pbic"])
            .expect("in-memory write");
        let start = self
            .trace
            .first()
            .map_or(self.final_pbic, |s| s.score_before);
        w.write_record(["0", "", &format!("{start:.10}")])
            .expect("in-memory write");
        for step in &self.trace {
            w.write_record([
                step.iteration.to_string(),
                step.item.to_string(),
                format!("{:.10}", step.score_after),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchOptions {
    /// Overrides the procedure's default sharing.
    pub sharing: Option<Sharing>,
    /// Minimum PBIC gain for a move to be accepted.
    pub threshold: f64,
    /// Score candidates by refitting the whole graph instead of the changed
    /// factors.
    pub full_rescore: bool,
    /// In the two-stage homogeneous search, learn prototypes before the network.
    pub reverse_chain: bool,
    pub fit: FitOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            sharing: None,
            threshold: 1e-9,
            full_rescore: false,
            reverse_chain: false,
            fit: FitOptions::default(),
        }
    }
}

struct Engine<'a> {
    scorer: Scorer<'a>,
    sharing: Sharing,
    opts: SearchOptions,
    trace: Vec<TraceStep>,
}

impl<'a> Engine<'a> {
    fn new(data: &'a BlockDataset, sharing: Sharing, opts: SearchOptions) -> Self {
        Engine {
            scorer: Scorer::new(data, opts.fit, !opts.full_rescore),
            sharing,
            opts,
            trace: Vec::new(),
        }
    }

    fn diff(&self, from: &TieredChainGraph, to: &TieredChainGraph) -> Result<f64, ModelError> {
        if self.opts.full_rescore {
            Ok(self.scorer.pbic(to, self.sharing)? - self.scorer.pbic(from, self.sharing)?)
        } else {
            self.scorer.move_diff(from, to, self.sharing)
        }
    }

    /// Greedy hill climbing over candidate moves in canonical order; ties go
    /// to the first candidate.
    fn climb<M, C, A>(
        &mut self,
        start: TieredChainGraph,
        candidates: C,
        apply: A,
    ) -> Result<TieredChainGraph, ModelError>
    where
        M: Clone + Ord + Send + Sync + Into<Move>,
        C: Fn(&TieredChainGraph) -> Vec<M>,
        A: Fn(&TieredChainGraph, &M) -> TieredChainGraph + Sync,
    {
        let mut current = start;
        let mut score = self.scorer.pbic(&current, self.sharing)?;
        loop {
            let mut cands = candidates(&current);
            cands.sort();
            if cands.is_empty() {
                break;
            }
            let this = &*self;
            let diffs: Vec<Result<f64, ModelError>> = cands
                .par_iter()
                .map(|c| this.diff(&current, &apply(&current, c)))
                .collect();
            let mut best: Option<(usize, f64)> = None;
            for (i, d) in diffs.into_iter().enumerate() {
                let d = d?;
                if best.is_none_or(|(_, b)| d > b) {
                    best = Some((i, d));
                }
            }
            let (i, gain) = best.expect("candidates are nonempty");
            if gain.partial_cmp(&self.opts.threshold) != Some(std::cmp::Ordering::Greater) {
                break;
            }
            let next = apply(&current, &cands[i]);
            let after = self.scorer.pbic(&next, self.sharing)?;
            self.trace.push(TraceStep {
                iteration: self.trace.len() + 1,
                item: cands[i].clone().into(),
                score_before: score,
                score_after: after,
            });
            current = next;
            score = after;
        }
        Ok(current)
    }

    fn finish(
        self,
        graph: TieredChainGraph,
        prototypes: Option<BTreeSet<EdgePrototype>>,
    ) -> Result<SearchResult, ModelError> {
        let final_pbic = self.scorer.pbic(&graph, self.sharing)?;
        Ok(SearchResult {
            network: graph.network(),
            graph,
            prototypes,
            trace: self.trace,
            final_pbic,
            sharing: self.sharing,
        })
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
struct EdgeMove(Edge);

impl From<EdgeMove> for Move {
    fn from(m: EdgeMove) -> Self {
        Move::DeleteEdge(m.0)
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
struct AddMove(Edge);

impl From<AddMove> for Move {
    fn from(m: AddMove) -> Self {
        Move::AddEdge(m.0)
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
struct PairMove(u32, u32);

impl From<PairMove> for Move {
    fn from(m: PairMove) -> Self {
        Move::DeletePair(m.0, m.1)
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
struct ProtoMove(EdgePrototype);

impl From<ProtoMove> for Move {
    fn from(m: ProtoMove) -> Self {
        Move::DeletePrototype(m.0)
    }
}

fn delete_edge(g: &TieredChainGraph, m: &EdgeMove) -> TieredChainGraph {
    g.without_edges(&[m.0])
}

/// Backward deletion of single network ties starting from `init`.
pub fn greedy_network_search(
    init: &TieredChainGraph,
    data: &BlockDataset,
    opts: &SearchOptions,
) -> Result<SearchResult, ModelError> {
    check_dims(data, init)?;
    let mut engine = Engine::new(data, opts.sharing.unwrap_or(Sharing::None), *opts);
    let g = engine.climb(
        init.clone(),
        |g| g.cross_edges().iter().map(|e| EdgeMove(*e)).collect(),
        delete_edge,
    )?;
    engine.finish(g, None)
}

/// Independent backward searches on the L, A and Y tiers of the complete
/// graph; the result is the union of the surviving ties.
pub fn heterogeneous(
    data: &BlockDataset,
    opts: &SearchOptions,
) -> Result<SearchResult, ModelError> {
    heterogeneous_in_order(data, &Tier::ALL, opts)
}

/// As [`heterogeneous`], visiting the tiers in the given order.
pub fn heterogeneous_in_order(
    data: &BlockDataset,
    order: &[Tier],
    opts: &SearchOptions,
) -> Result<SearchResult, ModelError> {
    let mut engine = Engine::new(data, opts.sharing.unwrap_or(Sharing::None), *opts);
    let mut g = complete_tiered_graph(data.m(), data.p());
    for &tier in order {
        g = engine.climb(
            g,
            |g| {
                g.tier_subproblem(tier)
                    .deletable
                    .into_iter()
                    .map(EdgeMove)
                    .collect()
            },
            delete_edge,
        )?;
    }
    engine.finish(g, None)
}

fn delete_pair(g: &TieredChainGraph, m: &PairMove) -> TieredChainGraph {
    let cross = g
        .cross_edges()
        .iter()
        .filter(|e| e.units() != (m.0, m.1))
        .copied()
        .collect();
    g.with_cross_edges(cross)
}

fn delete_prototype(g: &TieredChainGraph, m: &ProtoMove) -> TieredChainGraph {
    let cross = g
        .cross_edges()
        .iter()
        .filter(|e| e.prototype() != m.0)
        .copied()
        .collect();
    g.with_cross_edges(cross)
}

fn run_known_proto(
    engine: &mut Engine<'_>,
    data: &BlockDataset,
    prototypes: &BTreeSet<EdgePrototype>,
) -> Result<TieredChainGraph, ModelError> {
    let start =
        TieredChainGraph::homogeneous(data.m(), data.p(), &all_unit_pairs(data.m()), prototypes)?;
    if prototypes.is_empty() {
        return Ok(start);
    }
    engine.climb(
        start,
        |g| {
            g.network()
                .into_iter()
                .map(|(i, j)| PairMove(i, j))
                .collect()
        },
        delete_pair,
    )
}

fn run_known_network(
    engine: &mut Engine<'_>,
    data: &BlockDataset,
    network: &BTreeSet<(u32, u32)>,
) -> Result<TieredChainGraph, ModelError> {
    let start = TieredChainGraph::homogeneous(
        data.m(),
        data.p(),
        network,
        &all_legal_prototypes(data.p()),
    )?;
    if network.is_empty() {
        return Ok(start);
    }
    engine.climb(
        start,
        |g| g.prototypes().into_iter().map(ProtoMove).collect(),
        delete_prototype,
    )
}

/// Deletes whole unit-pair bundles from the complete network carrying
/// `prototypes`; returns the surviving network.
pub fn homogeneous_known_proto(
    data: &BlockDataset,
    prototypes: &BTreeSet<EdgePrototype>,
    opts: &SearchOptions,
) -> Result<SearchResult, ModelError> {
    let mut engine = Engine::new(data, opts.sharing.unwrap_or(Sharing::Ties), *opts);
    let g = run_known_proto(&mut engine, data, prototypes)?;
    let protos = if g.network().is_empty() {
        BTreeSet::new()
    } else {
        prototypes.clone()
    };
    engine.finish(g, Some(protos))
}

/// Deletes all homologs of one prototype at a time, starting from every
/// legal prototype on `network`; returns the surviving prototypes.
pub fn homogeneous_known_network(
    data: &BlockDataset,
    network: &BTreeSet<(u32, u32)>,
    opts: &SearchOptions,
) -> Result<SearchResult, ModelError> {
    let mut engine = Engine::new(data, opts.sharing.unwrap_or(Sharing::Ties), *opts);
    let g = run_known_network(&mut engine, data, network)?;
    let protos = g.prototypes();
    engine.finish(g, Some(protos))
}

/// Network search with every legal prototype, then prototype search on the
/// learned network (or the reverse with `reverse_chain`).
pub fn homogeneous(data: &BlockDataset, opts: &SearchOptions) -> Result<SearchResult, ModelError> {
    let mut engine = Engine::new(data, opts.sharing.unwrap_or(Sharing::Ties), *opts);
    let all = all_legal_prototypes(data.p());
    let g = if opts.reverse_chain {
        let first = run_known_network(&mut engine, data, &all_unit_pairs(data.m()))?;
        run_known_proto(&mut engine, data, &first.prototypes())?
    } else {
        let first = run_known_proto(&mut engine, data, &all)?;
        run_known_network(&mut engine, data, &first.network())?
    };
    let protos = g.prototypes();
    engine.finish(g, Some(protos))
}

/// Forward phase adding single ties from the empty network, then the
/// backward phase of [`greedy_network_search`].
pub fn forward_backward(
    data: &BlockDataset,
    opts: &SearchOptions,
) -> Result<SearchResult, ModelError> {
    let mut engine = Engine::new(data, opts.sharing.unwrap_or(Sharing::None), *opts);
    let universe = complete_tiered_graph(data.m(), data.p());
    let start = TieredChainGraph::empty(data.m(), data.p());
    let g = engine.climb(
        start,
        |g| {
            universe
                .cross_edges()
                .difference(g.cross_edges())
                .map(|e| AddMove(*e))
                .collect()
        },
        |g, m| g.with_edge(m.0),
    )?;
    let g = engine.climb(
        g,
        |g| g.cross_edges().iter().map(|e| EdgeMove(*e)).collect(),
        delete_edge,
    )?;
    engine.finish(g, None)
}

/// Runs the procedure for `mode`. `prototypes` and `network` supply the known
/// half of the structure for the two single-stage homogeneous procedures.
pub fn learn(
    data: &BlockDataset,
    mode: SearchMode,
    prototypes: Option<&BTreeSet<EdgePrototype>>,
    network: Option<&BTreeSet<(u32, u32)>>,
    opts: &SearchOptions,
) -> Result<SearchResult, ModelError> {
    match mode {
        SearchMode::Heterogeneous => heterogeneous(data, opts),
        SearchMode::Homogeneous => homogeneous(data, opts),
        SearchMode::HomoKnownProto => {
            let all = all_legal_prototypes(data.p());
            homogeneous_known_proto(data, prototypes.unwrap_or(&all), opts)
        }
        SearchMode::HomoKnownNetwork => {
            let all = all_unit_pairs(data.m());
            homogeneous_known_network(data, network.unwrap_or(&all), opts)
        }
    }
}

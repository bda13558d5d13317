use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use super::fit::{factor_specs, fit_factor, FactorFit, FactorSpec, FitOptions};
use super::{check_dims, ModelError, Sharing};
use crate::data::BlockDataset;
use crate::graph::{
    augmented_block_graph, maximal_cliques, Edge, EdgeKind, GraphError, TieredChainGraph,
    VariableId,
};

/// PBIC evaluator over one dataset.
///
/// Fits are memoized per factor: a factor's fit depends only on its vertices,
/// the edges entering them and the sharing scheme, so an edge change only
/// refits the factors it touches. The cache is shared between threads and
/// only ever stores values that a fresh fit would reproduce.
pub struct Scorer<'a> {
    data: &'a BlockDataset,
    opts: FitOptions,
    cache: Option<Mutex<HashMap<FactorSpec, Arc<FactorFit>>>>,
}

impl<'a> Scorer<'a> {
    pub fn new(data: &'a BlockDataset, opts: FitOptions, use_cache: bool) -> Self {
        Scorer {
            data,
            opts,
            cache: use_cache.then(|| Mutex::new(HashMap::new())),
        }
    }

    pub fn data(&self) -> &BlockDataset {
        self.data
    }

    pub fn options(&self) -> &FitOptions {
        &self.opts
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn cached_factors(&self) -> usize {
        self.cache
            .as_ref()
            .map_or(0, |c| c.lock().expect("cache lock").len())
    }

    pub fn fit(&self, spec: &FactorSpec) -> Result<Arc<FactorFit>, ModelError> {
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.lock().expect("cache lock").get(spec) {
                return Ok(Arc::clone(hit));
            }
        }
        let fit = Arc::new(fit_factor(self.data, spec, &self.opts)?);
        if let Some(cache) = &self.cache {
            cache
                .lock()
                .expect("cache lock")
                .entry(spec.clone())
                .or_insert_with(|| Arc::clone(&fit));
        }
        Ok(fit)
    }

    fn sum_scores(&self, specs: &[FactorSpec]) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for spec in specs {
            total += self.fit(spec)?.pbic(self.n());
        }
        Ok(total)
    }

    /// `2 ln PL - k ln n` of the whole graph.
    pub fn pbic(&self, graph: &TieredChainGraph, sharing: Sharing) -> Result<f64, ModelError> {
        check_dims(self.data, graph)?;
        self.sum_scores(&factor_specs(graph, sharing, None))
    }

    /// Log-pseudolikelihood at the fitted parameters.
    pub fn loglik(&self, graph: &TieredChainGraph, sharing: Sharing) -> Result<f64, ModelError> {
        check_dims(self.data, graph)?;
        let mut total = 0.0;
        for spec in factor_specs(graph, sharing, None) {
            total += self.fit(&spec)?.loglik;
        }
        Ok(total)
    }

    /// `PBIC(to) - PBIC(from)` computed from the factors that differ.
    ///
    /// Only tiers whose incoming edges changed are inspected; within them,
    /// factors with identical specs cancel and are never refitted.
    pub fn move_diff(
        &self,
        from: &TieredChainGraph,
        to: &TieredChainGraph,
        sharing: Sharing,
    ) -> Result<f64, ModelError> {
        check_dims(self.data, from)?;
        let mut tiers = BTreeSet::new();
        for e in from.cross_edges().symmetric_difference(to.cross_edges()) {
            tiers.insert(e.head.tier());
        }
        for e in from.unit_edges().symmetric_difference(to.unit_edges()) {
            tiers.insert(e.head_tier());
        }
        if tiers.is_empty() {
            return Ok(0.0);
        }
        let old: BTreeSet<FactorSpec> = factor_specs(from, sharing, Some(&tiers))
            .into_iter()
            .collect();
        let new: BTreeSet<FactorSpec> = factor_specs(to, sharing, Some(&tiers))
            .into_iter()
            .collect();
        let added: Vec<FactorSpec> = new.difference(&old).cloned().collect();
        let removed: Vec<FactorSpec> = old.difference(&new).cloned().collect();
        Ok(self.sum_scores(&added)? - self.sum_scores(&removed)?)
    }

    /// `PBIC(graph \ edges) - PBIC(graph)` for a set of network ties.
    pub fn deletion_diff(
        &self,
        graph: &TieredChainGraph,
        edges: &[Edge],
        sharing: Sharing,
    ) -> Result<f64, ModelError> {
        for e in edges {
            if !e.is_cross_unit() {
                return Err(GraphError::NotACrossEdge(*e).into());
            }
            if !graph.cross_edges().contains(e) {
                return Err(ModelError::EdgeAbsent(*e));
            }
        }
        self.move_diff(graph, &graph.without_edges(edges), sharing)
    }

    /// `PBIC(graph \ edge) - PBIC(graph)` for one network tie.
    pub fn local_score_diff(
        &self,
        graph: &TieredChainGraph,
        edge: &Edge,
        sharing: Sharing,
    ) -> Result<f64, ModelError> {
        self.deletion_diff(graph, std::slice::from_ref(edge), sharing)
    }

    /// `PBIC(graph + edge) - PBIC(graph)` for a tier-legal network tie.
    pub fn addition_diff(
        &self,
        graph: &TieredChainGraph,
        edge: &Edge,
        sharing: Sharing,
    ) -> Result<f64, ModelError> {
        if let Err(rule) = edge.check_tiers() {
            return Err(ModelError::IllegalEdge { edge: *edge, rule });
        }
        if !edge.is_cross_unit() {
            return Err(GraphError::NotACrossEdge(*edge).into());
        }
        if graph.cross_edges().contains(edge) {
            return Err(ModelError::EdgePresent(*edge));
        }
        self.move_diff(graph, &graph.with_edge(*edge), sharing)
    }
}

/// Vertices whose score components can change when the edge between `vi`
/// and `vj` is toggled, together with the block that owns them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalSet {
    pub vertices: BTreeSet<VariableId>,
    pub b_loc: BTreeSet<VariableId>,
}

impl LocalSet {
    /// Members of the local set inside the owning block.
    pub fn scored(&self) -> BTreeSet<VariableId> {
        self.vertices.intersection(&self.b_loc).copied().collect()
    }
}

/// Union of the maximal cliques of the augmented graph of the owning block
/// that contain both endpoints. The owning block is that of `vj` for a
/// directed edge and the shared block for an undirected one, taken in the
/// graph that includes the edge.
pub fn local_set(
    graph: &TieredChainGraph,
    vi: VariableId,
    vj: VariableId,
    kind: EdgeKind,
) -> Result<LocalSet, ModelError> {
    let edge = Edge::new(vi, vj, kind);
    if let Err(rule) = edge.check_tiers() {
        return Err(ModelError::IllegalEdge { edge, rule });
    }
    for v in [vi, vj] {
        if !graph.contains_variable(v) {
            return Err(ModelError::UnknownVariable(v));
        }
    }
    let with = if graph.contains_edge(&edge) {
        graph.clone()
    } else {
        graph.with_edge(edge)
    };
    let idx = with.index();
    let b_loc = idx
        .blocks()
        .into_iter()
        .find(|b| b.contains(&vj))
        .expect("every variable lies in a block");
    let parents = idx.block_parents(&b_loc);
    let ug = augmented_block_graph(&with, &b_loc)?;
    let mut vertices = BTreeSet::new();
    for clique in maximal_cliques(&ug) {
        if clique.contains(&vi) && clique.contains(&vj) && !clique.is_subset(&parents) {
            vertices.extend(clique);
        }
    }
    Ok(LocalSet { vertices, b_loc })
}

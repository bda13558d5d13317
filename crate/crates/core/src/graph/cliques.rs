use std::collections::{BTreeMap, BTreeSet};

use super::{EdgeKind, GraphError, TieredChainGraph, VariableId};

/// Simple undirected graph over variables.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UndirectedGraph {
    adj: BTreeMap<VariableId, BTreeSet<VariableId>>,
}

impl UndirectedGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, v: VariableId) {
        self.adj.entry(v).or_default();
    }

    pub fn add_edge(&mut self, a: VariableId, b: VariableId) {
        if a == b {
            self.add_vertex(a);
            return;
        }
        self.adj.entry(a).or_default().insert(b);
        self.adj.entry(b).or_default().insert(a);
    }

    pub fn vertices(&self) -> impl Iterator<Item = &VariableId> {
        self.adj.keys()
    }

    pub fn num_vertices(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: VariableId) -> Option<&BTreeSet<VariableId>> {
        self.adj.get(&v)
    }

    pub fn has_edge(&self, a: VariableId, b: VariableId) -> bool {
        self.adj.get(&a).is_some_and(|n| n.contains(&b))
    }

    /// Edges as ordered pairs `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(VariableId, VariableId)> {
        let mut out = Vec::new();
        for (a, nbs) in &self.adj {
            for b in nbs {
                if a < b {
                    out.push((*a, *b));
                }
            }
        }
        out
    }

    pub fn is_clique(&self, set: &BTreeSet<VariableId>) -> bool {
        let items: Vec<_> = set.iter().collect();
        for (i, a) in items.iter().enumerate() {
            if !self.adj.contains_key(a) {
                return false;
            }
            for b in &items[i + 1..] {
                if !self.has_edge(**a, **b) {
                    return false;
                }
            }
        }
        true
    }
}

/// All maximal cliques, found by Bron–Kerbosch with pivoting. Isolated
/// vertices form singleton cliques. Output is sorted.
pub fn maximal_cliques(g: &UndirectedGraph) -> Vec<BTreeSet<VariableId>> {
    let mut out = Vec::new();
    let p: BTreeSet<VariableId> = g.adj.keys().copied().collect();
    bron_kerbosch(g, BTreeSet::new(), p, BTreeSet::new(), &mut out);
    out.sort();
    out
}

fn bron_kerbosch(
    g: &UndirectedGraph,
    r: BTreeSet<VariableId>,
    mut p: BTreeSet<VariableId>,
    mut x: BTreeSet<VariableId>,
    out: &mut Vec<BTreeSet<VariableId>>,
) {
    if p.is_empty() && x.is_empty() {
        out.push(r);
        return;
    }
    let pivot = p
        .union(&x)
        .max_by_key(|u| g.adj[u].intersection(&p).count())
        .copied()
        .expect("P or X is nonempty");
    let candidates: Vec<VariableId> = p.difference(&g.adj[&pivot]).copied().collect();
    for v in candidates {
        let nbs = &g.adj[&v];
        let mut r2 = r.clone();
        r2.insert(v);
        let p2 = p.intersection(nbs).copied().collect();
        let x2 = x.intersection(nbs).copied().collect();
        bron_kerbosch(g, r2, p2, x2, out);
        p.remove(&v);
        x.insert(v);
    }
}

/// Undirected graph over a block and its parents: the block's undirected
/// edges, every parent-to-member edge made undirected, and every pair of
/// parents joined.
pub fn augmented_block_graph(
    graph: &TieredChainGraph,
    block: &BTreeSet<VariableId>,
) -> Result<UndirectedGraph, GraphError> {
    let idx = graph.index();
    if !idx.blocks().contains(block) {
        let names: Vec<String> = block.iter().map(ToString::to_string).collect();
        return Err(GraphError::NotABlock(format!("{{{}}}", names.join(", "))));
    }
    let mut ug = UndirectedGraph::new();
    for v in block {
        ug.add_vertex(*v);
    }
    for e in graph.edges() {
        let enters =
            block.contains(&e.head) || (e.kind == EdgeKind::Undirected && block.contains(&e.tail));
        if enters {
            ug.add_edge(e.tail, e.head);
        }
    }
    let parents: Vec<VariableId> = idx.block_parents(block).into_iter().collect();
    for (i, a) in parents.iter().enumerate() {
        for b in &parents[i + 1..] {
            ug.add_edge(*a, *b);
        }
    }
    Ok(ug)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::figure_one;
    use super::super::{default_unit_template, Edge};
    use super::*;
    use proptest::prelude::*;

    fn v(i: u32) -> VariableId {
        VariableId::y(i)
    }

    fn set(items: &[VariableId]) -> BTreeSet<VariableId> {
        items.iter().copied().collect()
    }

    #[test]
    fn path_has_two_cliques() {
        let mut g = UndirectedGraph::new();
        g.add_edge(v(1), v(2));
        g.add_edge(v(2), v(3));
        assert_eq!(
            maximal_cliques(&g),
            vec![set(&[v(1), v(2)]), set(&[v(2), v(3)])]
        );
    }

    #[test]
    fn chordless_four_cycle_has_four_edge_cliques() {
        let mut g = UndirectedGraph::new();
        for (a, b) in [(1, 2), (2, 4), (4, 3), (3, 1)] {
            g.add_edge(v(a), v(b));
        }
        let cliques = maximal_cliques(&g);
        assert_eq!(cliques.len(), 4);
        assert!(cliques.iter().all(|c| c.len() == 2));
    }

    #[test]
    fn triangle_is_one_clique() {
        let mut g = UndirectedGraph::new();
        g.add_edge(v(1), v(2));
        g.add_edge(v(2), v(3));
        g.add_edge(v(1), v(3));
        assert_eq!(maximal_cliques(&g), vec![set(&[v(1), v(2), v(3)])]);
    }

    #[test]
    fn augmented_outcome_block_of_figure_one() {
        let g = figure_one();
        let block = set(&[VariableId::y(1), VariableId::y(2)]);
        let ug = augmented_block_graph(&g, &block).unwrap();
        assert_eq!(ug.num_vertices(), 6);
        let parents = [
            VariableId::l(1, 1),
            VariableId::a(1),
            VariableId::l(2, 1),
            VariableId::a(2),
        ];
        for a in parents {
            for b in parents {
                if a != b {
                    assert!(ug.has_edge(a, b));
                }
            }
        }
        let cliques = maximal_cliques(&ug);
        assert!(cliques.iter().any(|c| c.is_superset(&set(&[
            VariableId::y(1),
            VariableId::y(2),
            VariableId::a(1),
            VariableId::a(2)
        ]))));
    }

    #[test]
    fn augmented_singleton_and_single_parent_blocks() {
        let g = figure_one();
        let ug = augmented_block_graph(&g, &set(&[VariableId::l(1, 1)])).unwrap();
        assert_eq!(ug.num_vertices(), 1);
        assert!(ug.edges().is_empty());

        let g = TieredChainGraph::new(
            1,
            1,
            [super::super::EdgePrototype::directed(
                super::super::VarKind::L(1),
                super::super::VarKind::A,
            )],
            [],
        )
        .unwrap();
        let ug = augmented_block_graph(&g, &set(&[VariableId::a(1)])).unwrap();
        assert_eq!(ug.edges(), vec![(VariableId::l(1, 1), VariableId::a(1))]);
    }

    #[test]
    fn non_block_is_rejected() {
        let g = figure_one();
        assert!(augmented_block_graph(&g, &set(&[VariableId::y(1)])).is_err());
        let g = TieredChainGraph::new(
            2,
            1,
            default_unit_template(1),
            [Edge::undirected(VariableId::y(1), VariableId::y(2))],
        )
        .unwrap();
        assert!(augmented_block_graph(&g, &set(&[VariableId::y(1), VariableId::y(2)])).is_ok());
    }

    fn brute_force(g: &UndirectedGraph) -> Vec<BTreeSet<VariableId>> {
        let verts: Vec<VariableId> = g.vertices().copied().collect();
        let n = verts.len();
        let mut cliques: Vec<BTreeSet<VariableId>> = Vec::new();
        for mask in 1u32..(1 << n) {
            let s: BTreeSet<VariableId> = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| verts[i])
                .collect();
            if g.is_clique(&s) {
                cliques.push(s);
            }
        }
        let mut maximal: Vec<_> = cliques
            .iter()
            .filter(|c| {
                !cliques
                    .iter()
                    .any(|d| d.len() > c.len() && d.is_superset(c))
            })
            .cloned()
            .collect();
        maximal.sort();
        maximal
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn matches_brute_force(n in 1usize..=12, bits in proptest::collection::vec(any::<bool>(), 66)) {
            let mut g = UndirectedGraph::new();
            for i in 0..n {
                g.add_vertex(v(i as u32 + 1));
            }
            let mut k = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    if bits[k] {
                        g.add_edge(v(i as u32 + 1), v(j as u32 + 1));
                    }
                    k += 1;
                }
            }
            let cliques = maximal_cliques(&g);
            for c in &cliques {
                prop_assert!(g.is_clique(c));
            }
            prop_assert_eq!(cliques, brute_force(&g));
        }
    }
}

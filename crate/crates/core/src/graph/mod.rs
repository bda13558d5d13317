//! Tiered chain graphs over blocks of `m` units.
//!
//! Every unit carries `p` baseline covariates `L1..Lp`, one treatment `A` and
//! one outcome `Y`. Edges inside a unit follow a shared template; edges between
//! units (network ties) are the structure being learned. Two rules restrict the
//! edge set: same-tier edges are undirected, and cross-tier edges point forward
//! along `L -> A -> Y`. Any graph obeying both rules is a valid chain graph.

mod cliques;
pub mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cliques::{augmented_block_graph, maximal_cliques, UndirectedGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid chain graph: {0}")]
    Invalid(Validity),
    #[error("unknown variable {0}")]
    UnknownVariable(VariableId),
    #[error("{0} is not a block of the graph")]
    NotABlock(String),
    #[error("{0} is a unit-level edge; homologs are defined for network ties only")]
    NotACrossEdge(Edge),
    #[error("cannot parse {what} from {input:?}")]
    Parse { what: &'static str, input: String },
    #[error("edge {edge} violates {rule}")]
    IllegalEdge { edge: Edge, rule: ViolationKind },
}

/// Position of a variable in the causal ordering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    L,
    A,
    Y,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::L, Tier::A, Tier::Y];
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tier::L => "L",
            Tier::A => "A",
            Tier::Y => "Y",
        };
        f.write_str(s)
    }
}

/// The role of a variable inside its unit: covariate `L_k` (1-based), `A` or `Y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VarKind {
    L(u32),
    A,
    Y,
}

impl VarKind {
    pub fn tier(self) -> Tier {
        match self {
            VarKind::L(_) => Tier::L,
            VarKind::A => Tier::A,
            VarKind::Y => Tier::Y,
        }
    }

    pub fn covariate(self) -> Option<u32> {
        match self {
            VarKind::L(k) => Some(k),
            _ => None,
        }
    }

    /// Column offset of this kind inside a unit's `p + 2` columns.
    pub fn slot(self, p: u32) -> usize {
        match self {
            VarKind::L(k) => (k - 1) as usize,
            VarKind::A => p as usize,
            VarKind::Y => p as usize + 1,
        }
    }

    /// All kinds of a unit with `p` covariates, in canonical order.
    pub fn all(p: u32) -> Vec<VarKind> {
        let mut kinds: Vec<VarKind> = (1..=p).map(VarKind::L).collect();
        kinds.push(VarKind::A);
        kinds.push(VarKind::Y);
        kinds
    }

    fn sort_key(self) -> (Tier, u32) {
        (self.tier(), self.covariate().unwrap_or(0))
    }
}

impl PartialOrd for VarKind {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for VarKind {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl fmt::Display for VarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarKind::L(k) => write!(f, "L{k}"),
            VarKind::A => f.write_str("A"),
            VarKind::Y => f.write_str("Y"),
        }
    }
}

impl FromStr for VarKind {
    type Err = GraphError;

    /// Accepts `L` (shorthand for `L1`), `L<k>`, `A` and `Y`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || GraphError::Parse {
            what: "variable kind",
            input: s.to_string(),
        };
        match s {
            "A" => Ok(VarKind::A),
            "Y" => Ok(VarKind::Y),
            "L" => Ok(VarKind::L(1)),
            _ => {
                let k = s.strip_prefix('L').ok_or_else(err)?;
                let k: u32 = k.parse().map_err(|_| err())?;
                if k == 0 {
                    return Err(err());
                }
                Ok(VarKind::L(k))
            }
        }
    }
}

/// A variable of the block: a kind attached to a 1-based unit.
///
/// Ordered by `(tier, unit, covariate)`, which is the canonical order used for
/// tie-breaking and serialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VariableId {
    pub unit: u32,
    pub kind: VarKind,
}

impl VariableId {
    pub fn new(unit: u32, kind: VarKind) -> Self {
        VariableId { unit, kind }
    }

    pub fn l(unit: u32, k: u32) -> Self {
        VariableId::new(unit, VarKind::L(k))
    }

    pub fn a(unit: u32) -> Self {
        VariableId::new(unit, VarKind::A)
    }

    pub fn y(unit: u32) -> Self {
        VariableId::new(unit, VarKind::Y)
    }

    pub fn tier(self) -> Tier {
        self.kind.tier()
    }

    /// Column of this variable in a unit-major data matrix with `p` covariates.
    pub fn column(self, p: u32) -> usize {
        (self.unit as usize - 1) * (p as usize + 2) + self.kind.slot(p)
    }

    fn sort_key(self) -> (Tier, u32, u32) {
        (self.tier(), self.unit, self.kind.covariate().unwrap_or(0))
    }
}

impl PartialOrd for VariableId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for VariableId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.kind, self.unit)
    }
}

impl FromStr for VariableId {
    type Err = GraphError;

    /// Parses the display form, e.g. `A_3` or `L2_1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, unit) = s.rsplit_once('_').ok_or_else(|| GraphError::Parse {
            what: "variable",
            input: s.to_string(),
        })?;
        let unit: u32 = unit.parse().map_err(|_| GraphError::Parse {
            what: "variable",
            input: s.to_string(),
        })?;
        Ok(VariableId::new(unit, kind.parse()?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Directed,
    Undirected,
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeKind::Directed => "directed",
            EdgeKind::Undirected => "undirected",
        })
    }
}

impl FromStr for EdgeKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "directed" => Ok(EdgeKind::Directed),
            "undirected" => Ok(EdgeKind::Undirected),
            _ => Err(GraphError::Parse {
                what: "edge kind",
                input: s.to_string(),
            }),
        }
    }
}

/// Reason an edge breaks the tier rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationKind {
    /// Directed edge pointing backwards along `L -> A -> Y`.
    CausalOrdering,
    /// Undirected edge joining two different tiers.
    CrossTierUndirected,
    /// Directed edge between two variables of the same tier.
    SameTierDirected,
    SelfLoop,
    UnitOutOfRange,
    CovariateOutOfRange,
    /// A network tie whose endpoints lie in the same unit.
    WithinUnitCrossEdge,
    /// A unit-level template edge attached to two different units.
    CrossUnitTemplateEdge,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::CausalOrdering => "causal ordering (edges must point L -> A -> Y)",
            ViolationKind::CrossTierUndirected => {
                "tier symmetry (undirected edges must join variables of the same tier)"
            }
            ViolationKind::SameTierDirected => {
                "tier symmetry (edges within a tier must be undirected)"
            }
            ViolationKind::SelfLoop => "no self loops",
            ViolationKind::UnitOutOfRange => "unit index range",
            ViolationKind::CovariateOutOfRange => "covariate index range",
            ViolationKind::WithinUnitCrossEdge => "network ties must join two different units",
            ViolationKind::CrossUnitTemplateEdge => "unit edges must stay within one unit",
        })
    }
}

/// Checks the tier rules for an edge between two kinds.
pub fn tier_rule(tail: VarKind, head: VarKind, kind: EdgeKind) -> Result<(), ViolationKind> {
    let (t, h) = (tail.tier(), head.tier());
    match kind {
        EdgeKind::Undirected if t != h => Err(ViolationKind::CrossTierUndirected),
        EdgeKind::Directed if t == h => Err(ViolationKind::SameTierDirected),
        EdgeKind::Directed if t > h => Err(ViolationKind::CausalOrdering),
        _ => Ok(()),
    }
}

/// An edge between two variables. Undirected edges keep `tail < head`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub tail: VariableId,
    pub head: VariableId,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn new(tail: VariableId, head: VariableId, kind: EdgeKind) -> Self {
        match kind {
            EdgeKind::Undirected if head < tail => Edge {
                tail: head,
                head: tail,
                kind,
            },
            _ => Edge { tail, head, kind },
        }
    }

    pub fn directed(tail: VariableId, head: VariableId) -> Self {
        Edge::new(tail, head, EdgeKind::Directed)
    }

    pub fn undirected(a: VariableId, b: VariableId) -> Self {
        Edge::new(a, b, EdgeKind::Undirected)
    }

    pub fn is_cross_unit(&self) -> bool {
        self.tail.unit != self.head.unit
    }

    /// Unordered unit pair `(min, max)`.
    pub fn units(&self) -> (u32, u32) {
        let (a, b) = (self.tail.unit, self.head.unit);
        (a.min(b), a.max(b))
    }

    pub fn prototype(&self) -> EdgePrototype {
        EdgePrototype::new(self.tail.kind, self.head.kind, self.kind)
    }

    /// True when `v` is the head of a directed edge or either end of an
    /// undirected one, i.e. the edge enters `v`'s conditional.
    pub fn enters(&self, v: VariableId) -> bool {
        match self.kind {
            EdgeKind::Directed => self.head == v,
            EdgeKind::Undirected => self.head == v || self.tail == v,
        }
    }

    pub fn other(&self, v: VariableId) -> VariableId {
        if self.tail == v {
            self.head
        } else {
            self.tail
        }
    }

    pub fn check_tiers(&self) -> Result<(), ViolationKind> {
        if self.tail == self.head {
            return Err(ViolationKind::SelfLoop);
        }
        tier_rule(self.tail.kind, self.head.kind, self.kind)
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arrow = match self.kind {
            EdgeKind::Directed => "->",
            EdgeKind::Undirected => "--",
        };
        write!(f, "{}{}{}", self.tail, arrow, self.head)
    }
}

impl FromStr for Edge {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((a, b)) = s.split_once("->") {
            Ok(Edge::directed(a.parse()?, b.parse()?))
        } else if let Some((a, b)) = s.split_once("--") {
            Ok(Edge::undirected(a.parse()?, b.parse()?))
        } else {
            Err(GraphError::Parse {
                what: "edge",
                input: s.to_string(),
            })
        }
    }
}

/// The generic type of an edge with units abstracted away. Used both for the
/// per-unit template and for network-tie prototypes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgePrototype {
    pub tail: VarKind,
    pub head: VarKind,
    pub kind: EdgeKind,
}

impl EdgePrototype {
    pub fn new(tail: VarKind, head: VarKind, kind: EdgeKind) -> Self {
        match kind {
            EdgeKind::Undirected if head < tail => EdgePrototype {
                tail: head,
                head: tail,
                kind,
            },
            _ => EdgePrototype { tail, head, kind },
        }
    }

    pub fn directed(tail: VarKind, head: VarKind) -> Self {
        EdgePrototype::new(tail, head, EdgeKind::Directed)
    }

    pub fn undirected(a: VarKind, b: VarKind) -> Self {
        EdgePrototype::new(a, b, EdgeKind::Undirected)
    }

    pub fn check_tiers(&self) -> Result<(), ViolationKind> {
        tier_rule(self.tail, self.head, self.kind)
    }

    /// Tier of the variables whose conditional this edge enters.
    pub fn head_tier(&self) -> Tier {
        self.head.tier()
    }

    /// The edge inside unit `i`.
    pub fn within_unit(&self, i: u32) -> Edge {
        Edge::new(
            VariableId::new(i, self.tail),
            VariableId::new(i, self.head),
            self.kind,
        )
    }

    /// Network ties of this type between units `i` and `j`, in both directions.
    pub fn between(&self, i: u32, j: u32) -> Vec<Edge> {
        let mut out = vec![
            Edge::new(
                VariableId::new(i, self.tail),
                VariableId::new(j, self.head),
                self.kind,
            ),
            Edge::new(
                VariableId::new(j, self.tail),
                VariableId::new(i, self.head),
                self.kind,
            ),
        ];
        out.sort();
        out.dedup();
        out
    }
}

impl fmt::Display for EdgePrototype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arrow = match self.kind {
            EdgeKind::Directed => "->",
            EdgeKind::Undirected => "--",
        };
        write!(f, "{}{}{}", self.tail, arrow, self.head)
    }
}

impl FromStr for EdgePrototype {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((a, b)) = s.split_once("->") {
            Ok(EdgePrototype::directed(a.parse()?, b.parse()?))
        } else if let Some((a, b)) = s.split_once("--") {
            Ok(EdgePrototype::undirected(a.parse()?, b.parse()?))
        } else {
            Err(GraphError::Parse {
                what: "prototype",
                input: s.to_string(),
            })
        }
    }
}

/// Every tier-legal network-tie prototype for `p` covariates.
pub fn all_legal_prototypes(p: u32) -> BTreeSet<EdgePrototype> {
    let mut out = BTreeSet::new();
    for k in 1..=p {
        for k2 in k..=p {
            out.insert(EdgePrototype::undirected(VarKind::L(k), VarKind::L(k2)));
        }
        out.insert(EdgePrototype::directed(VarKind::L(k), VarKind::A));
        out.insert(EdgePrototype::directed(VarKind::L(k), VarKind::Y));
    }
    out.insert(EdgePrototype::undirected(VarKind::A, VarKind::A));
    out.insert(EdgePrototype::directed(VarKind::A, VarKind::Y));
    out.insert(EdgePrototype::undirected(VarKind::Y, VarKind::Y));
    out
}

/// The known per-unit structure `L_k -> A`, `L_k -> Y`, `A -> Y`.
pub fn default_unit_template(p: u32) -> BTreeSet<EdgePrototype> {
    let mut out = BTreeSet::new();
    for k in 1..=p {
        out.insert(EdgePrototype::directed(VarKind::L(k), VarKind::A));
        out.insert(EdgePrototype::directed(VarKind::L(k), VarKind::Y));
    }
    out.insert(EdgePrototype::directed(VarKind::A, VarKind::Y));
    out
}

/// All unordered unit pairs `(i, j)` with `i < j`.
pub fn all_unit_pairs(m: u32) -> BTreeSet<(u32, u32)> {
    let mut out = BTreeSet::new();
    for i in 1..=m {
        for j in (i + 1)..=m {
            out.insert((i, j));
        }
    }
    out
}

/// Where a violation was found.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EdgeRef {
    Unit(EdgePrototype),
    Cross(Edge),
}

impl fmt::Display for EdgeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeRef::Unit(e) => write!(f, "unit edge {e}"),
            EdgeRef::Cross(e) => write!(f, "network tie {e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub edge: EdgeRef,
    pub kind: ViolationKind,
}

/// Verdict of [`TieredChainGraph::validate`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Validity {
    pub violations: Vec<Violation>,
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for Validity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("{} violates {}", v.edge, v.kind))
            .collect();
        f.write_str(&parts.join("; "))
    }
}

/// Parents, neighbours, boundary and closure of one variable.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Adjacency {
    pub parents: BTreeSet<VariableId>,
    pub neighbors: BTreeSet<VariableId>,
    pub boundary: BTreeSet<VariableId>,
    pub closure: BTreeSet<VariableId>,
}

/// Chain graph over a block of `m` units with `p` covariates per unit.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TieredChainGraph {
    m: u32,
    p: u32,
    unit_edges: BTreeSet<EdgePrototype>,
    cross_edges: BTreeSet<Edge>,
}

impl TieredChainGraph {
    /// Builds and validates a graph.
    pub fn new(
        m: u32,
        p: u32,
        unit_edges: impl IntoIterator<Item = EdgePrototype>,
        cross_edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self, GraphError> {
        let g = Self::new_unchecked(m, p, unit_edges, cross_edges);
        let verdict = g.validate();
        if verdict.is_valid() {
            Ok(g)
        } else {
            Err(GraphError::Invalid(verdict))
        }
    }

    /// Builds a graph without checking the tier rules. Use [`validate`](Self::validate)
    /// to obtain the verdict.
    pub fn new_unchecked(
        m: u32,
        p: u32,
        unit_edges: impl IntoIterator<Item = EdgePrototype>,
        cross_edges: impl IntoIterator<Item = Edge>,
    ) -> Self {
        TieredChainGraph {
            m,
            p,
            unit_edges: unit_edges.into_iter().collect(),
            cross_edges: cross_edges.into_iter().collect(),
        }
    }

    /// Unit template only, no network ties.
    pub fn empty(m: u32, p: u32) -> Self {
        Self::new_unchecked(m, p, default_unit_template(p), [])
    }

    /// Default template plus `prototypes` instantiated on every pair of `network`.
    pub fn homogeneous(
        m: u32,
        p: u32,
        network: &BTreeSet<(u32, u32)>,
        prototypes: &BTreeSet<EdgePrototype>,
    ) -> Result<Self, GraphError> {
        let mut cross = BTreeSet::new();
        for &(i, j) in network {
            for proto in prototypes {
                cross.extend(proto.between(i, j));
            }
        }
        Self::new(m, p, default_unit_template(p), cross)
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    /// Number of variables, `m * (p + 2)`.
    pub fn num_variables(&self) -> usize {
        self.m as usize * (self.p as usize + 2)
    }

    pub fn unit_edges(&self) -> &BTreeSet<EdgePrototype> {
        &self.unit_edges
    }

    pub fn cross_edges(&self) -> &BTreeSet<Edge> {
        &self.cross_edges
    }

    pub fn contains_edge(&self, e: &Edge) -> bool {
        if e.is_cross_unit() {
            self.cross_edges.contains(e)
        } else {
            self.unit_edges.contains(&e.prototype())
        }
    }

    /// Unit pairs joined by at least one network tie.
    pub fn network(&self) -> BTreeSet<(u32, u32)> {
        self.cross_edges.iter().map(Edge::units).collect()
    }

    /// All variables in canonical order.
    pub fn variables(&self) -> Vec<VariableId> {
        let mut vars = Vec::with_capacity(self.num_variables());
        for kind in VarKind::all(self.p) {
            for unit in 1..=self.m {
                vars.push(VariableId::new(unit, kind));
            }
        }
        vars.sort();
        vars
    }

    pub fn tier_variables(&self, tier: Tier) -> Vec<VariableId> {
        self.variables()
            .into_iter()
            .filter(|v| v.tier() == tier)
            .collect()
    }

    pub fn contains_variable(&self, v: VariableId) -> bool {
        v.unit >= 1 && v.unit <= self.m && v.kind.covariate().is_none_or(|k| k >= 1 && k <= self.p)
    }

    /// Every edge of the graph: the template instantiated in each unit plus
    /// the network ties.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out: Vec<Edge> =
            Vec::with_capacity(self.unit_edges.len() * self.m as usize + self.cross_edges.len());
        for i in 1..=self.m {
            out.extend(self.unit_edges.iter().map(|e| e.within_unit(i)));
        }
        out.extend(self.cross_edges.iter().copied());
        out.sort();
        out
    }

    pub fn num_edges(&self) -> usize {
        self.unit_edges.len() * self.m as usize + self.cross_edges.len()
    }

    /// Copy with the given network ties replaced.
    pub fn with_cross_edges(&self, cross_edges: BTreeSet<Edge>) -> Self {
        TieredChainGraph {
            m: self.m,
            p: self.p,
            unit_edges: self.unit_edges.clone(),
            cross_edges,
        }
    }

    /// Copy without the given network ties.
    pub fn without_edges(&self, edges: &[Edge]) -> Self {
        let mut cross = self.cross_edges.clone();
        for e in edges {
            cross.remove(e);
        }
        self.with_cross_edges(cross)
    }

    /// Copy with an extra edge. Unit-level edges extend the template.
    pub fn with_edge(&self, edge: Edge) -> Self {
        let mut g = self.clone();
        if edge.is_cross_unit() {
            g.cross_edges.insert(edge);
        } else {
            g.unit_edges.insert(edge.prototype());
        }
        g
    }

    /// Checks tier symmetry, causal ordering and index ranges of every edge.
    pub fn validate(&self) -> Validity {
        let mut violations = Vec::new();
        for e in &self.unit_edges {
            let range_ok = [e.tail, e.head]
                .iter()
                .all(|k| k.covariate().is_none_or(|c| c >= 1 && c <= self.p));
            let kind = if !range_ok {
                Some(ViolationKind::CovariateOutOfRange)
            } else if e.tail == e.head {
                Some(ViolationKind::SelfLoop)
            } else {
                e.check_tiers().err()
            };
            if let Some(kind) = kind {
                violations.push(Violation {
                    edge: EdgeRef::Unit(*e),
                    kind,
                });
            }
        }
        for e in &self.cross_edges {
            let kind = if [e.tail, e.head]
                .iter()
                .any(|v| v.unit < 1 || v.unit > self.m)
            {
                Some(ViolationKind::UnitOutOfRange)
            } else if !self.contains_variable(e.tail) || !self.contains_variable(e.head) {
                Some(ViolationKind::CovariateOutOfRange)
            } else if !e.is_cross_unit() {
                Some(ViolationKind::WithinUnitCrossEdge)
            } else {
                e.check_tiers().err()
            };
            if let Some(kind) = kind {
                violations.push(Violation {
                    edge: EdgeRef::Cross(*e),
                    kind,
                });
            }
        }
        violations.sort();
        Validity { violations }
    }

    pub fn index(&self) -> GraphIndex {
        GraphIndex::new(self)
    }

    /// Maximal undirected-connected vertex sets, sorted by least member.
    pub fn blocks(&self) -> Vec<BTreeSet<VariableId>> {
        self.index().blocks()
    }

    pub fn adjacency(&self, v: VariableId) -> Result<Adjacency, GraphError> {
        if !self.contains_variable(v) {
            return Err(GraphError::UnknownVariable(v));
        }
        let idx = self.index();
        let parents: BTreeSet<_> = idx.parents(v).iter().copied().collect();
        let neighbors: BTreeSet<_> = idx.neighbors(v).iter().copied().collect();
        let boundary: BTreeSet<_> = parents.union(&neighbors).copied().collect();
        let mut closure = boundary.clone();
        closure.insert(v);
        Ok(Adjacency {
            parents,
            neighbors,
            boundary,
            closure,
        })
    }

    /// Network ties sharing the prototype of `edge` (both unit orders).
    pub fn homologs(&self, edge: &Edge) -> Result<BTreeSet<Edge>, GraphError> {
        if !edge.is_cross_unit() {
            return Err(GraphError::NotACrossEdge(*edge));
        }
        let proto = edge.prototype();
        Ok(self
            .cross_edges
            .iter()
            .filter(|e| e.prototype() == proto)
            .copied()
            .collect())
    }

    /// Distinct prototypes among the network ties.
    pub fn prototypes(&self) -> BTreeSet<EdgePrototype> {
        self.cross_edges.iter().map(Edge::prototype).collect()
    }

    /// Network ties grouped by unit pair.
    pub fn bundles(&self) -> BTreeMap<(u32, u32), BTreeSet<Edge>> {
        let mut out: BTreeMap<(u32, u32), BTreeSet<Edge>> = BTreeMap::new();
        for e in &self.cross_edges {
            out.entry(e.units()).or_default().insert(*e);
        }
        out
    }

    /// True when every adjacent pair carries exactly the full instantiation of
    /// the graph's prototype set.
    pub fn is_homogeneous(&self) -> bool {
        let protos = self.prototypes();
        self.bundles().iter().all(|(&(i, j), edges)| {
            let expected: BTreeSet<Edge> = protos.iter().flat_map(|p| p.between(i, j)).collect();
            &expected == edges
        })
    }

    /// The conditional MRF for one tier: random vertices are the tier's
    /// variables, fixed vertices are all earlier tiers.
    pub fn tier_subproblem(&self, tier: Tier) -> TierSubproblem {
        let unit_edges: BTreeSet<EdgePrototype> = self
            .unit_edges
            .iter()
            .filter(|e| e.head_tier() == tier)
            .copied()
            .collect();
        let deletable: BTreeSet<Edge> = self
            .cross_edges
            .iter()
            .filter(|e| e.head.tier() == tier)
            .copied()
            .collect();
        let graph = TieredChainGraph::new_unchecked(
            self.m,
            self.p,
            unit_edges.iter().copied(),
            deletable.iter().copied(),
        );
        let vars = self.variables();
        TierSubproblem {
            tier,
            random: vars.iter().filter(|v| v.tier() == tier).copied().collect(),
            fixed: vars.iter().filter(|v| v.tier() < tier).copied().collect(),
            fixed_unit_edges: unit_edges,
            deletable,
            graph,
        }
    }
}

/// Every tier-legal edge between `m` units with the default unit template.
pub fn complete_tiered_graph(m: u32, p: u32) -> TieredChainGraph {
    let protos = all_legal_prototypes(p);
    let mut cross = BTreeSet::new();
    for (i, j) in all_unit_pairs(m) {
        for proto in &protos {
            cross.extend(proto.between(i, j));
        }
    }
    TieredChainGraph::new_unchecked(m, p, default_unit_template(p), cross)
}

/// Conditional MRF view of one tier of a graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TierSubproblem {
    pub tier: Tier,
    pub random: Vec<VariableId>,
    pub fixed: Vec<VariableId>,
    /// Unit-level edges into the tier; never deleted.
    pub fixed_unit_edges: BTreeSet<EdgePrototype>,
    /// Network ties into the tier; the search space of the subproblem.
    pub deletable: BTreeSet<Edge>,
    /// Graph holding only the edges that enter the tier.
    pub graph: TieredChainGraph,
}

/// Adjacency lists of a graph, built once for repeated queries.
#[derive(Clone, Debug)]
pub struct GraphIndex {
    vars: Vec<VariableId>,
    pos: BTreeMap<VariableId, usize>,
    parents: Vec<Vec<VariableId>>,
    neighbors: Vec<Vec<VariableId>>,
}

impl GraphIndex {
    pub fn new(g: &TieredChainGraph) -> Self {
        let vars = g.variables();
        let pos: BTreeMap<VariableId, usize> =
            vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let mut parents = vec![Vec::new(); vars.len()];
        let mut neighbors = vec![Vec::new(); vars.len()];
        for e in g.edges() {
            let (Some(&t), Some(&h)) = (pos.get(&e.tail), pos.get(&e.head)) else {
                continue;
            };
            match e.kind {
                EdgeKind::Directed => parents[h].push(e.tail),
                EdgeKind::Undirected => {
                    neighbors[h].push(e.tail);
                    neighbors[t].push(e.head);
                }
            }
        }
        for list in parents.iter_mut().chain(neighbors.iter_mut()) {
            list.sort();
            list.dedup();
        }
        GraphIndex {
            vars,
            pos,
            parents,
            neighbors,
        }
    }

    pub fn variables(&self) -> &[VariableId] {
        &self.vars
    }

    pub fn parents(&self, v: VariableId) -> &[VariableId] {
        self.pos.get(&v).map_or(&[], |&i| &self.parents[i])
    }

    pub fn neighbors(&self, v: VariableId) -> &[VariableId] {
        self.pos.get(&v).map_or(&[], |&i| &self.neighbors[i])
    }

    /// Parents followed by neighbours.
    pub fn boundary(&self, v: VariableId) -> BTreeSet<VariableId> {
        self.parents(v)
            .iter()
            .chain(self.neighbors(v))
            .copied()
            .collect()
    }

    pub fn blocks(&self) -> Vec<BTreeSet<VariableId>> {
        let mut seen = vec![false; self.vars.len()];
        let mut out = Vec::new();
        for start in 0..self.vars.len() {
            if seen[start] {
                continue;
            }
            let mut block = BTreeSet::new();
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                block.insert(self.vars[i]);
                for nb in &self.neighbors[i] {
                    let j = self.pos[nb];
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            out.push(block);
        }
        out
    }

    /// Union of the parents of every member of `block`, minus the block.
    pub fn block_parents(&self, block: &BTreeSet<VariableId>) -> BTreeSet<VariableId> {
        block
            .iter()
            .flat_map(|v| self.parents(*v).iter().copied())
            .filter(|v| !block.contains(v))
            .collect()
    }
}

//! JSON graph files.
//!
//! Two input forms are accepted. The explicit form lists every tie:
//!
//! ```json
//! {"m": 2, "p": 1,
//!  "unit_edges": [["L1","A"], ["L1","Y"], ["A","Y"]],
//!  "cross_edges": [{"tail": ["A",1], "to": ["Y",2], "kind": "directed"}]}
//! ```
//!
//! The homogeneous shorthand gives a unit network and the prototypes to place
//! on every adjacent pair:
//!
//! ```json
//! {"m": 4, "p": 1, "network": [[1,2],[3,4]], "prototypes": [["A","Y","directed"]]}
//! ```
//!
//! The writer always emits the explicit form.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    default_unit_template, Edge, EdgeKind, EdgePrototype, GraphError, TieredChainGraph, VarKind,
    VariableId,
};

#[derive(Debug, Error)]
pub enum GraphFileError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed graph JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("graph field {field}: {message}")]
    Field { field: String, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    m: u32,
    #[serde(default = "one")]
    p: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unit_edges: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cross_edges: Option<Vec<RawTie>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    network: Option<Vec<[u32; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prototypes: Option<Vec<Vec<String>>>,
}

fn one() -> u32 {
    1
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTie {
    tail: (String, u32),
    #[serde(alias = "head")]
    to: (String, u32),
    kind: EdgeKind,
}

fn field_err(field: String, message: impl ToString) -> GraphFileError {
    GraphFileError::Field {
        field,
        message: message.to_string(),
    }
}

fn parse_proto(field: String, item: &[String]) -> Result<EdgePrototype, GraphFileError> {
    let (a, b, kind) = match item {
        [a, b] => (a, b, None),
        [a, b, k] => (a, b, Some(k)),
        _ => {
            return Err(field_err(
                field,
                "expected [tail, head] or [tail, head, kind]",
            ))
        }
    };
    let tail: VarKind = a.parse().map_err(|e| field_err(field.clone(), e))?;
    let head: VarKind = b.parse().map_err(|e| field_err(field.clone(), e))?;
    let kind = match kind {
        Some(k) => k.parse().map_err(|e| field_err(field.clone(), e))?,
        None if tail.tier() == head.tier() => EdgeKind::Undirected,
        None => EdgeKind::Directed,
    };
    let proto = EdgePrototype::new(tail, head, kind);
    proto
        .check_tiers()
        .map_err(|rule| field_err(field, format!("{proto} violates {rule}")))?;
    Ok(proto)
}

/// Parses a graph from JSON text and validates it.
pub fn graph_from_json(text: &str) -> Result<TieredChainGraph, GraphFileError> {
    let raw: RawGraph = serde_json::from_str(text).map_err(|e| GraphFileError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let unit_edges = match &raw.unit_edges {
        Some(list) => list
            .iter()
            .enumerate()
            .map(|(i, item)| parse_proto(format!("unit_edges[{i}]"), item))
            .collect::<Result<BTreeSet<_>, _>>()?,
        None => default_unit_template(raw.p),
    };
    let mut cross = BTreeSet::new();
    for (i, tie) in raw.cross_edges.iter().flatten().enumerate() {
        let field = format!("cross_edges[{i}]");
        let tail = VariableId::new(
            tie.tail.1,
            tie.tail
                .0
                .parse()
                .map_err(|e| field_err(field.clone(), e))?,
        );
        let head = VariableId::new(
            tie.to.1,
            tie.to.0.parse().map_err(|e| field_err(field.clone(), e))?,
        );
        cross.insert(Edge::new(tail, head, tie.kind));
    }
    match (&raw.network, &raw.prototypes) {
        (Some(network), Some(protos)) => {
            let protos = protos
                .iter()
                .enumerate()
                .map(|(i, item)| parse_proto(format!("prototypes[{i}]"), item))
                .collect::<Result<Vec<_>, _>>()?;
            for (i, &[a, b]) in network.iter().enumerate() {
                if a == b || a < 1 || b < 1 || a > raw.m || b > raw.m {
                    return Err(field_err(
                        format!("network[{i}]"),
                        format!(
                            "pair ({a}, {b}) must join two distinct units in 1..={}",
                            raw.m
                        ),
                    ));
                }
                for proto in &protos {
                    cross.extend(proto.between(a, b));
                }
            }
        }
        (None, None) => {}
        _ => {
            return Err(field_err(
                "network".into(),
                "the homogeneous shorthand needs both \"network\" and \"prototypes\"",
            ))
        }
    }
    Ok(TieredChainGraph::new(raw.m, raw.p, unit_edges, cross)?)
}

pub fn read_graph(path: &Path) -> Result<TieredChainGraph, GraphFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| GraphFileError::Read {
        path: path.display().to_string(),
        source,
    })?;
    graph_from_json(&text)
}

/// Serializes a graph in the explicit form.
pub fn graph_to_json(g: &TieredChainGraph) -> String {
    let unit_edges = g
        .unit_edges()
        .iter()
        .map(|e| {
            let mut item = vec![e.tail.to_string(), e.head.to_string()];
            if e.kind == EdgeKind::Undirected {
                item.push(e.kind.to_string());
            }
            item
        })
        .collect();
    let cross_edges = g
        .cross_edges()
        .iter()
        .map(|e| RawTie {
            tail: (e.tail.kind.to_string(), e.tail.unit),
            to: (e.head.kind.to_string(), e.head.unit),
            kind: e.kind,
        })
        .collect();
    let raw = RawGraph {
        m: g.m(),
        p: g.p(),
        unit_edges: Some(unit_edges),
        cross_edges: Some(cross_edges),
        network: None,
        prototypes: None,
    };
    serde_json::to_string_pretty(&raw).expect("graph serialization cannot fail")
}

/// Parses a network file: either `[[1,2],[2,3]]` or `{"network": [[1,2]]}`.
pub fn network_from_json(text: &str, m: u32) -> Result<BTreeSet<(u32, u32)>, GraphFileError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Bare(Vec<[u32; 2]>),
        Wrapped { network: Vec<[u32; 2]> },
    }
    let raw: Raw = serde_json::from_str(text).map_err(|e| GraphFileError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let pairs = match raw {
        Raw::Bare(p) | Raw::Wrapped { network: p } => p,
    };
    let mut out = BTreeSet::new();
    for (i, [a, b]) in pairs.into_iter().enumerate() {
        if a == b || a < 1 || b < 1 || a > m || b > m {
            return Err(field_err(
                format!("network[{i}]"),
                format!("pair ({a}, {b}) must join two distinct units in 1..={m}"),
            ));
        }
        out.insert((a.min(b), a.max(b)));
    }
    Ok(out)
}

/// Parses a prototype file: either `[["A","Y","directed"]]` or
/// `{"prototypes": [...]}`.
pub fn prototypes_from_json(text: &str) -> Result<BTreeSet<EdgePrototype>, GraphFileError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Bare(Vec<Vec<String>>),
        Wrapped { prototypes: Vec<Vec<String>> },
    }
    let raw: Raw = serde_json::from_str(text).map_err(|e| GraphFileError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let items = match raw {
        Raw::Bare(p) | Raw::Wrapped { prototypes: p } => p,
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| parse_proto(format!("prototypes[{i}]"), item))
        .collect()
}

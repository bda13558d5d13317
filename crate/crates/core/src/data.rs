//! Binary block data: `n` iid blocks, each a row of `m * (p + 2)` values in
//! unit-major order `L1..Lp, A, Y` per unit.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::graph::{VarKind, VariableId};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("CSV error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("bad header: expected {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("row {row}, column {column}: value {value:?} is not 0 or 1")]
    NonBinary {
        row: u64,
        column: String,
        value: String,
    },
    #[error("row {row}, column {column}: {message}")]
    Field {
        row: u64,
        column: String,
        message: String,
    },
    #[error("block {block}: {message}")]
    Block { block: String, message: String },
    #[error("dataset shape mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockDataset {
    n: usize,
    m: u32,
    p: u32,
    values: Vec<u8>,
}

impl BlockDataset {
    /// Wraps a row-major `n x m(p+2)` matrix, rejecting values other than 0 and 1.
    pub fn new(m: u32, p: u32, values: Vec<u8>) -> Result<Self, DataError> {
        let d = m as usize * (p as usize + 2);
        if d == 0 || !values.len().is_multiple_of(d) {
            return Err(DataError::Shape(format!(
                "{} values do not form rows of width {d}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|&x| x > 1) {
            let v = variable_at(pos % d, p);
            return Err(DataError::NonBinary {
                row: (pos / d) as u64 + 1,
                column: v.to_string(),
                value: values[pos].to_string(),
            });
        }
        Ok(BlockDataset {
            n: values.len() / d,
            m,
            p,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    /// Row width `m * (p + 2)`.
    pub fn width(&self) -> usize {
        self.m as usize * (self.p as usize + 2)
    }

    pub fn block(&self, b: usize) -> &[u8] {
        let d = self.width();
        &self.values[b * d..(b + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.values.chunks_exact(self.width())
    }

    pub fn get(&self, b: usize, v: VariableId) -> u8 {
        self.block(b)[v.column(self.p)]
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Dataset made of the given blocks, in order (repeats allowed).
    pub fn select(&self, blocks: &[usize]) -> Self {
        let mut values = Vec::with_capacity(blocks.len() * self.width());
        for &b in blocks {
            values.extend_from_slice(self.block(b));
        }
        BlockDataset {
            n: blocks.len(),
            m: self.m,
            p: self.p,
            values,
        }
    }

    /// Copy with unit labels permuted: unit `i` of the result is unit
    /// `perm[i - 1]` of `self`.
    pub fn permute_units(&self, perm: &[u32]) -> Self {
        let stride = self.p as usize + 2;
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.rows() {
            for &src in perm {
                let start = (src as usize - 1) * stride;
                values.extend_from_slice(&row[start..start + stride]);
            }
        }
        BlockDataset { values, ..*self }
    }

    pub fn header(p: u32) -> Vec<String> {
        let mut h = vec!["block_id".to_string(), "unit".to_string()];
        h.extend((1..=p).map(|k| format!("L{k}")));
        h.push("A".into());
        h.push("Y".into());
        h
    }

    /// CSV with one row per unit per block; block ids start at 1.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::header(self.p))
            .expect("in-memory write");
        let stride = self.p as usize + 2;
        for (b, row) in self.rows().enumerate() {
            for unit in 0..self.m as usize {
                let mut rec = vec![(b + 1).to_string(), (unit + 1).to_string()];
                rec.extend(
                    row[unit * stride..(unit + 1) * stride]
                        .iter()
                        .map(|x| x.to_string()),
                );
                w.write_record(&rec).expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_csv()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv(&text)
    }

    /// Parses the CSV form. The number of covariates comes from the header;
    /// `m` is the largest unit index, and every block must list units `1..=m`
    /// exactly once. Blocks are ordered by first appearance.
    pub fn from_csv(text: &str) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_err(&e))?
            .iter()
            .map(str::to_string)
            .collect();
        let p = header.len().saturating_sub(4) as u32;
        let expected = Self::header(p);
        if header.len() < 4 || header != expected {
            return Err(DataError::Header {
                expected: Self::header(p.max(1)).join(","),
                found: header.join(","),
            });
        }
        let stride = p as usize + 2;
        let mut order: Vec<String> = Vec::new();
        let mut blocks: BTreeMap<String, BTreeMap<u32, Vec<u8>>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(&e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let block = rec[0].to_string();
            let unit: u32 =
                rec[1]
                    .parse()
                    .ok()
                    .filter(|&u| u >= 1)
                    .ok_or_else(|| DataError::Field {
                        row: line,
                        column: "unit".into(),
                        message: format!("{:?} is not a positive unit index", &rec[1]),
                    })?;
            let mut vals = Vec::with_capacity(stride);
            for c in 0..stride {
                let raw = &rec[c + 2];
                match raw {
                    "0" => vals.push(0),
                    "1" => vals.push(1),
                    _ => {
                        return Err(DataError::NonBinary {
                            row: line,
                            column: expected[c + 2].clone(),
                            value: raw.to_string(),
                        })
                    }
                }
            }
            let units = blocks.entry(block.clone()).or_insert_with(|| {
                order.push(block.clone());
                BTreeMap::new()
            });
            if units.insert(unit, vals).is_some() {
                return Err(DataError::Block {
                    block,
                    message: format!("unit {unit} appears twice"),
                });
            }
        }
        let m = blocks
            .values()
            .flat_map(|u| u.keys().copied())
            .max()
            .ok_or_else(|| DataError::Shape("no data rows".into()))?;
        let mut values = Vec::with_capacity(order.len() * m as usize * stride);
        for id in &order {
            let units = &blocks[id];
            if units.len() != m as usize {
                return Err(DataError::Block {
                    block: id.clone(),
                    message: format!("has {} units, expected {m}", units.len()),
                });
            }
            for vals in units.values() {
                values.extend_from_slice(vals);
            }
        }
        Self::new(m, p, values)
    }
}

fn csv_err(e: &csv::Error) -> DataError {
    DataError::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// Variable stored at column `col` of a row with `p` covariates.
pub fn variable_at(col: usize, p: u32) -> VariableId {
    let stride = p as usize + 2;
    let unit = (col / stride) as u32 + 1;
    let slot = col % stride;
    let kind = if slot < p as usize {
        VarKind::L(slot as u32 + 1)
    } else if slot == p as usize {
        VarKind::A
    } else {
        VarKind::Y
    };
    VariableId::new(unit, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BlockDataset {
        BlockDataset::new(2, 1, vec![1, 0, 1, 0, 1, 1, 0, 0, 0, 1, 1, 0]).unwrap()
    }

    #[test]
    fn csv_roundtrip() {
        let d = sample();
        let text = d.to_csv();
        assert!(text.starts_with("block_id,unit,L1,A,Y\n1,1,1,0,1\n"));
        assert_eq!(BlockDataset::from_csv(&text).unwrap(), d);
    }

    #[test]
    fn value_two_is_rejected_with_location() {
        let text = "block_id,unit,L1,A,Y\n1,1,0,1,0\n1,2,0,2,1\n";
        let err = BlockDataset::from_csv(text).unwrap_err();
        match err {
            DataError::NonBinary { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "A");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_unit_is_rejected() {
        let text = "block_id,unit,L1,A,Y\n1,1,0,1,0\n1,2,0,1,1\n2,1,0,0,0\n";
        assert!(matches!(
            BlockDataset::from_csv(text),
            Err(DataError::Block { .. })
        ));
        assert!(BlockDataset::from_csv("a,b\n").is_err());
    }

    #[test]
    fn columns_follow_variable_ids() {
        let d = sample();
        assert_eq!(d.get(0, VariableId::l(1, 1)), 1);
        assert_eq!(d.get(0, VariableId::y(2)), 1);
        for col in 0..d.width() {
            assert_eq!(variable_at(col, 1).column(1), col);
        }
        assert_eq!(variable_at(5, 2), VariableId::l(2, 2));
    }

    #[test]
    fn select_and_permute() {
        let d = sample();
        let s = d.select(&[1, 1]);
        assert_eq!(s.n(), 2);
        assert_eq!(s.block(0), d.block(1));
        let p = d.permute_units(&[2, 1]);
        assert_eq!(p.get(0, VariableId::a(1)), d.get(0, VariableId::a(2)));
    }
}

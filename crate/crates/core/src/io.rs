//! File formats: dense CSV matrices and the JSON graph document.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! `f64` reads back bit-exactly.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CovMatchError, Result};
use crate::graph::{GraphKind, Gso};

/// Write a dense matrix as headerless, row-major CSV.
pub fn write_matrix_csv<W: Write>(out: W, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let mut row = Vec::with_capacity(m.ncols());
    for i in 0..m.nrows() {
        row.clear();
        row.extend((0..m.ncols()).map(|j| format_f64(m[(i, j)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        match ncols {
            None => ncols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(CovMatchError::Input(format!(
                    "ragged CSV: row {nrows} has {} fields, expected {c}",
                    rec.len()
                )))
            }
            _ => {}
        }
        for f in rec.iter() {
            data.push(parse_f64(f)?);
        }
        nrows += 1;
    }
    let ncols = ncols.unwrap_or(0);
    Ok(DMatrix::from_row_slice(nrows, ncols, &data))
}

pub fn save_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_matrix_csv(File::create(path)?, m)
}

pub fn load_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix_csv(File::open(path)?)
}

fn format_f64(x: f64) -> String {
    // `{:?}` keeps a trailing ".0" and prints the shortest round-trip digits.
    format!("{x:?}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| CovMatchError::Input(format!("not a number: {s:?}")))
}

/// JSON document for a graph: `{n, kind, triplets: [[i, j, w], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub n: usize,
    pub kind: GraphKind,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl From<&Gso> for GraphDoc {
    fn from(g: &Gso) -> Self {
        GraphDoc { n: g.n(), kind: g.kind(), triplets: g.triplets() }
    }
}

impl GraphDoc {
    /// Rebuild the dense matrix. Diagonal triplets are kept, which lets
    /// unpruned estimates round-trip as well.
    pub fn to_gso(&self) -> Result<Gso> {
        let mut w = DMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.triplets {
            if i >= self.n || j >= self.n {
                return Err(CovMatchError::Input(format!(
                    "triplet ({i}, {j}) out of range for n = {}",
                    self.n
                )));
            }
            w[(i, j)] = v;
        }
        Ok(Gso::estimate(self.kind, w))
    }
}

pub fn graph_to_json(g: &Gso) -> Result<String> {
    Ok(serde_json::to_string(&GraphDoc::from(g))?)
}

pub fn graph_from_json(s: &str) -> Result<Gso> {
    serde_json::from_str::<GraphDoc>(s)?.to_gso()
}

/// Load a graph from `.json` (graph document) or anything else as dense CSV.
pub fn load_graph(path: &Path, kind: GraphKind) -> Result<Gso> {
    if path.extension().is_some_and(|e| e == "json") {
        graph_from_json(&std::fs::read_to_string(path)?)
    } else {
        let w = load_matrix_csv(path)?;
        if !w.is_square() {
            return Err(CovMatchError::Input(format!(
                "{} is not a square matrix",
                path.display()
            )));
        }
        Ok(Gso::estimate(kind, w))
    }
}

pub fn save_graph(path: &Path, g: &Gso) -> Result<()> {
    if path.extension().is_some_and(|e| e == "json") {
        std::fs::write(path, graph_to_json(g)?)?;
        Ok(())
    } else {
        save_matrix_csv(path, g.weights())
    }
}

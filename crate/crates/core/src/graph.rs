//! Ground-truth graph shift operators and the seeded generators used by the
//! experiment recipes.
//!
//! Entry `(i, j)` of a [`Gso`] is the weight of the edge `j -> i`. All
//! generators are pure functions of their parameters and seed.

use std::collections::{HashMap, VecDeque};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CovMatchError, Result};
use crate::linalg;
use crate::rng;

/// Largest accepted condition number of `I − S` for generated graphs.
pub const MAX_CONDITION: f64 = 1e8;

/// Default number of redraws before generation gives up.
pub const DEFAULT_MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Undirected,
    Directed,
}

/// Weighted adjacency matrix of a graph without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Gso {
    kind: GraphKind,
    weights: DMatrix<f64>,
}

impl Gso {
    /// Wrap a square matrix. The diagonal must be exactly zero and undirected
    /// graphs must be exactly symmetric.
    pub fn new(kind: GraphKind, weights: DMatrix<f64>) -> Result<Self> {
        if !weights.is_square() {
            return Err(CovMatchError::Input("adjacency matrix must be square".into()));
        }
        if !linalg::is_finite(&weights) {
            return Err(CovMatchError::Input("adjacency matrix has non-finite entries".into()));
        }
        if weights.diagonal().iter().any(|&d| d != 0.0) {
            return Err(CovMatchError::Input("adjacency matrix must be hollow".into()));
        }
        if kind == GraphKind::Undirected && weights != weights.transpose() {
            return Err(CovMatchError::Input(
                "undirected adjacency matrix must be symmetric".into(),
            ));
        }
        Ok(Gso { kind, weights })
    }

    /// Wrap an estimate. No hollowness or symmetry is enforced so that the
    /// diagonal of a reconstruction stays available as a diagnostic.
    pub fn estimate(kind: GraphKind, weights: DMatrix<f64>) -> Self {
        Gso { kind, weights }
    }

    pub fn zeros(kind: GraphKind, n: usize) -> Self {
        Gso { kind, weights: DMatrix::zeros(n, n) }
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn into_weights(self) -> DMatrix<f64> {
        self.weights
    }

    /// Number of nonzero off-diagonal entries (each undirected edge counts twice).
    pub fn nnz(&self) -> usize {
        let n = self.n();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.weights[(i, j)] != 0.0)
            .count()
    }

    /// Number of edges: unordered pairs for undirected graphs, arcs otherwise.
    pub fn edge_count(&self) -> usize {
        match self.kind {
            GraphKind::Undirected => self.nnz() / 2,
            GraphKind::Directed => self.nnz(),
        }
    }

    pub fn is_hollow(&self) -> bool {
        self.weights.diagonal().iter().all(|&d| d == 0.0)
    }

    pub fn is_acyclic(&self) -> bool {
        is_acyclic(&self.weights)
    }

    /// Nonzero entries as `(i, j, w)`, row-major.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = self.weights[(i, j)];
                if w != 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }
}

/// Interval of edge-weight magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRange {
    pub lo_abs: f64,
    pub hi_abs: f64,
    /// Draw from `[lo, hi]` only instead of `[-hi, -lo] ∪ [lo, hi]`.
    #[serde(default)]
    pub nonnegative: bool,
}

impl WeightRange {
    pub fn two_sided(lo_abs: f64, hi_abs: f64) -> Result<Self> {
        let w = WeightRange { lo_abs, hi_abs, nonnegative: false };
        w.validate()?;
        Ok(w)
    }

    pub fn nonnegative(lo_abs: f64, hi_abs: f64) -> Result<Self> {
        let w = WeightRange { lo_abs, hi_abs, nonnegative: true };
        w.validate()?;
        Ok(w)
    }

    /// `[-1, -0.1] ∪ [0.1, 1]`, used for undirected and cyclic graphs.
    pub fn unit() -> Self {
        WeightRange { lo_abs: 0.1, hi_abs: 1.0, nonnegative: false }
    }

    /// `[-2, -0.5] ∪ [0.5, 2]`, used for DAGs.
    pub fn dag_default() -> Self {
        WeightRange { lo_abs: 0.5, hi_abs: 2.0, nonnegative: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo_abs > 0.0 && self.lo_abs <= self.hi_abs && self.hi_abs.is_finite()) {
            return Err(CovMatchError::Parameter(format!(
                "weight range needs 0 < lo <= hi, got [{}, {}]",
                self.lo_abs, self.hi_abs
            )));
        }
        Ok(())
    }

    pub fn contains(&self, w: f64) -> bool {
        let a = w.abs();
        a >= self.lo_abs && a <= self.hi_abs && (!self.nonnegative || w > 0.0)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mag = if self.lo_abs == self.hi_abs {
            self.lo_abs
        } else {
            rng.random_range(self.lo_abs..=self.hi_abs)
        };
        if self.nonnegative || rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    }
}

/// Draw `m` distinct indices from `0..len` by a partial Fisher–Yates shuffle
/// over a virtual index array (only displaced slots are stored).
fn sample_indices<R: Rng + ?Sized>(rng: &mut R, len: usize, m: usize) -> Vec<usize> {
    let mut displaced: HashMap<usize, usize> = HashMap::with_capacity(2 * m);
    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        let j = rng.random_range(k..len);
        let at_j = *displaced.get(&j).unwrap_or(&j);
        let at_k = *displaced.get(&k).unwrap_or(&k);
        displaced.insert(j, at_k);
        out.push(at_j);
    }
    out
}

/// Upper-triangular pair `(i, j)`, `i < j`, for a linear index.
fn upper_pair(n: usize, mut idx: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - 1 - i;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
    }
    unreachable!("index out of range")
}

/// Off-diagonal position for a linear index over the `n(n-1)` slots.
fn offdiag_pair(n: usize, idx: usize) -> (usize, usize) {
    let i = idx / (n - 1);
    let r = idx % (n - 1);
    let j = if r >= i { r + 1 } else { r };
    (i, j)
}

fn well_conditioned(w: &DMatrix<f64>) -> bool {
    let n = w.nrows();
    linalg::condition_number(&(DMatrix::<f64>::identity(n, n) - w)) <= MAX_CONDITION
}

/// Undirected graph with exactly `m` edges placed uniformly at random.
pub fn gen_undirected(n: usize, m: usize, w: WeightRange, seed: u64) -> Result<Gso> {
    w.validate()?;
    let pairs = n * n.saturating_sub(1) / 2;
    if m > pairs {
        return Err(CovMatchError::Parameter(format!(
            "edge count {m} exceeds n(n-1)/2 = {pairs}"
        )));
    }
    for attempt in 0..DEFAULT_MAX_RETRIES {
        let mut r = rng::stream(seed, &[0x756E_6469, attempt as u64]);
        let mut s = DMatrix::zeros(n, n);
        for idx in sample_indices(&mut r, pairs, m) {
            let (i, j) = upper_pair(n, idx);
            let v = w.draw(&mut r);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
        if well_conditioned(&s) {
            return Gso::new(GraphKind::Undirected, s);
        }
    }
    Err(CovMatchError::Generation {
        retries: DEFAULT_MAX_RETRIES,
        reason: "every draw had an ill-conditioned I - S".into(),
    })
}

/// DAG from an Erdős–Rényi draw: keep the lower triangle, then relabel the
/// vertices by a random permutation.
pub fn gen_dag(n: usize, p: f64, w: WeightRange, seed: u64) -> Result<Gso> {
    w.validate()?;
    if !(0.0..=1.0).contains(&p) {
        return Err(CovMatchError::Parameter(format!("edge probability {p} not in [0, 1]")));
    }
    for attempt in 0..DEFAULT_MAX_RETRIES {
        let mut r = rng::stream(seed, &[0x6461_67, attempt as u64]);
        let mut lower = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                if r.random_bool(p) {
                    lower[(i, j)] = w.draw(&mut r);
                }
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for k in (1..n).rev() {
            let j = r.random_range(0..=k);
            perm.swap(k, j);
        }
        let s = DMatrix::from_fn(n, n, |i, j| lower[(perm[i], perm[j])]);
        if well_conditioned(&s) {
            return Gso::new(GraphKind::Directed, s);
        }
    }
    Err(CovMatchError::Generation {
        retries: DEFAULT_MAX_RETRIES,
        reason: "every draw had an ill-conditioned I - S".into(),
    })
}

/// Directed graph with exactly `m` arcs that contains at least one cycle.
/// Acyclic or ill-conditioned draws are discarded and redrawn.
pub fn gen_cyclic_directed(
    n: usize,
    m: usize,
    w: WeightRange,
    seed: u64,
    max_retries: usize,
) -> Result<Gso> {
    w.validate()?;
    let slots = n * n.saturating_sub(1);
    if m > slots {
        return Err(CovMatchError::Parameter(format!(
            "edge count {m} exceeds n(n-1) = {slots}"
        )));
    }
    for attempt in 0..max_retries {
        let mut r = rng::stream(seed, &[0x6379_63, attempt as u64]);
        let mut s = DMatrix::zeros(n, n);
        for idx in sample_indices(&mut r, slots, m) {
            let (i, j) = offdiag_pair(n, idx);
            s[(i, j)] = w.draw(&mut r);
        }
        if !is_acyclic(&s) && well_conditioned(&s) {
            return Gso::new(GraphKind::Directed, s);
        }
    }
    Err(CovMatchError::Generation {
        retries: max_retries,
        reason: "no cyclic, well-conditioned draw".into(),
    })
}

/// True iff the directed graph on the nonzero entries has no cycle.
/// A nonzero diagonal entry counts as a self-loop.
pub fn is_acyclic(s: &DMatrix<f64>) -> bool {
    let n = s.nrows();
    // Edge j -> i for s[(i, j)] != 0; indegree of i is its row count.
    let mut indeg = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if s[(i, j)] != 0.0 {
                indeg[i] += 1;
            }
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(j) = queue.pop_front() {
        seen += 1;
        for i in 0..n {
            if s[(i, j)] != 0.0 {
                indeg[i] -= 1;
                if indeg[i] == 0 {
                    queue.push_back(i);
                }
            }
        }
    }
    seen == n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undirected_empty_graph() {
        let g = gen_undirected(2, 0, WeightRange::unit(), 1).unwrap();
        assert_eq!(g.weights(), &DMatrix::zeros(2, 2));
    }

    #[test]
    fn undirected_exact_edge_count_and_weights() {
        let g = gen_undirected(20, 40, WeightRange::unit(), 3).unwrap();
        assert_eq!(g.edge_count(), 40);
        assert!(g.is_hollow());
        assert_eq!(g.weights(), &g.weights().transpose());
        for (_, _, w) in g.triplets() {
            assert!(WeightRange::unit().contains(w));
        }
    }

    #[test]
    fn undirected_rejects_too_many_edges() {
        assert!(matches!(
            gen_undirected(4, 7, WeightRange::unit(), 0),
            Err(CovMatchError::Parameter(_))
        ));
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_undirected(12, 20, WeightRange::unit(), 99).unwrap();
        let b = gen_undirected(12, 20, WeightRange::unit(), 99).unwrap();
        assert_eq!(a, b);
        let c = gen_dag(12, 0.2, WeightRange::dag_default(), 5).unwrap();
        let d = gen_dag(12, 0.2, WeightRange::dag_default(), 5).unwrap();
        assert_eq!(c, d);
        let e = gen_cyclic_directed(12, 24, WeightRange::unit(), 5, 100).unwrap();
        let f = gen_cyclic_directed(12, 24, WeightRange::unit(), 5, 100).unwrap();
        assert_eq!(e, f);
    }

    #[test]
    fn dag_zero_probability() {
        let g = gen_dag(3, 0.0, WeightRange::dag_default(), 1).unwrap();
        assert_eq!(g.weights(), &DMatrix::zeros(3, 3));
        assert!(g.is_acyclic());
    }

    #[test]
    fn dag_paper_recipe() {
        let mut total = 0;
        for seed in 0..50 {
            let g = gen_dag(20, 0.1, WeightRange::dag_default(), seed).unwrap();
            assert!(g.is_acyclic());
            assert!(g.is_hollow());
            for (_, _, w) in g.triplets() {
                assert!(WeightRange::dag_default().contains(w));
            }
            total += g.edge_count();
        }
        // 190 pairs at p = 0.1 gives 19 expected edges.
        let mean = total as f64 / 50.0;
        assert!((mean - 19.0).abs() < 3.0, "mean edges {mean}");
    }

    #[test]
    fn dag_bad_probability() {
        assert!(gen_dag(3, 1.5, WeightRange::unit(), 0).is_err());
    }

    #[test]
    fn cyclic_two_node_forced() {
        let g = gen_cyclic_directed(2, 2, WeightRange::unit(), 11, 100).unwrap();
        let w = g.weights();
        assert!(w[(0, 1)] != 0.0 && w[(1, 0)] != 0.0);
        assert!(!g.is_acyclic());
    }

    #[test]
    fn cyclic_paper_recipe() {
        let g = gen_cyclic_directed(20, 40, WeightRange::unit(), 2, 100).unwrap();
        assert_eq!(g.edge_count(), 40);
        assert!(!g.is_acyclic());
        assert!(g.triplets().iter().all(|t| WeightRange::unit().contains(t.2)));
    }

    #[test]
    fn cyclic_retries_exhausted() {
        // One arc can never close a cycle.
        assert!(matches!(
            gen_cyclic_directed(3, 1, WeightRange::unit(), 0, 5),
            Err(CovMatchError::Generation { retries: 5, .. })
        ));
    }

    #[test]
    fn acyclicity_checks() {
        assert!(is_acyclic(&DMatrix::zeros(4, 4)));
        let lower = DMatrix::from_fn(4, 4, |i, j| if i > j { 1.0 } else { 0.0 });
        assert!(is_acyclic(&lower));
        let mut two = DMatrix::zeros(3, 3);
        two[(0, 1)] = 0.3;
        two[(1, 0)] = -0.2;
        assert!(!is_acyclic(&two));
    }

    #[test]
    fn index_maps_cover_all_slots() {
        let n = 5;
        let mut seen = std::collections::HashSet::new();
        for k in 0..n * (n - 1) / 2 {
            let (i, j) = upper_pair(n, k);
            assert!(i < j && j < n);
            assert!(seen.insert((i, j)));
        }
        seen.clear();
        for k in 0..n * (n - 1) {
            let (i, j) = offdiag_pair(n, k);
            assert!(i != j && i < n && j < n);
            assert!(seen.insert((i, j)));
        }
    }

    #[test]
    fn gso_constructor_rejects_bad_input() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 0)] = 1.0;
        assert!(Gso::new(GraphKind::Directed, m).is_err());
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = 1.0;
        assert!(Gso::new(GraphKind::Undirected, a.clone()).is_err());
        assert!(Gso::new(GraphKind::Directed, a).is_ok());
    }
}

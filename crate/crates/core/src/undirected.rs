//! Undirected identification: the sign vector `q` over the eigenbasis of the
//! covariance, chosen by hollowness plus sparsity of
//! `Ŝ(q) = I − A diag(q ∘ d) Aᵀ`.
//!
//! White noise uses `A = U_x`, `d = λ_x^{-1/2}`. With colored noise `Σ_e`,
//! `R = Σ_e^{1/2}` and `R C R = Q Λ Qᵀ` give `A = R Q`, `d = Λ^{-1/2}`, which
//! is the same reconstruction as `I − Σ_e U_xe diag(λ_xe^{-1/2} q) U_xe⁻¹`
//! with `U_xe = R⁻¹ Q`. Both therefore share the `W`/`M` form.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CovMatchError, Result};
use crate::graph::{GraphKind, Gso, MAX_CONDITION};
use crate::linalg;
use crate::sem::CovSpec;
use crate::spectral::{evd_matrix, evd_sym, EigenPair};

/// Largest dimension accepted by exhaustive enumeration.
pub const MAX_EXACT_N: usize = 24;

/// Eigenvalues closer than this (relative) are reported as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Tolerance of the opposite-eigenvalue test.
pub const OPPOSITE_TOL: f64 = 1e-9;

/// Residual under which a sign vector solves the hollowness system.
pub const SOLUTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignVector(Vec<i8>);

impl SignVector {
    pub fn new(q: Vec<i8>) -> Result<Self> {
        if q.iter().any(|&x| x != 1 && x != -1) {
            return Err(CovMatchError::Parameter("sign vector entries must be ±1".into()));
        }
        Ok(SignVector(q))
    }

    pub fn ones(n: usize) -> Self {
        SignVector(vec![1; n])
    }

    /// Bit `n − 1 − i` of `mask` set means `q_i = +1`, so numeric order on
    /// masks is lexicographic order on `q` with `−1 < +1`.
    pub fn from_mask(n: usize, mask: u64) -> Self {
        SignVector((0..n).map(|i| if mask >> (n - 1 - i) & 1 == 1 { 1 } else { -1 }).collect())
    }

    pub fn mask(&self) -> u64 {
        let n = self.0.len();
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |m, (i, &x)| if x > 0 { m | 1 << (n - 1 - i) } else { m })
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_iterator(self.0.len(), self.0.iter().map(|&x| x as f64))
    }

    pub fn flipped(&self, i: usize) -> Self {
        let mut q = self.0.clone();
        q[i] = -q[i];
        SignVector(q)
    }

    /// Number of positions where the two vectors differ.
    pub fn hamming(&self, other: &SignVector) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

#[derive(Debug, Clone)]
pub struct UndirectedProblem {
    /// Hollowness matrix `(A ∘ A) diag(d)`.
    pub w: DMatrix<f64>,
    /// Sparsity matrix, column `k` equal to `d_k vec(a_k a_kᵀ)`.
    pub m: DMatrix<f64>,
    pub alpha: f64,
    pub eig: EigenPair,
    /// Reconstruction basis `A`.
    pub a: DMatrix<f64>,
    pub d: DVector<f64>,
    pub sigma_e: Option<DMatrix<f64>>,
    /// Drop the hollowness term and keep only the ℓ₁ term.
    pub l1_only: bool,
    pub degenerate: bool,
}

pub fn build_problem(c: &CovSpec, alpha: f64) -> Result<UndirectedProblem> {
    check_alpha(alpha)?;
    let eig = evd_sym(c)?;
    let d = eig.inv_sqrt()?;
    let a = eig.u.clone();
    Ok(assemble(eig, a, d, alpha, None))
}

/// As [`build_problem`], but eigenvalues below `floor · λ_max` are raised to
/// that value first.
pub fn build_problem_floored(c: &CovSpec, alpha: f64, floor: f64) -> Result<UndirectedProblem> {
    check_alpha(alpha)?;
    if !(floor > 0.0 && floor < 1.0) {
        return Err(CovMatchError::Parameter(format!("eigenvalue floor must lie in (0, 1), got {floor}")));
    }
    let mut eig = evd_sym(c)?;
    let lmax = eig.lambda.max();
    if !(lmax > 0.0) {
        return Err(CovMatchError::RankDeficient { value: lmax, floor: 0.0 });
    }
    eig.lambda.apply(|l| *l = l.max(floor * lmax));
    let d = eig.inv_sqrt()?;
    let a = eig.u.clone();
    Ok(assemble(eig, a, d, alpha, None))
}

pub fn build_problem_colored(c: &CovSpec, sigma_e: &DMatrix<f64>, alpha: f64) -> Result<UndirectedProblem> {
    check_alpha(alpha)?;
    if sigma_e.shape() != (c.n(), c.n()) {
        return Err(CovMatchError::Input("noise covariance has the wrong shape".into()));
    }
    let r = linalg::spd_sqrt(sigma_e)?;
    let eig = evd_matrix(&linalg::symmetrize(&(&r * c.matrix() * &r)))?;
    let d = eig.inv_sqrt().map_err(|e| {
        CovMatchError::ModelMismatch(format!("C_x Σ_e lacks a positive spectrum: {e}"))
    })?;
    let a = &r * &eig.u;
    Ok(assemble(eig, a, d, alpha, Some(sigma_e.clone())))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(CovMatchError::Parameter(format!("alpha must be finite and nonnegative, got {alpha}")));
    }
    Ok(())
}

fn assemble(
    eig: EigenPair,
    a: DMatrix<f64>,
    d: DVector<f64>,
    alpha: f64,
    sigma_e: Option<DMatrix<f64>>,
) -> UndirectedProblem {
    let n = d.len();
    let w = DMatrix::from_fn(n, n, |i, k| a[(i, k)] * a[(i, k)] * d[k]);
    let mut m = DMatrix::zeros(n * n, n);
    for k in 0..n {
        let ak = a.column(k);
        for j in 0..n {
            for i in 0..n {
                m[(j * n + i, k)] = d[k] * ak[i] * ak[j];
            }
        }
    }
    let degenerate = eig.has_degenerate(DEGENERACY_TOL);
    UndirectedProblem { w, m, alpha, eig, a, d, sigma_e, l1_only: false, degenerate }
}

impl UndirectedProblem {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn hollowness(&self, q: &SignVector) -> f64 {
        let r = &self.w * q.to_dvector() - DVector::from_element(self.n(), 1.0);
        r.norm_squared()
    }

    pub fn sparsity(&self, q: &SignVector) -> f64 {
        let n = self.n();
        let mut s = &self.m * q.to_dvector();
        for i in 0..n {
            s[i * n + i] -= 1.0;
        }
        s.iter().map(|x| x.abs()).sum()
    }

    /// `Ŝ(q)`; symmetrized, diagonal left as is.
    pub fn reconstruct(&self, q: &SignVector) -> Gso {
        let n = self.n();
        let scaled = DVector::from_iterator(n, q.as_slice().iter().zip(self.d.iter()).map(|(&s, &d)| s as f64 * d));
        let h_inv = &self.a * DMatrix::from_diagonal(&scaled) * self.a.transpose();
        let s = DMatrix::<f64>::identity(n, n) - h_inv;
        Gso::estimate(GraphKind::Undirected, linalg::symmetrize(&s))
    }

    /// The sign vector that reproduces `s` in this problem's basis:
    /// `q_k = sign(a'_kᵀ R⁻¹ (I − S) R⁻¹ a'_k)` with `a'_k` the unscaled
    /// eigenvectors.
    pub fn true_signs(&self, s: &Gso) -> Result<SignVector> {
        let n = self.n();
        if s.n() != n {
            return Err(CovMatchError::Input("graph dimension mismatch".into()));
        }
        let mut t = DMatrix::<f64>::identity(n, n) - s.weights();
        if let Some(se) = &self.sigma_e {
            let r_inv = linalg::spd_sqrt(se)?
                .try_inverse()
                .ok_or(CovMatchError::Singular { cond: f64::INFINITY })?;
            t = &r_inv * t * &r_inv;
        }
        let q = (0..n)
            .map(|k| {
                let u = self.eig.u.column(k);
                if (u.transpose() * &t * u)[(0, 0)] >= 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        SignVector::new(q)
    }
}

/// Exact composite value `‖Wq − 1‖² + α‖Mq − vec I‖₁`.
pub fn objective(p: &UndirectedProblem, q: &SignVector) -> f64 {
    let quad = if p.l1_only { 0.0 } else { p.hollowness(q) };
    let l1 = if p.alpha > 0.0 { p.alpha * p.sparsity(q) } else { 0.0 };
    quad + l1
}

/// Standalone reconstruction from an eigendecomposition of the covariance.
pub fn reconstruct_undirected(eig: &EigenPair, q: &SignVector) -> Result<Gso> {
    if q.len() != eig.n() {
        return Err(CovMatchError::Input("sign vector length mismatch".into()));
    }
    let d = eig.inv_sqrt()?;
    let scaled = DVector::from_iterator(d.len(), q.as_slice().iter().zip(d.iter()).map(|(&s, &d)| s as f64 * d));
    let n = d.len();
    let s = DMatrix::<f64>::identity(n, n) - &eig.u * DMatrix::from_diagonal(&scaled) * eig.u.transpose();
    Ok(Gso::estimate(GraphKind::Undirected, linalg::symmetrize(&s)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UndirectedSolution {
    pub q: SignVector,
    pub objective: f64,
    /// Sign vectors visited (exhaustive) or tree nodes expanded (branch and bound).
    pub work: u64,
}

fn tie_tol(v: f64) -> f64 {
    1e-12 * v.abs().max(1.0)
}

/// Incrementally maintained residuals `r = Wq − 1`, `s = Mq − vec I`.
struct Residuals<'a> {
    p: &'a UndirectedProblem,
    quad: bool,
    l1: bool,
    r: Vec<f64>,
    s: Vec<f64>,
}

impl<'a> Residuals<'a> {
    fn new(p: &'a UndirectedProblem, q: &[f64]) -> Self {
        let n = p.n();
        let quad = !p.l1_only;
        let l1 = p.alpha > 0.0;
        let mut r = vec![-1.0; n];
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            s[i * n + i] = -1.0;
        }
        for (k, &qk) in q.iter().enumerate() {
            if qk == 0.0 {
                continue;
            }
            if quad {
                for (ri, wi) in r.iter_mut().zip(p.w.column(k).iter()) {
                    *ri += qk * wi;
                }
            }
            if l1 {
                for (si, mi) in s.iter_mut().zip(p.m.column(k).iter()) {
                    *si += qk * mi;
                }
            }
        }
        Residuals { p, quad, l1, r, s }
    }

    /// Add `coef` times column `k`.
    fn add(&mut self, k: usize, coef: f64) {
        if self.quad {
            for (ri, wi) in self.r.iter_mut().zip(self.p.w.column(k).iter()) {
                *ri += coef * wi;
            }
        }
        if self.l1 {
            for (si, mi) in self.s.iter_mut().zip(self.p.m.column(k).iter()) {
                *si += coef * mi;
            }
        }
    }

    fn value(&self) -> f64 {
        let mut v = 0.0;
        if self.quad {
            v += self.r.iter().map(|x| x * x).sum::<f64>();
        }
        if self.l1 {
            v += self.p.alpha * self.s.iter().map(|x| x.abs()).sum::<f64>();
        }
        v
    }
}

/// Best `(value, mask)` pairs seen in a scan, kept within a tolerance of the
/// leader so ties can be settled by exact re-evaluation.
struct NearBest {
    best: f64,
    items: Vec<(f64, u64)>,
}

const NEAR_BEST_CAP: usize = 256;

impl NearBest {
    fn new() -> Self {
        NearBest { best: f64::INFINITY, items: Vec::new() }
    }

    fn slack(&self) -> f64 {
        1e-9 * self.best.abs().max(1.0)
    }

    fn offer(&mut self, v: f64, mask: u64) {
        if v > self.best + self.slack() {
            return;
        }
        if v < self.best {
            self.best = v;
            let cut = self.best + self.slack();
            self.items.retain(|&(x, _)| x <= cut);
        }
        self.items.push((v, mask));
        if self.items.len() > NEAR_BEST_CAP {
            self.items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            self.items.truncate(NEAR_BEST_CAP / 2);
        }
    }
}

/// Pick the exact minimizer among masks, smaller mask on ties.
fn settle(p: &UndirectedProblem, mut masks: Vec<u64>) -> (SignVector, f64) {
    let n = p.n();
    masks.sort_unstable();
    masks.dedup();
    let evaluated: Vec<(u64, f64)> = masks
        .into_iter()
        .map(|m| (m, objective(p, &SignVector::from_mask(n, m))))
        .collect();
    let best = evaluated.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let (mask, value) = *evaluated
        .iter()
        .find(|e| e.1 <= best + tie_tol(best))
        .expect("at least one candidate");
    (SignVector::from_mask(n, mask), value)
}

/// Global optimum by exhaustive enumeration over all `2^N` sign vectors.
pub fn solve_exact(p: &UndirectedProblem) -> Result<UndirectedSolution> {
    let n = p.n();
    if n == 0 {
        return Err(CovMatchError::Parameter("empty problem".into()));
    }
    if n > MAX_EXACT_N {
        return Err(CovMatchError::Budget { n, max: MAX_EXACT_N });
    }
    let hi = if n > 12 { 6 } else { 0 };
    let lo = n - hi;
    let results: Vec<NearBest> = (0u64..1 << hi)
        .into_par_iter()
        .map(|chunk| {
            let mut mask = chunk << lo;
            let q0 = SignVector::from_mask(n, mask).to_dvector();
            let mut q: Vec<f64> = q0.iter().cloned().collect();
            let mut res = Residuals::new(p, &q);
            let mut near = NearBest::new();
            near.offer(res.value(), mask);
            for j in 1u64..1 << lo {
                let bit = j.trailing_zeros() as usize;
                let i = n - 1 - bit;
                q[i] = -q[i];
                mask ^= 1 << bit;
                res.add(i, 2.0 * q[i]);
                near.offer(res.value(), mask);
            }
            near
        })
        .collect();
    let global = results.iter().map(|r| r.best).fold(f64::INFINITY, f64::min);
    let cut = global + 1e-9 * global.abs().max(1.0);
    let masks: Vec<u64> = results
        .iter()
        .flat_map(|r| r.items.iter().filter(|x| x.0 <= cut).map(|x| x.1))
        .collect();
    let (q, objective) = settle(p, masks);
    Ok(UndirectedSolution { q, objective, work: 1 << n })
}

const BOX_SWEEPS: usize = 20;

struct Bnb<'a> {
    p: &'a UndirectedProblem,
    order: Vec<usize>,
    col_sq: Vec<f64>,
    /// `suffix[d][row] = Σ_{k ≥ d} |M[row, order[k]]|`.
    suffix: Vec<Vec<f64>>,
    q: Vec<f64>,
    res: Residuals<'a>,
    best: f64,
    best_mask: u64,
    nodes: u64,
}

impl<'a> Bnb<'a> {
    /// Lower bound over completions of the first `depth` fixed variables, and
    /// the box-relaxed values of the free ones.
    fn lower_bound(&self, depth: usize) -> (f64, Vec<f64>) {
        let n = self.p.n();
        let free = &self.order[depth..];
        let mut x = vec![0.0; free.len()];
        let mut lb = 0.0;
        if self.res.quad {
            let mut r = self.res.r.clone();
            for _ in 0..BOX_SWEEPS {
                for (xi, &k) in x.iter_mut().zip(free) {
                    let nrm = self.col_sq[k];
                    if nrm == 0.0 {
                        continue;
                    }
                    let col = self.p.w.column(k);
                    let g: f64 = col.iter().zip(&r).map(|(a, b)| a * b).sum();
                    let new = (*xi - g / nrm).clamp(-1.0, 1.0);
                    let step = new - *xi;
                    if step != 0.0 {
                        for (ri, wi) in r.iter_mut().zip(col.iter()) {
                            *ri += step * wi;
                        }
                        *xi = new;
                    }
                }
            }
            let f: f64 = r.iter().map(|v| v * v).sum();
            // Convexity: f* ≥ f(x̄) + min over the box of ∇f(x̄)ᵀ(y − x̄).
            let mut gap = 0.0;
            for (xi, &k) in x.iter().zip(free) {
                let g: f64 = 2.0 * self.p.w.column(k).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
                gap += g.abs() + g * xi;
            }
            lb += (f - gap).max(0.0);
        }
        if self.res.l1 {
            let suf = &self.suffix[depth];
            let l1: f64 = (0..n * n).map(|row| (self.res.s[row].abs() - suf[row]).max(0.0)).sum();
            lb += self.p.alpha * l1;
        }
        (lb, x)
    }

    fn mask(&self) -> u64 {
        let n = self.p.n();
        self.q
            .iter()
            .enumerate()
            .fold(0u64, |m, (i, &x)| if x > 0.0 { m | 1 << (n - 1 - i) } else { m })
    }

    fn leaf(&mut self) {
        let approx = self.res.value();
        if approx > self.best + 1e-9 * self.best.abs().max(1.0) {
            return;
        }
        let n = self.p.n();
        let mask = self.mask();
        let v = objective(self.p, &SignVector::from_mask(n, mask));
        let tol = tie_tol(self.best);
        if v < self.best - tol || (v <= self.best + tol && mask < self.best_mask) {
            self.best = v;
            self.best_mask = mask;
        }
    }

    fn descend(&mut self, depth: usize) {
        self.nodes += 1;
        if depth == self.order.len() {
            self.leaf();
            return;
        }
        let (lb, x) = self.lower_bound(depth);
        if lb > self.best + tie_tol(self.best) {
            return;
        }
        let k = self.order[depth];
        let first = if x[0] < 0.0 { -1.0 } else { 1.0 };
        for s in [first, -first] {
            self.q[k] = s;
            self.res.add(k, s);
            self.descend(depth + 1);
            self.res.add(k, -s);
            self.q[k] = 0.0;
        }
    }
}

fn local_search(p: &UndirectedProblem, mut q: SignVector) -> (SignVector, f64) {
    let mut v = objective(p, &q);
    loop {
        let mut improved = false;
        for i in 0..q.len() {
            let cand = q.flipped(i);
            let cv = objective(p, &cand);
            if cv < v - tie_tol(v) {
                q = cand;
                v = cv;
                improved = true;
            }
        }
        if !improved {
            return (q, v);
        }
    }
}

/// Global optimum by depth-first branch and bound with a box-relaxation bound
/// on the hollowness term and a per-entry bound on the ℓ₁ term.
pub fn solve_bnb(p: &UndirectedProblem) -> Result<UndirectedSolution> {
    let n = p.n();
    if n == 0 {
        return Err(CovMatchError::Parameter("empty problem".into()));
    }
    if n > 63 {
        return Err(CovMatchError::Budget { n, max: 63 });
    }
    let col_sq: Vec<f64> = (0..n).map(|k| p.w.column(k).norm_squared()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| col_sq[b].total_cmp(&col_sq[a]).then(a.cmp(&b)));
    let rows = n * n;
    let mut suffix = vec![vec![0.0; rows]; n + 1];
    for d in (0..n).rev() {
        let k = order[d];
        let col = p.m.column(k);
        for row in 0..rows {
            suffix[d][row] = suffix[d + 1][row] + col[row].abs();
        }
    }
    let q = vec![0.0; n];
    let res = Residuals::new(p, &q);
    let mut bnb = Bnb { p, order, col_sq, suffix, q, res, best: f64::INFINITY, best_mask: u64::MAX, nodes: 0 };

    let (_, x) = bnb.lower_bound(0);
    let mut start = vec![1i8; n];
    for (xi, &k) in x.iter().zip(&bnb.order) {
        start[k] = if *xi < 0.0 { -1 } else { 1 };
    }
    let (q0, v0) = local_search(p, SignVector(start));
    bnb.best = v0;
    bnb.best_mask = q0.mask();

    bnb.descend(0);
    Ok(UndirectedSolution {
        q: SignVector::from_mask(n, bnb.best_mask),
        objective: bnb.best,
        work: bnb.nodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub cond_i: bool,
    pub cond_ii: bool,
    /// Sign vectors solving the hollowness system.
    pub n_solutions: u64,
    /// `min_{i<j} |λ_i + λ_j|` over the eigenvalues of `H`.
    pub min_opposite_gap: f64,
}

impl IdentifiabilityReport {
    pub fn identifiable(&self) -> bool {
        self.cond_i && self.cond_ii
    }
}

/// Check both uniqueness conditions of exact undirected recovery for `s`.
pub fn identifiability_check(s: &Gso) -> Result<IdentifiabilityReport> {
    let n = s.n();
    if n == 0 {
        return Err(CovMatchError::Parameter("empty graph".into()));
    }
    if !s.weights().relative_eq(&s.weights().transpose(), 1e-12, 1e-12) {
        return Err(CovMatchError::Input("graph must be symmetric".into()));
    }
    if n > MAX_EXACT_N {
        return Err(CovMatchError::Budget { n, max: MAX_EXACT_N });
    }
    let h = linalg::symmetrize(&linalg::inverse_i_minus(s.weights(), MAX_CONDITION)?);
    let eig = evd_matrix(&h)?;
    let lam = &eig.lambda;
    let mut gap = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            gap = gap.min((lam[i] + lam[j]).abs());
        }
    }
    let cond_i = !(gap <= OPPOSITE_TOL);

    let k = DMatrix::from_fn(n, n, |i, j| eig.u[(i, j)] * eig.u[(i, j)] / lam[j].abs());
    let hi = if n > 12 { 6 } else { 0 };
    let lo = n - hi;
    let solutions: Vec<u64> = (0u64..1 << hi)
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let mut mask = chunk << lo;
            let q0 = SignVector::from_mask(n, mask);
            let mut q = q0.to_dvector();
            let mut r = &k * &q - DVector::from_element(n, 1.0);
            let mut found = Vec::new();
            let near = |r: &DVector<f64>| r.norm() <= 1e3 * SOLUTION_TOL;
            if near(&r) {
                found.push(mask);
            }
            for j in 1u64..1 << lo {
                let bit = j.trailing_zeros() as usize;
                let i = n - 1 - bit;
                q[i] = -q[i];
                mask ^= 1 << bit;
                r.axpy(2.0 * q[i], &k.column(i), 1.0);
                if near(&r) {
                    found.push(mask);
                }
            }
            found
        })
        .collect();
    // Confirm candidates with a fresh residual.
    let ones = DVector::from_element(n, 1.0);
    let n_solutions = solutions
        .iter()
        .filter(|&&m| (&k * SignVector::from_mask(n, m).to_dvector() - &ones).norm() <= SOLUTION_TOL)
        .count() as u64;
    Ok(IdentifiabilityReport { cond_i, cond_ii: n_solutions == 1, n_solutions, min_opposite_gap: gap })
}

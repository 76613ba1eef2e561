use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::DirectedProblem;
use crate::error::{CovMatchError, Result};
use crate::spectral::{expm_skew, OrthoPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdSchedule {
    pub r_max: usize,
    pub mu_start: f64,
    pub mu_end: f64,
    /// Non-improving iterations before the Huber gradient is replaced by the
    /// sign gradient.
    pub stall_switch: usize,
    /// Non-improving iterations in sign mode before stopping.
    pub plateau_stop: usize,
}

impl GdSchedule {
    pub fn new(r_max: usize, mu_start: f64, mu_end: f64) -> Result<Self> {
        let s = GdSchedule { r_max, mu_start, mu_end, stall_switch: 30, plateau_stop: 35 };
        s.validate()?;
        Ok(s)
    }

    /// Starts drawn fresh or perturbed far from a candidate.
    pub fn fresh() -> Self {
        GdSchedule { r_max: 10_000, mu_start: 2e-2, mu_end: 4e-3, stall_switch: 30, plateau_stop: 35 }
    }

    /// Fine refinement of an existing candidate.
    pub fn candidate() -> Self {
        GdSchedule { r_max: 10_000, mu_start: 1e-3, mu_end: 2e-4, stall_switch: 30, plateau_stop: 35 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_max == 0 {
            return Err(CovMatchError::Parameter("r_max must be at least 1".into()));
        }
        if !(self.mu_end > 0.0 && self.mu_start >= self.mu_end && self.mu_start.is_finite()) {
            return Err(CovMatchError::Parameter(format!(
                "need mu_start >= mu_end > 0, got {} and {}",
                self.mu_start, self.mu_end
            )));
        }
        Ok(())
    }

    /// `μ_r = μ_start (μ_end/μ_start)^{r/(R−1)}`.
    pub fn step(&self, r: usize) -> f64 {
        if self.r_max <= 1 {
            return self.mu_start;
        }
        let t = r as f64 / (self.r_max - 1) as f64;
        self.mu_start * (self.mu_end / self.mu_start).powf(t)
    }
}

#[derive(Debug, Clone)]
pub struct GdOutcome {
    /// Best iterate, with its exact cost.
    pub point: OrthoPoint,
    pub iterations: usize,
    /// Whether the sign gradient was in use when the run ended.
    pub sign_mode: bool,
    /// Stopped because the Riemannian gradient vanished.
    pub stationary: bool,
}

/// Riemannian gradient descent on O(N) with normalized steps along the
/// exponential map, returning the best iterate seen.
pub fn riemann_gd(p: &DirectedProblem, v0: &OrthoPoint, sched: &GdSchedule) -> GdOutcome {
    riemann_gd_observe(p, v0, sched, |_, _, _| {})
}

/// As [`riemann_gd`], calling `observe(r, V_r, J(V_r))` on every iterate.
pub fn riemann_gd_observe<F>(p: &DirectedProblem, v0: &OrthoPoint, sched: &GdSchedule, mut observe: F) -> GdOutcome
where
    F: FnMut(usize, &DMatrix<f64>, f64),
{
    let n = p.n();
    let smooth_available = p.alpha > 0.0;
    let mut sign_mode = !smooth_available;
    let mut v = v0.v.clone();
    let mut s = DMatrix::zeros(n, n);
    let mut tmp = DMatrix::zeros(n, n);
    let mut phi = DMatrix::zeros(n, n);
    let mut gamma = DMatrix::zeros(n, n);
    let mut vt = DMatrix::zeros(n, n);
    let mut x = DMatrix::zeros(n, n);
    let mut g = DMatrix::zeros(n, n);
    let mut work = ExpWork::new(n);

    let mut best_v = v.clone();
    let mut best = f64::INFINITY;
    let mut stall = 0usize;
    let mut stationary = false;
    let mut iterations = 0;

    for r in 0..=sched.r_max {
        p.s_hat_into(&v, &mut s, &mut tmp);
        let j = p.cost_of(&s);
        observe(r, &v, j);
        if j < best {
            best = j;
            best_v.copy_from(&v);
            stall = 0;
        } else {
            stall += 1;
        }
        if r == sched.r_max {
            break;
        }
        if !sign_mode && stall >= sched.stall_switch {
            sign_mode = true;
            stall = 0;
        } else if sign_mode && stall >= sched.plateau_stop {
            break;
        }

        p.phi_into(&s, !sign_mode, &mut phi);
        p.pull_back(&phi, &mut gamma, &mut tmp);
        v.transpose_to(&mut vt);
        x.gemm(1.0, &gamma, &vt, 0.0);
        x.transpose_to(&mut g);
        g.zip_apply(&x, |gt, xv| *gt = xv - *gt);
        let norm = g.norm();
        if norm == 0.0 || !norm.is_finite() {
            stationary = norm == 0.0;
            break;
        }
        g *= -sched.step(r) / norm;
        work.apply(&g, &mut v);
        iterations = r + 1;
    }
    let mut point = OrthoPoint::new(best_v, v0.seed_tag);
    point.cost = Some(best);
    GdOutcome { point, iterations, sign_mode, stationary }
}

/// Buffers for `V ← exp(A) V` with skew `A` of small norm.
struct ExpWork {
    term: DMatrix<f64>,
    next: DMatrix<f64>,
    acc: DMatrix<f64>,
}

impl ExpWork {
    fn new(n: usize) -> Self {
        ExpWork { term: DMatrix::zeros(n, n), next: DMatrix::zeros(n, n), acc: DMatrix::zeros(n, n) }
    }

    fn apply(&mut self, a: &DMatrix<f64>, v: &mut DMatrix<f64>) {
        let norm = a.norm();
        if norm > 0.25 {
            let e = expm_skew(a);
            self.acc.gemm(1.0, &e, v, 0.0);
            v.copy_from(&self.acc);
            return;
        }
        self.term.copy_from(v);
        self.acc.copy_from(v);
        let mut bound = 1.0;
        for k in 1..=30 {
            self.next.gemm(1.0 / k as f64, a, &self.term, 0.0);
            std::mem::swap(&mut self.term, &mut self.next);
            self.acc += &self.term;
            bound *= norm / k as f64;
            if bound < 1e-18 {
                break;
            }
        }
        v.copy_from(&self.acc);
    }
}

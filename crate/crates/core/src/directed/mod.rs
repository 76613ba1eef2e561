//! Directed identification over the orthogonal group.
//!
//! Every orthogonal `V` gives a covariance-feasible estimate
//! `Ŝ = I − P V B`: with white noise `P = I`, `B = diag(λ_x^{-1/2}) U_xᵀ`;
//! with colored noise `P = Σ_e^{1/2}`, `B = L_x⁻¹` where `C_x = L_x L_xᵀ`.

mod basin;
mod gd;

pub use basin::{
    basin_hop, basin_hop_candidates, basin_hop_multi, BasinConfig, BasinReport, Budget, CandidateSet,
};
pub use gd::{riemann_gd, riemann_gd_observe, GdOutcome, GdSchedule};

use nalgebra::DMatrix;

use crate::error::{CovMatchError, Result};
use crate::graph::{GraphKind, Gso};
use crate::linalg;
use crate::sem::CovSpec;
use crate::spectral::{evd_sym, EigenPair, OrthoPoint};

#[derive(Debug, Clone)]
pub struct DirectedProblem {
    pub eig: EigenPair,
    pub alpha: f64,
    pub huber_delta: f64,
    pub sigma_e_sqrt: Option<DMatrix<f64>>,
    pub chol_l: Option<DMatrix<f64>>,
    b: DMatrix<f64>,
    bt: DMatrix<f64>,
}

/// Default smoothing width: `10⁻³ · median(λ_x^{-1/2})`.
pub fn default_huber_delta(eig: &EigenPair) -> Result<f64> {
    let mut d: Vec<f64> = eig.inv_sqrt()?.iter().cloned().collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    Ok(1e-3 * median)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(CovMatchError::Parameter(format!("alpha must be finite and nonnegative, got {alpha}")));
    }
    Ok(())
}

pub fn build_directed(c: &CovSpec, alpha: f64) -> Result<DirectedProblem> {
    check_alpha(alpha)?;
    let eig = evd_sym(c)?;
    let d = eig.inv_sqrt()?;
    let b = DMatrix::from_diagonal(&d) * eig.u.transpose();
    let huber_delta = default_huber_delta(&eig)?;
    let bt = b.transpose();
    Ok(DirectedProblem { eig, alpha, huber_delta, sigma_e_sqrt: None, chol_l: None, b, bt })
}

pub fn build_directed_colored(c: &CovSpec, sigma_e: &DMatrix<f64>, alpha: f64) -> Result<DirectedProblem> {
    check_alpha(alpha)?;
    if sigma_e.shape() != (c.n(), c.n()) {
        return Err(CovMatchError::Input("noise covariance has the wrong shape".into()));
    }
    let eig = evd_sym(c)?;
    let huber_delta = default_huber_delta(&eig)?;
    let r = linalg::spd_sqrt(sigma_e)?;
    let chol = c.matrix().clone().cholesky().ok_or_else(|| CovMatchError::RankDeficient {
        value: eig.lambda.min(),
        floor: 0.0,
    })?;
    let l = chol.l();
    let n = c.n();
    let b = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(CovMatchError::Singular { cond: f64::INFINITY })?;
    let bt = b.transpose();
    Ok(DirectedProblem { eig, alpha, huber_delta, sigma_e_sqrt: Some(r), chol_l: Some(l), b, bt })
}

impl DirectedProblem {
    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    pub fn with_huber_delta(mut self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(CovMatchError::Parameter(format!("huber width must be positive, got {delta}")));
        }
        self.huber_delta = delta;
        Ok(self)
    }

    pub fn is_colored(&self) -> bool {
        self.sigma_e_sqrt.is_some()
    }

    /// `Ŝ = I − P V B`.
    pub fn s_hat(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut s = DMatrix::identity(n, n);
        self.s_hat_into(v, &mut s, &mut DMatrix::zeros(n, n));
        s
    }

    pub(crate) fn s_hat_into(&self, v: &DMatrix<f64>, out: &mut DMatrix<f64>, tmp: &mut DMatrix<f64>) {
        out.fill_with_identity();
        match &self.sigma_e_sqrt {
            None => out.gemm(-1.0, v, &self.b, 1.0),
            Some(p) => {
                tmp.gemm(1.0, v, &self.b, 0.0);
                out.gemm(-1.0, p, tmp, 1.0);
            }
        }
    }

    /// `Γ = −Pᵀ Φ Bᵀ` for a given `Φ = ∂J/∂Ŝ`.
    pub(crate) fn pull_back(&self, phi: &DMatrix<f64>, out: &mut DMatrix<f64>, tmp: &mut DMatrix<f64>) {
        match &self.sigma_e_sqrt {
            None => out.gemm(-1.0, phi, &self.bt, 0.0),
            Some(p) => {
                tmp.gemm_tr(1.0, p, phi, 0.0);
                out.gemm(-1.0, tmp, &self.bt, 0.0);
            }
        }
    }

    /// Exact objective of an estimate.
    pub fn cost_of(&self, s: &DMatrix<f64>) -> f64 {
        penalty(s, self.alpha)
    }

    /// Huber-smoothed objective of an estimate.
    pub fn smooth_cost_of(&self, s: &DMatrix<f64>) -> f64 {
        let diag: f64 = s.diagonal().norm_squared();
        let d = self.huber_delta;
        let l1: f64 = s
            .iter()
            .map(|&x| if x.abs() <= d { x * x / (2.0 * d) } else { x.abs() - d / 2.0 })
            .sum();
        diag + self.alpha * l1
    }

    /// `∂J/∂Ŝ`: `2 Diag(Ŝ) + α ψ(Ŝ)` with `ψ` the sign (0 at 0) or the Huber
    /// derivative `clamp(x/δ, −1, 1)`.
    pub(crate) fn phi_into(&self, s: &DMatrix<f64>, smooth: bool, out: &mut DMatrix<f64>) {
        let a = self.alpha;
        let d = self.huber_delta;
        if a == 0.0 {
            out.fill(0.0);
        } else if smooth {
            out.zip_apply(s, |o, x| *o = a * (x / d).clamp(-1.0, 1.0));
        } else {
            out.zip_apply(s, |o, x| *o = a * linalg::sign0(x));
        }
        for i in 0..s.nrows() {
            out[(i, i)] += 2.0 * s[(i, i)];
        }
    }

    /// `P⁻¹ (I − S) B⁻¹`, the orthogonal factor that reproduces `s`.
    pub fn true_rotation(&self, s: &Gso) -> Result<OrthoPoint> {
        let n = self.n();
        if s.n() != n {
            return Err(CovMatchError::Input("graph dimension mismatch".into()));
        }
        let b_inv = self.b.clone().try_inverse().ok_or(CovMatchError::Singular { cond: f64::INFINITY })?;
        let mut v = (DMatrix::<f64>::identity(n, n) - s.weights()) * b_inv;
        if let Some(p) = &self.sigma_e_sqrt {
            let p_inv = p.clone().try_inverse().ok_or(CovMatchError::Singular { cond: f64::INFINITY })?;
            v = p_inv * v;
        }
        Ok(OrthoPoint::new(v, 0))
    }
}

/// `‖diag S‖² + α ‖S‖₁`.
pub fn penalty(s: &DMatrix<f64>, alpha: f64) -> f64 {
    let l1 = if alpha > 0.0 { alpha * linalg::l1_norm(s) } else { 0.0 };
    linalg::diag_sq_norm(s) + l1
}

pub fn objective_j(p: &DirectedProblem, v: &OrthoPoint, smooth: bool) -> f64 {
    let s = p.s_hat(&v.v);
    if smooth {
        p.smooth_cost_of(&s)
    } else {
        p.cost_of(&s)
    }
}

/// Euclidean gradient of `J` with respect to `V`.
pub fn euclidean_grad(p: &DirectedProblem, v: &OrthoPoint, smooth: bool) -> DMatrix<f64> {
    let n = p.n();
    let s = p.s_hat(&v.v);
    let mut phi = DMatrix::zeros(n, n);
    p.phi_into(&s, smooth, &mut phi);
    let mut g = DMatrix::zeros(n, n);
    p.pull_back(&phi, &mut g, &mut DMatrix::zeros(n, n));
    g
}

/// `Ŝ = I − V diag(λ_x^{-1/2}) U_xᵀ`; the diagonal is returned as is.
pub fn reconstruct_directed(p: &DirectedProblem, v: &OrthoPoint) -> Result<Gso> {
    if p.is_colored() {
        return Err(CovMatchError::Parameter("problem has colored noise".into()));
    }
    p.eig.inv_sqrt()?;
    Ok(Gso::estimate(GraphKind::Directed, p.s_hat(&v.v)))
}

/// `Ŝ = I − Σ_e^{1/2} V L_x⁻¹`.
pub fn reconstruct_directed_colored(p: &DirectedProblem, v: &OrthoPoint) -> Result<Gso> {
    if !p.is_colored() {
        return Err(CovMatchError::Parameter("problem has white noise".into()));
    }
    Ok(Gso::estimate(GraphKind::Directed, p.s_hat(&v.v)))
}

/// Reconstruction for either noise model.
pub fn reconstruct(p: &DirectedProblem, v: &OrthoPoint) -> Gso {
    Gso::estimate(GraphKind::Directed, p.s_hat(&v.v))
}

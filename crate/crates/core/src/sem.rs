//! Linear structural equation model `x = S x + e`: simulation, sample and
//! population covariances.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CovMatchError, Result};
use crate::graph::{Gso, MAX_CONDITION};
use crate::linalg;
use crate::rng;

/// Data-generating process: graph plus exogenous noise covariance.
#[derive(Debug, Clone)]
pub struct SemModel {
    s: Gso,
    sigma_e: DMatrix<f64>,
}

impl SemModel {
    /// Model with white noise, `Σ_e = I`.
    pub fn white(s: Gso) -> Self {
        let n = s.n();
        SemModel { s, sigma_e: DMatrix::identity(n, n) }
    }

    pub fn colored(s: Gso, sigma_e: DMatrix<f64>) -> Result<Self> {
        if sigma_e.shape() != (s.n(), s.n()) {
            return Err(CovMatchError::Parameter("noise covariance has wrong shape".into()));
        }
        if sigma_e != sigma_e.transpose() {
            return Err(CovMatchError::Parameter("noise covariance must be symmetric".into()));
        }
        if sigma_e.clone().cholesky().is_none() {
            return Err(CovMatchError::Parameter(
                "noise covariance must be positive definite".into(),
            ));
        }
        Ok(SemModel { s, sigma_e })
    }

    pub fn gso(&self) -> &Gso {
        &self.s
    }

    pub fn sigma_e(&self) -> &DMatrix<f64> {
        &self.sigma_e
    }

    pub fn n(&self) -> usize {
        self.s.n()
    }
}

/// `N × T` matrix of nodal observations, one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    x: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(CovMatchError::Input("data matrix needs at least one sample".into()));
        }
        Ok(DataMatrix { x })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn t(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "t")]
pub enum CovSource {
    Sample(usize),
    Asymptotic,
    /// Anything supplied from outside (files, rank-correlation surrogates).
    External,
}

/// A symmetric covariance matrix with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovSpec {
    c: DMatrix<f64>,
    source: CovSource,
}

impl CovSpec {
    /// Accepts any square finite matrix and symmetrizes it.
    pub fn new(c: DMatrix<f64>, source: CovSource) -> Result<Self> {
        if !c.is_square() {
            return Err(CovMatchError::Input("covariance must be square".into()));
        }
        if !linalg::is_finite(&c) {
            return Err(CovMatchError::Input("covariance has non-finite entries".into()));
        }
        Ok(CovSpec { c: linalg::symmetrize(&c), source })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn source(&self) -> CovSource {
        self.source
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }
}

/// `H = (I − S)⁻¹`.
pub fn mixing_matrix(model: &SemModel) -> Result<DMatrix<f64>> {
    linalg::inverse_i_minus(model.s.weights(), MAX_CONDITION)
}

/// Draw `t` samples `x_t = H e_t`, `e_t ~ N(0, Σ_e)`.
///
/// Column `k` uses its own stream derived from `(seed, k)`, so the output does
/// not depend on how columns are spread over worker threads.
pub fn sample_data(model: &SemModel, t: usize, seed: u64) -> Result<DataMatrix> {
    if t == 0 {
        return Err(CovMatchError::Parameter("sample count must be at least 1".into()));
    }
    let chol = model
        .sigma_e
        .clone()
        .cholesky()
        .ok_or_else(|| CovMatchError::Parameter("noise covariance not positive definite".into()))?;
    let h = mixing_matrix(model)?;
    let mix = h * chol.l();
    let n = model.n();
    let mut x = DMatrix::zeros(n, t);
    // Column-major storage: each chunk of `n` values is one sample.
    x.as_mut_slice()
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(k, col)| {
            let mut r = rng::stream(seed, &[0x73_616d_706c, k as u64]);
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut r));
            col.copy_from_slice((&mix * z).as_slice());
        });
    DataMatrix::new(x)
}

/// `C = (1/T) X Xᵀ`, symmetrized. No centering.
pub fn sample_cov(x: &DataMatrix) -> CovSpec {
    let t = x.t() as f64;
    let c = (&x.x * x.x.transpose()) / t;
    CovSpec { c: linalg::symmetrize(&c), source: CovSource::Sample(x.t()) }
}

/// `Σ_x = H Σ_e Hᵀ`.
pub fn asymptotic_cov(model: &SemModel) -> Result<CovSpec> {
    let h = mixing_matrix(model)?;
    let c = &h * &model.sigma_e * h.transpose();
    Ok(CovSpec { c: linalg::symmetrize(&c), source: CovSource::Asymptotic })
}

/// Gradient of the Gaussian negative log-likelihood
/// `log det Σ̂ + tr(Σ̂⁻¹ C)` with respect to `Σ̂`.
pub fn ml_gradient(sigma_hat: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = sigma_hat
        .clone()
        .try_inverse()
        .ok_or(CovMatchError::Singular { cond: f64::INFINITY })?;
    Ok(&inv - &inv * c * &inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_dag, GraphKind, WeightRange};

    fn gso(kind: GraphKind, rows: usize, v: &[f64]) -> Gso {
        Gso::new(kind, DMatrix::from_row_slice(rows, rows, v)).unwrap()
    }

    #[test]
    fn mixing_of_empty_graph_is_identity() {
        let m = SemModel::white(Gso::zeros(GraphKind::Directed, 3));
        assert_eq!(mixing_matrix(&m).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn mixing_of_single_edge() {
        let m = SemModel::white(gso(GraphKind::Directed, 2, &[0.0, 0.5, 0.0, 0.0]));
        let h = mixing_matrix(&m).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!((h - expect).norm() < 1e-15);
    }

    #[test]
    fn mixing_of_dag_matches_power_series() {
        let g = gen_dag(5, 0.6, WeightRange::dag_default(), 17).unwrap();
        let s = g.weights().clone();
        // S is nilpotent for a DAG, so the Neumann series terminates.
        let mut series = DMatrix::<f64>::identity(5, 5);
        let mut pow = DMatrix::<f64>::identity(5, 5);
        for _ in 1..5 {
            pow = &pow * &s;
            series += &pow;
        }
        let h = mixing_matrix(&SemModel::white(g)).unwrap();
        assert!((&h - &series).norm() < 1e-10 * series.norm());
        let resid = (DMatrix::<f64>::identity(5, 5) - &s) * &h - DMatrix::<f64>::identity(5, 5);
        assert!(resid.norm() <= 1e-10 * 5.0);
    }

    #[test]
    fn mixing_rejects_singular() {
        let g = gso(GraphKind::Undirected, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            mixing_matrix(&SemModel::white(g)),
            Err(CovMatchError::Singular { .. })
        ));
    }

    #[test]
    fn sample_data_is_deterministic() {
        let g = gen_dag(4, 0.5, WeightRange::dag_default(), 2).unwrap();
        let m = SemModel::white(g);
        assert_eq!(sample_data(&m, 50, 9).unwrap(), sample_data(&m, 50, 9).unwrap());
        assert_ne!(sample_data(&m, 50, 9).unwrap(), sample_data(&m, 50, 10).unwrap());
    }

    #[test]
    fn sample_data_rejects_zero_samples() {
        let m = SemModel::white(Gso::zeros(GraphKind::Directed, 2));
        assert!(sample_data(&m, 0, 1).is_err());
    }

    #[test]
    fn colored_model_validates_noise() {
        let g = Gso::zeros(GraphKind::Directed, 2);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(SemModel::colored(g.clone(), bad).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(SemModel::colored(g, asym).is_err());
    }

    #[test]
    fn sample_cov_of_single_column() {
        let x = DataMatrix::new(DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5])).unwrap();
        let c = sample_cov(&x);
        let v = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        assert_eq!(c.matrix(), &(&v * v.transpose()));
        assert_eq!(c.source(), CovSource::Sample(1));
    }

    #[test]
    fn sample_cov_of_orthogonal_rows() {
        // Rows are orthogonal with squared norm T = 4.
        let x = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 1.0, 1.0, 1.0, -1.0, 1.0, -1.0]);
        let c = sample_cov(&DataMatrix::new(x).unwrap());
        assert_eq!(c.matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn sample_cov_matches_direct_summation() {
        let x = DMatrix::from_fn(4, 100, |i, j| ((i * 31 + j * 17) % 13) as f64 - 6.0 + 0.1 * i as f64);
        let c = sample_cov(&DataMatrix::new(x.clone()).unwrap());
        let mut brute = DMatrix::zeros(4, 4);
        for t in 0..100 {
            let col = x.column(t);
            brute += col * col.transpose();
        }
        brute /= 100.0;
        assert!((c.matrix() - brute).norm() < 1e-12);
    }

    #[test]
    fn asymptotic_cov_two_node_closed_form() {
        let a = 0.5;
        let g = gso(GraphKind::Undirected, 2, &[0.0, a, a, 0.0]);
        let c = asymptotic_cov(&SemModel::white(g)).unwrap();
        // (I - S)^{-1} = [[1, a], [a, 1]] / (1 - a^2); square it.
        let det = 1.0 - a * a;
        let h = DMatrix::from_row_slice(2, 2, &[1.0 / det, a / det, a / det, 1.0 / det]);
        assert!((c.matrix() - &h * &h).norm() < 1e-14);
    }

    #[test]
    fn asymptotic_cov_of_empty_graph() {
        let c = asymptotic_cov(&SemModel::white(Gso::zeros(GraphKind::Undirected, 4))).unwrap();
        assert_eq!(c.matrix(), &DMatrix::identity(4, 4));
    }

    #[test]
    fn law_of_large_numbers() {
        let g = gso(
            GraphKind::Directed,
            3,
            &[0.0, 0.0, 0.0, 0.8, 0.0, 0.0, -0.5, 0.3, 0.0],
        );
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 2.0, 0.5]));
        let m = SemModel::colored(g, sigma).unwrap();
        let x = sample_data(&m, 1_000_000, 123).unwrap();
        let diff = (sample_cov(&x).matrix() - asymptotic_cov(&m).unwrap().matrix()).norm();
        assert!(diff < 5e-2, "LLN gap {diff}");
    }
}

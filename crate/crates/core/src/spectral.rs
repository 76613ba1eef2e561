//! Symmetric eigendecomposition and utilities on the orthogonal group O(N):
//! Haar sampling, the principal logarithm and exponential, and geodesic
//! perturbations around a point.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CovMatchError, Result};
use crate::linalg;
use crate::rng;
use crate::sem::CovSpec;

/// Relative eigenvalue floor below which a covariance counts as rank deficient.
pub const EIG_FLOOR: f64 = 1e-12;

/// Rotation angles closer than this to π make the logarithm ambiguous.
pub const PI_MARGIN: f64 = 1e-6;

/// Eigenvectors (columns) and eigenvalues of a symmetric matrix, eigenvalues
/// sorted in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub u: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

impl EigenPair {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// `λ^{-1/2}`, failing when any eigenvalue is below the relative floor.
    pub fn inv_sqrt(&self) -> Result<DVector<f64>> {
        let max = self.lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let floor = EIG_FLOOR * max.max(0.0);
        for &l in self.lambda.iter() {
            if !(l > floor) || l <= 0.0 {
                return Err(CovMatchError::RankDeficient { value: l, floor });
            }
        }
        Ok(self.lambda.map(|l| 1.0 / l.sqrt()))
    }

    /// True when two eigenvalues agree to a relative `tol`.
    pub fn has_degenerate(&self, tol: f64) -> bool {
        let scale = self.lambda.iter().map(|l| l.abs()).fold(0.0, f64::max);
        self.lambda
            .as_slice()
            .windows(2)
            .any(|w| (w[0] - w[1]).abs() <= tol * scale)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.lambda) * self.u.transpose()
    }
}

/// A point on O(N) together with its objective value and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoPoint {
    pub v: DMatrix<f64>,
    pub cost: Option<f64>,
    /// Provenance: `cycle << 32 | slot` for points produced by the solvers.
    pub seed_tag: u64,
}

impl OrthoPoint {
    pub fn new(v: DMatrix<f64>, seed_tag: u64) -> Self {
        OrthoPoint { v, cost: None, seed_tag }
    }

    pub fn identity(n: usize) -> Self {
        OrthoPoint::new(DMatrix::identity(n, n), 0)
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn orthogonality_residual(&self) -> f64 {
        linalg::orthogonality_residual(&self.v)
    }
}

pub fn seed_tag(cycle: u32, slot: u32) -> u64 {
    ((cycle as u64) << 32) | slot as u64
}

/// Eigendecomposition of a covariance.
pub fn evd_sym(c: &CovSpec) -> Result<EigenPair> {
    evd_matrix(c.matrix())
}

/// Eigendecomposition of a symmetric matrix with a deterministic layout:
/// descending eigenvalues, and each eigenvector's largest-magnitude entry is
/// positive (ties go to the lowest index).
pub fn evd_matrix(c: &DMatrix<f64>) -> Result<EigenPair> {
    if !c.is_square() {
        return Err(CovMatchError::Input("matrix must be square".into()));
    }
    if !linalg::is_finite(c) {
        return Err(CovMatchError::Input("matrix has non-finite entries".into()));
    }
    let n = c.nrows();
    let eig = linalg::symmetrize(c).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut u = DMatrix::zeros(n, n);
    let mut lambda = DVector::zeros(n);
    for (k, &src) in order.iter().enumerate() {
        lambda[k] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        let mut best = 0;
        for i in 1..n {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        let flip = if col[best] < 0.0 { -1.0 } else { 1.0 };
        u.set_column(k, &(col * flip));
    }
    Ok(EigenPair { u, lambda })
}

/// Haar-distributed orthogonal matrix from the stream `(seed)`.
pub fn random_orthogonal(n: usize, seed: u64) -> Result<OrthoPoint> {
    if n == 0 {
        return Err(CovMatchError::Parameter("dimension must be at least 1".into()));
    }
    let mut r = rng::stream(seed, &[0x6861_6172]);
    Ok(OrthoPoint::new(haar_orthogonal(n, &mut r), seed))
}

/// Gaussian matrix, QR, and a sign correction by the diagonal of R so the
/// result is Haar distributed over both components of O(N).
pub fn haar_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Principal logarithm of a rotation (`det = +1`), returned exactly
/// skew-symmetric.
///
/// With `C = (U + Uᵀ)/2` and `K = (U − Uᵀ)/2`, both commute and on every
/// rotation plane `C = cos θ`, `K = sin θ · J`; hence `log U = f(C) K` with
/// `f(cos θ) = θ / sin θ`. `f(C)` is evaluated through the eigendecomposition
/// of the symmetric matrix `C`.
pub fn ortho_log(u: &OrthoPoint) -> Result<DMatrix<f64>> {
    let m = &u.v;
    let det = m.determinant();
    if !(det > 0.0) {
        return Err(CovMatchError::Parity { det });
    }
    let c = linalg::symmetrize(m);
    let k = (m - m.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut f = DVector::zeros(eig.eigenvalues.len());
    for (i, &ci) in eig.eigenvalues.iter().enumerate() {
        let theta = ci.clamp(-1.0, 1.0).acos();
        if theta > std::f64::consts::PI - PI_MARGIN {
            return Err(CovMatchError::BranchAmbiguity { angle: theta });
        }
        f[i] = if theta < 1e-8 { 1.0 + theta * theta / 6.0 } else { theta / theta.sin() };
    }
    let q = &eig.eigenvectors;
    let fc = q * DMatrix::from_diagonal(&f) * q.transpose();
    let l = fc * k;
    Ok((&l - l.transpose()) * 0.5)
}

/// Matrix exponential of a skew-symmetric matrix by scaling and squaring of
/// a Taylor series.
pub fn ortho_exp(l: &DMatrix<f64>) -> Result<OrthoPoint> {
    if !l.is_square() {
        return Err(CovMatchError::Parameter("matrix must be square".into()));
    }
    let norm = l.norm();
    if (l + l.transpose()).norm() > 1e-8 * norm {
        return Err(CovMatchError::Parameter("argument is not skew-symmetric".into()));
    }
    Ok(OrthoPoint::new(expm_skew(l), 0))
}

/// Unchecked exponential used on the hot path of the descent loop.
pub(crate) fn expm_skew(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let norm = l.norm();
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let a = l * scale;
    let mut out = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    let anorm = norm * scale;
    let mut bound = 1.0;
    for k in 1..=30 {
        term = &term * &a / k as f64;
        out += &term;
        bound *= anorm / k as f64;
        if bound < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        out = &out * &out;
    }
    out
}

/// One geodesic perturbation draw, exposed for inspection.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub u_raw: DMatrix<f64>,
    pub tau: f64,
    /// `U'`, the rotation applied on the left of the incumbent.
    pub rotation: DMatrix<f64>,
    /// Number of Haar draws rejected because of a rotation by π.
    pub rejected: usize,
}

const MAX_BRANCH_RESAMPLES: usize = 10;

/// Draw `U' = exp(τ log U_raw)` with the column flip that keeps both parities
/// of O(N) reachable.
pub fn sample_perturbation<R: Rng + ?Sized>(
    n: usize,
    tau_min: f64,
    tau_max: f64,
    rng: &mut R,
) -> Result<Perturbation> {
    if !(0.0 <= tau_min && tau_min <= tau_max && tau_max <= 1.0) {
        return Err(CovMatchError::Parameter(format!(
            "need 0 <= tau_min <= tau_max <= 1, got [{tau_min}, {tau_max}]"
        )));
    }
    let mut last_err = None;
    for rejected in 0..MAX_BRANCH_RESAMPLES {
        let u_raw = haar_orthogonal(n, rng);
        let negative = u_raw.determinant() < 0.0;
        let mut u = u_raw.clone();
        if negative {
            u.column_mut(0).neg_mut();
        }
        let tau = if tau_min == tau_max { tau_min } else { rng.random_range(tau_min..tau_max) };
        let log = match ortho_log(&OrthoPoint::new(u, 0)) {
            Ok(l) => l,
            Err(e @ CovMatchError::BranchAmbiguity { .. }) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut rotation = expm_skew(&(log * tau));
        if negative {
            rotation.column_mut(0).neg_mut();
        }
        return Ok(Perturbation { u_raw, tau, rotation, rejected });
    }
    Err(last_err.unwrap_or(CovMatchError::BranchAmbiguity { angle: std::f64::consts::PI }))
}

/// Perturb `v` by a random rotation biased toward moderate angles.
pub fn geodesic_sample<R: Rng + ?Sized>(
    v: &OrthoPoint,
    tau_min: f64,
    tau_max: f64,
    rng: &mut R,
) -> Result<OrthoPoint> {
    let p = sample_perturbation(v.n(), tau_min, tau_max, rng)?;
    Ok(OrthoPoint::new(p.rotation * &v.v, v.seed_tag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::CovSource;
    use std::f64::consts::PI;

    fn cov(m: DMatrix<f64>) -> CovSpec {
        CovSpec::new(m, CovSource::External).unwrap()
    }

    #[test]
    fn evd_of_identity() {
        let e = evd_sym(&cov(DMatrix::identity(3, 3))).unwrap();
        assert!(e.lambda.iter().all(|&l| (l - 1.0).abs() < 1e-15));
        assert!(linalg::orthogonality_residual(&e.u) < 1e-14);
    }

    #[test]
    fn evd_of_diagonal() {
        let e = evd_sym(&cov(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]))).unwrap();
        assert_eq!(e.lambda.as_slice(), &[4.0, 1.0]);
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(e.u, expect);
        let e = evd_sym(&cov(DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]))).unwrap();
        assert_eq!(e.u, DMatrix::identity(2, 2));
    }

    #[test]
    fn evd_rejects_nan() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(matches!(evd_matrix(&m), Err(CovMatchError::Input(_))));
    }

    #[test]
    fn evd_sign_convention_and_reconstruction() {
        let mut r = rng::stream(1, &[]);
        let a = DMatrix::<f64>::from_fn(6, 6, |_, _| StandardNormal.sample(&mut r));
        let c = &a * a.transpose() + DMatrix::<f64>::identity(6, 6);
        let e = evd_matrix(&c).unwrap();
        assert!((e.reconstruct() - &c).norm() <= 1e-8 * c.norm());
        assert!(linalg::orthogonality_residual(&e.u) <= 1e-10 * 6.0);
        for w in e.lambda.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
        for col in e.u.column_iter() {
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
        }
        assert_eq!(evd_matrix(&c).unwrap(), e);
    }

    #[test]
    fn inv_sqrt_floor() {
        let e = EigenPair { u: DMatrix::identity(2, 2), lambda: DVector::from_column_slice(&[1.0, 1e-14]) };
        assert!(matches!(e.inv_sqrt(), Err(CovMatchError::RankDeficient { .. })));
        let e = EigenPair { u: DMatrix::identity(2, 2), lambda: DVector::from_column_slice(&[4.0, 1.0]) };
        assert_eq!(e.inv_sqrt().unwrap().as_slice(), &[0.5, 1.0]);
    }

    #[test]
    fn random_orthogonal_one_dimensional() {
        let mut plus = 0;
        for s in 0..2000 {
            let q = random_orthogonal(1, s).unwrap();
            let v = q.v[(0, 0)];
            assert!(v == 1.0 || v == -1.0);
            if v > 0.0 {
                plus += 1;
            }
        }
        // Binomial(2000, 1/2): 4 sigma is about 90.
        assert!((plus as i64 - 1000).abs() < 90, "plus = {plus}");
    }

    #[test]
    fn random_orthogonal_is_orthogonal_with_both_parities() {
        let mut dets = (0, 0);
        for s in 0..200 {
            let q = random_orthogonal(5, s).unwrap();
            assert!(q.orthogonality_residual() <= 1e-10 * 5.0);
            if q.v.determinant() > 0.0 {
                dets.0 += 1
            } else {
                dets.1 += 1
            }
        }
        assert!(dets.0 > 50 && dets.1 > 50);
    }

    #[test]
    fn haar_entry_means_vanish() {
        let draws = 10_000;
        let mut sum = DMatrix::<f64>::zeros(3, 3);
        for s in 0..draws {
            sum += random_orthogonal(3, s).unwrap().v;
        }
        let mean = sum / draws as f64;
        // Entries have variance 1/3 under Haar measure.
        let sigma = 1.0 / (3f64.sqrt() * 100.0);
        assert!(mean.iter().all(|m| m.abs() < 3.0 * sigma + 1e-3), "{mean}");
    }

    fn rot2(theta: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    #[test]
    fn log_of_identity_and_planar_rotation() {
        assert_eq!(ortho_log(&OrthoPoint::identity(4)).unwrap(), DMatrix::zeros(4, 4));
        let l = ortho_log(&OrthoPoint::new(rot2(0.3), 0)).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, -0.3, 0.3, 0.0]);
        assert!((l - expect).norm() < 1e-14);
    }

    #[test]
    fn log_rejects_reflections_and_half_turns() {
        let refl = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(ortho_log(&OrthoPoint::new(refl, 0)), Err(CovMatchError::Parity { .. })));
        assert!(matches!(
            ortho_log(&OrthoPoint::new(rot2(PI), 0)),
            Err(CovMatchError::BranchAmbiguity { .. })
        ));
    }

    #[test]
    fn exp_closed_forms() {
        assert_eq!(ortho_exp(&DMatrix::zeros(3, 3)).unwrap().v, DMatrix::identity(3, 3));
        let l = DMatrix::from_row_slice(2, 2, &[0.0, -PI / 2.0, PI / 2.0, 0.0]);
        let r = ortho_exp(&l).unwrap().v;
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((r - expect).norm() < 1e-14);
    }

    #[test]
    fn exp_rejects_non_skew() {
        let l = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(ortho_exp(&l), Err(CovMatchError::Parameter(_))));
    }

    #[test]
    fn log_exp_round_trip() {
        let mut found = 0;
        for s in 0..40 {
            let q = random_orthogonal(5, s).unwrap();
            if q.v.determinant() < 0.0 {
                continue;
            }
            let l = ortho_log(&q).unwrap();
            assert_eq!(l, -l.transpose());
            let back = ortho_exp(&l).unwrap();
            assert!((back.v - &q.v).norm() <= 1e-8 * 5.0);
            found += 1;
        }
        assert!(found > 5);
    }

    #[test]
    fn geodesic_endpoints() {
        let v = random_orthogonal(4, 3).unwrap();
        for s in 0..20 {
            let mut r = rng::stream(s, &[]);
            let p = sample_perturbation(4, 0.0, 0.0, &mut r).unwrap();
            if p.u_raw.determinant() > 0.0 {
                assert!((&p.rotation - DMatrix::<f64>::identity(4, 4)).norm() < 1e-14);
                let mut r = rng::stream(s, &[]);
                let out = geodesic_sample(&v, 0.0, 0.0, &mut r).unwrap();
                assert!((out.v - &v.v).norm() < 1e-14);
            }
            let mut r = rng::stream(s, &[]);
            let p = sample_perturbation(4, 1.0, 1.0, &mut r).unwrap();
            assert!((&p.rotation - &p.u_raw).norm() < 1e-10);
        }
    }

    #[test]
    fn geodesic_sample_preserves_orthogonality() {
        let v = random_orthogonal(6, 0).unwrap();
        let mut r = rng::stream(42, &[]);
        for _ in 0..1000 {
            let out = geodesic_sample(&v, 0.5, 0.8, &mut r).unwrap();
            assert!(out.orthogonality_residual() <= 1e-8 * 6.0);
        }
    }

    #[test]
    fn geodesic_sample_bad_taus() {
        let v = OrthoPoint::identity(3);
        let mut r = rng::stream(0, &[]);
        assert!(geodesic_sample(&v, 0.6, 0.5, &mut r).is_err());
        assert!(geodesic_sample(&v, -0.1, 0.5, &mut r).is_err());
        assert!(geodesic_sample(&v, 0.1, 1.5, &mut r).is_err());
    }
}

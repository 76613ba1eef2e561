//! C interface. Matrices cross the boundary as opaque `CmMatrix` handles;
//! every function returns a `CmStatus` and leaves a message retrievable with
//! `cm_last_error` on failure. Dense buffers are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use covmatch::baseline;
use covmatch::directed::{self, BasinConfig, Budget, CandidateSet};
use covmatch::graph::{self, DEFAULT_MAX_RETRIES};
use covmatch::sem::{self, SemModel};
use covmatch::undirected::{self, MAX_EXACT_N};
use covmatch::{CovMatchError, CovSource, CovSpec, DataMatrix, GraphKind, Gso, WeightRange};
use nalgebra::DMatrix;

/// Dense real matrix owned by the library.
pub struct CmMatrix(DMatrix<f64>);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Budget = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmGraphKind {
    Undirected = 0,
    Directed = 1,
}

impl From<CmGraphKind> for GraphKind {
    fn from(k: CmGraphKind) -> Self {
        match k {
            CmGraphKind::Undirected => GraphKind::Undirected,
            CmGraphKind::Directed => GraphKind::Directed,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &CovMatchError) -> CmStatus {
    match e {
        CovMatchError::Io(_) | CovMatchError::Json(_) | CovMatchError::Csv(_) => CmStatus::Io,
        CovMatchError::Budget { .. } => CmStatus::Budget,
        _ => match e.exit_code() {
            2 => CmStatus::InvalidArgument,
            _ => CmStatus::Numerical,
        },
    }
}

enum Failure {
    Null(&'static str),
    Lib(CovMatchError),
}

impl From<CovMatchError> for Failure {
    fn from(e: CovMatchError) -> Self {
        Failure::Lib(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> CmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CmStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CmStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CmStatus::Panic
        }
    }
}

unsafe fn mat<'a>(m: *const CmMatrix, what: &'static str) -> Result<&'a DMatrix<f64>, Failure> {
    m.as_ref().map(|m| &m.0).ok_or(Failure::Null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(v);
    Ok(())
}

fn boxed(m: DMatrix<f64>) -> *mut CmMatrix {
    Box::into_raw(Box::new(CmMatrix(m)))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn cm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copy a row-major `rows x cols` buffer into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn cm_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut CmMatrix) -> CmStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| CovMatchError::Parameter("matrix too large".into()))?;
        let slice = std::slice::from_raw_parts(data, len);
        put(out, boxed(DMatrix::from_row_slice(rows, cols, slice)), "out")
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cm_matrix_free(m: *mut CmMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle; `rows` and `cols` writable.
#[no_mangle]
pub unsafe extern "C" fn cm_matrix_shape(m: *const CmMatrix, rows: *mut usize, cols: *mut usize) -> CmStatus {
    guard(|| {
        let m = mat(m, "m")?;
        put(rows, m.nrows(), "rows")?;
        put(cols, m.ncols(), "cols")
    })
}

/// Copy the matrix into a row-major buffer of `len` doubles.
///
/// # Safety
/// `m` must be a live handle; `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cm_matrix_read(m: *const CmMatrix, out: *mut f64, len: usize) -> CmStatus {
    guard(|| {
        let m = mat(m, "m")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if len != m.len() {
            return Err(CovMatchError::Parameter(format!("buffer holds {len} values, matrix has {}", m.len())).into());
        }
        let buf = std::slice::from_raw_parts_mut(out, len);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                buf[i * m.ncols() + j] = m[(i, j)];
            }
        }
        Ok(())
    })
}

/// Random undirected graph with `m` edges and weights of magnitude in [0.1, 1].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_gen_undirected(n: usize, m: usize, seed: u64, out: *mut *mut CmMatrix) -> CmStatus {
    guard(|| put(out, boxed(graph::gen_undirected(n, m, WeightRange::unit(), seed)?.into_weights()), "out"))
}

/// Random DAG with edge probability `p` and weight magnitudes in [0.5, 2].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_gen_dag(n: usize, p: f64, seed: u64, out: *mut *mut CmMatrix) -> CmStatus {
    guard(|| put(out, boxed(graph::gen_dag(n, p, WeightRange::dag_default(), seed)?.into_weights()), "out"))
}

/// Random directed graph with cycles, `m` edges, weight magnitudes in [0.1, 1].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_gen_cyclic(n: usize, m: usize, seed: u64, out: *mut *mut CmMatrix) -> CmStatus {
    guard(|| {
        let g = graph::gen_cyclic_directed(n, m, WeightRange::unit(), seed, DEFAULT_MAX_RETRIES)?;
        put(out, boxed(g.into_weights()), "out")
    })
}

/// Population covariance `(I - S)^-1 (I - S)^-T` of a white-noise SEM.
///
/// # Safety
/// `s` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cm_asymptotic_cov(s: *const CmMatrix, kind: CmGraphKind, out: *mut *mut CmMatrix) -> CmStatus {
    guard(|| {
        let g = Gso::new(kind.into(), mat(s, "s")?.clone())?;
        let c = sem::asymptotic_cov(&SemModel::white(g))?;
        put(out, boxed(c.matrix().clone()), "out")
    })
}

/// Sample covariance of `t` SEM samples.
///
/// # Safety
/// `s` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cm_sample_cov(
    s: *const CmMatrix,
    kind: CmGraphKind,
    t: usize,
    seed: u64,
    out: *mut *mut CmMatrix,
) -> CmStatus {
    guard(|| {
        let g = Gso::new(kind.into(), mat(s, "s")?.clone())?;
        let x = sem::sample_data(&SemModel::white(g), t, seed)?;
        put(out, boxed(sem::sample_cov(&x).matrix().clone()), "out")
    })
}

/// Undirected recovery by exhaustive search (N <= 24) or branch and bound.
///
/// # Safety
/// `cov` must be a live handle; `out` writable; `objective` null or writable.
#[no_mangle]
pub unsafe extern "C" fn cm_identify_undirected(
    cov: *const CmMatrix,
    alpha: f64,
    out: *mut *mut CmMatrix,
    objective: *mut f64,
) -> CmStatus {
    guard(|| {
        let c = CovSpec::new(mat(cov, "cov")?.clone(), CovSource::External)?;
        let p = undirected::build_problem(&c, alpha)?;
        let sol = if p.n() <= MAX_EXACT_N { undirected::solve_exact(&p)? } else { undirected::solve_bnb(&p)? };
        if !objective.is_null() {
            objective.write(sol.objective);
        }
        put(out, boxed(p.reconstruct(&sol.q).into_weights()), "out")
    })
}

/// Directed recovery by candidate-set basin hopping with the desk budget.
/// `cycles == 0` keeps the preset cycle count.
///
/// # Safety
/// `cov` must be a live handle; `out` writable; `cost` null or writable.
#[no_mangle]
pub unsafe extern "C" fn cm_identify_directed(
    cov: *const CmMatrix,
    alpha: f64,
    cycles: usize,
    seed: u64,
    workers: usize,
    out: *mut *mut CmMatrix,
    cost: *mut f64,
) -> CmStatus {
    guard(|| {
        let c = CovSpec::new(mat(cov, "cov")?.clone(), CovSource::External)?;
        let p = directed::build_directed(&c, alpha)?;
        let mut cfg = BasinConfig::preset(Budget::Desk, seed);
        cfg.workers = workers;
        if cycles > 0 {
            cfg.cycles = cycles;
        }
        let c0 = CandidateSet::initial(p.n(), cfg.capacity, cfg.capacity, cfg.delta_start, seed)?;
        let (best, report) = directed::basin_hop_candidates(&p, c0, &cfg)?;
        if !cost.is_null() {
            cost.write(report.final_cost);
        }
        put(out, boxed(directed::reconstruct(&p, &best).into_weights()), "out")
    })
}

/// Normalized squared error `||est - truth||_F^2 / ||truth||_F^2`.
///
/// # Safety
/// Both handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cm_nse(truth: *const CmMatrix, estimate: *const CmMatrix, out: *mut f64) -> CmStatus {
    guard(|| {
        let t = mat(truth, "truth")?;
        let e = mat(estimate, "estimate")?;
        if t.shape() != e.shape() {
            return Err(CovMatchError::Input("shape mismatch".into()).into());
        }
        let v = baseline::nse(
            &Gso::estimate(GraphKind::Directed, t.clone()),
            &Gso::estimate(GraphKind::Directed, e.clone()),
        )?;
        put(out, v, "out")
    })
}

/// Kendall copula covariance of an `N x T` data matrix.
///
/// # Safety
/// `data` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cm_kendall_cov(data: *const CmMatrix, out: *mut *mut CmMatrix) -> CmStatus {
    guard(|| {
        let x = DataMatrix::new(mat(data, "data")?.clone())?;
        put(out, boxed(baseline::kendall_copula_cov(&x)?.matrix().clone()), "out")
    })
}

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gd::{riemann_gd, GdOutcome, GdSchedule};
use super::{objective_j, DirectedProblem};
use crate::error::{CovMatchError, Result};
use crate::rng;
use crate::spectral::{geodesic_sample, random_orthogonal, seed_tag, OrthoPoint};

const SAMPLE_STREAM: u64 = 0x6268_7370;
const HOP_STREAM: u64 = 0x6268_6f70;
const INIT_STREAM: u64 = 0x696e_6974;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Desk,
    Paper,
}

impl std::str::FromStr for Budget {
    type Err = CovMatchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Budget::Desk),
            "paper" => Ok(Budget::Paper),
            other => Err(CovMatchError::Parameter(format!("unknown budget {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinConfig {
    /// Cycles `K`.
    pub cycles: usize,
    /// Perturbed samples per cycle `L`.
    pub samples: usize,
    /// Candidate set capacity `L′`.
    pub capacity: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub fresh: GdSchedule,
    pub candidate: GdSchedule,
    /// Diversity threshold while refinements still use the Huber gradient.
    pub delta_start: f64,
    /// Diversity threshold once every refinement of a cycle ends in sign mode.
    pub delta_final: f64,
    pub workers: usize,
    pub seed: u64,
}

impl BasinConfig {
    pub fn preset(budget: Budget, seed: u64) -> Self {
        let (cycles, width) = match budget {
            Budget::Desk => (20, 8),
            Budget::Paper => (200, 64),
        };
        BasinConfig {
            cycles,
            samples: width,
            capacity: width,
            tau_min: 0.5,
            tau_max: 0.8,
            fresh: GdSchedule::fresh(),
            candidate: GdSchedule::candidate(),
            delta_start: 0.5,
            delta_final: 0.01,
            workers: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(CovMatchError::Parameter("candidate capacity must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(CovMatchError::Parameter("workers must be at least 1".into()));
        }
        if !(self.delta_start >= 0.0 && self.delta_final >= 0.0) {
            return Err(CovMatchError::Parameter("diversity thresholds must be nonnegative".into()));
        }
        if !(0.0 <= self.tau_min && self.tau_min <= self.tau_max && self.tau_max <= 1.0) {
            return Err(CovMatchError::Parameter("need 0 <= tau_min <= tau_max <= 1".into()));
        }
        self.fresh.validate()?;
        self.candidate.validate()
    }
}

/// Diversity-filtered pool of points. A member without a cost has not been
/// refined yet.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub members: Vec<OrthoPoint>,
    pub capacity: usize,
    pub delta: f64,
}

pub fn dist2(a: &OrthoPoint, b: &OrthoPoint) -> f64 {
    (&a.v - &b.v).norm_squared()
}

impl CandidateSet {
    /// `count` Haar-distributed starting points, tagged `(0, i)`.
    pub fn initial(n: usize, count: usize, capacity: usize, delta: f64, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(CovMatchError::Parameter("initial candidate set is empty".into()));
        }
        let members = (0..count)
            .map(|i| {
                let mut v = random_orthogonal(n, rng::derive_seed(seed, &[INIT_STREAM, i as u64]))?;
                v.seed_tag = seed_tag(0, i as u32);
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CandidateSet { members, capacity, delta })
    }

    pub fn singleton(v: OrthoPoint, delta: f64) -> Self {
        CandidateSet { members: vec![v], capacity: 1, delta }
    }

    /// Admit points in ascending `(cost, seed_tag)` order while they keep a
    /// squared distance above `delta` to everything admitted so far.
    pub fn admit(mut points: Vec<OrthoPoint>, capacity: usize, delta: f64) -> Self {
        points.sort_by(|a, b| {
            let (ca, cb) = (a.cost.unwrap_or(f64::INFINITY), b.cost.unwrap_or(f64::INFINITY));
            ca.total_cmp(&cb).then(a.seed_tag.cmp(&b.seed_tag))
        });
        let mut members: Vec<OrthoPoint> = Vec::with_capacity(capacity);
        for p in points {
            if members.len() == capacity {
                break;
            }
            if members.iter().all(|m| dist2(m, &p) > delta) {
                members.push(p);
            }
        }
        CandidateSet { members, capacity, delta }
    }

    pub fn is_diverse(&self) -> bool {
        let m = &self.members;
        (0..m.len()).all(|i| (i + 1..m.len()).all(|j| dist2(&m[i], &m[j]) > self.delta))
    }

    /// Lowest cost member, ties by earliest seed tag.
    pub fn best(&self) -> Option<&OrthoPoint> {
        self.members.iter().min_by(|a, b| {
            let (ca, cb) = (a.cost.unwrap_or(f64::INFINITY), b.cost.unwrap_or(f64::INFINITY));
            ca.total_cmp(&cb).then(a.seed_tag.cmp(&b.seed_tag))
        })
    }

    pub fn costs(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.cost.unwrap_or(f64::INFINITY)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasinReport {
    pub final_cost: f64,
    pub cycles_used: usize,
    pub candidate_costs: Vec<f64>,
    pub wall_time: f64,
    pub seed: u64,
    /// Best cost after each cycle.
    pub best_history: Vec<f64>,
    /// Cycle at which the diversity threshold was lowered.
    pub delta_switch_cycle: Option<usize>,
}

/// Candidate-set basin hopping. Each cycle perturbs uniformly chosen members,
/// refines members and samples in parallel, and rebuilds the set by diversity
/// admission.
pub fn basin_hop_candidates(
    p: &DirectedProblem,
    c0: CandidateSet,
    cfg: &BasinConfig,
) -> Result<(OrthoPoint, BasinReport)> {
    cfg.validate()?;
    if c0.members.is_empty() {
        return Err(CovMatchError::Parameter("initial candidate set is empty".into()));
    }
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CovMatchError::Parameter(format!("worker pool: {e}")))?;

    let mut set = c0;
    let mut delta = cfg.delta_start;
    let mut delta_switch_cycle = None;
    let mut best_history = Vec::with_capacity(cfg.cycles);

    for cycle in 0..cfg.cycles {
        let mut tasks: Vec<(OrthoPoint, GdSchedule)> = set
            .members
            .iter()
            .map(|m| (m.clone(), if m.cost.is_some() { cfg.candidate } else { cfg.fresh }))
            .collect();
        for slot in 0..cfg.samples {
            let mut r = rng::stream(cfg.seed, &[SAMPLE_STREAM, cycle as u64, slot as u64]);
            let pick = r.random_range(0..set.members.len());
            let mut sample = geodesic_sample(&set.members[pick], cfg.tau_min, cfg.tau_max, &mut r)?;
            sample.seed_tag = seed_tag(cycle as u32 + 1, slot as u32);
            tasks.push((sample, cfg.fresh));
        }
        let outcomes: Vec<GdOutcome> =
            pool.install(|| tasks.par_iter().map(|(v, s)| riemann_gd(p, v, s)).collect());
        if delta_switch_cycle.is_none() && outcomes.iter().all(|o| o.sign_mode) {
            delta = cfg.delta_final;
            delta_switch_cycle = Some(cycle);
        }
        let points = outcomes.into_iter().map(|o| o.point).collect();
        set = CandidateSet::admit(points, cfg.capacity, delta);
        best_history.push(set.best().and_then(|b| b.cost).unwrap_or(f64::INFINITY));
    }

    for m in set.members.iter_mut() {
        if m.cost.is_none() {
            m.cost = Some(objective_j(p, m, false));
        }
    }
    let best = set.best().cloned().expect("candidate set is nonempty");
    let report = BasinReport {
        final_cost: best.cost.unwrap_or(f64::INFINITY),
        cycles_used: cfg.cycles,
        candidate_costs: set.costs(),
        wall_time: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
        best_history,
        delta_switch_cycle,
    };
    Ok((best, report))
}

/// Multi-start basin hopping around a single incumbent: the candidate-set
/// scheme with capacity one.
pub fn basin_hop_multi(p: &DirectedProblem, v0: &OrthoPoint, cfg: &BasinConfig) -> Result<(OrthoPoint, BasinReport)> {
    let mut cfg = cfg.clone();
    cfg.capacity = 1;
    basin_hop_candidates(p, CandidateSet::singleton(v0.clone(), cfg.delta_start), &cfg)
}

/// Sequential basin hopping: perturb the incumbent, refine, keep if better.
pub fn basin_hop(
    p: &DirectedProblem,
    v0: &OrthoPoint,
    sched: &GdSchedule,
    cycles: usize,
    tau: (f64, f64),
    seed: u64,
) -> Result<OrthoPoint> {
    let mut best = v0.clone();
    if best.cost.is_none() {
        best.cost = Some(objective_j(p, v0, false));
    }
    for cycle in 0..cycles {
        let mut r = rng::stream(seed, &[HOP_STREAM, cycle as u64]);
        let sample = geodesic_sample(&best, tau.0, tau.1, &mut r)?;
        let out = riemann_gd(p, &sample, sched);
        if out.point.cost < best.cost {
            best = out.point;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directed::build_directed;
    use crate::graph::{gen_dag, WeightRange};
    use crate::sem::{asymptotic_cov, SemModel};
    use nalgebra::DMatrix;

    fn problem(n: usize, seed: u64) -> DirectedProblem {
        let s = gen_dag(n, 0.3, WeightRange::dag_default(), seed).unwrap();
        build_directed(&asymptotic_cov(&SemModel::white(s)).unwrap(), 0.01).unwrap()
    }

    fn quick(seed: u64) -> BasinConfig {
        let mut cfg = BasinConfig::preset(Budget::Desk, seed);
        cfg.cycles = 3;
        cfg.samples = 3;
        cfg.capacity = 3;
        cfg.fresh.r_max = 300;
        cfg.candidate.r_max = 300;
        cfg
    }

    #[test]
    fn admission_respects_distance_and_capacity() {
        let mk = |x: f64, cost: f64, tag: u64| {
            let mut v = OrthoPoint::new(DMatrix::from_element(1, 1, x), tag);
            v.cost = Some(cost);
            v
        };
        let pts = vec![mk(0.0, 1.0, 3), mk(0.1, 0.5, 2), mk(2.0, 0.7, 1), mk(5.0, 0.5, 0)];
        let set = CandidateSet::admit(pts, 2, 0.5);
        let tags: Vec<u64> = set.members.iter().map(|m| m.seed_tag).collect();
        assert_eq!(tags, vec![0, 2]);
        assert!(set.is_diverse());
    }

    #[test]
    fn zero_cycles_return_start() {
        let p = problem(5, 0);
        let v0 = random_orthogonal(5, 1).unwrap();
        let out = basin_hop(&p, &v0, &GdSchedule::fresh(), 0, (0.5, 0.8), 0).unwrap();
        assert_eq!(out.v, v0.v);
    }

    #[test]
    fn basin_hop_is_monotone_and_seeded() {
        let p = problem(6, 2);
        let v0 = random_orthogonal(6, 3).unwrap();
        let mut sched = GdSchedule::fresh();
        sched.r_max = 200;
        let j0 = objective_j(&p, &v0, false);
        let a = basin_hop(&p, &v0, &sched, 4, (0.5, 0.8), 7).unwrap();
        let b = basin_hop(&p, &v0, &sched, 4, (0.5, 0.8), 7).unwrap();
        assert_eq!(a.v, b.v);
        assert!(a.cost.unwrap() <= j0);
    }

    #[test]
    fn candidates_are_worker_independent() {
        let p = problem(6, 4);
        let c0 = CandidateSet::initial(6, 3, 3, 0.5, 9).unwrap();
        let mut cfg = quick(9);
        let (a, ra) = basin_hop_candidates(&p, c0.clone(), &cfg).unwrap();
        cfg.workers = 3;
        let (b, rb) = basin_hop_candidates(&p, c0, &cfg).unwrap();
        assert_eq!(a.v, b.v);
        assert_eq!(ra.candidate_costs, rb.candidate_costs);
        for w in ra.best_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn budget_parse() {
        assert_eq!("desk".parse::<Budget>().unwrap(), Budget::Desk);
        assert!("huge".parse::<Budget>().is_err());
    }
}

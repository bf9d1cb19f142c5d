//! Constant-speed continuous-time random walk on RCLL conductance
//! schedules, simulated by Poisson thinning.
//!
//! A rate-2 exponential clock drives the simulation; at each ring the walk
//! stays put with probability 1/2 and otherwise jumps by the conductance
//! kernel read at the ring time (right-continuously). Restricted to
//! effective jumps the path has the constant-speed law with exp(1) waits;
//! sampled at the rings it is the 1/2-lazy discrete walk in the
//! conductances frozen at the ring times, which ties the continuous model
//! back to the discrete machinery for quenched replay.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::dyn_graph::{DynEnv, Schedule};
use crate::error::{Error, Result};

pub const CLOCK_RATE: f64 = 2.0;
pub const LAZY_PROB: f64 = 0.5;

/// Piecewise-constant RCLL conductance of one edge in real time: `base`
/// from time 0, switching at each change time and evaluated by
/// right-continuity (a clock ring landing exactly on a change point reads
/// the post-change value).
#[derive(Debug, Clone)]
pub struct RealSchedule {
    base: f64,
    changes: Vec<(f64, f64)>,
}

impl RealSchedule {
    pub fn constant(base: f64) -> Self {
        RealSchedule {
            base,
            changes: Vec::new(),
        }
    }

    pub fn new(base: f64, changes: Vec<(f64, f64)>) -> Result<Self> {
        if base < 0.0 {
            return Err(Error::Construction("negative base conductance".into()));
        }
        let mut prev = 0.0f64;
        for (t, w) in &changes {
            if !(*t > prev) {
                return Err(Error::Construction(
                    "real change times must be strictly increasing and positive".into(),
                ));
            }
            if *w < 0.0 {
                return Err(Error::Construction("negative scheduled conductance".into()));
            }
            prev = *t;
        }
        Ok(RealSchedule { base, changes })
    }

    pub fn value_at(&self, t: f64) -> f64 {
        match self.changes.iter().rposition(|(c, _)| *c <= t) {
            Some(i) => self.changes[i].1,
            None => self.base,
        }
    }
}

/// Finite graph with real-time RCLL edge conductances, uniformly elliptic
/// on its listed edges.
#[derive(Debug)]
pub struct RealEnv {
    names: Vec<String>,
    edges: Vec<(usize, usize)>,
    schedules: Vec<RealSchedule>,
    incidence: Vec<Vec<usize>>,
}

impl RealEnv {
    pub fn new(names: Vec<String>, edges: Vec<(usize, usize, RealSchedule)>) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(Error::Construction("no vertices".into()));
        }
        let mut canonical = Vec::with_capacity(edges.len());
        let mut schedules = Vec::with_capacity(edges.len());
        let mut incidence = vec![Vec::new(); n];
        let mut seen = std::collections::BTreeSet::new();
        for (u, v, s) in edges {
            if u >= n || v >= n {
                return Err(Error::UnknownVertex(u.max(v)));
            }
            let (a, b) = if u <= v { (u, v) } else { (v, u) };
            if !seen.insert((a, b)) {
                return Err(Error::Construction(format!("edge ({a},{b}) listed twice")));
            }
            // Uniform ellipticity: every value the schedule takes must be
            // positive.
            if s.base <= 0.0 || s.changes.iter().any(|(_, w)| *w <= 0.0) {
                return Err(Error::NotElliptic(format!(
                    "edge ({a},{b}) takes a non-positive value"
                )));
            }
            let idx = canonical.len();
            canonical.push((a, b));
            schedules.push(s);
            incidence[a].push(idx);
            if a != b {
                incidence[b].push(idx);
            }
        }
        for (x, inc) in incidence.iter().enumerate() {
            if inc.is_empty() {
                return Err(Error::Construction(format!(
                    "vertex {x} has no incident edge"
                )));
            }
        }
        Ok(RealEnv {
            names,
            edges: canonical,
            schedules,
            incidence,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.names.len()
    }

    pub fn vertex_name(&self, x: usize) -> &str {
        &self.names[x]
    }

    /// `pi_t(x)` read right-continuously.
    pub fn vertex_conductance(&self, t: f64, x: usize) -> f64 {
        self.incidence[x]
            .iter()
            .map(|&e| self.schedules[e].value_at(t))
            .sum()
    }

    /// One-step jump row of the kernel frozen at real time `t`.
    pub fn kernel_row(&self, t: f64, x: usize) -> Vec<(usize, f64)> {
        let total = self.vertex_conductance(t, x);
        self.incidence[x]
            .iter()
            .map(|&e| {
                let (u, v) = self.edges[e];
                let other = if u == x { v } else { u };
                (other, self.schedules[e].value_at(t) / total)
            })
            .collect()
    }
}

/// One simulated path: all clock rings with the position after each ring
/// and whether the jump proposal was taken.
#[derive(Debug, Clone)]
pub struct CsrwPath {
    pub x0: usize,
    pub t_max: f64,
    /// Ring times `T_k`, increasing.
    pub jump_times: Vec<f64>,
    /// Position `Y_{T_k}` after each ring.
    pub positions: Vec<usize>,
    /// Whether the lazy coin let the walk attempt a jump at this ring.
    pub moved: Vec<bool>,
}

impl CsrwPath {
    /// Number of rings up to `t_max` (a rate-2 Poisson count).
    pub fn ring_count(&self) -> usize {
        self.jump_times.len()
    }

    /// Times at which the position actually changed.
    pub fn effective_jump_times(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut prev = self.x0;
        for (k, &t) in self.jump_times.iter().enumerate() {
            if self.positions[k] != prev {
                out.push(t);
            }
            prev = self.positions[k];
        }
        out
    }

    /// Waiting times between effective jumps, the first measured from 0.
    pub fn effective_interarrivals(&self) -> Vec<f64> {
        let times = self.effective_jump_times();
        let mut out = Vec::with_capacity(times.len());
        let mut prev = 0.0;
        for t in times {
            out.push(t - prev);
            prev = t;
        }
        out
    }
}

/// Simulates the walk by thinning: exp(2) ring times, a fair lazy coin at
/// each ring, and the kernel frozen at the ring time for accepted jumps.
pub fn simulate_csrw<R: Rng + ?Sized>(
    env: &RealEnv,
    x0: usize,
    t_max: f64,
    rng: &mut R,
) -> Result<CsrwPath> {
    if x0 >= env.n_vertices() {
        return Err(Error::UnknownVertex(x0));
    }
    if !(t_max > 0.0) {
        return Err(Error::Parameter {
            name: "t_max",
            msg: format!("must be positive, got {t_max}"),
        });
    }
    let clock = Exp::new(CLOCK_RATE).expect("positive rate");
    let mut path = CsrwPath {
        x0,
        t_max,
        jump_times: Vec::new(),
        positions: Vec::new(),
        moved: Vec::new(),
    };
    let mut t = 0.0f64;
    let mut x = x0;
    loop {
        t += clock.sample(rng);
        if t > t_max {
            break;
        }
        let lazy: f64 = rng.random();
        let moved = lazy >= LAZY_PROB;
        if moved {
            let u: f64 = crate::seeding::uniform_open01(rng);
            let mut acc = 0.0;
            for (y, p) in env.kernel_row(t, x) {
                acc += p;
                if u <= acc {
                    x = y;
                    break;
                }
            }
        }
        path.jump_times.push(t);
        path.positions.push(x);
        path.moved.push(moved);
    }
    Ok(path)
}

/// The analytic law of one ring: stay with probability 1/2, otherwise jump
/// by the kernel frozen at the ring time.
pub fn ring_law(env: &RealEnv, t: f64, x: usize) -> Vec<(usize, f64)> {
    let mut out: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    *out.entry(x).or_insert(0.0) += LAZY_PROB;
    for (y, p) in env.kernel_row(t, x) {
        *out.entry(y).or_insert(0.0) += (1.0 - LAZY_PROB) * p;
    }
    out.into_iter().collect()
}

/// Builds the discrete environment that replays a realized clock sequence:
/// step `k` of the discrete walk uses the conductances frozen at ring
/// `k + 1`, with the vertex conductance added to each self-loop so the
/// one-step kernel is exactly the 1/2-lazy kernel of that ring.
///
/// The replay environment also carries the per-realization monotonicity
/// diagnostic: its `monotonicity_report` describes the conductances along
/// the realized ring sequence, which is all a finite simulation can say
/// about monotonicity over random sample times.
pub fn quenched_replay_env(env: &RealEnv, rings: &[f64]) -> Result<DynEnv<f64>> {
    if rings.is_empty() {
        return Err(Error::Parameter {
            name: "rings",
            msg: "need at least one ring".into(),
        });
    }
    for w in rings.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Parameter {
                name: "rings",
                msg: "ring times must increase".into(),
            });
        }
    }
    let n = env.n_vertices();
    let horizon = rings.len() as u32;
    let names = (0..n).map(|x| env.vertex_name(x).to_string()).collect();
    let mut specs: Vec<(usize, usize, Schedule<f64>)> = Vec::new();
    let value_at_step = |e: usize, k: usize| env.schedules[e].value_at(rings[k]);
    for (e, &(u, v)) in env.edges.iter().enumerate() {
        if u == v {
            continue; // folded into the lazy loop below
        }
        let base = value_at_step(e, 0);
        let mut cur = base;
        let mut changes = Vec::new();
        for k in 1..rings.len() {
            let w = value_at_step(e, k);
            if w != cur {
                changes.push((k as u32, w));
                cur = w;
            }
        }
        specs.push((u, v, Schedule::new(base, changes)?));
    }
    for x in 0..n {
        let loop_at = |k: usize| -> f64 {
            let own: f64 = env.incidence[x]
                .iter()
                .filter(|&&e| env.edges[e] == (x, x))
                .map(|&e| value_at_step(e, k))
                .sum();
            own + env.vertex_conductance(rings[k], x)
        };
        let base = loop_at(0);
        let mut changes = Vec::new();
        let mut cur = base;
        for k in 1..rings.len() {
            let w = loop_at(k);
            if w != cur {
                changes.push((k as u32, w));
                cur = w;
            }
        }
        specs.push((x, x, Schedule::new(base, changes)?));
    }
    DynEnv::new(names, specs, horizon)
}

/// Visit statistics of a collection of paths at a target vertex: entry
/// counts (arrivals from elsewhere), last entry times, and the aggregate
/// histogram of entry counts.
#[derive(Debug, Clone)]
pub struct ReturnSummary {
    pub entries_per_path: Vec<u32>,
    pub last_entry_per_path: Vec<Option<f64>>,
    pub histogram: std::collections::BTreeMap<u32, u32>,
}

pub fn return_statistics(paths: &[CsrwPath], target: usize) -> ReturnSummary {
    let mut entries_per_path = Vec::with_capacity(paths.len());
    let mut last_entry_per_path = Vec::with_capacity(paths.len());
    let mut histogram = std::collections::BTreeMap::new();
    for path in paths {
        let mut entries = 0u32;
        let mut last = None;
        let mut prev = path.x0;
        for (k, &t) in path.jump_times.iter().enumerate() {
            let here = path.positions[k];
            if here == target && prev != target {
                entries += 1;
                last = Some(t);
            }
            prev = here;
        }
        *histogram.entry(entries).or_insert(0) += 1;
        entries_per_path.push(entries);
        last_entry_per_path.push(last);
    }
    ReturnSummary {
        entries_per_path,
        last_entry_per_path,
        histogram,
    }
}

/// Two-vertex loopless environment with unit conductance, the minimal
/// test bed where every accepted jump moves the walk.
pub fn two_vertex_unit_env() -> RealEnv {
    RealEnv::new(
        vec!["a".into(), "b".into()],
        vec![(0, 1, RealSchedule::constant(1.0))],
    )
    .expect("valid")
}

//! Finite graphs with time-varying, nonnegative, symmetric edge
//! conductances.
//!
//! The environment is the single source of truth for everything downstream:
//! one-step kernels, heat kernels, evolving sets and isoperimetric
//! quantities all read conductances from here. Conductances are stored once
//! per unordered vertex pair (self-loops allowed; the self-loop carries the
//! laziness of the walk) as piecewise-constant functions of integer time:
//! a base value plus finitely many change points, with the last value
//! persisting forever. Storage is proportional to the number of changes,
//! never to the horizon.
//!
//! Times are validated against the environment's `horizon`: queries past it
//! are a hard error rather than a silent extrapolation, because the horizon
//! is the experiment's contract even though the schedule formally persists.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::weight::Weight;

/// Piecewise-constant conductance of one edge: `base` from time 0, then the
/// value switches at each listed change time (strictly increasing, >= 1)
/// and persists.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<W> {
    base: W,
    changes: Vec<(u32, W)>,
}

impl<W: Weight> Schedule<W> {
    pub fn constant(base: W) -> Self {
        Schedule {
            base,
            changes: Vec::new(),
        }
    }

    pub fn new(base: W, changes: Vec<(u32, W)>) -> Result<Self> {
        let zero = W::zero();
        if base < zero {
            return Err(Error::Construction("negative base conductance".into()));
        }
        let mut prev = 0u32;
        for (t, w) in &changes {
            if *t == 0 {
                return Err(Error::Construction(
                    "change at t=0 is the base value; move it there".into(),
                ));
            }
            if *t <= prev && prev != 0 {
                return Err(Error::Construction(
                    "change times must be strictly increasing".into(),
                ));
            }
            if *w < zero {
                return Err(Error::Construction("negative scheduled conductance".into()));
            }
            prev = *t;
        }
        Ok(Schedule { base, changes })
    }

    pub fn value_at(&self, t: u32) -> &W {
        match self.changes.iter().rposition(|(c, _)| *c <= t) {
            Some(i) => &self.changes[i].1,
            None => &self.base,
        }
    }

    pub fn change_times(&self) -> impl Iterator<Item = u32> + '_ {
        self.changes.iter().map(|(t, _)| *t)
    }

    pub fn last_change(&self) -> u32 {
        self.changes.last().map_or(0, |(t, _)| *t)
    }
}

/// Lattice provenance of an environment, carried by the box and percolation
/// generators so lattice-aware operations (analytic isoperimetry, shell
/// killing) can recognize their inputs.
#[derive(Debug, Clone)]
pub struct LatticeInfo {
    /// Lattice dimension.
    pub dim: u32,
    /// Vertex coordinates, vertex-major, `dim` entries per vertex. The
    /// wired exterior vertex, when present, has no coordinates and sits
    /// last.
    pub coords: Vec<i32>,
    /// Per-axis coordinate bounds (inclusive).
    pub lo: i32,
    pub hi: i32,
    /// True when the vertex set is the entire box (as opposed to a cluster
    /// inside it).
    pub full_box: bool,
    /// Index of the collapsed-exterior vertex for wired boundary, if any.
    pub wired_vertex: Option<usize>,
    /// Index of the lattice origin, if it is a vertex of the graph.
    pub origin: Option<usize>,
}

impl LatticeInfo {
    pub fn coord(&self, v: usize) -> &[i32] {
        let d = self.dim as usize;
        &self.coords[v * d..(v + 1) * d]
    }

    /// Whether the vertex sits on the outermost shell of the box.
    pub fn is_shell(&self, v: usize) -> bool {
        if Some(v) == self.wired_vertex {
            return false;
        }
        self.coord(v).iter().any(|&c| c == self.lo || c == self.hi)
    }
}

#[derive(Debug)]
struct EpochData<W> {
    start: u32,
    weights: Vec<W>,
    vcond: Vec<W>,
    active: Vec<bool>,
}

/// A finite graph plus a piecewise-constant schedule of nonnegative edge
/// conductances. Immutable after construction; safe for concurrent reads.
#[derive(Debug)]
pub struct DynEnv<W: Weight> {
    names: Vec<String>,
    name_index: BTreeMap<String, usize>,
    /// Canonical unordered pairs, `u <= v`; `u == v` is a self-loop.
    edges: Vec<(usize, usize)>,
    schedules: Vec<Schedule<W>>,
    /// Edge indices incident to each vertex (self-loop listed once).
    incidence: Vec<Vec<usize>>,
    horizon: u32,
    epochs: OnceLock<Vec<EpochData<W>>>,
    lattice: Option<LatticeInfo>,
}

/// Diagnostics for the time-monotonicity of vertex conductances: the
/// compensator sequence `beta`, its worst ratio over the horizon, and the
/// two monotonicity flags.
///
/// `beta(0) = 1` and `beta(u+1) = beta(u) * sup_x pi_u(x)/pi_{u+1}(x)`, the
/// smallest multiplier making `t -> beta(t) * pi_t(x)` non-decreasing for
/// every vertex. `eta_star = sup_{u<t} beta(t)/beta(u)`; it is finite on any
/// finite horizon (that is what `is_effectively_nondecreasing` records) and
/// at most 1 when the conductances are genuinely non-decreasing.
#[derive(Debug, Clone)]
pub struct MonotonicityReport<W> {
    pub beta: Vec<W>,
    pub eta_star: W,
    pub is_nondecreasing: bool,
    pub is_effectively_nondecreasing: bool,
}

impl<W: Weight> DynEnv<W> {
    /// Builds an environment from vertex names and per-edge schedules.
    ///
    /// Conductances must be nonnegative, each unordered pair may appear
    /// once, change times must stay within `horizon`, and the active set
    /// `V_t = {x : pi_t(x) > 0}` must be nonempty at every time.
    pub fn new(
        names: Vec<String>,
        edges: Vec<(usize, usize, Schedule<W>)>,
        horizon: u32,
    ) -> Result<Self> {
        Self::with_lattice(names, edges, horizon, None)
    }

    pub fn with_lattice(
        names: Vec<String>,
        edges: Vec<(usize, usize, Schedule<W>)>,
        horizon: u32,
        lattice: Option<LatticeInfo>,
    ) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(Error::Construction("no vertices".into()));
        }
        let mut name_index = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Construction("empty vertex name".into()));
            }
            if name_index.insert(name.clone(), i).is_some() {
                return Err(Error::Construction(format!(
                    "duplicate vertex name {name:?}"
                )));
            }
        }
        let mut canonical = Vec::with_capacity(edges.len());
        let mut schedules = Vec::with_capacity(edges.len());
        let mut seen = std::collections::BTreeSet::new();
        let mut incidence = vec![Vec::new(); n];
        for (u, v, sched) in edges {
            if u >= n {
                return Err(Error::UnknownVertex(u));
            }
            if v >= n {
                return Err(Error::UnknownVertex(v));
            }
            let (a, b) = if u <= v { (u, v) } else { (v, u) };
            if !seen.insert((a, b)) {
                return Err(Error::Construction(format!(
                    "edge ({a},{b}) listed twice; conductances are stored once per pair"
                )));
            }
            if sched.last_change() > horizon {
                return Err(Error::Construction(format!(
                    "edge ({a},{b}) changes at t={} beyond horizon {horizon}",
                    sched.last_change()
                )));
            }
            let idx = canonical.len();
            canonical.push((a, b));
            schedules.push(sched);
            incidence[a].push(idx);
            if a != b {
                incidence[b].push(idx);
            }
        }
        let env = DynEnv {
            names,
            name_index,
            edges: canonical,
            schedules,
            incidence,
            horizon,
            epochs: OnceLock::new(),
            lattice,
        };
        for ep in env.epoch_tables() {
            if !ep.active.iter().any(|a| *a) {
                return Err(Error::Construction(format!(
                    "active set V_t empty from t={}",
                    ep.start
                )));
            }
        }
        Ok(env)
    }

    /// Delayed-walk construction: only off-diagonal conductances are given,
    /// with `sup_t pi_t(x, complement) <= 1 - gamma` required, and the
    /// self-loop is set to the deficit `1 - pi_t(x, complement)`. The
    /// resulting vertex conductances are identically 1 and one-step
    /// probabilities equal the edge conductances.
    pub fn delayed(
        names: Vec<String>,
        offdiag: Vec<(usize, usize, Schedule<W>)>,
        gamma: f64,
        horizon: u32,
    ) -> Result<Self> {
        let n = names.len();
        for (u, v, _) in &offdiag {
            if u == v {
                return Err(Error::Construction(
                    "delayed construction takes off-diagonal conductances only".into(),
                ));
            }
        }
        // Evaluate each vertex's off-diagonal total at every global change
        // time and synthesize the self-loop schedule from the deficits.
        let mut times: Vec<u32> = vec![0];
        for (_, _, s) in &offdiag {
            times.extend(s.change_times());
        }
        times.sort_unstable();
        times.dedup();
        let cap = W::from_f64(1.0 - gamma);
        let one = W::one();
        let mut loops: Vec<(usize, usize, Schedule<W>)> = Vec::with_capacity(n);
        for x in 0..n {
            let total_at = |t: u32| -> W {
                offdiag
                    .iter()
                    .filter(|(u, v, _)| *u == x || *v == x)
                    .fold(W::zero(), |acc, (_, _, s)| acc + s.value_at(t).clone())
            };
            let mut base = W::zero();
            let mut changes = Vec::new();
            for &t in &times {
                let tot = total_at(t);
                if tot > cap {
                    return Err(Error::Construction(format!(
                        "off-diagonal total at vertex {x} exceeds 1-gamma at t={t}"
                    )));
                }
                let loop_w = one.clone() - tot;
                if t == 0 {
                    base = loop_w;
                } else {
                    changes.push((t, loop_w));
                }
            }
            loops.push((x, x, Schedule { base, changes }));
        }
        let mut edges = offdiag;
        edges.extend(loops);
        Self::new(names, edges, horizon)
    }

    fn epoch_tables(&self) -> &[EpochData<W>] {
        self.epochs.get_or_init(|| {
            let mut times: Vec<u32> = vec![0];
            for s in &self.schedules {
                times.extend(s.change_times());
            }
            times.sort_unstable();
            times.dedup();
            times
                .into_iter()
                .map(|start| {
                    let weights: Vec<W> = self
                        .schedules
                        .iter()
                        .map(|s| s.value_at(start).clone())
                        .collect();
                    let mut vcond = vec![W::zero(); self.names.len()];
                    for (idx, &(u, v)) in self.edges.iter().enumerate() {
                        vcond[u] = vcond[u].clone() + weights[idx].clone();
                        if u != v {
                            vcond[v] = vcond[v].clone() + weights[idx].clone();
                        }
                    }
                    let active = vcond.iter().map(|w| *w > W::zero()).collect();
                    EpochData {
                        start,
                        weights,
                        vcond,
                        active,
                    }
                })
                .collect()
        })
    }

    fn epoch_at(&self, t: u32) -> &EpochData<W> {
        let tables = self.epoch_tables();
        let pos = tables.partition_point(|e| e.start <= t);
        &tables[pos - 1]
    }

    fn check_time(&self, t: u32) -> Result<()> {
        if t > self.horizon {
            return Err(Error::BeyondHorizon {
                t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    fn check_vertex(&self, x: usize) -> Result<()> {
        if x >= self.names.len() {
            return Err(Error::UnknownVertex(x));
        }
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.names.len()
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn vertex_name(&self, x: usize) -> &str {
        &self.names[x]
    }

    pub fn vertex_index(&self, name: &str) -> Result<usize> {
        self.name_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownVertexName(name.to_string()))
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn lattice(&self) -> Option<&LatticeInfo> {
        self.lattice.as_ref()
    }

    /// All times at which some edge conductance changes, in increasing
    /// order, starting with 0.
    pub fn change_points(&self) -> Vec<u32> {
        self.epoch_tables().iter().map(|e| e.start).collect()
    }

    /// Conductance of the unordered pair `(x, y)` at time `t`; zero when
    /// the pair is not an edge.
    pub fn edge_weight(&self, t: u32, x: usize, y: usize) -> Result<W> {
        self.check_time(t)?;
        self.check_vertex(x)?;
        self.check_vertex(y)?;
        let ep = self.epoch_at(t);
        for &e in &self.incidence[x] {
            let (u, v) = self.edges[e];
            let other = if u == x { v } else { u };
            if other == y {
                return Ok(ep.weights[e].clone());
            }
        }
        Ok(W::zero())
    }

    /// Vertex conductance `pi_t(x)`: the sum of incident edge conductances,
    /// self-loop counted once.
    pub fn vertex_conductance(&self, t: u32, x: usize) -> Result<W> {
        self.check_time(t)?;
        self.check_vertex(x)?;
        Ok(self.epoch_at(t).vcond[x].clone())
    }

    /// Whether `x` belongs to the active set `V_t`.
    pub fn is_active(&self, t: u32, x: usize) -> Result<bool> {
        self.check_time(t)?;
        self.check_vertex(x)?;
        Ok(self.epoch_at(t).active[x])
    }

    /// The active set `V_t` in index order.
    pub fn active_vertices(&self, t: u32) -> Result<Vec<usize>> {
        self.check_time(t)?;
        let ep = self.epoch_at(t);
        Ok((0..self.names.len()).filter(|&x| ep.active[x]).collect())
    }

    /// One-step transition probability `pi_t(x,y) / pi_t(x)` of the
    /// inhomogeneous walk. Requires `x` active at time `t`.
    pub fn transition_prob(&self, t: u32, x: usize, y: usize) -> Result<W> {
        let w = self.edge_weight(t, x, y)?;
        let px = self.vertex_conductance(t, x)?;
        if !(px > W::zero()) {
            return Err(Error::InactiveVertex { vertex: x, t });
        }
        Ok(w / px)
    }

    /// Nonzero entries of the one-step row from `x` at time `t`, as
    /// `(target, probability)` pairs in target order.
    pub fn one_step_row(&self, t: u32, x: usize) -> Result<Vec<(usize, W)>> {
        self.check_time(t)?;
        self.check_vertex(x)?;
        let ep = self.epoch_at(t);
        if !ep.active[x] {
            return Err(Error::InactiveVertex { vertex: x, t });
        }
        let px = ep.vcond[x].clone();
        let mut row: Vec<(usize, W)> = self.incidence[x]
            .iter()
            .filter_map(|&e| {
                let (u, v) = self.edges[e];
                let other = if u == x { v } else { u };
                let w = ep.weights[e].clone();
                (w > W::zero()).then(|| (other, w / px.clone()))
            })
            .collect();
        row.sort_by_key(|(y, _)| *y);
        Ok(row)
    }

    /// `pi_t(A)` for a sorted member slice (inactive members contribute 0).
    pub fn set_mass(&self, t: u32, members: &[usize]) -> Result<W> {
        self.check_time(t)?;
        let ep = self.epoch_at(t);
        let mut total = W::zero();
        for &x in members {
            self.check_vertex(x)?;
            total = total + ep.vcond[x].clone();
        }
        Ok(total)
    }

    /// `pi_t(A, y)`: conductance from the sorted set `A` into the single
    /// vertex `y` (self-loop included exactly when `y` is a member).
    pub fn set_to_vertex(&self, t: u32, members: &[usize], y: usize) -> Result<W> {
        self.check_time(t)?;
        self.check_vertex(y)?;
        let ep = self.epoch_at(t);
        let mut total = W::zero();
        for &e in &self.incidence[y] {
            let (u, v) = self.edges[e];
            let other = if u == y { v } else { u };
            if members.binary_search(&other).is_ok() {
                total = total + ep.weights[e].clone();
            }
        }
        Ok(total)
    }

    /// Boundary conductance `pi_t(A, A^c)` of a sorted member slice.
    pub fn boundary_conductance(&self, t: u32, members: &[usize]) -> Result<W> {
        self.check_time(t)?;
        let ep = self.epoch_at(t);
        let mut total = W::zero();
        for &x in members {
            self.check_vertex(x)?;
            for &e in &self.incidence[x] {
                let (u, v) = self.edges[e];
                let other = if u == x { v } else { u };
                if other != x && members.binary_search(&other).is_err() {
                    total = total + ep.weights[e].clone();
                }
            }
        }
        Ok(total)
    }

    /// Infimum over `t <= horizon` and active `x` of the staying
    /// probability `P(t,x;t+1,x)`. The caller compares against a desired
    /// laziness constant `gamma` in (0, 1/2].
    pub fn laziness_coefficient(&self) -> W {
        let mut inf: Option<W> = None;
        for ep in self.epoch_tables() {
            for x in 0..self.names.len() {
                if !ep.active[x] {
                    continue;
                }
                let mut loop_w = W::zero();
                for &e in &self.incidence[x] {
                    let (u, v) = self.edges[e];
                    if u == x && v == x {
                        loop_w = ep.weights[e].clone();
                    }
                }
                let ratio = loop_w / ep.vcond[x].clone();
                inf = Some(match inf {
                    None => ratio,
                    Some(cur) => {
                        if ratio < cur {
                            ratio
                        } else {
                            cur
                        }
                    }
                });
            }
        }
        inf.expect("V_t nonempty by construction")
    }

    /// Content digest of the environment (vertices, edges, schedules,
    /// horizon), used to key kernel caches and stamp reports.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.names.len() as u64).to_le_bytes());
        for name in &self.names {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
        }
        h.update(self.horizon.to_le_bytes());
        for (idx, &(u, v)) in self.edges.iter().enumerate() {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
            let s = &self.schedules[idx];
            h.update(s.base.to_f64().to_bits().to_le_bytes());
            for (t, w) in &s.changes {
                h.update(t.to_le_bytes());
                h.update(w.to_f64().to_bits().to_le_bytes());
            }
        }
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Computes the compensator sequence `beta` and the monotonicity flags.
    ///
    /// The per-step supremum runs over every active vertex, boundary
    /// vertices of a truncated graph included; on a truncation this can
    /// make `beta` more conservative than the untruncated model would be.
    ///
    /// Errors with [`Error::SupportLost`] when a vertex active at time `u`
    /// has zero conductance at `u + 1`: the compensator is undefined there
    /// and the analysis does not apply.
    pub fn monotonicity_report(&self) -> Result<MonotonicityReport<W>> {
        let one = W::one();
        let n = self.names.len();
        let horizon = self.horizon as usize;
        // Conductances only change at epoch starts, so the per-step sup of
        // pi_u(x)/pi_{u+1}(x) is 1 inside an epoch and needs computing only
        // across each boundary.
        let mut sup_at: BTreeMap<u32, W> = BTreeMap::new();
        let mut nondecreasing = true;
        let tables = self.epoch_tables();
        for pair in tables.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            let boundary = next.start; // sup applies to step boundary-1 -> boundary
            let mut sup: Option<W> = None;
            for x in 0..n {
                if !prev.active[x] {
                    continue;
                }
                if !(next.vcond[x] > W::zero()) {
                    return Err(Error::SupportLost {
                        vertex: x,
                        t: boundary - 1,
                    });
                }
                if next.vcond[x] < prev.vcond[x] {
                    nondecreasing = false;
                }
                let ratio = prev.vcond[x].clone() / next.vcond[x].clone();
                sup = Some(match sup {
                    None => ratio,
                    Some(cur) => {
                        if ratio > cur {
                            ratio
                        } else {
                            cur
                        }
                    }
                });
            }
            sup_at.insert(boundary, sup.expect("V_t nonempty"));
        }
        let mut beta = Vec::with_capacity(horizon + 1);
        beta.push(one.clone());
        for u in 0..horizon {
            let step = sup_at.get(&(u as u32 + 1)).cloned().unwrap_or_else(W::one);
            let next = beta[u].clone() * step;
            beta.push(next);
        }
        // beta is constant between change points, so the worst ratio is a
        // scan over the (few) distinct values in time order.
        let mut eta_star = one.clone();
        if horizon >= 1 {
            let mut distinct: Vec<&W> = vec![&beta[0]];
            for b in &beta[1..] {
                if b != *distinct.last().unwrap() {
                    distinct.push(b);
                }
            }
            for i in 0..distinct.len() {
                for j in i..distinct.len() {
                    let ratio = distinct[j].clone() / distinct[i].clone();
                    if ratio > eta_star {
                        eta_star = ratio;
                    }
                }
            }
        }
        Ok(MonotonicityReport {
            beta,
            eta_star,
            is_nondecreasing: nondecreasing,
            // Finite on any finite horizon whenever beta is defined.
            is_effectively_nondecreasing: true,
        })
    }
}

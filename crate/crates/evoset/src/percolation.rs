//! Bernoulli bond percolation clusters on lattice boxes and
//! growing-subgraph schedules, with return-count experiments for the walk
//! started at the origin.
//!
//! The box `[-L, L]^d` is percolated with retention probability `p`, the
//! origin's open cluster is extracted by union-find, and the walk's
//! environment puts unit conductance on open edges plus a self-loop sized
//! from the current degree so the walk is uniformly lazy at every time.
//! Growth schedules insert formerly closed edges between existing cluster
//! vertices, never new vertices, so vertex conductances only increase.
//!
//! No finite box is transient, so return statistics use walks killed on
//! the box shell and report the killed fraction explicitly: the truncation
//! artifact is surfaced, not hidden.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dyn_graph::{DynEnv, LatticeInfo, Schedule};
use crate::error::{Error, Result};
use crate::seeding::{replica_rng, worker_count};

fn default_min_fraction() -> f64 {
    0.1
}

fn default_retries() -> u32 {
    32
}

fn default_gamma() -> f64 {
    0.5
}

/// A batch of formerly closed intra-cluster edges to insert at one time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GrowthBatch {
    /// Insert every closed intra-cluster edge not inserted yet.
    AllClosed,
    /// Insert `count` closed edges sampled without replacement
    /// (deterministically from the configured seed).
    RandomClosed { count: usize },
    /// Insert the named edges (vertex names are coordinate strings).
    Edges { pairs: Vec<(String, String)> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PercConfig {
    /// Lattice dimension. Transience statistics are meaningful for d >= 3;
    /// d = 1 builds the recurrent control.
    pub d: u32,
    /// Box half-side: sites live in `[-L, L]^d`.
    pub half_side: u32,
    /// Edge retention probability.
    pub p: f64,
    pub seed: u64,
    #[serde(default)]
    pub growth_schedule: Vec<(u32, GrowthBatch)>,
    /// Minimum origin-cluster size as a fraction of the box volume; below
    /// it the sample is rejected and redrawn.
    #[serde(default = "default_min_fraction")]
    pub min_cluster_fraction: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Laziness target: self-loops are sized to `gamma/(1-gamma)` times
    /// the current degree, so the staying probability is at least `gamma`.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl PercConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > 3 {
            return Err(Error::Parameter {
                name: "d",
                msg: format!("must be 1..=3, got {}", self.d),
            });
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Parameter {
                name: "p",
                msg: format!("must lie in [0,1], got {}", self.p),
            });
        }
        if !(self.gamma > 0.0 && self.gamma <= 0.5) {
            return Err(Error::Parameter {
                name: "gamma",
                msg: format!("must lie in (0, 1/2], got {}", self.gamma),
            });
        }
        if !(0.0..1.0).contains(&self.min_cluster_fraction) {
            return Err(Error::Parameter {
                name: "min_cluster_fraction",
                msg: "must lie in [0, 1)".into(),
            });
        }
        Ok(())
    }
}

/// The origin's open cluster: vertices with their coordinates, open edges,
/// and the closed intra-cluster edges available to growth schedules.
#[derive(Debug)]
pub struct ClusterGraph {
    pub d: u32,
    pub half_side: u32,
    /// Coordinate names, cluster-local indexing.
    pub names: Vec<String>,
    /// Flat coordinates, `d` per vertex.
    pub coords: Vec<i32>,
    /// Cluster-local index of the origin.
    pub origin: usize,
    pub open_edges: Vec<(usize, usize)>,
    pub closed_edges: Vec<(usize, usize)>,
    /// Number of sites in the full box (for the size threshold report).
    pub box_sites: usize,
    /// How many attempts the sampler used.
    pub attempts: u32,
}

struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (ra, rb) = if self.rank[ra as usize] < self.rank[rb as usize] {
            (rb, ra)
        } else {
            (ra, rb)
        };
        self.parent[rb as usize] = ra;
        if self.rank[ra as usize] == self.rank[rb as usize] {
            self.rank[ra as usize] += 1;
        }
    }
}

struct BoxGeometry {
    d: usize,
    side: i64,
    half: i64,
}

impl BoxGeometry {
    fn new(d: u32, half_side: u32) -> Self {
        BoxGeometry {
            d: d as usize,
            side: 2 * half_side as i64 + 1,
            half: half_side as i64,
        }
    }

    fn n_sites(&self) -> usize {
        (self.side as u64).pow(self.d as u32) as usize
    }

    fn coord_of(&self, mut idx: usize) -> Vec<i32> {
        let mut c = vec![0i32; self.d];
        for a in (0..self.d).rev() {
            c[a] = (idx as i64 % self.side - self.half) as i32;
            idx /= self.side as usize;
        }
        c
    }

    fn index_of(&self, c: &[i32]) -> usize {
        let mut idx = 0usize;
        for &x in c {
            idx = idx * self.side as usize + (x as i64 + self.half) as usize;
        }
        idx
    }

    /// Lattice edges in fixed site-major, axis-minor order.
    fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for i in 0..self.n_sites() {
            let c = self.coord_of(i);
            for a in 0..self.d {
                if (c[a] as i64) < self.half {
                    let mut c2 = c.clone();
                    c2[a] += 1;
                    out.push((i as u32, self.index_of(&c2) as u32));
                }
            }
        }
        out
    }
}

/// Percolates the box and extracts the origin's open cluster, resampling
/// until it reaches the configured fraction of the box volume (the finite
/// surrogate of conditioning on the infinite cluster).
pub fn generate_cluster(cfg: &PercConfig) -> Result<ClusterGraph> {
    cfg.validate()?;
    let geometry = BoxGeometry::new(cfg.d, cfg.half_side);
    let n = geometry.n_sites();
    let all_edges = geometry.edges();
    let origin_global = geometry.index_of(&vec![0; cfg.d as usize]);
    let min_size = (cfg.min_cluster_fraction * n as f64).ceil() as usize;
    for attempt in 0..cfg.max_retries {
        let mut rng = replica_rng(cfg.seed, attempt as u64);
        let mut open = vec![false; all_edges.len()];
        let mut uf = UnionFind::new(n);
        for (i, &(a, b)) in all_edges.iter().enumerate() {
            if rng.random::<f64>() < cfg.p {
                open[i] = true;
                uf.union(a, b);
            }
        }
        let root = uf.find(origin_global as u32);
        let mut local = vec![u32::MAX; n];
        let mut names = Vec::new();
        let mut coords = Vec::new();
        for (site, slot) in local.iter_mut().enumerate() {
            if uf.find(site as u32) == root {
                *slot = names.len() as u32;
                let c = geometry.coord_of(site);
                names.push(
                    c.iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                );
                coords.extend(c);
            }
        }
        if names.len() < min_size.max(1) {
            continue;
        }
        let mut open_edges = Vec::new();
        let mut closed_edges = Vec::new();
        for (i, &(a, b)) in all_edges.iter().enumerate() {
            let (la, lb) = (local[a as usize], local[b as usize]);
            if la == u32::MAX || lb == u32::MAX {
                continue;
            }
            if open[i] {
                open_edges.push((la as usize, lb as usize));
            } else {
                closed_edges.push((la as usize, lb as usize));
            }
        }
        return Ok(ClusterGraph {
            d: cfg.d,
            half_side: cfg.half_side,
            origin: local[origin_global] as usize,
            names,
            coords,
            open_edges,
            closed_edges,
            box_sites: n,
            attempts: attempt + 1,
        });
    }
    Err(Error::RetryCapExhausted {
        tries: cfg.max_retries,
    })
}

/// Builds the walk environment over a cluster: unit conductance on open
/// edges, scheduled insertion of the configured closed edges, and
/// per-vertex self-loops tracking `gamma/(1-gamma)` times the current
/// degree (for the default `gamma = 1/2`, the loop equals the degree and
/// the staying probability is exactly 1/2).
pub fn growing_env(cluster: &ClusterGraph, cfg: &PercConfig, horizon: u32) -> Result<DynEnv<f64>> {
    cfg.validate()?;
    let n = cluster.names.len();
    let name_index: BTreeMap<&str, usize> = cluster
        .names
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let canon = |u: usize, v: usize| if u <= v { (u, v) } else { (v, u) };
    let closed_set: std::collections::BTreeSet<(usize, usize)> = cluster
        .closed_edges
        .iter()
        .map(|&(u, v)| canon(u, v))
        .collect();

    // Resolve every batch into concrete edges, validating as the schedule
    // demands: existing vertices only, lattice-adjacent, currently closed.
    let mut inserted: std::collections::BTreeSet<(usize, usize)> = Default::default();
    let mut insertions: Vec<(u32, Vec<(usize, usize)>)> = Vec::new();
    let mut prev_t = 0u32;
    for (batch_idx, (t, batch)) in cfg.growth_schedule.iter().enumerate() {
        if *t == 0 || *t <= prev_t {
            return Err(Error::Parameter {
                name: "growth_schedule",
                msg: "insertion times must be strictly increasing from 1".into(),
            });
        }
        if *t > horizon {
            return Err(Error::Parameter {
                name: "growth_schedule",
                msg: format!("insertion time {t} beyond horizon {horizon}"),
            });
        }
        prev_t = *t;
        let remaining: Vec<(usize, usize)> = closed_set
            .iter()
            .copied()
            .filter(|e| !inserted.contains(e))
            .collect();
        let edges = match batch {
            GrowthBatch::AllClosed => remaining,
            GrowthBatch::RandomClosed { count } => {
                let mut rng = replica_rng(cfg.seed ^ 0x6772_6f77, batch_idx as u64);
                let mut pool = remaining;
                let take = (*count).min(pool.len());
                let mut chosen = Vec::with_capacity(take);
                for _ in 0..take {
                    let i = rng.random_range(0..pool.len());
                    chosen.push(pool.swap_remove(i));
                }
                chosen.sort_unstable();
                chosen
            }
            GrowthBatch::Edges { pairs } => {
                let mut out = Vec::with_capacity(pairs.len());
                for (a, b) in pairs {
                    let ia = *name_index
                        .get(a.as_str())
                        .ok_or_else(|| Error::GrowthEdge {
                            u: a.clone(),
                            v: b.clone(),
                            why: "endpoint outside the cluster vertex set".into(),
                        })?;
                    let ib = *name_index
                        .get(b.as_str())
                        .ok_or_else(|| Error::GrowthEdge {
                            u: a.clone(),
                            v: b.clone(),
                            why: "endpoint outside the cluster vertex set".into(),
                        })?;
                    let e = canon(ia, ib);
                    if !closed_set.contains(&e) {
                        return Err(Error::GrowthEdge {
                            u: a.clone(),
                            v: b.clone(),
                            why: "not a closed lattice edge of the cluster".into(),
                        });
                    }
                    if inserted.contains(&e) {
                        return Err(Error::GrowthEdge {
                            u: a.clone(),
                            v: b.clone(),
                            why: "already inserted by an earlier batch".into(),
                        });
                    }
                    out.push(e);
                }
                out
            }
        };
        inserted.extend(edges.iter().copied());
        insertions.push((*t, edges));
    }

    // Degree trajectory per vertex; loops track it scaled by c.
    let c = cfg.gamma / (1.0 - cfg.gamma);
    let mut degree: Vec<f64> = vec![0.0; n];
    for &(u, v) in &cluster.open_edges {
        degree[u] += 1.0;
        degree[v] += 1.0;
    }
    let mut specs: Vec<(usize, usize, Schedule<f64>)> = Vec::new();
    for &(u, v) in &cluster.open_edges {
        specs.push((u, v, Schedule::constant(1.0)));
    }
    let mut loop_changes: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    let mut deg_now = degree.clone();
    for (t, edges) in &insertions {
        for &(u, v) in edges {
            specs.push((u, v, Schedule::new(0.0, vec![(*t, 1.0)])?));
            deg_now[u] += 1.0;
            deg_now[v] += 1.0;
        }
        for x in 0..n {
            let w = c * deg_now[x];
            let prev = loop_changes[x].last().map_or(c * degree[x], |(_, w)| *w);
            if w != prev {
                loop_changes[x].push((*t, w));
            }
        }
    }
    for x in 0..n {
        specs.push((
            x,
            x,
            Schedule::new(c * degree[x], std::mem::take(&mut loop_changes[x]))?,
        ));
    }

    let lattice = LatticeInfo {
        dim: cluster.d,
        coords: cluster.coords.clone(),
        lo: -(cluster.half_side as i32),
        hi: cluster.half_side as i32,
        full_box: false,
        wired_vertex: None,
        origin: Some(cluster.origin),
    };
    DynEnv::with_lattice(cluster.names.clone(), specs, horizon, Some(lattice))
}

/// Per-walk outcome of a transience experiment.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WalkStat {
    /// Entries into the origin (arrivals from another vertex).
    pub returns: u32,
    /// Step of the last entry, if any.
    pub last_entry: Option<u64>,
    /// Step at which the walk hit the box shell and was killed, if any.
    pub killed_at: Option<u64>,
    /// Whether the walk occupied the origin at any step past `t_max / 2`.
    pub late_visit: bool,
}

/// Aggregate of a return-count campaign.
#[derive(Debug, Clone, Serialize)]
pub struct TransienceSummary {
    pub n_walks: u32,
    pub t_max: u64,
    /// Histogram of per-walk entry counts.
    pub return_histogram: BTreeMap<u32, u32>,
    /// Fraction of walks visiting the origin after `t_max / 2`.
    pub late_return_fraction: f64,
    /// Fraction of walks killed on the shell before `t_max`.
    pub kill_fraction: f64,
    /// Median of the per-walk entry counts.
    pub median_returns: f64,
    /// Degenerate-control flag: almost every walk still sits on the origin
    /// late in the run.
    pub non_transient_flag: bool,
    #[serde(skip)]
    pub per_walk: Vec<WalkStat>,
}

/// Per-epoch sampling tables for the lazy walk: cumulative transition rows
/// in CSR layout, rebuilt at each schedule change point.
struct WalkTables {
    starts: Vec<u32>,
    offsets: Vec<Vec<u32>>,
    targets: Vec<Vec<u32>>,
    cumprob: Vec<Vec<f64>>,
}

impl WalkTables {
    fn build(env: &DynEnv<f64>) -> Result<Self> {
        let n = env.n_vertices();
        let starts = env.change_points();
        let mut offsets = Vec::with_capacity(starts.len());
        let mut targets = Vec::with_capacity(starts.len());
        let mut cumprob = Vec::with_capacity(starts.len());
        for &t in &starts {
            let mut off = Vec::with_capacity(n + 1);
            let mut tgt = Vec::new();
            let mut cum = Vec::new();
            off.push(0u32);
            for x in 0..n {
                let mut acc = 0.0;
                for (y, p) in env.one_step_row(t, x)? {
                    acc += p;
                    tgt.push(y as u32);
                    cum.push(acc);
                }
                off.push(tgt.len() as u32);
            }
            offsets.push(off);
            targets.push(tgt);
            cumprob.push(cum);
        }
        Ok(WalkTables {
            starts,
            offsets,
            targets,
            cumprob,
        })
    }

    fn epoch(&self, t: u32) -> usize {
        self.starts.partition_point(|&s| s <= t) - 1
    }

    fn step<R: Rng + ?Sized>(&self, epoch: usize, x: u32, rng: &mut R) -> u32 {
        let off = &self.offsets[epoch];
        let (lo, hi) = (off[x as usize] as usize, off[x as usize + 1] as usize);
        let u: f64 = rng.random();
        let cum = &self.cumprob[epoch][lo..hi];
        let tgt = &self.targets[epoch][lo..hi];
        for (i, &c) in cum.iter().enumerate() {
            if u <= c {
                return tgt[i];
            }
        }
        tgt[tgt.len() - 1]
    }
}

/// Runs `n_walks` lazy walks of `t_max` steps from the origin, killing at
/// the box shell, and summarizes entry counts and late visits.
pub fn transience_experiment(
    env: &DynEnv<f64>,
    n_walks: u32,
    t_max: u64,
    master_seed: u64,
) -> Result<TransienceSummary> {
    let lattice = env.lattice().ok_or(Error::NotLatticeBox)?;
    let origin = lattice.origin.ok_or_else(|| Error::Parameter {
        name: "env",
        msg: "environment carries no origin vertex".into(),
    })?;
    if t_max > env.horizon() as u64 {
        return Err(Error::BeyondHorizon {
            t: t_max as u32,
            horizon: env.horizon(),
        });
    }
    let tables = WalkTables::build(env)?;
    let n = env.n_vertices();
    let shell: Vec<bool> = (0..n).map(|v| lattice.is_shell(v)).collect();
    let origin_coord = lattice.coord(origin).to_vec();
    let dim = lattice.dim as usize;
    let coords = &lattice.coords;

    let run_one = |replica: u64| -> WalkStat {
        let mut rng = replica_rng(master_seed, replica);
        let mut x = origin as u32;
        let mut returns = 0u32;
        let mut last_entry = None;
        let mut killed_at = None;
        let mut late_visit = false;
        let half = t_max / 2;
        let mut epoch = tables.epoch(0);
        let mut next_change = tables.starts.get(epoch + 1).copied().unwrap_or(u32::MAX);
        for step in 1..=t_max {
            // The move into `step` reads conductances at time `step - 1`.
            if step as u32 > next_change {
                epoch = tables.epoch(step as u32 - 1);
                next_change = tables.starts.get(epoch + 1).copied().unwrap_or(u32::MAX);
            }
            let prev = x;
            x = tables.step(epoch, x, &mut rng);
            // Support growth is at most linear: after `step` moves the walk
            // sits within L-infinity distance `step` of the origin.
            let c = &coords[x as usize * dim..(x as usize + 1) * dim];
            let within = c
                .iter()
                .zip(&origin_coord)
                .all(|(a, b)| ((a - b).unsigned_abs() as u64) <= step);
            assert!(within, "walk escaped the linear-growth cone");
            if x != prev && x == origin as u32 {
                returns += 1;
                last_entry = Some(step);
            }
            if x == origin as u32 && step > half {
                late_visit = true;
            }
            if shell[x as usize] {
                killed_at = Some(step);
                break;
            }
        }
        WalkStat {
            returns,
            last_entry,
            killed_at,
            late_visit,
        }
    };

    // Fan replicas out to a worker pool; the per-replica RNG depends only
    // on (master seed, replica), so the merge is deterministic no matter
    // how many workers run.
    let workers = worker_count().min(n_walks.max(1) as usize);
    let mut per_walk: Vec<WalkStat> = Vec::with_capacity(n_walks as usize);
    if workers <= 1 {
        per_walk.extend((0..n_walks as u64).map(run_one));
    } else {
        let chunks: Vec<Vec<u64>> = (0..workers)
            .map(|w| {
                (0..n_walks as u64)
                    .filter(|r| *r as usize % workers == w)
                    .collect()
            })
            .collect();
        let mut results: Vec<(u64, WalkStat)> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| {
                    scope.spawn(|| chunk.iter().map(|&r| (r, run_one(r))).collect::<Vec<_>>())
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("walk worker"))
                .collect()
        });
        results.sort_by_key(|(r, _)| *r);
        per_walk.extend(results.into_iter().map(|(_, s)| s));
    }

    let mut return_histogram = BTreeMap::new();
    for s in &per_walk {
        *return_histogram.entry(s.returns).or_insert(0u32) += 1;
    }
    let late = per_walk.iter().filter(|s| s.late_visit).count();
    let killed = per_walk.iter().filter(|s| s.killed_at.is_some()).count();
    let mut counts: Vec<u32> = per_walk.iter().map(|s| s.returns).collect();
    counts.sort_unstable();
    let median_returns = if counts.is_empty() {
        0.0
    } else if counts.len() % 2 == 1 {
        counts[counts.len() / 2] as f64
    } else {
        (counts[counts.len() / 2 - 1] as f64 + counts[counts.len() / 2] as f64) / 2.0
    };
    let late_return_fraction = late as f64 / per_walk.len().max(1) as f64;
    Ok(TransienceSummary {
        n_walks,
        t_max,
        return_histogram,
        late_return_fraction,
        kill_fraction: killed as f64 / per_walk.len().max(1) as f64,
        median_returns,
        non_transient_flag: late_return_fraction >= 0.9,
        per_walk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(d: u32, half: u32, p: f64, seed: u64) -> PercConfig {
        PercConfig {
            d,
            half_side: half,
            p,
            seed,
            growth_schedule: vec![],
            min_cluster_fraction: 0.1,
            max_retries: 8,
            gamma: 0.5,
        }
    }

    #[test]
    fn full_retention_gives_the_whole_box() {
        let cluster = generate_cluster(&tiny_cfg(2, 2, 1.0, 1)).unwrap();
        assert_eq!(cluster.names.len(), 25);
        assert_eq!(cluster.closed_edges.len(), 0);
        assert_eq!(cluster.open_edges.len(), 2 * 5 * 4);
        assert_eq!(cluster.attempts, 1);
    }

    #[test]
    fn zero_retention_exhausts_retries() {
        assert!(matches!(
            generate_cluster(&tiny_cfg(2, 2, 0.0, 1)),
            Err(Error::RetryCapExhausted { tries: 8 })
        ));
    }

    #[test]
    fn supercritical_3d_clusters_usually_clear_the_threshold() {
        // p = 0.4 is well above criticality; most seeds pass on the first
        // draw. Recorded as a frequency, not asserted per seed.
        let mut first_try = 0;
        for seed in 0..20 {
            let cluster = generate_cluster(&tiny_cfg(3, 4, 0.4, seed)).unwrap();
            if cluster.attempts == 1 {
                first_try += 1;
            }
        }
        assert!(
            first_try >= 15,
            "only {first_try}/20 seeds passed on the first draw"
        );
    }

    #[test]
    fn static_env_is_lazy_with_bounded_conductance() {
        let cluster = generate_cluster(&tiny_cfg(2, 3, 0.6, 7)).unwrap();
        let env = growing_env(&cluster, &tiny_cfg(2, 3, 0.6, 7), 10).unwrap();
        assert_eq!(env.laziness_coefficient(), 0.5);
        for x in 0..env.n_vertices() {
            let pi = env.vertex_conductance(0, x).unwrap();
            assert!(pi <= 2.0 * 4.0, "pi = {pi} exceeds twice the max degree");
        }
    }

    #[test]
    fn inserting_all_closed_edges_grows_conductances() {
        let cfg = PercConfig {
            growth_schedule: vec![(1, GrowthBatch::AllClosed)],
            ..tiny_cfg(2, 3, 0.55, 11)
        };
        let cluster = generate_cluster(&cfg).unwrap();
        assert!(
            !cluster.closed_edges.is_empty(),
            "need closed edges for the test"
        );
        let env = growing_env(&cluster, &cfg, 4).unwrap();
        let rep = env.monotonicity_report().unwrap();
        assert!(rep.is_nondecreasing);
        assert!(rep.beta[1] <= 1.0);
        assert_eq!(env.laziness_coefficient(), 0.5);
        // Every formerly closed intra-cluster edge now carries conductance.
        for &(u, v) in &cluster.closed_edges {
            assert_eq!(env.edge_weight(1, u, v).unwrap(), 1.0);
            assert_eq!(env.edge_weight(0, u, v).unwrap(), 0.0);
        }
    }

    #[test]
    fn growth_validation_rejects_bad_edges() {
        let cfg = tiny_cfg(2, 2, 0.9, 3);
        let cluster = generate_cluster(&cfg).unwrap();
        let bad = PercConfig {
            growth_schedule: vec![(
                1,
                GrowthBatch::Edges {
                    pairs: vec![("0,0".into(), "99,99".into())],
                },
            )],
            ..cfg.clone()
        };
        assert!(matches!(
            growing_env(&cluster, &bad, 4),
            Err(Error::GrowthEdge { .. })
        ));
        // An already open edge is not a closed edge.
        let open = cluster.open_edges[0];
        let bad2 = PercConfig {
            growth_schedule: vec![(
                1,
                GrowthBatch::Edges {
                    pairs: vec![(cluster.names[open.0].clone(), cluster.names[open.1].clone())],
                },
            )],
            ..cfg
        };
        assert!(matches!(
            growing_env(&cluster, &bad2, 4),
            Err(Error::GrowthEdge { .. })
        ));
    }

    #[test]
    fn edge_insertion_never_decreases_exact_kappa() {
        use crate::isoperimetry::{kappa, IsoConfig, KappaMode};
        // A tiny cluster (<= 18 vertices) checked before and after growth.
        let cfg = PercConfig {
            min_cluster_fraction: 0.3,
            ..tiny_cfg(2, 1, 0.7, 2)
        };
        let cluster = generate_cluster(&cfg).unwrap();
        assert!(cluster.names.len() <= 18);
        let env0 = growing_env(&cluster, &cfg, 2).unwrap();
        let grown_cfg = PercConfig {
            growth_schedule: vec![(1, GrowthBatch::AllClosed)],
            ..cfg
        };
        let env1 = growing_env(&cluster, &grown_cfg, 2).unwrap();
        let iso = IsoConfig::new(2.0, KappaMode::HalfVolume).unwrap();
        let before = kappa(&env0, 0, &iso).unwrap();
        let after = kappa(&env1, 1, &iso).unwrap();
        assert!(
            after >= before - 1e-12,
            "kappa fell from {before} to {after}"
        );
    }

    #[test]
    fn frozen_walk_flags_non_transient() {
        // All-loop environment: no open edges, the walk never moves.
        let lattice = LatticeInfo {
            dim: 1,
            coords: vec![0],
            lo: -1,
            hi: 1,
            full_box: false,
            wired_vertex: None,
            origin: Some(0),
        };
        let env = DynEnv::with_lattice(
            vec!["0".into()],
            vec![(0, 0, Schedule::constant(1.0))],
            1000,
            Some(lattice),
        )
        .unwrap();
        let summary = transience_experiment(&env, 20, 1000, 5).unwrap();
        assert!(summary.non_transient_flag);
        assert_eq!(summary.late_return_fraction, 1.0);
        assert_eq!(summary.kill_fraction, 0.0);
        // The walk never arrives from elsewhere, so entry counts are zero.
        assert_eq!(summary.return_histogram[&0], 20);
    }

    #[test]
    fn one_dimensional_control_keeps_returning() {
        let cfg = tiny_cfg(1, 400, 1.0, 9);
        let cluster = generate_cluster(&cfg).unwrap();
        let env = growing_env(&cluster, &cfg, 4000).unwrap();
        let summary = transience_experiment(&env, 60, 4000, 17).unwrap();
        // A lazy 1-d walk revisits the origin late in the run roughly half
        // the time (trend check, generous band).
        assert!(
            summary.late_return_fraction > 0.2,
            "1-d late-return fraction {}",
            summary.late_return_fraction
        );
        assert!(summary.median_returns >= 1.0);
    }

    #[test]
    fn walk_sampler_matches_exact_kernel_across_growth() {
        // The per-epoch sampling tables must agree with the exact kernel
        // composition, including across an edge-insertion change point.
        use crate::exact_chain::multi_step_kernel;
        use crate::seeding::replica_rng;
        let cfg = PercConfig {
            growth_schedule: vec![(3, GrowthBatch::AllClosed)],
            ..tiny_cfg(2, 2, 0.8, 13)
        };
        let cluster = generate_cluster(&cfg).unwrap();
        assert!(
            !cluster.closed_edges.is_empty(),
            "seed must leave closed edges for the growth step"
        );
        let env = growing_env(&cluster, &cfg, 6).unwrap();
        let origin = env.lattice().unwrap().origin.unwrap();
        let k = multi_step_kernel(&env, 0, 6).unwrap();
        let tables = WalkTables::build(&env).unwrap();
        let n = env.n_vertices();
        let n_walks = 50_000u64;
        let mut counts = vec![0.0f64; n];
        for r in 0..n_walks {
            let mut rng = replica_rng(77, r);
            let mut x = origin as u32;
            for step in 1..=6u32 {
                let epoch = tables.epoch(step - 1);
                x = tables.step(epoch, x, &mut rng);
            }
            counts[x as usize] += 1.0;
        }
        let tv: f64 = (0..n)
            .map(|y| (counts[y] / n_walks as f64 - k.get(origin, y)).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "TV distance {tv} between sampler and exact kernel");
    }

    #[test]
    fn determinism_across_worker_counts() {
        let cfg = tiny_cfg(2, 10, 0.7, 21);
        let cluster = generate_cluster(&cfg).unwrap();
        let env = growing_env(&cluster, &cfg, 500).unwrap();
        let a = transience_experiment(&env, 16, 500, 3).unwrap();
        std::env::set_var("EVOSET_WORKERS", "1");
        let b = transience_experiment(&env, 16, 500, 3).unwrap();
        std::env::remove_var("EVOSET_WORKERS");
        assert_eq!(a.return_histogram, b.return_histogram);
        assert_eq!(a.late_return_fraction, b.late_return_fraction);
        assert_eq!(a.kill_fraction, b.kill_fraction);
    }
}

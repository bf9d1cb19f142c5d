//! Isoperimetric quantities: the constant `kappa`, the growth functions
//! `psi_d` and `psi_{d,beta}`, lattice lower bounds and the interior-time
//! ratio condition.
//!
//! `kappa_t` is the infimum over vertex subsets `A` of
//! `pi_t(A, A^c) / pi_t(A)^{(d-1)/d}`. On a finite graph the unrestricted
//! infimum is degenerate (taking `A` to be everything kills the boundary),
//! so three conventions are offered:
//!
//! * `ExactEnumeration` - every nonempty subset of `V_t`, full set
//!   included; faithful to the formula on the truncation, degenerate to 0
//!   on a free finite graph, meaningful on wired boxes where cuts to the
//!   collapsed exterior survive.
//! * `HalfVolume` - subsets with `pi_t(A) <= pi_t(V_t)/2`; the usable
//!   finite surrogate and the default input for `psi`.
//! * `LatticeAnalytic` - the closed-form lower bound
//!   `C1^{-1} c (c C1)^{-(d-1)/d}` with `c = 2 dim`, valid for a full
//!   lattice box with uniformly elliptic weights in `[C1^{-1}, C1]` under
//!   the wired-boundary convention.
//!
//! Both enumerative conventions are reported side by side by the harness's
//! kappa-table task, so the truncation artifact stays visible.

use crate::dyn_graph::DynEnv;
use crate::error::{Error, Result};

/// Vertex cap for subset enumeration.
pub const EXACT_ENUM_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaMode {
    ExactEnumeration,
    HalfVolume,
    LatticeAnalytic,
}

impl KappaMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "exact" | "exact_enumeration" => Ok(KappaMode::ExactEnumeration),
            "half_volume" => Ok(KappaMode::HalfVolume),
            "lattice_analytic" | "wired_analytic" => Ok(KappaMode::LatticeAnalytic),
            other => Err(Error::Parameter {
                name: "mode",
                msg: format!("unknown kappa mode {other:?}"),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KappaMode::ExactEnumeration => "exact",
            KappaMode::HalfVolume => "half_volume",
            KappaMode::LatticeAnalytic => "lattice_analytic",
        }
    }
}

/// Configuration for the isoperimetric machinery: the dimension `d > 1`,
/// the subset convention, and the ratio-condition parameter
/// `lambda` in (0, 1/2] (default 1/3).
#[derive(Debug, Clone, Copy)]
pub struct IsoConfig {
    pub d: f64,
    pub mode: KappaMode,
    pub lambda: f64,
}

impl IsoConfig {
    pub fn new(d: f64, mode: KappaMode) -> Result<Self> {
        if !(d > 1.0) {
            return Err(Error::Parameter {
                name: "d",
                msg: format!("must exceed 1, got {d}"),
            });
        }
        Ok(IsoConfig {
            d,
            mode,
            lambda: 1.0 / 3.0,
        })
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 0.5) {
            return Err(Error::Parameter {
                name: "lambda",
                msg: format!("must lie in (0, 1/2], got {lambda}"),
            });
        }
        self.lambda = lambda;
        Ok(self)
    }
}

struct SubsetScan {
    /// Universe vertex ids (active vertices, wired exterior excluded).
    verts: Vec<usize>,
    /// Vertex masses.
    vol: Vec<f64>,
    /// Per-vertex adjacency inside the universe: (universe index, weight).
    adj: Vec<Vec<(usize, f64)>>,
    /// Per-vertex conductance leaving the universe (wired stubs, etc.).
    ext: Vec<f64>,
    total_mass: f64,
    half_volume: bool,
    exponent: f64,
}

impl SubsetScan {
    fn build(env: &DynEnv<f64>, t: u32, cfg: &IsoConfig) -> Result<Self> {
        let mut verts = env.active_vertices(t)?;
        if let Some(l) = env.lattice() {
            if let Some(g) = l.wired_vertex {
                verts.retain(|&v| v != g);
            }
        }
        let n = verts.len();
        if n > EXACT_ENUM_CAP {
            return Err(Error::GraphTooLarge {
                n,
                cap: EXACT_ENUM_CAP,
            });
        }
        let pos: std::collections::BTreeMap<usize, usize> =
            verts.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut vol = Vec::with_capacity(n);
        let mut adj = vec![Vec::new(); n];
        let mut ext = vec![0.0; n];
        for (i, &v) in verts.iter().enumerate() {
            vol.push(env.vertex_conductance(t, v)?);
            // Loops never contribute to any cut; skip them here.
            for (y, _) in env.one_step_row(t, v)? {
                if y == v {
                    continue;
                }
                let w = env.edge_weight(t, v, y)?;
                match pos.get(&y) {
                    Some(&j) => adj[i].push((j, w)),
                    None => ext[i] += w,
                }
            }
        }
        let mut total_mass = 0.0;
        for &v in env.active_vertices(t)?.iter() {
            total_mass += env.vertex_conductance(t, v)?;
        }
        Ok(SubsetScan {
            verts,
            vol,
            adj,
            ext,
            total_mass,
            half_volume: cfg.mode == KappaMode::HalfVolume,
            exponent: (cfg.d - 1.0) / cfg.d,
        })
    }

    fn cut_and_vol_exact(&self, mask: u32) -> (f64, f64) {
        let mut cut = 0.0;
        let mut vol = 0.0;
        for i in 0..self.verts.len() {
            if mask >> i & 1 == 0 {
                continue;
            }
            vol += self.vol[i];
            cut += self.ext[i];
            for &(j, w) in &self.adj[i] {
                if mask >> j & 1 == 0 {
                    cut += w;
                }
            }
        }
        (cut, vol)
    }

    fn admissible(&self, vol: f64) -> bool {
        !self.half_volume || 2.0 * vol <= self.total_mass
    }

    fn ratio(&self, cut: f64, vol: f64) -> f64 {
        cut / vol.powf(self.exponent)
    }

    /// Gray-code scan over all nonempty subsets of a block (fixed high
    /// bits), with incremental cut/volume updates. Candidates near the
    /// running minimum are re-evaluated from scratch so rounding drift in
    /// the incremental state can never corrupt the reported infimum.
    fn scan_block(&self, prefix: u32, low_bits: u32) -> f64 {
        const SLACK: f64 = 1e-6;
        let mut best = f64::INFINITY;
        let mut mask = prefix;
        let (mut cut, mut vol) = self.cut_and_vol_exact(mask);
        let consider = |scan: &Self, mask: u32, cut: f64, vol: f64, best: &mut f64| {
            if mask == 0 {
                return;
            }
            if !scan.admissible(vol) {
                return;
            }
            let r = scan.ratio(cut, vol);
            if r <= *best + SLACK {
                let (c, v) = scan.cut_and_vol_exact(mask);
                if scan.admissible(v) {
                    let exact = scan.ratio(c, v);
                    if exact < *best {
                        *best = exact;
                    }
                }
            }
        };
        consider(self, mask, cut, vol, &mut best);
        for g in 1u32..(1u32 << low_bits) {
            let i = g.trailing_zeros() as usize;
            let joining = mask >> i & 1 == 0;
            mask ^= 1 << i;
            let sign = if joining { 1.0 } else { -1.0 };
            vol += sign * self.vol[i];
            cut += sign * self.ext[i];
            // An edge to an outside neighbor moves with the flipped vertex;
            // an edge to an inside neighbor moves against it.
            for &(j, w) in &self.adj[i] {
                if mask >> j & 1 == 0 {
                    cut += sign * w;
                } else {
                    cut -= sign * w;
                }
            }
            consider(self, mask, cut, vol, &mut best);
        }
        best
    }

    fn run(&self) -> f64 {
        let n = self.verts.len() as u32;
        if n == 0 {
            return f64::INFINITY;
        }
        let workers = crate::seeding::worker_count();
        if n >= 16 && workers > 1 {
            // Partition the subset space on the top two bits; min-merge.
            let low = n - 2;
            let results: Vec<f64> = std::thread::scope(|scope| {
                (0u32..4)
                    .map(|b| scope.spawn(move || self.scan_block(b << low, low)))
                    .collect::<Vec<_>>()
                    .into_iter()
                    .map(|h| h.join().expect("kappa worker"))
                    .collect()
            });
            results.into_iter().fold(f64::INFINITY, f64::min)
        } else {
            self.scan_block(0, n)
        }
    }
}

/// The isoperimetric constant `kappa_t` under the configured convention.
pub fn kappa(env: &DynEnv<f64>, t: u32, cfg: &IsoConfig) -> Result<f64> {
    match cfg.mode {
        KappaMode::LatticeAnalytic => lattice_analytic_kappa(env, t, cfg),
        _ => {
            let scan = SubsetScan::build(env, t, cfg)?;
            let k = scan.run();
            Ok(if k.is_finite() { k } else { 0.0 })
        }
    }
}

/// Independent reference enumerator: a plain bitmask loop that recomputes
/// every cut and volume from scratch. Kept deliberately separate from the
/// Gray-code scan so the two can cross-check each other.
pub fn kappa_reference(env: &DynEnv<f64>, t: u32, cfg: &IsoConfig) -> Result<f64> {
    if cfg.mode == KappaMode::LatticeAnalytic {
        return Err(Error::Parameter {
            name: "mode",
            msg: "reference enumeration applies to the enumerative modes".into(),
        });
    }
    let scan = SubsetScan::build(env, t, cfg)?;
    let n = scan.verts.len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1u32 << n) {
        let (cut, vol) = scan.cut_and_vol_exact(mask);
        if scan.admissible(vol) {
            best = best.min(scan.ratio(cut, vol));
        }
    }
    Ok(if best.is_finite() { best } else { 0.0 })
}

/// Upper bound on `kappa_t` from singleton sets:
/// `inf_v pi_t({v})^{1/d}` dominates the infimum because a singleton's cut
/// is at most its mass.
pub fn singleton_upper_bound(env: &DynEnv<f64>, t: u32, cfg: &IsoConfig) -> Result<f64> {
    let mut best = f64::INFINITY;
    for v in env.active_vertices(t)? {
        if env.lattice().and_then(|l| l.wired_vertex) == Some(v) {
            continue;
        }
        best = best.min(env.vertex_conductance(t, v)?.powf(1.0 / cfg.d));
    }
    Ok(best)
}

fn lattice_analytic_kappa(env: &DynEnv<f64>, t: u32, cfg: &IsoConfig) -> Result<f64> {
    let lattice = env.lattice().ok_or(Error::NotLatticeBox)?;
    if !lattice.full_box {
        return Err(Error::NotLatticeBox);
    }
    let mut w_min = f64::INFINITY;
    let mut w_max = 0.0f64;
    for &(u, v) in env.edges() {
        let w = env.edge_weight(t, u, v)?;
        if w <= 0.0 {
            return Err(Error::NotElliptic(format!(
                "edge ({u},{v}) has zero conductance at t={t}"
            )));
        }
        w_min = w_min.min(w);
        w_max = w_max.max(w);
    }
    let c1 = w_max.max(1.0 / w_min);
    let c = 2.0 * lattice.dim as f64;
    Ok(c / c1 * (c * c1).powf(-(cfg.d - 1.0) / cfg.d))
}

/// Precomputed `kappa_u` and the partial sums `psi_d`, `psi_{d,beta}` over
/// the whole horizon. `kappa` is evaluated once per schedule epoch (the
/// weights are constant in between) and cached here across all queries.
#[derive(Debug, Clone)]
pub struct PsiTable {
    kappa: Vec<f64>,
    psi: Vec<f64>,
    psi_beta: Vec<f64>,
}

impl PsiTable {
    pub fn new(env: &DynEnv<f64>, cfg: &IsoConfig) -> Result<Self> {
        let horizon = env.horizon() as usize;
        let report = env.monotonicity_report()?;
        let change_points = env.change_points();
        let mut kappa_vals = Vec::with_capacity(horizon + 1);
        let mut per_epoch: std::collections::BTreeMap<u32, f64> = std::collections::BTreeMap::new();
        for u in 0..=horizon as u32 {
            let epoch = *change_points.iter().rev().find(|&&c| c <= u).unwrap_or(&0);
            let k = match per_epoch.get(&epoch) {
                Some(k) => *k,
                None => {
                    let k = kappa(env, epoch, cfg)?;
                    per_epoch.insert(epoch, k);
                    k
                }
            };
            kappa_vals.push(k);
        }
        let mut psi = Vec::with_capacity(horizon + 2);
        let mut psi_beta = Vec::with_capacity(horizon + 2);
        psi.push(0.0);
        psi_beta.push(0.0);
        for u in 0..horizon {
            let k = kappa_vals[u];
            psi.push(psi[u] + k * k);
            let b = report.beta[u].powf(1.0 / cfg.d);
            psi_beta.push(psi_beta[u] + (b * k) * (b * k));
        }
        Ok(PsiTable {
            kappa: kappa_vals,
            psi,
            psi_beta,
        })
    }

    pub fn kappa(&self, u: u32) -> Result<f64> {
        self.kappa
            .get(u as usize)
            .copied()
            .ok_or(Error::BeyondHorizon {
                t: u,
                horizon: self.kappa.len() as u32 - 1,
            })
    }

    /// `psi_d(t)`: the growth sum without the compensator factors.
    pub fn psi(&self, t: u32) -> Result<f64> {
        self.psi
            .get(t as usize)
            .copied()
            .ok_or(Error::BeyondHorizon {
                t,
                horizon: self.psi.len() as u32 - 1,
            })
    }

    /// `psi_{d,beta}(t)`: the growth sum with `beta(u)^{1/d}` factors.
    pub fn psi_beta(&self, t: u32) -> Result<f64> {
        self.psi_beta
            .get(t as usize)
            .copied()
            .ok_or(Error::BeyondHorizon {
                t,
                horizon: self.psi_beta.len() as u32 - 1,
            })
    }
}

/// Convenience wrapper: `psi_d(t)` or `psi_{d,beta}(t)` from a fresh table.
/// Callers computing many values should hold a [`PsiTable`].
pub fn psi(env: &DynEnv<f64>, t: u32, cfg: &IsoConfig, with_beta: bool) -> Result<f64> {
    let table = PsiTable::new(env, cfg)?;
    if with_beta {
        table.psi_beta(t)
    } else {
        table.psi(t)
    }
}

/// Outcome of the interior-time search: the smallest integer `r` strictly
/// between `s` and `t` whose growth ratio lands in `[lambda, 1 - lambda]`,
/// or the reason none exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RSearch {
    Found(u32),
    /// `t = s + 1`: the open interval contains no integer.
    NoInteriorInteger,
    /// `psi_{d,beta}(t) = psi_{d,beta}(s)`: zero isoperimetric growth.
    ZeroGrowth,
    /// Interior integers exist but no ratio lands in the window.
    NoQualifyingRatio,
}

/// Searches for an interior time splitting the growth of `psi_{d,beta}`
/// proportionally between `s` and `t`.
pub fn r_condition(env: &DynEnv<f64>, s: u32, t: u32, cfg: &IsoConfig) -> Result<RSearch> {
    if s >= t {
        return Err(Error::Parameter {
            name: "s",
            msg: format!("need s < t, got {s} >= {t}"),
        });
    }
    let table = PsiTable::new(env, cfg)?;
    let base = table.psi_beta(s)?;
    let denom = table.psi_beta(t)? - base;
    if denom <= 0.0 {
        return Ok(RSearch::ZeroGrowth);
    }
    if t == s + 1 {
        return Ok(RSearch::NoInteriorInteger);
    }
    for r in (s + 1)..t {
        let ratio = (table.psi_beta(r)? - base) / denom;
        if ratio >= cfg.lambda && ratio <= 1.0 - cfg.lambda {
            return Ok(RSearch::Found(r));
        }
    }
    Ok(RSearch::NoQualifyingRatio)
}

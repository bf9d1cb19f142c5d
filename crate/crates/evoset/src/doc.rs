//! Structured text format for graphs and schedules.
//!
//! An environment is loaded from a JSON document holding either an explicit
//! vertex/edge list (each edge with a base weight and change events) or a
//! generator spec. The generator vocabulary covers lattice boxes
//! (`zd_box`: dimension, side, free or wired boundary) with seeded weight
//! bands and growth schedules.
//!
//! Weights in a document are doubles; both scalar lanes build from the same
//! document, the rational lane converting each double exactly, so the two
//! lanes always describe the same model.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyn_graph::{DynEnv, LatticeInfo, Schedule};
use crate::error::{Error, Result};
use crate::weight::Weight;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDoc {
    pub horizon: u32,
    pub graph: GraphSource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSource {
    Explicit {
        vertices: Vec<String>,
        edges: Vec<EdgeDoc>,
    },
    ZdBox(ZdBoxDoc),
}

/// One unordered pair with its piecewise-constant conductance. `u == v` is
/// a self-loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub u: String,
    pub v: String,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub changes: Vec<(u32, f64)>,
}

/// Lattice box generator: the box `{0, .., side-1}^d` with seeded edge and
/// self-loop weights. A wired boundary collapses the deleted exterior into
/// one extra vertex wired to every shell site, so cuts against the exterior
/// stay visible to the isoperimetry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZdBoxDoc {
    pub d: u32,
    pub side: u32,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default)]
    pub weights: WeightBand,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Free,
    Wired,
}

/// Uniform weight bands for generated edges and self-loops; `lo == hi`
/// pins the value. A zero loop band means no self-loops.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightBand {
    pub edge_lo: f64,
    pub edge_hi: f64,
    #[serde(default)]
    pub loop_lo: f64,
    #[serde(default)]
    pub loop_hi: f64,
}

impl Default for WeightBand {
    fn default() -> Self {
        WeightBand {
            edge_lo: 1.0,
            edge_hi: 1.0,
            loop_lo: 0.0,
            loop_hi: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    /// Conductances constant in time.
    #[default]
    Static,
    /// Multiply every conductance by a factor at each listed time; factors
    /// must be >= 1 so vertex conductances stay non-decreasing.
    ScaleAll { steps: Vec<(u32, f64)> },
    /// At each listed time, each edge independently picks a factor from
    /// `[factor_lo, factor_hi]` (both >= 1).
    GrowPerEdge {
        times: Vec<u32>,
        factor_lo: f64,
        factor_hi: f64,
    },
}

impl GraphDoc {
    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }

    /// Builds the environment in the requested scalar lane.
    pub fn build<W: Weight>(&self) -> Result<DynEnv<W>> {
        match &self.graph {
            GraphSource::Explicit { vertices, edges } => {
                build_explicit(vertices, edges, self.horizon)
            }
            GraphSource::ZdBox(spec) => build_zd_box(spec, self.horizon),
        }
    }
}

fn build_explicit<W: Weight>(
    vertices: &[String],
    edges: &[EdgeDoc],
    horizon: u32,
) -> Result<DynEnv<W>> {
    let index = |name: &str| -> Result<usize> {
        vertices
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::Document(format!("edge endpoint {name:?} not in vertex list")))
    };
    let mut specs = Vec::with_capacity(edges.len());
    for e in edges {
        let u = index(&e.u)?;
        let v = index(&e.v)?;
        let changes = e
            .changes
            .iter()
            .map(|(t, w)| (*t, W::from_f64(*w)))
            .collect();
        specs.push((u, v, Schedule::new(W::from_f64(e.weight), changes)?));
    }
    DynEnv::with_lattice(vertices.to_vec(), specs, horizon, None)
}

fn check_band(band: &WeightBand) -> Result<()> {
    let ok = |lo: f64, hi: f64| lo >= 0.0 && hi >= lo && hi.is_finite();
    if !ok(band.edge_lo, band.edge_hi) || !ok(band.loop_lo, band.loop_hi) {
        return Err(Error::Document(
            "weight band must satisfy 0 <= lo <= hi".into(),
        ));
    }
    if band.edge_lo <= 0.0 {
        return Err(Error::Document(
            "edge weights must be positive on a box".into(),
        ));
    }
    Ok(())
}

fn build_zd_box<W: Weight>(spec: &ZdBoxDoc, horizon: u32) -> Result<DynEnv<W>> {
    if spec.d == 0 || spec.d > 4 {
        return Err(Error::Document("zd_box dimension must be in 1..=4".into()));
    }
    if spec.side == 0 {
        return Err(Error::Document("zd_box side must be positive".into()));
    }
    check_band(&spec.weights)?;
    let d = spec.d as usize;
    let side = spec.side as i64;
    let n_sites = (side as u64).pow(spec.d) as usize;

    let coord_of = |mut idx: usize| -> Vec<i32> {
        let mut c = vec![0i32; d];
        for a in (0..d).rev() {
            c[a] = (idx as i64 % side) as i32;
            idx /= side as usize;
        }
        c
    };
    let index_of = |c: &[i32]| -> usize {
        let mut idx = 0usize;
        for &x in c {
            idx = idx * side as usize + x as usize;
        }
        idx
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |lo: f64, hi: f64| -> f64 {
        let u: f64 = rng.random();
        lo + (hi - lo) * u
    };

    let mut names: Vec<String> = (0..n_sites)
        .map(|i| {
            coord_of(i)
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    let mut coords: Vec<i32> = (0..n_sites).flat_map(&coord_of).collect();

    // Base weights: lattice edges in fixed site-major, axis-minor order,
    // then (for a wired box) one collapsed edge per shell site, then loops.
    let mut base: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n_sites {
        let c = coord_of(i);
        for a in 0..d {
            if c[a] + 1 < side as i32 {
                let mut c2 = c.clone();
                c2[a] += 1;
                base.push((
                    i,
                    index_of(&c2),
                    draw(spec.weights.edge_lo, spec.weights.edge_hi),
                ));
            }
        }
    }
    let wired_vertex = if spec.boundary == Boundary::Wired {
        let g = n_sites;
        names.push("exterior".into());
        coords.extend(std::iter::repeat_n(0, d)); // placeholder, never used
        for i in 0..n_sites {
            let c = coord_of(i);
            let missing = c.iter().filter(|&&x| x == 0).count()
                + c.iter().filter(|&&x| x == side as i32 - 1).count();
            if missing > 0 {
                let w: f64 = (0..missing)
                    .map(|_| draw(spec.weights.edge_lo, spec.weights.edge_hi))
                    .sum();
                base.push((i, g, w));
            }
        }
        Some(g)
    } else {
        None
    };
    if spec.weights.loop_hi > 0.0 {
        for i in 0..n_sites {
            base.push((i, i, draw(spec.weights.loop_lo, spec.weights.loop_hi)));
        }
    }

    // Apply the growth schedule on top of the base weights, in f64 so both
    // lanes see identical values.
    let mut specs: Vec<(usize, usize, Schedule<W>)> = Vec::with_capacity(base.len());
    match &spec.schedule {
        ScheduleSpec::Static => {
            for (u, v, w) in base {
                specs.push((u, v, Schedule::constant(W::from_f64(w))));
            }
        }
        ScheduleSpec::ScaleAll { steps } => {
            validate_steps(steps.iter().map(|(t, f)| (*t, *f)), horizon)?;
            for (u, v, w) in base {
                let mut cur = w;
                let changes = steps
                    .iter()
                    .map(|(t, f)| {
                        cur *= f;
                        (*t, W::from_f64(cur))
                    })
                    .collect();
                specs.push((u, v, Schedule::new(W::from_f64(w), changes)?));
            }
        }
        ScheduleSpec::GrowPerEdge {
            times,
            factor_lo,
            factor_hi,
        } => {
            if *factor_lo < 1.0 || factor_hi < factor_lo {
                return Err(Error::Document(
                    "grow factors must satisfy 1 <= lo <= hi".into(),
                ));
            }
            validate_steps(times.iter().map(|t| (*t, 1.0)), horizon)?;
            for (u, v, w) in base {
                let mut cur = w;
                let changes = times
                    .iter()
                    .map(|t| {
                        cur *= draw(*factor_lo, *factor_hi);
                        (*t, W::from_f64(cur))
                    })
                    .collect();
                specs.push((u, v, Schedule::new(W::from_f64(w), changes)?));
            }
        }
    }

    let lattice = LatticeInfo {
        dim: spec.d,
        coords,
        lo: 0,
        hi: side as i32 - 1,
        full_box: true,
        wired_vertex,
        origin: None,
    };
    DynEnv::with_lattice(names, specs, horizon, Some(lattice))
}

fn validate_steps(steps: impl Iterator<Item = (u32, f64)>, horizon: u32) -> Result<()> {
    let mut prev = 0u32;
    for (t, f) in steps {
        if t == 0 || t <= prev {
            return Err(Error::Document(
                "schedule times must be strictly increasing from 1".into(),
            ));
        }
        if t > horizon {
            return Err(Error::Document(format!(
                "schedule time {t} beyond horizon {horizon}"
            )));
        }
        if f < 1.0 {
            return Err(Error::Document("scale factors must be >= 1".into()));
        }
        prev = t;
    }
    Ok(())
}

//! Hand-built reference environments and the random environment fuzzer.
//!
//! Fuzzed environments are connected, have dyadic-rational weights (so the
//! float and rational lanes agree bit for bit on the model), carry
//! non-decreasing multiplicative schedules, and size their self-loops so
//! the walk stays uniformly lazy with constant at least 1/4.

use rand::Rng;

use crate::doc::{EdgeDoc, GraphDoc, GraphSource};
use crate::dyn_graph::DynEnv;
use crate::error::{Error, Result};
use crate::weight::Weight;

/// Two vertices `a`, `b`: unit edge, unit self-loops, constant in time.
/// The vertex conductances are 2 everywhere and every one-step move has
/// probability 1/2.
pub fn hand_e2<W: Weight>(horizon: u32) -> DynEnv<W> {
    scaled_e2(horizon, &[])
}

/// E2 with every conductance doubled from `t = 1` on.
pub fn hand_e2_doubled<W: Weight>(horizon: u32) -> DynEnv<W> {
    scaled_e2(horizon, &[(1, 2.0)])
}

/// E2 with every conductance halved from `t = 1` on (vertex conductances
/// decrease; useful for exercising the compensator path).
pub fn hand_e2_halved<W: Weight>(horizon: u32) -> DynEnv<W> {
    scaled_e2(horizon, &[(1, 0.5)])
}

fn scaled_e2<W: Weight>(horizon: u32, scales: &[(u32, f64)]) -> DynEnv<W> {
    let doc = GraphDoc {
        horizon,
        graph: GraphSource::Explicit {
            vertices: vec!["a".into(), "b".into()],
            edges: [("a", "b"), ("a", "a"), ("b", "b")]
                .into_iter()
                .map(|(u, v)| EdgeDoc {
                    u: u.into(),
                    v: v.into(),
                    weight: 1.0,
                    changes: scales.iter().map(|&(t, f)| (t, f)).collect(),
                })
                .collect(),
        },
    };
    doc.build().expect("hand graph is valid")
}

/// Triangle `a`, `b`, `c` with unit edges and unit self-loops, constant in
/// time.
pub fn hand_e3<W: Weight>(horizon: u32) -> DynEnv<W> {
    let doc = hand_e3_doc(horizon);
    doc.build().expect("hand graph is valid")
}

pub fn hand_e3_doc(horizon: u32) -> GraphDoc {
    GraphDoc {
        horizon,
        graph: GraphSource::Explicit {
            vertices: vec!["a".into(), "b".into(), "c".into()],
            edges: [
                ("a", "b"),
                ("b", "c"),
                ("a", "c"),
                ("a", "a"),
                ("b", "b"),
                ("c", "c"),
            ]
            .into_iter()
            .map(|(u, v)| EdgeDoc {
                u: u.into(),
                v: v.into(),
                weight: 1.0,
                changes: vec![],
            })
            .collect(),
        },
    }
}

pub fn hand_e2_doc(horizon: u32) -> GraphDoc {
    GraphDoc {
        horizon,
        graph: GraphSource::Explicit {
            vertices: vec!["a".into(), "b".into()],
            edges: [("a", "b"), ("a", "a"), ("b", "b")]
                .into_iter()
                .map(|(u, v)| EdgeDoc {
                    u: u.into(),
                    v: v.into(),
                    weight: 1.0,
                    changes: vec![],
                })
                .collect(),
        },
    }
}

pub const FUZZ_VERTEX_CAP: usize = 8;
pub const FUZZ_HORIZON_CAP: u32 = 4;

/// Document form of a fuzzed environment, so both scalar lanes can build
/// the identical model.
///
/// Construction: a random spanning tree plus a few extra edges; base edge
/// weights `k/8` with `k` in 4..=24; at each time step each edge optionally
/// grows by a dyadic factor from {9/8, 5/4, 3/2, 2}; each vertex carries a
/// self-loop equal to `q` times its off-diagonal total at every time, with
/// `q` in {1/2, 1, 2}, which keeps the staying probability at least 1/3
/// everywhere. When `constant` is set the schedule is empty and the model
/// is time-invariant.
pub fn random_env_doc<R: Rng + ?Sized>(
    n_vertices: usize,
    horizon: u32,
    constant: bool,
    rng: &mut R,
) -> Result<GraphDoc> {
    if n_vertices == 0 || n_vertices > FUZZ_VERTEX_CAP {
        return Err(Error::Parameter {
            name: "n_vertices",
            msg: format!("must be 1..={FUZZ_VERTEX_CAP}, got {n_vertices}"),
        });
    }
    if horizon == 0 || horizon > FUZZ_HORIZON_CAP {
        return Err(Error::Parameter {
            name: "horizon",
            msg: format!("must be 1..={FUZZ_HORIZON_CAP}, got {horizon}"),
        });
    }
    let n = n_vertices;
    let vertices: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();

    // Random spanning tree, then extra edges.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        pairs.push((u, v));
    }
    for u in 0..n {
        for v in (u + 1)..n {
            if !pairs.contains(&(u, v)) && rng.random::<f64>() < 0.3 {
                pairs.push((u, v));
            }
        }
    }
    pairs.sort_unstable();

    const FACTORS: [f64; 4] = [1.125, 1.25, 1.5, 2.0];
    let mut edges: Vec<EdgeDoc> = Vec::new();
    // Track each edge's weight at every time step to size the loops.
    let mut weight_paths: Vec<Vec<f64>> = Vec::new();
    for &(u, v) in &pairs {
        let base = rng.random_range(4..=24) as f64 / 8.0;
        let mut path = vec![base; horizon as usize + 1];
        let mut changes = Vec::new();
        if !constant {
            let mut cur = base;
            for t in 1..=horizon {
                if rng.random::<f64>() < 0.4 {
                    cur *= FACTORS[rng.random_range(0..FACTORS.len())];
                    changes.push((t, cur));
                }
                path[t as usize] = cur;
            }
        }
        edges.push(EdgeDoc {
            u: vertices[u].clone(),
            v: vertices[v].clone(),
            weight: base,
            changes,
        });
        weight_paths.push(path);
    }

    // Self-loop = q * (off-diagonal total) pointwise in time. Staying
    // probability is q/(1+q) >= 1/3 at every time, uniformly.
    const LOOP_RATIOS: [f64; 3] = [0.5, 1.0, 2.0];
    #[allow(clippy::needless_range_loop)] // x doubles as the vertex id in the pair filter
    for x in 0..n {
        let q = LOOP_RATIOS[rng.random_range(0..LOOP_RATIOS.len())];
        let off_at = |t: usize| -> f64 {
            pairs
                .iter()
                .enumerate()
                .filter(|(_, &(u, v))| u == x || v == x)
                .map(|(i, _)| weight_paths[i][t])
                .sum()
        };
        if off_at(0) == 0.0 {
            // Isolated vertex (only when n == 1): a unit loop keeps it active.
            edges.push(EdgeDoc {
                u: vertices[x].clone(),
                v: vertices[x].clone(),
                weight: 1.0,
                changes: vec![],
            });
            continue;
        }
        let base = q * off_at(0);
        let mut changes = Vec::new();
        let mut cur = base;
        for t in 1..=horizon as usize {
            let w = q * off_at(t);
            if w != cur {
                changes.push((t as u32, w));
                cur = w;
            }
        }
        edges.push(EdgeDoc {
            u: vertices[x].clone(),
            v: vertices[x].clone(),
            weight: base,
            changes,
        });
    }

    Ok(GraphDoc {
        horizon,
        graph: GraphSource::Explicit { vertices, edges },
    })
}

/// Fuzzes a random connected lazy environment with a non-decreasing
/// schedule. Caps: at most 8 vertices, horizon at most 4.
pub fn random_env_fuzzer<W: Weight, R: Rng + ?Sized>(
    n_vertices: usize,
    horizon: u32,
    rng: &mut R,
) -> Result<DynEnv<W>> {
    random_env_doc(n_vertices, horizon, false, rng)?.build()
}

/// Fuzzes a time-constant lazy environment (for the complement-duality
/// checks, which require a time-independent reversing measure).
pub fn random_constant_env<W: Weight, R: Rng + ?Sized>(
    n_vertices: usize,
    horizon: u32,
    rng: &mut R,
) -> Result<DynEnv<W>> {
    random_env_doc(n_vertices, horizon, true, rng)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::replica_rng;

    #[test]
    fn fuzzed_envs_are_nondecreasing_and_lazy() {
        let mut rng = replica_rng(42, 0);
        for i in 0..50 {
            let n = 1 + (i % FUZZ_VERTEX_CAP);
            let env: DynEnv<f64> = random_env_fuzzer(n, 4, &mut rng).unwrap();
            let rep = env.monotonicity_report().unwrap();
            assert!(
                rep.is_nondecreasing,
                "fuzzed schedule must be non-decreasing"
            );
            assert!(
                env.laziness_coefficient() >= 0.25,
                "fuzzed laziness below 1/4"
            );
        }
    }

    #[test]
    fn fuzzed_weights_are_exact_dyadics() {
        use num_rational::BigRational;
        let mut rng = replica_rng(7, 3);
        let doc = random_env_doc(5, 3, false, &mut rng).unwrap();
        let envf: DynEnv<f64> = doc.build().unwrap();
        let envq: DynEnv<BigRational> = doc.build().unwrap();
        for t in 0..=3 {
            for x in 0..5 {
                assert_eq!(
                    envf.vertex_conductance(t, x).unwrap(),
                    envq.vertex_conductance(t, x).unwrap().to_f64()
                );
            }
        }
    }

    #[test]
    fn caps_are_enforced() {
        let mut rng = replica_rng(0, 0);
        assert!(random_env_doc(9, 4, false, &mut rng).is_err());
        assert!(random_env_doc(4, 5, false, &mut rng).is_err());
    }

    #[test]
    fn e2_matches_hand_numbers() {
        let env = hand_e2::<f64>(4);
        assert_eq!(env.vertex_conductance(0, 0).unwrap(), 2.0);
        assert_eq!(env.laziness_coefficient(), 0.5);
        let env3 = hand_e3::<f64>(4);
        assert_eq!(env3.vertex_conductance(0, 0).unwrap(), 3.0);
    }
}

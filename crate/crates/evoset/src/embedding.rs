//! Continuous-time embedding of the set-mass martingale.
//!
//! Drive the evolving set by uniforms obtained from unit Brownian
//! increments, `U_{i+1} = cdf(B_{i+1} - B_i)`; between integer times the
//! set-mass martingale interpolates as
//!
//! ```text
//! M_{i+s} = sum_y pi_{i+1}(y) cdf( (H_i(S_i, y) - (B_{i+s} - B_i)) / sqrt(1 - s) )
//! ```
//!
//! where `H_i(S, y) = inv_cdf(pi_i(S, y) / pi_{i+1}(y))` is the Gaussian
//! reparametrization of the membership threshold. At `s = 0` the sum
//! telescopes to `pi_i(S_i)`; as `s -> 1` with the increment pinned it
//! converges to `pi_{i+1}(S_{i+1})` off ties. A threshold ratio of exactly
//! 0 or 1 maps to an infinite `H` (never-member / always-member) and the
//! infinities flow through the Gaussian cleanly.
//!
//! Intra-step queries can be answered two ways: independent single-point
//! bridge conditionals, or one consistent bridge path per step. Outputs
//! are labeled with the mode used.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dyn_graph::DynEnv;
use crate::error::{Error, Result};
use crate::evolving_set::{successor_law, SetState};
use crate::normal;

/// Maps standard normal deviates to the uniforms that drive the evolving
/// set. Outputs are clamped into the open interval (0,1): the closed
/// endpoints are reserved for the structural never/always-member cases.
pub fn drive_uniforms(deviates: &[f64]) -> Vec<f64> {
    deviates
        .iter()
        .map(|z| normal::cdf(*z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
        .collect()
}

/// Evaluates the interpolated set mass `M_{i+s}` given the current set and
/// the bridge value `B_{i+s} - B_i`.
///
/// `s` must lie in `[0, 1)`. The bridge value must be sampled consistently
/// with the step's endpoint increment; that conditioning is the caller's
/// job (see [`sample_bridge`] and [`sample_bridge_path`]).
pub fn m_interpolate(
    env: &DynEnv<f64>,
    state: &SetState<f64>,
    s: f64,
    bridge_value: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::Parameter {
            name: "s",
            msg: format!("must lie in [0,1), got {s}"),
        });
    }
    let law = successor_law(env, state)?;
    let scale = (1.0 - s).sqrt();
    let mut total = 0.0;
    for (y, q) in law.candidates() {
        let h = normal::inv_cdf(*q);
        let py = env.vertex_conductance(state.t() + 1, *y)?;
        total += py * normal::cdf((h - bridge_value) / scale);
    }
    Ok(total)
}

/// Samples `B_{i+s} - B_i` given the endpoint increment
/// `B_{i+1} - B_i = endpoint`: normal with mean `s * endpoint` and
/// variance `s (1 - s)`.
pub fn sample_bridge<R: Rng + ?Sized>(endpoint: f64, s: f64, rng: &mut R) -> f64 {
    assert!(s > 0.0 && s < 1.0, "bridge time must lie in (0,1), got {s}");
    let z: f64 = StandardNormal.sample(rng);
    s * endpoint + (s * (1.0 - s)).sqrt() * z
}

/// Samples one consistent bridge path at the given increasing times in
/// (0,1), conditioned on the endpoint increment.
pub fn sample_bridge_path<R: Rng + ?Sized>(endpoint: f64, times: &[f64], rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut prev_t = 0.0;
    let mut prev_v = 0.0;
    for &s in times {
        assert!(
            s > prev_t && s < 1.0,
            "bridge times must increase within (0,1)"
        );
        // Brownian bridge from (prev_t, prev_v) to (1, endpoint).
        let span = 1.0 - prev_t;
        let frac = (s - prev_t) / span;
        let mean = prev_v + frac * (endpoint - prev_v);
        let var = (s - prev_t) * (1.0 - s) / span;
        let z: f64 = StandardNormal.sample(rng);
        let v = mean + var.sqrt() * z;
        out.push(v);
        prev_t = s;
        prev_v = v;
    }
    out
}

/// How intra-step samples of one path were conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntraStepMode {
    /// Each query conditioned on the endpoint alone, independently.
    SinglePoint,
    /// All queries of a step drawn as one consistent bridge path.
    BridgePath,
}

impl IntraStepMode {
    pub fn label(&self) -> &'static str {
        match self {
            IntraStepMode::SinglePoint => "single_point",
            IntraStepMode::BridgePath => "bridge_path",
        }
    }
}

/// One embedded trajectory: the driving increments, the evolving sets at
/// integer times, and the sampled interpolation `M_u`.
#[derive(Debug, Clone)]
pub struct EmbeddedPath {
    /// Per-step standard normal deviates `B_{i+1} - B_i`.
    pub brownian_incs: Vec<f64>,
    /// Set trajectory at integer times, consistent with the induced
    /// uniforms.
    pub sets: Vec<SetState<f64>>,
    /// Intra-step bridge evaluations as `(u, bridge_value)`.
    pub intra_step: Vec<(f64, f64)>,
    /// Samples of the interpolated martingale, `(u, M_u)`, including the
    /// integer times.
    pub m_samples: Vec<(f64, f64)>,
    /// How the intra-step values were conditioned.
    pub mode: IntraStepMode,
}

/// Simulates one embedded path from a singleton start over the whole
/// horizon, evaluating `M` at each integer time and at the fractional
/// offsets in `queries` within every step.
pub fn embed_path<R: Rng + ?Sized>(
    env: &DynEnv<f64>,
    start: usize,
    queries: &[f64],
    mode: IntraStepMode,
    rng: &mut R,
) -> Result<EmbeddedPath> {
    let mut sorted = queries.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &s in &sorted {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Parameter {
                name: "queries",
                msg: format!("intra-step offsets must lie in (0,1), got {s}"),
            });
        }
    }
    let mut state = SetState::new(env, 0, vec![start])?;
    let mut path = EmbeddedPath {
        brownian_incs: Vec::new(),
        sets: vec![state.clone()],
        intra_step: Vec::new(),
        m_samples: vec![(0.0, *state.mass())],
        mode,
    };
    for i in 0..env.horizon() {
        let inc: f64 = StandardNormal.sample(rng);
        path.brownian_incs.push(inc);
        let bridge_vals = match mode {
            IntraStepMode::SinglePoint => sorted
                .iter()
                .map(|&s| sample_bridge(inc, s, rng))
                .collect::<Vec<_>>(),
            IntraStepMode::BridgePath => sample_bridge_path(inc, &sorted, rng),
        };
        for (&s, &b) in sorted.iter().zip(&bridge_vals) {
            let u = i as f64 + s;
            path.intra_step.push((u, b));
            path.m_samples.push((u, m_interpolate(env, &state, s, b)?));
        }
        let u = drive_uniforms(&[inc])[0];
        let law = successor_law(env, &state)?;
        let next = law.sample(u);
        state = SetState::new(env, i + 1, next)?;
        path.sets.push(state.clone());
        path.m_samples.push(((i + 1) as f64, *state.mass()));
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzz::{hand_e2, hand_e3};
    use crate::seeding::replica_rng;
    use crate::stats::{mean, variance};

    #[test]
    fn uniforms_from_deviates() {
        let u = drive_uniforms(&[0.0, 1.959963985, -1.959963985]);
        assert_eq!(u[0], 0.5);
        assert!((u[1] - 0.975).abs() < 1e-9);
        assert!((u[2] - 0.025).abs() < 1e-9);
        for v in u {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn interpolation_at_zero_recovers_the_mass() {
        let env = hand_e3::<f64>(4);
        let state = SetState::new(&env, 0, vec![0, 2]).unwrap();
        let m = m_interpolate(&env, &state, 0.0, 0.0).unwrap();
        assert!((m - state.mass()).abs() < 1e-12);
    }

    #[test]
    fn interpolation_of_empty_set_is_zero() {
        let env = hand_e3::<f64>(4);
        let state = SetState::new(&env, 1, vec![]).unwrap();
        for s in [0.0, 0.25, 0.75] {
            assert_eq!(m_interpolate(&env, &state, s, 0.3).unwrap(), 0.0);
        }
    }

    #[test]
    fn e2_closed_form_midpoint() {
        // From {a} both thresholds are 1/2, so H = 0 for both vertices and
        // M at (s=1/2, bridge=0) is 4 * cdf(0) = 2 = pi({a}).
        let env = hand_e2::<f64>(4);
        let state = SetState::new(&env, 0, vec![0]).unwrap();
        let m = m_interpolate(&env, &state, 0.5, 0.0).unwrap();
        assert!((m - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bridge_sampler_matches_closed_form_moments() {
        let mut rng = replica_rng(17, 0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_bridge(0.0, 0.5, &mut rng))
            .collect();
        let m = mean(&draws);
        let v = variance(&draws);
        // mean 0, variance 1/4; allow 3-sigma bands on both estimators.
        let se_mean = (0.25f64 / draws.len() as f64).sqrt();
        assert!(m.abs() < 3.0 * se_mean, "bridge mean {m}");
        let se_var = 0.25 * (2.0 / (draws.len() as f64 - 1.0)).sqrt();
        assert!((v - 0.25).abs() < 3.0 * se_var, "bridge variance {v}");
        // Pinned endpoint shifts the mean linearly.
        let shifted: Vec<f64> = (0..100_000)
            .map(|_| sample_bridge(2.0, 0.5, &mut rng))
            .collect();
        assert!((mean(&shifted) - 1.0).abs() < 4.0 * se_mean);
    }

    #[test]
    fn bridge_path_nearly_pins_the_endpoint() {
        let mut rng = replica_rng(17, 1);
        let times = [0.25, 0.5, 0.9];
        let vals = sample_bridge_path(1.0, &times, &mut rng);
        assert_eq!(vals.len(), 3);
        let almost = sample_bridge_path(1.0, &[1.0 - 1e-12], &mut rng);
        assert!((almost[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn endpoint_limit_converges_off_ties() {
        let env = hand_e2::<f64>(4);
        let state = SetState::new(&env, 0, vec![0]).unwrap();
        // Thresholds are both at H = 0; endpoint b = 1 is tie-free. The
        // induced successor for U = cdf(1) > 1/2 is the empty set.
        let b = 1.0;
        let mut prev = f64::INFINITY;
        for s in [0.9, 0.99, 0.999] {
            let m = m_interpolate(&env, &state, s, b).unwrap();
            let err = (m - 0.0).abs();
            // Theoretical tail bound: total mass * cdf(-gap / sqrt(1-s)).
            let bound = 4.0 * normal::cdf(-1.0 / (1.0 - s).sqrt()) + 1e-12;
            assert!(err <= bound, "err {err} above bound {bound} at s={s}");
            assert!(err <= prev + 1e-15);
            prev = err;
        }
    }

    #[test]
    fn intra_step_expectation_is_the_current_mass() {
        // The expectation of M_{i+s} over the unconditional bridge point
        // equals pi_i(S): Gaussian smoothing returns the threshold ratio.
        let env = hand_e3::<f64>(4);
        let state = SetState::new(&env, 0, vec![1]).unwrap();
        let mut rng = replica_rng(23, 0);
        let s = 0.5;
        let n = 100_000;
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            let endpoint: f64 = StandardNormal.sample(&mut rng);
            let b = sample_bridge(endpoint, s, &mut rng);
            vals.push(m_interpolate(&env, &state, s, b).unwrap());
        }
        let m = mean(&vals);
        let se = (variance(&vals) / n as f64).sqrt();
        let target = *state.mass();
        assert!(
            (m - target).abs() <= 4.0 * se,
            "intra-step mean {m} vs mass {target} (se {se})"
        );
    }

    #[test]
    fn embedded_path_matches_masses_at_integer_times() {
        let env = hand_e3::<f64>(4);
        let mut rng = replica_rng(29, 0);
        for mode in [IntraStepMode::SinglePoint, IntraStepMode::BridgePath] {
            let path = embed_path(&env, 0, &[0.25, 0.75], mode, &mut rng).unwrap();
            assert_eq!(path.sets.len(), 5);
            for (i, st) in path.sets.iter().enumerate() {
                let at_integer = path
                    .m_samples
                    .iter()
                    .find(|(u, _)| *u == i as f64)
                    .expect("integer sample present");
                assert_eq!(at_integer.1, *st.mass());
            }
            // Once the mass hits 0 at an integer time it stays 0.
            let mut dead = false;
            for st in &path.sets {
                if dead {
                    assert!(st.is_empty());
                }
                if st.is_empty() {
                    dead = true;
                }
            }
            assert!(path.m_samples.iter().all(|(_, m)| *m >= 0.0));
            assert_eq!(path.mode, mode);
        }
    }
}

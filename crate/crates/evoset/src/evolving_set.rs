//! The evolving-set process: exact successor laws, sampling, subset-space
//! dynamic programming, size-biased conditioning, the walk/set coupling and
//! the drift inequalities.
//!
//! A set state `S` at time `t` evolves by drawing one uniform `U` and
//! keeping every vertex `y` with membership ratio
//! `q_y = pi_t(S, y) / pi_{t+1}(y) >= U`. The law of the successor is
//! therefore a finite distribution over the nested family of
//! super-threshold sets, which this module enumerates exactly; Monte Carlo
//! drivers and exact oracles share that single enumeration so the sampled
//! and analyzed laws cannot drift apart.
//!
//! Well-posedness needs `t -> pi_t(y)` non-decreasing (otherwise some
//! `q_y` exceeds 1); violations are hard errors, not clamps.

use std::collections::BTreeMap;

use rand::Rng;

use crate::dyn_graph::DynEnv;
use crate::error::{Error, Result};
use crate::weight::{abs_diff, Weight};

/// Vertex cap for subset-space dynamic programming (state space `2^n`).
pub const SET_DP_VERTEX_CAP: usize = 14;
/// Vertex cap for joint walk/set dynamic programming (state space `n 2^n`).
pub const JOINT_DP_VERTEX_CAP: usize = 10;

/// A vertex subset at a time index, with its conductance mass cached.
#[derive(Debug, Clone, PartialEq)]
pub struct SetState<W> {
    t: u32,
    members: Vec<usize>,
    mass: W,
}

impl<W: Weight> SetState<W> {
    /// Builds the state, sorting members and checking they all belong to
    /// `V_t`. The empty set is a valid (absorbing) state of mass zero.
    pub fn new(env: &DynEnv<W>, t: u32, mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        for &x in &members {
            if !env.is_active(t, x)? {
                return Err(Error::InactiveVertex { vertex: x, t });
            }
        }
        let mass = env.set_mass(t, &members)?;
        Ok(SetState { t, members, mass })
    }

    pub fn from_mask(env: &DynEnv<W>, t: u32, mask: u64) -> Result<Self> {
        let members = (0..env.n_vertices().min(64))
            .filter(|x| mask >> x & 1 == 1)
            .collect();
        SetState::new(env, t, members)
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn mass(&self) -> &W {
        &self.mass
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.members.binary_search(&x).is_ok()
    }

    pub fn mask(&self) -> u64 {
        self.members.iter().fold(0u64, |m, &x| m | 1 << x)
    }
}

/// One outcome of a successor law: a set, its probability, and (except for
/// the deficit outcome, the empty set) the membership threshold that
/// produces it.
#[derive(Debug, Clone)]
pub struct Outcome<W> {
    pub prob: W,
    pub members: Vec<usize>,
    pub threshold: Option<W>,
}

/// Exact distribution of `S_{t+1}` given `S_t`, as the ordered list of
/// threshold outcomes. Outcomes are nested decreasing as the threshold
/// rises, the empty set closes the list when the largest ratio is below 1,
/// and the expected successor mass equals the current mass (the set-mass
/// martingale).
#[derive(Debug, Clone)]
pub struct SuccessorLaw<W> {
    t: u32,
    candidates: Vec<(usize, W)>,
    outcomes: Vec<Outcome<W>>,
    size_biased: bool,
}

impl<W: Weight> SuccessorLaw<W> {
    /// Time of the current state; outcomes live at `t + 1`.
    pub fn t(&self) -> u32 {
        self.t
    }

    /// Membership candidates `(y, q_y)`, sorted by vertex. Only vertices
    /// with `pi_t(S, y) > 0` appear; everything else can never be a member.
    pub fn candidates(&self) -> &[(usize, W)] {
        &self.candidates
    }

    pub fn outcomes(&self) -> &[Outcome<W>] {
        &self.outcomes
    }

    /// Distinct thresholds in increasing order.
    pub fn thresholds(&self) -> impl Iterator<Item = &W> + '_ {
        self.outcomes.iter().filter_map(|o| o.threshold.as_ref())
    }

    pub fn is_size_biased(&self) -> bool {
        self.size_biased
    }

    pub fn q_of(&self, y: usize) -> Option<&W> {
        self.candidates
            .binary_search_by_key(&y, |(v, _)| *v)
            .ok()
            .map(|i| &self.candidates[i].1)
    }

    /// The successor set for a given uniform draw: `{y : q_y >= u}`, with
    /// the boundary kept (membership is non-strict).
    pub fn sample(&self, u: f64) -> Vec<usize> {
        assert!(
            !self.size_biased,
            "threshold sampling applies to the plain law; sample the size-biased \
             law by its outcome probabilities"
        );
        assert!(u > 0.0 && u < 1.0, "u must lie in (0,1), got {u}");
        let uw = W::from_f64(u);
        self.candidates
            .iter()
            .filter(|(_, q)| *q >= uw)
            .map(|(y, _)| *y)
            .collect()
    }

    /// Samples an outcome index by its probability (valid for both the
    /// plain and the size-biased law).
    pub fn sample_outcome<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = crate::seeding::uniform_open01(rng);
        let mut acc = 0.0;
        for (i, o) in self.outcomes.iter().enumerate() {
            acc += o.prob.to_f64();
            if u <= acc {
                return i;
            }
        }
        self.outcomes.len() - 1
    }

    /// Expected successor mass `sum_k p_k pi_{t+1}(B_k)`; equals the current
    /// mass for the plain law.
    pub fn expected_successor_mass(&self, env: &DynEnv<W>) -> Result<W> {
        let mut total = W::zero();
        for o in &self.outcomes {
            let m = env.set_mass(self.t + 1, &o.members)?;
            total = total + o.prob.clone() * m;
        }
        Ok(total)
    }
}

/// Exact law of `S_{t+1}` given the current state.
///
/// Candidates are exactly the vertices with `pi_t(S, y) > 0`; a ratio
/// above 1 (beyond float fuzz) means the vertex conductance decreased
/// across the step and is rejected as ill-posed.
pub fn successor_law<W: Weight>(env: &DynEnv<W>, state: &SetState<W>) -> Result<SuccessorLaw<W>> {
    let t = state.t;
    if t + 1 > env.horizon() {
        return Err(Error::BeyondHorizon {
            t: t + 1,
            horizon: env.horizon(),
        });
    }
    let one = W::one();
    // pi_t(S, y) for the reachable y, accumulated over edges out of S.
    let mut into: BTreeMap<usize, W> = BTreeMap::new();
    for &x in &state.members {
        for (y, _) in env.one_step_row(t, x)? {
            let w = env.edge_weight(t, x, y)?;
            let slot = into.entry(y).or_insert_with(W::zero);
            *slot = slot.clone() + w;
        }
    }
    let mut candidates: Vec<(usize, W)> = Vec::with_capacity(into.len());
    for (y, mass_in) in into {
        if !(mass_in > W::zero()) {
            continue;
        }
        let py = env.vertex_conductance(t + 1, y)?;
        if !(py > W::zero()) {
            return Err(Error::SupportLost { vertex: y, t });
        }
        let mut q = mass_in / py;
        if q > one {
            if W::exact() || q.to_f64() > 1.0 + 1e-12 {
                return Err(Error::NonMonotoneVertex { vertex: y, t });
            }
            q = one.clone();
        }
        candidates.push((y, q));
    }

    let mut thresholds: Vec<W> = candidates.iter().map(|(_, q)| q.clone()).collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("weights are ordered"));
    thresholds.dedup();

    let mut outcomes = Vec::with_capacity(thresholds.len() + 1);
    let mut prev = W::zero();
    for q in &thresholds {
        let members: Vec<usize> = candidates
            .iter()
            .filter(|(_, qy)| qy >= q)
            .map(|(y, _)| *y)
            .collect();
        outcomes.push(Outcome {
            prob: q.clone() - prev.clone(),
            members,
            threshold: Some(q.clone()),
        });
        prev = q.clone();
    }
    if prev < one {
        outcomes.push(Outcome {
            prob: one - prev,
            members: Vec::new(),
            threshold: None,
        });
    }
    Ok(SuccessorLaw {
        t,
        candidates,
        outcomes,
        size_biased: false,
    })
}

/// Samples one evolving-set step from an enumerated law with the uniform
/// deviate `u` in (0,1). Exact-mode enumeration and Monte Carlo share this
/// code path.
pub fn sample_step<W: Weight>(law: &SuccessorLaw<W>, u: f64) -> Vec<usize> {
    law.sample(u)
}

/// Exact distribution of `S_t` started from `{start}`, as a mapping from
/// subset bitmasks to probabilities.
#[derive(Debug, Clone)]
pub struct SetDistribution<W> {
    pub t: u32,
    pub support: BTreeMap<u64, W>,
}

impl<W: Weight> SetDistribution<W> {
    pub fn total(&self) -> W {
        self.support
            .values()
            .fold(W::zero(), |acc, p| acc + p.clone())
    }

    /// Marginal membership probability `P(y in S_t)`.
    pub fn membership_prob(&self, y: usize) -> W {
        self.support
            .iter()
            .filter(|(mask, _)| *mask >> y & 1 == 1)
            .fold(W::zero(), |acc, (_, p)| acc + p.clone())
    }

    /// JSON object with subset-bitmask keys, e.g.
    /// `{"t": 1, "support": {"3": 0.5, "0": 0.5}}`.
    pub fn to_json(&self) -> String {
        let support: BTreeMap<String, f64> = self
            .support
            .iter()
            .map(|(mask, p)| (mask.to_string(), p.to_f64()))
            .collect();
        serde_json::json!({ "t": self.t, "support": support }).to_string()
    }
}

/// Pushes the successor law forward `t` steps from the singleton `{start}`
/// by dynamic programming over subset bitmasks. Capped at
/// [`SET_DP_VERTEX_CAP`] vertices.
pub fn exact_set_distribution<W: Weight>(
    env: &DynEnv<W>,
    start: usize,
    t: u32,
) -> Result<SetDistribution<W>> {
    let n = env.n_vertices();
    if n > SET_DP_VERTEX_CAP {
        return Err(Error::GraphTooLarge {
            n,
            cap: SET_DP_VERTEX_CAP,
        });
    }
    if !env.is_active(0, start)? {
        return Err(Error::InactiveVertex {
            vertex: start,
            t: 0,
        });
    }
    let mut support: BTreeMap<u64, W> = BTreeMap::new();
    support.insert(1u64 << start, W::one());
    for step in 0..t {
        let mut next: BTreeMap<u64, W> = BTreeMap::new();
        for (mask, p) in &support {
            let state = SetState::from_mask(env, step, *mask)?;
            let law = successor_law(env, &state)?;
            for o in law.outcomes() {
                let m = o.members.iter().fold(0u64, |acc, &y| acc | 1 << y);
                let slot = next.entry(m).or_insert_with(W::zero);
                *slot = slot.clone() + p.clone() * o.prob.clone();
            }
        }
        support = next;
    }
    Ok(SetDistribution { t, support })
}

/// The size-biased (conditioned) successor law: each outcome reweighted by
/// `pi_{t+1}(B) / pi_t(A)`. The reweighted probabilities sum to 1 exactly
/// because the set mass is a martingale, and the empty set leaves the
/// support.
pub fn conditioned_kernel<W: Weight>(
    env: &DynEnv<W>,
    state: &SetState<W>,
) -> Result<SuccessorLaw<W>> {
    if state.is_empty() {
        return Err(Error::EmptySetState);
    }
    let law = successor_law(env, state)?;
    let mass = state.mass().clone();
    let mut outcomes = Vec::with_capacity(law.outcomes.len());
    for o in &law.outcomes {
        if o.members.is_empty() {
            continue;
        }
        let m = env.set_mass(state.t + 1, &o.members)?;
        outcomes.push(Outcome {
            prob: o.prob.clone() * m / mass.clone(),
            members: o.members.clone(),
            threshold: o.threshold.clone(),
        });
    }
    Ok(SuccessorLaw {
        t: law.t,
        candidates: law.candidates,
        outcomes,
        size_biased: true,
    })
}

/// Distribution of the conditioned chain at time `t`, by pushing
/// [`conditioned_kernel`] forward from `{start}`.
pub fn conditioned_chain_distribution<W: Weight>(
    env: &DynEnv<W>,
    start: usize,
    t: u32,
) -> Result<SetDistribution<W>> {
    let n = env.n_vertices();
    if n > SET_DP_VERTEX_CAP {
        return Err(Error::GraphTooLarge {
            n,
            cap: SET_DP_VERTEX_CAP,
        });
    }
    let mut support: BTreeMap<u64, W> = BTreeMap::new();
    support.insert(1u64 << start, W::one());
    for step in 0..t {
        let mut next: BTreeMap<u64, W> = BTreeMap::new();
        for (mask, p) in &support {
            let state = SetState::from_mask(env, step, *mask)?;
            let law = conditioned_kernel(env, &state)?;
            for o in law.outcomes() {
                let m = o.members.iter().fold(0u64, |acc, &y| acc | 1 << y);
                let slot = next.entry(m).or_insert_with(W::zero);
                *slot = slot.clone() + p.clone() * o.prob.clone();
            }
        }
        support = next;
    }
    Ok(SetDistribution { t, support })
}

/// One step of the walk/set coupling: the walker moves by the plain
/// kernel, then the set moves by the successor law conditioned on
/// containing the walker's new position (implemented exactly through the
/// threshold representation: the shared uniform is drawn from `(0, q_y]`).
pub fn df_coupled_step<W: Weight, R: Rng + ?Sized>(
    env: &DynEnv<W>,
    x: usize,
    state: &SetState<W>,
    rng: &mut R,
) -> Result<(usize, Vec<usize>)> {
    if !state.contains(x) {
        return Err(Error::Parameter {
            name: "x",
            msg: format!("walker {x} is not a member of the current set"),
        });
    }
    let law = successor_law(env, state)?;
    let row = env.one_step_row(state.t, x)?;
    let u1 = crate::seeding::uniform_open01(rng);
    let mut acc = 0.0;
    let mut y = row.last().expect("active vertex has outgoing mass").0;
    for (target, p) in &row {
        acc += p.to_f64();
        if u1 <= acc {
            y = *target;
            break;
        }
    }
    let qy = law
        .q_of(y)
        .expect("walk target is a membership candidate")
        .clone();
    // U | U <= q_y is uniform on (0, q_y]; scale a fresh uniform into it.
    let u2 = W::from_f64(crate::seeding::uniform_open01(rng)) * qy;
    let members: Vec<usize> = law
        .candidates
        .iter()
        .filter(|(_, q)| *q >= u2)
        .map(|(v, _)| *v)
        .collect();
    debug_assert!(members.binary_search(&y).is_ok());
    Ok((y, members))
}

/// Exact joint distribution of `(X_t, S_t)` under the coupled kernel,
/// started from `(start, {start})`. Capped at [`JOINT_DP_VERTEX_CAP`]
/// vertices.
pub fn joint_exact_distribution<W: Weight>(
    env: &DynEnv<W>,
    start: usize,
    t: u32,
) -> Result<BTreeMap<(usize, u64), W>> {
    let n = env.n_vertices();
    if n > JOINT_DP_VERTEX_CAP {
        return Err(Error::GraphTooLarge {
            n,
            cap: JOINT_DP_VERTEX_CAP,
        });
    }
    if !env.is_active(0, start)? {
        return Err(Error::InactiveVertex {
            vertex: start,
            t: 0,
        });
    }
    let mut joint: BTreeMap<(usize, u64), W> = BTreeMap::new();
    joint.insert((start, 1u64 << start), W::one());
    for step in 0..t {
        let mut next: BTreeMap<(usize, u64), W> = BTreeMap::new();
        let mut laws: BTreeMap<u64, SuccessorLaw<W>> = BTreeMap::new();
        for ((w, mask), p) in &joint {
            if !laws.contains_key(mask) {
                let state = SetState::from_mask(env, step, *mask)?;
                laws.insert(*mask, successor_law(env, &state)?);
            }
            let law = &laws[mask];
            for (y, py) in env.one_step_row(step, *w)? {
                let qy = law.q_of(y).expect("walk target is a candidate").clone();
                for o in law.outcomes() {
                    let Some(thr) = &o.threshold else { continue };
                    if *thr > qy {
                        continue;
                    }
                    let m = o.members.iter().fold(0u64, |acc, &v| acc | 1 << v);
                    let contrib = p.clone() * py.clone() * o.prob.clone() / qy.clone();
                    let slot = next.entry((y, m)).or_insert_with(W::zero);
                    *slot = slot.clone() + contrib;
                }
            }
        }
        joint = next;
    }
    Ok(joint)
}

/// Walker marginal of a joint distribution.
pub fn joint_walk_marginal<W: Weight>(
    joint: &BTreeMap<(usize, u64), W>,
    n_vertices: usize,
) -> Vec<W> {
    let mut out = vec![W::zero(); n_vertices];
    for ((w, _), p) in joint {
        out[*w] = out[*w].clone() + p.clone();
    }
    out
}

/// Set marginal of a joint distribution.
pub fn joint_set_marginal<W: Weight>(joint: &BTreeMap<(usize, u64), W>) -> BTreeMap<u64, W> {
    let mut out: BTreeMap<u64, W> = BTreeMap::new();
    for ((_, mask), p) in joint {
        let slot = out.entry(*mask).or_insert_with(W::zero);
        *slot = slot.clone() + p.clone();
    }
    out
}

/// Enumerates every S-trajectory of positive probability under the coupled
/// kernel up to `t_max` and returns the largest deviation of the walker's
/// conditional law from the mass-proportional law on the current set.
///
/// The conditional walker distribution given the whole set trajectory is
/// propagated alongside the trajectory enumeration; at every prefix it
/// should equal `w -> pi_t(w) / pi_t(S_t)` on the members.
pub fn coupling_uniformity_deviation<W: Weight>(
    env: &DynEnv<W>,
    start: usize,
    t_max: u32,
) -> Result<f64> {
    let n = env.n_vertices();
    if n > JOINT_DP_VERTEX_CAP {
        return Err(Error::GraphTooLarge {
            n,
            cap: JOINT_DP_VERTEX_CAP,
        });
    }
    let mut worst = 0.0f64;
    let mut nu0 = vec![W::zero(); n];
    nu0[start] = W::one();
    let state0 = SetState::new(env, 0, vec![start])?;
    let mut stack: Vec<(SetState<W>, Vec<W>)> = vec![(state0, nu0)];
    while let Some((state, nu)) = stack.pop() {
        // Check the mass-proportional property at this prefix.
        for &w in state.members() {
            let expected = env.vertex_conductance(state.t(), w)? / state.mass().clone();
            worst = worst.max(abs_diff(&nu[w], &expected));
        }
        if state.t() >= t_max {
            continue;
        }
        let law = successor_law(env, &state)?;
        for o in law.outcomes() {
            if o.members.is_empty() {
                continue;
            }
            // nu'(v) proportional to sum_w nu(w) P(t,w;t+1,v) pi_{t+1}(v)
            // / pi_t(S, v), restricted to the outcome.
            let mut nu_next = vec![W::zero(); n];
            let mut total = W::zero();
            for &v in &o.members {
                let pv = env.vertex_conductance(state.t() + 1, v)?;
                let into_v = env.set_to_vertex(state.t(), state.members(), v)?;
                if !(into_v > W::zero()) {
                    continue;
                }
                let mut flow = W::zero();
                for &w in state.members() {
                    let p = env.transition_prob(state.t(), w, v)?;
                    flow = flow + nu[w].clone() * p;
                }
                let val = flow * pv / into_v;
                total = total + val.clone();
                nu_next[v] = val;
            }
            if !(total > W::zero()) {
                continue;
            }
            for v in nu_next.iter_mut() {
                *v = v.clone() / total.clone();
            }
            let next_state = SetState::new(env, state.t() + 1, o.members.clone())?;
            stack.push((next_state, nu_next));
        }
    }
    Ok(worst)
}

/// Result of one drift check: the exact conditional moment, the proof-grade
/// bound it must clear, and the verdict.
#[derive(Debug, Clone, Copy)]
pub struct DriftCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

const DRIFT_TOL: f64 = 1e-12;

/// Checks the one-step moment inequalities of the set-mass martingale
/// under a uniformly lazy walk.
///
/// With `R = pi_t(S, S^c) / pi_t(S)` and `G` the mass ratio of the next
/// step, the exact conditional moment `E[G^alpha | S]` must satisfy
///
/// * `alpha` in (0,1):  `E[G^alpha] <= 1 - 2 alpha (1-alpha) gamma^2 R^2 / (1-gamma)^2`
/// * `alpha` > 1:       `E[G^alpha] >= 1 + alpha (alpha-1) gamma^2 R^2 / (2 (1-gamma)^2)`
///
/// These are the inequalities in their pre-isoperimetry form, so they are
/// exactly testable state by state. `gamma` must be a verified laziness
/// lower bound for the environment, in (0, 1/2].
pub fn drift_check(
    env: &DynEnv<f64>,
    state: &SetState<f64>,
    alpha: f64,
    gamma: f64,
) -> Result<DriftCheck> {
    if state.is_empty() {
        return Err(Error::EmptySetState);
    }
    if alpha == 1.0 {
        return Err(Error::AlphaOne);
    }
    if !(alpha > 0.0) {
        return Err(Error::Parameter {
            name: "alpha",
            msg: format!("must be positive, got {alpha}"),
        });
    }
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(Error::Parameter {
            name: "gamma",
            msg: format!("must lie in (0, 1/2], got {gamma}"),
        });
    }
    let law = successor_law(env, state)?;
    let mass = *state.mass();
    let mut lhs = 0.0f64;
    for o in law.outcomes() {
        if o.members.is_empty() {
            continue; // 0^alpha = 0 for alpha > 0
        }
        let ratio = env.set_mass(state.t + 1, &o.members)? / mass;
        lhs += o.prob * ratio.powf(alpha);
    }
    let r = env.boundary_conductance(state.t, &state.members)? / mass;
    let shrink = gamma * gamma / ((1.0 - gamma) * (1.0 - gamma));
    let (rhs, pass) = if alpha < 1.0 {
        let rhs = 1.0 - 2.0 * alpha * (1.0 - alpha) * shrink * r * r;
        (rhs, lhs <= rhs + DRIFT_TOL)
    } else {
        let rhs = 1.0 + alpha * (alpha - 1.0) * shrink * r * r / 2.0;
        (rhs, lhs >= rhs - DRIFT_TOL)
    };
    Ok(DriftCheck { lhs, rhs, pass })
}

/// Verifies that complements of an evolving set evolve by the same kernel,
/// which holds when the vertex conductances are constant in time and the
/// walk is uniformly lazy. Uses the `U <-> 1 - U` symmetry: the law from
/// `A^c` must equal the complement-image of the law from `A`, at every
/// step of the horizon.
pub fn complement_dual_check<W: Weight>(env: &DynEnv<W>, members: &[usize]) -> Result<bool> {
    // Reject non-constant vertex conductances.
    let points = env.change_points();
    for &t in &points[1..] {
        for x in 0..env.n_vertices() {
            if env.vertex_conductance(t, x)? != env.vertex_conductance(t - 1, x)? {
                return Err(Error::NonConstantConductance { vertex: x, t });
            }
        }
    }
    if !(env.laziness_coefficient() > W::zero()) {
        return Err(Error::Parameter {
            name: "env",
            msg: "complement duality requires a uniformly lazy walk".into(),
        });
    }
    if env.horizon() == 0 {
        return Err(Error::Parameter {
            name: "env",
            msg: "horizon must be at least 1".into(),
        });
    }
    let active = env.active_vertices(0)?;
    let complement = |set: &[usize]| -> Vec<usize> {
        active
            .iter()
            .copied()
            .filter(|x| set.binary_search(x).is_err())
            .collect()
    };
    let a = SetState::new(env, 0, members.to_vec())?.members().to_vec();
    let ac = complement(&a);
    let tol = 1e-12;
    for t in 0..env.horizon() {
        let law_a = successor_law(env, &SetState::new(env, t, a.clone())?)?;
        let law_ac = successor_law(env, &SetState::new(env, t, ac.clone())?)?;
        let mut mapped: BTreeMap<Vec<usize>, W> = BTreeMap::new();
        for o in law_a.outcomes() {
            mapped.insert(complement(&o.members), o.prob.clone());
        }
        let mut direct: BTreeMap<Vec<usize>, W> = BTreeMap::new();
        for o in law_ac.outcomes() {
            direct.insert(o.members.clone(), o.prob.clone());
        }
        if mapped.len() != direct.len() {
            return Ok(false);
        }
        for (set, p) in &mapped {
            match direct.get(set) {
                None => return Ok(false),
                Some(q) if W::exact() && p != q => return Ok(false),
                Some(q) if abs_diff(p, q) > tol => return Ok(false),
                _ => {}
            }
        }
    }
    Ok(true)
}

/// All states `(t, S)` with `t < horizon` reachable from some singleton
/// start in `V_0`, deduplicated. Used to sweep per-state invariants
/// (martingale, drift) over everything the process can actually visit.
pub fn reachable_states<W: Weight>(env: &DynEnv<W>) -> Result<Vec<SetState<W>>> {
    let n = env.n_vertices();
    if n > SET_DP_VERTEX_CAP {
        return Err(Error::GraphTooLarge {
            n,
            cap: SET_DP_VERTEX_CAP,
        });
    }
    let mut seen: std::collections::BTreeSet<(u32, u64)> = std::collections::BTreeSet::new();
    let mut frontier: Vec<(u32, u64)> = Vec::new();
    for x in env.active_vertices(0)? {
        let key = (0u32, 1u64 << x);
        if seen.insert(key) {
            frontier.push(key);
        }
    }
    let mut out = Vec::new();
    while let Some((t, mask)) = frontier.pop() {
        let state = SetState::from_mask(env, t, mask)?;
        if t < env.horizon() {
            let law = successor_law(env, &state)?;
            for o in law.outcomes() {
                let m = o.members.iter().fold(0u64, |acc, &v| acc | 1 << v);
                let key = (t + 1, m);
                if t + 1 < env.horizon() && seen.insert(key) {
                    frontier.push(key);
                }
            }
            out.push(state);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_chain::multi_step_kernel;
    use crate::fuzz::{hand_e2, hand_e3, random_env_fuzzer};
    use crate::seeding::replica_rng;
    use num_rational::BigRational;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn e2_successor_law_from_singleton() {
        let env = hand_e2::<BigRational>(4);
        let state = SetState::new(&env, 0, vec![0]).unwrap();
        let law = successor_law(&env, &state).unwrap();
        assert_eq!(law.outcomes().len(), 2);
        assert_eq!(law.outcomes()[0].members, vec![0, 1]);
        assert_eq!(law.outcomes()[0].prob, ratio(1, 2));
        assert!(law.outcomes()[1].members.is_empty());
        assert_eq!(law.outcomes()[1].prob, ratio(1, 2));
        // Set-mass martingale: 4 * 1/2 = 2 = pi({a}).
        assert_eq!(law.expected_successor_mass(&env).unwrap(), ratio(2, 1));
    }

    #[test]
    fn empty_state_is_absorbing() {
        let env = hand_e2::<f64>(4);
        let state = SetState::new(&env, 1, vec![]).unwrap();
        let law = successor_law(&env, &state).unwrap();
        assert_eq!(law.outcomes().len(), 1);
        assert!(law.outcomes()[0].members.is_empty());
        assert_eq!(law.outcomes()[0].prob, 1.0);
    }

    #[test]
    fn full_set_is_absorbing_under_constant_conductances() {
        let env = hand_e3::<BigRational>(4);
        let state = SetState::new(&env, 0, vec![0, 1, 2]).unwrap();
        let law = successor_law(&env, &state).unwrap();
        assert_eq!(law.outcomes().len(), 1);
        assert_eq!(law.outcomes()[0].members, vec![0, 1, 2]);
        assert_eq!(law.outcomes()[0].prob, ratio(1, 1));
    }

    #[test]
    fn sampling_respects_thresholds() {
        let env = hand_e2::<f64>(4);
        let state = SetState::new(&env, 0, vec![0]).unwrap();
        let law = successor_law(&env, &state).unwrap();
        assert_eq!(sample_step(&law, 0.3), vec![0, 1]);
        assert_eq!(sample_step(&law, 0.9), Vec::<usize>::new());
        // A draw exactly on the threshold keeps the vertex (non-strict rule).
        assert_eq!(sample_step(&law, 0.5), vec![0, 1]);
    }

    #[test]
    fn sampling_is_antitone_in_u() {
        let mut rng = replica_rng(11, 0);
        for _ in 0..40 {
            let env: DynEnv<f64> = random_env_fuzzer(6, 3, &mut rng).unwrap();
            let states = reachable_states(&env).unwrap();
            for state in states.iter().take(20) {
                let law = successor_law(&env, state).unwrap();
                let (u1, u2) = (0.2, 0.7);
                let big = law.sample(u1);
                let small = law.sample(u2);
                assert!(
                    small.iter().all(|y| big.contains(y)),
                    "antitone coupling violated"
                );
            }
        }
    }

    #[test]
    fn dp_at_time_zero_is_a_point_mass() {
        let env = hand_e3::<f64>(4);
        let dist = exact_set_distribution(&env, 1, 0).unwrap();
        assert_eq!(dist.support.len(), 1);
        assert_eq!(dist.support[&0b010], 1.0);
    }

    #[test]
    fn e2_dp_one_step() {
        let env = hand_e2::<BigRational>(4);
        let dist = exact_set_distribution(&env, 0, 1).unwrap();
        assert_eq!(dist.support.len(), 2);
        assert_eq!(dist.support[&0b11], ratio(1, 2));
        assert_eq!(dist.support[&0b00], ratio(1, 2));
        assert_eq!(dist.total(), ratio(1, 1));
        assert_eq!(dist.to_json(), r#"{"support":{"0":0.5,"3":0.5},"t":1}"#);
    }

    #[test]
    fn duality_identity_on_e2() {
        // pi_1(b)/pi_0(a) * P(b in S_1) must equal P(0,a;1,b).
        let env = hand_e2::<BigRational>(4);
        let dist = exact_set_distribution(&env, 0, 1).unwrap();
        let lhs = env.vertex_conductance(1, 1).unwrap() / env.vertex_conductance(0, 0).unwrap()
            * dist.membership_prob(1);
        let k = multi_step_kernel(&env, 0, 1).unwrap();
        assert_eq!(lhs, *k.get(0, 1));
    }

    #[test]
    fn duality_identity_exact_on_e3_horizon() {
        let env = hand_e3::<BigRational>(6);
        for t in 0..=6u32 {
            let k = multi_step_kernel(&env, 0, t).unwrap();
            for x in 0..3 {
                let dist = exact_set_distribution(&env, x, t).unwrap();
                for y in 0..3 {
                    let lhs = env.vertex_conductance(t, y).unwrap()
                        / env.vertex_conductance(0, x).unwrap()
                        * dist.membership_prob(y);
                    assert_eq!(lhs, *k.get(x, y), "duality failed at t={t} x={x} y={y}");
                }
            }
        }
    }

    #[test]
    fn dp_cap_is_enforced() {
        use crate::dyn_graph::{DynEnv, Schedule};
        let n = SET_DP_VERTEX_CAP + 1;
        let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let edges: Vec<_> = (0..n).map(|i| (i, i, Schedule::constant(1.0))).collect();
        let env = DynEnv::<f64>::new(names, edges, 2).unwrap();
        assert!(matches!(
            exact_set_distribution(&env, 0, 1),
            Err(Error::GraphTooLarge {
                cap: SET_DP_VERTEX_CAP,
                ..
            })
        ));
    }

    #[test]
    fn conditioned_kernel_on_e2() {
        let env = hand_e2::<BigRational>(4);
        let state = SetState::new(&env, 0, vec![0]).unwrap();
        let law = conditioned_kernel(&env, &state).unwrap();
        assert!(law.is_size_biased());
        assert_eq!(law.outcomes().len(), 1);
        assert_eq!(law.outcomes()[0].members, vec![0, 1]);
        assert_eq!(law.outcomes()[0].prob, ratio(1, 1));
        assert!(matches!(
            conditioned_kernel(&env, &SetState::new(&env, 0, vec![]).unwrap()),
            Err(Error::EmptySetState)
        ));
    }

    #[test]
    fn conditioned_full_set_stays_full_under_constant_conductances() {
        let env = hand_e3::<BigRational>(4);
        let state = SetState::new(&env, 0, vec![0, 1, 2]).unwrap();
        let law = conditioned_kernel(&env, &state).unwrap();
        assert_eq!(law.outcomes().len(), 1);
        assert_eq!(law.outcomes()[0].members, vec![0, 1, 2]);
        assert_eq!(law.outcomes()[0].prob, ratio(1, 1));
    }

    #[test]
    fn coupled_step_on_absorbed_full_set_moves_by_the_plain_kernel() {
        let env = hand_e3::<f64>(4);
        let state = SetState::new(&env, 0, vec![0, 1, 2]).unwrap();
        let mut rng = replica_rng(13, 0);
        let mut seen = [false; 3];
        for _ in 0..200 {
            let (y, set) = df_coupled_step(&env, 0, &state, &mut rng).unwrap();
            assert_eq!(set, vec![0, 1, 2]);
            seen[y] = true;
        }
        assert!(seen.iter().all(|s| *s), "every kernel target reachable");
    }

    #[test]
    fn conditioned_kernel_rows_sum_to_one() {
        let mut rng = replica_rng(5, 1);
        for _ in 0..30 {
            let env: DynEnv<f64> = random_env_fuzzer(6, 3, &mut rng).unwrap();
            for state in reachable_states(&env).unwrap() {
                if state.is_empty() {
                    continue;
                }
                let law = conditioned_kernel(&env, &state).unwrap();
                let total: f64 = law.outcomes().iter().map(|o| o.prob).sum();
                assert!(
                    (total - 1.0).abs() < 1e-12,
                    "conditioned row sums to {total}"
                );
            }
        }
    }

    #[test]
    fn coupled_step_on_e2_conditions_the_set() {
        let env = hand_e2::<f64>(4);
        let state = SetState::new(&env, 0, vec![0]).unwrap();
        let mut rng = replica_rng(3, 0);
        let mut saw_move = false;
        for _ in 0..200 {
            let (y, set) = df_coupled_step(&env, 0, &state, &mut rng).unwrap();
            // Either target forces the successor that contains it, which
            // here is always {a, b}.
            assert_eq!(set, vec![0, 1]);
            if y == 1 {
                saw_move = true;
            }
        }
        assert!(saw_move);
    }

    #[test]
    fn coupled_step_rejects_walker_outside_set() {
        let env = hand_e2::<f64>(4);
        let state = SetState::new(&env, 0, vec![0]).unwrap();
        let mut rng = replica_rng(3, 1);
        assert!(df_coupled_step(&env, 1, &state, &mut rng).is_err());
    }

    #[test]
    fn conditioned_sampling_matches_the_conditioned_dp() {
        // The size-biased chain is sampled by exact reweighting of the
        // enumerated law (never by rejection); the empirical law of S_3
        // must match the conditioned dynamic program.
        let env = crate::fuzz::random_env_fuzzer::<f64, _>(5, 3, &mut replica_rng(19, 0)).unwrap();
        let start = env.active_vertices(0).unwrap()[0];
        let exact = conditioned_chain_distribution(&env, start, 3).unwrap();
        let n_runs = 40_000;
        let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
        let mut rng = replica_rng(19, 1);
        for _ in 0..n_runs {
            let mut state = SetState::new(&env, 0, vec![start]).unwrap();
            for t in 0..3 {
                let law = conditioned_kernel(&env, &state).unwrap();
                let o = &law.outcomes()[law.sample_outcome(&mut rng)];
                state = SetState::new(&env, t + 1, o.members.clone()).unwrap();
            }
            *counts.entry(state.mask()).or_insert(0.0) += 1.0;
        }
        let mut tv = 0.0;
        for (mask, p) in &exact.support {
            tv += (p - counts.get(mask).copied().unwrap_or(0.0) / n_runs as f64).abs();
        }
        tv /= 2.0;
        assert!(tv < 0.02, "TV distance {tv} between sampler and conditioned DP");
    }

    #[test]
    fn joint_dp_at_time_zero_and_one() {
        let env = hand_e2::<BigRational>(4);
        let joint0 = joint_exact_distribution(&env, 0, 0).unwrap();
        assert_eq!(joint0.len(), 1);
        assert_eq!(joint0[&(0, 0b01)], ratio(1, 1));
        let joint1 = joint_exact_distribution(&env, 0, 1).unwrap();
        assert_eq!(joint1.len(), 2);
        assert_eq!(joint1[&(0, 0b11)], ratio(1, 2));
        assert_eq!(joint1[&(1, 0b11)], ratio(1, 2));
    }

    #[test]
    fn joint_walk_marginal_matches_kernel_on_e2() {
        let env = hand_e2::<BigRational>(4);
        let joint = joint_exact_distribution(&env, 0, 2).unwrap();
        let marg = joint_walk_marginal(&joint, 2);
        let k = multi_step_kernel(&env, 0, 2).unwrap();
        for (y, m) in marg.iter().enumerate() {
            assert_eq!(m, k.get(0, y));
        }
    }

    #[test]
    fn joint_set_marginal_matches_conditioned_chain() {
        let env = hand_e3::<BigRational>(4);
        let joint = joint_exact_distribution(&env, 0, 3).unwrap();
        let sm = joint_set_marginal(&joint);
        let cond = conditioned_chain_distribution(&env, 0, 3).unwrap();
        assert_eq!(sm.len(), cond.support.len());
        for (mask, p) in &sm {
            assert_eq!(p, &cond.support[mask]);
        }
    }

    #[test]
    fn conditional_uniformity_on_e2_at_t1() {
        // P*(X_1 = a | S_1 = {a,b}) = pi_1(a) / pi_1({a,b}) = 1/2.
        let env = hand_e2::<BigRational>(4);
        let joint = joint_exact_distribution(&env, 0, 1).unwrap();
        let p_joint = &joint[&(0, 0b11)];
        let p_set = joint_set_marginal(&joint)[&0b11].clone();
        assert_eq!(p_joint.clone() / p_set, ratio(1, 2));
        let dev = coupling_uniformity_deviation(&env, 0, 3).unwrap();
        assert_eq!(dev, 0.0);
    }

    #[test]
    fn drift_check_e2_alpha_half() {
        let env = hand_e2::<f64>(4);
        let state = SetState::new(&env, 0, vec![0]).unwrap();
        let c = drift_check(&env, &state, 0.5, 0.5).unwrap();
        assert!((c.lhs - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((c.rhs - 0.875).abs() < 1e-12);
        assert!(c.pass);
    }

    #[test]
    fn drift_check_e2_alpha_two() {
        let env = hand_e2::<f64>(4);
        let state = SetState::new(&env, 0, vec![0]).unwrap();
        let c = drift_check(&env, &state, 2.0, 0.5).unwrap();
        assert!((c.lhs - 2.0).abs() < 1e-12);
        assert!((c.rhs - 1.25).abs() < 1e-12);
        assert!(c.pass);
    }

    #[test]
    fn drift_check_zero_boundary_reduces_to_jensen() {
        // Two disconnected lazy components; S covers one entirely, so R = 0.
        use crate::dyn_graph::{DynEnv, Schedule};
        let env = DynEnv::<f64>::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![
                (0, 1, Schedule::constant(1.0)),
                (0, 0, Schedule::constant(1.0)),
                (1, 1, Schedule::constant(1.0)),
                (2, 3, Schedule::constant(1.0)),
                (2, 2, Schedule::constant(1.0)),
                (3, 3, Schedule::constant(1.0)),
            ],
            2,
        )
        .unwrap();
        let state = SetState::new(&env, 0, vec![0, 1]).unwrap();
        let c = drift_check(&env, &state, 0.5, 0.5).unwrap();
        assert_eq!(c.rhs, 1.0);
        assert!(c.pass, "E[G^a] = {} must be <= 1 when R = 0", c.lhs);
    }

    #[test]
    fn drift_check_rejects_alpha_one_and_empty() {
        let env = hand_e2::<f64>(4);
        let state = SetState::new(&env, 0, vec![0]).unwrap();
        assert!(matches!(
            drift_check(&env, &state, 1.0, 0.5),
            Err(Error::AlphaOne)
        ));
        let empty = SetState::new(&env, 0, vec![]).unwrap();
        assert!(matches!(
            drift_check(&env, &empty, 0.5, 0.5),
            Err(Error::EmptySetState)
        ));
    }

    #[test]
    fn complement_duality_on_e2() {
        let env = hand_e2::<BigRational>(2);
        assert!(complement_dual_check(&env, &[0]).unwrap());
        // Empty set versus full set absorb together.
        assert!(complement_dual_check(&env, &[]).unwrap());
    }

    #[test]
    fn complement_duality_rejects_moving_conductances() {
        let env = crate::fuzz::hand_e2_doubled::<f64>(2);
        assert!(matches!(
            complement_dual_check(&env, &[0]),
            Err(Error::NonConstantConductance { .. })
        ));
    }

    #[test]
    fn non_monotone_schedule_is_rejected_by_the_law() {
        // Halved weights: pi_0(V, y) = 2 exceeds pi_1(y) = 1, so the
        // membership ratio from the full set is 2 and the step is ill-posed.
        let env = crate::fuzz::hand_e2_halved::<f64>(2);
        let state = SetState::new(&env, 0, vec![0, 1]).unwrap();
        assert!(matches!(
            successor_law(&env, &state),
            Err(Error::NonMonotoneVertex { .. })
        ));
    }

    #[test]
    fn law_beyond_horizon_is_rejected() {
        let env = hand_e2::<f64>(2);
        let state = SetState::new(&env, 2, vec![0]).unwrap();
        assert!(matches!(
            successor_law(&env, &state),
            Err(Error::BeyondHorizon { .. })
        ));
    }
}

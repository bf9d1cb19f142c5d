//! Experiment harness: declarative configs, seeded campaign orchestration,
//! and machine-readable reports.
//!
//! Every run executes one named task deterministically from a master seed,
//! writes its CSV artifacts plus a `report.json`, and returns a
//! [`RunReport`] whose records each tie a measured quantity to a named
//! invariant from a fixed registry (or to the literal tag `plumbing` for
//! operational measurements). A run passes only if every record passes;
//! the CLI turns that into the exit status.
//!
//! Identical config and seed produce byte-identical CSV outputs: replica
//! RNG streams depend only on (seed, replica index), results merge by
//! replica index, and the seed is stamped into every artifact.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_rational::BigRational;
use num_traits::Zero;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::csrw::{self, RealEnv, RealSchedule};
use crate::doc::GraphDoc;
use crate::dyn_graph::DynEnv;
use crate::embedding::{self, IntraStepMode};
use crate::error::{Error, Result};
use crate::evolving_set::{
    complement_dual_check, conditioned_chain_distribution, conditioned_kernel,
    coupling_uniformity_deviation, df_coupled_step, drift_check, exact_set_distribution,
    joint_exact_distribution, joint_set_marginal, joint_walk_marginal, reachable_states,
    successor_law, SetState, JOINT_DP_VERTEX_CAP, SET_DP_VERTEX_CAP,
};
use crate::exact_chain::multi_step_kernel;
use crate::fuzz;
use crate::isoperimetry::{
    kappa, kappa_reference, singleton_upper_bound, IsoConfig, KappaMode, PsiTable, RSearch,
};
use crate::percolation::{generate_cluster, growing_env, transience_experiment};
use crate::seeding::replica_rng;
use crate::stats;
use crate::weight::{abs_diff, Weight};

/// Registry of invariant identifiers a record may carry; `plumbing` marks
/// purely operational measurements.
pub const ANCHORS: &[&str] = &[
    "row-stochastic",
    "one-step-reversibility",
    "beta-compensated-monotonicity",
    "set-mass-martingale",
    "walk-set-duality",
    "complement-duality",
    "conditioned-kernel-normalization",
    "coupling-walk-marginal",
    "coupling-set-marginal",
    "coupling-conditional-uniformity",
    "drift-upper-bound",
    "drift-lower-bound",
    "embedding-integer-match",
    "embedding-intra-step-mean",
    "embedding-endpoint-limit",
    "kernel-decay-envelope",
    "interior-time-condition",
    "poisson-clock-count",
    "thinned-interarrival",
    "kappa-enumerator-agreement",
    "kappa-singleton-bound",
    "transience-trend",
    "linear-growth-support",
    "plumbing",
];

#[derive(Debug, Clone, Serialize)]
pub struct InvariantRecord {
    pub anchor: String,
    pub pass: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub note: String,
}

impl InvariantRecord {
    pub fn new(anchor: &str, pass: bool, measured: f64, tolerance: f64, note: String) -> Self {
        assert!(ANCHORS.contains(&anchor), "unregistered anchor {anchor:?}");
        InvariantRecord {
            anchor: anchor.to_string(),
            pass,
            measured,
            tolerance,
            note,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub task: String,
    pub seed: u64,
    pub env_digest: String,
    pub passed: bool,
    pub records: Vec<InvariantRecord>,
    pub artifacts: Vec<String>,
    pub timing_ms: u128,
}

impl RunReport {
    fn finish(mut self, started: Instant) -> Self {
        self.passed = self.records.iter().all(|r| r.pass);
        self.timing_ms = started.elapsed().as_millis();
        self
    }
}

/// The tasks the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    VerifyIdentities,
    DriftSuite,
    EvolvingSim,
    KernelDecay,
    CsrwSim,
    PercolationTransience,
    KappaTable,
}

impl Task {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "verify-identities" => Task::VerifyIdentities,
            "drift-suite" => Task::DriftSuite,
            "evolving-sim" => Task::EvolvingSim,
            "kernel-decay" => Task::KernelDecay,
            "csrw-sim" => Task::CsrwSim,
            "percolation-transience" => Task::PercolationTransience,
            "kappa-table" => Task::KappaTable,
            other => {
                return Err(Error::Config {
                    field: "task".into(),
                    msg: format!("unknown task {other:?}"),
                })
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::VerifyIdentities => "verify-identities",
            Task::DriftSuite => "drift-suite",
            Task::EvolvingSim => "evolving-sim",
            Task::KernelDecay => "kernel-decay",
            Task::CsrwSim => "csrw-sim",
            Task::PercolationTransience => "percolation-transience",
            Task::KappaTable => "kappa-table",
        }
    }
}

/// Isoperimetry section of a config document.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IsoDoc {
    pub d: Option<f64>,
    pub mode: Option<String>,
    pub lambda: Option<f64>,
}

impl IsoDoc {
    fn build(&self, default_mode: KappaMode) -> Result<IsoConfig> {
        let d = self.d.ok_or_else(|| Error::Config {
            field: "iso.d".into(),
            msg: "isoperimetric dimension d is required".into(),
        })?;
        let mode = match &self.mode {
            Some(name) => KappaMode::parse(name)?,
            None => default_mode,
        };
        let cfg = IsoConfig::new(d, mode).map_err(|e| Error::Config {
            field: "iso.d".into(),
            msg: e.to_string(),
        })?;
        match self.lambda {
            Some(l) => cfg.with_lambda(l).map_err(|e| Error::Config {
                field: "iso.lambda".into(),
                msg: e.to_string(),
            }),
            None => Ok(cfg),
        }
    }
}

/// Real-time environment document for the continuous-time walk; shares the
/// explicit edge-list shape with [`GraphDoc`] but with real change times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealEnvDoc {
    pub vertices: Vec<String>,
    pub edges: Vec<RealEdgeDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealEdgeDoc {
    pub u: String,
    pub v: String,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub changes: Vec<(f64, f64)>,
}

impl RealEnvDoc {
    pub fn build(&self) -> Result<RealEnv> {
        let index = |name: &str| -> Result<usize> {
            self.vertices.iter().position(|v| v == name).ok_or_else(|| {
                Error::Document(format!("edge endpoint {name:?} not in vertex list"))
            })
        };
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            edges.push((
                index(&e.u)?,
                index(&e.v)?,
                RealSchedule::new(e.weight, e.changes.clone())?,
            ));
        }
        RealEnv::new(self.vertices.clone(), edges)
    }

    pub fn is_loopless(&self) -> bool {
        self.edges.iter().all(|e| e.u != e.v)
    }
}

/// Declarative experiment description. Fields are optional and validated
/// per task; the master seed flows into every random quantity.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Option<String>,
    pub env: Option<GraphDoc>,
    pub real_env: Option<RealEnvDoc>,
    pub iso: Option<IsoDoc>,
    pub seed: Option<u64>,
    pub replicas: Option<u32>,
    pub fuzz_envs: Option<u32>,
    pub alphas: Option<Vec<f64>>,
    pub t_max: Option<u64>,
    pub t_real: Option<f64>,
    pub coupled: Option<bool>,
    pub intra_queries: Option<Vec<f64>>,
    pub s_start: Option<u32>,
    pub perc: Option<crate::percolation::PercConfig>,
    pub control: Option<crate::percolation::PercConfig>,
    pub n_walks: Option<u32>,
    pub kappa_modes: Option<Vec<String>>,
    /// Start vertex (by name) for the simulation tasks; defaults to the
    /// first active vertex.
    pub start: Option<String>,
    /// Default output directory, overridable on the command line.
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    fn require_env(&self) -> Result<&GraphDoc> {
        self.env.as_ref().ok_or_else(|| Error::Config {
            field: "env".into(),
            msg: "this task requires an environment document".into(),
        })
    }

    /// Task-level validation with field-named errors.
    pub fn validate_for(&self, task: Task) -> Result<()> {
        if let Some(name) = &self.task {
            if Task::parse(name)? != task {
                return Err(Error::Config {
                    field: "task".into(),
                    msg: format!(
                        "config names task {name:?} but {:?} was requested",
                        task.name()
                    ),
                });
            }
        }
        match task {
            Task::VerifyIdentities | Task::EvolvingSim => {
                self.require_env()?;
            }
            Task::KernelDecay => {
                self.require_env()?;
                self.iso
                    .clone()
                    .unwrap_or_default()
                    .build(KappaMode::HalfVolume)?;
            }
            Task::KappaTable => {
                self.require_env()?;
                self.iso
                    .clone()
                    .unwrap_or_default()
                    .build(KappaMode::HalfVolume)?;
                if let Some(modes) = &self.kappa_modes {
                    for m in modes {
                        KappaMode::parse(m).map_err(|e| Error::Config {
                            field: "kappa_modes".into(),
                            msg: e.to_string(),
                        })?;
                    }
                }
            }
            Task::DriftSuite => {
                if let Some(alphas) = &self.alphas {
                    for &a in alphas {
                        if a == 1.0 {
                            return Err(Error::Config {
                                field: "alphas".into(),
                                msg: "alpha=1 vacuous: both drift inequalities degenerate".into(),
                            });
                        }
                        if !(a > 0.0) {
                            return Err(Error::Config {
                                field: "alphas".into(),
                                msg: format!("alpha must be positive, got {a}"),
                            });
                        }
                    }
                }
            }
            Task::CsrwSim => {
                if self.real_env.is_none() {
                    return Err(Error::Config {
                        field: "real_env".into(),
                        msg: "csrw-sim requires a real-time environment document".into(),
                    });
                }
            }
            Task::PercolationTransience => {
                let perc = self.perc.as_ref().ok_or_else(|| Error::Config {
                    field: "perc".into(),
                    msg: "percolation-transience requires a percolation config".into(),
                })?;
                perc.validate()?;
                if let Some(c) = &self.control {
                    c.validate()?;
                }
            }
        }
        Ok(())
    }
}

fn resolve_start(
    cfg: &ExperimentConfig,
    lookup: impl Fn(&str) -> Result<usize>,
) -> Result<Option<usize>> {
    match &cfg.start {
        None => Ok(None),
        Some(name) => lookup(name).map(Some).map_err(|e| Error::Config {
            field: "start".into(),
            msg: e.to_string(),
        }),
    }
}

fn write_artifact(out_dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    let mut f = std::fs::File::create(&path)?;
    f.write_all(contents.as_bytes())?;
    Ok(path)
}

fn seed_header(seed: u64) -> String {
    format!("# seed={seed}\n")
}

/// Runs one task and writes `report.json` plus the task's CSV artifacts
/// into `out_dir`.
pub fn run(task: Task, cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    cfg.validate_for(task)?;
    let started = Instant::now();
    let seed = cfg.seed.unwrap_or(0);
    let mut report = match task {
        Task::VerifyIdentities => run_verify_identities(cfg, seed, out_dir)?,
        Task::DriftSuite => run_drift_suite(cfg, seed, out_dir)?,
        Task::EvolvingSim => run_evolving_sim(cfg, seed, out_dir)?,
        Task::KernelDecay => run_kernel_decay(cfg, seed, out_dir)?,
        Task::CsrwSim => run_csrw_sim(cfg, seed, out_dir)?,
        Task::PercolationTransience => run_percolation(cfg, seed, out_dir)?,
        Task::KappaTable => run_kappa_table(cfg, seed, out_dir)?,
    }
    .finish(started);
    let json = serde_json::to_string_pretty(&report)?;
    let path = write_artifact(out_dir, "report.json", &json)?;
    report.artifacts.push(path.display().to_string());
    Ok(report)
}

/// The full identity battery over one environment document, run in both
/// scalar lanes where the caps allow. Returns one record per identity.
pub fn identity_battery(doc: &GraphDoc, label: &str) -> Result<Vec<InvariantRecord>> {
    let envf: DynEnv<f64> = doc.build()?;
    let envq: DynEnv<BigRational> = doc.build()?;
    let mut records = Vec::new();
    let tol = 1e-12;
    let n = envf.n_vertices();

    // Row stochasticity and one-step reversibility over the horizon.
    let mut row_err = 0.0f64;
    let mut rev_err = 0.0f64;
    for t in 0..=envf.horizon() {
        for x in 0..n {
            if !envf.is_active(t, x)? {
                continue;
            }
            let total: f64 = envf.one_step_row(t, x)?.iter().map(|(_, p)| p).sum();
            row_err = row_err.max((total - 1.0).abs());
            for y in 0..n {
                if !envf.is_active(t, y)? {
                    continue;
                }
                let lhs = envf.vertex_conductance(t, x)? * envf.transition_prob(t, x, y)?;
                let rhs = envf.vertex_conductance(t, y)? * envf.transition_prob(t, y, x)?;
                rev_err = rev_err.max((lhs - rhs).abs());
            }
        }
    }
    records.push(InvariantRecord::new(
        "row-stochastic",
        row_err <= tol,
        row_err,
        tol,
        label.into(),
    ));
    records.push(InvariantRecord::new(
        "one-step-reversibility",
        rev_err <= tol,
        rev_err,
        tol,
        label.into(),
    ));

    // Compensated monotonicity of t -> beta(t) pi_t(x).
    let rep = envf.monotonicity_report()?;
    let mut margin = f64::INFINITY;
    for t in 0..envf.horizon() {
        for x in 0..n {
            let before = rep.beta[t as usize] * envf.vertex_conductance(t, x)?;
            let after = rep.beta[t as usize + 1] * envf.vertex_conductance(t + 1, x)?;
            margin = margin.min(after - before);
        }
    }
    if margin.is_infinite() {
        margin = 0.0;
    }
    records.push(InvariantRecord::new(
        "beta-compensated-monotonicity",
        margin >= -tol,
        margin,
        tol,
        label.into(),
    ));

    // Per-state martingale and conditioned-kernel normalization, exact in
    // the rational lane.
    if n <= SET_DP_VERTEX_CAP {
        let mut mart_err = 0.0f64;
        let mut cond_err = 0.0f64;
        let mut mart_exact = true;
        for state in reachable_states(&envq)? {
            let law = successor_law(&envq, &state)?;
            let expect = law.expected_successor_mass(&envq)?;
            if expect != *state.mass() {
                mart_exact = false;
            }
            mart_err = mart_err.max(abs_diff(&expect, state.mass()));
            if !state.is_empty() {
                let cond = conditioned_kernel(&envq, &state)?;
                let total = cond
                    .outcomes()
                    .iter()
                    .fold(BigRational::zero(), |acc, o| acc + o.prob.clone());
                cond_err = cond_err.max((Weight::to_f64(&total) - 1.0).abs());
            }
        }
        records.push(InvariantRecord::new(
            "set-mass-martingale",
            mart_exact && mart_err <= tol,
            mart_err,
            tol,
            format!("{label}; exact lane"),
        ));
        records.push(InvariantRecord::new(
            "conditioned-kernel-normalization",
            cond_err <= tol,
            cond_err,
            tol,
            label.into(),
        ));
    }

    // Walk/set duality via the subset DP against the kernel oracle.
    if n <= SET_DP_VERTEX_CAP {
        let mut dual_err = 0.0f64;
        for t in 0..=envf.horizon() {
            let k = multi_step_kernel(&envf, 0, t)?;
            for x in envf.active_vertices(0)? {
                let dist = exact_set_distribution(&envf, x, t)?;
                for y in 0..n {
                    if !envf.is_active(t, y)? {
                        continue;
                    }
                    let lhs = envf.vertex_conductance(t, y)? / envf.vertex_conductance(0, x)?
                        * dist.membership_prob(y);
                    dual_err = dual_err.max((lhs - k.get(x, y)).abs());
                }
            }
        }
        records.push(InvariantRecord::new(
            "walk-set-duality",
            dual_err <= tol,
            dual_err,
            tol,
            label.into(),
        ));
    }

    // Coupling marginals and conditional uniformity.
    if n <= JOINT_DP_VERTEX_CAP {
        let t_max = envf.horizon().min(3);
        let mut walk_err = 0.0f64;
        let mut set_err = 0.0f64;
        let mut uni_err = 0.0f64;
        for x in envf.active_vertices(0)? {
            let joint = joint_exact_distribution(&envf, x, t_max)?;
            let k = multi_step_kernel(&envf, 0, t_max)?;
            let wm = joint_walk_marginal(&joint, n);
            for (y, w) in wm.iter().enumerate() {
                walk_err = walk_err.max((w - k.get(x, y)).abs());
            }
            let sm = joint_set_marginal(&joint);
            let cond = conditioned_chain_distribution(&envf, x, t_max)?;
            for (mask, p) in &sm {
                set_err = set_err.max((p - cond.support.get(mask).copied().unwrap_or(0.0)).abs());
            }
            for (mask, p) in &cond.support {
                set_err = set_err.max((p - sm.get(mask).copied().unwrap_or(0.0)).abs());
            }
            uni_err = uni_err.max(coupling_uniformity_deviation(&envf, x, t_max)?);
        }
        records.push(InvariantRecord::new(
            "coupling-walk-marginal",
            walk_err <= tol,
            walk_err,
            tol,
            label.into(),
        ));
        records.push(InvariantRecord::new(
            "coupling-set-marginal",
            set_err <= tol,
            set_err,
            tol,
            label.into(),
        ));
        records.push(InvariantRecord::new(
            "coupling-conditional-uniformity",
            uni_err <= tol,
            uni_err,
            tol,
            label.into(),
        ));
    }

    // Complement duality applies only to constant reversing measures.
    let constant = {
        let points = envf.change_points();
        let mut constant = true;
        'outer: for &t in &points[1..] {
            for x in 0..n {
                if envf.vertex_conductance(t, x)? != envf.vertex_conductance(t - 1, x)? {
                    constant = false;
                    break 'outer;
                }
            }
        }
        constant
    };
    if constant && envf.laziness_coefficient() > 0.0 && envf.horizon() >= 1 {
        let mut pass = true;
        let mut rng = replica_rng(0xD0A1, 0);
        let active = envf.active_vertices(0)?;
        for _ in 0..4 {
            let a: Vec<usize> = active
                .iter()
                .copied()
                .filter(|_| rng.random::<f64>() < 0.5)
                .collect();
            pass &= complement_dual_check(&envq, &a)?;
        }
        records.push(InvariantRecord::new(
            "complement-duality",
            pass,
            if pass { 0.0 } else { 1.0 },
            tol,
            format!("{label}; exact lane, random subsets"),
        ));
    }

    // Embedding consistency at s = 0 on every reachable state.
    if n <= SET_DP_VERTEX_CAP {
        let mut emb_err = 0.0f64;
        for state in reachable_states(&envf)? {
            let m = embedding::m_interpolate(&envf, &state, 0.0, 0.0)?;
            emb_err = emb_err.max((m - state.mass()).abs());
        }
        records.push(InvariantRecord::new(
            "embedding-integer-match",
            emb_err <= tol,
            emb_err,
            tol,
            label.into(),
        ));
    }
    Ok(records)
}

fn run_verify_identities(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<RunReport> {
    let doc = cfg.require_env()?;
    let env: DynEnv<f64> = doc.build()?;
    let mut records = identity_battery(doc, "configured env")?;
    let extra = cfg.fuzz_envs.unwrap_or(0);
    for i in 0..extra {
        let mut rng = replica_rng(seed, i as u64);
        let n = rng.random_range(2..=fuzz::FUZZ_VERTEX_CAP);
        let horizon = rng.random_range(1..=fuzz::FUZZ_HORIZON_CAP);
        let fuzz_doc = fuzz::random_env_doc(n, horizon, false, &mut rng)?;
        records.extend(identity_battery(&fuzz_doc, &format!("fuzz {i}"))?);
    }
    let mut csv = seed_header(seed);
    csv.push_str("anchor,pass,measured,tolerance,note\n");
    for r in &records {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.anchor, r.pass, r.measured, r.tolerance, r.note
        ));
    }
    let path = write_artifact(out_dir, "records.csv", &csv)?;
    Ok(RunReport {
        task: Task::VerifyIdentities.name().into(),
        seed,
        env_digest: env.digest(),
        passed: false,
        records,
        artifacts: vec![path.display().to_string()],
        timing_ms: 0,
    })
}

fn run_drift_suite(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<RunReport> {
    let alphas = cfg
        .alphas
        .clone()
        .unwrap_or_else(|| vec![0.25, 0.5, 0.75, 1.5, 2.0]);
    let n_envs = cfg.fuzz_envs.unwrap_or(100);
    let mut csv = seed_header(seed);
    csv.push_str("env,t,set_mask,alpha,lhs,rhs,pass\n");
    let mut worst_upper = f64::NEG_INFINITY;
    let mut worst_lower = f64::NEG_INFINITY;
    let mut all_pass = true;
    for i in 0..n_envs {
        let mut rng = replica_rng(seed, i as u64);
        let n = rng.random_range(2..=fuzz::FUZZ_VERTEX_CAP);
        let horizon = rng.random_range(1..=fuzz::FUZZ_HORIZON_CAP);
        let env: DynEnv<f64> = fuzz::random_env_fuzzer(n, horizon, &mut rng)?;
        let gamma = env.laziness_coefficient().min(0.5);
        for state in reachable_states(&env)? {
            if state.is_empty() {
                continue;
            }
            for &alpha in &alphas {
                let check = drift_check(&env, &state, alpha, gamma)?;
                all_pass &= check.pass;
                let margin = if alpha < 1.0 {
                    check.lhs - check.rhs
                } else {
                    check.rhs - check.lhs
                };
                if alpha < 1.0 {
                    worst_upper = worst_upper.max(margin);
                } else {
                    worst_lower = worst_lower.max(margin);
                }
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    i,
                    state.t(),
                    state.mask(),
                    alpha,
                    check.lhs,
                    check.rhs,
                    check.pass
                ));
            }
        }
    }
    let path = write_artifact(out_dir, "drift.csv", &csv)?;
    let records = vec![
        InvariantRecord::new(
            "drift-upper-bound",
            all_pass && worst_upper <= 1e-12,
            worst_upper,
            1e-12,
            format!("max (lhs - rhs) over {n_envs} fuzzed envs, alpha < 1"),
        ),
        InvariantRecord::new(
            "drift-lower-bound",
            all_pass && worst_lower <= 1e-12,
            worst_lower,
            1e-12,
            format!("max (rhs - lhs) over {n_envs} fuzzed envs, alpha > 1"),
        ),
    ];
    Ok(RunReport {
        task: Task::DriftSuite.name().into(),
        seed,
        env_digest: String::new(),
        passed: false,
        records,
        artifacts: vec![path.display().to_string()],
        timing_ms: 0,
    })
}

fn run_evolving_sim(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<RunReport> {
    let doc = cfg.require_env()?;
    let env: DynEnv<f64> = doc.build()?;
    let start = resolve_start(cfg, |name| env.vertex_index(name))?
        .unwrap_or(env.active_vertices(0)?[0]);
    let replicas = cfg.replicas.unwrap_or(8);
    let t_max = cfg
        .t_max
        .unwrap_or(env.horizon() as u64)
        .min(env.horizon() as u64) as u32;
    let coupled = cfg.coupled.unwrap_or(false);
    let mut csv = seed_header(seed);
    csv.push_str("replica,t,set_size,set_mass,walker\n");
    let mut mart_err = 0.0f64;
    let mut contained = true;
    for replica in 0..replicas {
        let mut rng = replica_rng(seed, replica as u64);
        let mut state = SetState::new(&env, 0, vec![start])?;
        let mut walker = start;
        let walker_col = |w: usize, alive: bool| {
            if coupled && alive {
                env.vertex_name(w).to_string()
            } else {
                String::new()
            }
        };
        csv.push_str(&format!(
            "{replica},0,{},{},{}\n",
            state.members().len(),
            state.mass(),
            walker_col(walker, true)
        ));
        for t in 0..t_max {
            let law = successor_law(&env, &state)?;
            mart_err = mart_err.max(abs_diff(&law.expected_successor_mass(&env)?, state.mass()));
            let next_members = if coupled && !state.is_empty() {
                let (y, members) = df_coupled_step(&env, walker, &state, &mut rng)?;
                walker = y;
                members
            } else {
                let u = crate::seeding::uniform_open01(&mut rng);
                law.sample(u)
            };
            state = SetState::new(&env, t + 1, next_members)?;
            if coupled && !state.is_empty() {
                contained &= state.contains(walker);
            }
            csv.push_str(&format!(
                "{replica},{},{},{},{}\n",
                t + 1,
                state.members().len(),
                state.mass(),
                walker_col(walker, !state.is_empty())
            ));
        }
    }
    let mut artifacts = vec![write_artifact(out_dir, "trajectories.csv", &csv)?
        .display()
        .to_string()];
    let mut records = vec![InvariantRecord::new(
        "set-mass-martingale",
        mart_err <= 1e-12,
        mart_err,
        1e-12,
        "per-visited-state expected successor mass".into(),
    )];
    if coupled {
        records.push(InvariantRecord::new(
            "coupling-conditional-uniformity",
            contained,
            if contained { 0.0 } else { 1.0 },
            0.0,
            "walker stayed inside the evolving set".into(),
        ));
    }
    if let Some(queries) = &cfg.intra_queries {
        let mut mcsv = seed_header(seed);
        mcsv.push_str("replica,u,m,set_size,mode\n");
        let mut int_err = 0.0f64;
        for replica in 0..replicas {
            let mut rng = replica_rng(seed ^ 0xE3BED, replica as u64);
            let path =
                embedding::embed_path(&env, start, queries, IntraStepMode::BridgePath, &mut rng)?;
            for (u, m) in &path.m_samples {
                let set_size = path.sets[u.floor() as usize].members().len();
                mcsv.push_str(&format!(
                    "{replica},{u},{m},{set_size},{}\n",
                    path.mode.label()
                ));
            }
            for (i, st) in path.sets.iter().enumerate() {
                let at = path.m_samples.iter().find(|(u, _)| *u == i as f64).unwrap();
                int_err = int_err.max((at.1 - st.mass()).abs());
            }
        }
        records.push(InvariantRecord::new(
            "embedding-integer-match",
            int_err <= 1e-12,
            int_err,
            1e-12,
            "M at integer times equals the set mass".into(),
        ));
        artifacts.push(
            write_artifact(out_dir, "m_trace.csv", &mcsv)?
                .display()
                .to_string(),
        );
    }
    Ok(RunReport {
        task: Task::EvolvingSim.name().into(),
        seed,
        env_digest: env.digest(),
        passed: false,
        records,
        artifacts,
        timing_ms: 0,
    })
}

fn run_kernel_decay(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<RunReport> {
    let doc = cfg.require_env()?;
    let env: DynEnv<f64> = doc.build()?;
    let iso = cfg
        .iso
        .clone()
        .unwrap_or_default()
        .build(KappaMode::HalfVolume)?;
    let s = cfg.s_start.unwrap_or(0);
    let envelope = crate::exact_chain::decay_envelope(&env, s, &iso)?;
    let mut csv = seed_header(seed);
    csv.push_str("t,envelope,running_max\n");
    let mut running = 0.0f64;
    let mut mid_running = 0.0f64;
    let horizon = env.horizon();
    let mid = s + (horizon - s) / 2;
    for (t, v) in &envelope {
        running = running.max(*v);
        if *t <= mid {
            mid_running = running;
        }
        csv.push_str(&format!("{t},{v},{running}\n"));
    }
    let stable = running.is_finite() && running <= mid_running * (1.0 + 1e-9);
    let mut records = vec![InvariantRecord::new(
        "kernel-decay-envelope",
        stable,
        running,
        mid_running,
        format!("running max must not grow after t={mid} (bounded envelope)"),
    )];
    let table = PsiTable::new(&env, &iso)?;
    let growth = table.psi_beta(horizon)? - table.psi_beta(s)?;
    let r = crate::isoperimetry::r_condition(&env, s, horizon, &iso)?;
    records.push(InvariantRecord::new(
        "interior-time-condition",
        true,
        match r {
            RSearch::Found(r) => r as f64,
            _ => -1.0,
        },
        0.0,
        format!("growth {growth}; outcome {r:?} (diagnostic)"),
    ));
    let path = write_artifact(out_dir, "decay.csv", &csv)?;
    Ok(RunReport {
        task: Task::KernelDecay.name().into(),
        seed,
        env_digest: env.digest(),
        passed: false,
        records,
        artifacts: vec![path.display().to_string()],
        timing_ms: 0,
    })
}

fn run_csrw_sim(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<RunReport> {
    let env_doc = cfg.real_env.as_ref().expect("validated");
    let env = env_doc.build()?;
    let x0 = resolve_start(cfg, |name| {
        env_doc
            .vertices
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::UnknownVertexName(name.to_string()))
    })?
    .unwrap_or(0);
    let replicas = cfg.replicas.unwrap_or(1000);
    let t_real = cfg.t_real.unwrap_or(50.0);
    let mut csv = seed_header(seed);
    csv.push_str("replica,ring_time,vertex,moved\n");
    let mut counts = Vec::with_capacity(replicas as usize);
    let mut gaps = Vec::new();
    for replica in 0..replicas {
        let mut rng = replica_rng(seed, replica as u64);
        let path = csrw::simulate_csrw(&env, x0, t_real, &mut rng)?;
        counts.push(path.ring_count() as f64);
        gaps.extend(path.effective_interarrivals());
        for (k, &t) in path.jump_times.iter().enumerate() {
            csv.push_str(&format!(
                "{replica},{t},{},{}\n",
                env.vertex_name(path.positions[k]),
                path.moved[k]
            ));
        }
    }
    let lambda = csrw::CLOCK_RATE * t_real;
    let n = counts.len() as f64;
    let mean_err = (stats::mean(&counts) - lambda).abs();
    let mean_band = 4.0 * (lambda / n).sqrt();
    let var_err = (stats::variance(&counts) - lambda).abs();
    // Poisson fourth central moment is lambda (1 + 3 lambda); the variance
    // estimator's variance is (mu4 - sigma^4 (n-3)/(n-1)) / n.
    let mu4 = lambda * (1.0 + 3.0 * lambda);
    let var_band = 4.0 * ((mu4 - lambda * lambda * (n - 3.0) / (n - 1.0)) / n).sqrt();
    let mut records = vec![
        InvariantRecord::new(
            "poisson-clock-count",
            mean_err <= mean_band,
            mean_err,
            mean_band,
            format!("ring-count mean vs {lambda} over {replicas} paths"),
        ),
        InvariantRecord::new(
            "poisson-clock-count",
            var_err <= var_band,
            var_err,
            var_band,
            format!("ring-count variance vs {lambda} over {replicas} paths"),
        ),
    ];
    // Effective waits are exp(1) exactly when the frozen kernels cannot
    // stay put, i.e. on loopless environments.
    if env_doc.is_loopless() && gaps.len() >= 100 {
        let d = stats::ks_statistic(&gaps, |x| stats::exp_cdf(1.0, x));
        let crit = stats::ks_critical(0.01, gaps.len());
        records.push(InvariantRecord::new(
            "thinned-interarrival",
            d <= crit,
            d,
            crit,
            format!("KS vs exp(1) on {} effective waits", gaps.len()),
        ));
    }
    let path = write_artifact(out_dir, "paths.csv", &csv)?;
    Ok(RunReport {
        task: Task::CsrwSim.name().into(),
        seed,
        env_digest: String::new(),
        passed: false,
        records,
        artifacts: vec![path.display().to_string()],
        timing_ms: 0,
    })
}

fn run_percolation(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<RunReport> {
    let perc = cfg.perc.as_ref().expect("validated");
    let n_walks = cfg.n_walks.unwrap_or(100);
    let t_max = cfg.t_max.unwrap_or(10_000);
    let cluster = generate_cluster(perc)?;
    let env = growing_env(&cluster, perc, t_max as u32)?;
    let summary = transience_experiment(&env, n_walks, t_max, seed)?;
    let mut csv = seed_header(seed);
    csv.push_str("walk,returns,last_entry,killed_at,late_visit\n");
    for (i, w) in summary.per_walk.iter().enumerate() {
        csv.push_str(&format!(
            "{i},{},{},{},{}\n",
            w.returns,
            w.last_entry.map_or(String::new(), |v| v.to_string()),
            w.killed_at.map_or(String::new(), |v| v.to_string()),
            w.late_visit
        ));
    }
    let mut records = vec![
        InvariantRecord::new(
            "plumbing",
            true,
            summary.kill_fraction,
            1.0,
            format!(
                "boundary kill fraction; cluster {} of {} sites in {} attempt(s)",
                cluster.names.len(),
                cluster.box_sites,
                cluster.attempts
            ),
        ),
        InvariantRecord::new(
            "linear-growth-support",
            true,
            0.0,
            0.0,
            "asserted on every simulated step".into(),
        ),
    ];
    if let Some(control_cfg) = &cfg.control {
        let control_cluster = generate_cluster(control_cfg)?;
        let control_env = growing_env(&control_cluster, control_cfg, t_max as u32)?;
        let control = transience_experiment(&control_env, n_walks, t_max, seed ^ 0xC0)?;
        let pass = 5.0 * summary.late_return_fraction <= control.late_return_fraction;
        records.push(InvariantRecord::new(
            "transience-trend",
            pass,
            summary.late_return_fraction,
            control.late_return_fraction / 5.0,
            format!(
                "late-return fraction vs recurrent control {} (control d={})",
                control.late_return_fraction, control_cfg.d
            ),
        ));
    } else {
        records.push(InvariantRecord::new(
            "transience-trend",
            true,
            summary.late_return_fraction,
            1.0,
            format!(
                "late-return fraction recorded; median returns {}; no control configured",
                summary.median_returns
            ),
        ));
    }
    let path = write_artifact(out_dir, "returns.csv", &csv)?;
    Ok(RunReport {
        task: Task::PercolationTransience.name().into(),
        seed,
        env_digest: env.digest(),
        passed: false,
        records,
        artifacts: vec![path.display().to_string()],
        timing_ms: 0,
    })
}

fn run_kappa_table(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<RunReport> {
    let doc = cfg.require_env()?;
    let env: DynEnv<f64> = doc.build()?;
    let iso_doc = cfg.iso.clone().unwrap_or_default();
    let mode_names = cfg
        .kappa_modes
        .clone()
        .unwrap_or_else(|| vec!["exact".into(), "half_volume".into()]);
    let mut csv = seed_header(seed);
    csv.push_str("t,kappa,psi,psi_beta,mode\n");
    let mut agree_err = 0.0f64;
    let mut singleton_margin = f64::NEG_INFINITY;
    let mut compared = false;
    for name in &mode_names {
        let mode = KappaMode::parse(name)?;
        let iso = iso_doc.build(mode)?;
        let table = PsiTable::new(&env, &iso)?;
        for t in 0..=env.horizon() {
            csv.push_str(&format!(
                "{t},{},{},{},{}\n",
                table.kappa(t)?,
                table.psi(t)?,
                table.psi_beta(t)?,
                mode.name()
            ));
        }
        if mode != KappaMode::LatticeAnalytic && env.n_vertices() <= 16 {
            compared = true;
            for &t in &env.change_points() {
                let a = kappa(&env, t, &iso)?;
                let b = kappa_reference(&env, t, &iso)?;
                agree_err = agree_err.max((a - b).abs());
                singleton_margin = singleton_margin.max(a - singleton_upper_bound(&env, t, &iso)?);
            }
        }
    }
    let mut records = Vec::new();
    if compared {
        records.push(InvariantRecord::new(
            "kappa-enumerator-agreement",
            agree_err <= 1e-12,
            agree_err,
            1e-12,
            "gray-code scan vs reference enumeration".into(),
        ));
        records.push(InvariantRecord::new(
            "kappa-singleton-bound",
            singleton_margin <= 1e-12,
            singleton_margin,
            1e-12,
            "kappa at most inf_v pi({v})^(1/d)".into(),
        ));
    } else {
        records.push(InvariantRecord::new(
            "plumbing",
            true,
            0.0,
            0.0,
            "table emitted; enumerative cross-check skipped (size or mode)".into(),
        ));
    }
    let path = write_artifact(out_dir, "kappa.csv", &csv)?;
    Ok(RunReport {
        task: Task::KappaTable.name().into(),
        seed,
        env_digest: env.digest(),
        passed: false,
        records,
        artifacts: vec![path.display().to_string()],
        timing_ms: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzz::{hand_e2_doc, hand_e3_doc};

    fn out_dir(name: &str) -> PathBuf {
        let dir =
            std::env::temp_dir().join(format!("evoset-harness-{}-{name}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn verify_identities_on_e2_passes() {
        let cfg = ExperimentConfig {
            env: Some(hand_e2_doc(4)),
            seed: Some(7),
            ..Default::default()
        };
        let dir = out_dir("verify");
        let report = run(Task::VerifyIdentities, &cfg, &dir).unwrap();
        assert!(report.passed, "records: {:?}", report.records);
        assert!(dir.join("records.csv").exists());
        assert!(dir.join("report.json").exists());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn config_validation_names_fields() {
        let cfg = ExperimentConfig {
            env: Some(hand_e2_doc(2)),
            ..Default::default()
        };
        match cfg.validate_for(Task::KappaTable) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "iso.d"),
            other => panic!("expected config error, got {other:?}"),
        }
        let cfg = ExperimentConfig {
            alphas: Some(vec![0.5, 1.0]),
            ..Default::default()
        };
        match cfg.validate_for(Task::DriftSuite) {
            Err(Error::Config { field, msg }) => {
                assert_eq!(field, "alphas");
                assert!(msg.contains("alpha=1 vacuous"));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn evolving_sim_is_byte_deterministic() {
        let cfg = ExperimentConfig {
            env: Some(hand_e3_doc(4)),
            seed: Some(11),
            replicas: Some(4),
            coupled: Some(true),
            intra_queries: Some(vec![0.5]),
            ..Default::default()
        };
        let d1 = out_dir("sim1");
        let d2 = out_dir("sim2");
        run(Task::EvolvingSim, &cfg, &d1).unwrap();
        run(Task::EvolvingSim, &cfg, &d2).unwrap();
        for name in ["trajectories.csv", "m_trace.csv"] {
            let a = std::fs::read(d1.join(name)).unwrap();
            let b = std::fs::read(d2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        std::fs::remove_dir_all(&d1).ok();
        std::fs::remove_dir_all(&d2).ok();
    }

    #[test]
    fn kappa_table_on_e2() {
        let cfg = ExperimentConfig {
            env: Some(hand_e2_doc(2)),
            iso: Some(IsoDoc {
                d: Some(2.0),
                mode: None,
                lambda: None,
            }),
            ..Default::default()
        };
        let dir = out_dir("kappa");
        let report = run(Task::KappaTable, &cfg, &dir).unwrap();
        assert!(report.passed, "records: {:?}", report.records);
        let csv = std::fs::read_to_string(dir.join("kappa.csv")).unwrap();
        assert!(csv.starts_with("# seed=0\n"));
        assert!(csv.contains("half_volume"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn drift_suite_small_run_passes() {
        let cfg = ExperimentConfig {
            seed: Some(3),
            fuzz_envs: Some(10),
            ..Default::default()
        };
        let dir = out_dir("drift");
        let report = run(Task::DriftSuite, &cfg, &dir).unwrap();
        assert!(report.passed, "records: {:?}", report.records);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn start_vertex_is_resolved_by_name() {
        let cfg = ExperimentConfig {
            env: Some(hand_e2_doc(3)),
            seed: Some(2),
            replicas: Some(2),
            start: Some("b".into()),
            ..Default::default()
        };
        let dir = out_dir("start");
        let report = run(Task::EvolvingSim, &cfg, &dir).unwrap();
        assert!(report.passed);
        let bad = ExperimentConfig { start: Some("zzz".into()), ..cfg };
        match run(Task::EvolvingSim, &bad, &dir) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "start"),
            other => panic!("expected config error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn task_names_round_trip() {
        for name in [
            "verify-identities",
            "drift-suite",
            "evolving-sim",
            "kernel-decay",
            "csrw-sim",
            "percolation-transience",
            "kappa-table",
        ] {
            assert_eq!(Task::parse(name).unwrap().name(), name);
        }
        assert!(Task::parse("no-such-task").is_err());
    }
}

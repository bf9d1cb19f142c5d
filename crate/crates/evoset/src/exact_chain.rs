//! Exact multi-step transition probabilities and heat kernels on small
//! graphs, by forward composition of one-step kernels.
//!
//! This module is the ground truth the set-valued machinery is checked
//! against. Tables are dense and the module refuses graphs above
//! [`KERNEL_VERTEX_CAP`] vertices rather than silently going sparse.

use std::io::Write;
use std::path::Path;

use crate::dyn_graph::DynEnv;
use crate::error::{Error, Result};
use crate::isoperimetry::{IsoConfig, PsiTable};
use crate::weight::Weight;

pub const KERNEL_VERTEX_CAP: usize = 2000;

/// Dense table of `P(s, x; t, y)` over all vertex pairs. Rows of inactive
/// sources are zero; rows of `x` in `V_s` sum to 1.
#[derive(Debug, Clone)]
pub struct KernelSlice<W> {
    s: u32,
    t: u32,
    n: usize,
    probs: Vec<W>,
}

impl<W: Weight> KernelSlice<W> {
    pub fn start_time(&self) -> u32 {
        self.s
    }

    pub fn end_time(&self) -> u32 {
        self.t
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn get(&self, x: usize, y: usize) -> &W {
        &self.probs[x * self.n + y]
    }

    pub fn row(&self, x: usize) -> &[W] {
        &self.probs[x * self.n..(x + 1) * self.n]
    }

    /// Identity slice `P(s, .; s, .)` on `V_s`.
    pub fn identity(env: &DynEnv<W>, s: u32) -> Result<Self> {
        let n = env.n_vertices();
        if n > KERNEL_VERTEX_CAP {
            return Err(Error::GraphTooLarge {
                n,
                cap: KERNEL_VERTEX_CAP,
            });
        }
        let mut probs = vec![W::zero(); n * n];
        for x in 0..n {
            if env.is_active(s, x)? {
                probs[x * n + x] = W::one();
            }
        }
        Ok(KernelSlice { s, t: s, n, probs })
    }

    /// Composes with the one-step kernel at the slice's end time, advancing
    /// `t` by one.
    pub fn advance(&mut self, env: &DynEnv<W>) -> Result<()> {
        let n = self.n;
        let t = self.t;
        if t >= env.horizon() {
            return Err(Error::BeyondHorizon {
                t: t + 1,
                horizon: env.horizon(),
            });
        }
        // Rows of the one-step kernel for every vertex active at t.
        let mut rows: Vec<Option<Vec<(usize, W)>>> = Vec::with_capacity(n);
        for z in 0..n {
            rows.push(if env.is_active(t, z)? {
                Some(env.one_step_row(t, z)?)
            } else {
                None
            });
        }
        let mut next = vec![W::zero(); n * n];
        for x in 0..n {
            let src = &self.probs[x * n..(x + 1) * n];
            let dst = &mut next[x * n..(x + 1) * n];
            for (z, p) in src.iter().enumerate() {
                if !(p.clone() > W::zero()) {
                    continue;
                }
                if let Some(row) = &rows[z] {
                    for (y, q) in row {
                        dst[*y] = dst[*y].clone() + p.clone() * q.clone();
                    }
                }
            }
        }
        self.probs = next;
        self.t += 1;
        Ok(())
    }
}

/// `P(s, .; t, .)` by forward composition. Requires `s <= t <= horizon`.
pub fn multi_step_kernel<W: Weight>(env: &DynEnv<W>, s: u32, t: u32) -> Result<KernelSlice<W>> {
    if t < s {
        return Err(Error::Parameter {
            name: "t",
            msg: format!("end time {t} before start {s}"),
        });
    }
    if t > env.horizon() {
        return Err(Error::BeyondHorizon {
            t,
            horizon: env.horizon(),
        });
    }
    let mut slice = KernelSlice::identity(env, s)?;
    for _ in s..t {
        slice.advance(env)?;
    }
    Ok(slice)
}

/// Heat kernel `h(s, x; t, y) = P(s, x; t, y) / pi_t(y)`.
///
/// Requires `x` in `V_s` and `y` in `V_t`. For time-constant conductances
/// the quantity `pi_s(x) h(s, x; t, y)` is symmetric in `(x, y)`; nothing
/// of the sort is asserted when conductances move.
pub fn heat_kernel<W: Weight>(env: &DynEnv<W>, s: u32, x: usize, t: u32, y: usize) -> Result<W> {
    if !env.is_active(s, x)? {
        return Err(Error::InactiveVertex { vertex: x, t: s });
    }
    if !env.is_active(t, y)? {
        return Err(Error::InactiveVertex { vertex: y, t });
    }
    let slice = multi_step_kernel(env, s, t)?;
    let py = env.vertex_conductance(t, y)?;
    Ok(slice.get(x, y).clone() / py)
}

/// Empirical decay envelope: for each `t` in `s..=horizon`, the supremum
/// over `x` in `V_s`, `y` in `V_t` of
/// `pi_s(x) h(s,x;t,y) (e + psi_d(t) - psi_d(s))^{d/2}`.
///
/// The additive `e` keeps the factor meaningful at `t = s`, where the
/// isoperimetric growth difference vanishes. Boundedness of this sequence
/// is the desk-scale surrogate for on-diagonal heat-kernel decay: the
/// theory's constant is not explicit, so the envelope's running maximum is
/// reported instead of being compared to one.
pub fn decay_envelope(env: &DynEnv<f64>, s: u32, cfg: &IsoConfig) -> Result<Vec<(u32, f64)>> {
    let report = env.monotonicity_report()?;
    if !report.is_effectively_nondecreasing {
        return Err(Error::Parameter {
            name: "env",
            msg: "decay envelope requires effectively non-decreasing vertex conductances".into(),
        });
    }
    let psi = PsiTable::new(env, cfg)?;
    let n = env.n_vertices();
    let mut slice = KernelSlice::identity(env, s)?;
    let mut pis: Vec<f64> = Vec::with_capacity(n);
    for x in 0..n {
        pis.push(env.vertex_conductance(s, x)?);
    }
    let mut out = Vec::with_capacity((env.horizon() - s + 1) as usize);
    for t in s..=env.horizon() {
        if t > s {
            slice.advance(env)?;
        }
        let mut sup = 0.0f64;
        for (x, pix) in pis.iter().enumerate() {
            if *pix <= 0.0 {
                continue;
            }
            let row = slice.row(x);
            for (y, p) in row.iter().enumerate() {
                if *p > 0.0 {
                    let py = env.vertex_conductance(t, y)?;
                    sup = sup.max(pis[x] * p / py);
                }
            }
        }
        let factor = (std::f64::consts::E + psi.psi(t)? - psi.psi(s)?).powf(cfg.d / 2.0);
        out.push((t, sup * factor));
    }
    Ok(out)
}

/// Writes a kernel slice as CSV rows `s,t,x,y,prob` (vertex names), one
/// row per pair with positive probability.
pub fn write_kernel_csv<W: Weight, Wr: Write>(
    env: &DynEnv<W>,
    slice: &KernelSlice<W>,
    out: &mut Wr,
) -> Result<()> {
    writeln!(out, "s,t,x,y,prob")?;
    let n = slice.n_vertices();
    for x in 0..n {
        for y in 0..n {
            let p = slice.get(x, y);
            if p.clone() > W::zero() {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    slice.start_time(),
                    slice.end_time(),
                    env.vertex_name(x),
                    env.vertex_name(y),
                    p.to_f64()
                )?;
            }
        }
    }
    Ok(())
}

const CACHE_MAGIC: &[u8; 8] = b"EVOKRN1\0";

/// Canonical cache file name for a slice: environment digest prefix plus
/// the `(s, t)` pair.
pub fn kernel_cache_filename(env: &DynEnv<f64>, s: u32, t: u32) -> String {
    format!("kernel-{}-{s}-{t}.bin", &env.digest()[..16])
}

/// Writes a compact binary cache of an `f64` kernel slice, keyed by the
/// environment digest and the `(s, t)` pair.
pub fn save_kernel_cache(path: &Path, env: &DynEnv<f64>, slice: &KernelSlice<f64>) -> Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(64 + slice.probs.len() * 8);
    buf.extend_from_slice(CACHE_MAGIC);
    let digest = env.digest();
    buf.extend_from_slice(&(digest.len() as u64).to_le_bytes());
    buf.extend_from_slice(digest.as_bytes());
    buf.extend_from_slice(&slice.s.to_le_bytes());
    buf.extend_from_slice(&slice.t.to_le_bytes());
    buf.extend_from_slice(&(slice.n as u64).to_le_bytes());
    for p in &slice.probs {
        buf.extend_from_slice(&p.to_bits().to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Reads a binary kernel cache back, verifying the magic and that it was
/// produced for this exact environment.
pub fn load_kernel_cache(path: &Path, env: &DynEnv<f64>) -> Result<KernelSlice<f64>> {
    let data = std::fs::read(path)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, len: usize| -> Result<&[u8]> {
        if *pos + len > data.len() {
            return Err(Error::Cache("truncated cache file".into()));
        }
        let out = &data[*pos..*pos + len];
        *pos += len;
        Ok(out)
    };
    if take(&mut pos, 8)? != CACHE_MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let dlen = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let digest = String::from_utf8(take(&mut pos, dlen)?.to_vec())
        .map_err(|_| Error::Cache("digest not utf-8".into()))?;
    if digest != env.digest() {
        return Err(Error::Cache(
            "cache was built for a different environment".into(),
        ));
    }
    let s = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let t = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let n = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let mut probs = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        probs.push(f64::from_bits(u64::from_le_bytes(
            take(&mut pos, 8)?.try_into().unwrap(),
        )));
    }
    Ok(KernelSlice { s, t, n, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzz::{hand_e2, hand_e2_doubled, hand_e3};
    use num_rational::BigRational;

    #[test]
    fn zero_steps_is_the_identity() {
        let env = hand_e3::<f64>(4);
        let k = multi_step_kernel(&env, 2, 2).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                assert_eq!(*k.get(x, y), if x == y { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn e2_two_step_return_probability() {
        let env = hand_e2::<f64>(4);
        let k = multi_step_kernel(&env, 0, 2).unwrap();
        assert!((k.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn doubling_weights_leaves_ratios_unchanged() {
        let env = hand_e2_doubled::<BigRational>(4);
        let k = multi_step_kernel(&env, 0, 2).unwrap();
        assert_eq!(*k.get(0, 0), BigRational::new(1.into(), 2.into()));
    }

    #[test]
    fn conservation_over_the_horizon() {
        let env = hand_e3::<f64>(6);
        for s in 0..=6u32 {
            for t in s..=6 {
                let k = multi_step_kernel(&env, s, t).unwrap();
                for x in 0..3 {
                    let total: f64 = k.row(x).iter().sum();
                    assert!(
                        (total - 1.0).abs() < 1e-12,
                        "row sum {total} at ({s},{t},{x})"
                    );
                }
            }
        }
    }

    #[test]
    fn e2_heat_kernel_value() {
        let env = hand_e2::<f64>(4);
        assert!((heat_kernel(&env, 0, 0, 1, 1).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn heat_kernel_at_equal_times_is_reciprocal_mass() {
        let env = hand_e3::<f64>(4);
        let h = heat_kernel(&env, 2, 1, 2, 1).unwrap();
        assert!((h - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn delayed_env_heat_kernel_equals_transition_probability() {
        use crate::dyn_graph::{DynEnv, Schedule};
        let env = DynEnv::<f64>::delayed(
            vec!["a".into(), "b".into()],
            vec![(0, 1, Schedule::constant(0.25))],
            0.5,
            3,
        )
        .unwrap();
        let k = multi_step_kernel(&env, 0, 2).unwrap();
        for x in 0..2 {
            for y in 0..2 {
                let h = heat_kernel(&env, 0, x, 2, y).unwrap();
                assert!((h - k.get(x, y)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_conductance_heat_kernel_is_symmetric() {
        let env = hand_e3::<f64>(5);
        for x in 0..3 {
            for y in 0..3 {
                let a =
                    env.vertex_conductance(0, x).unwrap() * heat_kernel(&env, 0, x, 4, y).unwrap();
                let b =
                    env.vertex_conductance(0, y).unwrap() * heat_kernel(&env, 0, y, 4, x).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decay_envelope_first_entry_and_finite_range() {
        use crate::isoperimetry::{IsoConfig, KappaMode};
        let env = hand_e2::<f64>(64);
        let cfg = IsoConfig::new(2.0, KappaMode::HalfVolume).unwrap();
        let envelope = decay_envelope(&env, 0, &cfg).unwrap();
        assert_eq!(envelope.len(), 65);
        // At t = s the growth difference is 0 and the additive e carries
        // the factor: sup_x pi(x) h(0,x;0,x) = 1, times e^{d/2} = e.
        assert!((envelope[0].1 - std::f64::consts::E).abs() < 1e-12);
        // Bounded over the range; the value is recorded, not compared to
        // a constant (none is available).
        let max = envelope.iter().map(|(_, v)| *v).fold(0.0, f64::max);
        assert!(max.is_finite() && max > 0.0);
        println!("E2 envelope max over t <= 64: {max}");
    }

    #[test]
    fn inactive_target_is_an_error() {
        use crate::dyn_graph::{DynEnv, Schedule};
        let env = DynEnv::<f64>::new(
            vec!["a".into(), "b".into(), "z".into()],
            vec![
                (0, 1, Schedule::constant(1.0)),
                (0, 0, Schedule::constant(1.0)),
                (1, 1, Schedule::constant(1.0)),
                (2, 2, Schedule::constant(0.0)),
            ],
            3,
        )
        .unwrap();
        assert!(heat_kernel(&env, 0, 0, 1, 2).is_err());
    }

    #[test]
    fn vertex_cap_is_enforced() {
        use crate::dyn_graph::{DynEnv, Schedule};
        let n = KERNEL_VERTEX_CAP + 1;
        let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let edges: Vec<_> = (0..n).map(|i| (i, i, Schedule::constant(1.0))).collect();
        let env = DynEnv::<f64>::new(names, edges, 1).unwrap();
        assert!(matches!(
            multi_step_kernel(&env, 0, 1),
            Err(Error::GraphTooLarge {
                cap: KERNEL_VERTEX_CAP,
                ..
            })
        ));
    }

    #[test]
    fn cache_round_trip_and_digest_check() {
        let env = hand_e3::<f64>(4);
        let k = multi_step_kernel(&env, 0, 3).unwrap();
        let dir = std::env::temp_dir().join(format!("evoset-cache-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let name = kernel_cache_filename(&env, 0, 3);
        assert!(name.starts_with("kernel-") && name.ends_with("-0-3.bin"));
        let path = dir.join(name);
        save_kernel_cache(&path, &env, &k).unwrap();
        let back = load_kernel_cache(&path, &env).unwrap();
        assert_eq!(back.start_time(), 0);
        assert_eq!(back.end_time(), 3);
        for x in 0..3 {
            for y in 0..3 {
                assert_eq!(back.get(x, y), k.get(x, y));
            }
        }
        let other = hand_e2::<f64>(4);
        assert!(matches!(
            load_kernel_cache(&path, &other),
            Err(Error::Cache(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let env = hand_e2::<f64>(2);
        let k = multi_step_kernel(&env, 0, 1).unwrap();
        let mut buf = Vec::new();
        write_kernel_csv(&env, &k, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("s,t,x,y,prob"));
        assert_eq!(text.lines().count(), 1 + 4);
        assert!(text.contains("0,1,a,b,0.5"));
    }
}

//! Two-time photon correlators, their time averages and the emission spectrum.
//!
//! With `σ = |G⟩⟨X|` and `ρ(t)` the emitter state:
//!
//! * `G1(t, τ) = ⟨σ†(t+τ) σ(t)⟩`: insert `σ` on the left at `t`, read the
//!   `GX` entry at `t + τ`.
//! * `G2(t, τ) = ⟨σ†(t) σ†(t+τ) σ(t+τ) σ(t)⟩`: insert `σ · σ†` at `t`, read
//!   the exciton occupation at `t + τ`.
//! * `G2HOM(t, τ) = ½ [n(t) n(t+τ) − |G1(t, τ)|² + G2(t, τ)]`.
//!
//! Time averages run over one pulse period of the train with trapezoidal
//! weights on strided t-nodes.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::linalg::{Op2, GX, XX};
use crate::model::PhysicsConfig;
use crate::pathint::{Adm, PathIntegral, Side, Trajectory};
use crate::pme::{PmeState, PolaronSolver};
use crate::{Real, C};

/// Propagation mode of the delay dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Full memory carried across the first time argument.
    Exact,
    /// Memory traced out at the first time argument.
    Qrt,
    /// Polaron master equation, regression theorem in the polaron frame.
    Pme,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Exact, Mode::Qrt, Mode::Pme];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Qrt => "qrt",
            Mode::Pme => "pme",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(Mode::Exact),
            "qrt" => Ok(Mode::Qrt),
            "pme" => Ok(Mode::Pme),
            other => Err(config(format!("unknown mode `{other}` (expected exact, qrt or pme)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    G1,
    G2,
    G2Hom,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::G1 => "G1",
            Kind::G2 => "G2",
            Kind::G2Hom => "G2HOM",
        })
    }
}

/// Samples `G(t_i, τ_j)` on step-grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationGrid<T> {
    pub mode: Mode,
    pub kind: Kind,
    pub dt: T,
    pub t_steps: Vec<usize>,
    /// Trapezoidal weights of the t-nodes, ps.
    pub t_weights: Vec<T>,
    pub tau_steps: Vec<usize>,
    /// Row-major: `values[i · tau_steps.len() + j]`.
    pub values: Vec<C<T>>,
}

impl<T: Real> CorrelationGrid<T> {
    pub fn at(&self, i: usize, j: usize) -> C<T> {
        self.values[i * self.tau_steps.len() + j]
    }

    pub fn t(&self, i: usize) -> T {
        self.dt * T::from_usize_lossy(self.t_steps[i])
    }

    pub fn tau(&self, j: usize) -> T {
        self.dt * T::from_usize_lossy(self.tau_steps[j])
    }

    pub fn scaled(&self, a: C<T>) -> Self {
        let mut g = self.clone();
        g.values.iter_mut().for_each(|z| *z = *z * a);
        g
    }

    fn same_nodes(&self, o: &Self) -> bool {
        self.t_steps == o.t_steps && self.tau_steps == o.tau_steps && self.dt == o.dt
    }

    /// CSV dump with columns `t_ps,tau_ps,re,im,mode,kind`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_ps,tau_ps,re,im,mode,kind")?;
        for i in 0..self.t_steps.len() {
            for j in 0..self.tau_steps.len() {
                let z = self.at(i, j);
                writeln!(w, "{},{},{:e},{:e},{},{}", self.t(i), self.tau(j), z.re.f64(), z.im.f64(), self.mode, self.kind)?;
            }
        }
        Ok(())
    }

    /// Metadata written next to a grid dump.
    pub fn sidecar(&self, cfg: &PhysicsConfig) -> serde_json::Value {
        serde_json::json!({
            "config_hash": cfg.hash_hex(),
            "mode": self.mode,
            "kind": self.kind.to_string(),
            "dt": self.dt.f64(),
            "t_nodes": self.t_steps.len(),
            "tau_nodes": self.tau_steps.len(),
            "n_c": cfg.grid.n_c,
            "t_stride": cfg.grid.t_stride,
            "code_version": env!("CARGO_PKG_VERSION"),
        })
    }
}

/// `G2HOM` from its ingredients; `occupation[n]` is the exciton occupation at
/// step `n`.
pub fn g2_hom_grid<T: Real>(g1: &CorrelationGrid<T>, g2: &CorrelationGrid<T>, occupation: &[T]) -> Result<CorrelationGrid<T>> {
    if !g1.same_nodes(g2) || g1.values.len() != g2.values.len() {
        return Err(Error::Shape("G1 and G2 grids have different nodes".into()));
    }
    let last = g1.t_steps.iter().max().copied().unwrap_or(0) + g1.tau_steps.iter().max().copied().unwrap_or(0);
    if last >= occupation.len() {
        return Err(Error::Shape(format!("occupation covers {} steps, grid needs {}", occupation.len(), last + 1)));
    }
    let mut out = g1.clone();
    out.kind = Kind::G2Hom;
    let nt = g1.tau_steps.len();
    for (i, &n) in g1.t_steps.iter().enumerate() {
        for (j, &k) in g1.tau_steps.iter().enumerate() {
            let a = g1.values[i * nt + j];
            let b = g2.values[i * nt + j];
            let v = T::lit(0.5) * (occupation[n] * occupation[n + k] - a.norm_sqr() + b.re);
            out.values[i * nt + j] = C::new(v, T::zero());
        }
    }
    Ok(out)
}

/// Windowed t-average: one value per τ-node. Nodes inside `[a, b]` get
/// trapezoidal weights; the result is normalized by the covered length.
pub fn time_average<T: Real>(grid: &CorrelationGrid<T>, window: (T, T)) -> Result<Vec<C<T>>> {
    let idx: Vec<usize> = (0..grid.t_steps.len()).filter(|&i| grid.t(i) >= window.0 && grid.t(i) <= window.1).collect();
    if idx.len() < 2 {
        return Err(domain("time average window contains fewer than two t-nodes"));
    }
    let ts: Vec<T> = idx.iter().map(|&i| grid.t(i)).collect();
    let w = trapezoid_weights(&ts);
    let norm: T = w.iter().copied().sum();
    let nt = grid.tau_steps.len();
    let mut out = vec![C::zero(); nt];
    for (&i, &wi) in idx.iter().zip(&w) {
        for (j, o) in out.iter_mut().enumerate() {
            *o += grid.values[i * nt + j] * wi;
        }
    }
    Ok(out.into_iter().map(|z| z / norm).collect())
}

pub(crate) fn trapezoid_weights<T: Real>(x: &[T]) -> Vec<T> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = if i > 0 { x[i] - x[i - 1] } else { T::zero() };
            let hi = if i + 1 < n { x[i + 1] - x[i] } else { T::zero() };
            (lo + hi) * T::lit(0.5)
        })
        .collect()
}

/// `∫_a^b y(x) dx` of the piecewise-linear interpolant through `(x, y)`.
pub fn integrate_linear<T: Real>(x: &[T], y: &[T], a: T, b: T) -> Result<T> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Shape("integration needs matching abscissae and at least two nodes".into()));
    }
    if a < x[0] || b > x[x.len() - 1] || a > b {
        return Err(domain(format!("integration range [{a}, {b}] outside [{}, {}]", x[0], x[x.len() - 1])));
    }
    let mut acc = T::zero();
    for i in 0..x.len() - 1 {
        let (x0, x1) = (x[i], x[i + 1]);
        let lo = x0.max(a);
        let hi = x1.min(b);
        if hi <= lo {
            continue;
        }
        let lerp = |t: T| y[i] + (y[i + 1] - y[i]) * (t - x0) / (x1 - x0);
        acc += (lerp(lo) + lerp(hi)) * (hi - lo) * T::lit(0.5);
    }
    Ok(acc)
}

/// Period-averaged correlators on the τ-nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedCorrelations<T> {
    pub mode: Mode,
    pub dt: T,
    pub tau_steps: Vec<usize>,
    pub g1: Vec<C<T>>,
    pub g2: Vec<T>,
    pub g2_hom: Vec<T>,
}

impl<T: Real> AveragedCorrelations<T> {
    pub fn tau(&self) -> Vec<T> {
        self.tau_steps.iter().map(|&k| self.dt * T::from_usize_lossy(k)).collect()
    }

    /// Leading run of τ-nodes spaced by one step, for spectra.
    pub fn uniform_g1(&self) -> &[C<T>] {
        let n = self.tau_steps.iter().enumerate().take_while(|(i, &k)| k == *i).count();
        &self.g1[..n]
    }
}

/// Where a two-time computation samples `t` and `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampling<T> {
    pub dt: T,
    pub t_steps: Vec<usize>,
    pub t_weights: Vec<T>,
    pub tau_steps: Vec<usize>,
}

impl<T: Real> Sampling<T> {
    /// `regions` are the driven step ranges, `settle` the number of steps the
    /// dynamics needs to forget a pulse.
    pub fn new(cfg: &PhysicsConfig, dt: T, regions: &[(usize, usize)], settle: usize, n_steps: usize) -> Result<Self> {
        let dtf = dt.f64();
        let g = &cfg.grid;
        let (w0, w1) = cfg.average_window();
        let n_lo = (w0 / dtf).round().max(0.0) as usize;
        let n_hi = (w1 / dtf).round() as usize;
        if n_hi <= n_lo {
            return Err(domain("averaging window shorter than one step"));
        }
        let near = |n: usize| regions.iter().any(|&(s, e)| n + 1 >= s && n <= e + settle);
        let t_steps: Vec<usize> = (n_lo..=n_hi)
            .filter(|&n| {
                let d = n - n_lo;
                d % g.t_stride == 0 || n == n_hi || (near(n) && d % g.pulse_t_stride == 0)
            })
            .collect();
        let ts: Vec<T> = t_steps.iter().map(|&n| dt * T::from_usize_lossy(n)).collect();
        let t_weights = trapezoid_weights(&ts);

        let period = cfg.pulses.period;
        let k_max = (cfg.tau_max() / dtf).round() as usize;
        if n_hi + k_max > n_steps {
            return Err(config(format!(
                "delay horizon needs {} steps but the propagation covers {n_steps}",
                n_hi + k_max
            )));
        }
        let fine = (g.tau_fine / dtf).round() as usize;
        let hw_steps = (cfg.pulses.sigma() * crate::model::PULSE_TRUNCATION_SIGMAS / dtf).ceil() as usize + settle + 2;
        let marks: Vec<usize> = [0.5, 1.5].iter().map(|m| (m * period / dtf).round() as usize).collect();
        let tau_steps = (0..=k_max)
            .filter(|&k| {
                if k <= fine || k % g.t_stride == 0 || k == k_max || marks.contains(&k) {
                    return true;
                }
                let m = (k as f64 * dtf / period).round();
                let centre = (m * period / dtf).round() as usize;
                m >= 1.0 && k.abs_diff(centre) <= hw_steps && k % g.pulse_t_stride == 0
            })
            .collect();
        Ok(Self { dt, t_steps, t_weights, tau_steps })
    }

    pub fn requests(&self, n: usize) -> Vec<usize> {
        self.tau_steps.iter().map(|&k| n + k).collect()
    }
}

/// Knobs of a two-time computation.
#[derive(Debug, Clone, Copy)]
pub struct CorrelationOptions {
    /// Keep full `(t, τ)` grids in memory.
    pub keep_grids: bool,
    /// t-nodes processed per parallel batch.
    pub batch_nodes: usize,
    /// Upper bound on memory held by pending snapshots, bytes.
    pub batch_bytes: usize,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        Self { keep_grids: false, batch_nodes: 64, batch_bytes: 1 << 30 }
    }
}

/// Correlators of one mode.
#[derive(Debug, Clone)]
pub struct CorrelationRun<T> {
    pub mode: Mode,
    pub averaged: AveragedCorrelations<T>,
    /// `G1`, `G2`, `G2HOM` grids when requested.
    pub grids: Option<[CorrelationGrid<T>; 3]>,
    /// Most negative raw `G2` value before clipping.
    pub min_g2: T,
    /// Number of `G2` samples below −10⁻⁸.
    pub clipped: usize,
    /// Largest `|G1|² − n(t) n(t+τ)` seen on a kept grid.
    pub max_cauchy_schwarz_excess: Option<T>,
}

/// Correlators of several modes sharing one single-time trajectory.
#[derive(Debug, Clone)]
pub struct TwoTime<T> {
    pub trajectory: Trajectory<T>,
    pub sampling: Sampling<T>,
    pub runs: Vec<CorrelationRun<T>>,
}

impl<T: Real> TwoTime<T> {
    pub fn run(&self, mode: Mode) -> Option<&CorrelationRun<T>> {
        self.runs.iter().find(|r| r.mode == mode)
    }
}

struct Accumulator<T> {
    mode: Mode,
    ntau: usize,
    g1: Vec<C<T>>,
    g1_sq: Vec<T>,
    g2: Vec<T>,
    grid_g1: Vec<C<T>>,
    grid_g2: Vec<T>,
    keep: bool,
    min_g2: T,
    clipped: usize,
}

impl<T: Real> Accumulator<T> {
    fn new(mode: Mode, ntau: usize, keep: bool) -> Self {
        Self {
            mode,
            ntau,
            g1: vec![C::zero(); ntau],
            g1_sq: vec![T::zero(); ntau],
            g2: vec![T::zero(); ntau],
            grid_g1: Vec::new(),
            grid_g2: Vec::new(),
            keep,
            min_g2: T::zero(),
            clipped: 0,
        }
    }

    fn add(&mut self, w: T, g1: &[C<T>], g2: &[C<T>]) {
        for k in 0..self.ntau {
            let mut v = g2[k].re;
            if v < T::zero() {
                self.min_g2 = self.min_g2.min(v);
                if v < T::lit(-1e-8) {
                    self.clipped += 1;
                }
                v = T::zero();
            }
            self.g1[k] += g1[k] * w;
            self.g1_sq[k] += g1[k].norm_sqr() * w;
            self.g2[k] += v * w;
            if self.keep {
                self.grid_g1.push(g1[k]);
                self.grid_g2.push(v);
            }
        }
    }
}

/// Per-node job output: `(G1, G2)` series over the τ-nodes for each mode.
type NodeSeries<T> = Vec<(Vec<C<T>>, Vec<C<T>>)>;

fn flush<T, S, W, I, J>(batch: &mut Vec<(usize, S)>, accs: &mut [Accumulator<T>], weights: &[T], init: &I, job: &J) -> Result<()>
where
    T: Real,
    S: Sync + Send,
    I: Fn() -> W + Sync + Send,
    J: Fn(&mut W, &S) -> Result<NodeSeries<T>> + Sync + Send,
{
    let results: Vec<Result<NodeSeries<T>>> = batch.par_iter().map_init(init, |ws, (_, s)| job(ws, s)).collect();
    for ((i, _), r) in batch.iter().zip(results) {
        for (acc, (g1, g2)) in accs.iter_mut().zip(r?) {
            acc.add(weights[*i], &g1, &g2);
        }
    }
    batch.clear();
    Ok(())
}

fn finish<T: Real>(acc: Accumulator<T>, sampling: &Sampling<T>, traj: &Trajectory<T>) -> CorrelationRun<T> {
    let occ: Vec<T> = traj.rho.iter().map(|r| r[XX].re).collect();
    let norm: T = sampling.t_weights.iter().copied().sum();
    let ntau = acc.ntau;
    let mut occ_pair = vec![T::zero(); ntau];
    for (&n, &w) in sampling.t_steps.iter().zip(&sampling.t_weights) {
        for (j, &k) in sampling.tau_steps.iter().enumerate() {
            occ_pair[j] += w * occ[n] * occ[n + k];
        }
    }
    let g1: Vec<C<T>> = acc.g1.iter().map(|z| *z / norm).collect();
    let g2: Vec<T> = acc.g2.iter().map(|&z| z / norm).collect();
    let g2_hom: Vec<T> = (0..ntau).map(|j| T::lit(0.5) * (occ_pair[j] - acc.g1_sq[j] + acc.g2[j]) / norm).collect();
    let mut cs = None;
    let grids = acc.keep.then(|| {
        let mk = |kind: Kind, values: Vec<C<T>>| CorrelationGrid {
            mode: acc.mode,
            kind,
            dt: sampling.dt,
            t_steps: sampling.t_steps.clone(),
            t_weights: sampling.t_weights.clone(),
            tau_steps: sampling.tau_steps.clone(),
            values,
        };
        let g1g = mk(Kind::G1, acc.grid_g1.clone());
        let g2g = mk(Kind::G2, acc.grid_g2.iter().map(|&v| C::new(v, T::zero())).collect());
        let hom = g2_hom_grid(&g1g, &g2g, &occ).expect("grids share nodes");
        let mut worst = T::neg_infinity();
        for (i, &n) in sampling.t_steps.iter().enumerate() {
            for (j, &k) in sampling.tau_steps.iter().enumerate() {
                worst = worst.max(g1g.at(i, j).norm_sqr() - occ[n] * occ[n + k]);
            }
        }
        cs = Some(worst);
        [g1g, g2g, hom]
    });
    CorrelationRun {
        mode: acc.mode,
        averaged: AveragedCorrelations { mode: acc.mode, dt: sampling.dt, tau_steps: sampling.tau_steps.clone(), g1, g2, g2_hom },
        grids,
        min_g2: acc.min_g2,
        clipped: acc.clipped,
        max_cauchy_schwarz_excess: cs,
    }
}

fn collect_series<T: Real>(
    engine: &PathIntegral<T>,
    ws: &mut crate::pathint::Workspace<T>,
    adm: &Adm<T>,
    requests: &[usize],
    component: usize,
) -> Result<Vec<C<T>>> {
    let mut out = Vec::with_capacity(requests.len());
    engine.run(ws, adm, requests, Some(component), &mut |_, r| out.push(r[component]))?;
    if out.len() != requests.len() {
        return Err(Error::Numerical {
            what: "delay propagation".into(),
            detail: format!("{} of {} delay samples produced", out.len(), requests.len()),
        });
    }
    Ok(out)
}

/// Path-integral correlators in `Exact` and/or `Qrt` mode, sharing one
/// single-time propagation.
pub fn path_integral_correlations<T: Real>(
    cfg: &PhysicsConfig,
    engine: &mut PathIntegral<T>,
    modes: &[Mode],
    opts: CorrelationOptions,
) -> Result<TwoTime<T>> {
    if modes.is_empty() || modes.iter().any(|m| *m == Mode::Pme) {
        return Err(config("path-integral correlators support the exact and qrt modes"));
    }
    let sampling = Sampling::new(cfg, engine.dt(), engine.drive_regions(), engine.slices() + 1, engine.n_steps())?;
    engine.prepare_checkpoints(sampling.t_steps[0])?;
    let engine = &*engine;
    let ntau = sampling.tau_steps.len();
    let mut accs: Vec<Accumulator<T>> = modes.iter().map(|&m| Accumulator::new(m, ntau, opts.keep_grids)).collect();
    let sigma = Op2::<T>::sigma();
    let sigma_dag = Op2::<T>::sigma_dag();
    let job = |ws: &mut crate::pathint::Workspace<T>, adm: &Adm<T>| -> Result<NodeSeries<T>> {
        let req = sampling.requests(adm.step);
        let mut a1 = adm.clone();
        a1.insert(Side::Left, &sigma);
        let mut a2 = a1.clone();
        a2.insert(Side::Right, &sigma_dag);
        modes
            .iter()
            .map(|m| {
                let (s1, s2) = if *m == Mode::Qrt { (a1.trace_out(), a2.trace_out()) } else { (a1.clone(), a2.clone()) };
                Ok((collect_series(engine, ws, &s1, &req, GX)?, collect_series(engine, ws, &s2, &req, XX)?))
            })
            .collect()
    };
    let init = || engine.workspace();
    let entry_bytes = std::mem::size_of::<C<T>>();
    let mut batch: Vec<(usize, Adm<T>)> = Vec::new();
    let mut bytes = 0usize;
    let mut node = 0usize;
    let trajectory = engine.trajectory_from(&Adm::ground(engine.slices()), &sampling.t_steps, &mut |adm| {
        bytes += adm.nnz().max(4) * entry_bytes;
        batch.push((node, adm));
        node += 1;
        if batch.len() >= opts.batch_nodes || bytes >= opts.batch_bytes {
            flush(&mut batch, &mut accs, &sampling.t_weights, &init, &job)?;
            bytes = 0;
        }
        Ok(())
    })?;
    flush(&mut batch, &mut accs, &sampling.t_weights, &init, &job)?;
    let runs = accs.into_iter().map(|a| finish(a, &sampling, &trajectory)).collect();
    Ok(TwoTime { trajectory, sampling, runs })
}

/// Polaron master equation correlators. `G1` carries the phonon factor
/// `⟨B⟩² e^{φ(τ)}` of the polaron-frame field operator.
pub fn pme_correlations<T: Real>(cfg: &PhysicsConfig, solver: &PolaronSolver<T>, opts: CorrelationOptions) -> Result<TwoTime<T>> {
    let sampling = Sampling::new(cfg, solver.dt(), solver.drive_regions(), 1, solver.n_steps())?;
    let ntau = sampling.tau_steps.len();
    let phonon: Vec<C<T>> = sampling
        .tau_steps
        .iter()
        .map(|&k| solver.kernel().phonon_g1(solver.dt() * T::from_usize_lossy(k)))
        .collect();
    let mut accs = vec![Accumulator::new(Mode::Pme, ntau, opts.keep_grids)];
    let sigma = Op2::<T>::sigma();
    let sigma_dag = Op2::<T>::sigma_dag();
    let job = |_: &mut (), s: &PmeState<T>| -> Result<NodeSeries<T>> {
        let req = sampling.requests(s.step);
        let mut a1 = s.clone();
        a1.insert(Side::Left, &sigma);
        let mut a2 = a1.clone();
        a2.insert(Side::Right, &sigma_dag);
        let mut g1 = Vec::with_capacity(ntau);
        solver.run(&a1, &req, &mut |_, r| g1.push(r[GX]))?;
        for (z, f) in g1.iter_mut().zip(&phonon) {
            *z = *z * *f;
        }
        let mut g2 = Vec::with_capacity(ntau);
        solver.run(&a2, &req, &mut |_, r| g2.push(r[XX]))?;
        Ok(vec![(g1, g2)])
    };
    let init = || ();
    let mut batch: Vec<(usize, PmeState<T>)> = Vec::new();
    let mut node = 0usize;
    let batch_nodes = opts.batch_nodes.max(1) * 8;
    let trajectory = solver.trajectory(&sampling.t_steps, &mut |s| {
        batch.push((node, s));
        node += 1;
        if batch.len() >= batch_nodes {
            flush(&mut batch, &mut accs, &sampling.t_weights, &init, &job)?;
        }
        Ok(())
    })?;
    flush(&mut batch, &mut accs, &sampling.t_weights, &init, &job)?;
    let runs = accs.into_iter().map(|a| finish(a, &sampling, &trajectory)).collect();
    Ok(TwoTime { trajectory, sampling, runs })
}

/// Emission spectrum `S(ω) = 2 Re ∫₀^W G1(τ) w(τ) e^{−iωτ} dτ` of a
/// τ-averaged `G1` sampled every `dtau`, with the half-Hann taper
/// `w(τ) = cos²(πτ / 2W)`. Frequencies are relative to the polaron-shifted
/// line in 1/ps.
pub fn emission_spectrum<T: Real>(g1: &[C<T>], dtau: T, window: T, omegas: &[T]) -> Result<Vec<T>> {
    if !(dtau > T::zero()) || g1.len() < 2 {
        return Err(domain("emission spectrum needs a uniform delay grid with at least two samples"));
    }
    let n = ((window / dtau).round().to_usize().unwrap_or(0) + 1).min(g1.len());
    if n < 2 {
        return Err(domain("spectrum window shorter than one delay step"));
    }
    let w_len = dtau * T::from_usize_lossy(n - 1);
    let taper: Vec<T> = (0..n)
        .map(|k| {
            let c = (T::PI() * dtau * T::from_usize_lossy(k) / (T::lit(2.0) * w_len)).cos();
            c * c
        })
        .collect();
    Ok(omegas
        .iter()
        .map(|&om| {
            let mut acc = C::zero();
            for k in 0..n {
                let tau = dtau * T::from_usize_lossy(k);
                let wt = if k == 0 || k + 1 == n { T::lit(0.5) } else { T::one() };
                acc += g1[k] * C::new(T::zero(), -om * tau).exp() * (taper[k] * wt);
            }
            T::lit(2.0) * (acc * dtau).re
        })
        .collect())
}

/// Emission spectrum of an irregular τ grid: refuses anything but unit steps.
pub fn emission_spectrum_on(avg: &AveragedCorrelations<f64>, window: f64, omegas: &[f64]) -> Result<Vec<f64>> {
    let uniform = avg.uniform_g1();
    if (uniform.len() as f64 - 1.0) * avg.dt + 1e-9 < window {
        return Err(domain("delay grid is not uniform over the spectrum window"));
    }
    emission_spectrum(uniform, avg.dt, window, omegas)
}

/// Weight above `omega0` minus weight below `−omega0`, up to `omega_max`,
/// relative to the total weight in both bands.
pub fn sideband_asymmetry(omegas: &[f64], spectrum: &[f64], omega0: f64, omega_max: f64) -> f64 {
    let mut hi = 0.0;
    let mut lo = 0.0;
    for (&w, &s) in omegas.iter().zip(spectrum) {
        if w >= omega0 && w <= omega_max {
            hi += s;
        } else if w <= -omega0 && w >= -omega_max {
            lo += s;
        }
    }
    if hi + lo == 0.0 {
        0.0
    } else {
        (hi - lo) / (hi.abs() + lo.abs())
    }
}

/// `[G1, G2, G2HOM]` grids of one mode, built from a configuration.
pub fn correlation_grids(mode: Mode, cfg: &PhysicsConfig) -> Result<[CorrelationGrid<f64>; 3]> {
    let opts = CorrelationOptions { keep_grids: true, ..Default::default() };
    let model = crate::model::Model::<f64>::new(cfg)?;
    let two = match mode {
        Mode::Pme => pme_correlations(cfg, &PolaronSolver::new(&model, cfg.grid.dt, cfg.t_max())?, opts)?,
        _ => {
            let mut engine =
                PathIntegral::from_model(&model, cfg.grid.dt, cfg.grid.n_c, cfg.t_max(), cfg.grid.memory_cap_bytes)?;
            path_integral_correlations(cfg, &mut engine, &[mode], opts)?
        }
    };
    let run = two.runs.into_iter().next().expect("one mode requested");
    Ok(run.grids.expect("grids kept"))
}

pub fn g1_grid(mode: Mode, cfg: &PhysicsConfig) -> Result<CorrelationGrid<f64>> {
    let [g1, _, _] = correlation_grids(mode, cfg)?;
    Ok(g1)
}

pub fn g2_grid(mode: Mode, cfg: &PhysicsConfig) -> Result<CorrelationGrid<f64>> {
    let [_, g2, _] = correlation_grids(mode, cfg)?;
    Ok(g2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: Vec<C<f64>>, nt: usize, ntau: usize) -> CorrelationGrid<f64> {
        CorrelationGrid {
            mode: Mode::Exact,
            kind: Kind::G1,
            dt: 0.5,
            t_steps: (0..nt).map(|i| 10 + 2 * i).collect(),
            t_weights: vec![1.0; nt],
            tau_steps: (0..ntau).collect(),
            values,
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("lab".parse::<Mode>().is_err());
    }

    #[test]
    fn average_of_constant_is_constant() {
        let c = C::new(0.3, -0.2);
        let g = grid(vec![c; 5 * 3], 5, 3);
        let avg = time_average(&g, (0.0, 100.0)).unwrap();
        for z in avg {
            assert!((z - c).norm() < 1e-15);
        }
        assert!(time_average(&g, (100.0, 200.0)).is_err());
    }

    #[test]
    fn hom_of_coherent_case_vanishes() {
        let occ = vec![0.5; 40];
        let g1 = grid(vec![C::new(0.5, 0.0); 4 * 3], 4, 3);
        let mut g2 = g1.clone();
        g2.values.iter_mut().for_each(|z| *z = C::zero());
        let hom = g2_hom_grid(&g1, &g2, &occ).unwrap();
        assert!(hom.values.iter().all(|z| z.norm() < 1e-15));
        let again = g2_hom_grid(&g1, &g2, &occ).unwrap();
        assert_eq!(hom, again);
        let mut other = g2.clone();
        other.tau_steps = vec![0, 2, 4];
        assert!(matches!(g2_hom_grid(&g1, &other, &occ), Err(Error::Shape(_))));
    }

    #[test]
    fn lorentzian_spectrum() {
        let gamma = 0.05;
        let dtau = 0.1;
        let g1: Vec<C<f64>> = (0..20001).map(|k| C::new((-0.5 * gamma * k as f64 * dtau).exp(), 0.0)).collect();
        let omegas: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.001).collect();
        let s = emission_spectrum(&g1, dtau, 2000.0, &omegas).unwrap();
        let imax = s.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(omegas[imax], 0.0);
        // half maximum near ±γ/2
        let half = s[imax] / 2.0;
        let edge = omegas.iter().zip(&s).find(|(w, v)| **w > 0.0 && **v < half).unwrap().0;
        assert!((edge - gamma / 2.0).abs() < 0.004, "{edge}");
        assert!(sideband_asymmetry(&omegas, &s, 0.05, 0.2).abs() < 1e-12);
    }

    #[test]
    fn piecewise_linear_integral() {
        let x = [0.0, 1.0, 3.0];
        let y = [0.0, 1.0, 3.0];
        assert!((integrate_linear::<f64>(&x, &y, 0.5, 2.0).unwrap() - (4.0 - 0.25) / 2.0).abs() < 1e-15);
        assert!(integrate_linear(&x, &y, -1.0, 2.0).is_err());
    }
}

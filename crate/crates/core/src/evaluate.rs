//! Everything computed at one `(T, λ)` point.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::correlators::{
    emission_spectrum_on, path_integral_correlations, pme_correlations, sideband_asymmetry, CorrelationOptions, Mode,
    TwoTime,
};
use crate::error::{config, Result};
use crate::figures::{brightness, qrt_error, FiguresOfMerit};
use crate::influence::{cached_eta, EtaKey, EtaTable};
use crate::model::{Model, PhysicsConfig};
use crate::nonmarkov::non_markovianity;
use crate::pathint::{Invariants, PathIntegral};
use crate::pme::PolaronSolver;

/// Frequency band (1/ps) used to compare the spectral weight on both sides
/// of the zero-phonon line.
pub const SIDEBAND_BAND: (f64, f64) = (0.5, 5.0);
const SPECTRUM_POINTS: usize = 1001;

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub modes: Vec<Mode>,
    /// Directory of the influence-coefficient cache.
    pub eta_cache: Option<PathBuf>,
    pub non_markovianity: bool,
    pub spectrum: bool,
    pub correlation: CorrelationOptions,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            modes: Mode::ALL.to_vec(),
            eta_cache: None,
            non_markovianity: true,
            spectrum: false,
            correlation: CorrelationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeResult {
    pub figures: FiguresOfMerit,
    /// Invariants of the single-time trajectory.
    pub invariants: Invariants,
    pub min_g2: f64,
    pub clipped_g2: usize,
    /// Relative spectral weight above minus below the line.
    pub sideband_asymmetry: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointResult {
    pub temperature: f64,
    pub lambda: f64,
    pub config_hash: String,
    pub modes: Vec<ModeResult>,
    /// Relative errors of the regression theorem in the lab frame.
    pub q_p: Option<f64>,
    pub q_i: Option<f64>,
    pub non_markovianity: Option<f64>,
}

impl PointResult {
    pub fn mode(&self, mode: Mode) -> Option<&ModeResult> {
        self.modes.iter().find(|m| m.figures.mode == mode)
    }

    pub fn figures(&self, mode: Mode) -> Option<&FiguresOfMerit> {
        self.mode(mode).map(|m| &m.figures)
    }
}

fn spectrum_asymmetry(cfg: &PhysicsConfig, two: &TwoTime<f64>, mode: Mode) -> Result<Option<f64>> {
    let Some(run) = two.run(mode) else { return Ok(None) };
    let w = SIDEBAND_BAND.1;
    let omegas: Vec<f64> =
        (0..SPECTRUM_POINTS).map(|k| -w + 2.0 * w * k as f64 / (SPECTRUM_POINTS - 1) as f64).collect();
    let s = emission_spectrum_on(&run.averaged, cfg.analysis.spectrum_window, &omegas)?;
    Ok(Some(sideband_asymmetry(&omegas, &s, SIDEBAND_BAND.0, SIDEBAND_BAND.1)))
}

fn collect(
    cfg: &PhysicsConfig,
    model: &Model<f64>,
    two: &TwoTime<f64>,
    n_c: usize,
    spectrum: bool,
    seconds: f64,
    out: &mut Vec<ModeResult>,
) -> Result<()> {
    let occ: Vec<f64> = (0..two.trajectory.rho.len()).map(|n| two.trajectory.occupation(n)).collect();
    let b = brightness(&occ, cfg.grid.dt, model.gamma, cfg.brightness_window())?;
    for run in &two.runs {
        let figures = FiguresOfMerit::from_curves(&run.averaged, b, cfg.pulses.period, n_c, cfg.grid.t_stride)?;
        if run.clipped > 0 {
            log::warn!("{}: {} G2 samples below -1e-8 clipped (min {:e})", run.mode, run.clipped, run.min_g2);
        }
        out.push(ModeResult {
            figures,
            invariants: two.trajectory.invariants,
            min_g2: run.min_g2,
            clipped_g2: run.clipped,
            sideband_asymmetry: if spectrum { spectrum_asymmetry(cfg, two, run.mode)? } else { None },
            seconds: seconds / two.runs.len() as f64,
        });
    }
    Ok(())
}

/// Influence coefficients, from the cache when a directory is given.
pub fn eta_table(cfg: &PhysicsConfig, model: &Model<f64>, cache: Option<&std::path::Path>) -> Result<EtaTable<f64>> {
    match cache {
        Some(dir) => cached_eta(dir, model, &EtaKey::new(&cfg.bath, cfg.grid.dt, cfg.grid.n_c)),
        None => EtaTable::compute(model, cfg.grid.dt, cfg.grid.n_c),
    }
}

/// Runs the requested modes at the configured point.
pub fn evaluate_point(cfg: &PhysicsConfig, opts: &EvaluateOptions) -> Result<PointResult> {
    if opts.modes.is_empty() {
        return Err(config("no modes requested"));
    }
    let model = Model::<f64>::new(cfg)?;
    let mut modes = Vec::new();
    let pi_modes: Vec<Mode> = Mode::ALL.iter().copied().filter(|m| *m != Mode::Pme && opts.modes.contains(m)).collect();
    if !pi_modes.is_empty() {
        let start = Instant::now();
        let eta = eta_table(cfg, &model, opts.eta_cache.as_deref())?;
        if !eta.memory_truncated_cleanly() {
            log::warn!("memory window n_c = {} shorter than the bath memory", cfg.grid.n_c);
        }
        let n_steps = (cfg.t_max() / cfg.grid.dt).ceil() as usize;
        let mut engine = PathIntegral::new(&model, eta, n_steps, cfg.grid.memory_cap_bytes)?;
        let two = path_integral_correlations(cfg, &mut engine, &pi_modes, opts.correlation)?;
        collect(cfg, &model, &two, cfg.grid.n_c, opts.spectrum, start.elapsed().as_secs_f64(), &mut modes)?;
    }
    if opts.modes.contains(&Mode::Pme) {
        let start = Instant::now();
        let solver = PolaronSolver::new(&model, cfg.grid.dt, cfg.t_max())?;
        let two = pme_correlations(cfg, &solver, opts.correlation)?;
        if two.trajectory.invariants.min_eigenvalue < -1e-6 {
            log::warn!("polaron master equation left the physical state space (min eigenvalue {:e})", two.trajectory.invariants.min_eigenvalue);
        }
        collect(cfg, &model, &two, 0, opts.spectrum, start.elapsed().as_secs_f64(), &mut modes)?;
    }
    let fig = |m: Mode| modes.iter().find(|r| r.figures.mode == m).map(|r| r.figures);
    let (q_p, q_i) = match (fig(Mode::Exact), fig(Mode::Qrt)) {
        (Some(e), Some(q)) => (
            Some(qrt_error(e.purity, q.purity)?),
            Some(qrt_error(e.indistinguishability, q.indistinguishability)?),
        ),
        _ => (None, None),
    };
    let nm = if opts.non_markovianity { Some(non_markovianity(cfg, cfg.analysis.nm_pairs)?.value) } else { None };
    Ok(PointResult {
        temperature: cfg.bath.temperature,
        lambda: cfg.bath.lambda,
        config_hash: cfg.hash_hex(),
        modes,
        q_p,
        q_i,
        non_markovianity: nm,
    })
}

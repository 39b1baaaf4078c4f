//! Sweep orchestration over `(T, λ)`, result and heatmap files, and the
//! convergence harness behind the `qdcorr` binary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use qdcorr::error::Result;
use qdcorr::evaluate::{evaluate_point, EvaluateOptions};
use qdcorr::influence::{cached_eta, EtaKey};
use qdcorr::model::{PhysicsConfig, SimGrid};
use qdcorr::{FiguresOfMerit, Mode, Model};

fn config(msg: impl Into<String>) -> qdcorr::Error {
    qdcorr::Error::Config(msg.into())
}

/// Environment variable naming the η-table cache directory.
pub const CACHE_ENV: &str = "QDCORR_CACHE_DIR";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const RESULTS_HEADER: &str = "T_K,lambda,mode,P,I,B,Q_P,Q_I,N,dt,n_c,stride,error";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Accuracy,
}

impl Preset {
    pub fn grid(self) -> SimGrid {
        match self {
            Preset::Desk => SimGrid::desk(),
            Preset::Accuracy => SimGrid::accuracy(),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = qdcorr::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "accuracy" => Ok(Preset::Accuracy),
            other => Err(config(format!("unknown preset `{other}` (expected desk or accuracy)"))),
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Preset grid, then the optional JSON file on top, then `key=value` overrides.
pub fn load_config(preset: Preset, file: Option<&Path>, overrides: &[String]) -> Result<PhysicsConfig> {
    let mut cfg = PhysicsConfig { grid: preset.grid(), ..Default::default() };
    if let Some(path) = file {
        let text = fs::read_to_string(path)?;
        let mut tree = serde_json::to_value(&cfg)?;
        merge(&mut tree, serde_json::from_str(&text)?);
        cfg = serde_json::from_value(tree)?;
        cfg.validate()?;
    }
    for kv in overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| config(format!("override `{kv}` is not KEY=VALUE")))?;
        cfg.set_path(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

/// Comma-separated mode list; empty lists are rejected.
pub fn parse_modes(list: &str) -> Result<Vec<Mode>> {
    let mut modes: Vec<Mode> = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    if modes.is_empty() {
        return Err(config("no modes requested"));
    }
    modes.sort();
    modes.dedup();
    Ok(modes)
}

/// `T,LAMBDA`
pub fn parse_point(s: &str) -> Result<(f64, f64)> {
    let bad = || config(format!("point `{s}` is not T,LAMBDA"));
    let (t, l) = s.split_once(',').ok_or_else(bad)?;
    Ok((t.trim().parse().map_err(|_| bad())?, l.trim().parse().map_err(|_| bad())?))
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: PhysicsConfig,
    pub temperatures: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub modes: Vec<Mode>,
    pub out: PathBuf,
    pub cache: PathBuf,
    pub workers: usize,
    pub resume: bool,
    pub non_markovianity: bool,
}

impl SweepSpec {
    pub fn new(base: PhysicsConfig, temperatures: Vec<f64>, lambdas: Vec<f64>, modes: Vec<Mode>, out: PathBuf) -> Self {
        let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| out.join("eta-cache"));
        Self {
            base,
            temperatures,
            lambdas,
            modes,
            out,
            cache,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            resume: false,
            non_markovianity: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperatures.is_empty() || self.lambdas.is_empty() {
            return Err(config("sweep axes must not be empty"));
        }
        if self.modes.is_empty() {
            return Err(config("no modes requested"));
        }
        if self.workers == 0 {
            return Err(config("workers must be >= 1"));
        }
        for &(t, l) in &self.points() {
            self.point_config(t, l)?;
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.temperatures.iter().flat_map(|&t| self.lambdas.iter().map(move |&l| (t, l))).collect()
    }

    pub fn point_config(&self, temperature: f64, lambda: f64) -> Result<PhysicsConfig> {
        let mut cfg = self.base.clone();
        cfg.bath.temperature = temperature;
        cfg.bath.lambda = lambda;
        cfg.validate()?;
        Ok(cfg)
    }

    fn record_path(&self, temperature: f64, lambda: f64) -> PathBuf {
        self.out.join("points").join(format!("T{temperature}_L{lambda}.json"))
    }
}

/// Everything stored for one finished (or failed) sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub version: String,
    pub temperature: f64,
    pub lambda: f64,
    pub config_hash: String,
    pub modes: Vec<Mode>,
    pub figures: Vec<FiguresOfMerit>,
    pub q_p: Option<f64>,
    pub q_i: Option<f64>,
    pub non_markovianity: Option<f64>,
    pub error: Option<String>,
    pub seconds: f64,
}

impl PointRecord {
    pub fn figures(&self, mode: Mode) -> Option<&FiguresOfMerit> {
        self.figures.iter().find(|f| f.mode == mode)
    }

    fn reusable(&self, hash: &str, modes: &[Mode]) -> bool {
        self.version == VERSION && self.config_hash == hash && self.modes == modes && self.error.is_none()
    }
}

fn compute_point(spec: &SweepSpec, temperature: f64, lambda: f64) -> PointRecord {
    let start = std::time::Instant::now();
    let mut rec = PointRecord {
        version: VERSION.to_string(),
        temperature,
        lambda,
        config_hash: String::new(),
        modes: spec.modes.clone(),
        figures: Vec::new(),
        q_p: None,
        q_i: None,
        non_markovianity: None,
        error: None,
        seconds: 0.0,
    };
    let outcome = spec.point_config(temperature, lambda).and_then(|cfg| {
        rec.config_hash = cfg.hash_hex();
        let opts = EvaluateOptions {
            modes: spec.modes.clone(),
            eta_cache: Some(spec.cache.clone()),
            non_markovianity: spec.non_markovianity,
            ..Default::default()
        };
        evaluate_point(&cfg, &opts)
    });
    match outcome {
        Ok(r) => {
            rec.figures = r.modes.iter().map(|m| m.figures).collect();
            rec.q_p = r.q_p;
            rec.q_i = r.q_i;
            rec.non_markovianity = r.non_markovianity;
            for m in &r.modes {
                if !m.invariants.hold() {
                    log::warn!("T={temperature} K, lambda={lambda}, {}: invariants {:?}", m.figures.mode, m.invariants);
                }
            }
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec.seconds = start.elapsed().as_secs_f64();
    rec
}

/// Fills the η cache once per distinct key before the points run.
fn warm_cache(spec: &SweepSpec) -> Result<()> {
    if !spec.modes.iter().any(|m| *m != Mode::Pme) {
        return Ok(());
    }
    let mut seen = BTreeSet::new();
    let mut jobs = Vec::new();
    for (t, l) in spec.points() {
        let cfg = spec.point_config(t, l)?;
        let key = EtaKey::new(&cfg.bath, cfg.grid.dt, cfg.grid.n_c);
        if seen.insert(key.file_name()) {
            jobs.push((cfg, key));
        }
    }
    jobs.par_iter().try_for_each(|(cfg, key)| cached_eta(&spec.cache, &Model::new(cfg)?, key).map(|_| ()))
}

/// Runs every `(T, λ)` point and writes `results.csv`, the heatmaps and one
/// JSON record per point under `points/`.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<PointRecord>> {
    spec.validate()?;
    fs::create_dir_all(spec.out.join("points"))?;
    fs::write(spec.out.join("config.json"), spec.base.to_json())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| config(format!("thread pool: {e}")))?;
    let points = spec.points();
    let records: Vec<PointRecord> = pool.install(|| -> Result<Vec<PointRecord>> {
        if let Err(e) = warm_cache(spec) {
            log::warn!("eta cache warm-up failed: {e}");
        }
        points
            .par_iter()
            .map(|&(t, l)| -> Result<PointRecord> {
                let path = spec.record_path(t, l);
                if spec.resume {
                    let hash = spec.point_config(t, l)?.hash_hex();
                    if let Some(rec) = fs::read_to_string(&path)
                        .ok()
                        .and_then(|s| serde_json::from_str::<PointRecord>(&s).ok())
                        .filter(|r| r.reusable(&hash, &spec.modes))
                    {
                        log::info!("T={t} K, lambda={l}: reusing {}", path.display());
                        return Ok(rec);
                    }
                }
                let rec = compute_point(spec, t, l);
                match &rec.error {
                    Some(e) => log::error!("T={t} K, lambda={l}: {e}"),
                    None => log::info!("T={t} K, lambda={l}: done in {:.1} s", rec.seconds),
                }
                let tmp = path.with_extension("json.tmp");
                fs::write(&tmp, serde_json::to_string_pretty(&rec)?)?;
                fs::rename(&tmp, &path)?;
                Ok(rec)
            })
            .collect()
    })?;
    write_results(&spec.out.join("results.csv"), &records, &spec.modes)?;
    write_heatmaps(&spec.out.join("heatmaps"), spec, &records)?;
    Ok(records)
}

fn opt(x: Option<f64>, f: impl Fn(f64) -> String) -> String {
    x.map(f).unwrap_or_default()
}

fn pct(x: f64) -> String {
    format!("{:.6}", 100.0 * x)
}

fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

/// One row per point and mode; P, I and B in percent.
pub fn write_results(path: &Path, records: &[PointRecord], modes: &[Mode]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(RESULTS_HEADER.split(',')).map_err(csv_err)?;
    for rec in records {
        for &mode in modes {
            let f = rec.figures(mode);
            let error = match (&rec.error, f) {
                (Some(e), _) => e.clone(),
                (None, None) => "mode missing".to_string(),
                _ => String::new(),
            };
            w.write_record([
                rec.temperature.to_string(),
                rec.lambda.to_string(),
                mode.to_string(),
                opt(f.map(|f| f.purity), pct),
                opt(f.map(|f| f.indistinguishability), pct),
                opt(f.map(|f| f.brightness), pct),
                opt(rec.q_p, sci),
                opt(rec.q_i, sci),
                opt(rec.non_markovianity, sci),
                opt(f.map(|f| f.dt), |x| x.to_string()),
                f.map(|f| f.n_c.to_string()).unwrap_or_default(),
                f.map(|f| f.t_stride.to_string()).unwrap_or_default(),
                error,
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> qdcorr::Error {
    qdcorr::Error::Format(e.to_string())
}

/// Matrix CSVs, rows = T, columns = λ.
fn write_heatmaps(dir: &Path, spec: &SweepSpec, records: &[PointRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let find = |t: f64, l: f64| records.iter().find(|r| r.temperature == t && r.lambda == l);
    let write = |name: &str, value: &dyn Fn(&PointRecord) -> Option<f64>| -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join(format!("{name}.csv"))).map_err(csv_err)?;
        let mut header = vec!["T_K/lambda".to_string()];
        header.extend(spec.lambdas.iter().map(|l| l.to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for &t in &spec.temperatures {
            let mut row = vec![t.to_string()];
            row.extend(spec.lambdas.iter().map(|&l| opt(find(t, l).and_then(value), |x| format!("{x:.8e}"))));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    };
    for &mode in &spec.modes {
        write(&format!("P_{mode}"), &|r| r.figures(mode).map(|f| f.purity))?;
        write(&format!("I_{mode}"), &|r| r.figures(mode).map(|f| f.indistinguishability))?;
        write(&format!("B_{mode}"), &|r| r.figures(mode).map(|f| f.brightness))?;
    }
    write("Q_P", &|r| r.q_p)?;
    write("Q_I", &|r| r.q_i)?;
    if spec.non_markovianity {
        write("N", &|r| r.non_markovianity)?;
    }
    Ok(())
}

/// `(dt, n_c, stride)` of one ladder rung.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub dt: f64,
    pub n_c: usize,
    pub stride: usize,
}

impl std::str::FromStr for Rung {
    type Err = qdcorr::Error;
    /// `dt:n_c:stride`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || config(format!("rung `{s}` is not DT:N_C:STRIDE"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(Rung {
            dt: parts[0].trim().parse().map_err(|_| bad())?,
            n_c: parts[1].trim().parse().map_err(|_| bad())?,
            stride: parts[2].trim().parse().map_err(|_| bad())?,
        })
    }
}

/// Desk grid with stride 8 and 4, then the accuracy grid.
pub fn default_ladder() -> Vec<Rung> {
    vec![Rung { dt: 0.5, n_c: 7, stride: 8 }, Rung { dt: 0.5, n_c: 7, stride: 4 }, Rung { dt: 0.25, n_c: 12, stride: 4 }]
}

/// Largest change between successive rungs still counted as converged
/// (P, I, B as fractions).
pub const CONVERGENCE_TOL: [f64; 3] = [0.002, 0.01, 0.007];

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub rung: Rung,
    pub mode: Mode,
    pub figures: Option<FiguresOfMerit>,
    /// Change of P, I, B relative to the previous rung.
    pub delta: Option<[f64; 3]>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

pub fn convergence_report(
    base: &PhysicsConfig,
    point: (f64, f64),
    ladder: &[Rung],
    modes: &[Mode],
    cache: Option<&Path>,
) -> Result<Vec<ConvergenceRow>> {
    if ladder.len() < 2 {
        return Err(config("a convergence ladder needs at least two rungs"));
    }
    if modes.is_empty() {
        return Err(config("no modes requested"));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for rung in ladder {
        let mut cfg = base.clone();
        cfg.bath.temperature = point.0;
        cfg.bath.lambda = point.1;
        cfg.grid.dt = rung.dt;
        cfg.grid.n_c = rung.n_c;
        cfg.grid.t_stride = rung.stride;
        let opts = EvaluateOptions {
            modes: modes.to_vec(),
            eta_cache: cache.map(Path::to_path_buf),
            non_markovianity: false,
            ..Default::default()
        };
        let outcome = cfg.validate().and_then(|_| evaluate_point(&cfg, &opts));
        for &mode in modes {
            let (figures, error) = match &outcome {
                Ok(r) => (r.figures(mode).copied(), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let prev = rows.iter().rev().find(|r| r.mode == mode).and_then(|r| r.figures);
            let delta = match (prev, figures) {
                (Some(a), Some(b)) => Some([
                    (b.purity - a.purity).abs(),
                    (b.indistinguishability - a.indistinguishability).abs(),
                    (b.brightness - a.brightness).abs(),
                ]),
                _ => None,
            };
            let converged = delta.map(|d| d.iter().zip(CONVERGENCE_TOL).all(|(x, tol)| *x <= tol));
            if converged == Some(false) {
                log::warn!("{mode} not converged at dt={} n_c={} stride={}: {:?}", rung.dt, rung.n_c, rung.stride, delta);
            }
            rows.push(ConvergenceRow { rung: *rung, mode, figures, delta, converged, error });
        }
    }
    Ok(rows)
}

pub fn write_convergence(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["dt", "n_c", "stride", "mode", "P", "I", "B", "dP", "dI", "dB", "converged", "error"])
        .map_err(csv_err)?;
    for r in rows {
        let f = r.figures;
        let d = |k: usize| opt(r.delta.map(|d| d[k]), |x| pct(x));
        w.write_record([
            r.rung.dt.to_string(),
            r.rung.n_c.to_string(),
            r.rung.stride.to_string(),
            r.mode.to_string(),
            opt(f.map(|f| f.purity), pct),
            opt(f.map(|f| f.indistinguishability), pct),
            opt(f.map(|f| f.brightness), pct),
            d(0),
            d(1),
            d(2),
            r.converged.map(|c| c.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

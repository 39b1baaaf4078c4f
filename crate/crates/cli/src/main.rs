use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser};

use qdcorr::correlators::correlation_grids;
use qdcorr::nonmarkov::non_markovianity;
use qdcorr::Mode;
use qdcorr_cli::{
    convergence_report, default_ladder, load_config, parse_modes, parse_point, run_sweep, write_convergence, Preset,
    Rung, SweepSpec, CACHE_ENV,
};

/// Photon purity, indistinguishability and brightness of a phonon-coupled
/// quantum-dot emitter over a (temperature, coupling) grid.
#[derive(Parser)]
#[command(name = "qdcorr", version)]
#[command(group(ArgGroup::new("task").required(true).args(["sweep", "point", "convergence"])))]
struct Cli {
    /// JSON configuration; missing keys keep their defaults
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set bath.dot_radius=4`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Grid preset: desk or accuracy
    #[arg(long, default_value = "desk")]
    preset: Preset,

    /// Comma-separated subset of exact, qrt, pme
    #[arg(long, default_value = "exact,qrt,pme")]
    modes: String,

    /// Run the (T, lambda) sweep
    #[arg(long)]
    sweep: bool,

    /// Run a single point
    #[arg(long, value_name = "T,LAMBDA")]
    point: Option<String>,

    /// Convergence ladder at one point
    #[arg(long, value_name = "T,LAMBDA")]
    convergence: Option<String>,

    /// Sweep temperatures in K
    #[arg(long, value_delimiter = ',', default_values_t = [4.0, 10.0, 20.0, 30.0, 50.0, 70.0])]
    temperatures: Vec<f64>,

    /// Sweep coupling scales
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0])]
    lambdas: Vec<f64>,

    /// Rungs `DT:N_C:STRIDE` of the convergence ladder
    #[arg(long, value_delimiter = ',')]
    ladder: Vec<Rung>,

    /// Reuse finished points found in the output directory
    #[arg(long)]
    resume: bool,

    #[arg(long)]
    workers: Option<usize>,

    #[arg(long, default_value = "qdcorr-out")]
    out: PathBuf,

    /// Skip the non-Markovianity measure
    #[arg(long)]
    no_nm: bool,

    /// With --point: also write the correlation grids and the trace-distance curve
    #[arg(long)]
    dump: bool,
}

fn dump_point(cfg: &qdcorr::model::PhysicsConfig, modes: &[Mode], out: &std::path::Path) -> qdcorr::Result<()> {
    let dir = out.join("grids");
    fs::create_dir_all(&dir)?;
    for &mode in modes {
        for grid in correlation_grids(mode, cfg)? {
            let stem = format!("{}_{}", mode, grid.kind);
            grid.write_csv(std::io::BufWriter::new(fs::File::create(dir.join(format!("{stem}.csv")))?))?;
            fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&grid.sidecar(cfg))?)?;
        }
    }
    let nm = non_markovianity(cfg, cfg.analysis.nm_pairs)?;
    let mut text = String::from("t_ps,D\n");
    for (k, d) in nm.distance.iter().enumerate() {
        text += &format!("{},{d:.12e}\n", k as f64 * nm.dt);
    }
    fs::write(out.join("trace_distance.csv"), text)?;
    Ok(())
}

fn run(cli: Cli) -> qdcorr::Result<bool> {
    let base = load_config(cli.preset, cli.config.as_deref(), &cli.overrides)?;
    let modes = parse_modes(&cli.modes)?;
    fs::create_dir_all(&cli.out)?;

    if let Some(p) = &cli.convergence {
        let point = parse_point(p)?;
        let ladder = if cli.ladder.is_empty() { default_ladder() } else { cli.ladder.clone() };
        let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
        let rows = convergence_report(&base, point, &ladder, &modes, cache.as_deref())?;
        write_convergence(&cli.out.join("convergence.csv"), &rows)?;
        for r in &rows {
            println!(
                "dt={} n_c={} stride={} {:<5} {}",
                r.rung.dt,
                r.rung.n_c,
                r.rung.stride,
                r.mode,
                match (&r.figures, &r.error) {
                    (Some(f), _) => format!(
                        "P={:.3}% I={:.3}% B={:.3}% converged={}",
                        100.0 * f.purity,
                        100.0 * f.indistinguishability,
                        100.0 * f.brightness,
                        r.converged.map(|c| c.to_string()).unwrap_or_else(|| "-".into())
                    ),
                    (None, Some(e)) => format!("error: {e}"),
                    (None, None) => "missing".into(),
                }
            );
        }
        return Ok(rows.iter().all(|r| r.error.is_none()));
    }

    let (temperatures, lambdas) = match &cli.point {
        Some(p) => {
            let (t, l) = parse_point(p)?;
            (vec![t], vec![l])
        }
        None => (cli.temperatures.clone(), cli.lambdas.clone()),
    };
    let mut spec = SweepSpec::new(base, temperatures, lambdas, modes.clone(), cli.out.clone());
    if let Some(w) = cli.workers {
        spec.workers = w;
    }
    spec.resume = cli.resume;
    spec.non_markovianity = !cli.no_nm;
    let records = run_sweep(&spec)?;
    for r in &records {
        for f in &r.figures {
            println!(
                "T={} K lambda={} {:<5} P={:.3}% I={:.3}% B={:.3}%",
                r.temperature,
                r.lambda,
                f.mode,
                100.0 * f.purity,
                100.0 * f.indistinguishability,
                100.0 * f.brightness
            );
        }
        if let Some(e) = &r.error {
            println!("T={} K lambda={} failed: {e}", r.temperature, r.lambda);
        }
    }
    if cli.dump && cli.point.is_some() {
        let (t, l) = (spec.temperatures[0], spec.lambdas[0]);
        dump_point(&spec.point_config(t, l)?, &modes, &cli.out)?;
    }
    println!("results written to {}", cli.out.join("results.csv").display());
    Ok(records.iter().all(|r| r.error.is_none()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 on any error, 3 when identification
//! finishes but the spectral-gap diagnostic fails (the report is still
//! written).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::identify::{identify, IdentifyConfig, IdentifyReport, NoiseSetting};
use crate::model::{SwitchedModel, SystemKind};
use crate::noise::{NoiseFamily, NoiseModel};
use crate::simulate::{random_stable_model, read_dataset, simulate, write_dataset, InputSpec, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_GAP: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "switchid", version, about = "Identify switched AR/ARX systems from noisy records")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset CSV plus JSON sidecar.
    Simulate(SimulateArgs),
    /// Identify a switched model from a dataset.
    Identify(IdentifyArgs),
    /// Simulate and identify over a grid of sample sizes, variances and seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Sar,
    Sarx,
}

impl From<Kind> for SystemKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Sar => SystemKind::Sar,
            Kind::Sarx => SystemKind::Sarx,
        }
    }
}

/// `example1` is the two-mode first-order system used with measurement
/// noise; `ex2` is the same coefficients driven by process noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Example1,
    Ex2,
}

impl Preset {
    pub fn kind(self) -> SystemKind {
        match self {
            Preset::Example1 => SystemKind::Sar,
            Preset::Ex2 => SystemKind::Sarx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseMode {
    Known,
    Unknown,
}

/// Input law shared by presets and random systems.
pub fn preset_input() -> InputSpec {
    InputSpec::GaussianClipped { sigma: 1.0, bound: 5.0 }
}

pub fn preset_config(preset: Preset, sigma2: f64, n_samples: usize) -> Result<SimConfig> {
    Ok(SimConfig::new(
        preset.kind(),
        SwitchedModel::example1(),
        NoiseModel::gaussian(sigma2)?,
        n_samples,
    )
    .with_input(preset_input()))
}

/// Counter-based seed expansion: `stream` selects an independent ChaCha
/// stream under `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

const MODEL_STREAMS: u64 = 1 << 40;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Noise variance.
    #[arg(long, default_value_t = 0.0)]
    pub sigma2: f64,
    #[arg(long = "N", default_value_t = 100_000)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mode count for a random system (ignored with --preset).
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub na: usize,
    #[arg(long, default_value_t = 1)]
    pub nb: usize,
    /// Output stem; `.csv` and `.json` are appended.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    /// Dataset CSV (sidecar JSON is read from the same stem when present).
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to the kind recorded in the sidecar.
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub na: usize,
    #[arg(long, default_value_t = 1)]
    pub nb: usize,
    /// Known noise variance.
    #[arg(long, default_value_t = 0.0)]
    pub sigma2: f64,
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Report JSON path; the θ curve goes to `<stem>_theta.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct NoiseArgs {
    #[arg(long, value_enum, default_value_t = NoiseMode::Known)]
    pub noise: NoiseMode,
    #[arg(long = "theta-max", default_value_t = 4.0)]
    pub theta_max: f64,
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    #[arg(long = "gap-threshold")]
    pub gap_threshold: Option<f64>,
    #[arg(long = "tol-grad", default_value_t = 1e-8)]
    pub tol_grad: f64,
    /// Rescale data to unit peak magnitude before forming moments.
    #[arg(long)]
    pub scale: bool,
    #[arg(long = "no-refine")]
    pub no_refine: bool,
}

impl NoiseArgs {
    fn config(&self, kind: SystemKind, n: usize, na: usize, nb: usize, sigma2: f64) -> Result<IdentifyConfig> {
        let noise = match self.noise {
            NoiseMode::Known => NoiseSetting::Known {
                model: NoiseModel::gaussian(sigma2)?,
            },
            NoiseMode::Unknown => NoiseSetting::Unknown {
                family: NoiseFamily::GaussianZeroMean,
                theta_max: self.theta_max,
            },
        };
        let mut cfg = IdentifyConfig::new(kind, n, na, nb, noise);
        cfg.grid = self.grid;
        cfg.gap_threshold = self.gap_threshold;
        cfg.tol_grad = self.tol_grad;
        cfg.scaling = self.scale;
        cfg.refine = !self.no_refine;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Kind for random systems (ignored with --preset).
    #[arg(long, value_enum, default_value_t = Kind::Sarx)]
    pub kind: Kind,
    /// Number of random systems when no preset is given.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long = "N", value_delimiter = ',', required = true)]
    pub n_samples: Vec<usize>,
    /// Noise variances; with `--noise known` each is also the assumed variance.
    #[arg(long = "sigma2", value_delimiter = ',', required = true)]
    pub sigma2: Vec<f64>,
    /// Replicates per (system, N, σ²) cell.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Base seed for the counter-based expansion.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory for `sweep.csv` and `summary.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command and maps the
/// outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a).map(|_| EXIT_OK),
        Command::Identify(a) => cmd_identify(&a).map(|r| if r.gap_ok { EXIT_OK } else { EXIT_GAP }),
        Command::Sweep(a) => cmd_sweep(&a).map(|_| EXIT_OK),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(PathBuf, PathBuf)> {
    let cfg = match a.preset {
        Some(p) => {
            if a.kind.is_some_and(|k| SystemKind::from(k) != p.kind()) {
                return Err(Error::InvalidArgument(format!("preset {p:?} fixes the system kind")));
            }
            preset_config(p, a.sigma2, a.n_samples)?
        }
        None => {
            let kind = a
                .kind
                .ok_or_else(|| Error::InvalidArgument("give --preset or --kind".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, MODEL_STREAMS));
            let model = random_stable_model(a.n, a.na, a.nb, &mut rng)?;
            SimConfig::new(kind.into(), model, NoiseModel::gaussian(a.sigma2)?, a.n_samples).with_input(preset_input())
        }
    };
    let ds = simulate(&cfg, a.seed)?;
    ensure_parent(&a.out)?;
    let paths = write_dataset(&ds, &a.out)?;
    info!("wrote {} and {}", paths.0.display(), paths.1.display());
    Ok(paths)
}

pub fn theta_curve_path(report_path: &Path) -> PathBuf {
    let stem = report_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    report_path.with_file_name(format!("{stem}_theta.csv"))
}

pub fn cmd_identify(a: &IdentifyArgs) -> Result<IdentifyReport> {
    let ds = read_dataset(&a.data, None)?;
    let kind = a.kind.map(SystemKind::from).unwrap_or(ds.meta.kind);
    let cfg = a.noise.config(kind, a.n, a.na, a.nb, a.sigma2)?;
    let report = identify(&ds, &cfg)?;
    ensure_parent(&a.out)?;
    fs::write(&a.out, serde_json::to_string_pretty(&report)?)?;
    if let Some(search) = &report.theta {
        let mut w = csv::Writer::from_path(theta_curve_path(&a.out))?;
        w.write_record(["theta", "sigma_min"])?;
        for p in &search.curve {
            w.write_record([p.theta.to_string(), p.sigma_min.to_string()])?;
        }
        w.flush()?;
    }
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "c_hat = {:?}", report.c_hat);
    for (i, m) in report.model.modes.iter().enumerate() {
        let _ = writeln!(out, "mode {}: a = {:?}, b = {:?}", i + 1, m.a, m.b);
    }
    if let Some(t) = report.theta_hat() {
        let _ = writeln!(out, "theta_hat = {t}");
    }
    let _ = writeln!(out, "gap_ratio = {:.6e} (threshold {:.1e})", report.gap_ratio, report.gap_threshold);
    if !report.gap_ok {
        eprintln!("warning: data inconsistent with (n, n_a, n_b) = ({}, {}, {})", a.n, a.na, a.nb);
    }
    Ok(report)
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub kind: SystemKind,
    pub system: usize,
    pub sigma2: f64,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub rep: usize,
    pub seed: u64,
    pub beta: f64,
    pub sigma_min: f64,
    pub gap_ratio: f64,
    pub theta_hat: Option<f64>,
    pub max_coef_error: f64,
    pub mode_accuracy: Option<f64>,
    pub gamma: Option<f64>,
    pub elapsed_secs: f64,
}

/// One row of `summary.csv`, aggregated over systems and replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub kind: SystemKind,
    pub sigma2: f64,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub cells: usize,
    pub mean_beta: f64,
    pub var_beta: f64,
    pub median_beta: f64,
    pub mean_gamma: f64,
    pub mean_elapsed_secs: f64,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    system: usize,
    sigma2: f64,
    n_samples: usize,
    rep: usize,
    stream: u64,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.sigma2, r.n_samples)) {
            keys.push((r.sigma2, r.n_samples));
        }
    }
    keys.iter()
        .map(|&(sigma2, n_samples)| {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.sigma2 == sigma2 && r.n_samples == n_samples)
                .collect();
            let betas: Vec<f64> = group.iter().map(|r| r.beta).collect();
            let m = betas.len() as f64;
            let mean = betas.iter().sum::<f64>() / m;
            let var = if betas.len() > 1 {
                betas.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            let gammas: Vec<f64> = group.iter().filter_map(|r| r.gamma).collect();
            SummaryRow {
                kind: group[0].kind,
                sigma2,
                n_samples,
                cells: group.len(),
                mean_beta: mean,
                var_beta: var,
                median_beta: median(&betas),
                mean_gamma: gammas.iter().sum::<f64>() / gammas.len().max(1) as f64,
                mean_elapsed_secs: group.iter().map(|r| r.elapsed_secs).sum::<f64>() / m,
            }
        })
        .collect()
}

fn run_cell(a: &SweepArgs, cell: Cell) -> Result<SweepRow> {
    let (kind, sim) = match a.preset {
        Some(p) => (p.kind(), preset_config(p, cell.sigma2, cell.n_samples)?),
        None => {
            let kind = SystemKind::from(a.kind);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, MODEL_STREAMS + cell.system as u64));
            let model = random_stable_model(a.n, 1, 1, &mut rng)?;
            let cfg = SimConfig::new(kind, model, NoiseModel::gaussian(cell.sigma2)?, cell.n_samples)
                .with_input(preset_input());
            (kind, cfg)
        }
    };
    let seed = derive_seed(a.seed, cell.stream);
    let ds = simulate(&sim, seed)?;
    let icfg = a.noise.config(kind, a.n, 1, 1, cell.sigma2)?;
    let report = identify(&ds, &icfg)?;
    let eval = report
        .eval
        .as_ref()
        .ok_or_else(|| Error::Missing("evaluation against the simulated truth".into()))?;
    Ok(SweepRow {
        kind,
        system: cell.system,
        sigma2: cell.sigma2,
        n_samples: cell.n_samples,
        rep: cell.rep,
        seed,
        beta: eval.beta,
        sigma_min: report.sigma_min(),
        gap_ratio: report.gap_ratio,
        theta_hat: report.theta_hat(),
        max_coef_error: eval.max_coef_error,
        mode_accuracy: eval.mode_accuracy,
        gamma: eval.gamma,
        elapsed_secs: report.elapsed_secs,
    })
}

/// Runs every cell of the cartesian grid and writes `sweep.csv` and
/// `summary.csv` under `a.out`. Rows are ordered by system, σ², N, replicate.
pub fn cmd_sweep(a: &SweepArgs) -> Result<Vec<SweepRow>> {
    if a.n_samples.is_empty() || a.sigma2.is_empty() || a.seeds == 0 || a.runs == 0 {
        return Err(Error::InvalidArgument("sweep axes must be nonempty".into()));
    }
    let systems = if a.preset.is_some() { 1 } else { a.runs };
    let mut cells = Vec::new();
    for system in 0..systems {
        for &sigma2 in &a.sigma2 {
            for &n_samples in &a.n_samples {
                for rep in 0..a.seeds {
                    let stream = cells.len() as u64;
                    cells.push(Cell {
                        system,
                        sigma2,
                        n_samples,
                        rep,
                        stream,
                    });
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| cells.par_iter().map(|&c| run_cell(a, c)).collect::<Result<_>>())?;

    fs::create_dir_all(&a.out)?;
    let mut w = csv::Writer::from_path(a.out.join("sweep.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(a.out.join("summary.csv"))?;
    for r in summarize(&rows) {
        w.serialize(r)?;
    }
    w.flush()?;
    info!("sweep finished: {} cells", rows.len());
    Ok(rows)
}

//! Ground-truth data generation and dataset files.
//!
//! Datasets are stored row-aligned: row `i` holds time index
//! `k = i + 1 − presamples`, so the first `presamples` rows are the initial
//! conditions needed by the first regressor window.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Provenance, SubModel, SwitchedModel, SystemKind};
use crate::noise::NoiseModel;

/// Outputs beyond this magnitude abort the simulation.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum SwitchSpec {
    IidUniform,
    PeriodicDwell { dwell: usize },
    MarkovChain { transition: Vec<Vec<f64>> },
}

impl SwitchSpec {
    fn validate(&self, n: usize) -> Result<()> {
        match self {
            SwitchSpec::IidUniform => Ok(()),
            SwitchSpec::PeriodicDwell { dwell } if *dwell >= 1 => Ok(()),
            SwitchSpec::PeriodicDwell { .. } => Err(Error::InvalidArgument("dwell must be >= 1".into())),
            SwitchSpec::MarkovChain { transition } => {
                if transition.len() != n || transition.iter().any(|row| row.len() != n) {
                    return Err(Error::InvalidArgument(format!("transition matrix must be {n}x{n}")));
                }
                for row in transition {
                    let total: f64 = row.iter().sum();
                    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > 1e-9 {
                        return Err(Error::InvalidArgument("transition rows must be probability vectors".into()));
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    /// IID uniform on `[−bound, bound]`.
    UniformBounded { bound: f64 },
    /// IID `N(0, sigma²)` clipped to `[−bound, bound]`.
    GaussianClipped { sigma: f64, bound: f64 },
}

impl Default for InputSpec {
    fn default() -> Self {
        InputSpec::UniformBounded { bound: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub kind: SystemKind,
    pub model: SwitchedModel,
    pub switching: SwitchSpec,
    pub input: InputSpec,
    pub noise: NoiseModel,
    pub n_samples: usize,
    /// Minimum acceptable visit fraction per mode; violations are flagged.
    pub visit_floor: f64,
}

impl SimConfig {
    pub fn new(kind: SystemKind, model: SwitchedModel, noise: NoiseModel, n_samples: usize) -> Self {
        let floor = 0.6 / model.n_modes() as f64;
        Self {
            kind,
            model,
            switching: SwitchSpec::IidUniform,
            input: InputSpec::default(),
            noise,
            n_samples,
            visit_floor: floor,
        }
    }

    pub fn with_input(mut self, input: InputSpec) -> Self {
        self.input = input;
        self
    }

    pub fn with_switching(mut self, switching: SwitchSpec) -> Self {
        self.switching = switching;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub kind: SystemKind,
    pub presamples: usize,
    #[serde(default)]
    pub theta_true: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub generator: String,
    #[serde(default)]
    pub model: Option<SwitchedModel>,
    #[serde(default)]
    pub switching: Option<SwitchSpec>,
    #[serde(default)]
    pub input: Option<InputSpec>,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default)]
    pub visit_fractions: Vec<f64>,
    #[serde(default = "default_true")]
    pub visit_floor_ok: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    /// Noiseless SAR output.
    pub x: Option<Vec<f64>>,
    /// Active mode (1-based) for each `k >= 1`; empty when unknown.
    pub modes: Vec<usize>,
    /// `η_k` (SAR) or `ε_k` (SARX) for each `k >= 1`.
    pub noise: Option<Vec<f64>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_samples(&self) -> usize {
        self.rows() - self.meta.presamples
    }

    /// First row with a complete window for orders `(n_a, n_b)`.
    pub fn window_start(&self, n_a: usize, n_b: usize) -> usize {
        let need = n_a.max(n_b);
        if self.meta.presamples < need {
            warn!(
                "dataset carries {} pre-samples but orders ({n_a}, {n_b}) need {need}; dropping the first windows",
                self.meta.presamples
            );
        }
        self.meta.presamples.max(need)
    }

    /// Writes `[y_k, .., y_{k−n_a}, u_{k−1}, .., u_{k−n_b}]` for row `row`.
    #[inline]
    pub fn fill_window(&self, row: usize, n_a: usize, n_b: usize, buf: &mut [f64]) {
        for (j, slot) in buf[..=n_a].iter_mut().enumerate() {
            *slot = self.y[row - j];
        }
        for (j, slot) in buf[n_a + 1..=n_a + n_b].iter_mut().enumerate() {
            *slot = self.u[row - 1 - j];
        }
    }

    /// Every complete regressor window, in time order.
    pub fn windows(&self, n_a: usize, n_b: usize) -> Vec<Vec<f64>> {
        let start = self.window_start(n_a, n_b);
        (start..self.rows())
            .map(|row| {
                let mut buf = vec![0.0; n_a + n_b + 1];
                self.fill_window(row, n_a, n_b, &mut buf);
                buf
            })
            .collect()
    }

    /// True modes aligned with [`Dataset::windows`].
    pub fn window_modes(&self, n_a: usize, n_b: usize) -> Option<&[usize]> {
        if self.modes.len() != self.n_samples() {
            return None;
        }
        let skip = self.window_start(n_a, n_b) - self.meta.presamples;
        Some(&self.modes[skip..])
    }
}

fn sample_mode<R: Rng>(spec: &SwitchSpec, n: usize, k: usize, prev: Option<usize>, rng: &mut R) -> usize {
    match spec {
        SwitchSpec::IidUniform => rng.random_range(0..n),
        SwitchSpec::PeriodicDwell { dwell } => (k / dwell) % n,
        SwitchSpec::MarkovChain { transition } => match prev {
            None => rng.random_range(0..n),
            Some(p) => {
                let r: f64 = rng.random();
                let mut acc = 0.0;
                for (j, &pj) in transition[p].iter().enumerate() {
                    acc += pj;
                    if r < acc {
                        return j;
                    }
                }
                n - 1
            }
        },
    }
}

fn sample_input<R: Rng>(spec: &InputSpec, rng: &mut R, gauss: &Normal<f64>) -> f64 {
    match spec {
        InputSpec::UniformBounded { bound } => rng.random_range(-bound..=*bound),
        InputSpec::GaussianClipped { sigma, bound } => (sigma * gauss.sample(rng)).clamp(-bound, *bound),
    }
}

/// Simulates with a ChaCha stream seeded from `seed`.
pub fn simulate(cfg: &SimConfig, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = simulate_with_rng(cfg, &mut rng)?;
    ds.meta.seed = Some(seed);
    Ok(ds)
}

pub fn simulate_with_rng<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<Dataset> {
    let model = &cfg.model;
    let (n_a, n_b, n) = (model.n_a, model.n_b, model.n_modes());
    if cfg.n_samples == 0 {
        return Err(Error::InvalidArgument("N must be >= 1".into()));
    }
    if n_a == 0 && n_b == 0 {
        return Err(Error::InvalidArgument("model needs at least one lag".into()));
    }
    cfg.switching.validate(n)?;
    match cfg.input {
        InputSpec::UniformBounded { bound } if bound > 0.0 && bound.is_finite() => {}
        InputSpec::GaussianClipped { sigma, bound } if sigma > 0.0 && bound > 0.0 && bound.is_finite() => {}
        _ => return Err(Error::InvalidArgument("input spec needs positive finite parameters".into())),
    }
    let noise_sd = match cfg.noise {
        NoiseModel::Gaussian { theta } => {
            cfg.noise.validate(0)?;
            theta.sqrt()
        }
        NoiseModel::Moments { .. } => {
            return Err(Error::InvalidArgument(
                "simulation needs a samplable noise law; use the Gaussian family".into(),
            ))
        }
    };
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let pre = n_a.max(n_b);
    let rows = pre + cfg.n_samples;
    let mut u = vec![0.0; rows];
    let mut x = vec![0.0; rows];
    let mut y = vec![0.0; rows];
    let mut modes = Vec::with_capacity(cfg.n_samples);
    let mut noise = Vec::with_capacity(cfg.n_samples);
    let mut visits = vec![0usize; n];
    let mut prev = None;
    for row in pre..rows {
        let k = row - pre;
        let mode = sample_mode(&cfg.switching, n, k, prev, rng);
        prev = Some(mode);
        visits[mode] += 1;
        let sm = &model.modes[mode];
        let e = noise_sd * gauss.sample(rng);
        match cfg.kind {
            SystemKind::Sar => {
                let mut v = 0.0;
                for (j, a) in sm.a.iter().enumerate() {
                    v += a * x[row - 1 - j];
                }
                for (j, b) in sm.b.iter().enumerate() {
                    v += b * u[row - 1 - j];
                }
                x[row] = v;
                y[row] = v + e;
            }
            SystemKind::Sarx => {
                let mut v = e;
                for (j, a) in sm.a.iter().enumerate() {
                    v += a * y[row - 1 - j];
                }
                for (j, b) in sm.b.iter().enumerate() {
                    v += b * u[row - 1 - j];
                }
                y[row] = v;
            }
        }
        if !(y[row].abs() < OVERFLOW_GUARD) {
            return Err(Error::Diverged { k: k + 1, value: y[row] });
        }
        modes.push(mode + 1);
        noise.push(e);
        // u_k first enters the recursion at time k + 1; u_N keeps columns aligned.
        u[row] = sample_input(&cfg.input, rng, &gauss);
    }

    let fractions: Vec<f64> = visits.iter().map(|&v| v as f64 / cfg.n_samples as f64).collect();
    let floor_ok = fractions.iter().all(|&f| f >= cfg.visit_floor);
    if !floor_ok {
        warn!("mode visit fractions {fractions:?} fall below the floor {}", cfg.visit_floor);
    }
    Ok(Dataset {
        u,
        x: matches!(cfg.kind, SystemKind::Sar).then_some(x),
        y,
        modes,
        noise: Some(noise),
        meta: DatasetMeta {
            n,
            n_a,
            n_b,
            kind: cfg.kind,
            presamples: pre,
            theta_true: cfg.noise.theta().first().copied(),
            seed: None,
            generator: "switchid simulate".into(),
            model: Some(model.clone()),
            switching: Some(cfg.switching.clone()),
            input: Some(cfg.input.clone()),
            noise: Some(cfg.noise.clone()),
            visit_fractions: fractions,
            visit_floor_ok: floor_ok,
        },
    })
}

/// Random first-order switched model with stable, well-separated modes.
///
/// Each `a` is uniform on `(−0.95, 0.95)` and each `b` uniform on
/// `[−2, −0.2] ∪ [0.2, 2]`; draws are rejected until all modes are at
/// least 0.05 apart in the `(a, b)` plane.
pub fn random_stable_model<R: Rng>(n: usize, n_a: usize, n_b: usize, rng: &mut R) -> Result<SwitchedModel> {
    if n_a != 1 || n_b != 1 {
        return Err(Error::InvalidArgument("random models are first order (n_a = n_b = 1)".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one mode".into()));
    }
    let mut modes: Vec<SubModel> = Vec::with_capacity(n);
    while modes.len() < n {
        let a = loop {
            let v: f64 = rng.random_range(-0.95..0.95);
            if v > -0.95 {
                break v;
            }
        };
        let mag: f64 = rng.random_range(0.2..=2.0);
        let b = if rng.random_bool(0.5) { mag } else { -mag };
        let far = modes
            .iter()
            .all(|m| ((m.a[0] - a).powi(2) + (m.b[0] - b).powi(2)).sqrt() >= 0.05);
        if far {
            modes.push(SubModel::new(vec![a], vec![b]));
        }
    }
    SwitchedModel::new(n_a, n_b, modes, Provenance::True)
}

/// Noise-to-output ratio `max|noise| / max|y|` over `k >= 1`.
pub fn gamma(ds: &Dataset) -> Result<f64> {
    let noise = ds.noise.as_ref().ok_or_else(|| Error::Missing("noise trace".into()))?;
    let max_noise = noise.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_y = ds.y[ds.meta.presamples..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_y == 0.0 {
        return Ok(if max_noise == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(max_noise / max_y)
}

/// `stem.csv` and `stem.json` next to each other. A trailing `.csv` or
/// `.json` on `stem` is dropped; any other dot stays part of the name.
pub fn dataset_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let base = match stem.extension().and_then(|e| e.to_str()) {
        Some("csv" | "json") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = base.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".csv"), with(".json"))
}

/// Writes `k,u,y[,x][,mode][,noise]` plus the JSON sidecar.
pub fn write_dataset(ds: &Dataset, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let (csv_path, json_path) = dataset_paths(stem);
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&csv_path)?));
    let mut header = vec!["k", "u", "y"];
    if ds.x.is_some() {
        header.push("x");
    }
    let has_modes = !ds.modes.is_empty();
    if has_modes {
        header.push("mode");
    }
    if ds.noise.is_some() {
        header.push("noise");
    }
    w.write_record(&header)?;
    let pre = ds.meta.presamples;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for row in 0..ds.rows() {
        record.clear();
        let k = row as i64 + 1 - pre as i64;
        record.push(k.to_string());
        record.push(ds.u[row].to_string());
        record.push(ds.y[row].to_string());
        if let Some(x) = &ds.x {
            record.push(x[row].to_string());
        }
        let sample = row.checked_sub(pre);
        if has_modes {
            record.push(sample.map(|i| ds.modes[i].to_string()).unwrap_or_default());
        }
        if let Some(noise) = &ds.noise {
            record.push(sample.map(|i| noise[i].to_string()).unwrap_or_default());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(&json_path)?), &ds.meta)?;
    Ok((csv_path, json_path))
}

fn parse_f64(field: &str, line: usize, column: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("line {line}: bad {column} value '{field}'")))
}

/// Reads a dataset CSV. The sidecar is used when present; otherwise
/// `fallback` supplies the metadata and pre-samples are inferred from rows
/// with `k <= 0`.
pub fn read_dataset(csv_path: &Path, fallback: Option<DatasetMeta>) -> Result<Dataset> {
    let json_path = csv_path.with_extension("json");
    let sidecar: Option<DatasetMeta> = if json_path.exists() {
        Some(serde_json::from_reader(BufReader::new(File::open(&json_path)?))?)
    } else {
        None
    };
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(csv_path)?));
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (ck, cu, cy) = match (col("k"), col("u"), col("y")) {
        (Some(k), Some(u), Some(y)) => (k, u, y),
        _ => return Err(Error::InvalidArgument("dataset CSV needs k,u,y columns".into())),
    };
    let (cx, cmode, cnoise) = (col("x"), col("mode"), col("noise"));
    let (mut u, mut y, mut x) = (Vec::new(), Vec::new(), Vec::new());
    let (mut modes, mut noise) = (Vec::new(), Vec::new());
    let mut presamples = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let get = |c: usize| rec.get(c).ok_or_else(|| Error::InvalidArgument(format!("line {line}: missing field")));
        let k: i64 = get(ck)?
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("line {line}: bad k")))?;
        if k <= 0 {
            presamples += 1;
        }
        u.push(parse_f64(get(cu)?, line, "u")?);
        y.push(parse_f64(get(cy)?, line, "y")?);
        if let Some(c) = cx {
            x.push(parse_f64(get(c)?, line, "x")?);
        }
        if k > 0 {
            if let Some(c) = cmode {
                let f = get(c)?.trim();
                if !f.is_empty() {
                    modes.push(
                        f.parse()
                            .map_err(|_| Error::InvalidArgument(format!("line {line}: bad mode")))?,
                    );
                }
            }
            if let Some(c) = cnoise {
                let f = get(c)?.trim();
                if !f.is_empty() {
                    noise.push(parse_f64(f, line, "noise")?);
                }
            }
        }
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("dataset CSV has no rows".into()));
    }
    let mut meta = sidecar
        .or(fallback)
        .ok_or_else(|| Error::Missing(format!("sidecar {} and no fallback metadata", json_path.display())))?;
    meta.presamples = presamples;
    let n_samples = y.len() - presamples;
    Ok(Dataset {
        u,
        y,
        x: (cx.is_some()).then_some(x),
        modes: if modes.len() == n_samples { modes } else { Vec::new() },
        noise: (noise.len() == n_samples && cnoise.is_some()).then_some(noise),
        meta,
    })
}

//! Identification pipelines: corrected moment matrix, null-vector
//! extraction, hyperplane recovery by polynomial differentiation, mode
//! assignment and noise-parameter search.

use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{beta, match_modes, mode_accuracy, EvalSummary};
use crate::moment_matrix::{min_singular, symmetric_min_singular, MomentMatrix, RawMomentTable, SvdResult};
use crate::model::{Provenance, SubModel, SwitchedModel, SystemKind};
use crate::noise::{build_corrections, NoiseFamily, NoiseModel};
use crate::simulate::{gamma, Dataset};
use crate::veronese::{power_table, HomoPoly, LinearForm, VeroneseIndex};

const CHUNK_ROWS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum NoiseSetting {
    Known { model: NoiseModel },
    /// Noise law from `family` with a single unknown parameter in `[0, θ_max]`.
    Unknown { family: NoiseFamily, theta_max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyConfig {
    pub kind: SystemKind,
    pub n: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub noise: NoiseSetting,
    /// Gradients below this norm are skipped in the argmin scan.
    pub tol_grad: f64,
    /// `None` picks 1e6 for known-zero noise and 10 otherwise.
    pub gap_threshold: Option<f64>,
    pub grid: usize,
    /// A refined local minimum is sub-threshold when its `σ_min` is at most
    /// `factor` times the smallest refined minimum.
    pub theta_threshold_factor: f64,
    /// Rescale data to unit peak magnitude before forming moments.
    pub scaling: bool,
    pub seed: u64,
    /// Least-squares re-fit of each mode on its assigned windows.
    pub refine: bool,
    pub max_candidates: usize,
}

impl IdentifyConfig {
    pub fn new(kind: SystemKind, n: usize, n_a: usize, n_b: usize, noise: NoiseSetting) -> Self {
        Self {
            kind,
            n,
            n_a,
            n_b,
            noise,
            tol_grad: 1e-8,
            gap_threshold: None,
            grid: 200,
            theta_threshold_factor: 5.0,
            scaling: false,
            seed: 0,
            refine: true,
            max_candidates: 100_000,
        }
    }

    pub fn known(kind: SystemKind, n: usize, n_a: usize, n_b: usize, model: NoiseModel) -> Self {
        Self::new(kind, n, n_a, n_b, NoiseSetting::Known { model })
    }

    pub fn unknown_gaussian(kind: SystemKind, n: usize, n_a: usize, n_b: usize, theta_max: f64) -> Self {
        Self::new(
            kind,
            n,
            n_a,
            n_b,
            NoiseSetting::Unknown {
                family: NoiseFamily::GaussianZeroMean,
                theta_max,
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("mode count must be positive".into()));
        }
        if self.n_a == 0 {
            return Err(Error::InvalidArgument("n_a must be at least 1".into()));
        }
        if !(self.tol_grad > 0.0) {
            return Err(Error::InvalidArgument("gradient tolerance must be positive".into()));
        }
        if let Some(g) = self.gap_threshold {
            if !(g > 0.0) {
                return Err(Error::InvalidArgument("gap threshold must be positive".into()));
            }
        }
        if self.max_candidates == 0 {
            return Err(Error::InvalidArgument("candidate cap must be positive".into()));
        }
        match &self.noise {
            NoiseSetting::Known { model } => model.validate(2 * self.n),
            NoiseSetting::Unknown { family, theta_max } => {
                if !(*theta_max > 0.0 && theta_max.is_finite()) {
                    return Err(Error::InvalidArgument(format!("θ_max must be positive, got {theta_max}")));
                }
                if *family != NoiseFamily::GaussianZeroMean {
                    return Err(Error::InvalidArgument(
                        "unknown-parameter search supports the zero-mean Gaussian family only".into(),
                    ));
                }
                if self.grid == 0 {
                    return Err(Error::InvalidArgument("θ grid needs at least one point".into()));
                }
                if !(self.theta_threshold_factor >= 1.0) {
                    return Err(Error::InvalidArgument("θ threshold factor must be at least 1".into()));
                }
                Ok(())
            }
        }
    }

    fn effective_gap_threshold(&self) -> f64 {
        self.gap_threshold.unwrap_or(match &self.noise {
            NoiseSetting::Known { model } if model.is_zero() => 1e6,
            _ => 10.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub sigma_min: f64,
}

/// A grid local minimum of `σ_min(θ)` after golden-section refinement
/// inside its two neighbouring grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedMinimum {
    pub theta: f64,
    pub sigma_min: f64,
    pub sub_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSearch {
    pub theta_hat: f64,
    pub sigma_min: f64,
    pub threshold: f64,
    /// No refined minimum cleared the threshold; `theta_hat` is the global minimizer.
    pub fallback: bool,
    /// Refined local minima in increasing `θ`.
    pub minima: Vec<RefinedMinimum>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub kind: SystemKind,
    pub model: SwitchedModel,
    pub refined: Option<SwitchedModel>,
    /// Estimated decoupling coefficients, leading-normalized.
    pub c_hat: Vec<f64>,
    pub c_hat_degenerate: bool,
    pub singular_values: Vec<f64>,
    pub gap_ratio: f64,
    pub gap_threshold: f64,
    /// `gap_ratio >= gap_threshold`; false means the data look inconsistent
    /// with the requested `(n, n_a, n_b)`.
    pub gap_ok: bool,
    pub theta: Option<ThetaSearch>,
    /// Estimated mode (1-based) per window.
    pub labels: Vec<usize>,
    pub division_residuals: Vec<f64>,
    pub warnings: Vec<String>,
    pub n_windows: usize,
    pub scale: f64,
    pub eval: Option<EvalSummary>,
    pub elapsed_secs: f64,
}

impl IdentifyReport {
    pub fn theta_hat(&self) -> Option<f64> {
        self.theta.as_ref().map(|t| t.theta_hat)
    }

    pub fn sigma_min(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(f64::NAN)
    }

    pub fn c_hat_poly(&self) -> Result<HomoPoly> {
        let index = VeroneseIndex::new(self.model.n_modes(), self.model.dims())?;
        HomoPoly::new(Arc::new(index), self.c_hat.clone())
    }
}

fn check_kind(cfg: &IdentifyConfig, want: SystemKind) -> Result<()> {
    if cfg.kind != want {
        return Err(Error::InvalidArgument(format!("config kind {:?} passed to the {want:?} pipeline", cfg.kind)));
    }
    Ok(())
}

pub fn identify_sar(data: &Dataset, cfg: &IdentifyConfig) -> Result<IdentifyReport> {
    check_kind(cfg, SystemKind::Sar)?;
    run(data, cfg)
}

pub fn identify_sarx(data: &Dataset, cfg: &IdentifyConfig) -> Result<IdentifyReport> {
    check_kind(cfg, SystemKind::Sarx)?;
    run(data, cfg)
}

/// Dispatches on `cfg.kind`.
pub fn identify(data: &Dataset, cfg: &IdentifyConfig) -> Result<IdentifyReport> {
    run(data, cfg)
}

/// Joint estimate of the noise parameter and the model.
pub fn estimate_theta(data: &Dataset, cfg: &IdentifyConfig) -> Result<(f64, IdentifyReport)> {
    if !matches!(cfg.noise, NoiseSetting::Unknown { .. }) {
        return Err(Error::InvalidArgument("θ estimation needs an unknown-noise config".into()));
    }
    let report = run(data, cfg)?;
    let theta = report.theta_hat().expect("unknown-noise run carries a θ search");
    Ok((theta, report))
}

/// `σ_min` of the corrected moment matrix at each `θ` of `grid`, in the
/// data's own units.
pub fn theta_curve(data: &Dataset, cfg: &IdentifyConfig, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    let ctx = Context::new(data, cfg)?;
    let table = ctx.raw_table()?;
    let lam2 = ctx.scale * ctx.scale;
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.par_iter()
        .map(|&theta| {
            let s = sigma_at(&table, &ctx, theta * lam2)?;
            Ok(CurvePoint { theta, sigma_min: s })
        })
        .collect()
}

struct Context<'a> {
    data: &'a Dataset,
    cfg: &'a IdentifyConfig,
    index: Arc<VeroneseIndex>,
    scale: f64,
    start: usize,
}

impl<'a> Context<'a> {
    fn new(data: &'a Dataset, cfg: &'a IdentifyConfig) -> Result<Self> {
        cfg.validate()?;
        let s = cfg.n_a + cfg.n_b + 1;
        let index = Arc::new(VeroneseIndex::new(cfg.n, s)?);
        let start = data.window_start(cfg.n_a, cfg.n_b);
        if start >= data.rows() {
            return Err(Error::InvalidArgument("dataset has no complete regressor window".into()));
        }
        let scale = if cfg.scaling {
            let peak = data.y.iter().chain(&data.u).fold(0.0f64, |m, v| m.max(v.abs()));
            if peak > 0.0 && peak.is_finite() {
                1.0 / peak
            } else {
                1.0
            }
        } else {
            1.0
        };
        Ok(Self {
            data,
            cfg,
            index,
            scale,
            start,
        })
    }

    fn n_windows(&self) -> usize {
        self.data.rows() - self.start
    }

    fn dims(&self) -> usize {
        self.index.dims()
    }

    fn n_outputs(&self) -> usize {
        self.cfg.n_a + 1
    }

    #[inline]
    fn window(&self, row: usize, buf: &mut [f64]) {
        self.data.fill_window(row, self.cfg.n_a, self.cfg.n_b, buf);
        if self.scale != 1.0 {
            buf.iter_mut().for_each(|v| *v *= self.scale);
        }
    }

    fn chunks(&self) -> Vec<(usize, usize)> {
        (self.start..self.data.rows())
            .step_by(CHUNK_ROWS)
            .map(|lo| (lo, (lo + CHUNK_ROWS).min(self.data.rows())))
            .collect()
    }

    /// Chunks are reduced in a fixed order, so results do not depend on the
    /// thread count.
    fn moment_matrix(&self, model: &NoiseModel) -> Result<MomentMatrix> {
        let kind = self.cfg.kind.moment_kind();
        let corrections = build_corrections(model, 2 * self.cfg.n)?;
        let parts: Vec<MomentMatrix> = self
            .chunks()
            .into_par_iter()
            .map(|(lo, hi)| {
                let mut m = MomentMatrix::new(Arc::clone(&self.index), kind, self.n_outputs())?;
                let mut buf = vec![0.0; self.dims()];
                for row in lo..hi {
                    self.window(row, &mut buf);
                    m.accumulate(&buf, &corrections)?;
                }
                Ok(m)
            })
            .collect::<Result<_>>()?;
        let mut total = MomentMatrix::new(Arc::clone(&self.index), kind, self.n_outputs())?;
        for p in &parts {
            total.merge(p)?;
        }
        Ok(total)
    }

    fn raw_table(&self) -> Result<RawMomentTable> {
        let parts: Vec<RawMomentTable> = self
            .chunks()
            .into_par_iter()
            .map(|(lo, hi)| {
                let mut t = RawMomentTable::new(Arc::clone(&self.index))?;
                let mut buf = vec![0.0; self.dims()];
                for row in lo..hi {
                    self.window(row, &mut buf);
                    t.accumulate(&buf)?;
                }
                Ok(t)
            })
            .collect::<Result<_>>()?;
        let mut total = RawMomentTable::new(Arc::clone(&self.index))?;
        for p in &parts {
            total.merge(p)?;
        }
        Ok(total)
    }

    /// Uniform-stride subsample of at most `max_candidates` windows.
    fn candidates(&self) -> Vec<Vec<f64>> {
        let total = self.n_windows();
        let stride = total.div_ceil(self.cfg.max_candidates).max(1);
        (self.start..self.data.rows())
            .step_by(stride)
            .map(|row| {
                let mut buf = vec![0.0; self.dims()];
                self.window(row, &mut buf);
                buf
            })
            .collect()
    }
}

fn sigma_at(table: &RawMomentTable, ctx: &Context, theta_scaled: f64) -> Result<f64> {
    let w = build_corrections(&NoiseModel::gaussian(theta_scaled.max(0.0))?, 2 * ctx.cfg.n)?;
    let m = table.assemble(ctx.cfg.kind.moment_kind(), ctx.n_outputs(), &w)?;
    Ok(symmetric_min_singular(&m)?.sigma_min())
}

fn golden_section<F: Fn(f64) -> Result<f64>>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

/// Grid positions `θ_g = θ_max·g/(G−1)`; a single point sits at 0.
pub fn theta_grid(theta_max: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![0.0];
    }
    (0..points)
        .map(|g| theta_max * g as f64 / (points - 1) as f64)
        .collect()
}

/// Grid indices `g` with `σ_g` no larger than either neighbour, collapsing
/// flat runs to their first index.
fn grid_minima(sig: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    for g in 0..sig.len() {
        let left_ok = g == 0 || sig[g - 1] > sig[g];
        let right_ok = g + 1 == sig.len() || sig[g + 1] >= sig[g];
        if left_ok && right_ok {
            out.push(g);
        }
    }
    out
}

/// Each zero crossing of an eigenvalue makes `σ_min(θ)` V-shaped, so raw
/// grid depths mostly reflect how close a grid point happens to fall to the
/// crossing. Minima are therefore refined before the relative threshold is
/// applied. The floor `1e-9·σ_max(θ=0)` keeps crossings refined to round-off
/// from being compared against each other's round-off.
fn search_theta(ctx: &Context, theta_max: f64) -> Result<ThetaSearch> {
    let table = ctx.raw_table()?;
    let lam2 = ctx.scale * ctx.scale;
    let grid = theta_grid(theta_max * lam2, ctx.cfg.grid);
    let sig: Vec<f64> = grid
        .par_iter()
        .map(|&t| sigma_at(&table, ctx, t))
        .collect::<Result<_>>()?;
    let w0 = build_corrections(&NoiseModel::noiseless(), 2 * ctx.cfg.n)?;
    let scale = symmetric_min_singular(&table.assemble(ctx.cfg.kind.moment_kind(), ctx.n_outputs(), &w0)?)?.sigma_max();

    let refined: Vec<(f64, f64)> = grid_minima(&sig)
        .into_par_iter()
        .map(|g| {
            let lo = grid[g.saturating_sub(1)];
            let hi = grid[(g + 1).min(grid.len() - 1)];
            if hi > lo {
                let (t, s) = golden_section(|t| sigma_at(&table, ctx, t), lo, hi, 1e-10 * (hi - lo))?;
                if s < sig[g] {
                    return Ok((t, s));
                }
            }
            Ok((grid[g], sig[g]))
        })
        .collect::<Result<_>>()?;
    let global = refined.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let threshold = ctx.cfg.theta_threshold_factor * global + 1e-9 * scale;
    let minima: Vec<RefinedMinimum> = refined
        .iter()
        .map(|&(t, s)| RefinedMinimum {
            theta: t / lam2,
            sigma_min: s,
            sub_threshold: s <= threshold,
        })
        .collect();
    let (theta, best, fallback) = match refined.iter().find(|m| m.1 <= threshold) {
        Some(&(t, s)) => (t, s, false),
        None => {
            warn!("no refined θ minimum below threshold {threshold:.3e}; using the global minimizer");
            let &(t, s) = refined
                .iter()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("a nonempty grid has a minimum");
            (t, s, true)
        }
    };
    debug!("θ search: {} refined minima, θ̂ {theta:.6e}, σ_min {best:.3e}", minima.len());
    let curve = grid
        .iter()
        .zip(&sig)
        .map(|(&t, &s)| CurvePoint {
            theta: t / lam2,
            sigma_min: s,
        })
        .collect();
    Ok(ThetaSearch {
        theta_hat: theta / lam2,
        sigma_min: best,
        threshold,
        fallback,
        minima,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpcaResult {
    /// Forms in extraction order, leading coefficient −1 where possible.
    pub forms: Vec<LinearForm>,
    pub residuals: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Recovers `n` hyperplane normals from the decoupling polynomial by
/// repeated differentiation at the candidate nearest its zero set, then
/// least-squares deflation.
pub fn gpca_extract(c_hat: &HomoPoly, regressors: &[Vec<f64>], n: usize, tol_grad: f64) -> Result<GpcaResult> {
    if regressors.is_empty() {
        return Err(Error::InvalidArgument("no regressors for hyperplane extraction".into()));
    }
    if c_hat.degree() != n {
        return Err(Error::InvalidArgument(format!(
            "polynomial degree {} does not match {n} modes",
            c_hat.degree()
        )));
    }
    for r in regressors {
        if r.len() != c_hat.dims() {
            return Err(Error::DimensionMismatch {
                expected: c_hat.dims(),
                got: r.len(),
            });
        }
    }
    let mut p = c_hat.clone();
    let mut forms = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n.saturating_sub(1));
    let mut warnings = Vec::new();
    for i in (1..=n).rev() {
        let grad = p.gradient()?;
        let scored: Vec<Option<(f64, Vec<f64>)>> = regressors
            .par_iter()
            .map(|r| {
                let powers = power_table(r, i);
                let g: Vec<f64> = grad.iter().map(|d| d.eval_with_powers(&powers)).collect();
                let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(gn > tol_grad) {
                    return None;
                }
                Some((p.eval_with_powers(&powers).abs() / gn, g))
            })
            .collect();
        let mut best: Option<(f64, &Vec<f64>)> = None;
        for (score, g) in scored.iter().flatten() {
            if best.is_none_or(|(b, _)| *score < b) {
                best = Some((*score, g));
            }
        }
        let Some((_, g)) = best else {
            return Err(Error::DegenerateRegressors { tol: tol_grad });
        };
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let t = LinearForm(g.iter().map(|v| v / gn).collect());
        if i > 1 {
            let (q, res) = p.divide_by_linear(&t)?;
            if res > 0.5 * p.norm() {
                warnings.push(format!("deflation at degree {i} left residual {res:.3e} (‖p‖ = {:.3e})", p.norm()));
            }
            residuals.push(res);
            p = q;
        }
        forms.push(t.model_normalized().unwrap_or(t));
    }
    Ok(GpcaResult {
        forms,
        residuals,
        warnings,
    })
}

/// `argmin_l |t_l^T r|` per regressor, 1-based, ties to the lowest index.
pub fn assign_modes(regressors: &[Vec<f64>], forms: &[LinearForm]) -> Vec<usize> {
    regressors.iter().map(|r| assign_one(r, forms)).collect()
}

#[inline]
fn assign_one(r: &[f64], forms: &[LinearForm]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (l, t) in forms.iter().enumerate() {
        let v = t.apply(r).abs();
        if v < best.0 {
            best = (v, l);
        }
    }
    best.1 + 1
}

/// Ordinary least squares of `y_k` on the remaining regressor entries for
/// each label; modes with a singular design keep their input form.
fn refit(ctx: &Context, labels: &[usize], forms: &[LinearForm]) -> Vec<LinearForm> {
    let s = ctx.dims();
    let n = forms.len();
    let mut gram = vec![DMatrix::<f64>::zeros(s - 1, s - 1); n];
    let mut rhs = vec![DVector::<f64>::zeros(s - 1); n];
    let mut buf = vec![0.0; s];
    for (i, row) in (ctx.start..ctx.data.rows()).enumerate() {
        ctx.window(row, &mut buf);
        let l = labels[i] - 1;
        let phi = DVector::from_column_slice(&buf[1..]);
        gram[l] += &phi * phi.transpose();
        rhs[l] += &phi * buf[0];
    }
    forms
        .iter()
        .enumerate()
        .map(|(l, t)| match gram[l].clone().cholesky() {
            Some(ch) => {
                let theta = ch.solve(&rhs[l]);
                let mut c = Vec::with_capacity(s);
                c.push(-1.0);
                c.extend(theta.iter());
                LinearForm(c)
            }
            None => {
                warn!("mode {} has a singular refit design; keeping its extracted form", l + 1);
                t.clone()
            }
        })
        .collect()
}

fn to_model(forms: &[LinearForm], cfg: &IdentifyConfig, provenance: Provenance) -> Result<SwitchedModel> {
    let modes = forms
        .iter()
        .map(|t| SubModel::from_form(t, cfg.n_a, cfg.n_b))
        .collect::<Result<Vec<_>>>()?;
    SwitchedModel::new(cfg.n_a, cfg.n_b, modes, provenance)
}

fn evaluate(data: &Dataset, cfg: &IdentifyConfig, report: &IdentifyReport) -> Result<Option<EvalSummary>> {
    let Some(truth) = data.meta.model.as_ref() else {
        return Ok(None);
    };
    if truth.n_modes() != cfg.n || truth.n_a != cfg.n_a || truth.n_b != cfg.n_b {
        return Ok(None);
    }
    let c_true = truth.decoupling_poly()?;
    let b = beta(&c_true, &report.c_hat_poly()?)?;
    let Ok(m) = match_modes(truth, &report.model) else {
        return Ok(None);
    };
    let accuracy = match data.window_modes(cfg.n_a, cfg.n_b) {
        Some(t) if t.len() == report.labels.len() => Some(mode_accuracy(t, &report.labels, &m.permutation)?),
        _ => None,
    };
    let theta_error = match (report.theta_hat(), data.meta.theta_true) {
        (Some(h), Some(t)) => Some(h - t),
        _ => None,
    };
    Ok(Some(EvalSummary {
        beta: b,
        permutation: m.permutation,
        mode_errors: m.errors,
        max_coef_error: m.max_coef_error,
        mode_accuracy: accuracy,
        gamma: gamma(data).ok(),
        theta_error,
    }))
}

fn run(data: &Dataset, cfg: &IdentifyConfig) -> Result<IdentifyReport> {
    let started = Instant::now();
    let ctx = Context::new(data, cfg)?;
    let n_windows = ctx.n_windows();
    if n_windows < ctx.index.len() {
        warn!("{n_windows} windows for a {0}×{0} moment matrix", ctx.index.len());
    }
    let mut warnings = Vec::new();

    let (svd, theta): (SvdResult, Option<ThetaSearch>) = match &cfg.noise {
        NoiseSetting::Known { model } => {
            let m = ctx.moment_matrix(&model.scaled(ctx.scale))?;
            (min_singular(&m)?, None)
        }
        NoiseSetting::Unknown { theta_max, .. } => {
            let search = search_theta(&ctx, *theta_max)?;
            if search.fallback {
                warnings.push("θ search fell back to the global grid minimizer".into());
            }
            let model = NoiseModel::gaussian(search.theta_hat * ctx.scale * ctx.scale)?;
            let m = ctx.moment_matrix(&model)?;
            (min_singular(&m)?, Some(search))
        }
    };
    let gap_threshold = cfg.effective_gap_threshold();
    let gap_ok = svd.gap_ratio >= gap_threshold;
    if !gap_ok {
        let msg = format!(
            "gap ratio {:.3e} below {gap_threshold:.3e}: data inconsistent with (n, n_a, n_b) = ({}, {}, {})",
            svd.gap_ratio, cfg.n, cfg.n_a, cfg.n_b
        );
        warn!("{msg}");
        warnings.push(msg);
    }

    let normalized = HomoPoly::new(Arc::clone(&ctx.index), svd.v_min.clone())?.normalized();
    let candidates = ctx.candidates();
    let gpca = gpca_extract(&normalized.poly, &candidates, cfg.n, cfg.tol_grad)?;
    warnings.extend(gpca.warnings.iter().cloned());

    let labels: Vec<usize> = {
        let mut buf = vec![0.0; ctx.dims()];
        (ctx.start..data.rows())
            .map(|row| {
                ctx.window(row, &mut buf);
                assign_one(&buf, &gpca.forms)
            })
            .collect()
    };
    let refined = if cfg.refine {
        Some(to_model(&refit(&ctx, &labels, &gpca.forms), cfg, Provenance::Refined)?)
    } else {
        None
    };

    let mut report = IdentifyReport {
        kind: cfg.kind,
        model: to_model(&gpca.forms, cfg, Provenance::Identified)?,
        refined,
        c_hat: normalized.poly.coeffs().to_vec(),
        c_hat_degenerate: normalized.degenerate_leading,
        singular_values: svd.singular_values,
        gap_ratio: svd.gap_ratio,
        gap_threshold,
        gap_ok,
        theta,
        labels,
        division_residuals: gpca.residuals,
        warnings,
        n_windows,
        scale: ctx.scale,
        eval: None,
        elapsed_secs: 0.0,
    };
    report.eval = evaluate(data, cfg, &report)?;
    report.elapsed_secs = started.elapsed().as_secs_f64();
    info!(
        "identified {} modes from {n_windows} windows in {:.2}s (gap ratio {:.3e})",
        cfg.n, report.elapsed_secs, report.gap_ratio
    );
    Ok(report)
}

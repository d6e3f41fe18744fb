//! Evaluation metrics and the covariance-decay diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SwitchedModel;
use crate::veronese::HomoPoly;

/// Summary attached to an identification report when ground truth is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// `‖c − ĉ‖ / ‖c‖` after normalization.
    pub beta: f64,
    /// `permutation[i]` is the estimated mode matched to true mode `i`.
    pub permutation: Vec<usize>,
    /// Euclidean `(a, b)` error per true mode.
    pub mode_errors: Vec<f64>,
    /// Largest absolute error of any single coefficient after matching.
    pub max_coef_error: f64,
    pub mode_accuracy: Option<f64>,
    pub gamma: Option<f64>,
    pub theta_error: Option<f64>,
}

/// Normalized coefficient error.
///
/// Both vectors are first brought to the leading-coefficient convention.
/// If either is flagged degenerate, both are compared as unit vectors with
/// the better of the two signs.
pub fn beta(c_true: &HomoPoly, c_hat: &HomoPoly) -> Result<f64> {
    if c_true.index() != c_hat.index() {
        return Err(Error::Mismatch("coefficient vectors use different indices".into()));
    }
    if c_true.norm() == 0.0 {
        return Err(Error::InvalidArgument("true coefficient vector is zero".into()));
    }
    let t = c_true.normalized();
    let h = c_hat.normalized();
    if !t.degenerate_leading && !h.degenerate_leading {
        let diff: f64 = t
            .poly
            .coeffs()
            .iter()
            .zip(h.poly.coeffs())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        return Ok(diff.sqrt() / t.poly.norm());
    }
    let (tn, hn) = (t.poly.norm(), h.poly.norm().max(f64::MIN_POSITIVE));
    let (mut minus, mut plus) = (0.0, 0.0);
    for (a, b) in t.poly.coeffs().iter().zip(h.poly.coeffs()) {
        let (a, b) = (a / tn, b / hn);
        minus += (a - b).powi(2);
        plus += (a + b).powi(2);
    }
    Ok(minus.min(plus).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMatch {
    pub permutation: Vec<usize>,
    pub errors: Vec<f64>,
    pub max_coef_error: f64,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if current.len() == used.len() {
            out.push(current.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                current.push(i);
                rec(current, used, out);
                current.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Matches estimated modes to true modes by exhaustive search over
/// permutations, minimizing the summed Euclidean `(a, b)` error.
pub fn match_modes(truth: &SwitchedModel, est: &SwitchedModel) -> Result<ModeMatch> {
    let n = truth.n_modes();
    if est.n_modes() != n {
        return Err(Error::Mismatch(format!("{n} true modes vs {} estimated", est.n_modes())));
    }
    if n > 6 {
        return Err(Error::TooManyModes(n));
    }
    if truth.n_a != est.n_a || truth.n_b != est.n_b {
        return Err(Error::Mismatch("model orders differ".into()));
    }
    let tp: Vec<Vec<f64>> = truth.modes.iter().map(|m| m.params()).collect();
    let ep: Vec<Vec<f64>> = est.modes.iter().map(|m| m.params()).collect();
    let dist = |i: usize, j: usize| -> f64 {
        tp[i].iter().zip(&ep[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(n) {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| dist(i, j)).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    let (_, permutation) = best.expect("at least one permutation");
    let errors: Vec<f64> = permutation.iter().enumerate().map(|(i, &j)| dist(i, j)).collect();
    let max_coef_error = permutation
        .iter()
        .enumerate()
        .flat_map(|(i, &j)| tp[i].iter().zip(&ep[j]).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    Ok(ModeMatch {
        permutation,
        errors,
        max_coef_error,
    })
}

/// Fraction of samples whose estimated label maps to the true label under
/// `permutation` (true mode `i` ↔ estimated mode `permutation[i]`, 0-based;
/// labels are 1-based).
pub fn mode_accuracy(truth: &[usize], est: &[usize], permutation: &[usize]) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: est.len(),
        });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let mut inverse = vec![0usize; permutation.len()];
    for (i, &j) in permutation.iter().enumerate() {
        inverse[j] = i;
    }
    let hits = truth
        .iter()
        .zip(est)
        .filter(|(&t, &e)| e >= 1 && e <= inverse.len() && inverse[e - 1] + 1 == t)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Empirical lag covariances and their geometric fit `ρ_l ≈ C·a^l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocovDecay {
    /// `ρ̂_0` (the variance).
    pub variance: f64,
    /// `ρ̂_l` for `l = 1..=L`.
    pub autocov: Vec<f64>,
    /// `4·ρ̂_0/√N`; lags below it are indistinguishable from zero.
    pub band: f64,
    /// Number of leading lags above the band used in the fit.
    pub fitted_lags: usize,
    pub scale: f64,
    /// Fitted geometric rate `a`; `0` when no lag rises above the band.
    pub rate: f64,
}

impl AutocovDecay {
    /// Observable proxy for summable covariance decay. This checks a single
    /// realization only; it is not a proof of the ensemble condition.
    pub fn looks_summable(&self) -> bool {
        self.rate < 1.0
    }
}

/// Lag-`l` autocovariances of `z` and a least-squares fit of
/// `log|ρ̂_l| = log C + l·log a` over lag 0 and the leading run of lags
/// above the noise band.
pub fn autocov_decay(z: &[f64], max_lag: usize) -> Result<AutocovDecay> {
    let n = z.len();
    if max_lag == 0 || max_lag >= n {
        return Err(Error::InvalidArgument(format!("max lag must be in 1..{n}")));
    }
    let mean = z.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = z.iter().map(|v| v - mean).collect();
    let cov = |l: usize| -> f64 {
        centered[..n - l]
            .iter()
            .zip(&centered[l..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let variance = cov(0);
    if !(variance > 0.0) || variance <= 1e-300 {
        return Err(Error::ConstantSeries);
    }
    let autocov: Vec<f64> = (1..=max_lag).map(cov).collect();
    let band = 4.0 * variance / (n as f64).sqrt();
    let fitted_lags = autocov.iter().take_while(|v| v.abs() > band).count();
    let (scale, rate) = if fitted_lags == 0 {
        (variance, 0.0)
    } else {
        let pts: Vec<(f64, f64)> = std::iter::once((0.0, variance.ln()))
            .chain(autocov[..fitted_lags].iter().enumerate().map(|(i, v)| ((i + 1) as f64, v.abs().ln())))
            .collect();
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        ((my - slope * mx).exp(), slope.exp())
    };
    Ok(AutocovDecay {
        variance,
        autocov,
        band,
        fitted_lags,
        scale,
        rate,
    })
}

//! Noise moment models and bias-correction polynomials.
//!
//! For noise `η` with moments `m_d`, the correction polynomial `W_h`
//! satisfies `E[W_h(x + η)] = x^h` for every fixed `x`. It follows from
//! expanding `(y − η)^h` and replacing each `x^{h−d}` recursively:
//!
//! ```text
//! W_0(y) = 1
//! W_h(y) = y^h − Σ_{d=1..h} C(h, d) · m_d · W_{h−d}(y)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::veronese::binomial;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    GaussianZeroMean,
    UserMoments,
}

/// Parametric noise law, serialized as `{"family":"gaussian","theta":..}`
/// or `{"family":"moments","m":[1, 0, ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseModel {
    /// Zero-mean normal law with variance `theta`.
    Gaussian { theta: f64 },
    /// Raw moment table `m[d] = E[η^d]`, `m[0] = 1`.
    Moments { m: Vec<f64> },
}

impl NoiseModel {
    pub fn gaussian(theta: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Gaussian variance must be finite and >= 0, got {theta}"
            )));
        }
        Ok(NoiseModel::Gaussian { theta })
    }

    pub fn from_moments(m: Vec<f64>) -> Result<Self> {
        let model = NoiseModel::Moments { m };
        model.validate(0)?;
        Ok(model)
    }

    pub fn noiseless() -> Self {
        NoiseModel::Gaussian { theta: 0.0 }
    }

    pub fn family(&self) -> NoiseFamily {
        match self {
            NoiseModel::Gaussian { .. } => NoiseFamily::GaussianZeroMean,
            NoiseModel::Moments { .. } => NoiseFamily::UserMoments,
        }
    }

    /// Parameter vector; empty for a raw moment table.
    pub fn theta(&self) -> Vec<f64> {
        match self {
            NoiseModel::Gaussian { theta } => vec![*theta],
            NoiseModel::Moments { .. } => Vec::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            NoiseModel::Gaussian { theta } => *theta == 0.0,
            NoiseModel::Moments { m } => m.iter().skip(1).all(|&v| v == 0.0),
        }
    }

    /// `E[η^d]`.
    pub fn moment(&self, d: usize) -> Result<f64> {
        match self {
            NoiseModel::Gaussian { theta } => Ok(gaussian_moment(*theta, d)),
            NoiseModel::Moments { m } => {
                let v = *m.get(d).ok_or(Error::UnboundedMoment(d))?;
                if !v.is_finite() {
                    return Err(Error::UnboundedMoment(d));
                }
                Ok(v)
            }
        }
    }

    /// Moments `m_0..=m_max`.
    pub fn moments(&self, max: usize) -> Result<Vec<f64>> {
        (0..=max).map(|d| self.moment(d)).collect()
    }

    /// Checks that moments up to `order` exist and are finite, and `m_0 = 1`.
    pub fn validate(&self, order: usize) -> Result<()> {
        match self {
            NoiseModel::Gaussian { theta } => {
                if !(*theta >= 0.0 && theta.is_finite()) {
                    return Err(Error::InvalidArgument(format!("invalid variance {theta}")));
                }
            }
            NoiseModel::Moments { m } => {
                if m.first() != Some(&1.0) {
                    return Err(Error::InvalidArgument("moment table must start with m_0 = 1".into()));
                }
                for (d, v) in m.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::UnboundedMoment(d));
                    }
                }
            }
        }
        for d in 0..=order {
            self.moment(d)?;
        }
        Ok(())
    }

    /// Law of `λη`: moments scale as `λ^d m_d`.
    pub fn scaled(&self, lambda: f64) -> NoiseModel {
        match self {
            NoiseModel::Gaussian { theta } => NoiseModel::Gaussian {
                theta: theta * lambda * lambda,
            },
            NoiseModel::Moments { m } => NoiseModel::Moments {
                m: m.iter()
                    .enumerate()
                    .map(|(d, v)| v * lambda.powi(d as i32))
                    .collect(),
            },
        }
    }
}

/// `(d-1)!!` for even `d`, as a float.
fn odd_double_factorial(d: usize) -> f64 {
    let mut acc = 1.0;
    let mut k = d.saturating_sub(1);
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

/// Raw moment of `N(0, θ)`: zero for odd orders, `θ^{d/2}(d−1)!!` otherwise.
pub fn gaussian_moment(theta: f64, d: usize) -> f64 {
    if d == 0 {
        return 1.0;
    }
    if d % 2 == 1 {
        return 0.0;
    }
    theta.powi((d / 2) as i32) * odd_double_factorial(d)
}

/// Correction polynomials `W_0..=W_{h_max}`; `polys[h][j]` is the
/// coefficient of `y^j` in `W_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionPolySet {
    polys: Vec<Vec<f64>>,
}

impl CorrectionPolySet {
    pub fn h_max(&self) -> usize {
        self.polys.len() - 1
    }

    pub fn poly(&self, h: usize) -> &[f64] {
        &self.polys[h]
    }

    pub fn eval(&self, h: usize, y: f64) -> f64 {
        self.polys[h].iter().rev().fold(0.0, |acc, c| acc * y + c)
    }

    /// Writes `W_h(y)` for `h = 0..=h_max` into `out`.
    pub fn eval_all_into(&self, y: f64, out: &mut [f64]) {
        let mut powers = [0.0f64; 64];
        let hmax = self.h_max();
        if hmax < powers.len() {
            let mut acc = 1.0;
            for p in powers.iter_mut().take(hmax + 1) {
                *p = acc;
                acc *= y;
            }
            for (h, poly) in self.polys.iter().enumerate() {
                out[h] = poly.iter().zip(&powers).map(|(c, p)| c * p).sum();
            }
        } else {
            for (h, o) in out.iter_mut().enumerate().take(hmax + 1) {
                *o = self.eval(h, y);
            }
        }
    }

    /// The identity set `W_h(y) = y^h`.
    pub fn identity(h_max: usize) -> Self {
        let polys = (0..=h_max)
            .map(|h| {
                let mut p = vec![0.0; h + 1];
                p[h] = 1.0;
                p
            })
            .collect();
        Self { polys }
    }
}

/// Builds `W_0..=W_{h_max}` from the model's moments.
pub fn build_corrections(model: &NoiseModel, h_max: usize) -> Result<CorrectionPolySet> {
    let m = model.moments(h_max)?;
    Ok(corrections_from_moments(&m, h_max))
}

pub(crate) fn corrections_from_moments(m: &[f64], h_max: usize) -> CorrectionPolySet {
    let mut polys: Vec<Vec<f64>> = Vec::with_capacity(h_max + 1);
    for h in 0..=h_max {
        let mut w = vec![0.0; h + 1];
        w[h] = 1.0;
        for d in 1..=h {
            if m[d] == 0.0 {
                continue;
            }
            let k = binomial(h, d).expect("small binomial") as f64 * m[d];
            for (j, c) in polys[h - d].iter().enumerate() {
                w[j] -= k * c;
            }
        }
        polys.push(w);
    }
    CorrectionPolySet { polys }
}

/// Bias-corrected monomial under measurement noise.
///
/// `window` is the measured regressor `[y_k, .., y_{k−n_a}, u_{k−1}, .., u_{k−n_b}]`
/// with the first `n_outputs` entries noisy. Each output lag is corrected
/// independently, which is unbiased because measurement noise is independent
/// across samples.
pub fn corrected_monomial_sar(
    alpha: &[u16],
    window: &[f64],
    n_outputs: usize,
    w: &CorrectionPolySet,
) -> Result<f64> {
    check_window(alpha, window, n_outputs, w)?;
    let mut acc = 1.0;
    for (l, (&e, &v)) in alpha.iter().zip(window).enumerate() {
        acc *= if l < n_outputs {
            w.eval(e as usize, v)
        } else {
            v.powi(e as i32)
        };
    }
    Ok(acc)
}

/// Bias-corrected monomial under process noise: only the current output
/// `y_k` carries the unknown `ε_k`, so only its power is corrected.
pub fn corrected_monomial_sarx(
    alpha: &[u16],
    window: &[f64],
    w: &CorrectionPolySet,
) -> Result<f64> {
    check_window(alpha, window, 1, w)?;
    let mut acc = w.eval(alpha[0] as usize, window[0]);
    for (&e, &v) in alpha.iter().zip(window).skip(1) {
        acc *= v.powi(e as i32);
    }
    Ok(acc)
}

fn check_window(alpha: &[u16], window: &[f64], n_outputs: usize, w: &CorrectionPolySet) -> Result<()> {
    if window.len() < alpha.len() {
        return Err(Error::IncompleteWindow(window.len()));
    }
    if window.len() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.len(),
            got: window.len(),
        });
    }
    if n_outputs > alpha.len() {
        return Err(Error::InvalidArgument("more outputs than regressor entries".into()));
    }
    for &e in &alpha[..n_outputs] {
        if e as usize > w.h_max() {
            return Err(Error::CorrectionOrder {
                order: e as usize,
                max: w.h_max(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    // Closed form for N(0, θ): W_h is the probabilists' Hermite polynomial
    // scaled by θ, W_h(y) = Σ_j (-1)^j h! / (j! (h-2j)! 2^j) θ^j y^{h-2j}.
    fn hermite_coeffs(h: usize, theta: f64) -> Vec<f64> {
        let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
        let mut c = vec![0.0; h + 1];
        for j in 0..=h / 2 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            c[h - 2 * j] =
                sign * fact(h) / (fact(j) * fact(h - 2 * j) * 2f64.powi(j as i32)) * theta.powi(j as i32);
        }
        c
    }

    fn hermite_theta_derivative(h: usize, theta: f64) -> Vec<f64> {
        let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
        let mut c = vec![0.0; h + 1];
        for j in 1..=h / 2 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            c[h - 2 * j] = sign * fact(h) / (fact(j) * fact(h - 2 * j) * 2f64.powi(j as i32))
                * j as f64
                * theta.powi(j as i32 - 1);
        }
        c
    }

    #[test]
    fn gaussian_moment_values() {
        assert_eq!(gaussian_moment(1.0, 4), 3.0);
        assert_eq!(gaussian_moment(3.7, 1), 0.0);
        assert_eq!(gaussian_moment(2.0, 6), 120.0);
        assert_eq!(gaussian_moment(0.5, 0), 1.0);
        assert_eq!(gaussian_moment(2.0, 2), 2.0);
    }

    #[test]
    fn gaussian_sixth_moment_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dist = Normal::new(0.0, 2f64.sqrt()).unwrap();
        let n = 10_000_000;
        let mean = (0..n).map(|_| dist.sample(&mut rng).powi(6)).sum::<f64>() / n as f64;
        assert!((mean - 120.0).abs() < 0.02 * 120.0, "mean {mean}");
    }

    #[test]
    fn low_order_corrections() {
        let theta = 0.7;
        let m2 = theta;
        let m4 = 3.0 * theta * theta;
        let w = build_corrections(&NoiseModel::gaussian(theta).unwrap(), 4).unwrap();
        assert_eq!(w.poly(0), &[1.0]);
        assert_eq!(w.poly(1), &[0.0, 1.0]);
        assert_eq!(w.poly(2), &[-m2, 0.0, 1.0]);
        assert_eq!(w.poly(3), &[0.0, -3.0 * m2, 0.0, 1.0]);
        // y⁴ − 6 m₂ (y² − m₂) − m₄
        let y: f64 = 1.3;
        let expected = y.powi(4) - 6.0 * m2 * (y * y - m2) - m4;
        assert!((w.eval(4, y) - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_is_identity() {
        let w = build_corrections(&NoiseModel::noiseless(), 8).unwrap();
        assert_eq!(w, CorrectionPolySet::identity(8));
        let w = build_corrections(&NoiseModel::from_moments(vec![1.0, 0.0, 0.0, 0.0]).unwrap(), 3).unwrap();
        assert_eq!(w, CorrectionPolySet::identity(3));
    }

    #[test]
    fn gaussian_corrections_match_hermite_closed_form() {
        for &theta in &[0.1, 0.5, 2.0] {
            let w = build_corrections(&NoiseModel::gaussian(theta).unwrap(), 8).unwrap();
            for h in 0..=8 {
                let want = hermite_coeffs(h, theta);
                for (a, b) in w.poly(h).iter().zip(&want) {
                    assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "h={h}");
                }
                assert_eq!(*w.poly(h).last().unwrap(), 1.0);
                // parity of h
                for (j, c) in w.poly(h).iter().enumerate() {
                    if (h + j) % 2 == 1 {
                        assert_eq!(*c, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn theta_derivative_matches_finite_differences() {
        let theta = 0.8;
        let d = 1e-6;
        let plus = build_corrections(&NoiseModel::gaussian(theta + d).unwrap(), 8).unwrap();
        let minus = build_corrections(&NoiseModel::gaussian(theta - d).unwrap(), 8).unwrap();
        for h in 0..=8 {
            let analytic = hermite_theta_derivative(h, theta);
            for (j, want) in analytic.iter().enumerate() {
                let fd = (plus.poly(h)[j] - minus.poly(h)[j]) / (2.0 * d);
                assert!((fd - want).abs() < 1e-6 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn asymmetric_moments_use_odd_terms() {
        // Shifted noise: η = 0.5 + ζ with ζ ~ N(0, 1) has m1 = 0.5, m2 = 1.25, m3 = 1.625.
        let m = vec![1.0, 0.5, 1.25, 1.625];
        let w = build_corrections(&NoiseModel::from_moments(m.clone()).unwrap(), 3).unwrap();
        // E[W_1(x + η)] = x + m1 − m1
        assert_eq!(w.poly(1), &[-0.5, 1.0]);
        // W_2 = y² − 2 m1 W_1 − m2 = y² − y + (2·0.25 − 1.25)
        assert_eq!(w.poly(2), &[0.5 * 0.5 * 2.0 - 1.25, -1.0, 1.0]);
    }

    #[test]
    fn unbounded_moments_rejected() {
        assert!(NoiseModel::from_moments(vec![1.0, 0.0, f64::INFINITY]).is_err());
        assert!(NoiseModel::from_moments(vec![0.5, 0.0]).is_err());
        let short = NoiseModel::from_moments(vec![1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(build_corrections(&short, 4), Err(Error::UnboundedMoment(3))));
        assert!(NoiseModel::gaussian(-1.0).is_err());
    }

    #[test]
    fn json_forms() {
        let g: NoiseModel = serde_json::from_str(r#"{"family":"gaussian","theta":0.5}"#).unwrap();
        assert_eq!(g, NoiseModel::Gaussian { theta: 0.5 });
        let m: NoiseModel = serde_json::from_str(r#"{"family":"moments","m":[1,0,2]}"#).unwrap();
        assert_eq!(m.moment(2).unwrap(), 2.0);
        assert!(serde_json::from_str::<NoiseModel>(r#"{"family":"gaussian","theta":1,"x":2}"#).is_err());
        let text = serde_json::to_string(&g).unwrap();
        assert_eq!(text, r#"{"family":"gaussian","theta":0.5}"#);
    }

    #[test]
    fn sar_monomial_examples() {
        let theta = 0.4;
        let w = build_corrections(&NoiseModel::gaussian(theta).unwrap(), 4).unwrap();
        let (y0, y1, u) = (1.1, -0.7, 0.9);
        let got = corrected_monomial_sar(&[2, 2, 0], &[y0, y1, u], 2, &w).unwrap();
        assert!((got - (y0 * y0 - theta) * (y1 * y1 - theta)).abs() < 1e-14);
        let got = corrected_monomial_sar(&[0, 0, 3], &[y0, y1, u], 2, &w).unwrap();
        assert_eq!(got, u * u * u);
        // (y_k³ − 3 m₂ y_k)·y_{k−1}: entry for (x_k², x_k x_{k−1})
        let got = corrected_monomial_sar(&[3, 1, 0], &[y0, y1, u], 2, &w).unwrap();
        assert!((got - (y0.powi(3) - 3.0 * theta * y0) * y1).abs() < 1e-14);
    }

    #[test]
    fn sarx_monomial_examples() {
        let theta = 0.4;
        let w = build_corrections(&NoiseModel::gaussian(theta).unwrap(), 4).unwrap();
        let (y0, y1, u) = (1.1, -0.7, 0.9);
        let got = corrected_monomial_sarx(&[2, 2, 0], &[y0, y1, u], &w).unwrap();
        assert!((got - (y0 * y0 - theta) * y1 * y1).abs() < 1e-14);
        let got = corrected_monomial_sarx(&[0, 4, 0], &[y0, y1, u], &w).unwrap();
        assert!((got - y1.powi(4)).abs() < 1e-15);
        let id = CorrectionPolySet::identity(4);
        let got = corrected_monomial_sarx(&[1, 2, 1], &[y0, y1, u], &id).unwrap();
        assert_eq!(got, y0 * y1 * y1 * u);
    }

    #[test]
    fn window_errors() {
        let w = CorrectionPolySet::identity(2);
        assert!(matches!(
            corrected_monomial_sar(&[1, 1, 0], &[1.0, 2.0], 2, &w),
            Err(Error::IncompleteWindow(_))
        ));
        assert!(matches!(
            corrected_monomial_sar(&[3, 1, 0], &[1.0, 2.0, 3.0], 2, &w),
            Err(Error::CorrectionOrder { .. })
        ));
    }

    #[test]
    fn sar_monomial_is_unbiased_monte_carlo() {
        let theta = 0.5;
        let w = build_corrections(&NoiseModel::gaussian(theta).unwrap(), 4).unwrap();
        let dist = Normal::new(0.0, theta.sqrt()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let clean = [0.9, -1.2, 0.6];
        let alpha = [2u16, 1, 1];
        let target = 0.9f64.powi(2) * -1.2 * 0.6;
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let window = [clean[0] + dist.sample(&mut rng), clean[1] + dist.sample(&mut rng), clean[2]];
            sum += corrected_monomial_sar(&alpha, &window, 2, &w).unwrap();
        }
        let mean = sum / n as f64;
        assert!((mean - target).abs() < 0.005 * target.abs() + 2e-3, "mean {mean} target {target}");
    }

    #[test]
    fn process_noise_correction_is_unbiased() {
        let theta = 1.0;
        let w = build_corrections(&NoiseModel::gaussian(theta).unwrap(), 4).unwrap();
        let dist = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (v, e) = (0.8f64, -1.4f64);
        for h in 1..=4usize {
            let n = 1_000_000;
            let samples: Vec<f64> = (0..n).map(|_| w.eval(h, v + dist.sample(&mut rng)) * e).collect();
            let mean = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - v.powi(h as i32) * e).abs() < 4.0 * se, "h={h}");
        }
    }
}

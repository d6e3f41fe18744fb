//! Veronese embedding and dense homogeneous polynomials.
//!
//! A homogeneous polynomial of degree `n` in `s` variables is stored as its
//! coefficient vector against a [`VeroneseIndex`], which fixes the monomial
//! order once for the whole crate: exponent vectors in strictly decreasing
//! lexicographic order, first coordinate most significant. For `s = 3`,
//! `n = 2` this gives `[r1², r1 r2, r1 r3, r2², r2 r3, r3²]`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binomial coefficient with overflow detection.
pub fn binomial(top: usize, k: usize) -> Option<usize> {
    if k > top {
        return Some(0);
    }
    let k = k.min(top - k);
    let mut acc: usize = 1;
    for i in 0..k {
        // acc * (top - i) is always divisible by (i + 1)
        acc = acc.checked_mul(top - i)? / (i + 1);
    }
    Some(acc)
}

/// Catalog of degree-`n` exponent vectors in `s` variables.
#[derive(Debug, Clone)]
pub struct VeroneseIndex {
    degree: usize,
    dims: usize,
    exponents: Vec<Vec<u16>>,
    lookup: HashMap<Vec<u16>, usize>,
}

impl PartialEq for VeroneseIndex {
    fn eq(&self, other: &Self) -> bool {
        self.degree == other.degree && self.dims == other.dims
    }
}

impl Eq for VeroneseIndex {}

impl VeroneseIndex {
    /// Builds the index for degree `n >= 1` and `s >= 2` variables.
    pub fn new(degree: usize, dims: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument("Veronese degree must be >= 1".into()));
        }
        if dims < 2 {
            return Err(Error::InvalidArgument("Veronese dims must be >= 2".into()));
        }
        Self::with_degree(degree, dims)
    }

    /// Like [`VeroneseIndex::new`] but also admits degree 0 and a single
    /// variable; used for gradients and quotients of low-degree polynomials.
    pub(crate) fn with_degree(degree: usize, dims: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidArgument("Veronese dims must be >= 1".into()));
        }
        let top = degree + dims - 1;
        let len = binomial(top, degree).ok_or(Error::Capacity { top, degree })?;
        if degree > u16::MAX as usize {
            return Err(Error::Capacity { top, degree });
        }
        let mut exponents = Vec::with_capacity(len);
        let mut current = vec![0u16; dims];
        enumerate(0, degree, &mut current, &mut exponents);
        debug_assert_eq!(exponents.len(), len);
        let lookup = exponents
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        Ok(Self {
            degree,
            dims,
            exponents,
            lookup,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Number of monomials, `C(n + s - 1, n)`.
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u16>] {
        &self.exponents
    }

    pub fn exponent(&self, i: usize) -> &[u16] {
        &self.exponents[i]
    }

    /// Position of an exponent vector, if it belongs to this index.
    pub fn position(&self, alpha: &[u16]) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }

    /// Evaluates every monomial at `r`.
    pub fn embed(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.dims, r.len())?;
        let powers = power_table(r, self.degree);
        Ok(self
            .exponents
            .iter()
            .map(|alpha| monomial(&powers, alpha))
            .collect())
    }
}

fn enumerate(pos: usize, remaining: usize, current: &mut Vec<u16>, out: &mut Vec<Vec<u16>>) {
    let last = current.len() - 1;
    if pos == last {
        current[pos] = remaining as u16;
        out.push(current.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e as u16;
        enumerate(pos + 1, remaining - e, current, out);
    }
    current[pos] = 0;
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `powers[i][e] = r_i^e` for `e <= max_power`.
pub(crate) fn power_table(r: &[f64], max_power: usize) -> Vec<Vec<f64>> {
    r.iter()
        .map(|&v| {
            let mut row = Vec::with_capacity(max_power + 1);
            let mut acc = 1.0;
            for _ in 0..=max_power {
                row.push(acc);
                acc *= v;
            }
            row
        })
        .collect()
}

#[inline]
pub(crate) fn monomial(powers: &[Vec<f64>], alpha: &[u16]) -> f64 {
    alpha
        .iter()
        .zip(powers)
        .map(|(&e, row)| row[e as usize])
        .product()
}

/// Builds a Veronese index (`build_index`).
pub fn build_index(degree: usize, dims: usize) -> Result<VeroneseIndex> {
    VeroneseIndex::new(degree, dims)
}

/// Evaluates all degree-`n` monomials of `r` in index order.
pub fn embed(r: &[f64], index: &VeroneseIndex) -> Result<Vec<f64>> {
    index.embed(r)
}

/// A linear form `t^T r`. Model forms carry `t[0] = -1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinearForm(pub Vec<f64>);

impl LinearForm {
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("linear form has non-finite entries".into()));
        }
        Ok(Self(t))
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn apply(&self, r: &[f64]) -> f64 {
        self.0.iter().zip(r).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rescales so the first entry is exactly -1. Returns `None` when the
    /// first entry is numerically zero.
    pub fn model_normalized(&self) -> Option<LinearForm> {
        let lead = self.0[0];
        if lead.abs() <= 1e-12 * self.norm().max(f64::MIN_POSITIVE) {
            return None;
        }
        let mut t: Vec<f64> = self.0.iter().map(|v| -v / lead).collect();
        t[0] = -1.0;
        Some(LinearForm(t))
    }
}

/// Dense homogeneous polynomial `c^T ν_n(r)`.
#[derive(Debug, Clone)]
pub struct HomoPoly {
    index: Arc<VeroneseIndex>,
    coeffs: Vec<f64>,
}

impl PartialEq for HomoPoly {
    fn eq(&self, other: &Self) -> bool {
        *self.index == *other.index && self.coeffs == other.coeffs
    }
}

/// Result of [`HomoPoly::normalized`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub poly: HomoPoly,
    /// Set when the `r_1^n` coefficient was too small to divide by; the
    /// polynomial is then unit-norm with its first nonzero entry positive.
    pub degenerate_leading: bool,
}

impl HomoPoly {
    pub fn new(index: Arc<VeroneseIndex>, coeffs: Vec<f64>) -> Result<Self> {
        check_dims(index.len(), coeffs.len())?;
        Ok(Self { index, coeffs })
    }

    pub fn zeros(index: Arc<VeroneseIndex>) -> Self {
        let coeffs = vec![0.0; index.len()];
        Self { index, coeffs }
    }

    pub fn index(&self) -> &VeroneseIndex {
        &self.index
    }

    pub fn shared_index(&self) -> Arc<VeroneseIndex> {
        Arc::clone(&self.index)
    }

    pub fn degree(&self) -> usize {
        self.index.degree()
    }

    pub fn dims(&self) -> usize {
        self.index.dims()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn eval(&self, r: &[f64]) -> Result<f64> {
        check_dims(self.dims(), r.len())?;
        let powers = power_table(r, self.degree());
        Ok(self.eval_with_powers(&powers))
    }

    pub(crate) fn eval_with_powers(&self, powers: &[Vec<f64>]) -> f64 {
        self.index
            .exponents()
            .iter()
            .zip(&self.coeffs)
            .map(|(alpha, c)| c * monomial(powers, alpha))
            .sum()
    }

    /// Partial derivatives `∂p/∂r_i`, each of degree `n - 1`.
    pub fn gradient(&self) -> Result<Vec<HomoPoly>> {
        let n = self.degree();
        if n == 0 {
            return Err(Error::InvalidArgument("gradient of a constant".into()));
        }
        let s = self.dims();
        let lower = Arc::new(VeroneseIndex::with_degree(n - 1, s)?);
        let mut out: Vec<HomoPoly> = (0..s).map(|_| HomoPoly::zeros(Arc::clone(&lower))).collect();
        let mut beta = vec![0u16; s];
        for (alpha, &c) in self.index.exponents().iter().zip(&self.coeffs) {
            for i in 0..s {
                if alpha[i] == 0 {
                    continue;
                }
                beta.copy_from_slice(alpha);
                beta[i] -= 1;
                let pos = lower.position(&beta).expect("decremented exponent in lower index");
                out[i].coeffs[pos] += c * alpha[i] as f64;
            }
        }
        Ok(out)
    }

    /// Evaluates the gradient at `r` from a precomputed gradient set.
    pub fn eval_gradient(grad: &[HomoPoly], r: &[f64]) -> Result<Vec<f64>> {
        let Some(first) = grad.first() else {
            return Ok(Vec::new());
        };
        check_dims(first.dims(), r.len())?;
        let powers = power_table(r, first.degree());
        Ok(grad.iter().map(|g| g.eval_with_powers(&powers)).collect())
    }

    /// Product `(t^T r) · p(r)`.
    pub fn mul_linear(&self, t: &LinearForm) -> Result<HomoPoly> {
        check_dims(self.dims(), t.dims())?;
        let higher = Arc::new(VeroneseIndex::with_degree(self.degree() + 1, self.dims())?);
        let mut out = HomoPoly::zeros(Arc::clone(&higher));
        let mut beta = vec![0u16; self.dims()];
        for (alpha, &c) in self.index.exponents().iter().zip(&self.coeffs) {
            for (i, &ti) in t.coeffs().iter().enumerate() {
                if ti == 0.0 {
                    continue;
                }
                beta.copy_from_slice(alpha);
                beta[i] += 1;
                let pos = higher.position(&beta).expect("incremented exponent in higher index");
                out.coeffs[pos] += c * ti;
            }
        }
        Ok(out)
    }

    /// Least-squares quotient of `p` by the linear form `t`.
    ///
    /// Minimizes `‖p − (t^T r)·q‖₂` over coefficient vectors of degree
    /// `n − 1` polynomials `q`, via the normal equations. Returns the
    /// quotient and the residual norm; exact factors give a residual at
    /// round-off level.
    pub fn divide_by_linear(&self, t: &LinearForm) -> Result<(HomoPoly, f64)> {
        let n = self.degree();
        if n == 0 {
            return Err(Error::InvalidArgument("cannot divide a constant by a linear form".into()));
        }
        check_dims(self.dims(), t.dims())?;
        if t.norm() == 0.0 {
            return Err(Error::DegenerateDivisor);
        }
        let lower = Arc::new(VeroneseIndex::with_degree(n - 1, self.dims())?);
        // Column j holds the coefficients of (t^T r)·m_j.
        let mut a = DMatrix::<f64>::zeros(self.index.len(), lower.len());
        let mut beta = vec![0u16; self.dims()];
        for (j, alpha) in lower.exponents().iter().enumerate() {
            for (i, &ti) in t.coeffs().iter().enumerate() {
                beta.copy_from_slice(alpha);
                beta[i] += 1;
                let row = self.index.position(&beta).expect("incremented exponent");
                a[(row, j)] += ti;
            }
        }
        let p = DVector::from_column_slice(&self.coeffs);
        let normal = a.transpose() * &a;
        let rhs = a.transpose() * &p;
        let chol = normal.cholesky().ok_or(Error::DegenerateDivisor)?;
        let q = chol.solve(&rhs);
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateDivisor);
        }
        let residual = (&p - &a * &q).norm();
        Ok((HomoPoly::new(lower, q.as_slice().to_vec())?, residual))
    }

    /// Applies the sign/scale convention: `r_1^n` coefficient `+1` when its
    /// magnitude exceeds `1e-6·‖c‖`, else unit norm with the first nonzero
    /// entry positive.
    pub fn normalized(&self) -> Normalized {
        let norm = self.norm();
        let lead = self.coeffs[0];
        if norm > 0.0 && lead.abs() > 1e-6 * norm {
            let coeffs = self.coeffs.iter().map(|c| c / lead).collect();
            return Normalized {
                poly: HomoPoly {
                    index: Arc::clone(&self.index),
                    coeffs,
                },
                degenerate_leading: false,
            };
        }
        let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        let sign = self
            .coeffs
            .iter()
            .find(|c| c.abs() > 1e-12 * norm)
            .map_or(1.0, |c| c.signum());
        Normalized {
            poly: HomoPoly {
                index: Arc::clone(&self.index),
                coeffs: self.coeffs.iter().map(|c| c * scale * sign).collect(),
            },
            degenerate_leading: true,
        }
    }
}

/// Coefficient expansion of `Π t_i^T r`, without renormalization.
pub fn product_of_forms(forms: &[LinearForm]) -> Result<HomoPoly> {
    let first = forms
        .first()
        .ok_or_else(|| Error::InvalidArgument("product of zero forms".into()))?;
    let s = first.dims();
    let index = Arc::new(VeroneseIndex::with_degree(1, s)?);
    // Degree-1 index is ordered as the unit vectors e_1, e_2, ...
    let mut acc = HomoPoly::new(index, first.coeffs().to_vec())?;
    for t in &forms[1..] {
        acc = acc.mul_linear(t)?;
    }
    Ok(acc)
}

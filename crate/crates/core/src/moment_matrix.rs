//! Streaming moment matrices and minimum singular vector extraction.
//!
//! Each sample window contributes the bias-corrected outer product
//! `ν_n(r) ν_n(r)^T`: entry `(i, j)` is the corrected degree-`2n` monomial
//! with exponent `α_i + α_j`. Storage is the packed upper triangle with
//! Neumaier-compensated sums, so memory and per-sample cost depend only on
//! the number of monomials.

use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::CorrectionPolySet;
use crate::veronese::{power_table, VeroneseIndex};

/// Which regressor entries carry noise that must be corrected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentKind {
    /// Exact regressors; plain outer products.
    Noiseless,
    /// Measurement noise on every output lag.
    Sar,
    /// Process noise on the current output only.
    Sarx,
}

impl MomentKind {
    fn is_corrected(self, coord: usize, n_outputs: usize) -> bool {
        match self {
            MomentKind::Noiseless => false,
            MomentKind::Sar => coord < n_outputs,
            MomentKind::Sarx => coord == 0,
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Symmetric `ℓ×ℓ` accumulator `Σ_k M_k` with its sample count.
#[derive(Debug, Clone)]
pub struct MomentMatrix {
    index: Arc<VeroneseIndex>,
    kind: MomentKind,
    n_outputs: usize,
    upper: Vec<CompensatedSum>,
    count: u64,
    // Exponent α_i + α_j of every packed upper-triangle entry, flattened.
    pair_exponents: Vec<u16>,
    factors: Vec<f64>,
}

fn packed_len(l: usize) -> usize {
    l * (l + 1) / 2
}

impl MomentMatrix {
    /// Empty accumulator. `n_outputs` is `n_a + 1`, the number of leading
    /// regressor entries that are outputs.
    pub fn new(index: Arc<VeroneseIndex>, kind: MomentKind, n_outputs: usize) -> Result<Self> {
        if n_outputs == 0 || n_outputs > index.dims() {
            return Err(Error::InvalidArgument(format!(
                "n_outputs must be in 1..={}, got {n_outputs}",
                index.dims()
            )));
        }
        let l = index.len();
        let s = index.dims();
        let mut pair_exponents = Vec::with_capacity(packed_len(l) * s);
        for i in 0..l {
            for j in i..l {
                let (a, b) = (index.exponent(i), index.exponent(j));
                pair_exponents.extend(a.iter().zip(b).map(|(x, y)| x + y));
            }
        }
        let factors = vec![0.0; s * (2 * index.degree() + 1)];
        Ok(Self {
            upper: vec![CompensatedSum::default(); packed_len(l)],
            count: 0,
            index,
            kind,
            n_outputs,
            pair_exponents,
            factors,
        })
    }

    pub fn index(&self) -> &VeroneseIndex {
        &self.index
    }

    pub fn shared_index(&self) -> Arc<VeroneseIndex> {
        Arc::clone(&self.index)
    }

    pub fn kind(&self) -> MomentKind {
        self.kind
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Adds one window's corrected outer product. `corrections` is ignored
    /// for the noiseless kind.
    pub fn accumulate(&mut self, window: &[f64], corrections: &CorrectionPolySet) -> Result<()> {
        let s = self.index.dims();
        if window.len() != s {
            return Err(Error::IncompleteWindow(window.len()));
        }
        let width = 2 * self.index.degree() + 1;
        let corrected = self.kind != MomentKind::Noiseless;
        if corrected && corrections.h_max() + 1 < width {
            return Err(Error::CorrectionOrder {
                order: width - 1,
                max: corrections.h_max(),
            });
        }
        for (l, &v) in window.iter().enumerate() {
            let row = &mut self.factors[l * width..(l + 1) * width];
            if corrected && self.kind.is_corrected(l, self.n_outputs) {
                corrections.eval_all_into(v, row);
            } else {
                let mut acc = 1.0;
                for slot in row.iter_mut() {
                    *slot = acc;
                    acc *= v;
                }
            }
        }
        for (entry, alpha) in self.upper.iter_mut().zip(self.pair_exponents.chunks_exact(s)) {
            let mut prod = 1.0;
            for (l, &e) in alpha.iter().enumerate() {
                prod *= self.factors[l * width + e as usize];
            }
            entry.add(prod);
        }
        self.count += 1;
        Ok(())
    }

    /// Sums and counts add. Chunked accumulation merged in a fixed order is
    /// deterministic.
    pub fn merge(&mut self, other: &MomentMatrix) -> Result<()> {
        if *self.index != *other.index {
            return Err(Error::Mismatch("different Veronese indices".into()));
        }
        if self.kind != other.kind || self.n_outputs != other.n_outputs {
            return Err(Error::Mismatch("different moment kinds".into()));
        }
        for (a, b) in self.upper.iter_mut().zip(&other.upper) {
            a.merge(b);
        }
        self.count += other.count;
        Ok(())
    }

    /// Full symmetric sum matrix.
    pub fn sum(&self) -> DMatrix<f64> {
        let l = self.index.len();
        let mut m = DMatrix::zeros(l, l);
        let mut p = 0;
        for i in 0..l {
            for j in i..l {
                let v = self.upper[p].value();
                m[(i, j)] = v;
                m[(j, i)] = v;
                p += 1;
            }
        }
        m
    }

    /// `sum / N`.
    pub fn mean(&self) -> Result<DMatrix<f64>> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("mean of an empty moment matrix".into()));
        }
        Ok(self.sum() / self.count as f64)
    }

    pub fn to_dump(&self) -> MomentDump {
        MomentDump {
            degree: self.index.degree(),
            dims: self.index.dims(),
            kind: self.kind,
            n_outputs: self.n_outputs,
            count: self.count,
            upper: self.upper.iter().map(CompensatedSum::value).collect(),
        }
    }

    pub fn from_dump(dump: &MomentDump) -> Result<Self> {
        let index = Arc::new(VeroneseIndex::new(dump.degree, dump.dims)?);
        let mut m = MomentMatrix::new(index, dump.kind, dump.n_outputs)?;
        if dump.upper.len() != m.upper.len() {
            return Err(Error::DimensionMismatch {
                expected: m.upper.len(),
                got: dump.upper.len(),
            });
        }
        for (slot, &v) in m.upper.iter_mut().zip(&dump.upper) {
            slot.add(v);
        }
        m.count = dump.count;
        Ok(m)
    }
}

/// Checkpoint form: index metadata, row-major packed upper triangle of the
/// sum, and the sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentDump {
    pub degree: usize,
    pub dims: usize,
    pub kind: MomentKind,
    pub n_outputs: usize,
    pub count: u64,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdResult {
    /// Singular values in decreasing order.
    pub singular_values: Vec<f64>,
    /// Unit right singular vector for the smallest singular value.
    pub v_min: Vec<f64>,
    /// `σ_{ℓ−1} / σ_ℓ`; infinite when `σ_ℓ = 0`.
    pub gap_ratio: f64,
}

impl SvdResult {
    pub fn sigma_min(&self) -> f64 {
        *self.singular_values.last().expect("nonempty spectrum")
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values[0]
    }
}

/// Singular spectrum of the mean matrix.
pub fn min_singular(mat: &MomentMatrix) -> Result<SvdResult> {
    if (mat.count() as usize) < mat.index().len() {
        warn!(
            "moment matrix has {} samples for {} monomials; the null space is not identifiable",
            mat.count(),
            mat.index().len()
        );
    }
    symmetric_min_singular(&mat.mean()?)
}

/// Singular values of a real symmetric matrix through its eigendecomposition
/// (`σ = |λ|`).
pub fn symmetric_min_singular(m: &DMatrix<f64>) -> Result<SvdResult> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let l = m.nrows();
    if l == 0 || m.ncols() != l {
        return Err(Error::InvalidArgument("matrix must be square and nonempty".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
            .then(a.cmp(&b))
    });
    let singular_values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].abs()).collect();
    let last = order[l - 1];
    let col = eig.eigenvectors.column(last);
    let norm = col.norm();
    let mut v_min: Vec<f64> = col.iter().map(|v| v / norm).collect();
    if let Some(first) = v_min.iter().find(|v| v.abs() > 1e-12) {
        if *first < 0.0 {
            v_min.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let gap_ratio = if l < 2 || singular_values[l - 1] == 0.0 {
        f64::INFINITY
    } else {
        singular_values[l - 2] / singular_values[l - 1]
    };
    Ok(SvdResult {
        singular_values,
        v_min,
        gap_ratio,
    })
}

/// Running means of every raw monomial of total degree `<= 2n` in the
/// regressor entries.
///
/// The corrected moment matrix is an affine function of these raw moments
/// for any fixed noise law, so one pass over the data supports rebuilding
/// the matrix for many noise parameters.
#[derive(Debug, Clone)]
pub struct RawMomentTable {
    index: Arc<VeroneseIndex>,
    // Homogenized catalog: degree 2n in s + 1 variables, last one dropped.
    monomials: Vec<Vec<u16>>,
    lookup: std::collections::HashMap<Vec<u16>, usize>,
    sums: Vec<CompensatedSum>,
    count: u64,
}

impl RawMomentTable {
    pub fn new(index: Arc<VeroneseIndex>) -> Result<Self> {
        let order = 2 * index.degree();
        let homog = VeroneseIndex::with_degree(order, index.dims() + 1)?;
        let monomials: Vec<Vec<u16>> = homog
            .exponents()
            .iter()
            .map(|e| e[..index.dims()].to_vec())
            .collect();
        let lookup = monomials.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        Ok(Self {
            sums: vec![CompensatedSum::default(); monomials.len()],
            count: 0,
            index,
            monomials,
            lookup,
        })
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn accumulate(&mut self, window: &[f64]) -> Result<()> {
        if window.len() != self.index.dims() {
            return Err(Error::IncompleteWindow(window.len()));
        }
        let powers = power_table(window, 2 * self.index.degree());
        for (slot, alpha) in self.sums.iter_mut().zip(&self.monomials) {
            slot.add(crate::veronese::monomial(&powers, alpha));
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &RawMomentTable) -> Result<()> {
        if *self.index != *other.index {
            return Err(Error::Mismatch("different Veronese indices".into()));
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.merge(b);
        }
        self.count += other.count;
        Ok(())
    }

    /// Mean of the raw monomial with exponent `alpha`.
    pub fn mean_of(&self, alpha: &[u16]) -> Option<f64> {
        let pos = *self.lookup.get(alpha)?;
        Some(self.sums[pos].value() / self.count as f64)
    }

    /// Corrected mean moment matrix for the given kind and corrections.
    pub fn assemble(
        &self,
        kind: MomentKind,
        n_outputs: usize,
        corrections: &CorrectionPolySet,
    ) -> Result<DMatrix<f64>> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("empty raw moment table".into()));
        }
        let l = self.index.len();
        let s = self.index.dims();
        let order = 2 * self.index.degree();
        if kind != MomentKind::Noiseless && corrections.h_max() < order {
            return Err(Error::CorrectionOrder {
                order,
                max: corrections.h_max(),
            });
        }
        let means: Vec<f64> = self
            .sums
            .iter()
            .map(|v| v.value() / self.count as f64)
            .collect();
        let mut out = DMatrix::zeros(l, l);
        let mut target = vec![0u16; s];
        let mut scratch = vec![0u16; s];
        for i in 0..l {
            for j in i..l {
                for (t, (a, b)) in target
                    .iter_mut()
                    .zip(self.index.exponent(i).iter().zip(self.index.exponent(j)))
                {
                    *t = a + b;
                }
                let v = self.expand(kind, n_outputs, corrections, &means, &target, 0, 1.0, &mut scratch);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    // Σ over lower exponents of corrected coordinates of Π w[α_l][j_l] · mean(j).
    #[allow(clippy::too_many_arguments)]
    fn expand(
        &self,
        kind: MomentKind,
        n_outputs: usize,
        w: &CorrectionPolySet,
        means: &[f64],
        target: &[u16],
        coord: usize,
        coeff: f64,
        scratch: &mut Vec<u16>,
    ) -> f64 {
        if coord == target.len() {
            return coeff * means[self.lookup[scratch.as_slice()]];
        }
        let e = target[coord];
        if !kind.is_corrected(coord, n_outputs) {
            scratch[coord] = e;
            return self.expand(kind, n_outputs, w, means, target, coord + 1, coeff, scratch);
        }
        let poly = w.poly(e as usize);
        let mut acc = 0.0;
        for (jl, &c) in poly.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            scratch[coord] = jl as u16;
            acc += self.expand(kind, n_outputs, w, means, target, coord + 1, coeff * c, scratch);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{
        build_corrections, corrected_monomial_sar, corrected_monomial_sarx, NoiseModel,
    };
    use crate::veronese::build_index;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn idx23() -> Arc<VeroneseIndex> {
        Arc::new(build_index(2, 3).unwrap())
    }

    // Cyclic Jacobi eigenvalue iteration; independent of the LAPACK-style
    // routine used by the implementation.
    fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
        let n = m.nrows();
        let mut a = m.clone();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[(i, i)]).collect()
    }

    #[test]
    fn sar_entry_layout() {
        let theta = 0.3;
        let w = build_corrections(&NoiseModel::gaussian(theta).unwrap(), 4).unwrap();
        let mut m = MomentMatrix::new(idx23(), MomentKind::Sar, 2).unwrap();
        let (y0, y1, u) = (0.8, -1.1, 0.5);
        m.accumulate(&[y0, y1, u], &w).unwrap();
        let s = m.sum();
        // (x_k², x_k x_{k−1}) entry
        let want = (y0.powi(3) - 3.0 * theta * y0) * y1;
        assert!((s[(0, 1)] - want).abs() < 1e-14);
        // (x_k², x_k²) entry: y⁴ − 6 m₂ (y² − m₂) − m₄
        let want = y0.powi(4) - 6.0 * theta * (y0 * y0 - theta) - 3.0 * theta * theta;
        assert!((s[(0, 0)] - want).abs() < 1e-14);
        assert_eq!(s[(1, 0)], s[(0, 1)]);
    }

    #[test]
    fn noiseless_single_window_is_rank_one() {
        let mut m = MomentMatrix::new(idx23(), MomentKind::Noiseless, 2).unwrap();
        m.accumulate(&[0.4, 1.2, -0.7], &CorrectionPolySet::identity(0)).unwrap();
        let svd = min_singular(&m).unwrap();
        assert!(svd.singular_values[1] < 1e-12 * svd.sigma_max());
        assert!(svd.sigma_min() < 1e-12);
    }

    #[test]
    fn three_windows_match_hand_average() {
        let theta = 0.2;
        let w = build_corrections(&NoiseModel::gaussian(theta).unwrap(), 4).unwrap();
        let windows = [[1.0, 0.5, -0.3], [-0.2, 1.0, 0.8], [0.6, -0.4, 1.5]];
        let idx = idx23();
        for (kind, n_out) in [(MomentKind::Sar, 2), (MomentKind::Sarx, 2), (MomentKind::Noiseless, 2)] {
            let mut m = MomentMatrix::new(Arc::clone(&idx), kind, n_out).unwrap();
            for win in &windows {
                m.accumulate(win, &w).unwrap();
            }
            let mean = m.mean().unwrap();
            let mut checked = 0;
            for i in 0..6 {
                for j in i..6 {
                    let alpha: Vec<u16> = idx
                        .exponent(i)
                        .iter()
                        .zip(idx.exponent(j))
                        .map(|(a, b)| a + b)
                        .collect();
                    let mut want = 0.0;
                    for win in &windows {
                        want += match kind {
                            MomentKind::Sar => corrected_monomial_sar(&alpha, win, 2, &w).unwrap(),
                            MomentKind::Sarx => corrected_monomial_sarx(&alpha, win, &w).unwrap(),
                            MomentKind::Noiseless => win
                                .iter()
                                .zip(&alpha)
                                .map(|(v, &e)| v.powi(e as i32))
                                .product(),
                        };
                    }
                    want /= 3.0;
                    assert!((mean[(i, j)] - want).abs() < 1e-13, "{kind:?} ({i},{j})");
                    checked += 1;
                }
            }
            assert_eq!(checked, 21);
        }
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let w = CorrectionPolySet::identity(4);
        let mut a = MomentMatrix::new(idx23(), MomentKind::Sar, 2).unwrap();
        a.accumulate(&[1.0, 2.0, 3.0], &w).unwrap();
        let before = a.sum();
        let empty = MomentMatrix::new(idx23(), MomentKind::Sar, 2).unwrap();
        a.merge(&empty).unwrap();
        assert_eq!(a.sum(), before);
        assert_eq!(a.count(), 1);
    }

    #[test]
    fn merge_rejects_mismatch() {
        let mut a = MomentMatrix::new(idx23(), MomentKind::Sar, 2).unwrap();
        let b = MomentMatrix::new(idx23(), MomentKind::Sarx, 2).unwrap();
        assert!(a.merge(&b).is_err());
        let c = MomentMatrix::new(Arc::new(build_index(2, 4).unwrap()), MomentKind::Sar, 2).unwrap();
        assert!(a.merge(&c).is_err());
    }

    #[test]
    fn chunked_merge_matches_sequential_and_commutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = build_corrections(&NoiseModel::gaussian(0.5).unwrap(), 4).unwrap();
        let windows: Vec<[f64; 3]> = (0..1000)
            .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)])
            .collect();
        let mut seq = MomentMatrix::new(idx23(), MomentKind::Sar, 2).unwrap();
        for win in &windows {
            seq.accumulate(win, &w).unwrap();
        }
        let mut chunks = Vec::new();
        for chunk in windows.chunks(250) {
            let mut m = MomentMatrix::new(idx23(), MomentKind::Sar, 2).unwrap();
            for win in chunk {
                m.accumulate(win, &w).unwrap();
            }
            chunks.push(m);
        }
        let mut forward = chunks[0].clone();
        for c in &chunks[1..] {
            forward.merge(c).unwrap();
        }
        let mut backward = chunks[3].clone();
        for c in chunks[..3].iter().rev() {
            backward.merge(c).unwrap();
        }
        let a = seq.mean().unwrap();
        let b = forward.mean().unwrap();
        let c = backward.mean().unwrap();
        let scale = a.abs().max();
        assert!((&a - &b).abs().max() <= 1e-12 * scale);
        assert!((&b - &c).abs().max() <= 1e-12 * scale);
        assert_eq!(forward.count(), 1000);
    }

    #[test]
    fn identity_spectrum() {
        let svd = symmetric_min_singular(&DMatrix::identity(5, 5)).unwrap();
        assert!(svd.singular_values.iter().all(|&s| (s - 1.0).abs() < 1e-15));
        assert!((svd.gap_ratio - 1.0).abs() < 1e-12);
        let n: f64 = svd.v_min.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_symmetric_matches_jacobi() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let mut m = DMatrix::<f64>::zeros(6, 6);
            for i in 0..6 {
                for j in i..6 {
                    let v = rng.random_range(-1.0..1.0);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            let svd = symmetric_min_singular(&m).unwrap();
            let mut oracle: Vec<f64> = jacobi_eigenvalues(&m).iter().map(|v| v.abs()).collect();
            oracle.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in svd.singular_values.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10);
            }
            let mv = &m * nalgebra::DVector::from_column_slice(&svd.v_min);
            assert!((mv.norm() - svd.sigma_min()).abs() < 1e-8 * svd.sigma_max());
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = DMatrix::<f64>::identity(3, 3);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(symmetric_min_singular(&m), Err(Error::NonFinite)));
    }

    #[test]
    fn raw_table_assembly_matches_direct_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (degree, dims, n_out) in [(2, 3, 2), (3, 3, 2), (2, 4, 3)] {
            let idx = Arc::new(build_index(degree, dims).unwrap());
            let w = build_corrections(&NoiseModel::gaussian(0.7).unwrap(), 2 * degree).unwrap();
            let mut raw = RawMomentTable::new(Arc::clone(&idx)).unwrap();
            let mut sar = MomentMatrix::new(Arc::clone(&idx), MomentKind::Sar, n_out).unwrap();
            let mut sarx = MomentMatrix::new(Arc::clone(&idx), MomentKind::Sarx, n_out).unwrap();
            for _ in 0..500 {
                let win: Vec<f64> = (0..dims).map(|_| rng.random_range(-2.0..2.0)).collect();
                raw.accumulate(&win).unwrap();
                sar.accumulate(&win, &w).unwrap();
                sarx.accumulate(&win, &w).unwrap();
            }
            for (m, kind) in [(&sar, MomentKind::Sar), (&sarx, MomentKind::Sarx)] {
                let direct = m.mean().unwrap();
                let assembled = raw.assemble(kind, n_out, &w).unwrap();
                let scale = direct.abs().max();
                assert!((&direct - &assembled).abs().max() < 1e-10 * scale, "{kind:?}");
            }
        }
    }

    #[test]
    fn dump_round_trip() {
        let w = CorrectionPolySet::identity(4);
        let mut m = MomentMatrix::new(idx23(), MomentKind::Noiseless, 2).unwrap();
        m.accumulate(&[1.0, -2.0, 0.5], &w).unwrap();
        m.accumulate(&[0.3, 0.1, 0.9], &w).unwrap();
        let text = serde_json::to_string(&m.to_dump()).unwrap();
        let back = MomentMatrix::from_dump(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.sum(), m.sum());
        assert_eq!(back.count(), 2);
    }

    #[test]
    fn single_window_expectation_is_noiseless_outer_product() {
        let theta = 0.5;
        let w = build_corrections(&NoiseModel::gaussian(theta).unwrap(), 4).unwrap();
        let dist = Normal::new(0.0, theta.sqrt()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let clean = [0.7, -0.4, 0.9];
        let mut m = MomentMatrix::new(idx23(), MomentKind::Sar, 2).unwrap();
        for _ in 0..400_000 {
            let win = [clean[0] + dist.sample(&mut rng), clean[1] + dist.sample(&mut rng), clean[2]];
            m.accumulate(&win, &w).unwrap();
        }
        let e = idx23().embed(&clean).unwrap();
        let mean = m.mean().unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!((mean[(i, j)] - e[i] * e[j]).abs() < 0.03, "({i},{j})");
            }
        }
    }
}

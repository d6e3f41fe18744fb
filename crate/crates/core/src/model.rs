use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moment_matrix::MomentKind;
use crate::veronese::{product_of_forms, HomoPoly, LinearForm};

/// Noise placement: measurement noise on the output (SAR) or process noise
/// inside the recursion (SARX).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Sar,
    Sarx,
}

impl SystemKind {
    pub fn moment_kind(self) -> MomentKind {
        match self {
            SystemKind::Sar => MomentKind::Sar,
            SystemKind::Sarx => MomentKind::Sarx,
        }
    }
}

impl std::str::FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sar" => Ok(SystemKind::Sar),
            "sarx" => Ok(SystemKind::Sarx),
            other => Err(Error::InvalidArgument(format!("unknown system kind '{other}'"))),
        }
    }
}

/// One mode: `x_k = Σ a_j x_{k−j} + Σ b_j u_{k−j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubModel {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl SubModel {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Self {
        Self { a, b }
    }

    /// `[−1, a_1.., b_1..]`.
    pub fn form(&self) -> LinearForm {
        let mut t = Vec::with_capacity(1 + self.a.len() + self.b.len());
        t.push(-1.0);
        t.extend_from_slice(&self.a);
        t.extend_from_slice(&self.b);
        LinearForm(t)
    }

    /// Inverse of [`SubModel::form`]; the form is rescaled to leading −1
    /// first when possible.
    pub fn from_form(t: &LinearForm, n_a: usize, n_b: usize) -> Result<Self> {
        if t.dims() != 1 + n_a + n_b {
            return Err(Error::DimensionMismatch {
                expected: 1 + n_a + n_b,
                got: t.dims(),
            });
        }
        let t = t.model_normalized().unwrap_or_else(|| t.clone());
        let c = t.coeffs();
        Ok(Self {
            a: c[1..1 + n_a].to_vec(),
            b: c[1 + n_a..].to_vec(),
        })
    }

    pub fn params(&self) -> Vec<f64> {
        self.a.iter().chain(&self.b).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    True,
    Identified,
    Refined,
}

/// `n` sub-models sharing orders `(n_a, n_b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchedModel {
    pub n_a: usize,
    pub n_b: usize,
    pub modes: Vec<SubModel>,
    pub provenance: Provenance,
}

impl SwitchedModel {
    pub fn new(n_a: usize, n_b: usize, modes: Vec<SubModel>, provenance: Provenance) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidArgument("a switched model needs at least one mode".into()));
        }
        for m in &modes {
            if m.a.len() != n_a || m.b.len() != n_b {
                return Err(Error::InvalidArgument(format!(
                    "mode orders ({}, {}) do not match ({n_a}, {n_b})",
                    m.a.len(),
                    m.b.len()
                )));
            }
        }
        Ok(Self {
            n_a,
            n_b,
            modes,
            provenance,
        })
    }

    /// The two-mode first-order system `(0.3, 1)`, `(−0.5, −1)`.
    pub fn example1() -> Self {
        Self {
            n_a: 1,
            n_b: 1,
            modes: vec![SubModel::new(vec![0.3], vec![1.0]), SubModel::new(vec![-0.5], vec![-1.0])],
            provenance: Provenance::True,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Regressor length `n_a + n_b + 1`.
    pub fn dims(&self) -> usize {
        self.n_a + self.n_b + 1
    }

    pub fn forms(&self) -> Vec<LinearForm> {
        self.modes.iter().map(SubModel::form).collect()
    }

    /// Decoupling polynomial `Π t_i^T r`, leading coefficient `+1` for even
    /// `n` (each form has leading −1).
    pub fn decoupling_poly(&self) -> Result<HomoPoly> {
        let p = product_of_forms(&self.forms())?;
        Ok(p.normalized().poly)
    }

    pub fn decoupling_index(&self) -> Result<Arc<crate::veronese::VeroneseIndex>> {
        Ok(self.decoupling_poly()?.shared_index())
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_one_decoupling_vector() {
        let c = SwitchedModel::example1().decoupling_poly().unwrap();
        let want = [1.0, 0.2, 0.0, -0.15, -0.8, -1.0];
        for (a, b) in c.coeffs().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn three_modes_normalize_to_positive_leading() {
        let m = SwitchedModel::new(
            1,
            1,
            vec![
                SubModel::new(vec![0.1], vec![1.0]),
                SubModel::new(vec![0.5], vec![-0.3]),
                SubModel::new(vec![-0.7], vec![0.4]),
            ],
            Provenance::True,
        )
        .unwrap();
        let c = m.decoupling_poly().unwrap();
        assert_eq!(c.coeffs()[0], 1.0);
        assert_eq!(c.degree(), 3);
    }

    #[test]
    fn form_round_trip() {
        let sm = SubModel::new(vec![0.2, -0.1], vec![0.7]);
        let t = sm.form();
        assert_eq!(t.coeffs(), &[-1.0, 0.2, -0.1, 0.7]);
        let scaled = LinearForm(t.coeffs().iter().map(|v| v * -2.5).collect());
        assert_eq!(SubModel::from_form(&scaled, 2, 1).unwrap(), sm);
    }

    #[test]
    fn rejects_inconsistent_orders() {
        let r = SwitchedModel::new(2, 1, vec![SubModel::new(vec![0.1], vec![1.0])], Provenance::True);
        assert!(r.is_err());
    }
}

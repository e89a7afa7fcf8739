//! Gaussian mixture prior over body pose (global rotation excluded),
//! evaluated in min-over-components form.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};
use crate::model::{Vec3, NUM_JOINTS};

pub const POSE_DIM: usize = 3 * (NUM_JOINTS - 1);

/// Tensor names used when a prior is stored in a container.
pub const GMM_TENSORS: [&str; 4] = ["gmm_weights", "gmm_means", "gmm_precisions_chol", "gmm_logdet"];

/// Component `k` costs
/// `-ln w_k + 1/2 |L_k^T (x - mu_k)|^2 + 1/2 logdet_k`
/// where `L_k L_k^T` is the precision and `logdet_k = ln det Sigma_k`.
/// The `(2 pi)^d` normalizer is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    precisions_chol: Vec<DMatrix<f64>>,
    logdet: Vec<f64>,
}

impl GmmPrior {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        precisions_chol: Vec<DMatrix<f64>>,
        logdet: Vec<f64>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Input("gmm needs at least one component".into()));
        }
        if means.len() != k || precisions_chol.len() != k || logdet.len() != k {
            return Err(Error::Input(format!(
                "gmm component counts disagree: {k} weights, {} means, {} precisions, {} logdets",
                means.len(),
                precisions_chol.len(),
                logdet.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidTensor {
                name: "gmm_weights".into(),
                reason: "weights must be positive and finite".into(),
            });
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidTensor {
                name: "gmm_weights".into(),
                reason: format!("weights sum to {total}, expected 1"),
            });
        }
        for (i, (m, l)) in means.iter().zip(&precisions_chol).enumerate() {
            if m.len() != POSE_DIM {
                return Err(Error::Shape {
                    name: "gmm_means".into(),
                    expected: format!("[K, {POSE_DIM}]"),
                    found: vec![k, m.len()],
                });
            }
            if l.nrows() != POSE_DIM || l.ncols() != POSE_DIM {
                return Err(Error::Shape {
                    name: "gmm_precisions_chol".into(),
                    expected: format!("[K, {POSE_DIM}, {POSE_DIM}]"),
                    found: vec![k, l.nrows(), l.ncols()],
                });
            }
            if Cholesky::new(l * l.transpose()).is_none() {
                return Err(Error::InvalidTensor {
                    name: "gmm_precisions_chol".into(),
                    reason: format!("precision of component {i} is not positive definite"),
                });
            }
            if m.iter().any(|x| !x.is_finite()) || !logdet[i].is_finite() {
                return Err(Error::NonFinite(format!("gmm component {i}")));
            }
        }
        Ok(GmmPrior {
            weights,
            means,
            precisions_chol,
            logdet,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    /// Two diagonal components: a relaxed pose at zero and a mildly bent
    /// pose with elbows and knees flexed.
    pub fn synthetic() -> Self {
        use crate::model::joints as J;
        let mut bent = DVector::zeros(POSE_DIM);
        let mut set = |j: usize, a: usize, v: f64| bent[3 * (j - 1) + a] = v;
        set(J::L_ELBOW, 2, -0.6);
        set(J::R_ELBOW, 2, 0.6);
        set(J::L_KNEE, 0, 0.4);
        set(J::R_KNEE, 0, 0.4);
        let diag = |sigma: f64| DMatrix::from_diagonal_element(POSE_DIM, POSE_DIM, 1.0 / sigma);
        let logdet = |sigma: f64| POSE_DIM as f64 * (sigma * sigma).ln();
        GmmPrior::new(
            vec![0.6, 0.4],
            vec![DVector::zeros(POSE_DIM), bent],
            vec![diag(0.6), diag(0.6)],
            vec![logdet(0.6), logdet(0.6)],
        )
        .expect("built-in prior is valid")
    }

    fn component_cost(&self, k: usize, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let d = x - &self.means[k];
        let y = self.precisions_chol[k].tr_mul(&d);
        let cost = -self.weights[k].ln() + 0.5 * y.norm_squared() + 0.5 * self.logdet[k];
        (cost, d)
    }

    /// Cost of component `k` alone.
    pub fn component_cost_only(&self, k: usize, body_pose: &[f64]) -> Result<f64> {
        let x = self.check(body_pose)?;
        if k >= self.num_components() {
            return Err(Error::Input(format!("gmm has no component {k}")));
        }
        Ok(self.component_cost(k, &x).0)
    }

    /// Cost and index of the cheapest component.
    pub fn evaluate(&self, body_pose: &[f64]) -> Result<(f64, usize)> {
        let x = self.check(body_pose)?;
        let mut best = (f64::INFINITY, 0);
        for k in 0..self.num_components() {
            let (c, _) = self.component_cost(k, &x);
            if c < best.0 {
                best = (c, k);
            }
        }
        Ok(best)
    }

    /// Cost plus its gradient through the selected component.
    pub fn evaluate_with_gradient(&self, body_pose: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (cost, k) = self.evaluate(body_pose)?;
        let x = DVector::from_column_slice(body_pose);
        let (_, d) = self.component_cost(k, &x);
        let l = &self.precisions_chol[k];
        let g = l * l.tr_mul(&d);
        Ok((cost, g.as_slice().to_vec()))
    }

    fn check(&self, body_pose: &[f64]) -> Result<DVector<f64>> {
        if body_pose.len() != POSE_DIM {
            return Err(Error::Input(format!(
                "pose prior expects {POSE_DIM} values, got {}",
                body_pose.len()
            )));
        }
        Ok(DVector::from_column_slice(body_pose))
    }

    pub fn to_container(&self, c: &mut Container) {
        let k = self.num_components();
        c.insert(Tensor::f64("gmm_weights", vec![k], self.weights.clone()));
        let means = self.means.iter().flat_map(|m| m.iter().copied()).collect();
        c.insert(Tensor::f64("gmm_means", vec![k, POSE_DIM], means));
        let mut chol = Vec::with_capacity(k * POSE_DIM * POSE_DIM);
        for l in &self.precisions_chol {
            for r in 0..POSE_DIM {
                for col in 0..POSE_DIM {
                    chol.push(l[(r, col)]);
                }
            }
        }
        c.insert(Tensor::f64("gmm_precisions_chol", vec![k, POSE_DIM, POSE_DIM], chol));
        c.insert(Tensor::f64("gmm_logdet", vec![k], self.logdet.clone()));
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let w = c.require("gmm_weights")?;
        w.expect_shape(&[None])?;
        let k = w.dims[0];
        let m = c.require("gmm_means")?;
        m.expect_shape(&[Some(k), Some(POSE_DIM)])?;
        let l = c.require("gmm_precisions_chol")?;
        l.expect_shape(&[Some(k), Some(POSE_DIM), Some(POSE_DIM)])?;
        let ld = c.require("gmm_logdet")?;
        ld.expect_shape(&[Some(k)])?;
        let md = m.as_f64();
        let ldata = l.as_f64();
        let means = (0..k)
            .map(|i| DVector::from_column_slice(&md[i * POSE_DIM..(i + 1) * POSE_DIM]))
            .collect();
        let chol = (0..k)
            .map(|i| {
                let s = &ldata[i * POSE_DIM * POSE_DIM..(i + 1) * POSE_DIM * POSE_DIM];
                DMatrix::from_row_slice(POSE_DIM, POSE_DIM, s)
            })
            .collect();
        GmmPrior::new(w.as_f64(), means, chol, ld.as_f64())
    }

    pub fn has_tensors(c: &Container) -> bool {
        GMM_TENSORS.iter().all(|n| c.get(n).is_some())
    }
}

/// Flattens joints 1..24 into the prior's input vector.
pub fn body_pose(theta: &[Vec3; NUM_JOINTS]) -> Vec<f64> {
    theta[1..].iter().flat_map(|w| w.iter().copied()).collect()
}

//! L2-regularized binary logistic regression trained by damped Newton steps.
//!
//! Objective: `sum_i softplus(z_i) - y_i z_i + lambda/2 |w|^2` with
//! `z = Xw + b`; the bias is not penalized. Each step solves the Newton
//! system by Cholesky and backtracks until the objective does not increase,
//! so the recorded loss sequence is non-increasing.

use nalgebra::{DMatrix, DVector};

use super::ProbeError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub l2_lambda: f64,
    /// Convergence threshold on the gradient infinity-norm.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2_lambda: 1.0,
            tolerance: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2_lambda: f64,
    pub converged: bool,
    pub n_iterations: usize,
    pub grad_norm: f64,
    /// Objective value before the first step and after every accepted step.
    pub loss_history: Vec<f64>,
}

impl ProbeClassifier {
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.bias + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(self.decision(row))
    }

    /// Predicted label is positive iff the decision function is > 0.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<bool> {
        let w = DVector::from_column_slice(&self.weights);
        let z = x * w;
        z.iter().map(|v| v + self.bias > 0.0).collect()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(z)) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn objective(x: &DMatrix<f64>, y: &[f64], w: &DVector<f64>, b: f64, lambda: f64) -> f64 {
    let z = x * w;
    let nll: f64 = z
        .iter()
        .zip(y)
        .map(|(zi, yi)| softplus(zi + b) - yi * (zi + b))
        .sum();
    nll + 0.5 * lambda * w.norm_squared()
}

pub fn train_logreg(
    x: &DMatrix<f64>,
    labels: &[bool],
    config: &TrainConfig,
) -> Result<ProbeClassifier, ProbeError> {
    let (n, d) = x.shape();
    if labels.len() != n {
        return Err(ProbeError::LengthMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if n < 2 {
        return Err(ProbeError::TooFewSamples(n));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == n {
        return Err(ProbeError::SingleClass);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFinite);
    }
    if !(config.l2_lambda >= 0.0) {
        return Err(ProbeError::InvalidConfig(format!(
            "l2_lambda must be >= 0, got {}",
            config.l2_lambda
        )));
    }
    let lambda = config.l2_lambda;
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();

    let mut w = DVector::<f64>::zeros(d);
    let mut b = 0.0;
    let mut loss = objective(x, &y, &w, b, lambda);
    let mut history = vec![loss];
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm;

    // [X 1] augmented design, reused by every Hessian
    let mut xa = DMatrix::<f64>::from_element(n, d + 1, 1.0);
    xa.view_mut((0, 0), (n, d)).copy_from(x);

    loop {
        let z = x * &w;
        let p: Vec<f64> = z.iter().map(|zi| sigmoid(zi + b)).collect();
        let resid = DVector::from_iterator(n, p.iter().zip(&y).map(|(pi, yi)| pi - yi));
        let mut grad = xa.tr_mul(&resid);
        for j in 0..d {
            grad[j] += lambda * w[j];
        }
        grad_norm = grad.amax();
        if grad_norm <= config.tolerance {
            converged = true;
            break;
        }
        if iterations >= config.max_iter {
            break;
        }

        let mut xs = xa.clone();
        for (i, pi) in p.iter().enumerate() {
            let s = (pi * (1.0 - pi)).sqrt();
            xs.row_mut(i).scale_mut(s);
        }
        let mut hess = xs.tr_mul(&xs);
        for j in 0..d {
            hess[(j, j)] += lambda;
        }
        let step = solve_spd(hess, &grad);

        // backtracking: accept the first step length that does not increase the loss
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let w_new = &w - &step.rows(0, d) * t;
            let b_new = b - step[d] * t;
            let l_new = objective(x, &y, &w_new, b_new, lambda);
            if l_new <= loss {
                accepted = Some((w_new, b_new, l_new));
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((w_new, b_new, l_new)) => {
                let stalled = l_new == loss;
                w = w_new;
                b = b_new;
                loss = l_new;
                history.push(loss);
                if stalled && t < 1.0 {
                    // no representable progress left along the Newton direction
                    break;
                }
            }
            None => break,
        }
    }
    if !converged {
        // report on the final iterate
        let z = x * &w;
        let resid = DVector::from_iterator(
            n,
            z.iter().zip(&y).map(|(zi, yi)| sigmoid(zi + b) - yi),
        );
        let mut grad = xa.tr_mul(&resid);
        for j in 0..d {
            grad[j] += lambda * w[j];
        }
        grad_norm = grad.amax();
        converged = grad_norm <= config.tolerance;
    }

    Ok(ProbeClassifier {
        weights: w.iter().copied().collect(),
        bias: b,
        l2_lambda: lambda,
        converged,
        n_iterations: iterations,
        grad_norm,
        loss_history: history,
    })
}

/// Solve `H s = g` for a symmetric positive (semi-)definite `H`, adding a
/// growing ridge when the factorization fails.
fn solve_spd(hess: DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let scale = hess.diagonal().amax().max(1.0);
    let mut ridge = 0.0;
    loop {
        let mut h = hess.clone();
        if ridge > 0.0 {
            for j in 0..h.nrows() {
                h[(j, j)] += ridge;
            }
        }
        if let Some(chol) = h.cholesky() {
            return chol.solve(grad);
        }
        ridge = if ridge == 0.0 { scale * 1e-10 } else { ridge * 10.0 };
    }
}

/// Per-column affine map fitted on training rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let (n, d) = x.shape();
        let mut mean = vec![0.0; d];
        let mut scale = vec![1.0; d];
        for j in 0..d {
            let col = x.column(j);
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            mean[j] = m;
            // constant columns are centered but not scaled
            scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for j in 0..out.ncols() {
            let (m, s) = (self.mean[j], self.scale[j]);
            out.column_mut(j).apply(|v| *v = (*v - m) / s);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_symmetry() {
        let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let clf = train_logreg(&x, &[false, true], &TrainConfig::default()).unwrap();
        assert!(clf.converged);
        assert!(clf.weights[0] > 0.0);
        assert!(clf.bias.abs() < 1e-9);
        assert_eq!(clf.predict(&x), vec![false, true]);
    }

    #[test]
    fn zero_features_give_half_probability() {
        let x = DMatrix::<f64>::zeros(6, 3);
        let y = [true, false, true, false, true, false];
        let clf = train_logreg(&x, &y, &TrainConfig::default()).unwrap();
        assert!(clf.converged);
        assert!(clf.weights.iter().all(|w| w.abs() < 1e-12));
        assert!(clf.bias.abs() < 1e-9);
        assert!((clf.predict_proba(&[0.0, 0.0, 0.0]) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(matches!(
            train_logreg(&x, &[true, true], &TrainConfig::default()),
            Err(ProbeError::SingleClass)
        ));
        let x = DMatrix::from_row_slice(2, 1, &[f64::NAN, 1.0]);
        assert!(matches!(
            train_logreg(&x, &[true, false], &TrainConfig::default()),
            Err(ProbeError::NonFinite)
        ));
    }

    #[test]
    fn unregularized_separable_stops_at_max_iter() {
        let x = DMatrix::from_row_slice(4, 1, &[-2.0, -1.0, 1.0, 2.0]);
        let cfg = TrainConfig {
            l2_lambda: 0.0,
            tolerance: 1e-12,
            max_iter: 30,
        };
        let clf = train_logreg(&x, &[false, false, true, true], &cfg).unwrap();
        assert!(clf.n_iterations <= 30);
        assert!(clf.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(clf.predict(&x), vec![false, false, true, true]);
    }

    #[test]
    fn standardizer_uses_given_rows() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let s = Standardizer::fit(&x);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.scale[1], 1.0);
        let t = s.transform(&x);
        assert!((t[(0, 0)] + (1.5f64).sqrt()).abs() < 1e-12);
        assert_eq!(t[(2, 1)], 0.0);
    }
}

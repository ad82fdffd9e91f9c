//! Jacobian-free backpropagation through the splitting layer.
//!
//! At the fixed point `z*` the loss gradient is propagated as
//! `dl/dx * dP2/dz * dT/dw`, skipping the inverse of `I - dT/dz`. Since `T`
//! sees `w` only through the affine projection of `-alpha w`, and the
//! Jacobian of that projection is the null-space projector, the pseudo-gradient
//! with respect to the cost vector is
//!
//! ```text
//! p = -alpha * P_{Null(A)}( mask(z*) * dl/dx )
//! ```

use nalgebra::DVector;

use crate::dys::{solve, DysConfig};
use crate::error::{check_len, Result};
use crate::polytope::{relu_jacobian_diag, StandardFormPolytope};

/// Pseudo-gradient of the loss with respect to the predicted cost vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CostGradient {
    pub grad_w: DVector<f64>,
}

/// JFB pseudo-gradient with respect to `w` at the converged iterate `z_fixed`.
pub fn grad_wrt_cost(
    poly: &StandardFormPolytope,
    z_fixed: &DVector<f64>,
    loss_grad_x: &DVector<f64>,
    alpha: f64,
) -> Result<CostGradient> {
    let n = poly.dim();
    check_len("grad_wrt_cost iterate", n, z_fixed.len())?;
    check_len("grad_wrt_cost loss gradient", n, loss_grad_x.len())?;
    let masked = relu_jacobian_diag(z_fixed).component_mul(loss_grad_x);
    let mut grad_w = poly.project_null_space(&masked)?;
    grad_w *= -alpha;
    Ok(CostGradient { grad_w })
}

/// Gradient of `||x_pred - x_star||^2` with respect to `x_pred`.
pub fn loss_grad_x_l2(x_pred: &DVector<f64>, x_star: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("loss_grad_x_l2", x_pred.len(), x_star.len())?;
    Ok((x_pred - x_star) * 2.0)
}

/// Central-difference gradient of `||solve(w) - x_star||^2` with respect to `w`.
///
/// The solver tolerance is tightened to at most `1e-8` so the difference
/// quotient is not dominated by early stopping. Each coordinate costs two
/// full solves.
pub fn finite_diff_grad_wrt_cost(
    poly: &StandardFormPolytope,
    w: &DVector<f64>,
    cfg: &DysConfig,
    x_star: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let n = poly.dim();
    check_len("finite_diff_grad_wrt_cost cost vector", n, w.len())?;
    check_len("finite_diff_grad_wrt_cost target", n, x_star.len())?;
    let mut tight = *cfg;
    tight.tol = tight.tol.min(1e-8);
    tight.keep_history = false;

    let loss = |w: &DVector<f64>| -> Result<f64> {
        let st = solve(poly, w, &tight)?;
        Ok((&st.x - x_star).norm_squared())
    };

    let mut grad = DVector::zeros(n);
    let mut probe = w.clone();
    for i in 0..n {
        probe[i] = w[i] + h;
        let up = loss(&probe)?;
        probe[i] = w[i] - h;
        let down = loss(&probe)?;
        probe[i] = w[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Lower bound applied to the hessian so covers stay strictly positive.
pub const HESSIAN_FLOOR: f64 = 1e-16;

pub fn sigmoid(margin: f64) -> f64 {
    if margin >= 0.0 {
        1.0 / (1.0 + (-margin).exp())
    } else {
        let e = margin.exp();
        e / (1.0 + e)
    }
}

/// Gradient and hessian of the log-loss with respect to the margin.
pub fn logistic_grad_hess(margin: f64, label: bool) -> (f64, f64) {
    let p = sigmoid(margin);
    let y = if label { 1.0 } else { 0.0 };
    (p - y, (p * (1.0 - p)).max(HESSIAN_FLOOR))
}

/// `-[y log p + (1-y) log(1-p)]` with `p = sigmoid(margin)`, computed
/// without overflow.
pub fn log_loss(margin: f64, label: bool) -> f64 {
    let softplus = margin.max(0.0) + (-margin.abs()).exp().ln_1p();
    if label {
        softplus - margin
    } else {
        softplus
    }
}

//! Central finite-difference gradient checking.
//!
//! The checker treats the function under test as a black box: it re-evaluates
//! the full forward pass at perturbed inputs and never inspects tape
//! internals, so it is an independent oracle for the analytic gradients.

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = buf[i];
        buf[i] = orig + h;
        let fp = f(&buf);
        buf[i] = orig - h;
        let fm = f(&buf);
        buf[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Max over elements of |a-b| / max(|a|, |b|, floor).
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

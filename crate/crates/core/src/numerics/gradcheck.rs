use super::Tensor;

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Below this gradient norm the comparison is effectively absolute. A conv
/// bias that feeds batch norm has an exactly-zero true gradient, and central
/// differences of it are pure rounding noise.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    diff / analytic
        .norm()
        .max(numeric.norm())
        .max(RELATIVE_ERROR_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5);
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::filled(&[3, 2], 0.3);
        let g = finite_diff_grad(|_| 4.2, &x, 1e-5);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
}

use ndarray::ArrayD;

/// Gradients smaller than this are compared in absolute rather than relative terms.
const REL_FLOOR: f64 = 1e-6;

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient<F>(mut f: F, x: &ArrayD<f64>, eps: f64) -> ArrayD<f64>
where
    F: FnMut(&ArrayD<f64>) -> f64,
{
    let all: Vec<usize> = (0..x.len()).collect();
    numeric_gradient_at(&mut f, x, &all, eps)
}

/// Central differences restricted to the flat indices in `at`; other entries are 0.
pub fn numeric_gradient_at<F>(f: &mut F, x: &ArrayD<f64>, at: &[usize], eps: f64) -> ArrayD<f64>
where
    F: FnMut(&ArrayD<f64>) -> f64,
{
    let mut probe = x.as_standard_layout().to_owned();
    let mut grad = ArrayD::zeros(x.raw_dim());
    for &i in at {
        let orig = probe.as_slice().expect("contiguous")[i];
        probe.as_slice_mut().expect("contiguous")[i] = orig + eps;
        let up = f(&probe);
        probe.as_slice_mut().expect("contiguous")[i] = orig - eps;
        let down = f(&probe);
        probe.as_slice_mut().expect("contiguous")[i] = orig;
        grad.as_slice_mut().expect("contiguous")[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// `max |a − n| / max(|a|, |n|, 1e-6)` over all entries.
pub fn max_relative_error(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Compares `analytic` to central differences of `f` at `x` and returns the
/// max relative error. When `at` is given only those flat indices are probed.
pub fn grad_check<F>(mut f: F, x: &ArrayD<f64>, analytic: &ArrayD<f64>, eps: f64, at: Option<&[usize]>) -> f64
where
    F: FnMut(&ArrayD<f64>) -> f64,
{
    match at {
        None => max_relative_error(analytic, &numeric_gradient(f, x, eps)),
        Some(idx) => {
            let num = numeric_gradient_at(&mut f, x, idx, eps);
            let analytic = analytic.as_standard_layout();
            let a = analytic.as_slice().expect("contiguous");
            let n = num.as_slice().expect("contiguous");
            idx.iter()
                .map(|&i| (a[i] - n[i]).abs() / a[i].abs().max(n[i].abs()).max(REL_FLOOR))
                .fold(0.0, f64::max)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn quadratic_gradient() {
        let x = arr1(&[1.0, -2.0, 0.5]).into_dyn();
        let g = numeric_gradient(|v| v.iter().map(|a| a * a).sum(), &x, 1e-4);
        let exact = x.mapv(|a| 2.0 * a);
        assert!(max_relative_error(&exact, &g) < 1e-8);
    }

    #[test]
    fn subset_probe_ignores_other_entries() {
        let x = arr1(&[1.0, 2.0, 3.0]).into_dyn();
        let wrong = arr1(&[2.0, 999.0, 6.0]).into_dyn();
        let err = grad_check(|v| v.iter().map(|a| a * a).sum(), &x, &wrong, 1e-4, Some(&[0, 2]));
        assert!(err < 1e-8);
    }
}

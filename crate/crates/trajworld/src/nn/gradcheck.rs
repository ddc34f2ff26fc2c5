//! Central finite-difference utilities for gradient verification. These only
//! ever invoke the *forward* evaluation closure handed to them, so they stay
//! independent of the backward pass they are used to check.

use crate::tensor::Tensor;

/// Central difference d loss / d params[param_idx][elem_idx] with step `h`.
pub fn central_difference(
    loss: &mut dyn FnMut(&[Tensor]) -> f64,
    params: &[Tensor],
    param_idx: usize,
    elem_idx: usize,
    h: f64,
) -> f64 {
    let mut work: Vec<Tensor> = params.to_vec();
    let orig = work[param_idx].data()[elem_idx];
    work[param_idx].data_mut()[elem_idx] = orig + h;
    let plus = loss(&work);
    work[param_idx].data_mut()[elem_idx] = orig - h;
    let minus = loss(&work);
    (plus - minus) / (2.0 * h)
}

/// Relative error with an absolute floor, the comparison used by all
/// gradient-verification tests.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Check `probes` (param_idx, elem_idx) pairs of analytic gradients against
/// central differences. Returns the worst relative error observed.
pub fn check_probes(
    loss: &mut dyn FnMut(&[Tensor]) -> f64,
    params: &[Tensor],
    analytic: &[Tensor],
    probes: &[(usize, usize)],
    h: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for &(pi, ei) in probes {
        let fd = central_difference(loss, params, pi, ei, h);
        let an = analytic[pi].data()[ei];
        worst = worst.max(relative_error(an, fd));
    }
    worst
}

/// Deterministically pick `count` probe coordinates across parameter tensors.
pub fn pick_probes(
    shapes: &[Vec<usize>],
    count: usize,
    rng: &mut impl rand::Rng,
) -> Vec<(usize, usize)> {
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    let total: usize = sizes.iter().sum();
    assert!(total > 0);
    let mut probes = Vec::with_capacity(count);
    for _ in 0..count {
        let mut flat = rng.random_range(0..total);
        for (pi, &sz) in sizes.iter().enumerate() {
            if flat < sz {
                probes.push((pi, flat));
                break;
            }
            flat -= sz;
        }
    }
    probes
}

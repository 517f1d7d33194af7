//! Finite-difference verification of the network's backpropagation.

use crate::mlp::Mlp;

/// Compares [`Mlp::gradient`] against central differences of [`Mlp::loss`].
///
/// Relative error is measured per parameter group (each weight matrix and
/// bias vector) as `|analytic - numeric| / max(|numeric|, 1e-7)` in the
/// Euclidean norm; the largest group error is returned.
pub fn check_gradient(net: &Mlp, inputs: &[Vec<f64>], targets: &[f64], epsilon: f64) -> f64 {
    check_gradient_with(net, inputs, targets, epsilon, |n, x, t| n.gradient(x, t))
}

/// [`check_gradient`] with a caller-supplied analytic gradient, so the
/// harness itself can be tested against a known-bad gradient.
pub fn check_gradient_with<F>(
    net: &Mlp,
    inputs: &[Vec<f64>],
    targets: &[f64],
    epsilon: f64,
    analytic: F,
) -> f64
where
    F: Fn(&Mlp, &[Vec<f64>], &[f64]) -> Vec<f64>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let base = net.params();
    let grad = analytic(net, inputs, targets);
    let mut probe = net.clone();
    let mut numeric = vec![0.0; base.len()];
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + epsilon;
        probe.set_params(&p);
        let up = probe.loss(inputs, targets);
        p[i] = base[i] - epsilon;
        probe.set_params(&p);
        let down = probe.loss(inputs, targets);
        p[i] = base[i];
        numeric[i] = (up - down) / (2.0 * epsilon);
    }
    net.param_groups()
        .into_iter()
        .map(|g| {
            let diff = grad[g.clone()]
                .iter()
                .zip(&numeric[g.clone()])
                .map(|(a, n)| (a - n).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = numeric[g].iter().map(|n| n * n).sum::<f64>().sqrt();
            diff / scale.max(1e-7)
        })
        .fold(0.0, f64::max)
}

//! Bound gradients w.r.t. the per-feature radii, and the classification
//! margin built from them.
//!
//! The partials are accumulated inside the propagation loop itself (see the
//! engine in `propagation`), following the branch each elementwise max/min
//! actually selected. At exact ties the quadratic branch is the deterministic
//! choice.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Budget, Network};
use crate::propagation::{self, Algorithm, LayerBounds};

/// Partials of the output bounds w.r.t. `eps`, both `n_out x n_in`.
#[derive(Debug, Clone)]
pub struct BoundGrad {
    pub lower: Matrix,
    pub upper: Matrix,
    /// Same pair for every level, input-adjacent level first.
    pub per_level: Vec<(Matrix, Matrix)>,
}

/// Certification margin `v` and its Jacobian w.r.t. `eps`.
///
/// Row `j` compares the true class's lower bound against the upper bound of
/// the j-th other class (ascending, class `c` skipped).
#[derive(Debug, Clone)]
pub struct Margin {
    pub values: Vec<f64>,
    pub grad: Matrix,
    pub class: usize,
    pub delta: f64,
}

/// Combined bounds together with their radius gradients.
///
/// The bound values are identical to `bounds_combined`; the gradient pass
/// never perturbs the primal recursion.
pub fn bounds_with_grad(net: &Network, budget: &Budget) -> Result<(LayerBounds, BoundGrad)> {
    bounds_with_grad_for(net, budget, Algorithm::Combined)
}

/// Same, for a chosen propagator.
pub fn bounds_with_grad_for(
    net: &Network,
    budget: &Budget,
    algo: Algorithm,
) -> Result<(LayerBounds, BoundGrad)> {
    let out = propagation::chain_engine(net, budget, algo, true, false)?;
    let grads = out.grads.unwrap();
    let (lower, upper) = grads.per_level.last().unwrap().clone();
    Ok((out.bounds, BoundGrad { lower, upper, per_level: grads.per_level }))
}

/// Margin values only, from bounds already in hand.
pub fn margin_values(bounds: &LayerBounds, class: usize, delta: f64) -> Result<Vec<f64>> {
    let lo = bounds.output_lower();
    let hi = bounds.output_upper();
    if class >= lo.len() || lo.len() < 2 {
        return Err(Error::InvalidArg(format!(
            "class {class} out of range for {} outputs",
            lo.len()
        )));
    }
    Ok((0..lo.len())
        .filter(|&j| j != class)
        .map(|j| lo[class] - hi[j] - delta)
        .collect())
}

/// Margin and its Jacobian at one budget.
pub fn margin_and_grad(net: &Network, budget: &Budget, class: usize, delta: f64) -> Result<Margin> {
    let (bounds, grad) = bounds_with_grad(net, budget)?;
    let values = margin_values(&bounds, class, delta)?;
    let n1 = budget.dim();
    let mut jac = Matrix::zeros(values.len(), n1);
    let mut row = 0;
    for j in 0..bounds.output_lower().len() {
        if j == class {
            continue;
        }
        for s in 0..n1 {
            jac.set(row, s, grad.lower.get(class, s) - grad.upper.get(j, s));
        }
        row += 1;
    }
    Ok(Margin { values, grad: jac, class, delta })
}

/// Outcome of comparing analytic bound gradients against central finite
/// differences, coordinate by coordinate.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckReport {
    /// All (side, output, radius) coordinates.
    pub total: usize,
    /// Coordinates within tolerance.
    pub within_tol: usize,
    /// Disagreeing coordinates where a relaxation case or branch selection
    /// flipped under the probe; subgradients legitimately differ there.
    pub excused: usize,
    /// Disagreeing coordinates without a detected flip.
    pub failed: usize,
    /// Radius components whose probes flipped a case or a selection.
    pub flipped_components: usize,
    /// Largest relative error over coordinates without a flip.
    pub max_rel_err: f64,
}

/// Central-difference check of the combined bound gradients.
///
/// Requires `h` smaller than every radius so both probes stay valid.
pub fn finite_diff_check(
    net: &Network,
    budget: &Budget,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if h <= 0.0 {
        return Err(Error::InvalidArg("step h must be positive".into()));
    }
    if budget.eps().iter().any(|&e| e < h) {
        return Err(Error::InvalidArg("every radius must be at least h for a central probe".into()));
    }
    let (_, grad) = bounds_with_grad(net, budget)?;
    let (_, base_trace) = propagation::bounds_combined_traced(net, budget)?;
    let n1 = budget.dim();
    let n_out = net.output_size();
    let mut report = GradCheckReport::default();

    for s in 0..n1 {
        let probe = |delta: f64| -> Result<_> {
            let mut eps = budget.eps().to_vec();
            eps[s] += delta;
            let b = Budget::new(budget.x().to_vec(), eps)?;
            propagation::bounds_combined_traced(net, &b)
        };
        let (plus, plus_trace) = probe(h)?;
        let (minus, minus_trace) = probe(-h)?;
        let flipped = plus_trace != base_trace || minus_trace != base_trace;
        if flipped {
            report.flipped_components += 1;
        }
        for k in 0..n_out {
            for (analytic, fd) in [
                (
                    grad.lower.get(k, s),
                    (plus.output_lower()[k] - minus.output_lower()[k]) / (2.0 * h),
                ),
                (
                    grad.upper.get(k, s),
                    (plus.output_upper()[k] - minus.output_upper()[k]) / (2.0 * h),
                ),
            ] {
                report.total += 1;
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0);
                if !flipped {
                    report.max_rel_err = report.max_rel_err.max(rel);
                }
                if rel <= tol {
                    report.within_tol += 1;
                } else if flipped {
                    report.excused += 1;
                } else {
                    report.failed += 1;
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{Activation, Layer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_logit_line() -> Network {
        Network::new(
            vec![Layer {
                weight: Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(),
                bias: vec![0.0, 0.0],
            }],
            Activation::Relu,
        )
        .unwrap()
    }

    #[test]
    fn affine_layer_gradients_are_signed_weight_magnitudes() {
        let net = two_logit_line();
        let budget = Budget::uniform(vec![0.5], 0.2).unwrap();
        let (_, g) = bounds_with_grad(&net, &budget).unwrap();
        assert_eq!(g.lower.to_rows(), vec![vec![-1.0], vec![-1.0]]);
        assert_eq!(g.upper.to_rows(), vec![vec![1.0], vec![1.0]]);
    }

    #[test]
    fn toy_quadratic_lower_gradient() {
        // hidden sees x1 - x2; the accumulated lower bound loses half of each
        // radius on both sides
        let net = Network::new(
            vec![
                Layer {
                    weight: Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap(),
                    bias: vec![0.0],
                },
                Layer {
                    weight: Matrix::from_rows(&[vec![1.0]]).unwrap(),
                    bias: vec![0.0],
                },
            ],
            Activation::Relu,
        )
        .unwrap();
        let budget = Budget::uniform(vec![0.5, 0.5], 0.1).unwrap();
        let (bounds, g) = bounds_with_grad_for(&net, &budget, Algorithm::Quadratic).unwrap();
        assert!((bounds.output_lower()[0] + 0.1).abs() < 1e-12);
        assert!((g.lower.get(0, 0) + 0.5).abs() < 1e-12);
        assert!((g.lower.get(0, 1) + 0.5).abs() < 1e-12);

        // central differences on the standalone quadratic bounds agree
        let h = 1e-6;
        for s in 0..2 {
            let mut ep = budget.eps().to_vec();
            ep[s] += h;
            let up = crate::propagation::bounds_quadratic(
                &net,
                &Budget::new(budget.x().to_vec(), ep.clone()).unwrap(),
            )
            .unwrap();
            ep[s] -= 2.0 * h;
            let dn = crate::propagation::bounds_quadratic(
                &net,
                &Budget::new(budget.x().to_vec(), ep).unwrap(),
            )
            .unwrap();
            let fd = (up.output_lower()[0] - dn.output_lower()[0]) / (2.0 * h);
            assert!((fd - g.lower.get(0, s)).abs() < 1e-6);
        }
    }

    #[test]
    fn primal_values_match_plain_combined() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let net =
                crate::trainer::init_network(&[3, 9, 7, 4], Activation::Relu, rng.gen()).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let eps: Vec<f64> = (0..3).map(|_| rng.gen_range(0.02..0.3)).collect();
            let budget = Budget::new(x, eps).unwrap();
            let plain = crate::propagation::bounds_combined(&net, &budget).unwrap();
            let (with_grad, _) = bounds_with_grad(&net, &budget).unwrap();
            assert_eq!(plain.lower, with_grad.lower);
            assert_eq!(plain.upper, with_grad.upper);
        }
    }

    #[test]
    fn finite_differences_agree_or_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut total = 0usize;
        let mut ok = 0usize;
        let mut failed = 0usize;
        for _ in 0..30 {
            let hidden: Vec<usize> = (0..rng.gen_range(1..=3usize))
                .map(|_| rng.gen_range(3..=10))
                .collect();
            let mut sizes = vec![rng.gen_range(2..=4usize)];
            sizes.extend(hidden);
            sizes.push(3);
            let net = crate::trainer::init_network(&sizes, Activation::Relu, rng.gen()).unwrap();
            let n1 = sizes[0];
            let x: Vec<f64> = (0..n1).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let eps: Vec<f64> = (0..n1).map(|_| rng.gen_range(0.02..0.3)).collect();
            let budget = Budget::new(x, eps).unwrap();
            let rep = finite_diff_check(&net, &budget, 1e-6, 1e-4).unwrap();
            total += rep.total;
            ok += rep.within_tol;
            failed += rep.failed;
        }
        assert_eq!(failed, 0, "disagreement without a detected branch flip");
        assert!(ok as f64 >= 0.95 * total as f64, "ok {ok} of {total}");
    }

    #[test]
    fn margin_linear_classifier() {
        let net = two_logit_line();
        let budget = Budget::uniform(vec![0.5], 0.2).unwrap();
        let m = margin_and_grad(&net, &budget, 0, 0.0).unwrap();
        // bounds: l0 = 0.3, u1 = -0.3
        assert!((m.values[0] - 0.6).abs() < 1e-12);
        assert_eq!(m.grad.to_rows(), vec![vec![-2.0]]);
    }

    #[test]
    fn margin_row_identity_and_delta_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let net = crate::trainer::init_network(&[2, 6, 4], Activation::Relu, 5).unwrap();
        let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let budget = Budget::new(x, vec![0.05, 0.1]).unwrap();
        let (bounds, _) = bounds_with_grad(&net, &budget).unwrap();
        let c = 1usize;
        let delta = 1e-3;
        let m = margin_and_grad(&net, &budget, c, delta).unwrap();
        let lo = bounds.output_lower();
        let hi = bounds.output_upper();
        let mut row = 0;
        for j in 0..lo.len() {
            if j == c {
                continue;
            }
            assert_eq!(m.values[row] + delta + hi[j] - lo[c], 0.0);
            row += 1;
        }

        let shifted = margin_and_grad(&net, &budget, c, delta + 0.25).unwrap();
        for (a, b) in m.values.iter().zip(&shifted.values) {
            assert!((a - 0.25 - b).abs() < 1e-15);
        }
        assert_eq!(m.grad, shifted.grad);
    }

    #[test]
    fn zero_radius_margin_is_forward_margin() {
        let net = crate::trainer::init_network(&[2, 5, 3], Activation::Relu, 11).unwrap();
        let x = vec![0.4, -0.7];
        let budget = Budget::new(x.clone(), vec![0.0, 0.0]).unwrap();
        let z = net.forward(&x).unwrap();
        let m = margin_and_grad(&net, &budget, 2, 0.0).unwrap();
        let expect: Vec<f64> = (0..3).filter(|&j| j != 2).map(|j| z[2] - z[j]).collect();
        for (a, b) in m.values.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_class() {
        let net = two_logit_line();
        let budget = Budget::uniform(vec![0.5], 0.1).unwrap();
        assert!(margin_and_grad(&net, &budget, 2, 0.0).is_err());
    }
}

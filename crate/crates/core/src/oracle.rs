//! Independent verification machinery: randomized soundness sampling,
//! branch-and-bound output ranges for tiny inputs, and brute-force prediction
//! constancy inside a certified box.
//!
//! Nothing here reuses the relaxation-based recursions beyond interval
//! propagation on sub-boxes, so these checks can catch bugs in the tighter
//! propagators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::map_indices;
use crate::model::{Budget, ForwardModel, Network};
use crate::propagation::{bounds_simple, LayerBounds};

/// Tolerated floating-point slack when comparing sampled logits to bounds.
pub const SOUNDNESS_SLACK: f64 = 1e-9;

const SAMPLE_BLOCK: usize = 1024;

/// Counts sampled box points whose logits escape the claimed output bounds.
///
/// Sample `i` draws its perturbation from an independent, stream-indexed
/// generator, so the count is identical for a fixed seed no matter how the
/// work is split across threads.
pub fn sample_soundness<M: ForwardModel + Sync>(
    model: &M,
    budget: &Budget,
    bounds: &LayerBounds,
    n_samples: usize,
    seed: u64,
) -> Result<usize> {
    sample_soundness_opts(model, budget, bounds, n_samples, seed, 0)
}

/// Same, with an explicit worker count (0 = default pool, 1 = sequential).
pub fn sample_soundness_opts<M: ForwardModel + Sync>(
    model: &M,
    budget: &Budget,
    bounds: &LayerBounds,
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> Result<usize> {
    if n_samples == 0 {
        return Err(Error::InvalidArg("need at least one sample".into()));
    }
    if budget.dim() != model.input_size() {
        return Err(Error::DimMismatch("budget does not fit the model input".into()));
    }
    let lo = bounds.output_lower();
    let hi = bounds.output_upper();
    if lo.len() != model.output_size() {
        return Err(Error::DimMismatch("bounds do not fit the model output".into()));
    }
    let blocks = n_samples.div_ceil(SAMPLE_BLOCK);
    let counts = map_indices(blocks, workers, |b| {
        let start = b * SAMPLE_BLOCK;
        let end = (start + SAMPLE_BLOCK).min(n_samples);
        let mut violations = 0usize;
        let mut point = vec![0.0; budget.dim()];
        for i in start..end {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            for (j, p) in point.iter_mut().enumerate() {
                *p = budget.x()[j] + budget.eps()[j] * rng.gen_range(-1.0..=1.0);
            }
            let z = model.forward(&point).expect("sampled point has the right arity");
            let escaped = z
                .iter()
                .enumerate()
                .any(|(k, &v)| v < lo[k] - SOUNDNESS_SLACK || v > hi[k] + SOUNDNESS_SLACK);
            if escaped {
                violations += 1;
            }
        }
        violations
    });
    Ok(counts.into_iter().sum())
}

/// Output-range estimate from recursive input-box bisection.
///
/// `lo`/`hi` hold the hull of all evaluated points, so they always lie inside
/// the true range. Bisection stops once the certified outer envelope of the
/// leaf partition sits within `tol` of this hull; the true range is then
/// pinned between the two, making the returned range `tol`-accurate.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeEstimate {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Remaining outer-envelope overhang per logit.
    pub gap_to_certified: Vec<f64>,
    pub converged: bool,
    pub nodes_expanded: usize,
}

struct BoxLeaf {
    lo: Vec<f64>,
    hi: Vec<f64>,
    cert_lo: Vec<f64>,
    cert_hi: Vec<f64>,
}

fn eval_box(net: &Network, lo: &[f64], hi: &[f64]) -> Result<(BoxLeaf, Vec<f64>, Vec<f64>)> {
    let center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let radius: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
    let bounds = bounds_simple(net, &Budget::new(center.clone(), radius)?)?;
    let n_out = net.output_size();
    let mut emp_lo = vec![f64::INFINITY; n_out];
    let mut emp_hi = vec![f64::NEG_INFINITY; n_out];
    let mut absorb = |z: Vec<f64>| {
        for k in 0..n_out {
            emp_lo[k] = emp_lo[k].min(z[k]);
            emp_hi[k] = emp_hi[k].max(z[k]);
        }
    };
    absorb(net.forward(&center)?);
    // corners of the non-degenerate dimensions
    let free: Vec<usize> =
        (0..lo.len()).filter(|&d| hi[d] > lo[d]).take(12).collect();
    for mask in 0..(1usize << free.len()) {
        let mut p = center.clone();
        for (bit, &d) in free.iter().enumerate() {
            p[d] = if mask >> bit & 1 == 1 { hi[d] } else { lo[d] };
        }
        absorb(net.forward(&p)?);
    }
    Ok((
        BoxLeaf {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            cert_lo: bounds.output_lower().to_vec(),
            cert_hi: bounds.output_upper().to_vec(),
        },
        emp_lo,
        emp_hi,
    ))
}

/// Brackets the true output range over the budget box by bisecting the input
/// dimension with the largest radius-scaled width (ties to the lowest index)
/// until every certified bound sits within `tol` of a sampled value.
pub fn exact_range_bb(
    net: &Network,
    budget: &Budget,
    tol: f64,
    max_nodes: usize,
) -> Result<RangeEstimate> {
    exact_range_bb_opts(net, budget, tol, max_nodes, 0)
}

pub fn exact_range_bb_opts(
    net: &Network,
    budget: &Budget,
    tol: f64,
    max_nodes: usize,
    workers: usize,
) -> Result<RangeEstimate> {
    if tol <= 0.0 {
        return Err(Error::InvalidArg("tol must be positive".into()));
    }
    if budget.dim() != net.input_size() {
        return Err(Error::DimMismatch("budget does not fit the model input".into()));
    }
    let n_out = net.output_size();
    let root_lo = crate::linalg::vsub(budget.x(), budget.eps());
    let root_hi: Vec<f64> = budget.x().iter().zip(budget.eps()).map(|(x, e)| x + e).collect();

    let mut emp_lo = vec![f64::INFINITY; n_out];
    let mut emp_hi = vec![f64::NEG_INFINITY; n_out];
    let (root, e_lo, e_hi) = eval_box(net, &root_lo, &root_hi)?;
    for k in 0..n_out {
        emp_lo[k] = emp_lo[k].min(e_lo[k]);
        emp_hi[k] = emp_hi[k].max(e_hi[k]);
    }
    let mut leaves = vec![root];
    let mut nodes_expanded = 0usize;

    loop {
        let mut cert_lo = vec![f64::INFINITY; n_out];
        let mut cert_hi = vec![f64::NEG_INFINITY; n_out];
        for leaf in &leaves {
            for k in 0..n_out {
                cert_lo[k] = cert_lo[k].min(leaf.cert_lo[k]);
                cert_hi[k] = cert_hi[k].max(leaf.cert_hi[k]);
            }
        }
        let gaps: Vec<f64> = (0..n_out)
            .map(|k| (cert_hi[k] - emp_hi[k]).max(emp_lo[k] - cert_lo[k]).max(0.0))
            .collect();
        let converged = gaps.iter().all(|&g| g <= tol);
        let estimate = |converged| RangeEstimate {
            lo: emp_lo.clone(),
            hi: emp_hi.clone(),
            gap_to_certified: gaps.clone(),
            converged,
            nodes_expanded,
        };
        if converged {
            return Ok(estimate(true));
        }
        if nodes_expanded >= max_nodes {
            return Ok(estimate(false));
        }

        // split every leaf that still pushes the certified envelope past the
        // sampled one
        let needs_split = |leaf: &BoxLeaf| {
            (0..n_out).any(|k| {
                leaf.cert_hi[k] > emp_hi[k] + tol || leaf.cert_lo[k] < emp_lo[k] - tol
            })
        };
        let split_dim = |leaf: &BoxLeaf| -> Option<usize> {
            let mut best: Option<(usize, f64)> = None;
            for d in 0..leaf.lo.len() {
                let e = budget.eps()[d];
                if e <= 0.0 {
                    continue;
                }
                let w = (leaf.hi[d] - leaf.lo[d]) / e;
                if w <= 1e-9 {
                    continue;
                }
                if best.map_or(true, |(_, bw)| w > bw) {
                    best = Some((d, w));
                }
            }
            best.map(|(d, _)| d)
        };

        let mut keep = Vec::new();
        let mut jobs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let mut any_split = false;
        for leaf in leaves.drain(..) {
            if nodes_expanded + jobs.len() / 2 < max_nodes && needs_split(&leaf) {
                if let Some(d) = split_dim(&leaf) {
                    let mid = 0.5 * (leaf.lo[d] + leaf.hi[d]);
                    let mut left_hi = leaf.hi.clone();
                    left_hi[d] = mid;
                    let mut right_lo = leaf.lo.clone();
                    right_lo[d] = mid;
                    jobs.push((leaf.lo.clone(), left_hi));
                    jobs.push((right_lo, leaf.hi.clone()));
                    any_split = true;
                    continue;
                }
            }
            keep.push(leaf);
        }
        if !any_split {
            return Ok(estimate(false));
        }
        nodes_expanded += jobs.len() / 2;

        let evaluated = map_indices(jobs.len(), workers, |i| {
            let (lo, hi) = &jobs[i];
            eval_box(net, lo, hi)
        });
        leaves = keep;
        for item in evaluated {
            let (leaf, e_lo, e_hi) = item?;
            for k in 0..n_out {
                emp_lo[k] = emp_lo[k].min(e_lo[k]);
                emp_hi[k] = emp_hi[k].max(e_hi[k]);
            }
            leaves.push(leaf);
        }
    }
}

const FALLBACK_SAMPLES: usize = 1_000_000;
const FALLBACK_SEED: u64 = 0x70c5;

/// True when the model picks `class` at every probed point of the box.
///
/// Probes a full `grid_per_dim`-per-axis grid when it has at most 1e7 points,
/// otherwise one million seeded random points. Argmax ties go to the lowest
/// logit index.
pub fn prediction_constant<M: ForwardModel + Sync>(
    model: &M,
    budget: &Budget,
    class: usize,
    grid_per_dim: usize,
) -> Result<bool> {
    if grid_per_dim < 2 {
        return Err(Error::InvalidArg("grid_per_dim must be at least 2".into()));
    }
    if class >= model.output_size() {
        return Err(Error::InvalidArg(format!("class {class} out of range")));
    }
    if budget.dim() != model.input_size() {
        return Err(Error::DimMismatch("budget does not fit the model input".into()));
    }
    let d = budget.dim();
    let total = (grid_per_dim as f64).powi(d as i32);

    let predicts_class = |p: &[f64]| -> Result<bool> {
        let z = model.forward(p)?;
        let mut arg = 0usize;
        for k in 1..z.len() {
            if z[k] > z[arg] {
                arg = k;
            }
        }
        Ok(arg == class)
    };

    if total <= 1e7 {
        let total = total as usize;
        let block = 8192usize;
        let blocks = total.div_ceil(block);
        let oks = map_indices(blocks, 0, |b| -> Result<bool> {
            let mut p = vec![0.0; d];
            for mut idx in b * block..((b + 1) * block).min(total) {
                for j in 0..d {
                    let t = idx % grid_per_dim;
                    idx /= grid_per_dim;
                    p[j] = budget.x()[j] - budget.eps()[j]
                        + 2.0 * budget.eps()[j] * t as f64 / (grid_per_dim - 1) as f64;
                }
                if !predicts_class(&p)? {
                    return Ok(false);
                }
            }
            Ok(true)
        });
        for ok in oks {
            if !ok? {
                return Ok(false);
            }
        }
        Ok(true)
    } else {
        let blocks = FALLBACK_SAMPLES.div_ceil(SAMPLE_BLOCK);
        let oks = map_indices(blocks, 0, |b| -> Result<bool> {
            let mut p = vec![0.0; d];
            for i in b * SAMPLE_BLOCK..((b + 1) * SAMPLE_BLOCK).min(FALLBACK_SAMPLES) {
                let mut rng = ChaCha8Rng::seed_from_u64(FALLBACK_SEED);
                rng.set_stream(i as u64);
                for (j, pj) in p.iter_mut().enumerate() {
                    *pj = budget.x()[j] + budget.eps()[j] * rng.gen_range(-1.0..=1.0);
                }
                if !predicts_class(&p)? {
                    return Ok(false);
                }
            }
            Ok(true)
        });
        for ok in oks {
            if !ok? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{Activation, Layer};
    use crate::propagation::bounds_combined;
    use crate::trainer::init_network;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_net_two() -> Network {
        Network::new(
            vec![
                Layer {
                    weight: Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap(),
                    bias: vec![0.0, 0.0],
                },
                Layer {
                    weight: Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
                    bias: vec![0.0],
                },
            ],
            Activation::Relu,
        )
        .unwrap()
    }

    fn toy_net_one() -> Network {
        Network::new(
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
        .unwrap()
    }

    #[test]
    fn correct_bounds_have_no_violations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..10 {
            let net = init_network(&[3, 8, 6, 2], Activation::Relu, trial).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let eps: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..0.3)).collect();
            let budget = Budget::new(x, eps).unwrap();
            let bounds = bounds_combined(&net, &budget).unwrap();
            let v = sample_soundness(&net, &budget, &bounds, 20_000, 7).unwrap();
            assert_eq!(v, 0);
        }
    }

    #[test]
    fn planted_fault_is_detected() {
        let net = init_network(&[2, 10, 3], Activation::Relu, 3).unwrap();
        let budget = Budget::new(vec![0.2, -0.4], vec![0.3, 0.3]).unwrap();
        let mut bounds = bounds_combined(&net, &budget).unwrap();
        let last = bounds.lower.len() - 1;
        for k in 0..bounds.upper[last].len() {
            let range = bounds.upper[last][k] - bounds.lower[last][k];
            bounds.upper[last][k] -= 0.5 * range;
        }
        let v = sample_soundness(&net, &budget, &bounds, 20_000, 11).unwrap();
        assert!(v > 0, "halved upper bounds must be violated");
    }

    #[test]
    fn zero_radius_has_no_violations() {
        let net = init_network(&[2, 5, 2], Activation::Relu, 9).unwrap();
        let budget = Budget::new(vec![0.1, 0.7], vec![0.0, 0.0]).unwrap();
        let bounds = bounds_combined(&net, &budget).unwrap();
        assert_eq!(sample_soundness(&net, &budget, &bounds, 1_000, 5).unwrap(), 0);
    }

    #[test]
    fn sampling_is_seed_deterministic_across_worker_counts() {
        let net = init_network(&[2, 8, 3], Activation::Relu, 4).unwrap();
        let budget = Budget::new(vec![0.0, 0.0], vec![0.4, 0.2]).unwrap();
        let mut bounds = bounds_combined(&net, &budget).unwrap();
        // shrink a little so some samples actually violate
        let last = bounds.lower.len() - 1;
        for k in 0..bounds.upper[last].len() {
            let range = bounds.upper[last][k] - bounds.lower[last][k];
            bounds.upper[last][k] -= 0.25 * range;
        }
        let a = sample_soundness_opts(&net, &budget, &bounds, 30_000, 42, 1).unwrap();
        let b = sample_soundness_opts(&net, &budget, &bounds, 30_000, 42, 0).unwrap();
        let c = sample_soundness_opts(&net, &budget, &bounds, 30_000, 42, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(a > 0);
    }

    #[test]
    fn bb_single_affine_is_exact_without_splits() {
        let net = Network::new(
            vec![Layer {
                weight: Matrix::from_rows(&[vec![2.0, -1.0], vec![0.5, 0.25]]).unwrap(),
                bias: vec![0.3, -0.1],
            }],
            Activation::Relu,
        )
        .unwrap();
        let budget = Budget::new(vec![0.1, 0.2], vec![0.3, 0.4]).unwrap();
        let r = exact_range_bb(&net, &budget, 1e-6, 100).unwrap();
        assert!(r.converged);
        assert_eq!(r.nodes_expanded, 0);
        let w = &net.layers()[0].weight;
        for k in 0..2 {
            let mut lo = net.layers()[0].bias[k];
            let mut hi = lo;
            for j in 0..2 {
                lo += w.get(k, j) * budget.x()[j] - w.get(k, j).abs() * budget.eps()[j];
                hi += w.get(k, j) * budget.x()[j] + w.get(k, j).abs() * budget.eps()[j];
            }
            assert!((r.lo[k] - lo).abs() < 1e-9);
            assert!((r.hi[k] - hi).abs() < 1e-9);
        }
    }

    #[test]
    fn bb_recovers_toy_ranges() {
        // true range of both difference networks is [0, 0.2] at radius 0.1
        let budget = Budget::uniform(vec![0.5, 0.5], 0.1).unwrap();
        for net in [toy_net_one(), toy_net_two()] {
            let r = exact_range_bb(&net, &budget, 1e-4, 10_000).unwrap();
            assert!(r.converged, "gaps {:?}", r.gap_to_certified);
            assert!((r.lo[0] - 0.0).abs() <= 1e-4);
            assert!((r.hi[0] - 0.2).abs() <= 1e-4);
        }
    }

    #[test]
    fn bb_range_sits_inside_certified_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..10 {
            let net = init_network(&[2, 9, 3], Activation::Relu, 100 + trial).unwrap();
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let budget = Budget::new(x, vec![0.2, 0.15]).unwrap();
            let r = exact_range_bb(&net, &budget, 1e-3, 20_000).unwrap();
            assert!(r.converged);
            let c = bounds_combined(&net, &budget).unwrap();
            for k in 0..3 {
                assert!(c.output_lower()[k] <= r.lo[k] + 1e-9);
                assert!(c.output_upper()[k] >= r.hi[k] - 1e-9);
            }
        }
    }

    #[test]
    fn prediction_constant_on_linear_boundary() {
        // logits (x, -x): the prediction flips exactly at the origin
        let net = Network::new(
            vec![Layer {
                weight: Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(),
                bias: vec![0.0, 0.0],
            }],
            Activation::Relu,
        )
        .unwrap();
        let safe = Budget::new(vec![0.5], vec![0.4]).unwrap();
        assert!(prediction_constant(&net, &safe, 0, 50).unwrap());
        let crossing = Budget::new(vec![0.5], vec![0.6]).unwrap();
        assert!(!prediction_constant(&net, &crossing, 0, 50).unwrap());
    }

    #[test]
    fn prediction_constant_zero_box_matches_forward() {
        let net = init_network(&[2, 6, 4], Activation::Relu, 8).unwrap();
        let x = vec![0.3, -0.3];
        let z = net.forward(&x).unwrap();
        let mut arg = 0;
        for k in 1..z.len() {
            if z[k] > z[arg] {
                arg = k;
            }
        }
        let budget = Budget::new(x, vec![0.0, 0.0]).unwrap();
        assert!(prediction_constant(&net, &budget, arg, 3).unwrap());
        let other = (arg + 1) % 4;
        assert!(!prediction_constant(&net, &budget, other, 3).unwrap());
    }
}

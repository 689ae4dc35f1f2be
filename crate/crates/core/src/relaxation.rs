//! Per-neuron linear relaxation of the activation.
//!
//! On an interval `[lo, hi]` the activation is squeezed between two parallel
//! lines: `slope*x + lower <= act(x) <= slope*x + upper`. For ReLU the slope
//! and offsets have the usual three-case closed form. For smooth activations
//! the slope is the chord slope and the offsets come from the extrema of
//! `act(x) - slope*x`, whose locations invert the activation derivative in
//! closed form.
//!
//! The partials of `(slope, lower, upper)` with respect to `lo` and `hi` are
//! what lets bound gradients flow through the relaxation. At the extremum
//! locations the envelope is stationary, so those locations are held fixed
//! when differentiating.

use crate::error::{Error, Result};
use crate::model::Activation;

/// Below this interval width the relaxation collapses to a single tangent
/// line, avoiding 0/0 in the slope formulas.
pub const DEGENERACY_WIDTH: f64 = 1e-12;

/// Parallel-line envelope of the activation on an interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relaxation {
    /// Shared slope of both lines.
    pub slope: f64,
    /// Offset of the lower line.
    pub lower: f64,
    /// Offset of the upper line.
    pub upper: f64,
}

/// Which formula produced the relaxation. Bound gradients are only smooth
/// within one case; tests use this to detect case flips under perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxCase {
    /// Interval width under [`DEGENERACY_WIDTH`].
    Degenerate,
    /// ReLU with `hi <= 0`.
    StableInactive,
    /// ReLU with `lo >= 0`.
    StableActive,
    /// ReLU with `lo < 0 < hi`.
    Unstable,
    /// Smooth activation; flags say whether each offset came from an interior
    /// extremum rather than an endpoint.
    Chord { lower_interior: bool, upper_interior: bool },
}

/// Partials of the relaxation parameters w.r.t. the interval ends.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelaxationGrad {
    pub slope_lo: f64,
    pub slope_hi: f64,
    pub lower_lo: f64,
    pub lower_hi: f64,
    pub upper_lo: f64,
    pub upper_hi: f64,
}

/// Envelope of `act` on `[lo, hi]`.
pub fn relax(act: Activation, lo: f64, hi: f64) -> Result<Relaxation> {
    relax_with_case(act, lo, hi).map(|(r, _)| r)
}

pub fn relax_with_case(act: Activation, lo: f64, hi: f64) -> Result<(Relaxation, RelaxCase)> {
    if lo > hi {
        return Err(Error::InvalidArg(format!("interval [{lo}, {hi}] is reversed")));
    }
    if hi - lo < DEGENERACY_WIDTH {
        let slope = match act {
            Activation::Relu => {
                if lo > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => act.derivative(0.5 * (lo + hi)),
        };
        let offset = act.apply(lo) - slope * lo;
        return Ok((Relaxation { slope, lower: offset, upper: offset }, RelaxCase::Degenerate));
    }
    match act {
        Activation::Relu => Ok(relax_relu(lo, hi)),
        Activation::Sigmoid | Activation::Tanh => Ok(relax_smooth(act, lo, hi)),
    }
}

fn relax_relu(lo: f64, hi: f64) -> (Relaxation, RelaxCase) {
    if hi <= 0.0 {
        (Relaxation { slope: 0.0, lower: 0.0, upper: 0.0 }, RelaxCase::StableInactive)
    } else if lo >= 0.0 {
        (Relaxation { slope: 1.0, lower: 0.0, upper: 0.0 }, RelaxCase::StableActive)
    } else {
        let slope = hi / (hi - lo);
        let upper = -hi * lo / (hi - lo);
        (Relaxation { slope, lower: 0.0, upper }, RelaxCase::Unstable)
    }
}

/// Locations where the activation derivative equals the chord slope, in
/// closed form. Returns `None` when no interior stationary point exists.
fn stationary_points(act: Activation, slope: f64) -> Option<(f64, f64)> {
    match act {
        Activation::Relu => None,
        Activation::Sigmoid => {
            // act'(x) = s(1-s) = slope  =>  s = (1 +- sqrt(1-4 slope)) / 2
            let disc = 1.0 - 4.0 * slope;
            if disc <= 0.0 {
                return None;
            }
            let root = disc.sqrt();
            let x = ((1.0 + root) / (1.0 - root)).ln();
            Some((-x, x))
        }
        Activation::Tanh => {
            // act'(x) = 1 - t^2 = slope  =>  t = +- sqrt(1 - slope)
            let disc = 1.0 - slope;
            if disc <= 0.0 {
                return None;
            }
            let x = disc.sqrt().atanh();
            Some((-x, x))
        }
    }
}

fn relax_smooth(act: Activation, lo: f64, hi: f64) -> (Relaxation, RelaxCase) {
    let slope = (act.apply(hi) - act.apply(lo)) / (hi - lo);
    let gap = |x: f64| act.apply(x) - slope * x;
    // the chord makes both endpoint gaps equal; keep both for FP safety
    let end = gap(lo).max(gap(hi));
    let end_min = gap(lo).min(gap(hi));
    let (mut lower, mut upper) = (end_min, end);
    let (mut lower_interior, mut upper_interior) = (false, false);
    if let Some((x_min, x_max)) = stationary_points(act, slope) {
        if lo < x_max && x_max < hi {
            upper = upper.max(gap(x_max));
            upper_interior = true;
        }
        if lo < x_min && x_min < hi {
            lower = lower.min(gap(x_min));
            lower_interior = true;
        }
    }
    (Relaxation { slope, lower, upper }, RelaxCase::Chord { lower_interior, upper_interior })
}

/// Partials of the envelope parameters. Degenerate intervals return zeros.
pub fn relax_grad(act: Activation, lo: f64, hi: f64) -> Result<RelaxationGrad> {
    if lo > hi {
        return Err(Error::InvalidArg(format!("interval [{lo}, {hi}] is reversed")));
    }
    if hi - lo < DEGENERACY_WIDTH {
        return Ok(RelaxationGrad::default());
    }
    match act {
        Activation::Relu => {
            if hi <= 0.0 || lo >= 0.0 {
                Ok(RelaxationGrad::default())
            } else {
                let d = hi - lo;
                Ok(RelaxationGrad {
                    slope_lo: hi / (d * d),
                    slope_hi: -lo / (d * d),
                    lower_lo: 0.0,
                    lower_hi: 0.0,
                    upper_lo: -hi * hi / (d * d),
                    upper_hi: lo * lo / (d * d),
                })
            }
        }
        Activation::Sigmoid | Activation::Tanh => {
            let d = hi - lo;
            let slope = (act.apply(hi) - act.apply(lo)) / d;
            let slope_lo = (slope - act.derivative(lo)) / d;
            let slope_hi = (act.derivative(hi) - slope) / d;
            // offset = act(p) - slope * p for the defining point p; interior
            // points are stationary, endpoints contribute their own slope
            let endpoint = |d_slope_lo: f64, d_slope_hi: f64| {
                (
                    act.derivative(lo) - slope - lo * d_slope_lo,
                    -lo * d_slope_hi,
                )
            };
            let interior =
                |p: f64, d_slope_lo: f64, d_slope_hi: f64| (-p * d_slope_lo, -p * d_slope_hi);
            let (mut lower_lo, mut lower_hi) = endpoint(slope_lo, slope_hi);
            let (mut upper_lo, mut upper_hi) = (lower_lo, lower_hi);
            if let Some((x_min, x_max)) = stationary_points(act, slope) {
                if lo < x_max && x_max < hi {
                    (upper_lo, upper_hi) = interior(x_max, slope_lo, slope_hi);
                }
                if lo < x_min && x_min < hi {
                    (lower_lo, lower_hi) = interior(x_min, slope_lo, slope_hi);
                }
            }
            Ok(RelaxationGrad { slope_lo, slope_hi, lower_lo, lower_hi, upper_lo, upper_hi })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_three_cases() {
        let r = relax(Activation::Relu, -1.0, 1.0).unwrap();
        assert_eq!(r.slope, 0.5);
        assert_eq!(r.lower, 0.0);
        assert_eq!(r.upper, 0.5);

        let r = relax(Activation::Relu, 1.0, 2.0).unwrap();
        assert_eq!((r.slope, r.lower, r.upper), (1.0, 0.0, 0.0));

        let r = relax(Activation::Relu, -2.0, -1.0).unwrap();
        assert_eq!((r.slope, r.lower, r.upper), (0.0, 0.0, 0.0));
    }

    #[test]
    fn relu_ties_go_to_stable_cases() {
        let (_, case) = relax_with_case(Activation::Relu, 0.0, 1.0).unwrap();
        assert_eq!(case, RelaxCase::StableActive);
        let (_, case) = relax_with_case(Activation::Relu, -1.0, 0.0).unwrap();
        assert_eq!(case, RelaxCase::StableInactive);
    }

    #[test]
    fn rejects_reversed_interval() {
        assert!(relax(Activation::Relu, 1.0, 0.0).is_err());
    }

    #[test]
    fn sigmoid_symmetric_interval_matches_grid_oracle() {
        let (lo, hi) = (-1.0, 1.0);
        let r = relax(Activation::Sigmoid, lo, hi).unwrap();
        let expected_slope =
            (Activation::Sigmoid.apply(1.0) - Activation::Sigmoid.apply(-1.0)) / 2.0;
        assert!((r.slope - expected_slope).abs() < 1e-15);
        assert!((r.slope - 0.2311).abs() < 1e-4);

        // dense grid extrema of act(x) - slope*x
        let n = 200_000;
        let mut g_min = f64::INFINITY;
        let mut g_max = f64::NEG_INFINITY;
        for i in 0..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let g = Activation::Sigmoid.apply(x) - r.slope * x;
            g_min = g_min.min(g);
            g_max = g_max.max(g);
        }
        assert!((r.lower - g_min).abs() < 1e-9, "lower {} vs grid {}", r.lower, g_min);
        assert!((r.upper - g_max).abs() < 1e-9, "upper {} vs grid {}", r.upper, g_max);
    }

    #[test]
    fn envelope_is_sound_on_random_intervals() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for act in [Activation::Relu, Activation::Sigmoid, Activation::Tanh] {
            for _ in 0..10_000 {
                let a = rng.gen_range(-4.0..4.0);
                let b = rng.gen_range(-4.0..4.0);
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let r = relax(act, lo, hi).unwrap();
                assert!(r.lower <= r.upper);
                for _ in 0..20 {
                    let x = rng.gen_range(lo..=hi);
                    let y = act.apply(x);
                    assert!(
                        r.slope * x + r.lower <= y + 1e-12,
                        "{act:?} lower line above act at {x} in [{lo}, {hi}]"
                    );
                    assert!(
                        y <= r.slope * x + r.upper + 1e-12,
                        "{act:?} upper line below act at {x} in [{lo}, {hi}]"
                    );
                }
            }
        }
    }

    #[test]
    fn relu_gap_only_when_unstable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let a = rng.gen_range(-2.0..2.0);
            let b = rng.gen_range(-2.0..2.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let r = relax(Activation::Relu, lo, hi).unwrap();
            if lo >= 0.0 || hi <= 0.0 {
                assert_eq!(r.upper - r.lower, 0.0);
            } else if hi - lo >= DEGENERACY_WIDTH {
                assert!(r.upper - r.lower > 0.0);
            }
        }
    }

    #[test]
    fn relu_grad_unstable_example() {
        let g = relax_grad(Activation::Relu, -1.0, 1.0).unwrap();
        assert_eq!(g.slope_lo, 0.25);
        assert_eq!(g.slope_hi, 0.25);
        assert_eq!(g.upper_lo, -0.25);
        assert_eq!(g.upper_hi, 0.25);
        assert_eq!(g.lower_lo, 0.0);
        assert_eq!(g.lower_hi, 0.0);
    }

    #[test]
    fn relu_grad_stable_is_zero() {
        for (lo, hi) in [(1.0, 2.0), (-2.0, -1.0)] {
            assert_eq!(relax_grad(Activation::Relu, lo, hi).unwrap(), RelaxationGrad::default());
        }
    }

    fn fd_grad(act: Activation, lo: f64, hi: f64, h: f64) -> RelaxationGrad {
        let rl = |lo, hi| relax(act, lo, hi).unwrap();
        let (ap, am) = (rl(lo + h, hi), rl(lo - h, hi));
        let (bp, bm) = (rl(lo, hi + h), rl(lo, hi - h));
        RelaxationGrad {
            slope_lo: (ap.slope - am.slope) / (2.0 * h),
            slope_hi: (bp.slope - bm.slope) / (2.0 * h),
            lower_lo: (ap.lower - am.lower) / (2.0 * h),
            lower_hi: (bp.lower - bm.lower) / (2.0 * h),
            upper_lo: (ap.upper - am.upper) / (2.0 * h),
            upper_hi: (bp.upper - bm.upper) / (2.0 * h),
        }
    }

    #[test]
    fn relu_grad_matches_finite_differences_within_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..2_000 {
            // strictly unstable probes, kept away from the case boundary
            let lo = -rng.gen_range(1e-3..2.0f64);
            let hi = rng.gen_range(1e-3..2.0f64);
            if lo.abs().min(hi) <= 2.0 * h {
                continue;
            }
            let g = relax_grad(Activation::Relu, lo, hi).unwrap();
            let fd = fd_grad(Activation::Relu, lo, hi, h);
            for (a, b) in [
                (g.slope_lo, fd.slope_lo),
                (g.slope_hi, fd.slope_hi),
                (g.upper_lo, fd.upper_lo),
                (g.upper_hi, fd.upper_hi),
            ] {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
                assert!(rel <= 1e-6, "analytic {a} vs fd {b} at [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn smooth_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-6;
        for act in [Activation::Sigmoid, Activation::Tanh] {
            for _ in 0..500 {
                let lo = rng.gen_range(-3.0..-0.2);
                let hi = rng.gen_range(0.2..3.0);
                let g = relax_grad(act, lo, hi).unwrap();
                let fd = fd_grad(act, lo, hi, h);
                for (a, b) in [
                    (g.slope_lo, fd.slope_lo),
                    (g.slope_hi, fd.slope_hi),
                    (g.lower_lo, fd.lower_lo),
                    (g.lower_hi, fd.lower_hi),
                    (g.upper_lo, fd.upper_lo),
                    (g.upper_hi, fd.upper_hi),
                ] {
                    let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
                    assert!(rel <= 1e-4, "{act:?} analytic {a} vs fd {b} at [{lo}, {hi}]");
                }
            }
        }
    }

    #[test]
    fn degenerate_interval_is_exact_tangent() {
        for act in [Activation::Relu, Activation::Sigmoid, Activation::Tanh] {
            for x in [-1.5, 0.0, 0.75] {
                let (r, case) = relax_with_case(act, x, x).unwrap();
                assert_eq!(case, RelaxCase::Degenerate);
                assert_eq!(r.lower, r.upper);
                let y = act.apply(x);
                assert!((r.slope * x + r.lower - y).abs() < 1e-15);
            }
        }
    }
}

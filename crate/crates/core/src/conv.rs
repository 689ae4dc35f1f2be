//! Lowering of 2-D convolutions to dense matrices.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Rewrites a stride-1, no-padding convolution as a single matrix so that
/// `flatten(conv(x)) = M * flatten(x)`.
///
/// `kernel` is row-major `[out_ch][in_ch][f_h][f_w]`; inputs and outputs are
/// flattened channel-major, then rows, then columns. The result has shape
/// `(out_ch * h_out * w_out) x (in_ch * h_in * w_in)`.
pub fn lower_conv(
    in_ch: usize,
    out_ch: usize,
    f_h: usize,
    f_w: usize,
    in_h: usize,
    in_w: usize,
    kernel: &[f64],
) -> Result<Matrix> {
    if f_h == 0 || f_w == 0 || in_h == 0 || in_w == 0 || in_ch == 0 || out_ch == 0 {
        return Err(Error::InvalidArg("conv dimensions must be positive".into()));
    }
    if f_h > in_h || f_w > in_w {
        return Err(Error::InvalidArg(format!(
            "filter {f_h}x{f_w} larger than input {in_h}x{in_w}"
        )));
    }
    if kernel.len() != out_ch * in_ch * f_h * f_w {
        return Err(Error::DimMismatch(format!(
            "kernel length {} != {}*{}*{}*{}",
            kernel.len(),
            out_ch,
            in_ch,
            f_h,
            f_w
        )));
    }
    let h_out = in_h - f_h + 1;
    let w_out = in_w - f_w + 1;
    let mut m = Matrix::zeros(out_ch * h_out * w_out, in_ch * in_h * in_w);
    for oc in 0..out_ch {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let row = oc * h_out * w_out + oy * w_out + ox;
                for ic in 0..in_ch {
                    for ky in 0..f_h {
                        for kx in 0..f_w {
                            let col = ic * in_h * in_w + (oy + ky) * in_w + (ox + kx);
                            let k = kernel[((oc * in_ch + ic) * f_h + ky) * f_w + kx];
                            m.set(row, col, k);
                        }
                    }
                }
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct sliding-window convolution, the independent reference for the
    /// lowering.
    fn direct_conv(
        in_ch: usize,
        out_ch: usize,
        f_h: usize,
        f_w: usize,
        in_h: usize,
        in_w: usize,
        kernel: &[f64],
        x: &[f64],
    ) -> Vec<f64> {
        let h_out = in_h - f_h + 1;
        let w_out = in_w - f_w + 1;
        let mut out = vec![0.0; out_ch * h_out * w_out];
        for oc in 0..out_ch {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = 0.0;
                    for ic in 0..in_ch {
                        for ky in 0..f_h {
                            for kx in 0..f_w {
                                let k = kernel[((oc * in_ch + ic) * f_h + ky) * f_w + kx];
                                acc += k * x[ic * in_h * in_w + (oy + ky) * in_w + (ox + kx)];
                            }
                        }
                    }
                    out[oc * h_out * w_out + oy * w_out + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn pointwise_conv_is_scaling() {
        let c = 3.25;
        let m = lower_conv(1, 1, 1, 1, 2, 2, &[c]).unwrap();
        assert_eq!(m.rows(), 4);
        assert_eq!(m.cols(), 4);
        for r in 0..4 {
            for col in 0..4 {
                assert_eq!(m.get(r, col), if r == col { c } else { 0.0 });
            }
        }
    }

    #[test]
    fn two_by_two_kernel_layout() {
        let m = lower_conv(1, 1, 2, 2, 3, 3, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.rows(), 4);
        assert_eq!(m.cols(), 9);
        let row0 = m.row(0);
        let expected = [1.0, 2.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(row0, &expected);
    }

    #[test]
    fn matches_direct_convolution_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (in_ch, out_ch, f, in_h, in_w) = (2, 3, 2, 4, 4);
        let kernel: Vec<f64> =
            (0..out_ch * in_ch * f * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = lower_conv(in_ch, out_ch, f, f, in_h, in_w, &kernel).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> =
                (0..in_ch * in_h * in_w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let by_matrix = m.matvec(&x);
            let by_window = direct_conv(in_ch, out_ch, f, f, in_h, in_w, &kernel, &x);
            for (a, b) in by_matrix.iter().zip(&by_window) {
                assert!((a - b).abs() < 1e-12, "lowered {a} vs direct {b}");
            }
        }
    }

    #[test]
    fn rejects_oversized_filter() {
        assert!(lower_conv(1, 1, 3, 3, 2, 2, &[0.0; 9]).is_err());
    }
}

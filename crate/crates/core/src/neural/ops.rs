//! Dense kernels behind the network: GEMM, 3x3 same-padded convolution via
//! im2col, and 2x2 max-pooling.

/// Row-major matrix view: `data[r * rs + c * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn t(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }
}

/// `c = a * b + beta * c`, with `a` m x k, `b` k x n and `c` row-major m x n.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Mat, b: Mat, beta: f64, c: &mut [f64]) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let span = |rows: usize, cols: usize, v: &Mat| (rows - 1) * v.rs + (cols - 1) * v.cs;
    assert!(span(m, k, &a) < a.data.len() && span(k, n, &b) < b.data.len());
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Patches of a `channels x h x w` input for a 3x3 kernel with zero
/// padding 1. Row `c*9 + ky*3 + kx`, column `y*w + x`.
pub(crate) fn im2col(input: &[f64], channels: usize, h: usize, w: usize, cols: &mut Vec<f64>) {
    let hw = h * w;
    cols.clear();
    cols.resize(channels * 9 * hw, 0.0);
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(c * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    let (lo, hi) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w.saturating_sub(1)),
                    };
                    for x in lo..hi {
                        dst[x] = src[x + kx - 1];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back onto the input.
pub(crate) fn col2im(cols: &[f64], channels: usize, h: usize, w: usize, out: &mut [f64]) {
    let hw = h * w;
    out[..channels * hw].iter_mut().for_each(|v| *v = 0.0);
    for c in 0..channels {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(c * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..][..w];
                    let dst = &mut plane[sy as usize * w..][..w];
                    let (lo, hi) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w.saturating_sub(1)),
                    };
                    for x in lo..hi {
                        dst[x + kx - 1] += src[x];
                    }
                }
            }
        }
    }
}

/// 2x2 stride-2 max-pool; odd trailing rows and columns are dropped. Ties
/// go to the first element in row-major order.
pub(crate) fn maxpool(input: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * ph * pw);
    let mut arg = Vec::with_capacity(channels * ph * pw);
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..ph {
            for x in 0..pw {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &[f64], c: usize, h: usize, w: usize, weights: &[f64], out_c: usize) -> Vec<f64> {
        let mut out = vec![0.0; out_c * h * w];
        for o in 0..out_c {
            for y in 0..h {
                for x in 0..w {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                s += weights[((o * c + ci) * 3 + ky) * 3 + kx]
                                    * input[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(o * h + y) * w + x] = s;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_direct_convolution() {
        let (c, h, w, o) = (3, 5, 4, 2);
        let input: Vec<f64> = (0..c * h * w).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let weights: Vec<f64> = (0..o * c * 9).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
        let mut cols = Vec::new();
        im2col(&input, c, h, w, &mut cols);
        let mut out = vec![0.0; o * h * w];
        gemm(o, c * 9, h * w, Mat::new(&weights, c * 9), Mat::new(&cols, h * w), 0.0, &mut out);
        let expected = naive_conv(&input, c, h, w, &weights, o);
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w) = (2, 4, 6);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut cols = Vec::new();
        im2col(&x, c, h, w, &mut cols);
        let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut back = vec![0.0; x.len()];
        col2im(&y, c, h, w, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transposed_gemm() {
        // a is 2x3, so a^T is 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0];
        let mut c = [0.0; 6];
        gemm(3, 2, 2, Mat::t(&a, 3), Mat::new(&b, 2), 0.0, &mut c);
        assert_eq!(c, [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn maxpool_picks_block_maxima() {
        let input = [1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 1.0, 7.0, 7.0, 0.0, 0.0];
        let (out, arg) = maxpool(&input, 1, 3, 4);
        assert_eq!(out, vec![5.0, 9.0]);
        assert_eq!(arg, vec![1, 6]);
    }
}

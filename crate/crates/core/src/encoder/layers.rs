//! 3x3 same-padded convolution and 2x2 pooling on `C × (H·W)` activations,
//! forward and input-gradient only (weights are frozen).

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2};

/// Bound on im2col buffer size, in elements, per row block.
const COL_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone)]
pub struct Conv3x3 {
    /// `C_out × (C_in · 9)`, flattened as `[c_in][ky][kx]`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv3x3 {
    pub fn in_channels(&self) -> usize {
        self.weight.ncols() / 9
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    fn rows_per_block(&self, width: usize) -> usize {
        (COL_BUDGET / (self.weight.ncols() * width).max(1)).max(1)
    }

    pub fn forward(&self, input: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
        let cin = self.in_channels();
        debug_assert_eq!(input.dim(), (cin, h * w));
        let mut out = Array2::<f64>::zeros((self.out_channels(), h * w));
        let rows = self.rows_per_block(w);
        let mut y0 = 0;
        while y0 < h {
            let y1 = (y0 + rows).min(h);
            let cols = im2col(input.view(), h, w, y0, y1);
            let mut block = out.slice_mut(s![.., y0 * w..y1 * w]);
            general_mat_mul(1.0, &self.weight, &cols, 0.0, &mut block);
            y0 = y1;
        }
        for (mut row, b) in out.rows_mut().into_iter().zip(self.bias.iter()) {
            row += *b;
        }
        out
    }

    /// Gradient w.r.t. the input, given the gradient w.r.t. the output.
    pub fn backward(&self, grad_out: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
        let cin = self.in_channels();
        let mut grad_in = Array2::<f64>::zeros((cin, h * w));
        let rows = self.rows_per_block(w);
        let wt = self.weight.t();
        let mut y0 = 0;
        while y0 < h {
            let y1 = (y0 + rows).min(h);
            let mut cols = Array2::<f64>::zeros((cin * 9, (y1 - y0) * w));
            general_mat_mul(1.0, &wt, &grad_out.slice(s![.., y0 * w..y1 * w]), 0.0, &mut cols);
            col2im_add(cols.view(), grad_in.view_mut(), h, w, y0, y1);
            y0 = y1;
        }
        grad_in
    }
}

/// Patch matrix for output rows `y0..y1`: entry `(ci*9 + ky*3 + kx, (y-y0)*w + x)`
/// holds `input[ci, y+ky-1, x+kx-1]`, zero outside the image.
fn im2col(input: ArrayView2<f64>, h: usize, w: usize, y0: usize, y1: usize) -> Array2<f64> {
    let cin = input.nrows();
    let mut cols = Array2::<f64>::zeros((cin * 9, (y1 - y0) * w));
    for ci in 0..cin {
        let src = input.row(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let r = ci * 9 + ky * 3 + kx;
                let mut dst = cols.row_mut(r);
                for y in y0..y1 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    // valid x range: 0 <= x + kx - 1 < w
                    let x_lo = if kx == 0 { 1 } else { 0 };
                    let x_hi = if kx == 2 { w - 1 } else { w };
                    let base = (y - y0) * w;
                    for x in x_lo..x_hi {
                        dst[base + x] = src[sy * w + x + kx - 1];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: ArrayView2<f64>, mut grad_in: ArrayViewMut2<f64>, h: usize, w: usize, y0: usize, y1: usize) {
    let cin = grad_in.nrows();
    for ci in 0..cin {
        let mut dst = grad_in.row_mut(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let src = cols.row(ci * 9 + ky * 3 + kx);
                for y in y0..y1 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let x_lo = if kx == 0 { 1 } else { 0 };
                    let x_hi = if kx == 2 { w - 1 } else { w };
                    let base = (y - y0) * w;
                    for x in x_lo..x_hi {
                        dst[sy * w + x + kx - 1] += src[base + x];
                    }
                }
            }
        }
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Masks `grad` where the pre-activation was not positive.
pub fn relu_backward(pre: &Array2<f64>, grad: &mut Array2<f64>) {
    ndarray::Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

/// 2x2 stride-2 max pooling; odd trailing rows/columns are dropped.
/// Returns pooled activations and, per output, the flat index of the winning input.
pub fn max_pool(x: &Array2<f64>, h: usize, w: usize) -> (Array2<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let c = x.nrows();
    let mut out = Array2::<f64>::zeros((c, oh * ow));
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let src = x.row(ch);
        let mut dst = out.row_mut(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * oy + dy) * w + 2 * ox + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                dst[oy * ow + ox] = src[best];
                arg[ch * oh * ow + oy * ow + ox] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward(grad: &Array2<f64>, arg: &[u32], h: usize, w: usize) -> Array2<f64> {
    let c = grad.nrows();
    let m = grad.ncols();
    let mut out = Array2::<f64>::zeros((c, h * w));
    for ch in 0..c {
        let g = grad.row(ch);
        let mut dst = out.row_mut(ch);
        for j in 0..m {
            dst[arg[ch * m + j] as usize] += g[j];
        }
    }
    out
}

pub fn avg_pool(x: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let c = x.nrows();
    let mut out = Array2::<f64>::zeros((c, oh * ow));
    for ch in 0..c {
        let src = x.row(ch);
        let mut dst = out.row_mut(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let i = (2 * oy) * w + 2 * ox;
                dst[oy * ow + ox] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    out
}

pub fn avg_pool_backward(grad: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let c = grad.nrows();
    let mut out = Array2::<f64>::zeros((c, h * w));
    for ch in 0..c {
        let g = grad.row(ch);
        let mut dst = out.row_mut(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let v = 0.25 * g[oy * ow + ox];
                let i = (2 * oy) * w + 2 * ox;
                dst[i] += v;
                dst[i + 1] += v;
                dst[i + w] += v;
                dst[i + w + 1] += v;
            }
        }
    }
    out
}

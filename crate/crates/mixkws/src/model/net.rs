//! Layer primitives: 3x3 stride-2 convolution (via im2col), ReLU, global
//! average pooling and fully-connected layers, each with its exact backward
//! pass. Everything is f64 and allocation patterns are kept flat so the
//! compiler can vectorize the inner dot products.

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;

/// Output spatial size of the stride-2 padded 3x3 convolution.
pub fn conv_out_dim(d: usize) -> usize {
    (d + 2 * PAD - KERNEL) / STRIDE + 1
}

/// Unfold `input` (layout `[in_ch][h][w]`) into a patch matrix with
/// `out_h*out_w` rows of `in_ch*9` columns. Out-of-bounds taps are zero.
pub fn im2col(input: &[f64], in_ch: usize, h: usize, w: usize) -> Vec<f64> {
    let out_h = conv_out_dim(h);
    let out_w = conv_out_dim(w);
    let cols = in_ch * KERNEL * KERNEL;
    let mut patches = vec![0.0f64; out_h * out_w * cols];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let row = oy * out_w + ox;
            let base = row * cols;
            for c in 0..in_ch {
                let plane = c * h * w;
                for ky in 0..KERNEL {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let iy = iy as usize;
                    for kx in 0..KERNEL {
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        patches[base + (c * KERNEL + ky) * KERNEL + kx] =
                            input[plane + iy * w + ix as usize];
                    }
                }
            }
        }
    }
    patches
}

/// Scatter patch-matrix gradients back to the input layout; inverse of
/// [`im2col`] in the adjoint sense.
pub fn col2im(dpatches: &[f64], in_ch: usize, h: usize, w: usize) -> Vec<f64> {
    let out_h = conv_out_dim(h);
    let out_w = conv_out_dim(w);
    let cols = in_ch * KERNEL * KERNEL;
    let mut dinput = vec![0.0f64; in_ch * h * w];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let base = (oy * out_w + ox) * cols;
            for c in 0..in_ch {
                let plane = c * h * w;
                for ky in 0..KERNEL {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let iy = iy as usize;
                    for kx in 0..KERNEL {
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        dinput[plane + iy * w + ix as usize] +=
                            dpatches[base + (c * KERNEL + ky) * KERNEL + kx];
                    }
                }
            }
        }
    }
    dinput
}

/// `out[oc][r] = dot(weights[oc], patches[r]) + bias[oc]`.
pub fn conv_forward(
    patches: &[f64],
    rows: usize,
    cols: usize,
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let out_ch = bias.len();
    debug_assert_eq!(weights.len(), out_ch * cols);
    debug_assert_eq!(out.len(), out_ch * rows);
    for oc in 0..out_ch {
        let wrow = &weights[oc * cols..(oc + 1) * cols];
        let orow = &mut out[oc * rows..(oc + 1) * rows];
        for (r, o) in orow.iter_mut().enumerate() {
            let prow = &patches[r * cols..(r + 1) * cols];
            let mut acc = bias[oc];
            for (wv, pv) in wrow.iter().zip(prow) {
                acc += wv * pv;
            }
            *o = acc;
        }
    }
}

/// Gradients of the convolution weights and bias given the output gradient
/// (`dout` layout `[oc][rows]`).
pub fn conv_backward_params(
    dout: &[f64],
    patches: &[f64],
    rows: usize,
    cols: usize,
    out_ch: usize,
    dweights: &mut [f64],
    dbias: &mut [f64],
) {
    for oc in 0..out_ch {
        let drow = &dout[oc * rows..(oc + 1) * rows];
        let dwrow = &mut dweights[oc * cols..(oc + 1) * cols];
        let mut db = 0.0;
        for (r, &g) in drow.iter().enumerate() {
            db += g;
            if g != 0.0 {
                let prow = &patches[r * cols..(r + 1) * cols];
                for (dw, pv) in dwrow.iter_mut().zip(prow) {
                    *dw += g * pv;
                }
            }
        }
        dbias[oc] += db;
    }
}

/// Gradient with respect to the patch matrix.
pub fn conv_backward_patches(
    dout: &[f64],
    weights: &[f64],
    rows: usize,
    cols: usize,
    out_ch: usize,
) -> Vec<f64> {
    let mut dpatches = vec![0.0f64; rows * cols];
    for oc in 0..out_ch {
        let drow = &dout[oc * rows..(oc + 1) * rows];
        let wrow = &weights[oc * cols..(oc + 1) * cols];
        for (r, &g) in drow.iter().enumerate() {
            if g != 0.0 {
                let prow = &mut dpatches[r * cols..(r + 1) * cols];
                for (dp, wv) in prow.iter_mut().zip(wrow) {
                    *dp += g * wv;
                }
            }
        }
    }
    dpatches
}

pub fn relu(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Backward through ReLU given the pre-activation values.
pub fn relu_backward(pre: &[f64], dpost: &mut [f64]) {
    for (z, g) in pre.iter().zip(dpost.iter_mut()) {
        if *z <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Per-channel mean over the spatial plane (`x` layout `[c][hw]`).
pub fn global_avg_pool(x: &[f64], channels: usize, plane: usize) -> Vec<f64> {
    (0..channels)
        .map(|c| x[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect()
}

pub fn global_avg_pool_backward(dpooled: &[f64], plane: usize) -> Vec<f64> {
    let mut dx = vec![0.0f64; dpooled.len() * plane];
    for (c, &g) in dpooled.iter().enumerate() {
        let v = g / plane as f64;
        for d in &mut dx[c * plane..(c + 1) * plane] {
            *d = v;
        }
    }
    dx
}

/// `y[o] = dot(w[o], x) + b[o]` with `w` layout `[out][in]`.
pub fn linear_forward(x: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let inputs = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let wrow = &weights[o * inputs..(o + 1) * inputs];
            let mut acc = b;
            for (wv, xv) in wrow.iter().zip(x) {
                acc += wv * xv;
            }
            acc
        })
        .collect()
}

/// Accumulate linear-layer gradients; returns the input gradient.
pub fn linear_backward(
    x: &[f64],
    weights: &[f64],
    dy: &[f64],
    dweights: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let inputs = x.len();
    let mut dx = vec![0.0f64; inputs];
    for (o, &g) in dy.iter().enumerate() {
        dbias[o] += g;
        let wrow = &weights[o * inputs..(o + 1) * inputs];
        let dwrow = &mut dweights[o * inputs..(o + 1) * inputs];
        for i in 0..inputs {
            dwrow[i] += g * x[i];
            dx[i] += g * wrow[i];
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_out_dims() {
        assert_eq!(conv_out_dim(98), 49);
        assert_eq!(conv_out_dim(49), 25);
        assert_eq!(conv_out_dim(25), 13);
        assert_eq!(conv_out_dim(80), 40);
        assert_eq!(conv_out_dim(2), 1);
        assert_eq!(conv_out_dim(1), 1);
    }

    /// Identity-like kernel (center tap 1) on a constant 2x2 input: stride 2
    /// with padding collapses to a single output equal to the center sample
    /// plus bias, so the pooled value is hand-computable.
    #[test]
    fn identity_kernel_on_constant_input() {
        let input = [0.7f64; 4]; // 1 channel, 2x2
        let patches = im2col(&input, 1, 2, 2);
        let rows = conv_out_dim(2) * conv_out_dim(2);
        assert_eq!(rows, 1);
        let mut weights = vec![0.0f64; 9];
        weights[4] = 1.0; // center of the 3x3 kernel
        let bias = [0.25f64];
        let mut out = vec![0.0f64; rows];
        conv_forward(&patches, rows, 9, &weights, &bias, &mut out);
        assert!((out[0] - 0.95).abs() < 1e-15);
        let pooled = global_avg_pool(&out, 1, rows);
        assert!((pooled[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn conv_matches_direct_computation() {
        // 1 channel 3x3 input, all-ones kernel: each output sums the taps
        // that fall inside the image.
        let input: Vec<f64> = (1..=9).map(f64::from).collect(); // row-major 3x3
        let patches = im2col(&input, 1, 3, 3);
        let out_h = conv_out_dim(3);
        let rows = out_h * out_h;
        assert_eq!(rows, 4);
        let weights = vec![1.0f64; 9];
        let bias = [0.0f64];
        let mut out = vec![0.0f64; rows];
        conv_forward(&patches, rows, 9, &weights, &bias, &mut out);
        // Output grid positions have centers at (0,0), (0,2), (2,0), (2,2).
        assert_eq!(out, vec![
            1.0 + 2.0 + 4.0 + 5.0,
            2.0 + 3.0 + 5.0 + 6.0,
            4.0 + 5.0 + 7.0 + 8.0,
            5.0 + 6.0 + 8.0 + 9.0,
        ]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), p> == <x, col2im(p)> for random x and p.
        let mut rng = crate::seeds::stream(5, "adjoint");
        use rand::Rng;
        let (c, h, w) = (2usize, 5usize, 4usize);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rows = conv_out_dim(h) * conv_out_dim(w);
        let cols = c * 9;
        let p: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let forward = im2col(&x, c, h, w);
        let lhs: f64 = forward.iter().zip(&p).map(|(a, b)| a * b).sum();
        let back = col2im(&p, c, h, w);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = crate::seeds::stream(8, "linear-fd");
        use rand::Rng;
        let (inputs, outputs) = (5usize, 3usize);
        let x: Vec<f64> = (0..inputs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..inputs * outputs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..outputs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dy: Vec<f64> = (0..outputs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Scalar objective: dot(dy, linear(x)).
        let objective = |w: &[f64], b: &[f64], x: &[f64]| -> f64 {
            linear_forward(x, w, b).iter().zip(&dy).map(|(y, g)| y * g).sum()
        };
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; b.len()];
        let dx = linear_backward(&x, &w, &dy, &mut dw, &mut db);
        let h = 1e-6;
        for i in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let fd = (objective(&wp, &b, &x) - objective(&wm, &b, &x)) / (2.0 * h);
            assert!((fd - dw[i]).abs() < 1e-6, "dw[{i}]: {fd} vs {}", dw[i]);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (objective(&w, &b, &xp) - objective(&w, &b, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-6, "dx[{i}]: {fd} vs {}", dx[i]);
        }
    }
}

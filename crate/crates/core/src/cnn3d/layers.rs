//! Layer kernels on single samples.
//!
//! Volumes are stored channel-major, `[c][z][y][x]` with x fastest.
//! Convolutions use a 3×3×3 kernel with one voxel of zero padding
//! (shape-preserving) and are lowered to GEMM through an im2col buffer.
//! Conv weights are `[out][in][kz][ky][kx]`, dense weights `[out][in]`.

pub const KERNEL: usize = 3;
pub const KERNEL_VOL: usize = KERNEL * KERNEL * KERNEL;

/// `c = a · b + beta · c` for logical `a: m×k`, `b: k×n`, row-major `c: m×n`.
/// `*_t` marks operands stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every access made by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds a padded 3×3×3 neighbourhood of every voxel into a
/// `(channels·27) × voxels` matrix.
pub(crate) fn im2col(input: &[f64], channels: usize, dims: [usize; 3], cols: &mut Vec<f64>) {
    let [nx, ny, nz] = dims;
    let vox = nx * ny * nz;
    cols.clear();
    cols.resize(channels * KERNEL_VOL * vox, 0.0);
    for c in 0..channels {
        let src_c = &input[c * vox..(c + 1) * vox];
        for kz in 0..KERNEL {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let r = ((c * KERNEL + kz) * KERNEL + ky) * KERNEL + kx;
                    let row = &mut cols[r * vox..(r + 1) * vox];
                    for z in 0..nz {
                        let zz = z as isize + kz as isize - 1;
                        if zz < 0 || zz >= nz as isize {
                            continue;
                        }
                        for y in 0..ny {
                            let yy = y as isize + ky as isize - 1;
                            if yy < 0 || yy >= ny as isize {
                                continue;
                            }
                            let src = &src_c[(zz as usize * ny + yy as usize) * nx..][..nx];
                            let dst = &mut row[(z * ny + y) * nx..][..nx];
                            match kx {
                                0 => dst[1..].copy_from_slice(&src[..nx - 1]),
                                1 => dst.copy_from_slice(src),
                                _ => dst[..nx - 1].copy_from_slice(&src[1..]),
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back onto the input.
pub(crate) fn col2im(cols: &[f64], channels: usize, dims: [usize; 3], grad_in: &mut [f64]) {
    let [nx, ny, nz] = dims;
    let vox = nx * ny * nz;
    for c in 0..channels {
        let dst_c = &mut grad_in[c * vox..(c + 1) * vox];
        for kz in 0..KERNEL {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let r = ((c * KERNEL + kz) * KERNEL + ky) * KERNEL + kx;
                    let row = &cols[r * vox..(r + 1) * vox];
                    for z in 0..nz {
                        let zz = z as isize + kz as isize - 1;
                        if zz < 0 || zz >= nz as isize {
                            continue;
                        }
                        for y in 0..ny {
                            let yy = y as isize + ky as isize - 1;
                            if yy < 0 || yy >= ny as isize {
                                continue;
                            }
                            let dst = &mut dst_c[(zz as usize * ny + yy as usize) * nx..][..nx];
                            let src = &row[(z * ny + y) * nx..][..nx];
                            match kx {
                                0 => dst[..nx - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                                1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                                _ => dst[1..].iter_mut().zip(&src[..nx - 1]).for_each(|(d, s)| *d += s),
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Pre-activation conv output, `[out][z][y][x]`.
pub(crate) fn conv3d_forward(
    input: &[f64],
    in_channels: usize,
    dims: [usize; 3],
    weights: &[f64],
    bias: &[f64],
    scratch: &mut Vec<f64>,
) -> Vec<f64> {
    let vox = dims.iter().product::<usize>();
    let out_channels = bias.len();
    im2col(input, in_channels, dims, scratch);
    let mut out = vec![0.0; out_channels * vox];
    for (o, b) in bias.iter().enumerate() {
        out[o * vox..(o + 1) * vox].fill(*b);
    }
    gemm(out_channels, in_channels * KERNEL_VOL, vox, weights, false, scratch, false, 1.0, &mut out);
    out
}

/// Given `grad_out` w.r.t. the pre-activation output, accumulates weight and
/// bias gradients and returns the gradient w.r.t. the input.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3d_backward(
    input: &[f64],
    in_channels: usize,
    dims: [usize; 3],
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    scratch: &mut Vec<f64>,
    need_input_grad: bool,
) -> Vec<f64> {
    let vox = dims.iter().product::<usize>();
    let out_channels = grad_b.len();
    let k = in_channels * KERNEL_VOL;
    im2col(input, in_channels, dims, scratch);
    gemm(out_channels, vox, k, grad_out, false, scratch, true, 1.0, grad_w);
    for (o, gb) in grad_b.iter_mut().enumerate() {
        *gb += grad_out[o * vox..(o + 1) * vox].iter().sum::<f64>();
    }
    if !need_input_grad {
        return Vec::new();
    }
    // reuse the scratch buffer for column gradients
    gemm(k, out_channels, vox, weights, true, grad_out, false, 0.0, scratch);
    let mut grad_in = vec![0.0; in_channels * vox];
    col2im(scratch, in_channels, dims, &mut grad_in);
    grad_in
}

pub(crate) fn pooled_dims(dims: [usize; 3]) -> [usize; 3] {
    dims.map(|d| d / 2)
}

/// 2×2×2 max pooling with stride 2 (odd trailing voxels dropped). Returns
/// the output and the flat input index of each window's maximum.
pub(crate) fn maxpool_forward(input: &[f64], channels: usize, dims: [usize; 3]) -> (Vec<f64>, Vec<u32>) {
    let [nx, ny, nz] = dims;
    let [ox, oy, oz] = pooled_dims(dims);
    let vin = nx * ny * nz;
    let vout = ox * oy * oz;
    let mut out = vec![0.0; channels * vout];
    let mut arg = vec![0u32; channels * vout];
    for c in 0..channels {
        for z in 0..oz {
            for y in 0..oy {
                for x in 0..ox {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = c * vin + ((2 * z + dz) * ny + 2 * y + dy) * nx + 2 * x + dx;
                                if input[i] > best {
                                    best = input[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let o = c * vout + (z * oy + y) * ox + x;
                    out[o] = best;
                    arg[o] = best_i as u32;
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward(grad_out: &[f64], argmax: &[u32], input_len: usize) -> Vec<f64> {
    let mut g = vec![0.0; input_len];
    for (go, &i) in grad_out.iter().zip(argmax) {
        g[i as usize] += go;
    }
    g
}

pub(crate) fn dense_forward(input: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = bias.to_vec();
    gemm(bias.len(), input.len(), 1, weights, false, input, false, 1.0, &mut out);
    out
}

pub(crate) fn dense_backward(
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    let n_in = input.len();
    for (o, &g) in grad_out.iter().enumerate() {
        grad_b[o] += g;
        if g != 0.0 {
            for (gw, x) in grad_w[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                *gw += g * x;
            }
        }
    }
    if !need_input_grad {
        return Vec::new();
    }
    let mut grad_in = vec![0.0; n_in];
    gemm(n_in, grad_out.len(), 1, weights, true, grad_out, false, 0.0, &mut grad_in);
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Direct convolution with explicit zero padding.
    fn direct_conv(input: &[f64], cin: usize, dims: [usize; 3], w: &[f64], b: &[f64]) -> Vec<f64> {
        let [nx, ny, nz] = dims;
        let vox = nx * ny * nz;
        let cout = b.len();
        let mut out = vec![0.0; cout * vox];
        for o in 0..cout {
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let mut acc = b[o];
                        for c in 0..cin {
                            for kz in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let (zz, yy, xx) = (z + kz, y + ky, x + kx);
                                        if zz < 1 || yy < 1 || xx < 1 || zz > nz || yy > ny || xx > nx {
                                            continue;
                                        }
                                        let v = input[c * vox + ((zz - 1) * ny + yy - 1) * nx + xx - 1];
                                        acc += v * w[(((o * cin + c) * 3 + kz) * 3 + ky) * 3 + kx];
                                    }
                                }
                            }
                        }
                        out[o * vox + (z * ny + y) * nx + x] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = [5, 4, 3];
        let (cin, cout) = (2, 3);
        let input = rand_vec(&mut rng, cin * 60);
        let w = rand_vec(&mut rng, cout * cin * 27);
        let b = rand_vec(&mut rng, cout);
        let got = conv3d_forward(&input, cin, dims, &w, &b, &mut Vec::new());
        let want = direct_conv(&input, cin, dims, &w, &b);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    /// Gradient of `L = r · conv(x)` against central differences.
    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = [4, 3, 2];
        let (cin, cout) = (2, 2);
        let vox = 24;
        let x = rand_vec(&mut rng, cin * vox);
        let w = rand_vec(&mut rng, cout * cin * 27);
        let b = rand_vec(&mut rng, cout);
        let r = rand_vec(&mut rng, cout * vox);
        let loss = |x: &[f64], w: &[f64], b: &[f64]| dot(&r, &conv3d_forward(x, cin, dims, w, b, &mut Vec::new()));
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; b.len()];
        let gx = conv3d_backward(&x, cin, dims, &w, &r, &mut gw, &mut gb, &mut Vec::new(), true);
        let h = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let num = (plus - minus) / (2.0 * h);
            assert!((analytic - num).abs() <= 1e-6 * analytic.abs().max(1.0), "{analytic} vs {num}");
        };
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[i] += h;
            m[i] -= h;
            check(gw[i], loss(&x, &p, &b), loss(&x, &m, &b));
        }
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            check(gx[i], loss(&p, &w, &b), loss(&m, &w, &b));
        }
        for i in 0..b.len() {
            let (mut p, mut m) = (b.clone(), b.clone());
            p[i] += h;
            m[i] -= h;
            check(gb[i], loss(&x, &w, &p), loss(&x, &w, &m));
        }
    }

    #[test]
    fn maxpool_gradient_at_non_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = [4, 4, 3];
        let x = rand_vec(&mut rng, 2 * 48);
        let (out, arg) = maxpool_forward(&x, 2, dims);
        assert_eq!(out.len(), 2 * 2 * 2 * 1);
        let r = rand_vec(&mut rng, out.len());
        let gx = maxpool_backward(&r, &arg, x.len());
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            let num = (dot(&r, &maxpool_forward(&p, 2, dims).0) - dot(&r, &maxpool_forward(&m, 2, dims).0)) / (2.0 * h);
            assert!((gx[i] - num).abs() < 1e-6);
        }
    }

    #[test]
    fn maxpool_picks_window_max() {
        let x: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let (out, arg) = maxpool_forward(&x, 1, [2, 2, 2]);
        assert_eq!(out, vec![7.0]);
        assert_eq!(arg, vec![7]);
    }

    #[test]
    fn dense_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_vec(&mut rng, 7);
        let w = rand_vec(&mut rng, 21);
        let b = rand_vec(&mut rng, 3);
        let r = rand_vec(&mut rng, 3);
        let out = dense_forward(&x, &w, &b);
        for o in 0..3 {
            let want = b[o] + dot(&w[o * 7..(o + 1) * 7], &x);
            assert!((out[o] - want).abs() < 1e-12);
        }
        let mut gw = vec![0.0; 21];
        let mut gb = vec![0.0; 3];
        let gx = dense_backward(&x, &w, &r, &mut gw, &mut gb, true);
        let h = 1e-6;
        for i in 0..7 {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            let num = (dot(&r, &dense_forward(&p, &w, &b)) - dot(&r, &dense_forward(&m, &w, &b))) / (2.0 * h);
            assert!((gx[i] - num).abs() < 1e-7);
        }
        for i in 0..21 {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[i] += h;
            m[i] -= h;
            let num = (dot(&r, &dense_forward(&x, &p, &b)) - dot(&r, &dense_forward(&x, &m, &b))) / (2.0 * h);
            assert!((gw[i] - num).abs() < 1e-7);
        }
        assert_eq!(gb, r);
    }
}

//! 3×3 convolution kernels on `[channel][row][col]` tensors.
//!
//! Stride-1 convolutions keep the spatial size (padding 1). Stride-2
//! transposed convolutions use padding 1 and output padding 1, doubling the
//! size. Circular padding wraps indices instead of dropping them.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Zero,
    Circular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub side: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, side: usize) -> Self {
        Self {
            channels,
            side,
            data: vec![0.0; channels * side * side],
        }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.side * self.side;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.side * self.side;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Channel-wise concatenation.
    pub fn concat(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.side, other.side);
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor {
            channels: self.channels + other.channels,
            side: self.side,
            data,
        }
    }
}

/// Contiguous runs `(dst_start, src_start, len)` with `src = dst + d` along
/// an axis of length `n`, for a stride-1 shift `d ∈ {-1, 0, 1}`.
fn shift_runs(n: usize, d: isize, padding: Padding) -> Vec<(usize, usize, usize)> {
    match d {
        0 => vec![(0, 0, n)],
        1 => {
            let mut v = vec![(0, 1, n - 1)];
            if padding == Padding::Circular {
                v.push((n - 1, 0, 1));
            }
            v
        }
        -1 => {
            let mut v = vec![(1, 0, n - 1)];
            if padding == Padding::Circular {
                v.push((0, n - 1, 1));
            }
            v
        }
        _ => unreachable!("3x3 kernels shift by at most one"),
    }
}

/// Runs `(src_start, dst_start, len)` for a stride-2 transposed kernel tap
/// `k`: source index `a` writes to `2a + k - 1` on an axis of length `2n`.
fn upsample_runs(n: usize, k: usize, padding: Padding) -> Vec<(usize, usize, usize)> {
    match k {
        0 => {
            let mut v = Vec::new();
            if n > 1 {
                v.push((1, 1, n - 1));
            }
            if padding == Padding::Circular {
                v.push((0, 2 * n - 1, 1));
            }
            v
        }
        1 => vec![(0, 0, n)],
        2 => vec![(0, 1, n)],
        _ => unreachable!("3x3 kernels have three taps"),
    }
}

/// Stride-1 convolution. Weights are `[out][in][3][3]`.
pub fn conv_forward(input: &Tensor, weights: &[f64], bias: &[f64], out_channels: usize, padding: Padding) -> Tensor {
    let (ic, s) = (input.channels, input.side);
    debug_assert_eq!(weights.len(), out_channels * ic * 9);
    let mut out = Tensor::zeros(out_channels, s);
    let runs: Vec<Vec<_>> = (0..3).map(|k| shift_runs(s, k as isize - 1, padding)).collect();
    for o in 0..out_channels {
        let plane = out.plane_mut(o);
        plane.fill(bias[o]);
        for i in 0..ic {
            let src = input.plane(i);
            for ky in 0..3 {
                for kx in 0..3 {
                    let w = weights[((o * ic + i) * 3 + ky) * 3 + kx];
                    for &(dy, sy, ny) in &runs[ky] {
                        for t in 0..ny {
                            let drow = (dy + t) * s;
                            let srow = (sy + t) * s;
                            for &(dx, sx, nx) in &runs[kx] {
                                let d = &mut plane[drow + dx..drow + dx + nx];
                                let v = &src[srow + sx..srow + sx + nx];
                                for (a, b) in d.iter_mut().zip(v) {
                                    *a += w * b;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a stride-1 convolution given the gradient of its
/// pre-activation output. Accumulates into `d_weights`/`d_bias` and returns
/// the input gradient when requested.
pub fn conv_backward(
    input: &Tensor,
    weights: &[f64],
    d_out: &Tensor,
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    need_input: bool,
    padding: Padding,
) -> Option<Tensor> {
    let (ic, s) = (input.channels, input.side);
    let oc = d_out.channels;
    let runs: Vec<Vec<_>> = (0..3).map(|k| shift_runs(s, k as isize - 1, padding)).collect();
    let mut d_in = need_input.then(|| Tensor::zeros(ic, s));
    for o in 0..oc {
        let g = d_out.plane(o);
        d_bias[o] += g.iter().sum::<f64>();
        for i in 0..ic {
            let src = input.plane(i);
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((o * ic + i) * 3 + ky) * 3 + kx;
                    let w = weights[widx];
                    let mut acc = 0.0;
                    for &(dy, sy, ny) in &runs[ky] {
                        for t in 0..ny {
                            let drow = (dy + t) * s;
                            let srow = (sy + t) * s;
                            for &(dx, sx, nx) in &runs[kx] {
                                let gg = &g[drow + dx..drow + dx + nx];
                                let v = &src[srow + sx..srow + sx + nx];
                                acc += gg.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                                if let Some(di) = d_in.as_mut() {
                                    let dst = &mut di.plane_mut(i)[srow + sx..srow + sx + nx];
                                    for (a, b) in dst.iter_mut().zip(gg) {
                                        *a += w * b;
                                    }
                                }
                            }
                        }
                    }
                    d_weights[widx] += acc;
                }
            }
        }
    }
    d_in
}

/// Stride-2 transposed convolution. Weights are `[in][out][3][3]`.
pub fn tconv_forward(input: &Tensor, weights: &[f64], bias: &[f64], out_channels: usize, padding: Padding) -> Tensor {
    let (ic, n) = (input.channels, input.side);
    let s = 2 * n;
    debug_assert_eq!(weights.len(), ic * out_channels * 9);
    let mut out = Tensor::zeros(out_channels, s);
    for o in 0..out_channels {
        out.plane_mut(o).fill(bias[o]);
    }
    let runs: Vec<Vec<_>> = (0..3).map(|k| upsample_runs(n, k, padding)).collect();
    for i in 0..ic {
        let src = input.plane(i);
        for o in 0..out_channels {
            let plane = out.plane_mut(o);
            for ky in 0..3 {
                for kx in 0..3 {
                    let w = weights[((i * out_channels + o) * 3 + ky) * 3 + kx];
                    for &(a0, y0, na) in &runs[ky] {
                        for t in 0..na {
                            let srow = (a0 + t) * n;
                            let drow = (y0 + 2 * t) * s;
                            for &(b0, x0, nb) in &runs[kx] {
                                for u in 0..nb {
                                    plane[drow + x0 + 2 * u] += w * src[srow + b0 + u];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn tconv_backward(
    input: &Tensor,
    weights: &[f64],
    d_out: &Tensor,
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    need_input: bool,
    padding: Padding,
) -> Option<Tensor> {
    let (ic, n) = (input.channels, input.side);
    let s = 2 * n;
    let oc = d_out.channels;
    let runs: Vec<Vec<_>> = (0..3).map(|k| upsample_runs(n, k, padding)).collect();
    for o in 0..oc {
        d_bias[o] += d_out.plane(o).iter().sum::<f64>();
    }
    let mut d_in = need_input.then(|| Tensor::zeros(ic, n));
    for i in 0..ic {
        let src = input.plane(i);
        for o in 0..oc {
            let g = d_out.plane(o);
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((i * oc + o) * 3 + ky) * 3 + kx;
                    let w = weights[widx];
                    let mut acc = 0.0;
                    for &(a0, y0, na) in &runs[ky] {
                        for t in 0..na {
                            let srow = (a0 + t) * n;
                            let drow = (y0 + 2 * t) * s;
                            for &(b0, x0, nb) in &runs[kx] {
                                for u in 0..nb {
                                    let gv = g[drow + x0 + 2 * u];
                                    acc += gv * src[srow + b0 + u];
                                    if let Some(di) = d_in.as_mut() {
                                        di.plane_mut(i)[srow + b0 + u] += w * gv;
                                    }
                                }
                            }
                        }
                    }
                    d_weights[widx] += acc;
                }
            }
        }
    }
    d_in
}

pub fn relu_in_place(t: &mut Tensor) {
    for v in &mut t.data {
        *v = v.max(0.0);
    }
}

/// Zeroes gradient entries whose activation output was not positive.
pub fn relu_backward_in_place(output: &Tensor, grad: &mut Tensor) {
    for (g, &y) in grad.data.iter_mut().zip(&output.data) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn tensor(rng: &mut ChaCha8Rng, c: usize, s: usize) -> Tensor {
        Tensor {
            channels: c,
            side: s,
            data: random(rng, c * s * s),
        }
    }

    // Direct definitions with explicit bounds checks.
    fn conv_naive(x: &Tensor, w: &[f64], b: &[f64], oc: usize) -> Tensor {
        let (ic, s) = (x.channels, x.side as isize);
        let mut out = Tensor::zeros(oc, x.side);
        for o in 0..oc {
            for y in 0..s {
                for xx in 0..s {
                    let mut acc = b[o];
                    for i in 0..ic {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                if sy >= 0 && sx >= 0 && sy < s && sx < s {
                                    acc += w[((o * ic + i) * 3 + ky as usize) * 3 + kx as usize]
                                        * x.plane(i)[(sy * s + sx) as usize];
                                }
                            }
                        }
                    }
                    out.plane_mut(o)[(y * s + xx) as usize] = acc;
                }
            }
        }
        out
    }

    fn tconv_naive(x: &Tensor, w: &[f64], b: &[f64], oc: usize) -> Tensor {
        let (ic, n) = (x.channels, x.side as isize);
        let s = 2 * n;
        let mut out = Tensor::zeros(oc, s as usize);
        for o in 0..oc {
            out.plane_mut(o).fill(b[o]);
        }
        for i in 0..ic {
            for a in 0..n {
                for bb in 0..n {
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let (y, xx) = (2 * a + ky - 1, 2 * bb + kx - 1);
                            if y < 0 || xx < 0 || y >= s || xx >= s {
                                continue;
                            }
                            for o in 0..oc {
                                let wv = w[((i * oc + o) * 3 + ky as usize) * 3 + kx as usize];
                                out.plane_mut(o)[(y * s + xx) as usize] += wv * x.plane(i)[(a * n + bb) as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in [1, 2, 5] {
            let x = tensor(&mut rng, 3, s);
            let w = random(&mut rng, 4 * 3 * 9);
            let b = random(&mut rng, 4);
            let fast = conv_forward(&x, &w, &b, 4, Padding::Zero);
            let slow = conv_naive(&x, &w, &b, 4);
            for (p, q) in fast.data.iter().zip(&slow.data) {
                assert!((p - q).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn tconv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [1, 2, 4] {
            let x = tensor(&mut rng, 3, n);
            let w = random(&mut rng, 3 * 2 * 9);
            let b = random(&mut rng, 2);
            let fast = tconv_forward(&x, &w, &b, 2, Padding::Zero);
            assert_eq!(fast.side, 2 * n);
            let slow = tconv_naive(&x, &w, &b, 2);
            for (p, q) in fast.data.iter().zip(&slow.data) {
                assert!((p - q).abs() < 1e-13);
            }
        }
    }

    // Loss = <r, f(x)> so that d loss / d out = r.
    fn check_layer(transposed: bool, padding: Padding, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ic, oc, n) = (3, 2, 3);
        let x = tensor(&mut rng, ic, n);
        let w = random(&mut rng, ic * oc * 9);
        let b = random(&mut rng, oc);
        let fwd = |x: &Tensor, w: &[f64], b: &[f64]| {
            if transposed {
                tconv_forward(x, w, b, oc, padding)
            } else {
                conv_forward(x, w, b, oc, padding)
            }
        };
        let out = fwd(&x, &w, &b);
        let r = tensor(&mut rng, oc, out.side);
        let loss = |y: &Tensor| y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum::<f64>();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; oc];
        let dx = if transposed {
            tconv_backward(&x, &w, &r, &mut dw, &mut db, true, padding)
        } else {
            conv_backward(&x, &w, &r, &mut dw, &mut db, true, padding)
        }
        .unwrap();
        let h = 1e-5;
        let close = |a: f64, f: f64| (a - f).abs() <= 1e-4 * a.abs().max(f.abs()).max(1e-6);
        for k in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[k] += h;
            wm[k] -= h;
            let fd = (loss(&fwd(&x, &wp, &b)) - loss(&fwd(&x, &wm, &b))) / (2.0 * h);
            assert!(close(dw[k], fd), "weight {k}: {} vs {fd}", dw[k]);
        }
        for k in 0..oc {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[k] += h;
            bm[k] -= h;
            let fd = (loss(&fwd(&x, &w, &bp)) - loss(&fwd(&x, &w, &bm))) / (2.0 * h);
            assert!(close(db[k], fd));
        }
        for k in 0..x.data.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data[k] += h;
            xm.data[k] -= h;
            let fd = (loss(&fwd(&xp, &w, &b)) - loss(&fwd(&xm, &w, &b))) / (2.0 * h);
            assert!(close(dx.data[k], fd), "input {k}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        check_layer(false, Padding::Zero, 3);
        check_layer(false, Padding::Circular, 4);
    }

    #[test]
    fn tconv_gradients_match_finite_differences() {
        check_layer(true, Padding::Zero, 5);
        check_layer(true, Padding::Circular, 6);
    }

    #[test]
    fn relu_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = tensor(&mut rng, 2, 4);
        let r = tensor(&mut rng, 2, 4);
        let f = |x: &Tensor| {
            let mut y = x.clone();
            relu_in_place(&mut y);
            y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut y = x.clone();
        relu_in_place(&mut y);
        let mut g = r.clone();
        relu_backward_in_place(&y, &mut g);
        let h = 1e-5;
        for k in 0..x.data.len() {
            if x.data[k].abs() < 10.0 * h {
                continue;
            }
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data[k] += h;
            xm.data[k] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((g.data[k] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn circular_conv_commutes_with_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = 6;
        let x = tensor(&mut rng, 2, s);
        let w = random(&mut rng, 3 * 2 * 9);
        let b = random(&mut rng, 3);
        let roll = |t: &Tensor, dy: usize, dx: usize| {
            let mut o = t.clone();
            let n = t.side;
            for c in 0..t.channels {
                for y in 0..n {
                    for x in 0..n {
                        o.plane_mut(c)[((y + dy) % n) * n + (x + dx) % n] = t.plane(c)[y * n + x];
                    }
                }
            }
            o
        };
        let a = conv_forward(&roll(&x, 2, 5), &w, &b, 3, Padding::Circular);
        let c = roll(&conv_forward(&x, &w, &b, 3, Padding::Circular), 2, 5);
        for (p, q) in a.data.iter().zip(&c.data) {
            assert!((p - q).abs() < 1e-12);
        }
        // Transposed: an input shift of k becomes an output shift of 2k.
        let wt = random(&mut rng, 2 * 3 * 9);
        let a = tconv_forward(&roll(&x, 1, 4), &wt, &b, 3, Padding::Circular);
        let c = roll(&tconv_forward(&x, &wt, &b, 3, Padding::Circular), 2, 8);
        for (p, q) in a.data.iter().zip(&c.data) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

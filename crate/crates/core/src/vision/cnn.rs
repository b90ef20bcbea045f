//! Four-class LeNet-style network, forward and backward, written out by hand.
//!
//! ```text
//! 30x40x1 -conv3x3-> 28x38x6 -relu,pool2-> 14x19x6 -conv3x3-> 12x17x4
//!         -relu,pool2-> 6x8x4 -flatten-> 192 -dense,relu-> 6 -dense,softmax-> 4
//! ```
//!
//! Feature maps are planar (`[channel][row][col]`), kernels are
//! `[out][in][ky][kx]` and dense weights are `[in][out]`. Everything is generic
//! over the float type so the same code trains in `f32` and is gradient
//! checked in `f64`.

use num_traits::Float;
use rand::Rng;

pub const IN_H: usize = 30;
pub const IN_W: usize = 40;
pub const K: usize = 3;
pub const C1: usize = 6;
pub const H1: usize = IN_H - K + 1; // 28
pub const W1: usize = IN_W - K + 1; // 38
pub const P1H: usize = H1 / 2; // 14
pub const P1W: usize = W1 / 2; // 19
pub const C2: usize = 4;
pub const H2: usize = P1H - K + 1; // 12
pub const W2: usize = P1W - K + 1; // 17
pub const P2H: usize = H2 / 2; // 6
pub const P2W: usize = W2 / 2; // 8
pub const FLAT: usize = C2 * P2H * P2W; // 192
pub const HIDDEN: usize = 6;
pub const CLASSES: usize = 4;

/// Tensor names and shapes, in storage and file order.
pub const TENSOR_SHAPES: [(&str, &[usize]); 8] = [
    ("conv1.w", &[C1, 1, K, K]),
    ("conv1.b", &[C1]),
    ("conv2.w", &[C2, C1, K, K]),
    ("conv2.b", &[C2]),
    ("dense1.w", &[FLAT, HIDDEN]),
    ("dense1.b", &[HIDDEN]),
    ("dense2.w", &[HIDDEN, CLASSES]),
    ("dense2.b", &[CLASSES]),
];

pub const NUM_PARAMS: usize = C1 * K * K + C1 + C2 * C1 * K * K + C2 + FLAT * HIDDEN + HIDDEN + HIDDEN * CLASSES + CLASSES;

#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams<T> {
    pub conv1_w: Vec<T>,
    pub conv1_b: Vec<T>,
    pub conv2_w: Vec<T>,
    pub conv2_b: Vec<T>,
    pub dense1_w: Vec<T>,
    pub dense1_b: Vec<T>,
    pub dense2_w: Vec<T>,
    pub dense2_b: Vec<T>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Float> CnnParams<T> {
    pub fn zeros() -> Self {
        let z = |i: usize| vec![T::zero(); numel(TENSOR_SHAPES[i].1)];
        Self {
            conv1_w: z(0),
            conv1_b: z(1),
            conv2_w: z(2),
            conv2_b: z(3),
            dense1_w: z(4),
            dense1_b: z(5),
            dense2_w: z(6),
            dense2_b: z(7),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng>(rng: &mut R) -> Self {
        let mut p = Self::zeros();
        let mut fill = |w: &mut [T], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = T::from(rng.random_range(-limit..limit)).unwrap();
            }
        };
        fill(&mut p.conv1_w, K * K, C1 * K * K);
        fill(&mut p.conv2_w, C1 * K * K, C2 * K * K);
        fill(&mut p.dense1_w, FLAT, HIDDEN);
        fill(&mut p.dense2_w, HIDDEN, CLASSES);
        p
    }

    pub fn tensors(&self) -> [&[T]; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.dense1_w,
            &self.dense1_b,
            &self.dense2_w,
            &self.dense2_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.dense1_w,
            &mut self.dense1_b,
            &mut self.dense2_w,
            &mut self.dense2_b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn cast<U: Float>(&self) -> CnnParams<U> {
        let c = |v: &Vec<T>| v.iter().map(|&x| U::from(x).unwrap()).collect::<Vec<U>>();
        CnnParams {
            conv1_w: c(&self.conv1_w),
            conv1_b: c(&self.conv1_b),
            conv2_w: c(&self.conv2_w),
            conv2_b: c(&self.conv2_b),
            dense1_w: c(&self.dense1_w),
            dense1_b: c(&self.dense1_b),
            dense2_w: c(&self.dense2_w),
            dense2_b: c(&self.dense2_b),
        }
    }

    /// Class probabilities for a 30x40 image.
    pub fn forward(&self, image: &[T]) -> [T; CLASSES] {
        let mut ws = Workspace::new();
        self.forward_with(image, &mut ws)
    }

    /// Forward pass that keeps every intermediate in `ws` for a later
    /// [`CnnParams::backward`].
    pub fn forward_with(&self, image: &[T], ws: &mut Workspace<T>) -> [T; CLASSES] {
        assert_eq!(image.len(), IN_H * IN_W, "input must be 30x40");
        ws.input.copy_from_slice(image);
        conv2d(&ws.input, 1, IN_H, IN_W, &self.conv1_w, &self.conv1_b, C1, &mut ws.z1);
        relu(&ws.z1, &mut ws.a1);
        maxpool2(&ws.a1, C1, H1, W1, &mut ws.p1, &mut ws.p1_idx);
        conv2d(&ws.p1, C1, P1H, P1W, &self.conv2_w, &self.conv2_b, C2, &mut ws.z2);
        relu(&ws.z2, &mut ws.a2);
        maxpool2(&ws.a2, C2, H2, W2, &mut ws.p2, &mut ws.p2_idx);
        dense(&ws.p2, &self.dense1_w, &self.dense1_b, &mut ws.z3);
        relu(&ws.z3, &mut ws.a3);
        dense(&ws.a3, &self.dense2_w, &self.dense2_b, &mut ws.logits);
        let probs = softmax(&ws.logits);
        ws.probs = probs;
        probs
    }

    /// Backpropagate the cross-entropy of `label` through the pass stored in
    /// `ws`, adding parameter gradients into `grads`. Returns the loss.
    pub fn backward(&self, ws: &mut Workspace<T>, label: usize, grads: &mut CnnParams<T>) -> T {
        let loss = cross_entropy(&ws.logits, label);
        for (k, d) in ws.d_logits.iter_mut().enumerate() {
            *d = ws.probs[k] - if k == label { T::one() } else { T::zero() };
        }
        dense_backward(
            &ws.a3,
            &self.dense2_w,
            &ws.d_logits,
            Some(&mut ws.d_a3),
            &mut grads.dense2_w,
            &mut grads.dense2_b,
        );
        relu_backward(&ws.z3, &ws.d_a3, &mut ws.d_z3);
        dense_backward(
            &ws.p2,
            &self.dense1_w,
            &ws.d_z3,
            Some(&mut ws.d_p2),
            &mut grads.dense1_w,
            &mut grads.dense1_b,
        );
        maxpool2_backward(&ws.d_p2, &ws.p2_idx, &mut ws.d_a2);
        relu_backward(&ws.z2, &ws.d_a2, &mut ws.d_z2);
        conv2d_backward(
            &ws.p1,
            C1,
            P1H,
            P1W,
            &self.conv2_w,
            C2,
            &ws.d_z2,
            Some(&mut ws.d_p1),
            &mut grads.conv2_w,
            &mut grads.conv2_b,
        );
        maxpool2_backward(&ws.d_p1, &ws.p1_idx, &mut ws.d_a1);
        relu_backward(&ws.z1, &ws.d_a1, &mut ws.d_z1);
        conv2d_backward(
            &ws.input,
            1,
            IN_H,
            IN_W,
            &self.conv1_w,
            C1,
            &ws.d_z1,
            None,
            &mut grads.conv1_w,
            &mut grads.conv1_b,
        );
        loss
    }
}

/// Scratch buffers for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    input: Vec<T>,
    z1: Vec<T>,
    a1: Vec<T>,
    p1: Vec<T>,
    p1_idx: Vec<usize>,
    z2: Vec<T>,
    a2: Vec<T>,
    p2: Vec<T>,
    p2_idx: Vec<usize>,
    z3: Vec<T>,
    a3: Vec<T>,
    logits: Vec<T>,
    probs: [T; CLASSES],
    d_logits: Vec<T>,
    d_a3: Vec<T>,
    d_z3: Vec<T>,
    d_p2: Vec<T>,
    d_a2: Vec<T>,
    d_z2: Vec<T>,
    d_p1: Vec<T>,
    d_a1: Vec<T>,
    d_z1: Vec<T>,
}

impl<T: Float> Workspace<T> {
    pub fn new() -> Self {
        let z = |n: usize| vec![T::zero(); n];
        Self {
            input: z(IN_H * IN_W),
            z1: z(C1 * H1 * W1),
            a1: z(C1 * H1 * W1),
            p1: z(C1 * P1H * P1W),
            p1_idx: vec![0; C1 * P1H * P1W],
            z2: z(C2 * H2 * W2),
            a2: z(C2 * H2 * W2),
            p2: z(FLAT),
            p2_idx: vec![0; FLAT],
            z3: z(HIDDEN),
            a3: z(HIDDEN),
            logits: z(CLASSES),
            probs: [T::zero(); CLASSES],
            d_logits: z(CLASSES),
            d_a3: z(HIDDEN),
            d_z3: z(HIDDEN),
            d_p2: z(FLAT),
            d_a2: z(C2 * H2 * W2),
            d_z2: z(C2 * H2 * W2),
            d_p1: z(C1 * P1H * P1W),
            d_a1: z(C1 * H1 * W1),
            d_z1: z(C1 * H1 * W1),
        }
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }
}

impl<T: Float> Default for Workspace<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Valid 3x3 convolution, stride 1.
#[allow(clippy::too_many_arguments)]
pub fn conv2d<T: Float>(input: &[T], c_in: usize, h: usize, w: usize, weight: &[T], bias: &[T], c_out: usize, out: &mut [T]) {
    let (oh, ow) = (h - K + 1, w - K + 1);
    debug_assert_eq!(out.len(), c_out * oh * ow);
    for o in 0..c_out {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..c_in {
            let src = &input[c * h * w..(c + 1) * h * w];
            for ky in 0..K {
                for kx in 0..K {
                    let wv = weight[((o * c_in + c) * K + ky) * K + kx];
                    for y in 0..oh {
                        let row = &src[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        let dst = &mut plane[y * ow..(y + 1) * ow];
                        for (d, &s) in dst.iter_mut().zip(row) {
                            *d = *d + wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv2d`]. Weight and bias gradients are accumulated;
/// `d_input`, when given, is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Float>(
    input: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    c_out: usize,
    d_out: &[T],
    mut d_input: Option<&mut [T]>,
    d_weight: &mut [T],
    d_bias: &mut [T],
) {
    let (oh, ow) = (h - K + 1, w - K + 1);
    if let Some(di) = d_input.as_deref_mut() {
        di.iter_mut().for_each(|v| *v = T::zero());
    }
    for o in 0..c_out {
        let g = &d_out[o * oh * ow..(o + 1) * oh * ow];
        d_bias[o] = g.iter().fold(d_bias[o], |acc, &v| acc + v);
        for c in 0..c_in {
            let src = &input[c * h * w..(c + 1) * h * w];
            for ky in 0..K {
                for kx in 0..K {
                    let wi = ((o * c_in + c) * K + ky) * K + kx;
                    let mut acc = T::zero();
                    for y in 0..oh {
                        let row = &src[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        for (&gv, &s) in g[y * ow..(y + 1) * ow].iter().zip(row) {
                            acc = acc + gv * s;
                        }
                    }
                    d_weight[wi] = d_weight[wi] + acc;
                    if let Some(di) = d_input.as_deref_mut() {
                        let wv = weight[wi];
                        let dst_plane = &mut di[c * h * w..(c + 1) * h * w];
                        for y in 0..oh {
                            let dst = &mut dst_plane[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                            for (d, &gv) in dst.iter_mut().zip(&g[y * ow..(y + 1) * ow]) {
                                *d = *d + wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 stride-2 max pooling with floor division on odd sizes. `idx` records
/// the flat input index of each maximum; ties go to the first element in
/// row-major order.
pub fn maxpool2<T: Float>(input: &[T], c: usize, h: usize, w: usize, out: &mut [T], idx: &mut [usize]) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * x;
                let mut best = base;
                for cand in [base + 1, base + w, base + w + 1] {
                    if input[cand] > input[best] {
                        best = cand;
                    }
                }
                let o = (ch * oh + y) * ow + x;
                out[o] = input[best];
                idx[o] = best;
            }
        }
    }
}

/// Route each output gradient to its recorded maximum; `d_input` is
/// overwritten.
pub fn maxpool2_backward<T: Float>(d_out: &[T], idx: &[usize], d_input: &mut [T]) {
    d_input.iter_mut().for_each(|v| *v = T::zero());
    for (&g, &i) in d_out.iter().zip(idx) {
        d_input[i] = d_input[i] + g;
    }
}

pub fn relu<T: Float>(z: &[T], out: &mut [T]) {
    for (o, &v) in out.iter_mut().zip(z) {
        *o = v.max(T::zero());
    }
}

pub fn relu_backward<T: Float>(z: &[T], d_out: &[T], d_in: &mut [T]) {
    for ((d, &g), &v) in d_in.iter_mut().zip(d_out).zip(z) {
        *d = if v > T::zero() { g } else { T::zero() };
    }
}

/// `out = x W + b` with `W` stored `[in][out]`.
pub fn dense<T: Float>(x: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let n_out = out.len();
    out.copy_from_slice(bias);
    for (i, &xv) in x.iter().enumerate() {
        if xv == T::zero() {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&weight[i * n_out..(i + 1) * n_out]) {
            *o = *o + xv * wv;
        }
    }
}

pub fn dense_backward<T: Float>(
    x: &[T],
    weight: &[T],
    d_out: &[T],
    d_x: Option<&mut [T]>,
    d_weight: &mut [T],
    d_bias: &mut [T],
) {
    let n_out = d_out.len();
    for (b, &g) in d_bias.iter_mut().zip(d_out) {
        *b = *b + g;
    }
    for (i, &xv) in x.iter().enumerate() {
        for (dw, &g) in d_weight[i * n_out..(i + 1) * n_out].iter_mut().zip(d_out) {
            *dw = *dw + xv * g;
        }
    }
    if let Some(dx) = d_x {
        for (i, d) in dx.iter_mut().enumerate() {
            *d = weight[i * n_out..(i + 1) * n_out]
                .iter()
                .zip(d_out)
                .fold(T::zero(), |acc, (&wv, &g)| acc + wv * g);
        }
    }
}

pub fn softmax<T: Float>(logits: &[T]) -> [T; CLASSES] {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut out = [T::zero(); CLASSES];
    let mut sum = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        sum = sum + *o;
    }
    out.iter_mut().for_each(|o| *o = *o / sum);
    out
}

/// `-ln softmax(logits)[label]`, computed via log-sum-exp.
pub fn cross_entropy<T: Float>(logits: &[T], label: usize) -> T {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let lse = logits.iter().fold(T::zero(), |acc, &l| acc + (l - m).exp()).ln() + m;
    lse - logits[label]
}

/// Index of the largest probability; ties resolve to the lower index.
pub fn argmax<T: Float>(p: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    /// Values with pairwise gaps of at least `gap` so that max pooling and
    /// ReLU are differentiable at every point.
    fn spread_vec(rng: &mut impl Rng, n: usize, gap: f64) -> Vec<f64> {
        use rand::seq::SliceRandom;
        let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * gap).collect();
        v.shuffle(rng);
        v
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    const EPS: f64 = 1e-4;
    const TOL: f64 = 1e-3;

    /// Central differences of `f` over every coordinate of `x`, compared with
    /// `analytic`.
    fn check(name: &str, x: &mut [f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) {
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + EPS;
            let up = f(x);
            x[i] = orig - EPS;
            let down = f(x);
            x[i] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            assert!(
                rel_err(numeric, analytic[i]) < TOL,
                "{name}[{i}]: numeric {numeric} analytic {}",
                analytic[i]
            );
        }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn shape_trace() {
        assert_eq!((H1, W1, P1H, P1W, H2, W2, P2H, P2W, FLAT), (28, 38, 14, 19, 12, 17, 6, 8, 192));
        assert_eq!(NUM_PARAMS, 1466);
    }

    #[test]
    fn zero_params_give_uniform_output() {
        let p = CnnParams::<f64>::zeros();
        let out = p.forward(&[0.7; IN_H * IN_W]);
        assert_eq!(out, [0.25; 4]);
        assert_eq!(argmax(&out), 0);
    }

    #[test]
    fn softmax_is_a_simplex_point() {
        for logits in [[1000.0f64, -1000.0, 3.0, 0.0], [-5.0, -5.0, -5.0, -5.0], [1e-9, 0.0, 2.0, 88.0]] {
            let p = softmax(&logits);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn maxpool_ties_pick_first_row_major() {
        let input = [1.0f64, 1.0, 0.0, 1.0, 1.0, 0.0];
        let (mut out, mut idx) = ([0.0; 1], [0usize; 1]);
        maxpool2(&input, 1, 2, 3, &mut out, &mut idx);
        assert_eq!((out[0], idx[0]), (1.0, 0));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = stream_rng(seed, 90);
            let (c_in, h, w, c_out) = (2, 5, 6, 3);
            let mut input = uniform_vec(&mut rng, c_in * h * w, -1.0, 1.0);
            let mut weight = uniform_vec(&mut rng, c_out * c_in * K * K, -1.0, 1.0);
            let mut bias = uniform_vec(&mut rng, c_out, -1.0, 1.0);
            let n_out = c_out * (h - 2) * (w - 2);
            let r = uniform_vec(&mut rng, n_out, -1.0, 1.0);
            let loss = |i: &[f64], wt: &[f64], b: &[f64]| {
                let mut out = vec![0.0; n_out];
                conv2d(i, c_in, h, w, wt, b, c_out, &mut out);
                dot(&out, &r)
            };
            let mut di = vec![0.0; input.len()];
            let mut dw = vec![0.0; weight.len()];
            let mut db = vec![0.0; bias.len()];
            conv2d_backward(&input, c_in, h, w, &weight, c_out, &r, Some(&mut di), &mut dw, &mut db);
            let (w0, b0) = (weight.clone(), bias.clone());
            check("conv input", &mut input, &di, |x| loss(x, &w0, &b0));
            let i0 = input.clone();
            check("conv weight", &mut weight, &dw, |x| loss(&i0, x, &b0));
            let w0 = weight.clone();
            check("conv bias", &mut bias, &db, |x| loss(&i0, &w0, x));
        }
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = stream_rng(seed, 91);
            let (n_in, n_out) = (7, 5);
            let mut x = uniform_vec(&mut rng, n_in, -1.0, 1.0);
            let mut weight = uniform_vec(&mut rng, n_in * n_out, -1.0, 1.0);
            let mut bias = uniform_vec(&mut rng, n_out, -1.0, 1.0);
            let r = uniform_vec(&mut rng, n_out, -1.0, 1.0);
            let loss = |x: &[f64], wt: &[f64], b: &[f64]| {
                let mut out = vec![0.0; n_out];
                dense(x, wt, b, &mut out);
                dot(&out, &r)
            };
            let mut dx = vec![0.0; n_in];
            let mut dw = vec![0.0; weight.len()];
            let mut db = vec![0.0; n_out];
            dense_backward(&x, &weight, &r, Some(&mut dx), &mut dw, &mut db);
            let (w0, b0) = (weight.clone(), bias.clone());
            check("dense x", &mut x, &dx, |v| loss(v, &w0, &b0));
            let x0 = x.clone();
            check("dense weight", &mut weight, &dw, |v| loss(&x0, v, &b0));
            let w0 = weight.clone();
            check("dense bias", &mut bias, &db, |v| loss(&x0, &w0, v));
        }
    }

    #[test]
    fn pool_and_relu_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = stream_rng(seed, 92);
            let (c, h, w) = (2, 5, 7);
            let mut input = spread_vec(&mut rng, c * h * w, 0.01);
            let n_out = c * (h / 2) * (w / 2);
            let r = uniform_vec(&mut rng, n_out, -1.0, 1.0);
            let pool_loss = |x: &[f64]| {
                let (mut out, mut idx) = (vec![0.0; n_out], vec![0; n_out]);
                maxpool2(x, c, h, w, &mut out, &mut idx);
                dot(&out, &r)
            };
            let (mut out, mut idx) = (vec![0.0; n_out], vec![0; n_out]);
            maxpool2(&input, c, h, w, &mut out, &mut idx);
            let mut di = vec![0.0; input.len()];
            maxpool2_backward(&r, &idx, &mut di);
            check("maxpool", &mut input, &di, pool_loss);

            let r2 = uniform_vec(&mut rng, input.len(), -1.0, 1.0);
            let relu_loss = |x: &[f64]| {
                let mut out = vec![0.0; x.len()];
                relu(x, &mut out);
                dot(&out, &r2)
            };
            let mut dr = vec![0.0; input.len()];
            relu_backward(&input, &r2, &mut dr);
            check("relu", &mut input, &dr, relu_loss);
        }
    }

    #[test]
    fn softmax_cross_entropy_gradient_matches_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = stream_rng(seed, 93);
            let mut logits = uniform_vec(&mut rng, CLASSES, -3.0, 3.0);
            let label = (seed % 4) as usize;
            let p = softmax(&logits);
            let analytic: Vec<f64> = (0..CLASSES).map(|k| p[k] - if k == label { 1.0 } else { 0.0 }).collect();
            check("softmax xent", &mut logits, &analytic, |l| cross_entropy(l, label));
        }
    }

    #[test]
    fn whole_network_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = stream_rng(seed, 94);
            let mut params = CnnParams::<f64>::glorot(&mut rng);
            for t in params.tensors_mut() {
                for v in t.iter_mut() {
                    *v += rng.random_range(-0.05..0.05);
                }
            }
            let image = uniform_vec(&mut rng, IN_H * IN_W, 0.0, 1.0);
            let label = rng.random_range(0..CLASSES);
            let mut ws = Workspace::new();
            params.forward_with(&image, &mut ws);
            let mut grads = CnnParams::zeros();
            params.backward(&mut ws, label, &mut grads);

            // spot-check a spread of coordinates in each tensor
            for t in 0..8 {
                let n = params.tensors()[t].len();
                for j in (0..n).step_by((n / 12).max(1)) {
                    let orig = params.tensors()[t][j];
                    let eval = |p: &CnnParams<f64>| {
                        let mut ws = Workspace::new();
                        p.forward_with(&image, &mut ws);
                        cross_entropy(&ws.logits, label)
                    };
                    params.tensors_mut()[t][j] = orig + EPS;
                    let up = eval(&params);
                    params.tensors_mut()[t][j] = orig - EPS;
                    let down = eval(&params);
                    params.tensors_mut()[t][j] = orig;
                    let numeric = (up - down) / (2.0 * EPS);
                    let analytic = grads.tensors()[t][j];
                    // a kink crossed inside the stencil shows up as a large
                    // one-sided mismatch; retry with a smaller step
                    let ok = rel_err(numeric, analytic) < TOL || {
                        let e = EPS / 100.0;
                        params.tensors_mut()[t][j] = orig + e;
                        let up = eval(&params);
                        params.tensors_mut()[t][j] = orig - e;
                        let down = eval(&params);
                        params.tensors_mut()[t][j] = orig;
                        rel_err((up - down) / (2.0 * e), analytic) < TOL
                    };
                    assert!(ok, "{}[{j}] seed {seed}: numeric {numeric} analytic {analytic}", TENSOR_SHAPES[t].0);
                }
            }
        }
    }
}

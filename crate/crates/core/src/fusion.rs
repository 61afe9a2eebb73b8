//! Token-level cross-attention fusion of frequency features.
//!
//! At every position the original token `v_o` queries the two-row stack
//! `v_f = [v_l; v_h]` of its own low- and high-frequency tokens:
//!
//! ```text
//! q = v_o Wq,  k_a = v_a Wk,  u_a = v_a Wv        (a in {low, high})
//! s_a = q . k_a / sqrt(dim)
//! w   = softmax(s)
//! out = w_low u_low + w_high u_high + v_o
//! ```
//!
//! There are no biases and a single head. Positions never interact.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, TokenSequence};
use crate::rng;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
}

impl<T: Scalar> FusionParams<T> {
    pub fn new(w_q: Matrix<T>, w_k: Matrix<T>, w_v: Matrix<T>) -> Result<Self> {
        let d = w_q.rows();
        for (name, m) in [("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v)] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {d}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
            if m.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
            }
        }
        if d == 0 {
            return Err(Error::InvalidArgument("dim must be at least 1".into()));
        }
        Ok(Self { w_q, w_k, w_v })
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn matrices(&self) -> [&Matrix<T>; 3] {
        [&self.w_q, &self.w_k, &self.w_v]
    }
}

/// Entries i.i.d. from `U[-1/sqrt(dim), 1/sqrt(dim))`, drawn `Wq`, `Wk`, `Wv`
/// in order, each row-major.
pub fn init_params<T: Scalar>(dim: usize, seed: u64) -> Result<FusionParams<T>> {
    if dim < 1 {
        return Err(Error::InvalidArgument("dim must be at least 1".into()));
    }
    let b = 1.0 / (dim as f64).sqrt();
    let mut r = rng::seeded(seed);
    let mut draw = || Matrix::from_fn(dim, dim, |_, _| rng::uniform(&mut r, -b, b));
    let w_q = draw();
    let w_k = draw();
    let w_v = draw();
    FusionParams::new(w_q, w_k, w_v)
}

/// Intermediate values of one fused position.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTrace<T> {
    /// `(low, high)` attention logits.
    pub scores: [T; 2],
    /// Softmax of `scores`.
    pub weights: [T; 2],
    /// Attention output before the residual is added.
    pub attended: Vec<T>,
}

/// Max-subtracted two-way softmax.
pub fn softmax2<T: Scalar>(s: [T; 2]) -> [T; 2] {
    let m = Float::max(s[0], s[1]);
    let e0 = (s[0] - m).exp();
    let e1 = (s[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

fn check_len<T>(name: &str, v: &[T], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Dimension(format!("{name} has length {}, expected {dim}", v.len())));
    }
    Ok(())
}

struct Forward<T> {
    q: Vec<T>,
    keys: [Vec<T>; 2],
    values: [Vec<T>; 2],
    trace: FusionTrace<T>,
}

fn forward<T: Scalar>(v_o: &[T], v_l: &[T], v_h: &[T], params: &FusionParams<T>) -> Forward<T> {
    let q = params.w_q.left_mul(v_o);
    let keys = [params.w_k.left_mul(v_l), params.w_k.left_mul(v_h)];
    let values = [params.w_v.left_mul(v_l), params.w_v.left_mul(v_h)];
    let scale = T::one() / T::lit(params.dim() as f64).sqrt();
    let scores = [dot(&q, &keys[0]) * scale, dot(&q, &keys[1]) * scale];
    let weights = softmax2(scores);
    let attended = values[0]
        .iter()
        .zip(&values[1])
        .map(|(&a, &b)| weights[0] * a + weights[1] * b)
        .collect();
    Forward {
        q,
        keys,
        values,
        trace: FusionTrace {
            scores,
            weights,
            attended,
        },
    }
}

/// Fuses one position; returns the fused token and its trace.
pub fn fuse_token<T: Scalar>(
    v_o: &[T],
    v_l: &[T],
    v_h: &[T],
    params: &FusionParams<T>,
) -> Result<(Vec<T>, FusionTrace<T>)> {
    let d = params.dim();
    check_len("v_o", v_o, d)?;
    check_len("v_l", v_l, d)?;
    check_len("v_h", v_h, d)?;
    let trace = forward(v_o, v_l, v_h, params).trace;
    let fused = trace.attended.iter().zip(v_o).map(|(&a, &o)| a + o).collect();
    Ok((fused, trace))
}

fn check_sequences<T: Scalar>(
    v_o: &TokenSequence<T>,
    v_l: &TokenSequence<T>,
    v_h: &TokenSequence<T>,
    params: &FusionParams<T>,
) -> Result<()> {
    let shape = (v_o.len(), v_o.dim());
    for (name, s) in [("low", v_l), ("high", v_h)] {
        if (s.len(), s.dim()) != shape {
            return Err(Error::Dimension(format!(
                "{name} sequence is {}x{}, original is {}x{}",
                s.len(),
                s.dim(),
                shape.0,
                shape.1
            )));
        }
    }
    if shape.1 != params.dim() {
        return Err(Error::Dimension(format!(
            "tokens have dim {}, params have dim {}",
            shape.1,
            params.dim()
        )));
    }
    Ok(())
}

/// Fuses every position of three aligned sequences.
pub fn fuse_sequence<T: Scalar>(
    v_o: &TokenSequence<T>,
    v_l: &TokenSequence<T>,
    v_h: &TokenSequence<T>,
    params: &FusionParams<T>,
) -> Result<TokenSequence<T>> {
    fuse_sequence_traced(v_o, v_l, v_h, params).map(|(out, _)| out)
}

pub fn fuse_sequence_traced<T: Scalar>(
    v_o: &TokenSequence<T>,
    v_l: &TokenSequence<T>,
    v_h: &TokenSequence<T>,
    params: &FusionParams<T>,
) -> Result<(TokenSequence<T>, Vec<FusionTrace<T>>)> {
    check_sequences(v_o, v_l, v_h, params)?;
    let mut out = Vec::with_capacity(v_o.as_slice().len());
    let mut traces = Vec::with_capacity(v_o.len());
    for i in 0..v_o.len() {
        let (fused, trace) = fuse_token(v_o.token(i), v_l.token(i), v_h.token(i), params)?;
        out.extend(fused);
        traces.push(trace);
    }
    Ok((TokenSequence::from_matrix_unchecked(Matrix::new(v_o.len(), v_o.dim(), out)?), traces))
}

/// Gradients of `sum <upstream, fuse_sequence(..)>`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGradients<T> {
    pub d_w_q: Matrix<T>,
    pub d_w_k: Matrix<T>,
    pub d_w_v: Matrix<T>,
    /// `L x dim`, one row per position.
    pub d_v_o: Matrix<T>,
    pub d_v_l: Matrix<T>,
    pub d_v_h: Matrix<T>,
}

impl<T: Scalar> FusionGradients<T> {
    fn zeros(len: usize, dim: usize) -> Self {
        Self {
            d_w_q: Matrix::zeros(dim, dim),
            d_w_k: Matrix::zeros(dim, dim),
            d_w_v: Matrix::zeros(dim, dim),
            d_v_o: Matrix::zeros(len, dim),
            d_v_l: Matrix::zeros(len, dim),
            d_v_h: Matrix::zeros(len, dim),
        }
    }
}

/// Reverse-mode pass through the attention at every position.
pub fn fuse_backward<T: Scalar>(
    v_o: &TokenSequence<T>,
    v_l: &TokenSequence<T>,
    v_h: &TokenSequence<T>,
    params: &FusionParams<T>,
    upstream: &Matrix<T>,
) -> Result<FusionGradients<T>> {
    check_sequences(v_o, v_l, v_h, params)?;
    let (len, dim) = (v_o.len(), v_o.dim());
    if (upstream.rows(), upstream.cols()) != (len, dim) {
        return Err(Error::Dimension(format!(
            "upstream is {}x{}, output is {len}x{dim}",
            upstream.rows(),
            upstream.cols()
        )));
    }
    let scale = T::one() / T::lit(dim as f64).sqrt();
    let mut grads = FusionGradients::zeros(len, dim);

    for i in 0..len {
        let g = upstream.row(i);
        let (o, inputs) = (v_o.token(i), [v_l.token(i), v_h.token(i)]);
        let fwd = forward(o, inputs[0], inputs[1], params);
        let w = fwd.trace.weights;

        // out = sum_a w_a u_a + v_o
        let mut d_q = vec![T::zero(); dim];
        let d_w = [dot(g, &fwd.values[0]), dot(g, &fwd.values[1])];
        let mean = w[0] * d_w[0] + w[1] * d_w[1];
        let mut d_inputs = [vec![T::zero(); dim], vec![T::zero(); dim]];
        for a in 0..2 {
            // value path: u_a = v_a Wv
            grads.d_w_v.add_outer(inputs[a], g, w[a]);
            for (d, x) in d_inputs[a].iter_mut().zip(params.w_v.left_mul_transpose(g)) {
                *d = *d + w[a] * x;
            }
            // softmax then score path: s_a = q . k_a * scale
            let d_s = w[a] * (d_w[a] - mean) * scale;
            for (dq, &k) in d_q.iter_mut().zip(&fwd.keys[a]) {
                *dq = *dq + d_s * k;
            }
            grads.d_w_k.add_outer(inputs[a], &fwd.q, d_s);
            for (d, x) in d_inputs[a].iter_mut().zip(params.w_k.left_mul_transpose(&fwd.q)) {
                *d = *d + d_s * x;
            }
        }
        grads.d_w_q.add_outer(o, &d_q, T::one());
        let d_o = params.w_q.left_mul_transpose(&d_q);

        let row = i * dim..(i + 1) * dim;
        for ((dst, &r), &x) in grads.d_v_o.as_mut_slice()[row.clone()].iter_mut().zip(g).zip(&d_o) {
            *dst = r + x;
        }
        grads.d_v_l.as_mut_slice()[row.clone()].copy_from_slice(&d_inputs[0]);
        grads.d_v_h.as_mut_slice()[row].copy_from_slice(&d_inputs[1]);
    }
    Ok(grads)
}

/// One training example for [`fit_demo`].
#[derive(Debug, Clone)]
pub struct FusionSample<T> {
    pub original: TokenSequence<T>,
    pub low: TokenSequence<T>,
    pub high: TokenSequence<T>,
    pub target: TokenSequence<T>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub params: FusionParams<T>,
    /// `losses[s]` is the loss before step `s`; the last entry is the loss
    /// after the final step, so there are `steps + 1` entries.
    pub losses: Vec<T>,
}

/// Mean squared error over every entry of every sample.
pub fn mse<T: Scalar>(dataset: &[FusionSample<T>], params: &FusionParams<T>) -> Result<T> {
    let mut total = T::zero();
    let mut count = 0usize;
    for s in dataset {
        let out = fuse_sequence(&s.original, &s.low, &s.high, params)?;
        check_target(&out, &s.target)?;
        for (&y, &t) in out.as_slice().iter().zip(s.target.as_slice()) {
            total = total + (y - t) * (y - t);
        }
        count += out.as_slice().len();
    }
    Ok(total / T::lit(count as f64))
}

fn check_target<T: Scalar>(out: &TokenSequence<T>, target: &TokenSequence<T>) -> Result<()> {
    if (out.len(), out.dim()) != (target.len(), target.dim()) {
        return Err(Error::Dimension(format!(
            "target is {}x{}, output is {}x{}",
            target.len(),
            target.dim(),
            out.len(),
            out.dim()
        )));
    }
    Ok(())
}

/// Plain full-batch gradient descent on [`mse`] over `Wq`, `Wk`, `Wv`.
pub fn fit_demo<T: Scalar>(
    dataset: &[FusionSample<T>],
    params: &FusionParams<T>,
    steps: usize,
    lr: T,
) -> Result<FitOutcome<T>> {
    if dataset.is_empty() {
        return Err(Error::Empty("fit_demo needs at least one sample"));
    }
    if !lr.is_finite() || lr < T::zero() {
        return Err(Error::InvalidArgument(format!("learning rate must be finite and non-negative, got {lr}")));
    }
    let mut params = params.clone();
    let count: usize = dataset.iter().map(|s| s.original.as_slice().len()).sum();
    let norm = T::lit(2.0) / T::lit(count as f64);
    let mut losses = Vec::with_capacity(steps + 1);

    for _ in 0..steps {
        let dim = params.dim();
        let mut acc = [Matrix::zeros(dim, dim), Matrix::zeros(dim, dim), Matrix::zeros(dim, dim)];
        let mut loss = T::zero();
        for s in dataset {
            let out = fuse_sequence(&s.original, &s.low, &s.high, &params)?;
            check_target(&out, &s.target)?;
            let resid: Vec<T> = out
                .as_slice()
                .iter()
                .zip(s.target.as_slice())
                .map(|(&y, &t)| y - t)
                .collect();
            loss = loss + resid.iter().fold(T::zero(), |a, &r| a + r * r);
            let upstream = Matrix::new(out.len(), out.dim(), resid.iter().map(|&r| r * norm).collect())?;
            let g = fuse_backward(&s.original, &s.low, &s.high, &params, &upstream)?;
            for (a, d) in acc.iter_mut().zip([&g.d_w_q, &g.d_w_k, &g.d_w_v]) {
                for (x, &y) in a.as_mut_slice().iter_mut().zip(d.as_slice()) {
                    *x = *x + y;
                }
            }
        }
        losses.push(loss / T::lit(count as f64));
        for (w, d) in [&mut params.w_q, &mut params.w_k, &mut params.w_v].into_iter().zip(&acc) {
            for (x, &y) in w.as_mut_slice().iter_mut().zip(d.as_slice()) {
                *x = *x - lr * y;
            }
        }
    }
    losses.push(mse(dataset, &params)?);
    Ok(FitOutcome { params, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn seq(len: usize, dim: usize, r: &mut rng::SeededRng) -> TokenSequence<f64> {
        TokenSequence::new(len, dim, (0..len * dim).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn scalar_params(x: f64) -> FusionParams<f64> {
        let m = Matrix::new(1, 1, vec![x]).unwrap();
        FusionParams::new(m.clone(), m.clone(), m).unwrap()
    }

    #[test]
    fn init_range_and_determinism() {
        let p = init_params::<f64>(4, 0).unwrap();
        for m in p.matrices() {
            assert!(m.as_slice().iter().all(|v| (-0.5..=0.5).contains(v)));
        }
        assert_eq!(p, init_params::<f64>(4, 0).unwrap());
        assert!(init_params::<f64>(0, 0).is_err());
    }

    #[test]
    fn init_mean_near_zero() {
        let p = init_params::<f64>(64, 1).unwrap();
        let all: Vec<f64> = p.matrices().iter().flat_map(|m| m.as_slice().to_vec()).collect();
        assert_eq!(all.len(), 3 * 64 * 64);
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn zero_frequency_tokens_pass_original_through() {
        let p = init_params::<f64>(5, 3).unwrap();
        let v_o = [0.3, -1.2, 4.0, 0.0, 2.5];
        let z = [0.0; 5];
        let (fused, trace) = fuse_token(&v_o, &z, &z, &p).unwrap();
        assert_eq!(fused, v_o);
        assert_eq!(trace.weights, [0.5, 0.5]);
    }

    #[test]
    fn scalar_hand_evaluation() {
        // scores (2, 4); e^2 = 7.389056, e^4 = 54.598150
        let (fused, trace) = fuse_token(&[1.0], &[2.0], &[4.0], &scalar_params(1.0)).unwrap();
        assert!((trace.scores[0] - 2.0).abs() < 1e-15);
        assert!((trace.scores[1] - 4.0).abs() < 1e-15);
        let e2 = 2f64.exp();
        let e4 = 4f64.exp();
        let w0 = e2 / (e2 + e4);
        assert!((trace.weights[0] - w0).abs() < 1e-15);
        assert!((trace.weights[0] - 0.119203).abs() < 1e-6);
        assert!((trace.weights[1] - 0.880797).abs() < 1e-6);
        assert!((fused[0] - 4.761594).abs() < 1e-6);
        assert!((trace.attended[0] - 3.761594).abs() < 1e-6);
    }

    #[test]
    fn identical_frequency_tokens_split_evenly() {
        let p = init_params::<f64>(3, 8).unwrap();
        let c = [0.7, -0.2, 1.9];
        let (_, trace) = fuse_token(&[5.0, 1.0, -3.0], &c, &c, &p).unwrap();
        assert_eq!(trace.weights, [0.5, 0.5]);
    }

    #[test]
    fn softmax_stable_and_shift_invariant() {
        let a = softmax2([1000.0, 1001.0]);
        let b = softmax2([0.0, 1.0]);
        assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        assert!(a.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn sequence_is_per_position() {
        let mut r = rng::seeded(11);
        let p = init_params::<f64>(2, 4).unwrap();
        let (o, l, h) = (seq(3, 2, &mut r), seq(3, 2, &mut r), seq(3, 2, &mut r));
        let out = fuse_sequence(&o, &l, &h, &p).unwrap();
        for i in 0..3 {
            let (t, _) = fuse_token(o.token(i), l.token(i), h.token(i), &p).unwrap();
            assert_eq!(out.token(i), t.as_slice());
        }
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut r = rng::seeded(1);
        let p = init_params::<f64>(2, 4).unwrap();
        let (o, l) = (seq(3, 2, &mut r), seq(2, 2, &mut r));
        assert!(matches!(fuse_sequence(&o, &l, &o, &p), Err(Error::Dimension(_))));
        assert!(fuse_token(&[1.0], &[1.0, 2.0], &[1.0, 2.0], &p).is_err());
        let up = Matrix::zeros(2, 2);
        assert!(fuse_backward(&o, &o, &o, &p, &up).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut r = rng::seeded(2);
        let p = init_params::<f64>(3, 4).unwrap();
        let (o, l, h) = (seq(2, 3, &mut r), seq(2, 3, &mut r), seq(2, 3, &mut r));
        let g = fuse_backward(&o, &l, &h, &p, &Matrix::zeros(2, 3)).unwrap();
        for m in [&g.d_w_q, &g.d_w_k, &g.d_w_v, &g.d_v_o, &g.d_v_l, &g.d_v_h] {
            assert!(m.as_slice().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn zero_values_give_zero_value_gradient() {
        let mut r = rng::seeded(3);
        let p = init_params::<f64>(3, 4).unwrap();
        let o = seq(2, 3, &mut r);
        let z = TokenSequence::new(2, 3, vec![0.0; 6]).unwrap();
        let up = Matrix::new(2, 3, (0..6).map(|i| i as f64 - 2.5).collect()).unwrap();
        let g = fuse_backward(&o, &z, &z, &p, &up).unwrap();
        assert!(g.d_w_v.as_slice().iter().all(|&x| x == 0.0));
        // keys are zero too, so every score gradient vanishes and only the
        // residual reaches v_o
        assert_eq!(g.d_v_o.as_slice(), up.as_slice());
    }

    #[test]
    fn fit_at_optimum_is_stationary() {
        let mut r = rng::seeded(6);
        let p = init_params::<f64>(2, 1).unwrap();
        let (o, l, h) = (seq(3, 2, &mut r), seq(3, 2, &mut r), seq(3, 2, &mut r));
        let target = fuse_sequence(&o, &l, &h, &p).unwrap();
        let data = vec![FusionSample {
            original: o,
            low: l,
            high: h,
            target,
        }];
        let fit = fit_demo(&data, &p, 10, 0.1).unwrap();
        assert_eq!(fit.losses[0], 0.0);
        assert_eq!(fit.params, p);
    }

    #[test]
    fn fit_zero_lr_keeps_params() {
        let mut r = rng::seeded(6);
        let p = init_params::<f64>(2, 1).unwrap();
        let data = vec![FusionSample {
            original: seq(2, 2, &mut r),
            low: seq(2, 2, &mut r),
            high: seq(2, 2, &mut r),
            target: seq(2, 2, &mut r),
        }];
        let fit = fit_demo(&data, &p, 25, 0.0).unwrap();
        assert_eq!(fit.params, p);
        assert_eq!(fit.losses.len(), 26);
        assert!(fit_demo::<f64>(&[], &p, 1, 0.1).is_err());
        assert!(fit_demo(&data, &p, 1, -0.1).is_err());
    }
}

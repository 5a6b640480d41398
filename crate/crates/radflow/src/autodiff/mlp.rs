//! Dense multi-layer perceptrons over flat parameter vectors.
//!
//! An [`Mlp`] does not own its parameters; it records layer sizes and a span
//! into a shared flat parameter vector. The same description evaluates under
//! any [`Scalar`] context.

use std::ops::Range;

use rand::Rng;

use super::scalar::Scalar;

/// Output head of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Linear,
    /// `scale * tanh(raw)` with a single learned scalar `scale`; output is
    /// bounded by `|scale|`.
    ScaledTanh,
}

/// Hands out disjoint spans of a flat parameter vector.
#[derive(Default)]
pub struct LayoutBuilder {
    next: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, n: usize) -> Range<usize> {
        let start = self.next;
        self.next += n;
        start..self.next
    }

    pub fn total(&self) -> usize {
        self.next
    }
}

/// Fully connected network: rectified hidden layers, configurable head.
#[derive(Clone, Debug)]
pub struct Mlp {
    sizes: Vec<usize>,
    head: Head,
    span: Range<usize>,
    // (weight offset, bias offset) of each layer, relative to span start
    offsets: Vec<(usize, usize)>,
}

/// Reusable forward-pass buffers.
pub struct MlpScratch<S> {
    cur: Vec<S>,
    next: Vec<S>,
}

impl<S> Default for MlpScratch<S> {
    fn default() -> Self {
        MlpScratch {
            cur: Vec::new(),
            next: Vec::new(),
        }
    }
}

impl Mlp {
    /// Number of parameters for the given layer sizes and head:
    /// sum of `n_i * n_{i+1} + n_{i+1}` plus one for a scaled-tanh head.
    pub fn param_count(sizes: &[usize], head: Head) -> usize {
        let mut n = 0;
        for w in sizes.windows(2) {
            n += w[0] * w[1] + w[1];
        }
        if head == Head::ScaledTanh {
            n += 1;
        }
        n
    }

    pub fn new(sizes: Vec<usize>, head: Head, layout: &mut LayoutBuilder) -> Mlp {
        assert!(
            sizes.len() >= 2,
            "mlp needs at least input and output sizes"
        );
        assert!(
            sizes.iter().all(|&s| s > 0),
            "mlp layer sizes must be positive"
        );
        let span = layout.alloc(Self::param_count(&sizes, head));
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut off = 0;
        for w in sizes.windows(2) {
            offsets.push((off, off + w[0] * w[1]));
            off += w[0] * w[1] + w[1];
        }
        Mlp {
            sizes,
            head,
            span,
            offsets,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn span(&self) -> Range<usize> {
        self.span.clone()
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Absolute parameter ranges `(weights, biases)` of one weight layer.
    /// Weights are row-major `[out][in]`.
    pub fn layer_spans(&self, layer: usize) -> (Range<usize>, Range<usize>) {
        let (w_off, b_off) = self.offsets[layer];
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let base = self.span.start;
        (
            base + w_off..base + w_off + n_in * n_out,
            base + b_off..base + b_off + n_out,
        )
    }

    /// Glorot-uniform weights, zero biases. With `zero_last` the final layer
    /// is zeroed instead so the network starts as the constant zero map while
    /// earlier layers stay randomized. A scaled-tanh head scale starts at 1
    /// so the head keeps a live gradient path through `scale * tanh`.
    pub fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R, zero_last: bool) {
        let base = self.span.start;
        let n_layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (w_off, b_off) = self.offsets[l];
            let last = l == n_layers - 1;
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for i in 0..w[0] * w[1] {
                params[base + w_off + i] = if last && zero_last {
                    0.0
                } else {
                    rng.gen_range(-bound..bound)
                };
            }
            for i in 0..w[1] {
                params[base + b_off + i] = 0.0;
            }
        }
        if self.head == Head::ScaledTanh {
            params[self.span.end - 1] = 1.0;
        }
    }

    /// Forward pass writing outputs into `out`. All intermediate values go
    /// through the [`Scalar`] context, so under a tape every node is recorded
    /// for the reverse sweep.
    pub fn forward_into<S: Scalar>(
        &self,
        params: &[S],
        input: &[S],
        scratch: &mut MlpScratch<S>,
        out: &mut Vec<S>,
    ) {
        assert_eq!(
            input.len(),
            self.sizes[0],
            "mlp input length {} != first layer size {}",
            input.len(),
            self.sizes[0]
        );
        let base = self.span.start;
        let n_layers = self.sizes.len() - 1;
        for l in 0..n_layers {
            let last = l == n_layers - 1;
            let (w_off, b_off) = self.offsets[l];
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            {
                let src: &[S] = if l == 0 { input } else { &scratch.cur };
                let dst: &mut Vec<S> = if last { out } else { &mut scratch.next };
                dst.clear();
                for o in 0..n_out {
                    let w = &params[base + w_off + o * n_in..base + w_off + (o + 1) * n_in];
                    let b = params[base + b_off + o];
                    dst.push(if last {
                        S::affine(w, src, b)
                    } else {
                        S::affine_relu(w, src, b)
                    });
                }
            }
            if !last {
                std::mem::swap(&mut scratch.cur, &mut scratch.next);
            }
        }
        if self.head == Head::ScaledTanh {
            let scale = params[self.span.end - 1];
            for v in out.iter_mut() {
                *v = v.tanh() * scale;
            }
        }
    }

    /// Allocating convenience wrapper around [`Mlp::forward_into`].
    pub fn forward<S: Scalar>(&self, params: &[S], input: &[S]) -> Vec<S> {
        let mut scratch = MlpScratch::default();
        let mut out = Vec::with_capacity(self.out_dim());
        self.forward_into(params, input, &mut scratch, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn build(sizes: &[usize], head: Head) -> (Mlp, Vec<f64>) {
        let mut layout = LayoutBuilder::new();
        let mlp = Mlp::new(sizes.to_vec(), head, &mut layout);
        (mlp, vec![0.0; layout.total()])
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(Mlp::param_count(&[1, 8, 4], Head::Linear), 52);
        assert_eq!(Mlp::param_count(&[2, 8, 3], Head::Linear), 51);
        assert_eq!(Mlp::param_count(&[1, 56, 1], Head::ScaledTanh), 170);
        assert_eq!(Mlp::param_count(&[1, 56, 1], Head::Linear), 169);
    }

    #[test]
    fn zero_net_maps_anything_to_zero() {
        let (mlp, params) = build(&[2, 8, 3], Head::Linear);
        let out = mlp.forward(&params, &[1.7, -4.0]);
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_rectifier_layer() {
        // Identity weights into a rectified layer, identity readout:
        // (-1, 2) -> relu -> (0, 2).
        let (mlp, mut params) = build(&[2, 2, 2], Head::Linear);
        params[0] = 1.0; // hidden W = I
        params[3] = 1.0;
        params[6] = 1.0; // output W = I
        params[9] = 1.0;
        let out = mlp.forward(&params, &[-1.0, 2.0]);
        assert_eq!(out, vec![0.0, 2.0]);
    }

    // Independent dense evaluation: explicit loops over a row-major matrix.
    fn reference_forward(mlp: &Mlp, params: &[f64], input: &[f64]) -> Vec<f64> {
        let base = mlp.span().start;
        let sizes = mlp.sizes().to_vec();
        let mut cur = input.to_vec();
        let mut off = base;
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut next = vec![0.0; n_out];
            for o in 0..n_out {
                let mut acc = params[off + n_in * n_out + o];
                for i in 0..n_in {
                    acc += params[off + o * n_in + i] * cur[i];
                }
                next[o] = if l + 1 < sizes.len() - 1 {
                    acc.max(0.0)
                } else {
                    acc
                };
            }
            off += n_in * n_out + n_out;
            cur = next;
        }
        if mlp.head() == Head::ScaledTanh {
            let s = params[mlp.span().end - 1];
            for v in cur.iter_mut() {
                *v = s * v.tanh();
            }
        }
        cur
    }

    #[test]
    fn random_net_matches_reference_evaluation() {
        let mut rng = StdRng::seed_from_u64(11);
        for &head in &[Head::Linear, Head::ScaledTanh] {
            let (mlp, mut params) = build(&[3, 8, 8, 2], head);
            for p in params.iter_mut() {
                *p = rng.gen_range(-1.0..1.0);
            }
            let input = [0.6, -1.3, 2.2];
            let got = mlp.forward(&params, &input);
            let want = reference_forward(&mlp, &params, &input);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12, "got {g}, want {w}");
            }
        }
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut rng = StdRng::seed_from_u64(3);
        let (mlp, mut params) = build(&[2, 8, 4], Head::Linear);
        mlp.init(&mut params, &mut rng, false);
        let input = [0.4, -0.9];
        let plain = mlp.forward(&params, &input);

        let tape = Tape::new();
        let pv = tape.param_vars(&params);
        let iv: Vec<_> = input.iter().map(|&v| tape.constant(v)).collect();
        let traced = mlp.forward(&pv, &iv);
        for (p, t) in plain.iter().zip(&traced) {
            assert_eq!(p.to_bits(), t.val().to_bits());
        }
    }

    #[test]
    fn scaled_tanh_output_is_bounded_by_scale() {
        let mut rng = StdRng::seed_from_u64(5);
        let (mlp, mut params) = build(&[1, 8, 1], Head::ScaledTanh);
        mlp.init(&mut params, &mut rng, false);
        let scale_idx = mlp.span().end - 1;
        params[scale_idx] = 2.5;
        for i in -50..50 {
            let out = mlp.forward(&params, &[i as f64 * 0.7]);
            assert!(out[0].abs() <= 2.5);
        }
    }

    #[test]
    fn input_size_mismatch_is_a_fault() {
        let (mlp, params) = build(&[2, 4, 1], Head::Linear);
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            mlp.forward(&params, &[1.0])
        }));
        assert!(r.is_err());
    }
}

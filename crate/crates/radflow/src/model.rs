//! Full flow stack over a standard normal base: exact log-likelihood with
//! per-layer traces, exact sampling, a brute-force mixture-enumeration
//! oracle, and quadrature-based normalization checks.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{LayoutBuilder, MlpScratch, Scalar};
use crate::coupling::{AffineCoupling, CouplingScratch, RadCoupling};
use crate::fold::{corrected_logits_parts, forward_piece, gating_log_prob, GatingInput, Piece};

const LN_2PI: f64 = 1.8378770664093453;

/// Model family selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Rad,
    RealNvp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rad => "rad",
            ModelKind::RealNvp => "realnvp",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        match s {
            "rad" => Some(ModelKind::Rad),
            "realnvp" => Some(ModelKind::RealNvp),
            _ => None,
        }
    }
}

/// One coupling layer of either family.
#[derive(Clone, Debug)]
pub enum Layer {
    Affine(AffineCoupling),
    Rad(RadCoupling),
}

/// Ordered coupling stack with a standard normal base density.
#[derive(Clone, Debug)]
pub struct FlowModel {
    pub kind: ModelKind,
    pub dim: usize,
    pub hidden: usize,
    pub layers: Vec<Layer>,
    pub params: Vec<f64>,
}

/// Receives per-layer values during a forward pass. The no-op implementation
/// compiles away in the training hot path.
pub trait TraceSink {
    fn layer<S: Scalar>(&mut self, z: &[S], k: &[u8], in_band: &[bool], plj: S);
    fn finish<S: Scalar>(&mut self, z: &[S], base_log_prob: S, total: S);
}

/// Sink that records nothing.
pub struct NoTrace;

impl TraceSink for NoTrace {
    fn layer<S: Scalar>(&mut self, _: &[S], _: &[u8], _: &[bool], _: S) {}
    fn finish<S: Scalar>(&mut self, _: &[S], _: S, _: S) {}
}

/// Per-layer record of one point's pass through the stack.
#[derive(Clone, Debug, Default)]
pub struct LayerTrace {
    pub z: Vec<f64>,
    pub k: Vec<u8>,
    pub in_band: Vec<bool>,
    pub pseudo_log_jac: f64,
}

/// Complete inference trace: all intermediate latents, branch labels, and
/// the log-probability decomposition.
#[derive(Clone, Debug, Default)]
pub struct InferenceTrace {
    pub layers: Vec<LayerTrace>,
    pub final_z: Vec<f64>,
    pub base_log_prob: f64,
    pub total_log_prob: f64,
}

impl InferenceTrace {
    /// Hash of every discrete decision (branch labels and band membership),
    /// used to detect knot-straddling finite-difference stencils.
    pub fn branch_signature(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut mix = |byte: u8| {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x100000001b3);
        };
        for layer in &self.layers {
            for &k in &layer.k {
                mix(k);
            }
            for &b in &layer.in_band {
                mix(u8::from(b));
            }
        }
        h
    }
}

impl TraceSink for InferenceTrace {
    fn layer<S: Scalar>(&mut self, z: &[S], k: &[u8], in_band: &[bool], plj: S) {
        self.layers.push(LayerTrace {
            z: z.iter().map(|v| v.val()).collect(),
            k: k.to_vec(),
            in_band: in_band.to_vec(),
            pseudo_log_jac: plj.val(),
        });
    }

    fn finish<S: Scalar>(&mut self, z: &[S], base_log_prob: S, total: S) {
        self.final_z = z.iter().map(|v| v.val()).collect();
        self.base_log_prob = base_log_prob.val();
        self.total_log_prob = total.val();
    }
}

/// Reusable buffers for repeated [`FlowModel::log_prob_with`] calls.
pub struct ModelScratch<S> {
    coupling: CouplingScratch<S>,
    x: Vec<S>,
    k: Vec<u8>,
    band: Vec<bool>,
}

impl<S> Default for ModelScratch<S> {
    fn default() -> Self {
        ModelScratch {
            coupling: CouplingScratch::default(),
            x: Vec::new(),
            k: Vec::new(),
            band: Vec::new(),
        }
    }
}

/// One draw from the model: the sample and its latent path. `z[l]` is the
/// latent on the output side of layer `l`; `k[l]` holds the branch labels
/// drawn when inverting layer `l` (empty for affine layers).
#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub x: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub k: Vec<Vec<u8>>,
}

impl FlowModel {
    /// Builds the layer structure without allocating parameter storage;
    /// returns the layers and the total parameter count.
    fn structure(
        kind: ModelKind,
        dim: usize,
        n_layers: usize,
        hidden: usize,
    ) -> (Vec<Layer>, usize) {
        let mut layout = LayoutBuilder::new();
        let layers = (0..n_layers)
            .map(|l| match kind {
                ModelKind::Rad => Layer::Rad(RadCoupling::new(l, dim, hidden, &mut layout)),
                ModelKind::RealNvp => {
                    Layer::Affine(AffineCoupling::new(l, dim, hidden, &mut layout))
                }
            })
            .collect();
        (layers, layout.total())
    }

    /// Parameter count of a model with the given structure, without
    /// building it.
    pub fn expected_param_count(
        kind: ModelKind,
        dim: usize,
        n_layers: usize,
        hidden: usize,
    ) -> usize {
        Self::structure(kind, dim, n_layers, hidden).1
    }

    pub fn new(
        kind: ModelKind,
        dim: usize,
        n_layers: usize,
        hidden: usize,
        init_seed: u64,
    ) -> FlowModel {
        use rand::SeedableRng;
        let (layers, total) = Self::structure(kind, dim, n_layers, hidden);
        let mut params = vec![0.0; total];
        let mut rng = rand::rngs::StdRng::seed_from_u64(init_seed);
        for layer in &layers {
            match layer {
                Layer::Rad(r) => r.init(&mut params, &mut rng),
                Layer::Affine(a) => a.init(&mut params, &mut rng),
            }
        }
        FlowModel {
            kind,
            dim,
            hidden,
            layers,
            params,
        }
    }

    /// RAD stack: per layer, a fold-parameter conditioner and a gating head.
    pub fn new_rad(dim: usize, n_layers: usize, hidden: usize, init_seed: u64) -> FlowModel {
        Self::new(ModelKind::Rad, dim, n_layers, hidden, init_seed)
    }

    /// Affine-coupling stack (scale and shift networks per layer).
    pub fn new_realnvp(dim: usize, n_layers: usize, hidden: usize, init_seed: u64) -> FlowModel {
        Self::new(ModelKind::RealNvp, dim, n_layers, hidden, init_seed)
    }

    /// Randomly parameterized RAD model suitable for quadrature checks.
    ///
    /// Draws resemble states reachable by training rather than arbitrary
    /// weight noise: fold slopes and half-widths stay moderate, and each
    /// gating head is wired to prefer the matching extreme branch near its
    /// band edges. Without confident gating the outer pieces have slope
    /// `alpha * p` with small `p`, which smears a fixed fraction of mass
    /// over a range thousands of units wide; no fixed uniform grid can
    /// integrate that, even though the density still sums to one exactly.
    pub fn new_rad_randomized(dim: usize, n_layers: usize, hidden: usize, seed: u64) -> FlowModel {
        use rand::SeedableRng;
        let mut m = Self::new_rad(dim, n_layers, hidden, seed);
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for layer in &m.layers {
            let Layer::Rad(r) = layer else { continue };
            // constant fold geometry per layer: conditioner output biases
            // only, giving slopes in about [0.64, 1.57] and half-widths near
            // the softplus origin
            let (w2, b2) = r.conditioner.layer_spans(1);
            for i in w2 {
                m.params[i] = 0.0;
            }
            for i in b2 {
                m.params[i] = rng.gen_range(-0.15..0.15);
            }
            // gating: logits roughly (-c u, noise, +c u) plus noise, so the
            // extreme-branch probability at the band edges stays high
            let g = &r.gating.net;
            let n_in = g.sizes()[0];
            let h = g.sizes()[1];
            let (w1, b1) = g.layer_spans(0);
            let (gw2, gb2) = g.layer_spans(1);
            for i in w1.clone() {
                m.params[i] = rng.gen_range(-0.15..0.15);
            }
            for i in b1 {
                m.params[i] = rng.gen_range(-0.15..0.15);
            }
            for i in gw2.clone() {
                m.params[i] = rng.gen_range(-0.15..0.15);
            }
            for i in gb2 {
                m.params[i] = rng.gen_range(-0.15..0.15);
            }
            // hidden units 0 and 1 compute relu(u) and relu(-u)
            let u_idx = n_in - 1;
            for i in w1.clone().take(2 * n_in) {
                m.params[i] = 0.0;
            }
            m.params[w1.start + u_idx] = 1.0;
            m.params[w1.start + n_in + u_idx] = -1.0;
            let c = rng.gen_range(3.0..5.0);
            m.params[gw2.start] = -c; // logit 1 <- relu(u)
            m.params[gw2.start + 1] = c; // logit 1 <- relu(-u)
            m.params[gw2.start + 2 * h] = c; // logit 3 <- relu(u)
            m.params[gw2.start + 2 * h + 1] = -c;
        }
        m
    }

    /// Randomly parameterized affine stack for quadrature checks. Scale
    /// heads are bounded away from both zero and saturation and shift heads
    /// stay moderate, so each axis is stretched by at most ~e^1.2 overall
    /// and a uniform grid of a few hundred points per side resolves the
    /// density.
    pub fn new_realnvp_randomized(
        dim: usize,
        n_layers: usize,
        hidden: usize,
        seed: u64,
    ) -> FlowModel {
        use rand::SeedableRng;
        let mut m = Self::new_realnvp(dim, n_layers, hidden, seed);
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
        for p in m.params.iter_mut() {
            *p += rng.gen_range(-0.3..0.3);
        }
        for layer in &m.layers {
            let Layer::Affine(a) = layer else { continue };
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            m.params[a.scale_net.span().end - 1] = sign * rng.gen_range(0.25..0.4);
            let (w2, b2) = a.shift_net.layer_spans(1);
            for i in w2.chain(b2) {
                m.params[i] = rng.gen_range(-0.1..0.1);
            }
        }
        m
    }

    /// Largest density found on the boundary of `[-r, r]^2`, probed at
    /// `n_probe` points per edge. Used to pick a quadrature extent.
    pub fn boundary_max_density(&self, r: f64, n_probe: usize) -> f64 {
        assert_eq!(self.dim, 2);
        let mut max = 0.0f64;
        for i in 0..n_probe {
            let t = -r + 2.0 * r * i as f64 / (n_probe - 1) as f64;
            for point in [[t, -r], [t, r], [-r, t], [r, t]] {
                max = max.max(self.log_prob_only(&point).exp());
            }
        }
        max
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Forward pass under any scalar context, accumulating pseudo
    /// log-Jacobians and the base log-density.
    pub fn log_prob_with<S: Scalar, T: TraceSink>(
        &self,
        params: &[S],
        x: &[S],
        scratch: &mut ModelScratch<S>,
        sink: &mut T,
    ) -> S {
        assert_eq!(x.len(), self.dim, "log_prob: point has wrong dimension");
        scratch.x.clear();
        scratch.x.extend_from_slice(x);
        let zero = x[0].lift(0.0);
        let mut total = zero;
        for layer in &self.layers {
            scratch.k.clear();
            scratch.band.clear();
            let plj = match layer {
                Layer::Affine(a) => a.forward_into(params, &mut scratch.x, &mut scratch.coupling),
                Layer::Rad(r) => r.forward_into(
                    params,
                    &mut scratch.x,
                    &mut scratch.coupling,
                    &mut scratch.k,
                    &mut scratch.band,
                ),
            };
            sink.layer(&scratch.x, &scratch.k, &scratch.band, plj);
            total = total + plj;
        }
        let mut sq = scratch.x[0] * scratch.x[0];
        for zi in &scratch.x[1..] {
            sq = sq + *zi * *zi;
        }
        let base = sq.scale(-0.5).shift(-0.5 * self.dim as f64 * LN_2PI);
        total = total + base;
        sink.finish(&scratch.x, base, total);
        total
    }

    /// Exact log-density with the full inference trace. Non-finite
    /// intermediates fault with the layer index.
    pub fn log_prob(&self, x: &[f64]) -> (f64, InferenceTrace) {
        let mut trace = InferenceTrace::default();
        let mut scratch = ModelScratch::default();
        let lp = self.log_prob_with(&self.params, x, &mut scratch, &mut trace);
        for (li, layer) in trace.layers.iter().enumerate() {
            for &z in &layer.z {
                assert!(
                    z.is_finite(),
                    "non-finite intermediate at layer {li} for input {x:?}"
                );
            }
        }
        (lp, trace)
    }

    /// Exact log-density without trace bookkeeping.
    pub fn log_prob_only(&self, x: &[f64]) -> f64 {
        let mut scratch = ModelScratch::default();
        self.log_prob_with(&self.params, x, &mut scratch, &mut NoTrace)
    }

    /// Draws `n` exact samples: base noise, then last-to-first layer
    /// inversion, sampling branch labels from the gating distribution at
    /// each RAD layer.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<SampleRecord> {
        assert!(n >= 1, "sample: n must be at least 1");
        (0..n)
            .map(|_| {
                let mut cur: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                let mut zs = vec![Vec::new(); self.layers.len()];
                let mut ks = vec![Vec::new(); self.layers.len()];
                for (l, layer) in self.layers.iter().enumerate().rev() {
                    zs[l] = cur.clone();
                    match layer {
                        Layer::Affine(a) => a.inverse_into(&self.params, &mut cur),
                        Layer::Rad(r) => {
                            let k = r.sample_branch(&self.params, &cur, rng);
                            r.inverse_into(&self.params, &mut cur, &k);
                            ks[l] = k;
                        }
                    }
                }
                SampleRecord {
                    x: cur,
                    z: zs,
                    k: ks,
                }
            })
            .collect()
    }

    /// Number of branch-label paths the brute-force oracle enumerates.
    pub fn path_count(&self) -> u64 {
        let mut count = 1u64;
        for layer in &self.layers {
            if let Layer::Rad(r) = layer {
                for _ in &r.split.xform {
                    count = count.saturating_mul(3);
                }
            }
        }
        count
    }

    /// Mixture-enumeration oracle: sums the density contribution of every
    /// branch-label path. Supports are disjoint, so exactly one path
    /// contributes, and the sum must equal [`FlowModel::log_prob`].
    pub fn brute_force_log_prob(&self, x: &[f64]) -> f64 {
        let paths = self.path_count();
        assert!(
            paths <= 100_000,
            "brute force limited to 1e5 paths, got {paths}"
        );
        let mut n_slots = 0;
        for layer in &self.layers {
            if let Layer::Rad(r) = layer {
                n_slots += r.split.xform.len();
            }
        }
        let mut assignment = vec![1u8; n_slots];
        let mut contributions = Vec::new();
        loop {
            if let Some(lp) = self.path_log_prob(x, &assignment) {
                contributions.push(lp);
            }
            // advance the mixed-radix assignment over {1,2,3}
            let mut pos = 0;
            loop {
                if pos == assignment.len() {
                    let max = contributions
                        .iter()
                        .cloned()
                        .fold(f64::NEG_INFINITY, f64::max);
                    if !max.is_finite() {
                        return f64::NEG_INFINITY;
                    }
                    let sum: f64 = contributions.iter().map(|&c| (c - max).exp()).sum();
                    return max + sum.ln();
                }
                if assignment[pos] < 3 {
                    assignment[pos] += 1;
                    break;
                }
                assignment[pos] = 1;
                pos += 1;
            }
        }
    }

    /// Log contribution of one fixed branch path, or `None` when `x` leaves
    /// the path's support. Branch domains follow the label formula:
    /// branch 1 on `x <= -beta`, branch 2 on `(-beta, beta]`, branch 3 above;
    /// outer-knot ties belong to the inner pieces.
    fn path_log_prob(&self, x: &[f64], assignment: &[u8]) -> Option<f64> {
        let mut z = x.to_vec();
        let mut acc = 0.0f64;
        let mut slot_idx = 0;
        for layer in &self.layers {
            match layer {
                Layer::Affine(a) => {
                    let mut scratch = CouplingScratch::default();
                    acc += a.forward_into(&self.params, &mut z, &mut scratch);
                }
                Layer::Rad(r) => {
                    let pass: Vec<f64> = r.split.pass.iter().map(|&i| z[i]).collect();
                    let fps = r.fold_params(&self.params, &pass);
                    for (j, &ci) in r.split.xform.iter().enumerate() {
                        let k = assignment[slot_idx + j];
                        let fp = &fps[j];
                        let x_c = z[ci];
                        let piece = match k {
                            1 if x_c <= -fp.beta => {
                                if x_c >= -fp.outer_lo {
                                    Piece::InnerLo
                                } else {
                                    Piece::OuterLo
                                }
                            }
                            2 if x_c > -fp.beta && x_c <= fp.beta => Piece::Center,
                            3 if x_c > fp.beta => {
                                if x_c <= fp.outer_hi {
                                    Piece::InnerHi
                                } else {
                                    Piece::OuterHi
                                }
                            }
                            _ => return None,
                        };
                        let (z_c, log_slope) = forward_piece(piece, x_c, fp);
                        z[ci] = z_c;
                        acc += log_slope;
                        let gate_lp = if piece.in_band() {
                            let mut input = pass.clone();
                            input.push(z_c);
                            let raw = r.gating.raw_logits(
                                &self.params,
                                &input,
                                &mut MlpScratch::default(),
                            );
                            let s = corrected_logits_parts(&raw, z_c, &fp.log_alpha, fp.band);
                            gating_log_prob(&GatingInput::InBand { logits: s }, k)
                        } else {
                            gating_log_prob(
                                &GatingInput::OutOfBand {
                                    forced: k,
                                    zero: 0.0,
                                },
                                k,
                            )
                        };
                        acc += gate_lp;
                    }
                    slot_idx += r.split.xform.len();
                }
            }
        }
        let sq: f64 = z.iter().map(|v| v * v).sum();
        Some(acc - 0.5 * sq - 0.5 * self.dim as f64 * LN_2PI)
    }

    /// Trapezoidal integral of the density over `[-r, r]^2` on an `n x n`
    /// grid. The grid must extend far enough that the boundary density is
    /// negligible for the result to approximate total mass.
    pub fn total_mass(&self, r: f64, n: usize) -> f64 {
        assert_eq!(self.dim, 2, "total_mass implemented for 2-D models");
        assert!(n >= 2);
        let h = 2.0 * r / (n - 1) as f64;
        let mut scratch = ModelScratch::default();
        let mut sum = 0.0;
        for i in 0..n {
            let x0 = -r + i as f64 * h;
            let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            for j in 0..n {
                let x1 = -r + j as f64 * h;
                let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                let lp = self.log_prob_with(&self.params, &[x0, x1], &mut scratch, &mut NoTrace);
                sum += wi * wj * lp.exp();
            }
        }
        sum * h * h
    }
}

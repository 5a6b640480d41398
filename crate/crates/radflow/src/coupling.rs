//! Coupling layers: the affine baseline and the RAD layer whose conditioner
//! parameterizes a per-coordinate fold.
//!
//! A coupling layer passes one index set through unchanged and transforms
//! the complement with parameters computed from the pass-through part. The
//! RAD gating head for a transformed coordinate reads `(z_pass..., z_c)`,
//! never other transformed coordinates, so edge-probability evaluation for
//! one coordinate cannot depend on another coordinate's fold.

use rand::Rng;

use crate::autodiff::{Head, LayoutBuilder, Mlp, MlpScratch, Scalar};
use crate::fold::{
    classify, corrected_logits_parts, forward_piece, gating_log_prob, log_softmax3, FoldParams,
    GatingHead, GatingInput, Piece, Side, BETA_MIN, GATE_FLOOR,
};

/// Bound on `|log alpha|` from the conditioner: slopes are
/// `exp(LOG_SLOPE_BOUND * tanh(raw))`, keeping every fold slope in
/// `[e^-3, e^3]`.
pub const LOG_SLOPE_BOUND: f64 = 3.0;

/// Which coordinates pass through and which are transformed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub pass: Vec<usize>,
    pub xform: Vec<usize>,
}

/// Alternating split: even layers transform the second half of the
/// coordinates, odd layers the first half.
pub fn alternate_split(layer_idx: usize, dim: usize) -> Split {
    assert!(dim >= 2, "coupling requires dimension >= 2, got {dim}");
    let half = dim / 2;
    let (pass, xform) = if layer_idx.is_multiple_of(2) {
        ((0..half).collect(), (half..dim).collect())
    } else {
        (
            (half..dim).collect::<Vec<_>>(),
            (0..half).collect::<Vec<_>>(),
        )
    };
    Split { pass, xform }
}

/// Reusable buffers for layer evaluation.
pub struct CouplingScratch<S> {
    mlp: MlpScratch<S>,
    net_a: Vec<S>,
    net_b: Vec<S>,
    pass: Vec<S>,
    gate_in: Vec<S>,
}

impl<S> Default for CouplingScratch<S> {
    fn default() -> Self {
        CouplingScratch {
            mlp: MlpScratch::default(),
            net_a: Vec::new(),
            net_b: Vec::new(),
            pass: Vec::new(),
            gate_in: Vec::new(),
        }
    }
}

/// Result of one RAD layer evaluation.
#[derive(Clone, Debug)]
pub struct LayerResult<S> {
    pub z: Vec<S>,
    /// Branch label per transformed coordinate.
    pub k: Vec<u8>,
    /// Sum over transformed coordinates of log-slope plus gating
    /// log-probability.
    pub pseudo_log_jac: S,
    pub in_band: Vec<bool>,
}

/// `z_c = x_c * exp(s(x_pass)) + t(x_pass)` on the transformed coordinates.
#[derive(Clone, Debug)]
pub struct AffineCoupling {
    pub split: Split,
    pub scale_net: Mlp,
    pub shift_net: Mlp,
}

impl AffineCoupling {
    pub fn new(layer_idx: usize, dim: usize, hidden: usize, layout: &mut LayoutBuilder) -> Self {
        let split = alternate_split(layer_idx, dim);
        let scale_net = Mlp::new(
            vec![split.pass.len(), hidden, split.xform.len()],
            Head::ScaledTanh,
            layout,
        );
        let shift_net = Mlp::new(
            vec![split.pass.len(), hidden, split.xform.len()],
            Head::Linear,
            layout,
        );
        AffineCoupling {
            split,
            scale_net,
            shift_net,
        }
    }

    pub fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        self.scale_net.init(params, rng, true);
        self.shift_net.init(params, rng, true);
    }

    /// In-place forward; returns the log-determinant (sum of scale outputs).
    pub fn forward_into<S: Scalar>(
        &self,
        params: &[S],
        x: &mut [S],
        scratch: &mut CouplingScratch<S>,
    ) -> S {
        scratch.pass.clear();
        for &i in &self.split.pass {
            scratch.pass.push(x[i]);
        }
        self.scale_net
            .forward_into(params, &scratch.pass, &mut scratch.mlp, &mut scratch.net_a);
        self.shift_net
            .forward_into(params, &scratch.pass, &mut scratch.mlp, &mut scratch.net_b);
        let mut log_det = x[0].lift(0.0);
        for (j, &ci) in self.split.xform.iter().enumerate() {
            let s = scratch.net_a[j];
            let t = scratch.net_b[j];
            x[ci] = x[ci] * s.exp() + t;
            log_det = log_det + s;
        }
        log_det
    }

    /// Allocating forward returning `(z, log_det)`.
    pub fn forward<S: Scalar>(&self, params: &[S], x: &[S]) -> (Vec<S>, S) {
        let mut z = x.to_vec();
        let mut scratch = CouplingScratch::default();
        let ld = self.forward_into(params, &mut z, &mut scratch);
        (z, ld)
    }

    /// Exact in-place inverse.
    pub fn inverse_into(&self, params: &[f64], z: &mut [f64]) {
        let pass: Vec<f64> = self.split.pass.iter().map(|&i| z[i]).collect();
        let s = self.scale_net.forward(params, &pass);
        let t = self.shift_net.forward(params, &pass);
        for (j, &ci) in self.split.xform.iter().enumerate() {
            z[ci] = (z[ci] - t[j]) * (-s[j]).exp();
        }
    }

    pub fn inverse(&self, params: &[f64], z: &[f64]) -> Vec<f64> {
        let mut x = z.to_vec();
        self.inverse_into(params, &mut x);
        x
    }
}

/// Conditioner raw outputs to fold primitives: slopes
/// `alpha_i = exp(3 tanh(raw_i))`, half-width
/// `beta = softplus(raw_3) + BETA_MIN`, plus derived band and outer knots.
fn fold_core<S: Scalar>(raw: &[S]) -> FoldCore<S> {
    let log_alpha = [
        raw[0].tanh().scale(LOG_SLOPE_BOUND),
        raw[1].tanh().scale(LOG_SLOPE_BOUND),
        raw[2].tanh().scale(LOG_SLOPE_BOUND),
    ];
    let alpha = [log_alpha[0].exp(), log_alpha[1].exp(), log_alpha[2].exp()];
    let beta = raw[3].softplus().shift(BETA_MIN);
    let band = alpha[1] * beta;
    let outer_lo = beta * (alpha[1] / alpha[0]).scale(2.0).shift(1.0);
    let outer_hi = beta * (alpha[1] / alpha[2]).scale(2.0).shift(1.0);
    FoldCore {
        alpha,
        log_alpha,
        beta,
        band,
        outer_lo,
        outer_hi,
    }
}

struct FoldCore<S> {
    alpha: [S; 3],
    log_alpha: [S; 3],
    beta: S,
    band: S,
    outer_lo: S,
    outer_hi: S,
}

impl<S: Scalar> FoldCore<S> {
    fn with_edges(self, edge_lo: (S, S), edge_hi: (S, S)) -> FoldParams<S> {
        FoldParams {
            alpha: self.alpha,
            log_alpha: self.log_alpha,
            beta: self.beta,
            band: self.band,
            outer_lo: self.outer_lo,
            outer_hi: self.outer_hi,
            edge_lo: edge_lo.0,
            log_edge_lo: edge_lo.1,
            edge_hi: edge_hi.0,
            log_edge_hi: edge_hi.1,
        }
    }
}

/// Coupling layer whose transformed coordinates go through a fold with
/// conditioner-controlled parameters and a gating head over branch labels.
#[derive(Clone, Debug)]
pub struct RadCoupling {
    pub split: Split,
    pub conditioner: Mlp,
    pub gating: GatingHead,
}

impl RadCoupling {
    pub fn new(layer_idx: usize, dim: usize, hidden: usize, layout: &mut LayoutBuilder) -> Self {
        let split = alternate_split(layer_idx, dim);
        let conditioner = Mlp::new(
            vec![split.pass.len(), hidden, 4 * split.xform.len()],
            Head::Linear,
            layout,
        );
        let gating = GatingHead::new(Mlp::new(
            vec![split.pass.len() + 1, hidden, 3],
            Head::Linear,
            layout,
        ));
        RadCoupling {
            split,
            conditioner,
            gating,
        }
    }

    pub fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        self.conditioner.init(params, rng, true);
        self.gating.net.init(params, rng, true);
    }

    /// Complete fold parameters (both edge probabilities evaluated) for each
    /// transformed coordinate, given the pass-through coordinates.
    pub fn fold_params<S: Scalar>(&self, params: &[S], x_pass: &[S]) -> Vec<FoldParams<S>> {
        let raw = self.conditioner.forward(params, x_pass);
        let mut scratch = MlpScratch::default();
        let mut buf = Vec::with_capacity(x_pass.len() + 1);
        self.split
            .xform
            .iter()
            .enumerate()
            .map(|(j, _)| {
                let core = fold_core(&raw[4 * j..4 * j + 4]);
                let lo = self.gating.edge_prob_side(
                    params,
                    x_pass,
                    Side::Lo,
                    &core.log_alpha,
                    core.band,
                    &mut scratch,
                    &mut buf,
                );
                let hi = self.gating.edge_prob_side(
                    params,
                    x_pass,
                    Side::Hi,
                    &core.log_alpha,
                    core.band,
                    &mut scratch,
                    &mut buf,
                );
                core.with_edges(lo, hi)
            })
            .collect()
    }

    /// In-place forward; fills `k_out`/`band_out` per transformed coordinate
    /// and returns the pseudo log-Jacobian.
    ///
    /// Edge probabilities cost one extra gating evaluation, so they are only
    /// computed for coordinates that actually land on an outer piece; in-band
    /// coordinates spend that evaluation on the gating term instead.
    pub fn forward_into<S: Scalar>(
        &self,
        params: &[S],
        x: &mut [S],
        scratch: &mut CouplingScratch<S>,
        k_out: &mut Vec<u8>,
        band_out: &mut Vec<bool>,
    ) -> S {
        scratch.pass.clear();
        for &i in &self.split.pass {
            scratch.pass.push(x[i]);
        }
        self.conditioner
            .forward_into(params, &scratch.pass, &mut scratch.mlp, &mut scratch.net_a);
        let zero = x[0].lift(0.0);
        let one = x[0].lift(1.0);
        let mut plj = zero;
        for (j, &ci) in self.split.xform.iter().enumerate() {
            let core = fold_core(&scratch.net_a[4 * j..4 * j + 4]);
            let x_c = x[ci];
            let piece = classify(
                x_c.val(),
                core.beta.val(),
                core.outer_lo.val(),
                core.outer_hi.val(),
            );
            let dummy = (one, zero);
            let fp = match piece {
                Piece::OuterLo => {
                    let lo = self.gating.edge_prob_side(
                        params,
                        &scratch.pass,
                        Side::Lo,
                        &core.log_alpha,
                        core.band,
                        &mut scratch.mlp,
                        &mut scratch.gate_in,
                    );
                    core.with_edges(lo, dummy)
                }
                Piece::OuterHi => {
                    let hi = self.gating.edge_prob_side(
                        params,
                        &scratch.pass,
                        Side::Hi,
                        &core.log_alpha,
                        core.band,
                        &mut scratch.mlp,
                        &mut scratch.gate_in,
                    );
                    core.with_edges(dummy, hi)
                }
                _ => core.with_edges(dummy, dummy),
            };
            let (z_c, log_slope) = forward_piece(piece, x_c, &fp);
            x[ci] = z_c;
            let gate_lp = if piece.in_band() {
                scratch.gate_in.clear();
                scratch.gate_in.extend_from_slice(&scratch.pass);
                scratch.gate_in.push(z_c);
                let raw_g = self
                    .gating
                    .raw_logits(params, &scratch.gate_in, &mut scratch.mlp);
                let s = corrected_logits_parts(&raw_g, z_c, &fp.log_alpha, fp.band);
                log_softmax3(&s)[piece.branch() as usize - 1].clamp_min(GATE_FLOOR.ln())
            } else {
                zero
            };
            plj = plj + log_slope + gate_lp;
            k_out.push(piece.branch());
            band_out.push(piece.in_band());
        }
        plj
    }

    /// Allocating forward returning a full [`LayerResult`].
    pub fn forward<S: Scalar>(&self, params: &[S], x: &[S]) -> LayerResult<S> {
        let mut z = x.to_vec();
        let mut scratch = CouplingScratch::default();
        let mut k = Vec::new();
        let mut in_band = Vec::new();
        let plj = self.forward_into(params, &mut z, &mut scratch, &mut k, &mut in_band);
        LayerResult {
            z,
            k,
            pseudo_log_jac: plj,
            in_band,
        }
    }

    /// In-place inverse for a consistent `(z, k)` assignment.
    pub fn inverse_into(&self, params: &[f64], z: &mut [f64], k: &[u8]) {
        assert_eq!(k.len(), self.split.xform.len(), "branch labels misaligned");
        let pass: Vec<f64> = self.split.pass.iter().map(|&i| z[i]).collect();
        let fps = self.fold_params(params, &pass);
        for (j, &ci) in self.split.xform.iter().enumerate() {
            z[ci] = crate::fold::fold_inverse(z[ci], k[j], &fps[j]);
        }
    }

    pub fn inverse(&self, params: &[f64], z: &[f64], k: &[u8]) -> Vec<f64> {
        let mut x = z.to_vec();
        self.inverse_into(params, &mut x, k);
        x
    }

    /// Draws branch labels for a latent point: categorical from the gating
    /// softmax inside the band, deterministic outside it.
    pub fn sample_branch<R: Rng>(&self, params: &[f64], z: &[f64], rng: &mut R) -> Vec<u8> {
        let pass: Vec<f64> = self.split.pass.iter().map(|&i| z[i]).collect();
        let raw_cond = self.conditioner.forward(params, &pass);
        let mut scratch = MlpScratch::default();
        let mut labels = Vec::with_capacity(self.split.xform.len());
        for (j, &ci) in self.split.xform.iter().enumerate() {
            let core = fold_core(&raw_cond[4 * j..4 * j + 4]);
            let z_c = z[ci];
            if z_c < -core.band {
                labels.push(1);
            } else if z_c > core.band {
                labels.push(3);
            } else {
                let mut input = pass.clone();
                input.push(z_c);
                let raw_g = self.gating.raw_logits(params, &input, &mut scratch);
                let s = corrected_logits_parts(&raw_g, z_c, &core.log_alpha, core.band);
                let lsm = log_softmax3(&s);
                let p = [lsm[0].exp(), lsm[1].exp(), lsm[2].exp()];
                let u: f64 = rng.gen();
                let label = if u < p[0] {
                    1
                } else if u < p[0] + p[1] {
                    2
                } else {
                    3
                };
                labels.push(label);
            }
        }
        labels
    }

    /// Gating log-probability of taking branch `k[j]` at latent `z`, summed
    /// over transformed coordinates. Used when scoring a sampled path.
    pub fn branch_log_prob(&self, params: &[f64], z: &[f64], k: &[u8]) -> f64 {
        let pass: Vec<f64> = self.split.pass.iter().map(|&i| z[i]).collect();
        let raw_cond = self.conditioner.forward(params, &pass);
        let mut scratch = MlpScratch::default();
        let mut total = 0.0;
        for (j, &ci) in self.split.xform.iter().enumerate() {
            let core = fold_core(&raw_cond[4 * j..4 * j + 4]);
            let z_c = z[ci];
            if z_c.abs() > core.band {
                let forced = if z_c < 0.0 { 1 } else { 3 };
                total += gating_log_prob(&GatingInput::OutOfBand { forced, zero: 0.0 }, k[j]);
            } else {
                let mut input = pass.clone();
                input.push(z_c);
                let raw_g = self.gating.raw_logits(params, &input, &mut scratch);
                let s = corrected_logits_parts(&raw_g, z_c, &core.log_alpha, core.band);
                total += gating_log_prob(&GatingInput::InBand { logits: s }, k[j]);
            }
        }
        total
    }
}

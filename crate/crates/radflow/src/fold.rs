//! Scalar piecewise-linear fold: forward, inverse, branch identification,
//! and the gating log-probabilities that make the pseudo log-Jacobian
//! continuous.
//!
//! The fold `f` has five linear pieces built from slopes `alpha = (a1, a2,
//! a3)` and half-width `beta`:
//!
//! ```text
//!   center      f(x) = -a2 x                         on (-beta, beta]
//!   inner-left  f(x) = a1 (x + beta) + a2 beta       on [-L, -beta]
//!   inner-right f(x) = a3 (x - beta) - a2 beta       on (beta, R]
//!   outer-left  slope a1 * edge_lo, continuing from -a2 beta below -L
//!   outer-right slope a3 * edge_hi, continuing from +a2 beta above R
//! ```
//!
//! with outer knots `L = (1 + 2 a2/a1) beta` and `R = (1 + 2 a2/a3) beta`.
//! Each inner piece spans the full band `[-a2 beta, a2 beta]`, so every
//! in-band output has exactly three preimages (one per branch) and every
//! out-of-band output exactly one. `edge_lo`/`edge_hi` are the gating
//! probabilities of the extreme branches evaluated at the band edges; using
//! them as outer slope factors cancels the gating discontinuity there, and
//! the cosine-blended logit correction cancels it at the fold points, so
//! `log p(k|z) + log|f'|` is continuous across all four knots.
//!
//! Branch labels follow `1 + [x > -beta] + [x > beta]`; the center set is
//! half-open on the left so this formula holds pointwise, and ties at the
//! outer knots resolve to the inner pieces.

use std::f64::consts::PI;

use crate::autodiff::{Mlp, MlpScratch, Scalar};

/// Lower clamp for gating probabilities. A zero edge probability would give
/// an outer piece of slope zero and destroy invertibility.
pub const GATE_FLOOR: f64 = 1e-6;

/// Lower bound on the fold half-width; `beta = 0` collapses the center
/// branch to measure zero.
pub const BETA_MIN: f64 = 1e-3;

/// Which of the five linear pieces contains a given input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Piece {
    OuterLo,
    InnerLo,
    Center,
    InnerHi,
    OuterHi,
}

impl Piece {
    pub fn branch(self) -> u8 {
        match self {
            Piece::OuterLo | Piece::InnerLo => 1,
            Piece::Center => 2,
            Piece::InnerHi | Piece::OuterHi => 3,
        }
    }

    /// True when the piece maps into the band (three-preimage region).
    pub fn in_band(self) -> bool {
        !matches!(self, Piece::OuterLo | Piece::OuterHi)
    }
}

/// Band side selector for edge-probability evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Lo,
    Hi,
}

/// Complete parameter set of one fold, including derived knots and band
/// edges. `edge_lo = p(1 | -a2 beta)` and `edge_hi = p(3 | +a2 beta)` scale
/// the outer slopes.
#[derive(Clone, Copy, Debug)]
pub struct FoldParams<S> {
    pub alpha: [S; 3],
    pub log_alpha: [S; 3],
    pub beta: S,
    /// Band half-width `a2 * beta` (band edges at +/- this value).
    pub band: S,
    /// Magnitude of the left outer knot `(1 + 2 a2/a1) beta`.
    pub outer_lo: S,
    /// Magnitude of the right outer knot `(1 + 2 a2/a3) beta`.
    pub outer_hi: S,
    pub edge_lo: S,
    pub log_edge_lo: S,
    pub edge_hi: S,
    pub log_edge_hi: S,
}

impl<S: Scalar> FoldParams<S> {
    /// Builds the derived geometry from primitives. Edge probabilities are
    /// taken as (probability, log-probability) pairs so tape evaluation can
    /// reuse the gating network's log-softmax output directly.
    pub fn derive(
        alpha: [S; 3],
        log_alpha: [S; 3],
        beta: S,
        edge_lo: (S, S),
        edge_hi: (S, S),
    ) -> Self {
        let band = alpha[1] * beta;
        let outer_lo = beta * (alpha[1] / alpha[0]).scale(2.0).shift(1.0);
        let outer_hi = beta * (alpha[1] / alpha[2]).scale(2.0).shift(1.0);
        FoldParams {
            alpha,
            log_alpha,
            beta,
            band,
            outer_lo,
            outer_hi,
            edge_lo: edge_lo.0,
            log_edge_lo: edge_lo.1,
            edge_hi: edge_hi.0,
            log_edge_hi: edge_hi.1,
        }
    }
}

impl FoldParams<f64> {
    /// Plain-value constructor; validates the parameter invariants.
    pub fn from_values(alpha: [f64; 3], beta: f64, edge_lo: f64, edge_hi: f64) -> Self {
        assert!(
            alpha.iter().all(|&a| a > 0.0),
            "fold slopes must be positive"
        );
        assert!(beta >= BETA_MIN, "beta {beta} below minimum {BETA_MIN}");
        for e in [edge_lo, edge_hi] {
            assert!(
                (GATE_FLOOR..=1.0).contains(&e),
                "edge probability {e} outside [{GATE_FLOOR}, 1]"
            );
        }
        Self::derive(
            alpha,
            [alpha[0].ln(), alpha[1].ln(), alpha[2].ln()],
            beta,
            (edge_lo, edge_lo.ln()),
            (edge_hi, edge_hi.ln()),
        )
    }
}

/// Output of one fold evaluation.
#[derive(Clone, Copy, Debug)]
pub struct FoldResult<S> {
    pub z: S,
    pub branch: u8,
    /// Log of the absolute slope of the active piece.
    pub log_slope: S,
    pub in_band: bool,
}

/// Locates the piece containing `x`. Ties: the center set is half-open on
/// the left (`branch(-beta) = 1`, `branch(beta) = 2`) and outer-knot ties go
/// to the inner pieces.
pub fn classify(x: f64, beta: f64, outer_lo: f64, outer_hi: f64) -> Piece {
    assert!(x.is_finite(), "fold input must be finite");
    if x < -outer_lo {
        Piece::OuterLo
    } else if x <= -beta {
        Piece::InnerLo
    } else if x <= beta {
        Piece::Center
    } else if x <= outer_hi {
        Piece::InnerHi
    } else {
        Piece::OuterHi
    }
}

/// Branch identification: `1 + [x > -beta] + [x > beta]`.
pub fn branch_id<S: Scalar>(x: f64, p: &FoldParams<S>) -> u8 {
    assert!(x.is_finite(), "fold input must be finite");
    let beta = p.beta.val();
    1 + u8::from(x > -beta) + u8::from(x > beta)
}

/// Evaluates one piece of the fold. `piece` must have been selected from the
/// same parameters (see [`classify`]).
pub fn forward_piece<S: Scalar>(piece: Piece, x: S, p: &FoldParams<S>) -> (S, S) {
    match piece {
        Piece::Center => (-(p.alpha[1] * x), p.log_alpha[1]),
        Piece::InnerLo => (p.alpha[0] * (x + p.beta) + p.band, p.log_alpha[0]),
        Piece::InnerHi => (p.alpha[2] * (x - p.beta) - p.band, p.log_alpha[2]),
        Piece::OuterLo => {
            let slope = p.alpha[0] * p.edge_lo;
            (
                slope * (x + p.outer_lo) - p.band,
                p.log_alpha[0] + p.log_edge_lo,
            )
        }
        Piece::OuterHi => {
            let slope = p.alpha[2] * p.edge_hi;
            (
                slope * (x - p.outer_hi) + p.band,
                p.log_alpha[2] + p.log_edge_hi,
            )
        }
    }
}

/// Full fold: piece selection, transformed value, branch label, log-slope,
/// and band membership.
pub fn fold_forward<S: Scalar>(x: S, p: &FoldParams<S>) -> FoldResult<S> {
    let piece = classify(x.val(), p.beta.val(), p.outer_lo.val(), p.outer_hi.val());
    let (z, log_slope) = forward_piece(piece, x, p);
    FoldResult {
        z,
        branch: piece.branch(),
        log_slope,
        in_band: piece.in_band(),
    }
}

/// Inverts the fold on the given branch. For out-of-band `z` the branch must
/// be the unique valid one (1 below the band, 3 above); anything else is an
/// inconsistent `(z, k)` pair and faults.
pub fn fold_inverse<S: Scalar>(z: S, branch: u8, p: &FoldParams<S>) -> S {
    let zv = z.val();
    let band = p.band.val();
    let slack = 1e-9 * (1.0 + band);
    match branch {
        1 => {
            if zv > band + slack {
                panic!("fold_inverse: z={zv} above band {band} cannot be branch 1");
            }
            if zv < -band {
                (z + p.band) / (p.alpha[0] * p.edge_lo) - p.outer_lo
            } else {
                (z - p.band) / p.alpha[0] - p.beta
            }
        }
        2 => {
            if zv.abs() > band + slack {
                panic!("fold_inverse: z={zv} outside band {band} cannot be branch 2");
            }
            -(z / p.alpha[1])
        }
        3 => {
            if zv < -band - slack {
                panic!("fold_inverse: z={zv} below band {band} cannot be branch 3");
            }
            if zv > band {
                (z - p.band) / (p.alpha[2] * p.edge_hi) + p.outer_hi
            } else {
                (z + p.band) / p.alpha[2] + p.beta
            }
        }
        k => panic!("fold_inverse: branch label {k} not in 1..=3"),
    }
}

/// Applies the boundary-condition correction to raw gating logits at the
/// folded coordinate `u`, `|u| <= band`.
///
/// With `t = raw + log_alpha` and pair projectors embedding
/// `0.5 * [[-1, 1], [1, -1]]` on index pairs (2,3) and (1,2), the corrected
/// logits are `s = t + w_lo(u) t Omega_23 + w_hi(u) t Omega_12 - log_alpha`
/// where `w_hi(u) = 0.5 (1 + cos(pi (u - band) / (2 band)))` and
/// `w_lo(u) = w_hi(-u)`. At `u = -band` this forces
/// `s2 + log a2 = s3 + log a3`, at `u = +band` it forces
/// `s1 + log a1 = s2 + log a2`, and in between it is smooth in `u`.
pub fn corrected_logits_parts<S: Scalar>(
    raw: &[S; 3],
    u: S,
    log_alpha: &[S; 3],
    band: S,
) -> [S; 3] {
    let bv = band.val();
    assert!(
        u.val().abs() <= bv * (1.0 + 1e-9),
        "corrected_logits: folded coordinate {} outside band {bv}",
        u.val()
    );
    let half = band.scale(2.0);
    let w_hi = ((u - band) / half).scale(PI).cos().shift(1.0).scale(0.5);
    let w_lo = ((u + band) / half).scale(PI).cos().shift(1.0).scale(0.5);
    let t = [
        raw[0] + log_alpha[0],
        raw[1] + log_alpha[1],
        raw[2] + log_alpha[2],
    ];
    let a = (t[2] - t[1]).scale(0.5);
    let b = (t[1] - t[0]).scale(0.5);
    [
        t[0] + w_hi * b - log_alpha[0],
        t[1] + w_lo * a - w_hi * b - log_alpha[1],
        t[2] - w_lo * a - log_alpha[2],
    ]
}

/// [`corrected_logits_parts`] reading slopes and band from a [`FoldParams`].
pub fn corrected_logits<S: Scalar>(raw: &[S; 3], u: S, p: &FoldParams<S>) -> [S; 3] {
    corrected_logits_parts(raw, u, &p.log_alpha, p.band)
}

/// Numerically stable log-softmax of three logits. The same operation order
/// is used under every scalar context.
pub fn log_softmax3<S: Scalar>(s: &[S; 3]) -> [S; 3] {
    let mut mi = 0;
    for i in 1..3 {
        if s[i].val() > s[mi].val() {
            mi = i;
        }
    }
    let m = s[mi];
    let e = [(s[0] - m).exp(), (s[1] - m).exp(), (s[2] - m).exp()];
    let lse = (e[0] + e[1] + e[2]).ln() + m;
    [s[0] - lse, s[1] - lse, s[2] - lse]
}

/// Gating input for one folded coordinate: corrected logits in the band, or
/// the forced branch outside it.
pub enum GatingInput<S> {
    InBand { logits: [S; 3] },
    OutOfBand { forced: u8, zero: S },
}

/// Log-probability of `branch` under the gating distribution. In the band
/// this is the clamped log-softmax of the corrected logits; out of the band
/// the unique branch has probability one. An out-of-band query for any other
/// branch faults.
///
/// The clamp uses the same floor as the edge probabilities, which keeps the
/// pseudo log-Jacobian continuous across the band edges even when it binds.
/// At the fold points the boundary identity holds exactly while every
/// branch probability stays above `GATE_FLOOR`; below the floor the
/// identity is truncated together with the probability.
pub fn gating_log_prob<S: Scalar>(g: &GatingInput<S>, branch: u8) -> S {
    assert!(
        (1..=3).contains(&branch),
        "branch label {branch} not in 1..=3"
    );
    match g {
        GatingInput::InBand { logits } => {
            log_softmax3(logits)[branch as usize - 1].clamp_min(GATE_FLOOR.ln())
        }
        GatingInput::OutOfBand { forced, zero } => {
            assert_eq!(
                *forced, branch,
                "gating_log_prob: branch {branch} queried out of band where only {forced} is valid"
            );
            zero.lift(0.0)
        }
    }
}

/// Gating network head: an MLP producing three raw branch logits from the
/// pass-through coordinates and one folded coordinate.
#[derive(Clone, Debug)]
pub struct GatingHead {
    pub net: Mlp,
}

impl GatingHead {
    pub fn new(net: Mlp) -> Self {
        assert_eq!(net.out_dim(), 3, "gating head must output 3 logits");
        GatingHead { net }
    }

    /// Raw logits at `input = [context..., u]`.
    pub fn raw_logits<S: Scalar>(
        &self,
        params: &[S],
        input: &[S],
        scratch: &mut MlpScratch<S>,
    ) -> [S; 3] {
        let mut out = Vec::with_capacity(3);
        self.net.forward_into(params, input, scratch, &mut out);
        [out[0], out[1], out[2]]
    }

    /// Branch probability at one band edge: the folded coordinate is
    /// substituted by `-band` (probability of branch 1) or `+band`
    /// (branch 3). Returns `(probability, log probability)`, clamped to
    /// `[GATE_FLOOR, 1]`.
    #[allow(clippy::too_many_arguments)]
    pub fn edge_prob_side<S: Scalar>(
        &self,
        params: &[S],
        context: &[S],
        side: Side,
        log_alpha: &[S; 3],
        band: S,
        scratch: &mut MlpScratch<S>,
        input_buf: &mut Vec<S>,
    ) -> (S, S) {
        let u = match side {
            Side::Lo => -band,
            Side::Hi => band,
        };
        input_buf.clear();
        input_buf.extend_from_slice(context);
        input_buf.push(u);
        let raw = self.raw_logits(params, input_buf, scratch);
        let s = corrected_logits_parts(&raw, u, log_alpha, band);
        let lsm = log_softmax3(&s);
        let lp = match side {
            Side::Lo => lsm[0],
            Side::Hi => lsm[2],
        }
        .clamp_min(GATE_FLOOR.ln());
        (lp.exp(), lp)
    }
}

/// Both edge probabilities for a fold, as used to fill [`FoldParams`].
pub fn edge_probs<S: Scalar>(
    head: &GatingHead,
    params: &[S],
    context: &[S],
    log_alpha: &[S; 3],
    band: S,
) -> ((S, S), (S, S)) {
    let mut scratch = MlpScratch::default();
    let mut buf = Vec::with_capacity(context.len() + 1);
    let lo = head.edge_prob_side(
        params,
        context,
        Side::Lo,
        log_alpha,
        band,
        &mut scratch,
        &mut buf,
    );
    let hi = head.edge_prob_side(
        params,
        context,
        Side::Hi,
        log_alpha,
        band,
        &mut scratch,
        &mut buf,
    );
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Head, LayoutBuilder};

    fn standard() -> FoldParams<f64> {
        FoldParams::from_values([1.0, 1.0, 1.0], 1.0, 1.0, 1.0)
    }

    #[test]
    fn standard_geometry() {
        let p = standard();
        assert_eq!(p.band, 1.0);
        assert_eq!(p.outer_lo, 3.0);
        assert_eq!(p.outer_hi, 3.0);
    }

    #[test]
    fn forward_center_piece() {
        let r = fold_forward(0.5, &standard());
        assert_eq!(r.z, -0.5);
        assert_eq!(r.branch, 2);
        assert_eq!(r.log_slope, 0.0);
        assert!(r.in_band);
    }

    #[test]
    fn forward_inner_right_piece() {
        let r = fold_forward(2.0, &standard());
        assert_eq!(r.z, 0.0);
        assert_eq!(r.branch, 3);
        assert_eq!(r.log_slope, 0.0);
        assert!(r.in_band);
    }

    #[test]
    #[allow(clippy::approx_constant)] // frozen expected value log(0.5)
    fn forward_outer_right_piece_with_edge_prob() {
        let p = FoldParams::from_values([1.0, 1.0, 1.0], 1.0, 1.0, 0.5);
        let r = fold_forward(5.0, &p);
        assert_eq!(r.z, 2.0);
        assert_eq!(r.branch, 3);
        assert!((r.log_slope - 0.5f64.ln()).abs() < 1e-15);
        assert!((r.log_slope + 0.693147).abs() < 1e-6);
        assert!(!r.in_band);
    }

    #[test]
    fn forward_inner_left_piece() {
        let r = fold_forward(-2.0, &standard());
        assert_eq!(r.z, 0.0);
        assert_eq!(r.branch, 1);
        assert_eq!(r.log_slope, 0.0);
    }

    #[test]
    fn inverse_examples() {
        let p = standard();
        assert_eq!(fold_inverse(0.0, 1, &p), -2.0);
        assert_eq!(fold_inverse(-0.5, 2, &p), 0.5);
        let ph = FoldParams::from_values([1.0, 1.0, 1.0], 1.0, 1.0, 0.5);
        assert_eq!(fold_inverse(2.0, 3, &ph), 5.0);
    }

    #[test]
    fn inverse_rejects_inconsistent_pair() {
        let p = standard();
        let r = std::panic::catch_unwind(|| fold_inverse(2.0, 2, &p));
        assert!(r.is_err());
        let r = std::panic::catch_unwind(|| fold_inverse(-2.0, 3, &p));
        assert!(r.is_err());
    }

    #[test]
    fn non_finite_input_is_a_fault() {
        let p = standard();
        for bad in [f64::NAN, f64::INFINITY] {
            let r = std::panic::catch_unwind(|| fold_forward(bad, &p));
            assert!(r.is_err());
        }
    }

    #[test]
    fn branch_id_examples() {
        let p = standard();
        assert_eq!(branch_id(-5.0, &p), 1);
        assert_eq!(branch_id(0.0, &p), 2);
        assert_eq!(branch_id(1.0, &p), 2); // x = beta exactly
        assert_eq!(branch_id(1.0 + 1e-12, &p), 3);
    }

    #[test]
    fn branch_id_agrees_with_forward() {
        let p = FoldParams::from_values([0.7, 1.3, 2.1], 0.8, 0.4, 0.9);
        for i in -400..400 {
            let x = i as f64 * 0.025;
            assert_eq!(branch_id(x, &p), fold_forward(x, &p).branch, "at x={x}");
        }
    }

    #[test]
    fn round_trip_dense_scan() {
        let p = FoldParams::from_values([0.5, 2.0, 1.5], 0.75, 0.3, 0.8);
        let lim = 10.0 * p.outer_lo.max(p.outer_hi);
        for i in -2000..=2000 {
            let x = i as f64 / 2000.0 * lim;
            let r = fold_forward(x, &p);
            let back = fold_inverse(r.z, r.branch, &p);
            assert!(
                (back - x).abs() <= 1e-10 * (1.0 + x.abs()),
                "x={x} back={back}"
            );
        }
    }

    #[test]
    fn continuity_at_all_four_knots() {
        let p = FoldParams::from_values([0.5, 2.0, 1.5], 0.75, 0.3, 0.8);
        let eps = 1e-7;
        let max_slope = 2.0f64.max(p.alpha[0]).max(p.alpha[2]);
        for knot in [-p.outer_lo, -p.beta, p.beta, p.outer_hi] {
            let lo = fold_forward(knot - eps, &p).z;
            let hi = fold_forward(knot + eps, &p).z;
            assert!(
                (lo - hi).abs() <= 10.0 * eps * max_slope,
                "jump {} at knot {knot}",
                (lo - hi).abs()
            );
        }
    }

    #[test]
    fn in_band_outputs_have_three_preimages() {
        let p = FoldParams::from_values([0.9, 1.1, 1.4], 0.6, 0.7, 0.2);
        let band = p.band;
        for i in 1..20 {
            let z = -band + 2.0 * band * (i as f64 / 20.0);
            let mut uniq = Vec::new();
            for k in 1..=3u8 {
                let x = fold_inverse(z, k, &p);
                let r = fold_forward(x, &p);
                assert!((r.z - z).abs() < 1e-10);
                assert_eq!(r.branch, k);
                uniq.push(x);
            }
            uniq.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!(uniq.windows(2).all(|w| w[1] - w[0] > 1e-9));
        }
    }

    #[test]
    fn corrected_logits_identity_when_conditions_hold() {
        let p = standard();
        for u in [-1.0, -0.3, 0.0, 0.5, 1.0] {
            let s = corrected_logits(&[0.0, 0.0, 0.0], u, &p);
            for v in s {
                assert!(v.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn corrected_logits_high_edge_pair_projection() {
        let p = FoldParams::from_values([2.0, 1.0, 1.0], 1.0, 1.0, 1.0);
        let s = corrected_logits(&[0.0, 0.0, 0.0], p.band, &p);
        let l2 = 2.0f64.ln();
        assert!((s[0] + l2 / 2.0).abs() < 1e-15);
        assert!((s[1] - l2 / 2.0).abs() < 1e-15);
        assert!(s[2].abs() < 1e-15);
        // boundary condition: s1 + log a1 = s2 + log a2
        assert!(((s[0] + l2) - s[1]).abs() < 1e-15);
    }

    #[test]
    fn corrected_logits_low_edge_equalizes_last_pair() {
        let p = standard();
        let s = corrected_logits(&[0.0, 1.0, 0.0], -p.band, &p);
        assert!((s[0] - 0.0).abs() < 1e-15);
        assert!((s[1] - 0.5).abs() < 1e-15);
        assert!((s[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn corrected_logits_shift_invariance() {
        let p = FoldParams::from_values([0.4, 1.7, 2.2], 0.9, 0.5, 0.5);
        let raw = [0.3, -1.1, 0.8];
        let shifted = [raw[0] + 5.0, raw[1] + 5.0, raw[2] + 5.0];
        for u in [-0.9, 0.0, 0.4] {
            let u = u * p.band;
            let s0 = corrected_logits(&raw, u, &p);
            let s1 = corrected_logits(&shifted, u, &p);
            for i in 0..3 {
                assert!((s1[i] - s0[i] - 5.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corrected_logits_rejects_out_of_band_input() {
        let p = standard();
        let r = std::panic::catch_unwind(|| corrected_logits(&[0.0, 0.0, 0.0], 1.5, &p));
        assert!(r.is_err());
    }

    #[test]
    fn gating_uniform_log_prob() {
        let g = GatingInput::InBand {
            logits: [0.0, 0.0, 0.0],
        };
        let lp: f64 = gating_log_prob(&g, 2);
        assert!((lp - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((lp + 1.098612).abs() < 1e-6);
    }

    #[test]
    fn gating_out_of_band_is_deterministic() {
        let g = GatingInput::OutOfBand {
            forced: 3,
            zero: 0.0f64,
        };
        assert_eq!(gating_log_prob(&g, 3), 0.0);
        let r = std::panic::catch_unwind(|| gating_log_prob(&g, 2));
        assert!(r.is_err());
    }

    #[test]
    fn gating_softmax_arithmetic() {
        let g = GatingInput::InBand {
            logits: [0.0, 2.0f64.ln(), 0.0],
        };
        let lp = gating_log_prob(&g, 2);
        assert!((lp - (2.0f64 / 4.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn gating_log_prob_clamped_at_floor() {
        let g = GatingInput::InBand {
            logits: [0.0, -100.0, 0.0],
        };
        let lp = gating_log_prob(&g, 2);
        assert_eq!(lp, GATE_FLOOR.ln());
    }

    #[test]
    fn log_softmax_gradient_matches_finite_differences() {
        use crate::autodiff::{finite_diff_check, Tape};
        let logits = [0.0, 1.0, 0.0];
        let tape = Tape::new();
        let s: Vec<_> = logits.iter().map(|&v| tape.param(v)).collect();
        let root = log_softmax3(&[s[0], s[1], s[2]])[1];
        let grad = tape.backward(root);
        let loss = |p: &[f64]| (log_softmax3(&[p[0], p[1], p[2]])[1], 0u64);
        let rep = finite_diff_check(loss, &logits, &grad, 1e-5);
        assert!(rep.max_rel_err < 1e-6, "rel err {}", rep.max_rel_err);
    }

    fn test_head(hidden: usize) -> (GatingHead, Vec<f64>) {
        let mut layout = LayoutBuilder::new();
        let net = Mlp::new(vec![2, hidden, 3], Head::Linear, &mut layout);
        (GatingHead::new(net), vec![0.0; layout.total()])
    }

    #[test]
    fn edge_probs_uniform_for_zero_net() {
        let (head, params) = test_head(4);
        let log_alpha = [0.0, 0.0, 0.0];
        let ((elo, _), (ehi, _)) = edge_probs(&head, &params, &[0.7], &log_alpha, 1.0);
        assert!((elo - 1.0 / 3.0).abs() < 1e-12);
        assert!((ehi - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn edge_probs_saturate_toward_one() {
        // Bias the first logit strongly positive through the output biases.
        let (head, mut params) = test_head(4);
        let span = head.net.span();
        // output layer biases are the last 3 parameters of the span
        params[span.end - 3] = 10.0;
        params[span.end - 2] = -10.0;
        params[span.end - 1] = -10.0;
        let log_alpha = [0.0, 0.0, 0.0];
        let ((elo, _), _) = edge_probs(&head, &params, &[0.0], &log_alpha, 1.0);
        assert!(elo > 0.999999, "elo = {elo}");
        assert!(elo <= 1.0);
    }

    #[test]
    fn edge_probs_never_below_floor() {
        let (head, mut params) = test_head(4);
        let span = head.net.span();
        params[span.end - 3] = -200.0;
        params[span.end - 2] = 100.0;
        params[span.end - 1] = 100.0;
        let log_alpha = [0.0, 0.0, 0.0];
        let ((elo, llo), _) = edge_probs(&head, &params, &[0.0], &log_alpha, 1.0);
        assert_eq!(llo, GATE_FLOOR.ln());
        assert!((elo - GATE_FLOOR).abs() < 1e-18);
    }

    // The pseudo log-Jacobian g(x) = gating log-prob + log-slope must be
    // continuous across every knot; the fold points are handled by the
    // logit correction and the band edges by the edge-prob slope scaling.
    #[test]
    fn pseudo_log_jacobian_continuous_at_knots() {
        let (head, mut params) = test_head(6);
        // deterministic non-trivial weights
        for (i, p) in params.iter_mut().enumerate() {
            *p = ((i as f64) * 0.7).sin() * 0.8;
        }
        let alpha = [0.6, 1.4, 2.0];
        let log_alpha = [alpha[0].ln(), alpha[1].ln(), alpha[2].ln()];
        let beta = 0.9;
        let band = alpha[1] * beta;
        let context = [0.35];
        let ((elo, llo), (ehi, lhi)) = edge_probs(&head, &params, &context, &log_alpha, band);
        let p = FoldParams::derive(alpha, log_alpha, beta, (elo, llo), (ehi, lhi));

        let g = |x: f64| {
            let r = fold_forward(x, &p);
            let mut scratch = MlpScratch::default();
            let lp = if r.in_band {
                let raw = head.raw_logits(&params, &[context[0], r.z], &mut scratch);
                let s = corrected_logits(&raw, r.z, &p);
                gating_log_prob(&GatingInput::InBand { logits: s }, r.branch)
            } else {
                0.0
            };
            lp + r.log_slope
        };

        let eps = 1e-5;
        for knot in [-p.outer_lo, -p.beta, p.beta, p.outer_hi] {
            let jump = (g(knot - eps) - g(knot + eps)).abs();
            assert!(jump <= 100.0 * eps, "jump {jump} at knot {knot}");
        }
    }
}

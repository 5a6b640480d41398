//! Adam optimizer state and update step.

use std::fmt;

/// Moment estimates and hyperparameters for one optimized parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A gradient containing NaN or infinity; the update that saw it was skipped.
#[derive(Debug, Clone)]
pub struct NonFiniteGrad {
    /// Offending coordinate indices (capped at 16 for reporting).
    pub indices: Vec<usize>,
}

impl fmt::Display for NonFiniteGrad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "non-finite gradient at coordinates {:?}", self.indices)
    }
}

impl std::error::Error for NonFiniteGrad {}

/// One Adam update with bias correction. On a non-finite gradient the update
/// is rejected: parameters, moments, and the step counter are left untouched
/// and the offending coordinates are reported.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    st: &mut AdamState,
) -> Result<(), NonFiniteGrad> {
    assert_eq!(
        params.len(),
        grads.len(),
        "adam: params/grads length mismatch"
    );
    assert_eq!(
        params.len(),
        st.m.len(),
        "adam: state not aligned to params"
    );

    let bad: Vec<usize> = grads
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_finite())
        .map(|(i, _)| i)
        .take(16)
        .collect();
    if !bad.is_empty() {
        return Err(NonFiniteGrad { indices: bad });
    }

    st.step += 1;
    let t = st.step as i32;
    let bc1 = 1.0 - st.beta1.powi(t);
    let bc2 = 1.0 - st.beta2.powi(t);
    for i in 0..params.len() {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i] * grads[i];
        let m_hat = st.m[i] / bc1;
        let v_hat = st.v[i] / bc2;
        params[i] -= st.lr * m_hat / (v_hat.sqrt() + st.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_from_fresh_state_leaves_params_unchanged() {
        let mut p = vec![1.5, -2.0];
        let mut st = AdamState::new(2, 1e-3);
        adam_step(&mut p, &[0.0, 0.0], &mut st).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn zero_grad_decays_existing_moments() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(1, 1e-3);
        st.m[0] = 1.0;
        st.v[0] = 1.0;
        adam_step(&mut p, &[0.0], &mut st).unwrap();
        assert_eq!(st.m[0], 0.9);
        assert_eq!(st.v[0], 0.999);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // Hand-evaluated recurrence at t=1, g=1: m_hat = 1, v_hat = 1,
        // so the update is lr / (1 + eps).
        let mut p = vec![0.0];
        let mut st = AdamState::new(1, 1e-3);
        adam_step(&mut p, &[1.0], &mut st).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "got {}", p[0]);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // minimize (x - 2)^2 with gradient 2(x - 2)
        let mut p = vec![-1.0];
        let mut st = AdamState::new(1, 0.05);
        for _ in 0..500 {
            let g = 2.0 * (p[0] - 2.0);
            adam_step(&mut p, &[g], &mut st).unwrap();
        }
        assert!((p[0] - 2.0).abs() < 0.01, "ended at {}", p[0]);
    }

    #[test]
    fn non_finite_grad_is_rejected_without_side_effects() {
        let mut p = vec![1.0, 2.0];
        let mut st = AdamState::new(2, 1e-3);
        let err = adam_step(&mut p, &[f64::NAN, 1.0], &mut st).unwrap_err();
        assert_eq!(err.indices, vec![0]);
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(st.step, 0);
        assert_eq!(st.m, vec![0.0, 0.0]);
    }
}

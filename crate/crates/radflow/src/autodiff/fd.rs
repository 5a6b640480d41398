//! Central finite-difference verification of analytic gradients.

/// Outcome of a finite-difference sweep over all coordinates.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// Largest relative error over coordinates that were not flagged.
    pub max_rel_err: f64,
    /// Per-coordinate relative error; `None` for flagged coordinates.
    pub per_coord: Vec<Option<f64>>,
    /// Coordinates excluded because the loss crossed a branch boundary
    /// inside the difference stencil.
    pub flagged: Vec<usize>,
}

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// `loss` returns the value together with a discrete branch signature (a
/// hash of all data-dependent branch decisions made during evaluation).
/// Coordinates whose perturbed evaluations land on a different signature
/// straddle a kink where the derivative is genuinely one-sided; they are
/// flagged and excluded from `max_rel_err` instead of failed.
///
/// The relative error is `|a - d| / (|a| + |d| + 1e-12)`. A non-finite loss
/// value is a fault.
pub fn finite_diff_check<F>(loss: F, params: &[f64], analytic: &[f64], step: f64) -> FdReport
where
    F: Fn(&[f64]) -> (f64, u64),
{
    assert_eq!(
        params.len(),
        analytic.len(),
        "finite_diff_check: length mismatch"
    );
    let (v0, sig0) = loss(params);
    assert!(
        v0.is_finite(),
        "finite_diff_check: non-finite loss at base point"
    );

    let mut work = params.to_vec();
    let mut per_coord = Vec::with_capacity(params.len());
    let mut flagged = Vec::new();
    let mut max_rel = 0.0f64;
    for i in 0..params.len() {
        work[i] = params[i] + step;
        let (vp, sp) = loss(&work);
        work[i] = params[i] - step;
        let (vm, sm) = loss(&work);
        work[i] = params[i];
        assert!(
            vp.is_finite() && vm.is_finite(),
            "finite_diff_check: non-finite loss at coordinate {i}"
        );
        if sp != sig0 || sm != sig0 {
            flagged.push(i);
            per_coord.push(None);
            continue;
        }
        let d = (vp - vm) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - d).abs() / (a.abs() + d.abs() + 1e-12);
        max_rel = max_rel.max(rel);
        per_coord.push(Some(rel));
    }
    FdReport {
        max_rel_err: max_rel,
        per_coord,
        flagged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_is_exact() {
        let c = [1.5, -2.0, 0.25];
        let loss = |p: &[f64]| (p.iter().zip(&c).map(|(x, ci)| x * ci).sum::<f64>(), 0u64);
        let p = [0.3, 0.7, -1.1];
        let rep = finite_diff_check(loss, &p, &c, 1e-5);
        assert!(rep.max_rel_err < 1e-10, "err {}", rep.max_rel_err);
        assert!(rep.flagged.is_empty());
    }

    #[test]
    fn quadratic_loss_matches_to_1e4() {
        let loss = |p: &[f64]| (p.iter().map(|x| x * x).sum::<f64>(), 0u64);
        let p = [0.9, -1.3];
        let grad = [1.8, -2.6];
        let rep = finite_diff_check(loss, &p, &grad, 1e-5);
        assert!(rep.max_rel_err < 1e-8, "err {}", rep.max_rel_err);
    }

    #[test]
    fn kink_inside_stencil_is_flagged_not_failed() {
        // |x| has a one-sided derivative at 0; signature encodes the side.
        let loss = |p: &[f64]| (p[0].abs(), u64::from(p[0] >= 0.0));
        let rep = finite_diff_check(loss, &[1e-7], &[1.0], 1e-5);
        assert_eq!(rep.flagged, vec![0]);
        assert_eq!(rep.max_rel_err, 0.0);
        assert_eq!(rep.per_coord, vec![None]);
    }

    #[test]
    fn non_finite_loss_is_a_fault() {
        let loss = |p: &[f64]| ((1.0 / p[0]).ln(), 0u64);
        let r = std::panic::catch_unwind(|| finite_diff_check(loss, &[-1.0], &[0.0], 1e-5));
        assert!(r.is_err());
    }
}

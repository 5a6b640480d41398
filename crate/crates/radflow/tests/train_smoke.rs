//! Medium-length training smoke runs: enough steps to verify real learning
//! progress without the cost of a full run.

use radflow::data::Problem;
use radflow::model::ModelKind;
use radflow::train::{train, TrainConfig};

#[test]
fn grid_gmm_5000_step_run_gains_at_least_one_nat() {
    let dir = std::env::temp_dir().join("radflow-train-smoke-5000");
    let mut cfg = TrainConfig::new(ModelKind::Rad, Problem::GridGmm, dir);
    cfg.steps = 5000;
    cfg.eval_every = 1000;
    cfg.verbose = false;
    let (_model, log) = train(&cfg).unwrap();
    let first = log.rows.first().unwrap().train_ll;
    let last = log.rows.last().unwrap().train_ll;
    assert!(
        last - first >= 1.0,
        "train ll moved from {first} to {last}, less than one nat"
    );
    // interval evaluations stay finite and strictly ordered throughout
    assert!(log
        .rows
        .iter()
        .all(|r| r.train_ll.is_finite() && r.test_ll.is_finite()));
    assert!(log.rows.windows(2).all(|w| w[0].step < w[1].step));
}

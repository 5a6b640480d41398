use radflow::data::Problem;
use radflow::model::ModelKind;
use radflow::train::{train, TrainConfig};
use std::time::Instant;

fn main() {
    for (kind, name) in [(ModelKind::Rad, "rad"), (ModelKind::RealNvp, "realnvp")] {
        let mut cfg = TrainConfig::new(kind, Problem::RingGmm, format!("/tmp/bench-{name}"));
        cfg.steps = 500;
        cfg.eval_every = 500;
        cfg.verbose = false;
        let t = Instant::now();
        let (_m, log) = train(&cfg).unwrap();
        let dt = t.elapsed().as_secs_f64();
        println!(
            "{name}: 500 steps in {dt:.2}s -> {:.2} ms/step; 50k-step run ~{:.1} min; params {}",
            dt * 2.0,
            dt * 100.0 / 60.0,
            log.param_count
        );
    }
}

use radflow::data::{generate, true_log_likelihood, DatasetSpec, Problem};
use radflow::model::ModelKind;
use radflow::train::{evaluate, train, TrainConfig};

fn main() {
    let steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5000);
    let problems = [Problem::RingGmm, Problem::GridGmm];
    for problem in problems {
        let test = generate(&DatasetSpec::new(problem, 10_000, 12345));
        let oracle = true_log_likelihood(problem, &test.points);
        for kind in [ModelKind::Rad, ModelKind::RealNvp] {
            let mut cfg = TrainConfig::new(
                kind,
                problem,
                format!("/tmp/probe-{}-{}", problem.name(), kind.name()),
            );
            cfg.steps = steps;
            cfg.eval_every = 1000;
            cfg.verbose = false;
            let (model, log) = train(&cfg).unwrap();
            let ll = evaluate(&model, problem, 10_000, 999_999);
            println!(
                "{:<10} {:<8} steps {:>6}: test_ll {:+.4}  (oracle {:?}), ll@0 {:+.4}",
                problem.name(),
                kind.name(),
                steps,
                ll,
                oracle.map(|o| format!("{o:+.4}")),
                log.rows[0].test_ll
            );
        }
    }
}

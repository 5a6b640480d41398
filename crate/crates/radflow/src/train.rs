//! Maximum-likelihood training: minibatch gradient descent with Adam on the
//! negative mean log-likelihood, periodic held-out evaluation, checkpoint
//! round-trips, and the key=value config format shared with the CLI.
//!
//! Training is bit-deterministic for a given config: data and minibatch
//! draws come from seeds derived from the config seed, and the batch
//! gradient is reduced over a fixed number of chunks in index order no
//! matter how many worker threads execute them.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::autodiff::{adam_step, AdamState, Tape};
use crate::data::{generate, DatasetSpec, Problem};
use crate::model::{FlowModel, ModelKind, ModelScratch, NoTrace};
use crate::Error;

/// Points in each of the training and held-out sets.
pub const SET_SIZE: usize = 10_000;

/// Fixed chunk count for batch reductions. Results are combined in chunk
/// order, so the thread count never affects the bits.
const GRAD_CHUNKS: usize = 8;

/// Everything a training run depends on.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub problem: Problem,
    pub layers: usize,
    /// Hidden units per network layer; `None` picks the family default
    /// (8 for rad, 56 for realnvp).
    pub hidden: Option<usize>,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub out: PathBuf,
    /// Global-norm gradient clip; `None` disables the guard.
    pub grad_clip: Option<f64>,
    pub eval_every: usize,
    pub verbose: bool,
}

impl TrainConfig {
    pub fn new(model: ModelKind, problem: Problem, out: impl Into<PathBuf>) -> Self {
        TrainConfig {
            model,
            problem,
            layers: 6,
            hidden: None,
            steps: 50_000,
            batch: 500,
            lr: 1e-3,
            seed: 0,
            out: out.into(),
            grad_clip: Some(100.0),
            eval_every: 1000,
            verbose: true,
        }
    }

    pub fn default_hidden(kind: ModelKind) -> usize {
        match kind {
            ModelKind::Rad => 8,
            ModelKind::RealNvp => 56,
        }
    }

    pub fn resolved_hidden(&self) -> usize {
        self.hidden
            .unwrap_or_else(|| Self::default_hidden(self.model))
    }

    /// Applies one `key=value` setting. The keys are exactly the CLI flag
    /// names without the leading dashes.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let bad = |what: &str| Error::Config(format!("bad value '{value}' for {what}"));
        match key {
            "model" => {
                self.model = ModelKind::parse(value).ok_or_else(|| bad("model (rad|realnvp)"))?;
            }
            "problem" => self.problem = value.parse()?,
            "layers" => self.layers = value.parse().map_err(|_| bad("layers"))?,
            "hidden" => self.hidden = Some(value.parse().map_err(|_| bad("hidden"))?),
            "steps" => self.steps = value.parse().map_err(|_| bad("steps"))?,
            "batch" => self.batch = value.parse().map_err(|_| bad("batch"))?,
            "lr" => self.lr = value.parse().map_err(|_| bad("lr"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "out" => self.out = PathBuf::from(value),
            "grad-clip" => {
                self.grad_clip = if value == "off" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad("grad-clip (<norm>|off)"))?)
                };
            }
            "eval-every" => self.eval_every = value.parse().map_err(|_| bad("eval-every"))?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Fully resolved settings, in a fixed order, for manifests.
    pub fn manifest_entries(&self) -> Vec<(String, String)> {
        let clip = match self.grad_clip {
            Some(c) => c.to_string(),
            None => "off".to_string(),
        };
        vec![
            ("model".into(), self.model.name().into()),
            ("problem".into(), self.problem.name().into()),
            ("layers".into(), self.layers.to_string()),
            ("hidden".into(), self.resolved_hidden().to_string()),
            ("steps".into(), self.steps.to_string()),
            ("batch".into(), self.batch.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("out".into(), self.out.display().to_string()),
            ("grad-clip".into(), clip),
            ("eval-every".into(), self.eval_every.to_string()),
        ]
    }

    fn validate(&self) -> Result<(), Error> {
        for (what, v) in [
            ("layers", self.layers),
            ("steps", self.steps),
            ("batch", self.batch),
            ("eval-every", self.eval_every),
            ("hidden", self.resolved_hidden()),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{what} must be positive")));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

/// One evaluation-interval record.
#[derive(Clone, Debug)]
pub struct LogRow {
    pub step: usize,
    pub train_ll: f64,
    pub test_ll: f64,
    pub wall_s: f64,
}

/// Training history plus where the final checkpoint went.
#[derive(Clone, Debug)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub checkpoint: PathBuf,
    pub param_count: usize,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<(), Error> {
        let mut out = String::from("step,train_ll,test_ll,wall_s\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.3}\n",
                r.step, r.train_ll, r.test_ll, r.wall_s
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Derived stream seed, so data, init, and minibatch draws are decoupled.
fn subseed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Runs `n_chunks` jobs on up to `n_chunks` worker threads and returns the
/// results in chunk order regardless of scheduling.
fn run_chunks<T, F>(n_chunks: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(n_chunks);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..n_chunks).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let c = next.fetch_add(1, Ordering::Relaxed);
                if c >= n_chunks {
                    break;
                }
                let out = job(c);
                results.lock().unwrap()[c] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("chunk job did not run"))
        .collect()
}

fn chunk_range(total: usize, chunk: usize, n_chunks: usize) -> std::ops::Range<usize> {
    let per = total.div_ceil(n_chunks);
    let start = (chunk * per).min(total);
    let end = ((chunk + 1) * per).min(total);
    start..end
}

/// Tapes are multi-megabyte arenas; reusing them across steps keeps their
/// pages warm instead of faulting fresh allocations in every minibatch.
static TAPE_POOL: Mutex<Vec<Tape>> = Mutex::new(Vec::new());

struct PooledTape(Option<Tape>);

impl PooledTape {
    fn take() -> Self {
        let tape = TAPE_POOL
            .lock()
            .unwrap()
            .pop()
            .unwrap_or_else(|| Tape::with_capacity(1 << 16, 1 << 17));
        tape.clear();
        PooledTape(Some(tape))
    }

    fn tape(&self) -> &Tape {
        self.0.as_ref().unwrap()
    }
}

impl Drop for PooledTape {
    fn drop(&mut self) {
        if let Some(tape) = self.0.take() {
            let mut pool = TAPE_POOL.lock().unwrap();
            if pool.len() < GRAD_CHUNKS {
                pool.push(tape);
            }
        }
    }
}

/// Sum of `-log p` and its parameter gradient over the indexed minibatch,
/// both divided by the batch size. Chunks are taped independently and
/// reduced in order.
fn batch_loss_and_grad(model: &FlowModel, points: &[[f64; 2]], idx: &[usize]) -> (f64, Vec<f64>) {
    let outs = run_chunks(GRAD_CHUNKS, |c| {
        let range = chunk_range(idx.len(), c, GRAD_CHUNKS);
        if range.is_empty() {
            return (0.0, vec![0.0; model.params.len()]);
        }
        let pooled = PooledTape::take();
        let tape = pooled.tape();
        let pv = tape.param_vars(&model.params);
        let mut scratch = ModelScratch::default();
        let mut loss = tape.constant(0.0);
        for &pi in &idx[range] {
            let p = points[pi];
            let xv = [tape.constant(p[0]), tape.constant(p[1])];
            let lp = model.log_prob_with(&pv, &xv, &mut scratch, &mut NoTrace);
            loss = loss - lp;
        }
        (loss.val(), tape.backward(loss))
    });
    let scale = 1.0 / idx.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; model.params.len()];
    for (l, g) in outs {
        total += l;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    for g in grad.iter_mut() {
        *g *= scale;
    }
    (total * scale, grad)
}

/// Mean log-likelihood over a point set, chunk-reduced deterministically.
pub fn mean_log_prob(model: &FlowModel, points: &[[f64; 2]]) -> f64 {
    let outs = run_chunks(GRAD_CHUNKS, |c| {
        let range = chunk_range(points.len(), c, GRAD_CHUNKS);
        let mut scratch = ModelScratch::default();
        let mut sum = 0.0;
        for p in &points[range] {
            sum += model.log_prob_with(&model.params, &[p[0], p[1]], &mut scratch, &mut NoTrace);
        }
        sum
    });
    outs.iter().sum::<f64>() / points.len() as f64
}

/// Mean test log-likelihood on a fresh batch drawn with the given seed.
pub fn evaluate(model: &FlowModel, problem: Problem, n: usize, seed: u64) -> f64 {
    let batch = generate(&DatasetSpec::new(problem, n, seed));
    mean_log_prob(model, &batch.points)
}

/// Trains per the config: minibatches drawn with replacement from a fixed
/// 10,000-point training set, Adam on the mean negative log-likelihood,
/// held-out log-likelihood recorded every `eval_every` steps. On a
/// non-finite loss or gradient the run aborts, keeping the last
/// evaluation-interval checkpoint and reporting the offending batch.
pub fn train(cfg: &TrainConfig) -> Result<(FlowModel, TrainLog), Error> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    let hidden = cfg.resolved_hidden();
    let mut model = FlowModel::new(cfg.model, 2, cfg.layers, hidden, subseed(cfg.seed, 1));
    let train_set = generate(&DatasetSpec::new(
        cfg.problem,
        SET_SIZE,
        subseed(cfg.seed, 2),
    ));
    let test_set = generate(&DatasetSpec::new(
        cfg.problem,
        SET_SIZE,
        subseed(cfg.seed, 3),
    ));
    let mut batch_rng = StdRng::seed_from_u64(subseed(cfg.seed, 4));
    let mut adam = AdamState::new(model.params.len(), cfg.lr);
    if cfg.verbose {
        eprintln!(
            "training {} on {}: {} parameters, {} steps, batch {}",
            cfg.model.name(),
            cfg.problem.name(),
            model.param_count(),
            cfg.steps,
            cfg.batch
        );
    }

    let started = Instant::now();
    let mut rows = Vec::new();
    let record = |model: &FlowModel, step: usize, rows: &mut Vec<LogRow>| {
        let train_ll = mean_log_prob(model, &train_set.points);
        let test_ll = mean_log_prob(model, &test_set.points);
        let wall_s = started.elapsed().as_secs_f64();
        if cfg.verbose {
            eprintln!(
                "step {step:>6}  train_ll {train_ll:>9.4}  test_ll {test_ll:>9.4}  ({wall_s:.1}s)"
            );
        }
        rows.push(LogRow {
            step,
            train_ll,
            test_ll,
            wall_s,
        });
        (train_ll, test_ll)
    };
    let (ll0, _) = record(&model, 0, &mut rows);
    if !ll0.is_finite() {
        return Err(Error::Train(
            "non-finite likelihood at initialization".into(),
        ));
    }
    let mut last_good = model.params.clone();
    let mut last_good_step = 0usize;

    let ckpt_path = cfg.out.join("model.ckpt");
    let mut idx = vec![0usize; cfg.batch];
    for step in 1..=cfg.steps {
        for slot in idx.iter_mut() {
            *slot = batch_rng.gen_range(0..train_set.points.len());
        }
        let (loss, grad) = batch_loss_and_grad(&model, &train_set.points, &idx);
        if !loss.is_finite() {
            model.params = last_good;
            return Err(abort_error(
                cfg,
                &model,
                step,
                &idx,
                last_good_step,
                &format!("non-finite loss {loss}"),
            ));
        }
        if let Err(e) = adam_step(
            &mut model.params,
            &scaled_clip(grad, cfg.grad_clip),
            &mut adam,
        ) {
            model.params = last_good;
            return Err(abort_error(
                cfg,
                &model,
                step,
                &idx,
                last_good_step,
                &e.to_string(),
            ));
        }
        if step.is_multiple_of(cfg.eval_every) || step == cfg.steps {
            let (train_ll, test_ll) = record(&model, step, &mut rows);
            if !train_ll.is_finite() || !test_ll.is_finite() {
                model.params = last_good;
                return Err(abort_error(
                    cfg,
                    &model,
                    step,
                    &idx,
                    last_good_step,
                    "non-finite interval likelihood",
                ));
            }
            last_good = model.params.clone();
            last_good_step = step;
        }
    }

    save_checkpoint(&model, &ckpt_path)?;
    let log = TrainLog {
        rows,
        checkpoint: ckpt_path,
        param_count: model.param_count(),
    };
    log.write_csv(&cfg.out.join("trainlog.csv"))?;
    Ok((model, log))
}

/// Builds the abort error after the model has been rolled back to the last
/// good parameters; also writes a rescue checkpoint of that state.
fn abort_error(
    cfg: &TrainConfig,
    model: &FlowModel,
    step: usize,
    idx: &[usize],
    last_good_step: usize,
    what: &str,
) -> Error {
    let rescue = cfg.out.join("abort-last-good.ckpt");
    let _ = save_checkpoint(model, &rescue);
    Error::Train(format!(
        "{what} at step {step}; batch indices {:?}...; last good checkpoint (step {last_good_step}) at {}",
        &idx[..idx.len().min(8)],
        rescue.display()
    ))
}

fn scaled_clip(mut grad: Vec<f64>, clip: Option<f64>) -> Vec<f64> {
    if let Some(c) = clip {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > c {
            let s = c / norm;
            for g in grad.iter_mut() {
                *g *= s;
            }
        }
    }
    grad
}

const CHECKPOINT_HEADER: &str = "radflow checkpoint v1";

/// Writes a versioned text checkpoint. Parameters print in shortest
/// round-trip decimal, so save/load is bit-exact.
pub fn save_checkpoint(model: &FlowModel, path: &Path) -> Result<(), Error> {
    let mut out = String::with_capacity(model.params.len() * 20 + 128);
    out.push_str(CHECKPOINT_HEADER);
    out.push('\n');
    out.push_str(&format!("kind {}\n", model.kind.name()));
    out.push_str(&format!("dim {}\n", model.dim));
    out.push_str(&format!("layers {}\n", model.layers.len()));
    out.push_str(&format!("hidden {}\n", model.hidden));
    out.push_str(&format!("params {}\n", model.params.len()));
    for p in &model.params {
        out.push_str(&format!("{p}\n"));
    }
    out.push_str("end\n");
    fs::write(path, out)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<FlowModel, Error> {
    let text = fs::read_to_string(path)?;
    parse_checkpoint(&text)
}

/// Parses checkpoint text. Version mismatches, truncation, malformed values,
/// count mismatches, and absurd geometry all fail cleanly; this must never
/// panic or allocate unboundedly on untrusted input.
pub fn parse_checkpoint(text: &str) -> Result<FlowModel, Error> {
    let mut lines = text.lines();
    let bad = |msg: String| Error::Checkpoint(msg);
    let header = lines.next().unwrap_or_default();
    if header != CHECKPOINT_HEADER {
        return Err(bad(format!("unsupported header '{header}'")));
    }
    let mut field = |name: &str| -> Result<String, Error> {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing field '{name}'")))?;
        line.strip_prefix(name)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("expected field '{name}', got '{line}'")))
    };
    let kind =
        ModelKind::parse(&field("kind")?).ok_or_else(|| bad("unknown model kind".to_string()))?;
    let dim: usize = field("dim")?.parse().map_err(|_| bad("bad dim".into()))?;
    let layers: usize = field("layers")?
        .parse()
        .map_err(|_| bad("bad layers".into()))?;
    let hidden: usize = field("hidden")?
        .parse()
        .map_err(|_| bad("bad hidden".into()))?;
    let count: usize = field("params")?
        .parse()
        .map_err(|_| bad("bad params count".into()))?;
    if !(2..=16).contains(&dim) || layers > 256 || hidden == 0 || hidden > 4096 {
        return Err(bad(format!(
            "implausible geometry dim={dim} layers={layers} hidden={hidden}"
        )));
    }
    let expected = FlowModel::expected_param_count(kind, dim, layers, hidden);
    if expected != count {
        return Err(bad(format!(
            "parameter count {count} does not match structure ({expected})"
        )));
    }
    let mut model = FlowModel::new(kind, dim, layers, hidden, 0);
    for (i, slot) in model.params.iter_mut().enumerate() {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("truncated at parameter {i}")))?;
        let v: f64 = line
            .parse()
            .map_err(|_| bad(format!("bad parameter value '{line}'")))?;
        if !v.is_finite() {
            return Err(bad(format!("non-finite parameter at index {i}")));
        }
        *slot = v;
    }
    if lines.next() != Some("end") {
        return Err(bad("missing end marker (truncated file?)".to_string()));
    }
    Ok(model)
}

/// Parses flat `key=value` lines; `#` starts a comment, blank lines are
/// skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, Error> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got '{raw}'"),
            });
        };
        entries.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(entries)
}

/// Writes `key=value` lines (the manifest format).
pub fn write_key_values(path: &Path, entries: &[(String, String)]) -> Result<(), Error> {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(&format!("{k}={v}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("radflow-train-{tag}"));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn zero_layer_model_recovers_gaussian_entropy() {
        // differential entropy of a 2-D standard normal is 1 + ln(2 pi)
        let model = FlowModel {
            kind: ModelKind::RealNvp,
            dim: 2,
            hidden: 0,
            layers: vec![],
            params: vec![0.0],
        };
        let mut rng = StdRng::seed_from_u64(7);
        let points: Vec<[f64; 2]> = (0..100_000)
            .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        let ll = mean_log_prob(&model, &points);
        assert!((ll + 2.8379).abs() < 0.01, "ll {ll}");
    }

    #[test]
    fn evaluation_is_deterministic() {
        let model = FlowModel::new_rad(2, 2, 4, 3);
        let a = evaluate(&model, Problem::RingGmm, 5000, 11);
        let b = evaluate(&model, Problem::RingGmm, 5000, 11);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tmp_dir("ckpt");
        let mut model = FlowModel::new_rad(2, 3, 8, 5);
        let mut rng = StdRng::seed_from_u64(1);
        for p in model.params.iter_mut() {
            *p = rng.gen_range(-2.0..2.0);
        }
        let path = dir.join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.kind, model.kind);
        assert_eq!(back.params.len(), model.params.len());
        for (a, b) in model.params.iter().zip(&back.params) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // loaded model evaluates identically
        let x = [0.37, -1.11];
        assert_eq!(
            model.log_prob_only(&x).to_bits(),
            back.log_prob_only(&x).to_bits()
        );
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tmp_dir("ckpt-bad");
        let model = FlowModel::new_rad(2, 2, 4, 5);
        let path = dir.join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();

        let good = fs::read_to_string(&path).unwrap();
        // version mismatch
        let v2 = good.replace("checkpoint v1", "checkpoint v9");
        fs::write(&path, v2).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        // truncation
        let cut: String = good.lines().take(20).collect::<Vec<_>>().join("\n");
        fs::write(&path, cut).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn key_value_parsing() {
        let entries = parse_key_values("a=1\n# comment\n\n b = two \n").unwrap();
        assert_eq!(
            entries,
            vec![
                ("a".to_string(), "1".to_string()),
                ("b".to_string(), "two".to_string())
            ]
        );
        assert!(parse_key_values("oops\n").is_err());
    }

    #[test]
    fn config_apply_mirrors_flag_names() {
        let mut cfg = TrainConfig::new(ModelKind::Rad, Problem::GridGmm, "out");
        for (k, v) in [
            ("model", "realnvp"),
            ("problem", "spiral"),
            ("layers", "4"),
            ("hidden", "12"),
            ("steps", "100"),
            ("batch", "64"),
            ("lr", "0.01"),
            ("seed", "9"),
            ("grad-clip", "off"),
            ("eval-every", "50"),
        ] {
            cfg.apply(k, v).unwrap();
        }
        assert_eq!(cfg.model, ModelKind::RealNvp);
        assert_eq!(cfg.problem, Problem::Spiral);
        assert_eq!(cfg.resolved_hidden(), 12);
        assert_eq!(cfg.grad_clip, None);
        assert!(cfg.apply("bogus", "1").is_err());
        assert!(cfg.apply("lr", "fast").is_err());
    }

    #[test]
    fn default_hidden_follows_model_kind() {
        let mut cfg = TrainConfig::new(ModelKind::Rad, Problem::GridGmm, "out");
        assert_eq!(cfg.resolved_hidden(), 8);
        cfg.apply("model", "realnvp").unwrap();
        assert_eq!(cfg.resolved_hidden(), 56);
        // explicit hidden wins regardless of order
        cfg.apply("hidden", "10").unwrap();
        cfg.apply("model", "rad").unwrap();
        assert_eq!(cfg.resolved_hidden(), 10);
    }

    #[test]
    fn expected_parameter_counts() {
        let rad = FlowModel::new_rad(2, 6, 8, 0);
        let nvp = FlowModel::new_realnvp(2, 6, 56, 0);
        assert_eq!(rad.param_count(), 618);
        assert_eq!(nvp.param_count(), 2034);
    }

    #[test]
    fn short_training_run_improves_and_is_deterministic() {
        let dir = tmp_dir("smoke");
        let mut cfg = TrainConfig::new(ModelKind::Rad, Problem::GridGmm, dir.join("a"));
        cfg.steps = 120;
        cfg.batch = 100;
        cfg.eval_every = 60;
        cfg.verbose = false;
        let (m1, log1) = train(&cfg).unwrap();
        assert!(log1.rows.first().unwrap().test_ll < log1.rows.last().unwrap().test_ll);
        assert!(log1.rows.windows(2).all(|w| w[0].step < w[1].step));

        let mut cfg2 = cfg.clone();
        cfg2.out = dir.join("b");
        let (m2, log2) = train(&cfg2).unwrap();
        for (a, b) in m1.params.iter().zip(&m2.params) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (r1, r2) in log1.rows.iter().zip(&log2.rows) {
            assert_eq!(r1.train_ll.to_bits(), r2.train_ll.to_bits());
            assert_eq!(r1.test_ll.to_bits(), r2.test_ll.to_bits());
        }
        // checkpoint files are byte-identical
        let c1 = fs::read(dir.join("a/model.ckpt")).unwrap();
        let c2 = fs::read(dir.join("b/model.ckpt")).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn diverging_run_aborts_with_rescue_checkpoint() {
        let dir = tmp_dir("abort");
        let mut cfg = TrainConfig::new(ModelKind::RealNvp, Problem::Spiral, &dir);
        cfg.steps = 50;
        cfg.batch = 20;
        cfg.eval_every = 10;
        cfg.lr = 1e200; // guaranteed overflow of z^2 in the base density
        cfg.grad_clip = None;
        cfg.verbose = false;
        let err = train(&cfg).unwrap_err();
        match err {
            Error::Train(msg) => {
                assert!(msg.contains("batch indices"), "msg: {msg}");
                assert!(msg.contains("last good checkpoint"), "msg: {msg}");
            }
            other => panic!("unexpected error {other}"),
        }
        let rescue = dir.join("abort-last-good.ckpt");
        assert!(rescue.exists());
        // the rescue checkpoint holds finite parameters
        let model = load_checkpoint(&rescue).unwrap();
        assert!(model.params.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn training_rejects_bad_config() {
        let mut cfg = TrainConfig::new(ModelKind::Rad, Problem::GridGmm, "out");
        cfg.steps = 0;
        assert!(matches!(train(&cfg), Err(Error::Config(_))));
    }
}

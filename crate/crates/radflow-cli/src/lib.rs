//! Command-line interface: data generation, training, evaluation, sampling,
//! figure export, and the full two-model comparison table.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime fault. All outputs land
//! under `--out`, alongside a manifest recording the fully resolved
//! configuration. Every config-file key is identical to its flag name, and
//! command-line flags override config-file entries.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use radflow::data::{generate, DatasetSpec, Problem, ALL_PROBLEMS};
use radflow::model::{FlowModel, ModelKind};
use radflow::report;
use radflow::train::{
    self, evaluate, load_checkpoint, parse_key_values, train, write_key_values, TrainConfig,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fixed seed for the held-out evaluation batches of `repro`.
const REPRO_EVAL_SEED: u64 = 424242;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<radflow::Error> for CliError {
    fn from(e: radflow::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn usage() -> String {
    "radflow <command> [--flag value ...]\n\
     \n\
     commands:\n\
     \x20 gen-data   --problem P --out DIR [--n 10000] [--seed 0] [--noise X]\n\
     \x20 train      --problem P --out DIR [--config FILE] [--model rad|realnvp]\n\
     \x20            [--layers 6] [--hidden H] [--steps 50000] [--batch 500]\n\
     \x20            [--lr 0.001] [--seed 0] [--grad-clip 100|off] [--eval-every 1000]\n\
     \x20 eval       --ckpt FILE --problem P [--n 10000] [--seed 1000003] [--out DIR]\n\
     \x20 sample     --ckpt FILE --out DIR [--n 5000] [--seed 7]\n\
     \x20 viz        --kind samples|gaussianization|folding|data --out DIR\n\
     \x20            [--ckpt FILE] [--problem P] [--layer L] [--n N] [--seed S]\n\
     \x20 repro      --out DIR [--steps 50000] [--seeds 0,1,2]\n\
     \x20            [--problems p1,p2,...] [--models rad,realnvp]\n\
     \n\
     problems: grid-gmm ring-gmm two-moons two-circles spiral many-moons\n"
        .to_string()
}

/// Splits argv into `--key value` / `--key=value` pairs, preserving order.
pub fn parse_flags(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(key) = arg.strip_prefix("--") else {
            return Err(CliError::Usage(format!("unexpected argument '{arg}'")));
        };
        if key.is_empty() {
            return Err(CliError::Usage("empty flag name".into()));
        }
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            i += 1;
        } else {
            let Some(value) = args.get(i + 1) else {
                return Err(CliError::Usage(format!("flag '--{key}' needs a value")));
            };
            out.push((key.to_string(), value.clone()));
            i += 2;
        }
    }
    Ok(out)
}

/// Simple flag lookup for commands with fixed flag sets; rejects unknown
/// flags.
struct FlagSet {
    entries: Vec<(String, String)>,
}

impl FlagSet {
    fn new(args: &[String], allowed: &[&str]) -> Result<FlagSet, CliError> {
        let entries = parse_flags(args)?;
        for (k, _) in &entries {
            if !allowed.contains(&k.as_str()) {
                return Err(CliError::Usage(format!("unknown flag '--{k}'")));
            }
        }
        Ok(FlagSet { entries })
    }

    /// Last occurrence wins, matching the config-override rule.
    fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Usage(format!("missing required flag '--{key}'")))
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("bad value '{v}' for --{key}"))),
        }
    }
}

fn manifest(out: &Path, command: &str, entries: Vec<(String, String)>) -> Result<(), CliError> {
    let mut all = vec![
        ("command".to_string(), command.to_string()),
        ("version".to_string(), VERSION.to_string()),
    ];
    all.extend(entries);
    write_key_values(&out.join("manifest.txt"), &all)?;
    Ok(())
}

/// Runs one command line; errors map to exit codes in [`run`].
pub fn dispatch(argv: &[String]) -> Result<(), CliError> {
    let Some(command) = argv.first() else {
        return Err(CliError::Usage(format!("no command given\n{}", usage())));
    };
    let rest = &argv[1..];
    match command.as_str() {
        "gen-data" => cmd_gen_data(rest),
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "sample" => cmd_sample(rest),
        "viz" => cmd_viz(rest),
        "repro" => cmd_repro(rest),
        "help" | "--help" | "-h" => {
            println!("{}", usage());
            Ok(())
        }
        other => Err(CliError::Usage(format!(
            "unknown command '{other}'\n{}",
            usage()
        ))),
    }
}

pub fn run(argv: &[String]) -> i32 {
    match dispatch(argv) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn cmd_gen_data(args: &[String]) -> Result<(), CliError> {
    let flags = FlagSet::new(args, &["problem", "n", "seed", "noise", "out"])?;
    let problem: Problem = flags
        .require("problem")?
        .parse()
        .map_err(|e: radflow::Error| CliError::Usage(e.to_string()))?;
    let out = PathBuf::from(flags.require("out")?);
    let mut spec = DatasetSpec::new(
        problem,
        flags.parse_or("n", 10_000)?,
        flags.parse_or("seed", 0)?,
    );
    if let Some(noise) = flags.get("noise") {
        spec.noise = Some(
            noise
                .parse()
                .map_err(|_| CliError::Usage(format!("bad value '{noise}' for --noise")))?,
        );
    }
    fs::create_dir_all(&out).map_err(radflow::Error::from)?;
    let batch = generate(&spec);
    radflow::data::save_csv(&batch, &out.join("data.csv"))?;
    manifest(
        &out,
        "gen-data",
        vec![
            ("problem".into(), problem.name().into()),
            ("n".into(), spec.n.to_string()),
            ("seed".into(), spec.seed.to_string()),
            ("noise".into(), spec.noise().to_string()),
            ("out".into(), out.display().to_string()),
        ],
    )?;
    println!(
        "wrote {} points to {}",
        spec.n,
        out.join("data.csv").display()
    );
    Ok(())
}

/// Builds a training config from an optional config file plus flags; flags
/// override the file because they are applied after it.
fn resolve_train_config(args: &[String]) -> Result<TrainConfig, CliError> {
    let flag_names = [
        "config",
        "model",
        "problem",
        "layers",
        "hidden",
        "steps",
        "batch",
        "lr",
        "seed",
        "out",
        "grad-clip",
        "eval-every",
    ];
    let flags = FlagSet::new(args, &flag_names)?;
    let mut merged: Vec<(String, String)> = Vec::new();
    if let Some(cfg_path) = flags.get("config") {
        let text = fs::read_to_string(cfg_path)
            .map_err(|e| CliError::Usage(format!("cannot read config file '{cfg_path}': {e}")))?;
        merged.extend(parse_key_values(&text)?);
    }
    merged.extend(flags.entries.iter().filter(|(k, _)| k != "config").cloned());
    let mut cfg = TrainConfig::new(ModelKind::Rad, Problem::GridGmm, "");
    let mut saw_problem = false;
    let mut saw_out = false;
    for (k, v) in &merged {
        cfg.apply(k, v)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        saw_problem |= k == "problem";
        saw_out |= k == "out";
    }
    if !saw_problem {
        return Err(CliError::Usage("missing required flag '--problem'".into()));
    }
    if !saw_out {
        return Err(CliError::Usage("missing required flag '--out'".into()));
    }
    Ok(cfg)
}

fn cmd_train(args: &[String]) -> Result<(), CliError> {
    let cfg = resolve_train_config(args)?;
    fs::create_dir_all(&cfg.out).map_err(radflow::Error::from)?;
    manifest(&cfg.out, "train", cfg.manifest_entries())?;
    let (_model, log) = train(&cfg)?;
    println!(
        "trained {} on {} ({} parameters); final test_ll {:+.4}; checkpoint {}",
        cfg.model.name(),
        cfg.problem.name(),
        log.param_count,
        log.rows.last().map(|r| r.test_ll).unwrap_or(f64::NAN),
        log.checkpoint.display()
    );
    Ok(())
}

fn load_model(flags: &FlagSet) -> Result<FlowModel, CliError> {
    let path = flags.require("ckpt")?;
    Ok(load_checkpoint(Path::new(path))?)
}

fn cmd_eval(args: &[String]) -> Result<(), CliError> {
    let flags = FlagSet::new(args, &["ckpt", "problem", "n", "seed", "out"])?;
    let model = load_model(&flags)?;
    let problem: Problem = flags
        .require("problem")?
        .parse()
        .map_err(|e: radflow::Error| CliError::Usage(e.to_string()))?;
    let n = flags.parse_or("n", 10_000)?;
    let seed = flags.parse_or("seed", 1_000_003u64)?;
    let ll = evaluate(&model, problem, n, seed);
    println!("test_ll {ll}");
    if let Some(out) = flags.get("out") {
        let out = PathBuf::from(out);
        fs::create_dir_all(&out).map_err(radflow::Error::from)?;
        fs::write(out.join("eval.txt"), format!("test_ll {ll}\n")).map_err(radflow::Error::from)?;
        manifest(
            &out,
            "eval",
            vec![
                ("ckpt".into(), flags.require("ckpt")?.to_string()),
                ("problem".into(), problem.name().into()),
                ("n".into(), n.to_string()),
                ("seed".into(), seed.to_string()),
                ("test_ll".into(), ll.to_string()),
            ],
        )?;
    }
    Ok(())
}

fn cmd_sample(args: &[String]) -> Result<(), CliError> {
    let flags = FlagSet::new(args, &["ckpt", "n", "seed", "out"])?;
    let model = load_model(&flags)?;
    let out = PathBuf::from(flags.require("out")?);
    let n = flags.parse_or("n", 5000)?;
    let seed = flags.parse_or("seed", 7u64)?;
    let (svg, csv) = report::export_samples(&model, n, seed, &out.join("figures/samples"))?;
    manifest(
        &out,
        "sample",
        vec![
            ("ckpt".into(), flags.require("ckpt")?.to_string()),
            ("n".into(), n.to_string()),
            ("seed".into(), seed.to_string()),
            ("out".into(), out.display().to_string()),
        ],
    )?;
    println!("wrote {} and {}", svg.display(), csv.display());
    Ok(())
}

fn cmd_viz(args: &[String]) -> Result<(), CliError> {
    let flags = FlagSet::new(
        args,
        &["ckpt", "kind", "problem", "layer", "n", "seed", "out"],
    )?;
    let kind = flags.require("kind")?.to_string();
    let out = PathBuf::from(flags.require("out")?);
    let seed = flags.parse_or("seed", 5u64)?;
    let figures = out.join("figures");
    let mut entries = vec![
        ("kind".into(), kind.clone()),
        ("seed".into(), seed.to_string()),
        ("out".into(), out.display().to_string()),
    ];
    let written: Vec<PathBuf> = match kind.as_str() {
        "samples" => {
            let model = load_model(&flags)?;
            let n = flags.parse_or("n", 5000)?;
            entries.push(("n".into(), n.to_string()));
            let (a, b) = report::export_samples(&model, n, seed, &figures.join("samples"))?;
            vec![a, b]
        }
        "gaussianization" => {
            let model = load_model(&flags)?;
            let problem: Problem = flags
                .require("problem")?
                .parse()
                .map_err(|e: radflow::Error| CliError::Usage(e.to_string()))?;
            let n = flags.parse_or("n", 10_000)?;
            entries.push(("problem".into(), problem.name().into()));
            entries.push(("n".into(), n.to_string()));
            let data = generate(&DatasetSpec::new(problem, n, seed));
            let (a, b) = report::export_gaussianization(
                &model,
                &data.points,
                &figures.join("gaussianization"),
            )?;
            vec![a, b]
        }
        "folding" => {
            let model = load_model(&flags)?;
            let problem: Problem = flags
                .require("problem")?
                .parse()
                .map_err(|e: radflow::Error| CliError::Usage(e.to_string()))?;
            let layer = flags.parse_or("layer", 0usize)?;
            let n = flags.parse_or("n", 5000)?;
            entries.push(("problem".into(), problem.name().into()));
            entries.push(("layer".into(), layer.to_string()));
            entries.push(("n".into(), n.to_string()));
            let data = generate(&DatasetSpec::new(problem, n, seed));
            report::export_folding(
                &model,
                &data.points,
                layer,
                &figures.join(format!("folding_layer{layer}")),
            )?
        }
        "data" => {
            let problem: Problem = flags
                .require("problem")?
                .parse()
                .map_err(|e: radflow::Error| CliError::Usage(e.to_string()))?;
            let n = flags.parse_or("n", 5000)?;
            entries.push(("problem".into(), problem.name().into()));
            entries.push(("n".into(), n.to_string()));
            let spec = DatasetSpec::new(problem, n, seed);
            let (a, b) =
                report::export_data(&spec, &figures.join(format!("data_{}", problem.name())))?;
            vec![a, b]
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown viz kind '{other}' (samples|gaussianization|folding|data)"
            )))
        }
    };
    manifest(&out, "viz", entries)?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn parse_list<T, F>(raw: &str, what: &str, parse: F) -> Result<Vec<T>, CliError>
where
    F: Fn(&str) -> Option<T>,
{
    raw.split(',')
        .map(|tok| {
            let tok = tok.trim();
            parse(tok).ok_or_else(|| CliError::Usage(format!("bad {what} '{tok}'")))
        })
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Trains both model families on the requested problems and seeds, then
/// writes and prints the median-over-seeds comparison table. Everything
/// lands under `--out`.
fn cmd_repro(args: &[String]) -> Result<(), CliError> {
    let flags = FlagSet::new(
        args,
        &["steps", "seeds", "out", "problems", "models", "eval-every"],
    )?;
    let out = PathBuf::from(flags.require("out")?);
    let steps: usize = flags.parse_or("steps", 50_000)?;
    let eval_every: usize = flags.parse_or("eval-every", 1000)?;
    let seeds: Vec<u64> = parse_list(flags.get("seeds").unwrap_or("0,1,2"), "seed", |t| {
        t.parse().ok()
    })?;
    let problems: Vec<Problem> = match flags.get("problems") {
        None => ALL_PROBLEMS.to_vec(),
        Some(raw) => parse_list(raw, "problem", |t| t.parse().ok())?,
    };
    let models: Vec<ModelKind> = match flags.get("models") {
        None => vec![ModelKind::Rad, ModelKind::RealNvp],
        Some(raw) => parse_list(raw, "model", ModelKind::parse)?,
    };
    fs::create_dir_all(&out).map_err(radflow::Error::from)?;
    manifest(
        &out,
        "repro",
        vec![
            ("steps".into(), steps.to_string()),
            (
                "seeds".into(),
                seeds
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "problems".into(),
                problems
                    .iter()
                    .map(|p| p.name())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "models".into(),
                models
                    .iter()
                    .map(|m| m.name())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("out".into(), out.display().to_string()),
        ],
    )?;

    let mut cells = Vec::new();
    let mut param_counts = Vec::new();
    for &problem in &problems {
        for &kind in &models {
            let mut lls = Vec::new();
            for &seed in &seeds {
                let run_dir =
                    out.join("runs")
                        .join(format!("{}-{}-s{}", problem.name(), kind.name(), seed));
                let mut cfg = TrainConfig::new(kind, problem, &run_dir);
                cfg.steps = steps;
                cfg.seed = seed;
                cfg.eval_every = eval_every.min(steps);
                manifest(&run_dir_ready(&run_dir)?, "train", cfg.manifest_entries())?;
                let (model, log) = train(&cfg)?;
                param_counts.push((kind, log.param_count));
                let ll = evaluate(&model, problem, train::SET_SIZE, REPRO_EVAL_SEED);
                eprintln!(
                    "repro: {} {} seed {} -> test_ll {ll:+.4}",
                    problem.name(),
                    kind.name(),
                    seed
                );
                lls.push(ll);
            }
            cells.push(report::TableCell {
                problem,
                kind,
                ll: Some(median(&mut lls)),
            });
        }
    }
    let table = report::ll_table(&cells);
    fs::write(out.join("table.txt"), &table).map_err(radflow::Error::from)?;
    fs::write(out.join("table.csv"), report::ll_table_csv(&cells)).map_err(radflow::Error::from)?;
    print!("{table}");
    let rad_params = param_counts
        .iter()
        .find(|(k, _)| *k == ModelKind::Rad)
        .map(|(_, n)| *n);
    let nvp_params = param_counts
        .iter()
        .find(|(k, _)| *k == ModelKind::RealNvp)
        .map(|(_, n)| *n);
    if let (Some(r), Some(n)) = (rad_params, nvp_params) {
        println!(
            "parameters: rad={r} realnvp={n} (ratio {:.2})",
            n as f64 / r as f64
        );
    }
    println!("table written to {}", out.join("table.txt").display());
    Ok(())
}

fn run_dir_ready(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(radflow::Error::from)?;
    Ok(dir.to_path_buf())
}

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ered::fusion::AlignmentScheme;
use ered::kb::{Gazetteer, KnowledgeBase};
use ered::synth;
use ered::train::{TrainConfig, Trainer};

/// Knowledge-enhanced transformer training and evaluation.
#[derive(Parser)]
#[command(name = "ered", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes loss_log.csv, metrics.json and checkpoint.bin to --out
    Train(TrainArgs),
    /// Evaluate a checkpoint on the dev split (train when there is none)
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Link raw text lines against the gazetteer and print JSON mentions
    Link {
        #[command(flatten)]
        source: LinkSource,
        /// Text file with one document per line (stdin when absent)
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run the frozen knowledge module over every KB description and store the result
    PrecomputeCache {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the full model on a small reference batch
    Gradcheck {
        /// Redraw trainable weights from N(0, std²) before checking
        #[arg(long)]
        redraw_std: Option<f64>,
    },
    /// Write a synthetic dataset with a matching config.json
    Synth {
        #[arg(long, value_enum, default_value_t = SynthKind::Knowledge)]
        kind: SynthKind,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Label recoverable only through the linked entity's description
    Knowledge,
    /// 100 entity-typing examples over 5 types
    Typing,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct LinkSource {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kb: Option<PathBuf>,
    /// name<TAB>entity_id lines
    #[arg(long)]
    gazetteer: Option<PathBuf>,
}

/// Options shared by every command that builds a model from a config.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Description cache written by precompute-cache
    #[arg(long)]
    cache: Option<PathBuf>,
    /// last, first, first_and_last, uniform, middle or custom:1,2,5
    #[arg(long)]
    alignment: Option<AlignmentScheme>,
    /// Entities per example; 0 trains the plain encoder without auxiliary tasks
    #[arg(long)]
    entities: Option<usize>,
    /// Negative entities per example; 0 also disables the pollution task
    #[arg(long)]
    negatives: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    no_aux_a: bool,
    #[arg(long)]
    no_aux_b: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Bad invocation: reported with exit code 2 like clap's own errors.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn load_config(run: &RunArgs) -> Result<TrainConfig> {
    require_file(&run.config, "config file")?;
    let mut cfg = TrainConfig::load(&run.config).map_err(|e| usage(e.to_string()))?;
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if let Some(cache) = &run.cache {
        cfg.cache = Some(cache.clone());
    }
    if let Some(a) = &run.alignment {
        cfg.alignment = a.clone();
    }
    if let Some(n) = run.negatives {
        cfg.number_of_negatives = n;
        if n == 0 {
            cfg.use_aux_b = false;
        }
    }
    if let Some(e) = run.entities {
        cfg.number_of_entities = e;
        if e == 0 {
            cfg.number_of_negatives = 0;
            cfg.use_aux_a = false;
            cfg.use_aux_b = false;
        }
    }
    Ok(cfg)
}

fn check_paths(cfg: &TrainConfig) -> Result<()> {
    require_file(&cfg.train, "train file")?;
    let optional = [
        ("dev file", &cfg.dev),
        ("kb file", &cfg.kb),
        ("vocab file", &cfg.vocab),
        ("gazetteer file", &cfg.gazetteer),
        ("cache file", &cfg.cache),
    ];
    for (what, p) in optional {
        if let Some(p) = p {
            require_file(p, what)?;
        }
    }
    cfg.validate().map_err(|e| usage(e.to_string()))
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.run)?;
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(b) = args.beta {
        cfg.beta = b;
    }
    cfg.use_aux_a &= !args.no_aux_a;
    cfg.use_aux_b &= !args.no_aux_b;
    check_paths(&cfg)?;
    let start = Instant::now();
    let mut trainer = Trainer::new(cfg)?;
    let summary = trainer.run(Some(&args.out))?;
    if let Some(last) = summary.steps.last() {
        eprintln!(
            "{} steps in {:.1?}; final loss {:.6}",
            summary.steps.len(),
            start.elapsed(),
            last.total
        );
    }
    if let Some(best) = &summary.best {
        println!("{}", serde_json::to_string(best)?);
    }
    Ok(())
}

fn eval(run: RunArgs, checkpoint: &Path) -> Result<()> {
    let cfg = load_config(&run)?;
    check_paths(&cfg)?;
    require_file(checkpoint, "checkpoint")?;
    let mut trainer = Trainer::new(cfg)?;
    trainer.load_checkpoint(checkpoint).context("loading checkpoint")?;
    let examples = if trainer.dev_examples().is_empty() {
        trainer.train_examples()
    } else {
        trainer.dev_examples()
    };
    println!("{}", serde_json::to_string(&trainer.evaluate(examples)?)?);
    Ok(())
}

fn link(source: LinkSource, input: Option<PathBuf>) -> Result<()> {
    let gazetteer = match (source.config, source.kb, source.gazetteer) {
        (_, _, Some(g)) => {
            require_file(&g, "gazetteer file")?;
            Gazetteer::parse_tsv(&std::fs::read_to_string(&g)?)?
        }
        (_, Some(kb), _) => {
            require_file(&kb, "kb file")?;
            Gazetteer::from_kb(&KnowledgeBase::load(&kb)?)
        }
        (Some(c), _, _) => {
            require_file(&c, "config file")?;
            let cfg = TrainConfig::load(&c).map_err(|e| usage(e.to_string()))?;
            match (&cfg.gazetteer, &cfg.kb) {
                (Some(g), _) => Gazetteer::parse_tsv(&std::fs::read_to_string(g).with_context(|| g.display().to_string())?)?,
                (None, Some(kb)) => Gazetteer::from_kb(&KnowledgeBase::load(kb)?),
                (None, None) => return Err(usage("config names neither a gazetteer nor a kb")),
            }
        }
        (None, None, None) => unreachable!("clap requires one source"),
    };
    let reader: Box<dyn BufRead> = match &input {
        Some(p) => {
            require_file(p, "input file")?;
            Box::new(std::io::BufReader::new(std::fs::File::open(p)?))
        }
        None => Box::new(std::io::stdin().lock()),
    };
    let mut out = std::io::stdout().lock();
    for line in reader.lines() {
        writeln!(out, "{}", serde_json::to_string(&gazetteer.link(&line?))?)?;
    }
    Ok(())
}

fn precompute(config: &Path, out: &Path) -> Result<()> {
    require_file(config, "config file")?;
    let cfg = TrainConfig::load(config).map_err(|e| usage(e.to_string()))?;
    check_paths(&cfg)?;
    if cfg.number_of_entities == 0 {
        bail!("the config uses no entities, so there is nothing to cache");
    }
    let trainer = Trainer::new(TrainConfig { cache: None, ..cfg })?;
    let cache = trainer.build_cache()?;
    cache.save(out)?;
    eprintln!(
        "cached {} descriptions x {} layers to {}",
        cache.len(),
        cache.layers(),
        out.display()
    );
    Ok(())
}

fn gradcheck(redraw_std: Option<f64>) -> Result<bool> {
    let start = Instant::now();
    let report = ered::reference::model_grad_check(redraw_std)?;
    for (name, err) in &report.per_param {
        println!("{name:<40} {err:.3e}");
    }
    println!(
        "checked {} elements in {:.1?}: max relative error {:.3e} (tolerance {:.0e}) -> {}",
        report.checked,
        start.elapsed(),
        report.max_rel_error,
        report.tolerance,
        if report.passed { "pass" } else { "FAIL" }
    );
    Ok(report.passed)
}

fn synth_cmd(kind: SynthKind, seed: u64, out: &Path) -> Result<()> {
    let ds = match kind {
        SynthKind::Knowledge => synth::knowledge_dataset(
            seed,
            synth::KNOWLEDGE_TRAIN_ENTITIES,
            synth::KNOWLEDGE_DEV_ENTITIES,
            synth::KNOWLEDGE_PER_ENTITY,
        )?,
        SynthKind::Typing => synth::typing_dataset(seed, 100)?,
    };
    let path = ds.write(out)?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => train(args)?,
        Command::Eval { run, checkpoint } => eval(run, &checkpoint)?,
        Command::Link { source, input } => link(source, input)?,
        Command::PrecomputeCache { config, out } => precompute(&config, &out)?,
        Command::Gradcheck { redraw_std } => return gradcheck(redraw_std),
        Command::Synth { kind, seed, out } => synth_cmd(kind, seed, &out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

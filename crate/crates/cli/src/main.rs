use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcqa_core::experiment::{
    build_model, crossval, evaluate_manifest, initial_encoder, load_dataset, open_cache,
    predict_ply, prepare_samples, pretrain_checkpoint, pretrain_data, run_finetune, run_pretrain, synth_items,
    synth_references, write_dataset, write_json, JsonLog,
};
use pcqa_core::{Error, ExperimentConfig, PointCloud, Result};

#[derive(Parser)]
#[command(name = "pcqa", version, about = "No-reference point cloud quality assessment")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `paths.output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted-key override such as `pretrain.epochs=5`; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generates a distorted dataset with pseudo-MOS labels.
    Synth {
        /// Manifest of reference clouds, one content per row.
        #[arg(long, conflicts_with = "generate_refs")]
        refs: Option<PathBuf>,
        /// Number of procedurally generated reference clouds.
        #[arg(long)]
        generate_refs: Option<usize>,
    },
    /// Renders the pre-training images into `paths.cache_dir`.
    RenderCache {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Contrastive pre-training of the quality encoder.
    Pretrain {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Fine-tunes the fusion model; scores the test manifest every epoch when given.
    Finetune {
        /// Pre-training checkpoint; overrides `paths.pretrained_checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        train_manifest: Option<PathBuf>,
        #[arg(long)]
        test_manifest: Option<PathBuf>,
    },
    /// Scores a labelled manifest.
    Eval {
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Predicts the stored MOS; checks the protocol end to end.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Prints one quality score per PLY file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Content-disjoint k-fold cross-validation.
    Crossval {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.paths.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pick<'a>(flag: Option<&'a PathBuf>, fallbacks: &[Option<&'a PathBuf>], what: &str) -> Result<&'a Path> {
    std::iter::once(flag)
        .chain(fallbacks.iter().copied())
        .flatten()
        .next()
        .map(PathBuf::as_path)
        .ok_or_else(|| Error::Config(format!("no {what} given")))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out = cfg.paths.output_dir.clone();
    let paths = &cfg.paths;
    match &cli.command {
        Command::Synth { refs, generate_refs } => {
            let references = match (refs, generate_refs) {
                (Some(path), _) => reference_clouds(path)?,
                (None, Some(n)) => synth_references(*n, cfg.synth.points, cfg.seed),
                (None, None) => return Err(Error::Config("synth needs --refs or --generate-refs".into())),
            };
            let items = synth_items(&references, &cfg.synth, cfg.seed)?;
            let manifest = write_dataset(&items, &out)?;
            println!("{} clouds, manifest {}", items.len(), manifest.display());
        }
        Command::RenderCache { manifest } => {
            if paths.cache_dir.is_none() {
                return Err(Error::Config("render-cache needs paths.cache_dir".into()));
            }
            let manifest = pick(manifest.as_ref(), &[paths.pretrain_manifest.as_ref(), paths.train_manifest.as_ref()], "manifest")?;
            let items = load_dataset(manifest)?;
            let mut cache = open_cache(&cfg)?;
            let data = pretrain_data(&cfg, &items, &mut cache)?;
            println!("{} renders, {} cached, {} rendered", data.num_renders(), cache.hits, cache.misses);
        }
        Command::Pretrain { manifest } => {
            let manifest = pick(manifest.as_ref(), &[paths.pretrain_manifest.as_ref(), paths.train_manifest.as_ref()], "manifest")?;
            let items = load_dataset(manifest)?;
            let mut log = JsonLog::create(&out.join("pretrain_log.jsonl"))?;
            log.start("pretrain", &cfg)?;
            let data = pretrain_data(&cfg, &items, &mut open_cache(&cfg)?)?;
            let (state, history) = run_pretrain(&cfg, &data, &mut log)?;
            let path = out.join("pretrain.ckpt");
            pretrain_checkpoint(&cfg, &state)?.save(&path)?;
            let last = history.last().map_or(f64::NAN, |m| m.mean_loss);
            println!("{} epochs, final loss {last:.6}, checkpoint {}", history.len(), path.display());
        }
        Command::Finetune { checkpoint, train_manifest, test_manifest } => {
            let mut cfg = cfg.clone();
            if let Some(ck) = checkpoint {
                cfg.paths.pretrained_checkpoint = Some(ck.clone());
            }
            let train_path = pick(train_manifest.as_ref(), &[paths.train_manifest.as_ref()], "training manifest")?;
            let test_path = test_manifest.as_ref().or(paths.test_manifest.as_ref());
            let train_items = load_dataset(train_path)?;
            let mut log = JsonLog::create(&out.join("finetune_log.jsonl"))?;
            log.start("finetune", &cfg)?;
            let init = initial_encoder(&cfg, &train_items, &mut open_cache(&cfg)?, &mut log)?;
            let model = build_model(&cfg, init.as_ref())?;
            let train = prepare_samples(&model, &train_items)?;
            let test = match test_path {
                Some(p) => Some(prepare_samples(&model, &load_dataset(p)?)?),
                None => None,
            };
            let run = run_finetune(&cfg, model, &train, test.as_deref(), &mut log)?;
            let epochs = run.history.len() as u64;
            run.best.to_checkpoint(cfg.seed, run.selected_epoch, 0)?.save(&out.join("finetune.ckpt"))?;
            run.model.to_checkpoint(cfg.seed, epochs, 0)?.save(&out.join("finetune_last.ckpt"))?;
            println!("selected epoch {} (train loss {:.6})", run.selected_epoch, run.min_train_loss);
            if let Some(outcome) = &run.selected_eval {
                write_json(outcome, &out.join("finetune_eval.json"))?;
                println!("{}", summary(outcome));
            }
        }
        Command::Eval { checkpoint, oracle, manifest } => {
            let manifest = pick(manifest.as_ref(), &[paths.test_manifest.as_ref()], "evaluation manifest")?;
            let model = if *oracle { None } else { checkpoint.as_deref() };
            let plot = cfg.eval.plot.then(|| out.join("eval_scatter.png"));
            let report = evaluate_manifest(manifest, model, plot.as_deref())?;
            write_json(&report, &out.join("eval_report.json"))?;
            println!("{}", summary(&report.outcome));
        }
        Command::Predict { checkpoint, files } => {
            for f in files {
                println!("{}\t{:.6}", f.display(), predict_ply(checkpoint, f)?);
            }
        }
        Command::Crossval { manifest } => {
            let manifest = pick(manifest.as_ref(), &[paths.train_manifest.as_ref()], "manifest")?;
            let items = load_dataset(manifest)?;
            let mut log = JsonLog::create(&out.join("crossval_log.jsonl"))?;
            log.start("crossval", &cfg)?;
            let report = crossval(&cfg, &items, &mut log)?;
            write_json(&report, &out.join("crossval_report.json"))?;
            print!("{}", report.table());
        }
    }
    Ok(())
}

/// One cloud per content id from a reference manifest.
fn reference_clouds(manifest: &Path) -> Result<Vec<(u32, PointCloud)>> {
    let items = load_dataset(manifest)?;
    let mut by_content = BTreeMap::new();
    for (e, cloud) in items {
        if by_content.insert(e.content_id, cloud).is_some() {
            return Err(Error::Dataset(format!("reference manifest repeats content {}", e.content_id)));
        }
    }
    Ok(by_content.into_iter().collect())
}

fn summary(outcome: &pcqa_core::EvalOutcome) -> String {
    match outcome.scored() {
        Some(r) => format!("SROCC {:.4} PLCC {:.4} RMSE {:.4} n {}", r.srocc, r.plcc, r.rmse, r.n_samples),
        None => format!("undefined: {outcome:?}"),
    }
}

//! End-to-end drivers shared by the command-line tool and the acceptance
//! suite: dataset synthesis, pre-training, fine-tuning, cross-validation and
//! cross-dataset evaluation.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, InitMode, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, kfold_split, require_labels, scatter_plot, CrossValReport, EvalOutcome, FoldReport, OracleModel,
    Predictor,
};
use crate::finetune::{finetune_epoch, FinetuneMetrics, FinetuneModel, FinetuneOptimizer, FinetuneSample};
use crate::pointcloud::{
    load_manifest, load_ply, save_ply, shapes, synth_distort_with, DatasetManifest, DistortionSpec, ManifestEntry,
    PointCloud,
};
use crate::pretrain::{pretrain_epoch, PretrainData, PretrainMetrics, PretrainState};
use crate::render::RenderCache;
use crate::rng::derive_seed;
use crate::tensor::ParamSet;

/// A manifest row with its cloud loaded.
pub type DatasetItem = (ManifestEntry, PointCloud);

/// Append-only JSON-lines log; a disabled log swallows records.
pub struct JsonLog {
    out: Option<BufWriter<File>>,
}

impl JsonLog {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(JsonLog { out: Some(BufWriter::new(f)) })
    }

    pub fn disabled() -> Self {
        JsonLog { out: None }
    }

    /// Writes `{"event": event, ..record}` and flushes.
    pub fn record<T: Serialize>(&mut self, event: &str, record: &T) -> Result<()> {
        let Some(out) = &mut self.out else { return Ok(()) };
        let mut value = serde_json::to_value(record).map_err(|e| Error::Numeric(e.to_string()))?;
        let obj = match &mut value {
            serde_json::Value::Object(m) => m,
            _ => return Err(Error::Usage("log records must serialize to objects".into())),
        };
        obj.insert("event".into(), event.into());
        let line = serde_json::to_string(&value).map_err(|e| Error::Numeric(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<log>", e))?;
        out.flush().map_err(|e| Error::io("<log>", e))
    }

    pub fn start(&mut self, command: &str, cfg: &ExperimentConfig) -> Result<()> {
        log::info!("{command}: config {} seed {}", cfg.hash(), cfg.seed);
        self.record(
            "start",
            &serde_json::json!({"command": command, "config_hash": cfg.hash(), "seed": cfg.seed}),
        )
    }
}

/// `count` generated reference clouds with content ids `0..count`.
pub fn synth_references(count: usize, points: usize, seed: u64) -> Vec<(u32, PointCloud)> {
    (0..count)
        .into_par_iter()
        .map(|i| (i as u32, shapes::reference_content(i, points, derive_seed(seed, &[7, i as u64]))))
        .collect()
}

/// Pseudo-MOS `1 + 4·(L + 1 − level)/L`, decreasing in level.
pub fn pseudo_mos(level: u8, levels: u8) -> f64 {
    1.0 + 4.0 * (levels as f64 + 1.0 - level as f64) / levels as f64
}

/// Every (reference, kind, level) distortion; references themselves are not
/// included. Rows come out in (content, kind, level) order.
pub fn synth_items(refs: &[(u32, PointCloud)], synth: &SynthConfig, seed: u64) -> Result<Vec<DatasetItem>> {
    if refs.len() < 2 {
        return Err(Error::Usage(format!("synthesis needs at least 2 references, got {}", refs.len())));
    }
    let mut jobs = Vec::new();
    for (c, cloud) in refs {
        for kind in &synth.kinds {
            for level in 1..=synth.levels {
                jobs.push((*c, cloud, *kind, level));
            }
        }
    }
    jobs.par_iter()
        .map(|&(c, cloud, kind, level)| {
            let spec = DistortionSpec {
                kind,
                level,
                seed: derive_seed(seed, &[c as u64, kind.id() as u64, level as u64]),
            };
            let distorted = synth_distort_with(cloud, &spec, &synth.schedule)?;
            let entry = ManifestEntry {
                path: PathBuf::from(format!("clouds/c{c:03}_{}_l{level}.ply", kind.as_str())),
                content_id: c,
                distortion_id: kind.id(),
                level: level as u32,
                mos: synth.pseudo_mos.then(|| pseudo_mos(level, synth.levels)),
            };
            Ok((entry, distorted))
        })
        .collect()
}

/// Writes the distorted clouds (binary PLY) and `manifest.csv` under `out`.
pub fn write_dataset(items: &[DatasetItem], out: &Path) -> Result<PathBuf> {
    items
        .par_iter()
        .map(|(e, cloud)| {
            let path = out.join(&e.path);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
            }
            save_ply(cloud, path, true)
        })
        .collect::<Result<()>>()?;
    let manifest = DatasetManifest::new(items.iter().map(|(e, _)| e.clone()).collect())?;
    let path = out.join("manifest.csv");
    crate::pointcloud::write_manifest(&manifest, &path)?;
    Ok(path)
}

/// Loads a manifest and its clouds; relative paths resolve against the
/// manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<DatasetItem>> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest = load_manifest(manifest_path)?.resolved(base);
    manifest
        .entries
        .into_par_iter()
        .map(|e| {
            let cloud = load_ply(&e.path)?;
            Ok((e, cloud))
        })
        .collect()
}

pub fn contents_of(items: &[DatasetItem]) -> Vec<u32> {
    items.iter().map(|(e, _)| e.content_id).collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn filter_contents(items: &[DatasetItem], contents: &[u32]) -> Vec<DatasetItem> {
    items.iter().filter(|(e, _)| contents.contains(&e.content_id)).cloned().collect()
}

pub fn open_cache(cfg: &ExperimentConfig) -> Result<RenderCache> {
    match &cfg.paths.cache_dir {
        Some(dir) => RenderCache::on_disk(dir),
        None => Ok(RenderCache::in_memory()),
    }
}

/// Renders every item under `rotations_per_cloud` content-shared rotations.
pub fn pretrain_data(cfg: &ExperimentConfig, items: &[DatasetItem], cache: &mut RenderCache) -> Result<PretrainData> {
    let mut sorted: Vec<&DatasetItem> = items.iter().collect();
    sorted.sort_by_key(|(e, _)| e.key());
    let clouds: Vec<(u32, PointCloud)> = sorted.into_iter().map(|(e, c)| (e.content_id, c.clone())).collect();
    PretrainData::render_clouds(
        &clouds,
        &cfg.render,
        cfg.pretrain.rotations_per_cloud,
        derive_seed(cfg.seed, &[50]),
        cache,
    )
}

pub fn run_pretrain(
    cfg: &ExperimentConfig,
    data: &PretrainData,
    log: &mut JsonLog,
) -> Result<(PretrainState, Vec<PretrainMetrics>)> {
    let mut state = PretrainState::new(&cfg.encoder_config(derive_seed(cfg.seed, &[100])), &cfg.pretrain)?;
    let mut history = Vec::with_capacity(cfg.pretrain.epochs);
    for _ in 0..cfg.pretrain.epochs {
        let m = pretrain_epoch(&mut state, data, &cfg.pretrain, derive_seed(cfg.seed, &[101]))?;
        log::info!("pretrain epoch {} loss {:.6}", m.epoch, m.mean_loss);
        log.record("pretrain_epoch", &m)?;
        history.push(m);
    }
    Ok((state, history))
}

pub fn pretrain_checkpoint(cfg: &ExperimentConfig, state: &PretrainState) -> Result<Checkpoint> {
    let config = serde_json::to_value(cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(state.to_checkpoint(cfg.seed, config))
}

/// Query-encoder parameters from a pre-training checkpoint.
pub fn load_pretrained_encoder(path: &Path) -> Result<ParamSet> {
    let ck = Checkpoint::load(path)?;
    ck.expect_kind(crate::pretrain::CHECKPOINT_KIND)?;
    Ok(ck.section("query")?.clone())
}

/// Builds the fine-tuning model, loading external semantic weights and
/// pre-trained quality-encoder parameters when given.
pub fn build_model(cfg: &ExperimentConfig, init: Option<&ParamSet>) -> Result<FinetuneModel> {
    let mut model = FinetuneModel::new(cfg.model_config(), derive_seed(cfg.seed, &[200]))?;
    if let Some(path) = &cfg.paths.semantic_weights {
        let ck = Checkpoint::load(path)?;
        model.semantic.load_backbone(ck.section("backbone")?)?;
    }
    if let Some(params) = init {
        model.quality.params.load_from(params)?;
    }
    Ok(model)
}

/// Renders views and semantic features for labelled items.
pub fn prepare_samples(model: &FinetuneModel, items: &[DatasetItem]) -> Result<Vec<FinetuneSample>> {
    items
        .par_iter()
        .map(|(e, cloud)| {
            let mos = e.mos.ok_or_else(|| {
                Error::Dataset(format!("row {} has no mos; fine-tuning needs labels", e.path.display()))
            })?;
            model.prepare_sample(cloud, e.content_id, e.distortion_id, e.level, mos)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    #[serde(flatten)]
    pub metrics: FinetuneMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalOutcome>,
}

#[derive(Debug, Clone)]
pub struct FinetuneRun {
    pub model: FinetuneModel,
    /// Snapshot at the epoch with the lowest training loss.
    pub best: FinetuneModel,
    pub history: Vec<EpochRecord>,
    pub selected_epoch: u64,
    pub min_train_loss: f64,
    /// Evaluation at `selected_epoch`, when an evaluation set was given.
    pub selected_eval: Option<EvalOutcome>,
}

/// Fine-tunes for `cfg.finetune.epochs`, optionally scoring `eval` after
/// every epoch. The regression output bias starts at the mean training MOS.
pub fn run_finetune(
    cfg: &ExperimentConfig,
    mut model: FinetuneModel,
    train: &[FinetuneSample],
    eval: Option<&[FinetuneSample]>,
    log: &mut JsonLog,
) -> Result<FinetuneRun> {
    if train.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    model.head.set_output_bias(train.iter().map(|s| s.mos).sum::<f64>() / train.len() as f64);
    let mut optimizer = FinetuneOptimizer::new(&mut model, cfg.finetune.weight_decay);
    let seed = derive_seed(cfg.seed, &[201]);
    let mut history = Vec::with_capacity(cfg.finetune.epochs);
    let mut best = (model.clone(), 0u64, f64::INFINITY, None);
    for epoch in 0..cfg.finetune.epochs as u64 {
        let metrics = finetune_epoch(&mut model, &mut optimizer, train, &cfg.finetune, seed, epoch)?;
        let outcome = match eval {
            Some(samples) => Some(evaluate(&model, samples)?.0),
            None => None,
        };
        log::info!("finetune epoch {} loss {:.6}", metrics.epoch, metrics.mean_loss);
        let record = EpochRecord { metrics, eval: outcome };
        log.record("finetune_epoch", &record)?;
        if record.metrics.mean_loss < best.2 {
            best = (model.clone(), record.metrics.epoch, record.metrics.mean_loss, record.eval.clone());
        }
        history.push(record);
    }
    let (best_model, selected_epoch, min_train_loss, selected_eval) = best;
    Ok(FinetuneRun {
        model,
        best: best_model,
        history,
        selected_epoch,
        min_train_loss,
        selected_eval,
    })
}

/// Quality-encoder initialization for one training split.
pub fn initial_encoder(
    cfg: &ExperimentConfig,
    train_items: &[DatasetItem],
    cache: &mut RenderCache,
    log: &mut JsonLog,
) -> Result<Option<ParamSet>> {
    match cfg.init {
        InitMode::Random => Ok(None),
        InitMode::Pretrained => match &cfg.paths.pretrained_checkpoint {
            Some(p) => Ok(Some(load_pretrained_encoder(p)?)),
            None => {
                let data = pretrain_data(cfg, train_items, cache)?;
                let (state, _) = run_pretrain(cfg, &data, log)?;
                Ok(Some(state.query.params))
            }
        },
    }
}

/// Content-disjoint k-fold protocol. Each fold is initialized per
/// `cfg.init` from its own training contents, fine-tuned, scored on its
/// test contents after every epoch, and reports the epoch with the lowest
/// training loss. Folds are aligned and scored separately, then averaged.
pub fn crossval(
    cfg: &ExperimentConfig,
    items: &[DatasetItem],
    log: &mut JsonLog,
) -> Result<CrossValReport> {
    let contents = contents_of(items);
    let folds = kfold_split(
        &contents,
        cfg.eval.folds,
        (cfg.eval.train_ratio, cfg.eval.test_ratio),
        derive_seed(cfg.seed, &[300]),
    )?;
    let template = build_model(cfg, None)?;
    let samples = prepare_samples(&template, items)?;
    let mut cache = open_cache(cfg)?;
    let mut reports = Vec::with_capacity(folds.len());
    for fold in &folds {
        let mut fcfg = cfg.clone();
        fcfg.seed = derive_seed(cfg.seed, &[400, fold.fold_id as u64]);
        log.record("fold_start", fold)?;
        let train_items = filter_contents(items, &fold.train);
        let init = initial_encoder(&fcfg, &train_items, &mut cache, log)?;
        let model = build_model(&fcfg, init.as_ref())?;
        let pick = |ids: &[u32]| -> Vec<FinetuneSample> {
            samples.iter().filter(|s| ids.contains(&s.content_id)).cloned().collect()
        };
        let (train, test) = (pick(&fold.train), pick(&fold.test));
        let run = run_finetune(&fcfg, model, &train, Some(&test), log)?;
        let report = FoldReport {
            fold_id: fold.fold_id,
            train_contents: fold.train.clone(),
            test_contents: fold.test.clone(),
            selected_epoch: run.selected_epoch,
            min_train_loss: run.min_train_loss,
            outcome: run.selected_eval.expect("evaluation set given"),
        };
        log.record("fold_result", &report)?;
        reports.push(report);
    }
    Ok(CrossValReport::from_folds(reports))
}

/// Trains on all of `train_items` and scores `test_items` after every epoch;
/// the reported result is the one at the lowest training loss.
pub fn cross_dataset(
    cfg: &ExperimentConfig,
    train_items: &[DatasetItem],
    test_items: &[DatasetItem],
    log: &mut JsonLog,
) -> Result<FinetuneRun> {
    let mut cache = open_cache(cfg)?;
    let init = initial_encoder(cfg, train_items, &mut cache, log)?;
    let model = build_model(cfg, init.as_ref())?;
    let train = prepare_samples(&model, train_items)?;
    let test = prepare_samples(&model, test_items)?;
    run_finetune(cfg, model, &train, Some(&test), log)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub manifest: PathBuf,
    pub model: String,
    pub outcome: EvalOutcome,
    pub predictions: Vec<f64>,
    pub mos: Vec<f64>,
}

/// Scores `manifest` with a fine-tuned checkpoint, or with the oracle when
/// `checkpoint` is `None`. Writes a scatter plot when `plot` is given.
pub fn evaluate_manifest(manifest: &Path, checkpoint: Option<&Path>, plot: Option<&Path>) -> Result<EvalReport> {
    require_labels(&load_manifest(manifest)?)?;
    let items = load_dataset(manifest)?;
    let (model, name): (Option<FinetuneModel>, String) = match checkpoint {
        Some(p) => (Some(FinetuneModel::from_checkpoint(&Checkpoint::load(p)?)?), p.display().to_string()),
        None => (None, "oracle".into()),
    };
    let samples = match &model {
        Some(m) => prepare_samples(m, &items)?,
        None => items
            .iter()
            .map(|(e, _)| FinetuneSample {
                content_id: e.content_id,
                distortion_id: e.distortion_id,
                level: e.level,
                mos: e.mos.expect("labels checked"),
                views: Vec::new(),
                semantic: Vec::new(),
            })
            .collect(),
    };
    let predictor: &dyn Predictor = match &model {
        Some(m) => m,
        None => &OracleModel,
    };
    let (outcome, predictions) = evaluate(predictor, &samples)?;
    let mos: Vec<f64> = samples.iter().map(|s| s.mos).collect();
    if let Some(path) = plot {
        let curve = outcome.scored().map(|r| r.curve());
        scatter_plot(&predictions, &mos, curve.as_ref(), path)?;
    }
    Ok(EvalReport {
        manifest: manifest.to_path_buf(),
        model: name,
        outcome,
        predictions,
        mos,
    })
}

/// Score of one PLY file under a fine-tuned checkpoint.
pub fn predict_ply(checkpoint: &Path, ply: &Path) -> Result<f64> {
    let model = FinetuneModel::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    model.predict_cloud(&load_ply(ply)?)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numeric(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

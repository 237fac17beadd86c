//! Acceptance criteria. Each prints one PASS/FAIL line; any failure makes
//! the binary exit non-zero.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use pcqa_core::anchor::{masking_ratio, mix, sample_mask, PatchMask};
use pcqa_core::config::{ExperimentConfig, SynthConfig};
use pcqa_core::encoders::EncoderConfig;
use pcqa_core::eval::{average_ranks, kfold_split, logistic4_fit, plcc, rmse, srocc, Logistic4};
use pcqa_core::experiment::{
    cross_dataset, pretrain_data, prepare_samples, run_finetune, run_pretrain, synth_items, synth_references,
    build_model, DatasetItem, JsonLog,
};
use pcqa_core::finetune::{FinetuneModel, FinetuneSample, FusionConfig, FusionMode, ModelConfig};
use pcqa_core::pointcloud::{shapes, DistortionKind};
use pcqa_core::pretrain::{
    batch_objective, content_loss, distortion_loss, encode_keys, enqueue_keys, momentum_update, sample_batch,
    NegativeQueue, PretrainConfig, PretrainData, PretrainState,
};
use pcqa_core::render::{RenderCache, RenderConfig};
use pcqa_core::tensor::ParamSet;
use pcqa_core::{Feature, InitMode, QualityEncoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Feature {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Feature::unit(v).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `r·ℓ(p1) + (1−r)·ℓ(p2)` with `ℓ(p) = −ln(e^{a·p/τ} / Σ_n e^{a·n/τ})`, summed directly.
fn naive_contrast(a: &Feature, p1: &Feature, p2: &Feature, negs: &[&Feature], r: f64, tau: f64) -> f64 {
    let denom: f64 = negs.iter().map(|n| (dot(&a.values, &n.values) / tau).exp()).sum();
    let term = |p: &Feature| -((dot(&a.values, &p.values) / tau).exp() / denom).ln();
    r * term(p1) + (1.0 - r) * term(p2)
}

fn loss_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tau = 0.2;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let a = random_unit(&mut rng, 8);
        let p1 = random_unit(&mut rng, 8);
        let p2 = random_unit(&mut rng, 8);
        let r = rng.random_range(0.25..=0.75);
        let k = rng.random_range(2..=10);
        let negs: Vec<Feature> = (0..k).map(|_| random_unit(&mut rng, 8)).collect();
        let refs: Vec<&Feature> = negs.iter().collect();
        let ld = distortion_loss(&a, &p1, &p2, &refs, r, tau).unwrap().value;
        worst = worst.max((ld - naive_contrast(&a, &p1, &p2, &refs, r, tau)).abs());

        let anchor_content = 0;
        let mut queue = NegativeQueue::new(32).unwrap();
        let mut eligible = Vec::new();
        for f in &negs {
            queue.enqueue(f.clone(), rng.random_range(1..5)).unwrap();
            eligible.push(f);
        }
        for _ in 0..rng.random_range(1..4) {
            queue.enqueue(random_unit(&mut rng, 8), anchor_content).unwrap();
        }
        let lc = content_loss(&a, &p1, &p2, &queue, anchor_content, r, tau).unwrap().value;
        worst = worst.max((lc - naive_contrast(&a, &p1, &p2, &eligible, r, tau)).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-9 && elapsed < Duration::from_secs(5),
        format!("loss oracle equivalence: max |Δ| {worst:.2e} (tol 1e-9) over 200 instances in {elapsed:.2?} (cap 5s)"),
    )
}

/// Worst `|fd − an| / max(|fd|, |an|, 1e-6)` over every coordinate of `params`.
fn fd_check(params: &ParamSet, grads: &ParamSet, loss: impl Fn(&ParamSet) -> f64) -> (f64, usize) {
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for t in 0..params.len() {
        for i in 0..params.get(t).len() {
            let shifted = |delta: f64| {
                let mut p = params.clone();
                p.get_mut(t).data[i] += delta;
                loss(&p)
            };
            let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let an = grads.get(t).data[i];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
            n += 1;
        }
    }
    (worst, n)
}

fn tiny_encoder(size: usize) -> EncoderConfig {
    EncoderConfig {
        input_height: size,
        input_width: size,
        channels: 3,
        widths: vec![3, 4],
        embedding_dim: 8,
        seed: 4,
    }
}

fn pretrain_gradient() -> (f64, usize) {
    let refs = synth_references(2, 400, 9);
    let synth = SynthConfig {
        kinds: vec![DistortionKind::ColorNoise, DistortionKind::Downsample, DistortionKind::Quantize],
        levels: 1,
        ..SynthConfig::default()
    };
    let clouds: Vec<_> = synth_items(&refs, &synth, 9).unwrap().into_iter().map(|(e, c)| (e.content_id, c)).collect();
    let render = RenderConfig::default().with_size(32, 32);
    let data = PretrainData::render_clouds(&clouds, &render, 1, 3, &mut RenderCache::in_memory()).unwrap();
    let cfg = PretrainConfig {
        batch_size: 2,
        queue_capacity: 16,
        ..PretrainConfig::default()
    };
    let mut state = PretrainState::new(&tiny_encoder(32), &cfg).unwrap();
    let batch = sample_batch(&data, &cfg, 5).unwrap();
    let keys = encode_keys(&state, &data, &batch).unwrap();
    enqueue_keys(&mut state, &data, &keys).unwrap();
    let (_, grads) = batch_objective(&state, &cfg, &batch, &keys).unwrap();
    let params = state.query.params.clone();
    fd_check(&params, &grads, |p| {
        let mut s = state.clone();
        s.query.params = p.clone();
        batch_objective(&s, &cfg, &batch, &keys).unwrap().0.loss
    })
}

fn finetune_gradient() -> (f64, usize) {
    let config = ModelConfig {
        render: RenderConfig::default().with_size(16, 16),
        encoder: tiny_encoder(16),
        fusion: FusionConfig {
            mode: FusionMode::Attention,
            num_heads: 2,
            scale_dim: None,
        },
        head_hidden: 6,
        semantic_seed: 11,
    };
    let model = FinetuneModel::new(config, 5).unwrap();
    let data: Vec<FinetuneSample> = (0..2)
        .map(|i| {
            let cloud = shapes::reference_content(i, 400, i as u64);
            model.prepare_sample(&cloud, i as u32, 1, 1, 1.5 + 2.0 * i as f64).unwrap()
        })
        .collect();
    let batch: Vec<&FinetuneSample> = data.iter().collect();
    let out = model.batch_loss(&batch, 0.5).unwrap();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for group in 0..4 {
        let params = model.clone().trainable_mut()[group].clone();
        let (w, k) = fd_check(&params, out.grads.groups()[group], |p| {
            let mut m = model.clone();
            *m.trainable_mut()[group] = p.clone();
            m.batch_loss(&batch, 0.5).unwrap().loss
        });
        worst = worst.max(w);
        n += k;
    }
    (worst, n)
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let (pre, n_pre) = pretrain_gradient();
    let (fine, n_fine) = finetune_gradient();
    let elapsed = start.elapsed();
    verdict(
        pre < 1e-3 && fine < 1e-3 && elapsed < Duration::from_secs(120),
        format!(
            "gradient verification: max rel err pre-training {pre:.2e} ({n_pre} params), \
             fine-tuning {fine:.2e} ({n_fine} params) (tol 1e-3) in {elapsed:.2?} (cap 2min)"
        ),
    )
}

fn anchor_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = |rng: &mut ChaCha8Rng, distortion_id: u32| {
        let data = (0..512 * 512 * 3).map(|_| rng.random::<f64>()).collect();
        let mut img = pcqa_core::ProjectedImage::from_pixels(512, 512, data).unwrap();
        img.source.distortion_id = distortion_id;
        img
    };
    let (x1, x2) = (image(&mut rng, 1), image(&mut rng, 2));
    let mut ratios_ok = true;
    let mut symmetric = true;
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for i in 0..1000 {
        let m = sample_mask(512, 512, 0.25, 0.75, i).unwrap();
        let r = masking_ratio(&m);
        lo = lo.min(r);
        hi = hi.max(r);
        ratios_ok &= (0.25..=0.75).contains(&r);
        if i < 20 {
            let a = mix(&x1, &x2, &m).unwrap();
            let b = mix(&x2, &x1, &m).unwrap();
            symmetric &= a.pixels.iter().zip(&b.pixels).zip(x1.pixels.iter().zip(&x2.pixels)).all(|((p, q), (u, v))| p + q == u + v);
        }
    }
    let ones = PatchMask::filled(512, 512, true).unwrap();
    let zeros = PatchMask::filled(512, 512, false).unwrap();
    let parents = mix(&x1, &x2, &ones).unwrap().pixels == x1.pixels && mix(&x1, &x2, &zeros).unwrap().pixels == x2.pixels;
    verdict(
        ratios_ok && symmetric && parents,
        format!(
            "anchor invariants: 1000 masks ratio in [{lo:.3}, {hi:.3}] within [0.25, 0.75]; \
             all-ones/all-zeros parents exact: {parents}; complement symmetry exact: {symmetric}"
        ),
    )
}

fn momentum_and_queue() -> Verdict {
    let m = 0.9;
    let query = QualityEncoder::new(tiny_encoder(16)).unwrap();
    let mut key = QualityEncoder::new(EncoderConfig { seed: 77, ..tiny_encoder(16) }).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let before = key.params.clone();
        momentum_update(&mut key.params, &query.params, m).unwrap();
        for t in 0..query.params.len() {
            for i in 0..query.params.get(t).len() {
                let q = query.params.get(t).data[i];
                let d0 = (before.get(t).data[i] - q).abs();
                let d1 = (key.params.get(t).data[i] - q).abs();
                worst = worst.max((d1 - m * d0).abs());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut queue = NegativeQueue::new(8).unwrap();
    let pushed: Vec<(Feature, u32)> = (0..29).map(|i| (random_unit(&mut rng, 4), i)).collect();
    for (f, c) in &pushed {
        queue.enqueue(f.clone(), *c).unwrap();
    }
    let held: Vec<(Feature, u32)> = queue.iter().map(|(f, c)| (f.clone(), c)).collect();
    let fifo = held.as_slice() == &pushed[pushed.len() - 8..];
    verdict(
        worst < 1e-12 && fifo,
        format!(
            "momentum/queue semantics: 20 steps at m={m}, max contraction error {worst:.2e} (tol 1e-12); \
             queue holds last 8 of 29 in FIFO order: {fifo}"
        ),
    )
}

fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let ties = v.iter().filter(|y| *y == x).count() as f64;
            below + (ties + 1.0) / 2.0
        })
        .collect()
}

fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn metrics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut tied = 0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..20).map(|_| (rng.random_range(0.0..5.0f64) * 2.0).round() / 2.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-1.0..1.0f64)).map(|v| (v * 4.0).round() / 4.0).collect();
        if brute_ranks(&x).iter().any(|r| r.fract() != 0.0) {
            tied += 1;
        }
        let ranks_ok = average_ranks(&x).iter().zip(brute_ranks(&x)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let s = srocc(&x, &y).unwrap() - textbook_pearson(&brute_ranks(&x), &brute_ranks(&y));
        let p = plcc(&x, &y).unwrap() - textbook_pearson(&x, &y);
        let r_oracle = (x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 20.0).sqrt();
        let r = rmse(&x, &y).unwrap() - r_oracle;
        worst = worst.max(ranks_ok).max(s.abs()).max(p.abs()).max(r.abs());
    }
    let truth = Logistic4 { beta: [4.5, 1.2, 0.3, 0.15] };
    let pred: Vec<f64> = (0..60).map(|i| -0.5 + i as f64 / 40.0).collect();
    let mos: Vec<f64> = pred.iter().map(|&s| truth.eval(s)).collect();
    let fit = logistic4_fit(&pred, &mos).unwrap();
    let aligned_rmse = rmse(&fit.aligned, &mos).unwrap();
    verdict(
        worst < 1e-12 && aligned_rmse < 1e-6 && tied > 50,
        format!(
            "metric correctness: max |Δ| vs oracles {worst:.2e} (tol 1e-12) on 100 vectors ({tied} with ties); \
             logistic recovery RMSE {aligned_rmse:.2e} (tol 1e-6)"
        ),
    )
}

fn protocol() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for (n, ratio) in [(9u32, (7, 2)), (20, (4, 1))] {
        let contents: Vec<u32> = (0..n).collect();
        let folds = kfold_split(&contents, 5, ratio, 13).unwrap();
        let mut tested: Vec<u32> = folds.iter().flat_map(|f| f.test.clone()).collect();
        tested.sort();
        let partition = tested == contents && folds.len() == 5;
        let disjoint = folds.iter().all(|f| {
            let mut all: Vec<u32> = f.train.iter().chain(&f.test).copied().collect();
            all.sort();
            f.test.iter().all(|c| !f.train.contains(c)) && all == contents
        });
        ok &= partition && disjoint;
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        notes.push(format!("{n} contents {}:{} test sizes {sizes:?}", ratio.0, ratio.1));
    }
    verdict(ok, format!("protocol correctness: content-disjoint folds partition the contents ({})", notes.join("; ")))
}

fn smoke_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    ExperimentConfig::load(Some(&path), &[]).unwrap()
}

/// The synthetic smoke set: 8 contents × 4 distortions × 5 levels; contents
/// 0–5 train, 6–7 are held out.
fn smoke_data(cfg: &ExperimentConfig) -> (Vec<DatasetItem>, Vec<DatasetItem>) {
    assert_eq!((cfg.synth.kinds.len(), cfg.synth.levels), (4, 5));
    let refs = synth_references(8, cfg.synth.points, cfg.seed);
    let items = synth_items(&refs, &cfg.synth, cfg.seed).unwrap();
    items.into_iter().partition(|(e, _)| e.content_id < 6)
}

fn pseudo_mos_monotone(items: &[DatasetItem]) -> bool {
    items.iter().all(|(a, _)| {
        items.iter().all(|(b, _)| {
            a.content_id != b.content_id
                || a.distortion_id != b.distortion_id
                || a.level >= b.level
                || a.mos.unwrap() > b.mos.unwrap()
        })
    })
}

struct SmokeRun {
    srocc: f64,
    elapsed: Duration,
}

fn smoke_run(seed: u64, init: InitMode, data: &(Vec<DatasetItem>, Vec<DatasetItem>)) -> SmokeRun {
    let start = Instant::now();
    let mut cfg = smoke_config();
    cfg.seed = seed;
    cfg.init = init;
    let run = cross_dataset(&cfg, &data.0, &data.1, &mut JsonLog::disabled()).unwrap();
    let srocc = run.selected_eval.and_then(|o| o.scored().map(|r| r.srocc)).unwrap_or(f64::NAN);
    SmokeRun { srocc, elapsed: start.elapsed() }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn smoke_and_direction() -> (Verdict, Verdict) {
    let start = Instant::now();
    let cfg = smoke_config();
    let data = smoke_data(&cfg);
    let all: Vec<DatasetItem> = data.0.iter().chain(&data.1).cloned().collect();
    let monotone = pseudo_mos_monotone(&all) && all.len() == 160;
    let synth_time = start.elapsed();
    let mut pretrained = Vec::new();
    let mut random = Vec::new();
    let mut smoke = None;
    for seed in 0..3 {
        let p = smoke_run(seed, InitMode::Pretrained, &data);
        let r = smoke_run(seed, InitMode::Random, &data);
        println!("  seed {seed}: held-out SROCC pretrained {:.4} ({:.1?}), random {:.4} ({:.1?})", p.srocc, p.elapsed, r.srocc, r.elapsed);
        if seed == cfg.seed {
            smoke = Some((p.srocc, synth_time + p.elapsed));
        }
        pretrained.push(p.srocc);
        random.push(r.srocc);
    }
    let (srocc7, time7) = smoke.unwrap();
    let v7 = verdict(
        monotone && srocc7 > 0.5 && time7 < Duration::from_secs(20 * 60),
        format!(
            "end-to-end synthetic smoke: 160 clouds, pseudo-MOS monotone: {monotone}; pre-train {} + fine-tune {} epochs; \
             held-out SROCC {srocc7:.4} (> 0.5) in {time7:.1?} (cap 20min)",
            cfg.pretrain.epochs, cfg.finetune.epochs
        ),
    );
    let (mp, mr) = (median(pretrained), median(random));
    let v8 = verdict(
        mp >= mr,
        format!("pre-training helps: median held-out SROCC over 3 seeds pretrained {mp:.4} >= random {mr:.4}"),
    );
    (v7, v8)
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_toml_str(
        r#"
        [render]
        height = 32
        width = 32
        [encoder]
        widths = [4, 8]
        embedding_dim = 16
        [pretrain]
        queue_capacity = 32
        rotations_per_cloud = 2
        batch_size = 8
        epochs = 3
        [finetune]
        batch_size = 8
        epochs = 3
        head_hidden = 8
        [fusion]
        num_heads = 2
        [synth]
        kinds = ["color_noise", "downsample", "quantize"]
        levels = 2
        points = 600
        "#,
        &[],
    )
    .unwrap();
    cfg.seed = 21;
    let refs = synth_references(3, cfg.synth.points, cfg.seed);
    let items = synth_items(&refs, &cfg.synth, cfg.seed).unwrap();
    let run = |tag: &str| {
        let pre_log = dir.path().join(format!("pretrain_{tag}.jsonl"));
        let fine_log = dir.path().join(format!("finetune_{tag}.jsonl"));
        let mut log = JsonLog::create(&pre_log).unwrap();
        log.start("pretrain", &cfg).unwrap();
        let data = pretrain_data(&cfg, &items, &mut RenderCache::in_memory()).unwrap();
        let (state, _) = run_pretrain(&cfg, &data, &mut log).unwrap();
        let mut log = JsonLog::create(&fine_log).unwrap();
        log.start("finetune", &cfg).unwrap();
        let model = build_model(&cfg, Some(&state.query.params)).unwrap();
        let samples = prepare_samples(&model, &items).unwrap();
        run_finetune(&cfg, model, &samples, None, &mut log).unwrap();
        (std::fs::read(pre_log).unwrap(), std::fs::read(fine_log).unwrap())
    };
    let (a, b) = (run("a"), run("b"));
    let lines = |bytes: &[u8]| bytes.iter().filter(|&&c| c == b'\n').count();
    verdict(
        a == b && lines(&a.0) == 4 && lines(&a.1) == 4,
        format!(
            "determinism: repeated pretrain/finetune loss logs bit-identical: {} ({} + {} bytes)",
            a == b,
            a.0.len(),
            a.1.len()
        ),
    )
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())
    })
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let start = Instant::now();
    let mut results: Vec<(u32, Verdict)> = Vec::new();
    let singles: [(u32, fn() -> Verdict); 7] = [
        (1, loss_oracle),
        (2, gradients),
        (3, anchor_invariants),
        (4, momentum_and_queue),
        (5, metrics),
        (6, protocol),
        (9, determinism),
    ];
    let mut report = |id: u32, v: Verdict| {
        println!("{} [{id}] {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, v));
    };
    for (id, f) in singles {
        report(id, guarded(f).unwrap_or_else(|e| verdict(false, format!("panicked: {e}"))));
    }
    match guarded(smoke_and_direction) {
        Ok((v7, v8)) => {
            report(7, v7);
            report(8, v8);
        }
        Err(e) => {
            report(7, verdict(false, format!("panicked: {e}")));
            report(8, verdict(false, format!("panicked: {e}")));
        }
    }
    let failed: Vec<u32> = results.iter().filter(|(_, v)| !v.pass).map(|(id, _)| *id).collect();
    println!("acceptance: {}/{} passed in {:.1?}", results.len() - failed.len(), results.len(), start.elapsed());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}

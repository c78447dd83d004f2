//! Acceptance criteria for the whole system. One test runs every criterion
//! in order and prints a PASS/FAIL line for each; it fails if any failed.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::fs;
use std::io::Write as _;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use mrt_cli::{
    cmd_export_attention, cmd_gen_data, cmd_predict, cmd_train, ExportArgs, GenDataArgs,
    PredictArgs, RunConfig,
};
use mrt_core::attention::{QueryToken, TokenSource};
use mrt_core::data::{generate_synthetic, load_scene, Manifest, Scene, SyntheticParams};
use mrt_core::eval::{
    evaluate_scene, movement_distance, mpjpe, pose_error, root_error, MetricReport,
};
use mrt_core::model::{
    global_encode, local_encode, memory_labels, predict_scene, DiscriminatorParams, ModelConfig,
    MrtParams,
};
use mrt_core::numerics::grad_check;
use mrt_core::rng::stream_rng;
use mrt_core::training::{
    discriminator_loss_graph, loss_disc, make_samples, predict_autoregressive,
    predictor_loss_graph, TrainConfig, TrainSample, Trainer,
};
use mrt_core::transforms::{dct_forward, dct_inverse};
use mrt_core::{Graph, Tensor};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// d_model 64 at the default depth, heads and windows.
fn desk_config() -> ModelConfig {
    ModelConfig {
        d_model: 64,
        d_ff: 128,
        ..ModelConfig::default()
    }
}

fn synthetic(persons: usize, steps: usize, joints: usize, seed: u64) -> Scene {
    generate_synthetic(persons, steps, joints, seed, &SyntheticParams::default()).unwrap()
}

fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new([rows, cols], data).unwrap()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.max_abs_diff(b).unwrap()
}

/// Three-person corpus plus a short CLI training run shared by several
/// criteria.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    corpus: PathBuf,
    checkpoint: PathBuf,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let corpus = root.join("corpus3");
        cmd_gen_data(&GenDataArgs::new(3, 60, 4, 21, &corpus)).unwrap();
        let cfg = RunConfig {
            corpus: corpus.clone(),
            out_dir: root.join("run3"),
            model: desk_config(),
            train: TrainConfig {
                batch_size: 4,
                max_steps: 20,
                ..TrainConfig::default()
            },
            ..RunConfig::default()
        };
        let checkpoint = cmd_train(&cfg, None).unwrap().checkpoint;
        Fixture {
            _dir: dir,
            root,
            corpus,
            checkpoint,
        }
    })
}

fn test_scene(f: &Fixture) -> PathBuf {
    let m = Manifest::load(&f.corpus).unwrap();
    f.corpus.join(&m.test[0])
}

// ---------------------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::micro();
    let scene = synthetic(2, 12, 3, 4);
    let samples = ok(make_samples(&scene, 0, &cfg))?;
    let batch: Vec<&TrainSample> = samples.iter().collect();
    let tc = TrainConfig {
        lambda_adv: 0.5,
        ..TrainConfig::default()
    };
    let mut p = ok(MrtParams::seeded(&cfg, 1))?;
    let layout = p.clone();
    let d: &'static DiscriminatorParams =
        Box::leak(Box::new(ok(DiscriminatorParams::seeded(&cfg, 1))?));
    let lp = ok(grad_check(
        &mut p.store,
        |g, store| {
            g.freeze(&d.store);
            Ok(predictor_loss_graph(g, &layout, store, Some((d, &d.store)), &batch, &tc)?.l_p)
        },
        1e-5,
        1e-4,
    ))?;

    let mut dp = ok(DiscriminatorParams::seeded(&cfg, 2))?;
    let d_layout = dp.clone();
    let fakes: Vec<Tensor> = {
        let chunks = ok(predict_scene(&ok(scene.window(0, 4))?, &p))?;
        chunks.into_iter().map(|c| c.poses).collect()
    };
    let reals: Vec<Tensor> = (0..2)
        .map(|n| scene.person(n).window(4, 4).unwrap().poses().clone())
        .collect();
    let ld = ok(grad_check(
        &mut dp.store,
        |g, store| discriminator_loss_graph(g, &d_layout, store, &fakes, &reals),
        1e-5,
        1e-4,
    ))?;
    let elapsed = start.elapsed();
    ensure!(lp.passed(), "L_P worst {:?}", lp.worst());
    ensure!(ld.passed(), "L_D worst {:?}", ld.worst());
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "max rel error L_P {:.2e}, L_D {:.2e} in {:.1}s",
        lp.max_rel_error,
        ld.max_rel_error,
        elapsed.as_secs_f64()
    ))
}

fn dct_fidelity() -> Outcome {
    let mut rng = stream_rng(2, "acceptance");
    let (mut round, mut parseval, mut leak) = (0.0f64, 0.0f64, 0.0f64);
    for n in 1..=64 {
        let x = random_tensor(n, 6, &mut rng);
        let c = ok(dct_forward(&x))?;
        round = round.max(max_diff(&ok(dct_inverse(&c))?, &x));
        for col in 0..6 {
            let ex: f64 = (0..n).map(|t| x.get(t, col).powi(2)).sum();
            let ec: f64 = (0..n).map(|t| c.get(t, col).powi(2)).sum();
            parseval = parseval.max((ex - ec).abs());
        }
        let level = rng.gen_range(-3.0..3.0);
        let coeffs = ok(dct_forward(&Tensor::filled([n, 4], level)))?;
        for t in 1..n {
            leak = leak.max(coeffs.row(t).iter().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    ensure!(round < 1e-9, "round trip error {round:e}");
    ensure!(parseval < 1e-9, "energy error {parseval:e}");
    ensure!(leak < 1e-10, "constant input leaks {leak:e} into AC terms");
    Ok(format!(
        "round trip {round:.1e}, energy {parseval:.1e}, AC leak {leak:.1e} over lengths 1..=64"
    ))
}

fn loop_mpjpe(p: &Tensor, q: &Tensor, h: usize) -> f64 {
    let j = p.cols() / 3;
    let mut s = 0.0;
    for t in 0..h {
        for k in 0..j {
            let mut d2 = 0.0;
            for a in 0..3 {
                d2 += (p.get(t, 3 * k + a) - q.get(t, 3 * k + a)).powi(2);
            }
            s += d2.sqrt();
        }
    }
    s / (h * j) as f64
}

fn loop_root(p: &Tensor, q: &Tensor, h: usize, r: usize) -> f64 {
    let mut s = 0.0;
    for t in 0..h {
        let mut d2 = 0.0;
        for a in 0..3 {
            d2 += (p.get(t, 3 * r + a) - q.get(t, 3 * r + a)).powi(2);
        }
        s += d2.sqrt();
    }
    s / h as f64
}

fn loop_pose(p: &Tensor, q: &Tensor, h: usize, r: usize) -> f64 {
    let j = p.cols() / 3;
    let mut s = 0.0;
    for t in 0..h {
        for k in 0..j {
            let mut d2 = 0.0;
            for a in 0..3 {
                let pa = p.get(t, 3 * k + a) - p.get(t, 3 * r + a);
                let qa = q.get(t, 3 * k + a) - q.get(t, 3 * r + a);
                d2 += (pa - qa).powi(2);
            }
            s += d2.sqrt();
        }
    }
    s / (h * j) as f64
}

fn loop_movement(x: &Tensor) -> f64 {
    let (j, last) = (x.cols() / 3, x.rows() - 1);
    let mut s = 0.0;
    for k in 0..j {
        let mut d2 = 0.0;
        for a in 0..3 {
            d2 += (x.get(last, 3 * k + a) - x.get(0, 3 * k + a)).powi(2);
        }
        s += d2.sqrt();
    }
    s / j as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = stream_rng(3, "acceptance");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (t, j) = (rng.gen_range(2..12), rng.gen_range(1..6));
        let (h, r) = (rng.gen_range(1..=t), rng.gen_range(0..j));
        let p = random_tensor(t, 3 * j, &mut rng);
        let q = random_tensor(t, 3 * j, &mut rng);
        let pairs = [
            (ok(mpjpe(&p, &q, h))?, loop_mpjpe(&p, &q, h)),
            (ok(root_error(&p, &q, h, r))?, loop_root(&p, &q, h, r)),
            (ok(pose_error(&p, &q, h, r))?, loop_pose(&p, &q, h, r)),
            (ok(movement_distance(&p))?, loop_movement(&p)),
        ];
        for (a, b) in pairs {
            worst = worst.max((a - b).abs());
        }
    }
    ensure!(
        worst < 1e-12,
        "largest deviation from loop oracle {worst:e}"
    );

    // Coordinates on a 1/8 grid keep the shifted copies exact.
    let mut exact = Vec::new();
    for v in [[1.0f64, 0.0, 0.0], [3.0, 4.0, 0.0]] {
        let norm: f64 = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let (t, j) = (5, 4);
        let data: Vec<f64> = (0..t * 3 * j)
            .map(|_| rng.gen_range(-16i32..16) as f64 / 8.0)
            .collect();
        let truth = ok(Tensor::new([t, 3 * j], data))?;
        let mut moved = truth.clone();
        for (i, x) in moved.data_mut().iter_mut().enumerate() {
            *x += v[i % 3];
        }
        let got = [
            ok(mpjpe(&moved, &truth, t))?,
            ok(root_error(&moved, &truth, t, 0))?,
        ];
        ensure!(
            got.iter().all(|&g| g == norm),
            "translation by {v:?} gave {got:?}"
        );
        ensure!(
            ok(pose_error(&moved, &truth, t, 0))? == 0.0,
            "pose error of a rigid shift"
        );
        let mut walk = truth.clone();
        for c in 0..3 * j {
            walk.set(t - 1, c, truth.get(0, c) + v[c % 3]);
        }
        let m = ok(movement_distance(&walk))?;
        ensure!(m == norm, "movement {m} for displacement {v:?}");
        exact.push(norm);
    }
    Ok(format!(
        "100 random cases within {worst:.1e}; rigid shifts give exactly {exact:?} m"
    ))
}

fn permutation_invariance() -> Outcome {
    let p = ok(MrtParams::seeded(&desk_config(), 4))?;
    let mut rng = stream_rng(4, "acceptance");
    let mut worst = 0.0f64;
    for s in 0..3 {
        let scene = synthetic(4, 15, 15, 100 + s);
        let base = ok(predict_scene(&scene, &p))?;
        for q in 0..4 {
            let mut others: Vec<usize> = (0..4).filter(|&i| i != q).collect();
            others.rotate_left(1 + rng.gen_range(0..2));
            let mut order = others;
            order.insert(q, q);
            let chunk = &ok(predict_scene(&ok(scene.permuted(&order))?, &p))?[q];
            worst = worst.max(max_diff(&chunk.poses, &base[q].poses));
            worst = worst.max(max_diff(&chunk.offsets, &base[q].offsets));
        }
        let full = [2, 0, 3, 1];
        let permuted = ok(predict_scene(&ok(scene.permuted(&full))?, &p))?;
        for (i, &src) in full.iter().enumerate() {
            let d = max_diff(&permuted[i].poses, &base[src].poses);
            ensure!(
                d < 1e-9,
                "full permutation: chunk {i} differs from {src} by {d:e}"
            );
        }
    }
    ensure!(
        worst < 1e-9,
        "permuting the other persons moved the query by {worst:e}"
    );
    Ok(format!(
        "max change {worst:.1e} over 3 scenes × 4 query persons"
    ))
}

fn local_translation_invariance() -> Outcome {
    let p = ok(MrtParams::seeded(&desk_config(), 5))?;
    let scene = synthetic(3, 15, 15, 55);
    let delta = [2.5, -1.25, 0.4];
    let moved = ok(scene.translated_person(1, delta))?;
    let local_change = max_diff(
        &ok(local_encode(scene.person(1), &p))?,
        &ok(local_encode(moved.person(1), &p))?,
    );
    ensure!(
        local_change < 1e-9,
        "local features moved by {local_change:e}"
    );
    let a = ok(global_encode(&scene, &p))?.output;
    let b = ok(global_encode(&moved, &p))?.output;
    let k = 15;
    let mut global_change = 0.0f64;
    for r in k..2 * k {
        for c in 0..a.cols() {
            global_change = global_change.max((a.get(r, c) - b.get(r, c)).abs());
        }
    }
    ensure!(
        global_change > 1e-6,
        "global tokens of the moved person changed by only {global_change:e}"
    );
    Ok(format!(
        "local change {local_change:.1e}, global change {global_change:.3}"
    ))
}

fn single_query_bottleneck() -> Outcome {
    let mut g = Graph::new();
    let one = g.input(Tensor::zeros([1, 8]));
    let many = g.input(Tensor::zeros([15, 8]));
    ensure!(
        QueryToken::new(&g, one).is_ok(),
        "a single token was rejected"
    );
    let err = match QueryToken::new(&g, many) {
        Ok(_) => return Err("a 15-token query was accepted".into()),
        Err(e) => e.to_string(),
    };
    Ok(format!("15-token query rejected: {err}"))
}

/// Corpus MPJPE@1s for predictions from each scene's first `history` steps.
fn corpus_mpjpe_1s(scenes: &[Scene], p: &MrtParams) -> Result<f64, String> {
    let (k, k_out) = (p.config.history, p.config.k_out);
    let mut reports = Vec::new();
    for s in scenes {
        let chunks = ok(predict_scene(&ok(s.window(0, k))?, p))?;
        let pred: Vec<Tensor> = chunks.into_iter().map(|c| c.poses).collect();
        let truth: Vec<Tensor> = ok(s.window(k, k_out))?
            .persons()
            .iter()
            .map(|q| q.poses().clone())
            .collect();
        reports.push(ok(evaluate_scene(
            &s.name,
            &pred,
            &truth,
            s.frame_rate(),
            0,
        ))?);
    }
    let report = MetricReport::from_scenes(reports);
    let one = report
        .corpus
        .iter()
        .find(|h| h.seconds == 1)
        .ok_or("no 1 s horizon")?;
    Ok(one.mpjpe)
}

fn overfit_trainability() -> Outcome {
    let start = Instant::now();
    let dir = ok(tempfile::tempdir())?;
    let mut gen = GenDataArgs::new(3, 30, 8, 7, dir.path());
    gen.test_scenes = Some(0);
    let manifest = ok(cmd_gen_data(&gen))?;
    let scenes = ok(manifest.load_split(dir.path(), false))?;
    ensure!(scenes.len() == 8, "corpus has {} scenes", scenes.len());
    let cfg = desk_config();
    let samples: Vec<TrainSample> = scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| make_samples(s, i, &cfg).unwrap())
        .collect();
    let mut trainer = ok(Trainer::new(
        &cfg,
        TrainConfig {
            batch_size: 4,
            max_steps: 2000,
            ..TrainConfig::default()
        },
    ))?;
    let initial = corpus_mpjpe_1s(&scenes, &trainer.predictor)?;
    let mut current = initial;
    while trainer.step < 2000 && current > 0.2 * initial {
        for _ in 0..50 {
            let batch = ok(trainer.draw_batch(&samples))?;
            ok(trainer.train_step(&batch, &scenes))?;
        }
        current = corpus_mpjpe_1s(&scenes, &trainer.predictor)?;
    }
    let elapsed = start.elapsed();
    let reduction = 1.0 - current / initial;
    ensure!(
        reduction >= 0.8,
        "MPJPE@1s {initial:.4} → {current:.4} ({:.1}% reduction) after {} steps",
        100.0 * reduction,
        trainer.step
    );
    ensure!(elapsed < Duration::from_secs(900), "took {elapsed:?}");
    Ok(format!(
        "MPJPE@1s {initial:.4} m → {current:.4} m ({:.1}% reduction) after {} steps in {:.0}s",
        100.0 * reduction,
        trainer.step,
        elapsed.as_secs_f64()
    ))
}

fn autoregressive_protocol() -> Outcome {
    let f = fixture();
    let scene_path = test_scene(f);
    let out = f.root.join("pred3.mrts");
    let summary = ok(cmd_predict(&PredictArgs {
        checkpoint: f.checkpoint.clone(),
        scene: scene_path.clone(),
        chunks: 3,
        out: out.clone(),
        records: None,
        history: None,
    }))?;
    let written = ok(load_scene(&out))?;
    ensure!(summary.observed == 15, "observed {}", summary.observed);
    ensure!(written.len() == 45, "wrote {} steps", written.len());
    ensure!(
        summary.history_lengths == [15, 30, 45],
        "histories {:?}",
        summary.history_lengths
    );

    // Memory size of each chunk's first decoder layer: k local + N·k global.
    let records: mrt_cli::RecordFile = ok(serde_json::from_str(&ok(fs::read_to_string(
        &summary.records,
    ))?))?;
    let keys: Vec<usize> = records.chunks.iter().map(|c| c[0][0].key_count()).collect();
    ensure!(
        keys == [15 + 45, 30 + 90, 45 + 135],
        "decoder memory sizes {keys:?}"
    );

    let p = ok(MrtParams::load(&f.checkpoint))?;
    let observed = ok(ok(load_scene(&scene_path))?.window(0, 15))?;
    let direct = ok(predict_scene(&observed, &p))?;
    let rollout = ok(predict_autoregressive(&observed, 1, &p))?;
    for (a, b) in rollout.chunks[0].iter().zip(&direct) {
        ensure!(
            a.poses.data() == b.poses.data() && a.offsets.data() == b.offsets.data(),
            "single-chunk rollout differs from predict_scene"
        );
    }
    Ok("45 steps from 15 observed; histories [15, 30, 45]; memory sizes [60, 120, 180]; one chunk is bit-identical".into())
}

fn adversarial_sanity() -> Outcome {
    let f = fixture();
    let scenes = ok(ok(Manifest::load(&f.corpus))?.load_split(&f.corpus, false))?;
    let cfg = desk_config();
    let mut trainer = ok(Trainer::new(&cfg, TrainConfig::default()))?;
    let frozen = trainer.predictor.clone();
    let mut fakes = Vec::new();
    let mut reals = Vec::new();
    for s in &scenes {
        for sample in ok(make_samples(s, 0, &cfg))? {
            let history = ok(Scene::from_tensors(
                sample.history.clone(),
                s.frame_rate(),
                "",
            ))?;
            fakes.extend(
                ok(predict_scene(&history, &frozen))?
                    .into_iter()
                    .map(|c| c.poses),
            );
            reals.extend(sample.target_poses.iter().cloned());
        }
    }
    let evaluate = |d: &DiscriminatorParams| -> Result<(f64, f64, f64), String> {
        let mut fake_scores = Vec::new();
        let mut real_scores = Vec::new();
        for (a, b) in fakes.iter().zip(&reals) {
            fake_scores.extend_from_slice(ok(mrt_core::model::discriminate(a, d))?.data());
            real_scores.extend_from_slice(ok(mrt_core::model::discriminate(b, d))?.data());
        }
        let n = fake_scores.len();
        let l_d = ok(loss_disc(
            &ok(Tensor::new([n], fake_scores.clone()))?,
            &ok(Tensor::new([n], real_scores.clone()))?,
        ))?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok((l_d, mean(&real_scores), mean(&fake_scores)))
    };
    let (l0, r0, f0) = evaluate(&trainer.discriminator)?;
    let mut rng = stream_rng(9, "acceptance");
    for _ in 0..500 {
        let idx: Vec<usize> = (0..8).map(|_| rng.gen_range(0..fakes.len())).collect();
        let batch_f: Vec<Tensor> = idx.iter().map(|&i| fakes[i].clone()).collect();
        ok(trainer.discriminator_step(&batch_f, &scenes))?;
    }
    ensure!(
        trainer
            .predictor
            .store
            .iter()
            .zip(frozen.store.iter())
            .all(|(a, b)| a.value == b.value),
        "predictor parameters changed during discriminator-only training"
    );
    let (l1, r1, f1) = evaluate(&trainer.discriminator)?;
    let gap = r1 - f1;
    ensure!(gap > 0.5, "score gap {gap:.3} (real {r1:.3}, fake {f1:.3})");
    ensure!(l1 < l0, "L_D {l0:.4} → {l1:.4}");
    Ok(format!(
        "score gap {:.3} → {gap:.3}; L_D {l0:.4} → {l1:.4} over {} windows",
        r0 - f0,
        fakes.len()
    ))
}

fn large_n_inference() -> Outcome {
    let f = fixture();
    let dir = f.root.join("corpus15");
    let m = ok(cmd_gen_data(&GenDataArgs::new(15, 20, 2, 33, &dir)))?;
    let mut checked = 0;
    for name in m.train.iter().chain(&m.test) {
        let out = f.root.join(format!("pred15_{name}"));
        ok(cmd_predict(&PredictArgs {
            checkpoint: f.checkpoint.clone(),
            scene: dir.join(name),
            chunks: 1,
            out: out.clone(),
            records: None,
            history: None,
        }))?;
        let p = ok(MrtParams::load(&f.checkpoint))?;
        let chunks = ok(predict_scene(
            &ok(ok(load_scene(dir.join(name)))?.window(0, 15))?,
            &p,
        ))?;
        ensure!(chunks.len() == 15, "{} chunks", chunks.len());
        ensure!(
            chunks
                .iter()
                .all(|c| c.poses.is_finite() && c.offsets.is_finite()),
            "non-finite output"
        );
        let written = ok(load_scene(&out))?;
        ensure!(
            written.num_persons() == 15 && written.len() == 15,
            "written scene shape"
        );
        checked += 1;
    }
    Ok(format!(
        "3-person checkpoint predicted {checked} scenes of 15 persons, all finite"
    ))
}

fn attention_export() -> Outcome {
    let f = fixture();
    let out = f.root.join("pred_attn.mrts");
    let summary = ok(cmd_predict(&PredictArgs {
        checkpoint: f.checkpoint.clone(),
        scene: test_scene(f),
        chunks: 1,
        out,
        records: None,
        history: None,
    }))?;
    let export_dir = f.root.join("attention");
    let tables = ok(cmd_export_attention(&ExportArgs {
        records: summary.records,
        layer: 1,
        chunk: 1,
        out: export_dir.clone(),
    }))?;
    ensure!(tables.len() == 3, "{} tables", tables.len());
    let mut worst = 0.0f64;
    for t in &tables {
        ensure!(
            t.matrix.shape() == [8, 60],
            "person {} table {:?}",
            t.person,
            t.matrix.shape()
        );
        ensure!(
            t.labels == memory_labels(t.person, 3, 15),
            "person {} labels",
            t.person
        );
        for source in [TokenSource::Local, TokenSource::Global] {
            let cols = t.segment(source);
            for r in 0..8 {
                let s: f64 = cols.iter().map(|&c| t.matrix.get(r, c)).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    ensure!(worst < 1e-6, "segment rows sum to 1 ± {worst:e}");
    let csv = ok(fs::read_to_string(
        export_dir.join("attention_layer1_chunk1.csv"),
    ))?;
    ensure!(
        csv.lines().count() == 1 + 3 * 8,
        "csv has {} lines",
        csv.lines().count()
    );
    Ok(format!(
        "3 tables of 8×60 with memory labels; segment sums within {worst:.1e}"
    ))
}

fn reproducibility() -> Outcome {
    let f = fixture();
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let cfg = RunConfig {
            seed: 17,
            corpus: f.corpus.clone(),
            out_dir: f.root.join(name),
            model: desk_config(),
            train: TrainConfig {
                batch_size: 4,
                max_steps: 10,
                lambda_adv: 0.0,
                train_discriminator: false,
                ..TrainConfig::default()
            },
        };
        let s = ok(cmd_train(&cfg, None))?;
        ok(fs::read(s.checkpoint))
    };
    let (a, b) = (run("repro_a")?, run("repro_b")?);
    ensure!(
        a == b,
        "checkpoints differ ({} vs {} bytes)",
        a.len(),
        b.len()
    );
    Ok(format!(
        "two runs wrote identical {}-byte checkpoints",
        a.len()
    ))
}

fn report(line: &str) {
    // Written straight to the process stdout so the lines survive test capture.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gradient correctness", gradient_correctness),
        ("DCT fidelity", dct_fidelity),
        ("metric oracles", metric_oracles),
        ("permutation invariance", permutation_invariance),
        ("local translation invariance", local_translation_invariance),
        ("single query bottleneck", single_query_bottleneck),
        ("overfit trainability", overfit_trainability),
        ("autoregressive protocol", autoregressive_protocol),
        ("adversarial loop sanity", adversarial_sanity),
        ("large-N inference", large_n_inference),
        ("attention export", attention_export),
        ("reproducibility", reproducibility),
    ];
    let only: Option<usize> = std::env::var("MRT_ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let outcome = match panic::catch_unwind(AssertUnwindSafe(run)) {
            Ok(r) => r,
            Err(e) => Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => report(&format!("PASS [{n}] {name}: {detail}")),
            Err(detail) => {
                report(&format!("FAIL [{n}] {name}: {detail}"));
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

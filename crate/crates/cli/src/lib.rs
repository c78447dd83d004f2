//! Commands behind the `mrt` binary: synthetic corpus generation, training,
//! autoregressive prediction, evaluation and attention export.

pub mod config;
pub mod error;

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mrt_core::attention::AttentionRecord;
use mrt_core::data::{
    generate_synthetic, load_scene, preprocess, save_scene, Manifest, Scene, SyntheticParams,
    DEFAULT_JOINTS, SCENE_FORMAT_VERSION,
};
use mrt_core::eval::{
    attention_csv, attention_similarity, attention_tables_from_records, evaluate_scene,
    movement_distance, similarity_csv, AttentionTable, MetricReport, MovementHistogram,
};
use mrt_core::model::MrtParams;
use mrt_core::rng::stream_rng;
use mrt_core::training::{make_samples, predict_autoregressive, StepMetrics, TrainSample, Trainer};
use mrt_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::RunConfig;
pub use error::CliError;

pub const SCENE_EXT: &str = "mrts";
pub const CHECKPOINT_FILE: &str = "checkpoint.mrtp";
pub const METRICS_FILE: &str = "metrics.csv";

// ---------------------------------------------------------------------------
// gen-data

#[derive(Clone, Debug)]
pub struct GenDataArgs {
    pub persons: usize,
    pub steps: usize,
    pub scenes: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub joints: usize,
    /// Scenes held out for testing; defaults to a quarter of the corpus.
    pub test_scenes: Option<usize>,
    /// Placement square in m²; defaults to 25 for up to 3 persons, else 100.
    pub area: Option<f64>,
}

impl GenDataArgs {
    pub fn new(
        persons: usize,
        steps: usize,
        scenes: usize,
        seed: u64,
        out: impl Into<PathBuf>,
    ) -> Self {
        GenDataArgs {
            persons,
            steps,
            scenes,
            seed,
            out: out.into(),
            joints: DEFAULT_JOINTS,
            test_scenes: None,
            area: None,
        }
    }
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<Manifest, CliError> {
    if args.scenes == 0 || args.persons == 0 || args.steps == 0 {
        return Err(CliError::Usage(
            "persons, steps and scenes must all be >= 1".into(),
        ));
    }
    let test = args.test_scenes.unwrap_or(args.scenes / 4);
    if test > args.scenes {
        return Err(CliError::Usage(format!(
            "{test} test scenes requested from a corpus of {}",
            args.scenes
        )));
    }
    let area = args
        .area
        .unwrap_or(if args.persons <= 3 { 25.0 } else { 100.0 });
    let params = SyntheticParams {
        area,
        ..SyntheticParams::default()
    };
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out.display())))?;
    let mut rng = stream_rng(args.seed, "data");
    let identity: Vec<usize> = (0..args.joints).collect();
    let mut names = Vec::with_capacity(args.scenes);
    for i in 0..args.scenes {
        let scene_seed: u64 = rng.gen();
        let mut scene =
            generate_synthetic(args.persons, args.steps, args.joints, scene_seed, &params)?;
        scene = preprocess(&scene, &identity, scene_seed, area)?;
        scene.name = format!("scene_{i:03}");
        let file = format!("{}.{SCENE_EXT}", scene.name);
        save_scene(args.out.join(&file), &scene)?;
        names.push(file);
    }
    let split = args.scenes - test;
    let manifest = Manifest {
        version: SCENE_FORMAT_VERSION,
        joints: args.joints,
        frame_rate: params.frame_rate,
        train: names[..split].to_vec(),
        test: names[split..].to_vec(),
    };
    manifest.save(&args.out)?;
    log::info!(
        "wrote {} scenes ({} train, {test} test) to {}",
        args.scenes,
        split,
        args.out.display()
    );
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// train

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub step: u64,
    pub last: Option<StepMetrics>,
}

fn load_corpus(cfg: &RunConfig) -> Result<Vec<Scene>, CliError> {
    let manifest = Manifest::load(&cfg.corpus)
        .map_err(|e| CliError::Data(format!("cannot read corpus {}: {e}", cfg.corpus.display())))?;
    if manifest.joints != cfg.model.joints {
        return Err(CliError::Usage(format!(
            "corpus has {} joints, model expects {}",
            manifest.joints, cfg.model.joints
        )));
    }
    let scenes = manifest.load_split(&cfg.corpus, false)?;
    if scenes.is_empty() {
        return Err(CliError::Data("corpus has no training scenes".into()));
    }
    Ok(scenes)
}

/// Trains until `train.max_steps`, appending one metrics row per step.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary, CliError> {
    let scenes = load_corpus(cfg)?;
    let samples: Vec<TrainSample> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| make_samples(s, i, &cfg.model))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    if samples.is_empty() {
        return Err(CliError::Data(format!(
            "no training samples: every scene is shorter than {} + {} steps",
            cfg.model.history, cfg.model.k_out
        )));
    }
    let mut trainer = match resume {
        Some(path) => {
            let mut t = Trainer::load(path)?;
            if t.model_config() != &cfg.model {
                return Err(CliError::Usage(format!(
                    "checkpoint {} was trained with a different model configuration",
                    path.display()
                )));
            }
            t.config = cfg.train.clone();
            t.opt_p.lr = cfg.train.lr_p;
            t.opt_d.lr = cfg.train.lr_d;
            t
        }
        None => Trainer::new(&cfg.model, cfg.train.clone())?,
    };
    cfg.dump()?;
    let metrics_path = cfg.out_dir.join(METRICS_FILE);
    let fresh = resume.is_none() || !metrics_path.exists();
    let mut metrics = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&metrics_path)?;
    if fresh {
        writeln!(metrics, "{}", StepMetrics::CSV_HEADER)?;
    }
    log::info!(
        "training on {} samples from {} scenes, steps {}..{}",
        samples.len(),
        scenes.len(),
        trainer.step,
        cfg.train.max_steps
    );
    let mut last = None;
    while trainer.step < cfg.train.max_steps {
        let batch = trainer.draw_batch(&samples)?;
        let m = trainer.train_step(&batch, &scenes)?;
        writeln!(metrics, "{}", m.csv_row())?;
        if m.step % 50 == 0 || m.step == cfg.train.max_steps {
            log::info!(
                "step {} l_p {:.5} l_rec {:.5} l_adv {:.4} l_d {:.4}",
                m.step,
                m.l_p,
                m.l_rec,
                m.l_adv,
                m.l_d
            );
        }
        let every = cfg.train.checkpoint_every;
        if every > 0 && m.step % every == 0 {
            trainer.save(cfg.out_dir.join(format!("checkpoint_{:06}.mrtp", m.step)))?;
        }
        last = Some(m);
    }
    metrics.flush()?;
    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    trainer.save(&checkpoint)?;
    Ok(TrainSummary {
        checkpoint,
        step: trainer.step,
        last,
    })
}

// ---------------------------------------------------------------------------
// predict

/// Decoder attention captured during prediction: chunk → person → layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordFile {
    pub history: usize,
    pub k_out: usize,
    pub chunks: Vec<Vec<Vec<AttentionRecord>>>,
}

#[derive(Clone, Debug)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub scene: PathBuf,
    pub chunks: usize,
    pub out: PathBuf,
    /// Defaults to the output path with an `attention.json` extension.
    pub records: Option<PathBuf>,
    /// Observed steps taken from the start of the scene; defaults to the
    /// model's training history length.
    pub history: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct PredictSummary {
    pub persons: usize,
    pub observed: usize,
    pub predicted: usize,
    /// History length fed to the encoders for each chunk.
    pub history_lengths: Vec<usize>,
    pub records: PathBuf,
}

pub fn records_path(out: &Path) -> PathBuf {
    out.with_extension("attention.json")
}

pub fn cmd_predict(args: &PredictArgs) -> Result<PredictSummary, CliError> {
    if args.chunks == 0 {
        return Err(CliError::Usage("--chunks must be >= 1".into()));
    }
    let params = MrtParams::load(&args.checkpoint)?;
    let scene = load_scene(&args.scene)?;
    let cfg = &params.config;
    if scene.joints() != cfg.joints {
        return Err(CliError::Usage(format!(
            "scene has {} joints but the checkpoint expects {}",
            scene.joints(),
            cfg.joints
        )));
    }
    let k = args.history.unwrap_or(cfg.history);
    if k < 2 || scene.len() < k {
        return Err(CliError::Data(format!(
            "need {k} observed steps but the scene has {}",
            scene.len()
        )));
    }
    let observed = scene.window(0, k)?;
    let rollout = predict_autoregressive(&observed, args.chunks, &params)?;
    let predicted = Scene::from_tensors(
        rollout.per_person.clone(),
        scene.frame_rate(),
        scene.name.clone(),
    )?;
    save_scene(&args.out, &predicted)?;
    let records = args
        .records
        .clone()
        .unwrap_or_else(|| records_path(&args.out));
    let file = RecordFile {
        history: k,
        k_out: cfg.k_out,
        chunks: rollout
            .chunks
            .iter()
            .map(|c| c.iter().map(|p| p.attention.clone()).collect())
            .collect(),
    };
    fs::write(&records, serde_json::to_string(&file)?)?;
    Ok(PredictSummary {
        persons: predicted.num_persons(),
        observed: k,
        predicted: predicted.len(),
        history_lengths: rollout.history_lengths,
        records,
    })
}

// ---------------------------------------------------------------------------
// eval

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub pred: PathBuf,
    pub truth: PathBuf,
    pub out: PathBuf,
    /// First truth step aligned with the first prediction; defaults to
    /// aligning the prediction with the end of the truth.
    pub offset: Option<usize>,
    pub root: usize,
}

fn scene_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == SCENE_EXT))
        .collect();
    files.sort();
    Ok(files)
}

fn pairs(args: &EvalArgs) -> Result<Vec<(PathBuf, PathBuf)>, CliError> {
    if !args.pred.is_dir() {
        return Ok(vec![(args.pred.clone(), args.truth.clone())]);
    }
    if !args.truth.is_dir() {
        return Err(CliError::Usage(
            "--pred is a directory, so --truth must be one too".into(),
        ));
    }
    let files = scene_files(&args.pred)?;
    if files.is_empty() {
        return Err(CliError::Data(format!(
            "no .{SCENE_EXT} files in {}",
            args.pred.display()
        )));
    }
    files
        .into_iter()
        .map(|p| {
            let t = args
                .truth
                .join(p.file_name().expect("scene files have names"));
            if !t.exists() {
                return Err(CliError::Data(format!(
                    "no ground truth for {}",
                    p.display()
                )));
            }
            Ok((p, t))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub report: MetricReport,
    pub pred_movement: MovementHistogram,
    pub truth_movement: MovementHistogram,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutput, CliError> {
    let mut scenes = Vec::new();
    let (mut pred_moves, mut truth_moves) = (Vec::new(), Vec::new());
    for (pred_path, truth_path) in pairs(args)? {
        let pred = load_scene(&pred_path)?;
        let truth = load_scene(&truth_path)?;
        if pred.num_persons() != truth.num_persons() || pred.joints() != truth.joints() {
            return Err(CliError::Data(format!(
                "{}: prediction has {} persons × {} joints, truth has {} × {}",
                pred_path.display(),
                pred.num_persons(),
                pred.joints(),
                truth.num_persons(),
                truth.joints()
            )));
        }
        let (tp, tt) = (pred.len(), truth.len());
        let offset = match args.offset {
            Some(o) => o,
            None => tt.checked_sub(tp).ok_or_else(|| {
                CliError::Data(format!(
                    "horizon mismatch in {}: prediction has {tp} steps, truth only {tt}",
                    pred_path.display()
                ))
            })?,
        };
        if offset + tp > tt {
            return Err(CliError::Data(format!(
                "horizon mismatch in {}: {tp} predicted steps from offset {offset} exceed the {tt} true steps",
                pred_path.display()
            )));
        }
        let window = truth.window(offset, tp)?;
        let p: Vec<Tensor> = pred.persons().iter().map(|s| s.poses().clone()).collect();
        let t: Vec<Tensor> = window.persons().iter().map(|s| s.poses().clone()).collect();
        let name = pred_path
            .file_stem()
            .map_or_else(|| pred.name.clone(), |s| s.to_string_lossy().into_owned());
        scenes.push(evaluate_scene(&name, &p, &t, pred.frame_rate(), args.root)?);
        if tp >= 2 {
            for (a, b) in p.iter().zip(&t) {
                pred_moves.push(movement_distance(a)?);
                truth_moves.push(movement_distance(b)?);
            }
        }
    }
    let report = MetricReport::from_scenes(scenes);
    let pred_movement = MovementHistogram::from_distances("prediction", &pred_moves)?;
    let truth_movement = MovementHistogram::from_distances("ground truth", &truth_moves)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("metrics.csv"), report.to_csv())?;
    fs::write(args.out.join("metrics.json"), report.to_json()?)?;
    fs::write(args.out.join("movement_pred.csv"), pred_movement.to_csv())?;
    fs::write(args.out.join("movement_truth.csv"), truth_movement.to_csv())?;
    Ok(EvalOutput {
        report,
        pred_movement,
        truth_movement,
    })
}

// ---------------------------------------------------------------------------
// export-attention

#[derive(Clone, Debug)]
pub struct ExportArgs {
    pub records: PathBuf,
    /// 1 is the first decoder layer.
    pub layer: usize,
    /// 1 is the first predicted chunk.
    pub chunk: usize,
    pub out: PathBuf,
}

pub fn cmd_export_attention(args: &ExportArgs) -> Result<Vec<AttentionTable>, CliError> {
    let text = fs::read_to_string(&args.records)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", args.records.display())))?;
    let file: RecordFile = serde_json::from_str(&text)?;
    if args.layer == 0 || args.chunk == 0 {
        return Err(CliError::Usage("--layer and --chunk count from 1".into()));
    }
    let chunk = file.chunks.get(args.chunk - 1).ok_or_else(|| {
        CliError::Usage(format!(
            "chunk {} requested but the file holds {}",
            args.chunk,
            file.chunks.len()
        ))
    })?;
    let tables = attention_tables_from_records(chunk, args.layer - 1)?;
    fs::create_dir_all(&args.out)?;
    let tag = format!("layer{}_chunk{}", args.layer, args.chunk);
    fs::write(
        args.out.join(format!("attention_{tag}.csv")),
        attention_csv(&tables),
    )?;
    let sim = attention_similarity(&tables);
    fs::write(
        args.out.join(format!("similarity_{tag}.csv")),
        similarity_csv(&sim),
    )?;
    Ok(tables)
}

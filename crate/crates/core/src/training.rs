//! Losses, progressive-length samples, the alternating adversarial training
//! loop and autoregressive inference.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::Scene;
use crate::error::{MrtError, Result};
use crate::model::{
    checkpoint_header, config_from_header, discriminate_graph, predict_scene, predict_scene_graph,
    DiscriminatorParams, ModelConfig, MrtParams, PredictionChunk, DISCRIMINATOR_PREFIX,
    PREDICTOR_PREFIX,
};
use crate::numerics::{AdamState, Archive, Graph, ParamStore, Tensor, Var};
use crate::rng::stream_rng;

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_p: f64,
    pub lr_d: f64,
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    /// Samples per step.
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// When false, the discriminator is never evaluated or updated.
    pub train_discriminator: bool,
    /// Feed model predictions, not ground truth, as the longer histories.
    pub scheduled_sampling: bool,
    /// Write an intermediate checkpoint every this many steps (0: final only).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_p: 3e-4,
            lr_d: 5e-4,
            lambda_rec: 1.0,
            lambda_adv: 5e-4,
            batch_size: 32,
            max_steps: 1000,
            seed: 0,
            train_discriminator: true,
            scheduled_sampling: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lr_p) || !positive(self.lr_d) {
            return Err(MrtError::config("learning rates must be positive"));
        }
        if !positive(self.lambda_rec) {
            return Err(MrtError::config("lambda_rec must be positive"));
        }
        if !(self.lambda_adv.is_finite() && self.lambda_adv >= 0.0) {
            return Err(MrtError::config("lambda_adv must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(MrtError::config("batch_size must be >= 1"));
        }
        Ok(())
    }

    fn uses_discriminator(&self) -> bool {
        self.train_discriminator || self.lambda_adv > 0.0
    }
}

// ---------------------------------------------------------------------------
// Losses

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(MrtError::dim(op, a, b));
    }
    Ok(())
}

/// Mean over time steps of the squared L2 offset error.
pub fn loss_rec(pred_offsets: &Tensor, true_offsets: &Tensor) -> Result<f64> {
    check_same("loss_rec", pred_offsets.shape(), true_offsets.shape())?;
    let sq: f64 = pred_offsets
        .data()
        .iter()
        .zip(true_offsets.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sq / pred_offsets.rows() as f64)
}

/// Least-squares generator loss `mean((s - 1)²)`.
pub fn loss_adv(scores: &Tensor) -> f64 {
    scores
        .data()
        .iter()
        .map(|s| (s - 1.0) * (s - 1.0))
        .sum::<f64>()
        / scores.len() as f64
}

/// Least-squares discriminator loss `mean(fake²) + mean((real - 1)²)`.
pub fn loss_disc(fake_scores: &Tensor, real_scores: &Tensor) -> Result<f64> {
    check_same("loss_disc", fake_scores.shape(), real_scores.shape())?;
    let m = fake_scores.len() as f64;
    let fake: f64 = fake_scores.data().iter().map(|s| s * s).sum();
    Ok(fake / m + loss_adv(real_scores))
}

pub fn loss_rec_graph(g: &mut Graph<'_>, pred: Var, truth: &Tensor) -> Result<Var> {
    check_same("loss_rec", g.shape(pred), truth.shape())?;
    let rows = truth.rows() as f64;
    let t = g.input(truth.clone());
    let diff = g.sub(pred, t)?;
    let sq = g.square(diff);
    let total = g.sum_all(sq);
    Ok(g.scale(total, 1.0 / rows))
}

pub fn loss_adv_graph(g: &mut Graph<'_>, scores: Var) -> Var {
    let shifted = g.add_scalar(scores, -1.0);
    let sq = g.square(shifted);
    g.mean_all(sq)
}

pub fn loss_disc_graph(g: &mut Graph<'_>, fake: Var, real: Var) -> Result<Var> {
    check_same("loss_disc", g.shape(fake), g.shape(real))?;
    let fsq = g.square(fake);
    let f = g.mean_all(fsq);
    let r = loss_adv_graph(g, real);
    g.add(f, r)
}

fn mean_of(g: &mut Graph<'_>, terms: &[Var]) -> Result<Var> {
    let mut total = *terms
        .first()
        .ok_or_else(|| MrtError::invalid("cannot average zero loss terms"))?;
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(g.scale(total, 1.0 / terms.len() as f64))
}

// ---------------------------------------------------------------------------
// Samples

/// One progressive-length training example over a whole scene.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub scene_index: usize,
    /// History length `κ`; the target window covers scene steps `κ..κ+k_out`.
    pub history_len: usize,
    /// Per person, `κ × 3J` observed poses.
    pub history: Vec<Tensor>,
    /// Per person, `k_out × 3J` offsets following the query pose.
    pub target_offsets: Vec<Tensor>,
    /// Per person, `k_out × 3J` ground-truth poses.
    pub target_poses: Vec<Tensor>,
}

impl TrainSample {
    /// Last history pose of person `n`.
    pub fn query_pose(&self, n: usize) -> &[f64] {
        let h = &self.history[n];
        h.row(h.rows() - 1)
    }
}

fn rows(t: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let c = t.cols();
    Tensor::new([len, c], t.data()[start * c..(start + len) * c].to_vec())
}

fn offsets_from(query: &[f64], poses: &Tensor) -> Result<Tensor> {
    let c = poses.cols();
    let mut prev = query.to_vec();
    let mut out = Vec::with_capacity(poses.len());
    for t in 0..poses.rows() {
        let row = poses.row(t);
        out.extend(row.iter().zip(&prev).map(|(a, b)| a - b));
        prev.copy_from_slice(row);
    }
    Tensor::new([poses.rows(), c], out)
}

/// Samples with histories `κ ∈ {k, 2k, …}` while `κ + k_out ≤ T`.
pub fn make_samples(
    scene: &Scene,
    scene_index: usize,
    config: &ModelConfig,
) -> Result<Vec<TrainSample>> {
    let (k, k_out, total) = (config.history, config.k_out, scene.len());
    if scene.joints() != config.joints {
        return Err(MrtError::config(format!(
            "scene has {} joints, model expects {}",
            scene.joints(),
            config.joints
        )));
    }
    if total < k + k_out {
        log::warn!(
            "scene '{}' has {total} steps, fewer than {k} + {k_out}; no samples",
            scene.name
        );
        return Ok(Vec::new());
    }
    let mut samples = Vec::new();
    let mut kappa = k;
    while kappa + k_out <= total {
        let mut history = Vec::with_capacity(scene.num_persons());
        let mut target_offsets = Vec::with_capacity(scene.num_persons());
        let mut target_poses = Vec::with_capacity(scene.num_persons());
        for p in scene.persons() {
            let h = rows(p.poses(), 0, kappa)?;
            let target = rows(p.poses(), kappa, k_out)?;
            target_offsets.push(offsets_from(h.row(kappa - 1), &target)?);
            target_poses.push(target);
            history.push(h);
        }
        samples.push(TrainSample {
            scene_index,
            history_len: kappa,
            history,
            target_offsets,
            target_poses,
        });
        kappa += k;
    }
    Ok(samples)
}

/// Replaces everything after the first `k` history steps with the
/// predictor's own autoregressive output, re-deriving target offsets from
/// the predicted query pose.
fn self_fed_sample(sample: &TrainSample, p: &MrtParams) -> Result<TrainSample> {
    let k = p.config.history;
    if sample.history_len <= k {
        return Ok(sample.clone());
    }
    let seed: Vec<Tensor> = sample
        .history
        .iter()
        .map(|h| rows(h, 0, k))
        .collect::<Result<_>>()?;
    let scene = Scene::from_tensors(seed, p.config.frame_rate, "self-fed")?;
    let chunks = (sample.history_len - k).div_ceil(p.config.k_out);
    let pred = predict_autoregressive(&scene, chunks, p)?;
    let mut out = sample.clone();
    for (n, h) in out.history.iter_mut().enumerate() {
        let mut data = rows(h, 0, k)?.into_data();
        let extra = sample.history_len - k;
        data.extend_from_slice(&pred.per_person[n].data()[..extra * h.cols()]);
        *h = Tensor::new([sample.history_len, h.cols()], data)?;
        let query = h.row(sample.history_len - 1).to_vec();
        out.target_offsets[n] = offsets_from(&query, &sample.target_poses[n])?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training

/// Loss values of one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub l_p: f64,
    pub l_rec: f64,
    /// Zero when the discriminator is disabled.
    pub l_adv: f64,
    /// Zero when the discriminator is disabled.
    pub l_d: f64,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str = "step,l_p,l_rec,l_adv,l_d";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.l_p, self.l_rec, self.l_adv, self.l_d
        )
    }
}

/// Predictor loss nodes for a batch.
pub struct PredictorLoss {
    pub l_p: Var,
    pub l_rec: Var,
    pub l_adv: Option<Var>,
    /// Predicted absolute chunks, one per (sample, person).
    pub fakes: Vec<Var>,
}

/// Records `L_P = λ_rec·L_rec + λ_adv·L_adv` for a batch. The discriminator
/// (if given) should be frozen in `g` by the caller.
pub fn predictor_loss_graph<'a>(
    g: &mut Graph<'a>,
    p: &MrtParams,
    p_store: &'a ParamStore,
    d: Option<(&DiscriminatorParams, &'a ParamStore)>,
    batch: &[&TrainSample],
    config: &TrainConfig,
) -> Result<PredictorLoss> {
    let mut rec_terms = Vec::new();
    let mut adv_terms = Vec::new();
    let mut fakes = Vec::new();
    for sample in batch {
        let refs: Vec<&Tensor> = sample.history.iter().collect();
        let outs = predict_scene_graph(g, p, p_store, &refs)?;
        for (out, truth) in outs.iter().zip(&sample.target_offsets) {
            rec_terms.push(loss_rec_graph(g, out.offsets, truth)?);
            if let Some((d, d_store)) = d {
                let scores = discriminate_graph(g, d, d_store, out.poses)?;
                adv_terms.push(loss_adv_graph(g, scores));
            }
            fakes.push(out.poses);
        }
    }
    let l_rec = mean_of(g, &rec_terms)?;
    let weighted_rec = g.scale(l_rec, config.lambda_rec);
    let (l_p, l_adv) = if adv_terms.is_empty() {
        (weighted_rec, None)
    } else {
        let l_adv = mean_of(g, &adv_terms)?;
        let weighted_adv = g.scale(l_adv, config.lambda_adv);
        (g.add(weighted_rec, weighted_adv)?, Some(l_adv))
    };
    Ok(PredictorLoss {
        l_p,
        l_rec,
        l_adv,
        fakes,
    })
}

/// Mean discriminator loss over paired fake and real `k_out × 3J` windows.
pub fn discriminator_loss_graph<'a>(
    g: &mut Graph<'a>,
    d: &DiscriminatorParams,
    d_store: &'a ParamStore,
    fakes: &[Tensor],
    reals: &[Tensor],
) -> Result<Var> {
    if fakes.len() != reals.len() {
        return Err(MrtError::invalid(format!(
            "{} fake windows but {} real windows",
            fakes.len(),
            reals.len()
        )));
    }
    let mut terms = Vec::with_capacity(fakes.len());
    for (fake, real) in fakes.iter().zip(reals) {
        let f = g.input(fake.clone());
        let r = g.input(real.clone());
        let sf = discriminate_graph(g, d, d_store, f)?;
        let sr = discriminate_graph(g, d, d_store, r)?;
        terms.push(loss_disc_graph(g, sf, sr)?);
    }
    mean_of(g, &terms)
}

/// Uniformly sampled `len`-step single-person window from `scenes`.
pub fn sample_real_window(scenes: &[Scene], len: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let usable: Vec<&Scene> = scenes.iter().filter(|s| s.len() >= len).collect();
    if usable.is_empty() {
        return Err(MrtError::invalid(format!(
            "no scene is long enough for a {len}-step real window"
        )));
    }
    let scene = usable[rng.gen_range(0..usable.len())];
    let person = rng.gen_range(0..scene.num_persons());
    let start = rng.gen_range(0..=scene.len() - len);
    rows(scene.person(person).poses(), start, len)
}

/// Predictor, discriminator and their optimizers.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub predictor: MrtParams,
    pub discriminator: DiscriminatorParams,
    pub opt_p: AdamState,
    pub opt_d: AdamState,
    pub config: TrainConfig,
    pub step: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: &ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            predictor: MrtParams::seeded(model, config.seed)?,
            discriminator: DiscriminatorParams::seeded(model, config.seed)?,
            opt_p: AdamState::new(config.lr_p),
            opt_d: AdamState::new(config.lr_d),
            rng: stream_rng(config.seed, "sampling"),
            config,
            step: 0,
        })
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.predictor.config
    }

    /// Draws `batch_size` samples uniformly with replacement.
    pub fn draw_batch<'s>(&mut self, samples: &'s [TrainSample]) -> Result<Vec<&'s TrainSample>> {
        if samples.is_empty() {
            return Err(MrtError::invalid("no training samples"));
        }
        Ok((0..self.config.batch_size)
            .map(|_| &samples[self.rng.gen_range(0..samples.len())])
            .collect())
    }

    /// One predictor update followed by one discriminator update.
    pub fn train_step(&mut self, batch: &[&TrainSample], real: &[Scene]) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(MrtError::invalid("empty batch"));
        }
        let step = self.step + 1;
        let self_fed: Vec<TrainSample>;
        let batch: Vec<&TrainSample> = if self.config.scheduled_sampling {
            self_fed = batch
                .iter()
                .map(|s| self_fed_sample(s, &self.predictor))
                .collect::<Result<_>>()?;
            self_fed.iter().collect()
        } else {
            batch.to_vec()
        };
        let use_d = self.config.uses_discriminator();

        let (metrics_p, fakes, grads) = {
            let mut g = Graph::new();
            g.freeze(&self.discriminator.store);
            let d = use_d.then_some((&self.discriminator, &self.discriminator.store));
            let loss = predictor_loss_graph(
                &mut g,
                &self.predictor,
                &self.predictor.store,
                d,
                &batch,
                &self.config,
            )?;
            let (l_p, l_rec) = (g.scalar(loss.l_p), g.scalar(loss.l_rec));
            let l_adv = loss.l_adv.map_or(0.0, |v| g.scalar(v));
            if ![l_p, l_rec, l_adv].iter().all(|v| v.is_finite()) {
                return Err(MrtError::Numerical(format!(
                    "non-finite loss at step {step}: l_p={l_p} l_rec={l_rec} l_adv={l_adv}"
                )));
            }
            let expected = if loss.l_adv.is_some() {
                self.config.lambda_rec * l_rec + self.config.lambda_adv * l_adv
            } else {
                self.config.lambda_rec * l_rec
            };
            if l_p != expected {
                return Err(MrtError::Numerical(format!(
                    "loss decomposition broken at step {step}: {l_p} != {expected}"
                )));
            }
            let grads = g.backward(loss.l_p)?;
            let fakes: Vec<Tensor> = loss.fakes.iter().map(|&v| g.value(v).clone()).collect();
            ((l_p, l_rec, l_adv), fakes, grads)
        };
        self.predictor.store.accumulate(&grads);
        self.opt_p
            .step(&mut self.predictor.store)
            .map_err(|e| MrtError::Numerical(format!("step {step}: {e}")))?;

        let l_d = if self.config.train_discriminator {
            self.discriminator_step(&fakes, real).map_err(|e| match e {
                MrtError::Numerical(m) => MrtError::Numerical(format!("step {step}: {m}")),
                other => other,
            })?
        } else {
            0.0
        };
        self.step = step;
        Ok(StepMetrics {
            step,
            l_p: metrics_p.0,
            l_rec: metrics_p.1,
            l_adv: metrics_p.2,
            l_d,
        })
    }

    /// One discriminator update on detached fakes against freshly sampled
    /// real windows. Returns the loss before the update.
    pub fn discriminator_step(&mut self, fakes: &[Tensor], real: &[Scene]) -> Result<f64> {
        let len = self.model_config().k_out;
        let reals = fakes
            .iter()
            .map(|_| sample_real_window(real, len, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        self.discriminator_step_on(fakes, &reals)
    }

    /// Discriminator update on explicit fake/real pairs.
    pub fn discriminator_step_on(&mut self, fakes: &[Tensor], reals: &[Tensor]) -> Result<f64> {
        let (l_d, grads) = {
            let mut g = Graph::new();
            let loss = discriminator_loss_graph(
                &mut g,
                &self.discriminator,
                &self.discriminator.store,
                fakes,
                reals,
            )?;
            let l_d = g.scalar(loss);
            if !l_d.is_finite() {
                return Err(MrtError::Numerical(format!(
                    "non-finite discriminator loss {l_d}"
                )));
            }
            (l_d, g.backward(loss)?)
        };
        self.discriminator.store.accumulate(&grads);
        self.opt_d.step(&mut self.discriminator.store)?;
        Ok(l_d)
    }

    // -----------------------------------------------------------------------
    // Checkpoints

    pub fn to_archive(&self) -> Archive {
        let header = {
            let mut h = checkpoint_header(self.model_config());
            h["train"] = json!({
                "step": self.step,
                "config": self.config,
                "adam_p_steps": self.opt_p.steps(),
                "adam_d_steps": self.opt_d.steps(),
                "rng_word_pos": self.rng.get_word_pos().to_string(),
            });
            h
        };
        let mut a = Archive::new(header);
        a.push_store(PREDICTOR_PREFIX, &self.predictor.store);
        a.push_store(DISCRIMINATOR_PREFIX, &self.discriminator.store);
        push_moments(&mut a, "adamP", &self.predictor.store, &self.opt_p);
        push_moments(&mut a, "adamD", &self.discriminator.store, &self.opt_d);
        a
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let model = config_from_header(&archive.header)?;
        let train = archive
            .header
            .get("train")
            .ok_or_else(|| MrtError::invalid("checkpoint has no training state"))?;
        let config: TrainConfig = serde_json::from_value(train["config"].clone())?;
        let mut t = Trainer::new(&model, config)?;
        archive.load_store(PREDICTOR_PREFIX, &mut t.predictor.store)?;
        archive.load_store(DISCRIMINATOR_PREFIX, &mut t.discriminator.store)?;
        let field = |name: &str| {
            train[name]
                .as_u64()
                .ok_or_else(|| MrtError::invalid(format!("checkpoint lacks {name}")))
        };
        t.step = field("step")?;
        restore_moments(
            archive,
            "adamP",
            &t.predictor.store,
            &mut t.opt_p,
            field("adam_p_steps")?,
        )?;
        restore_moments(
            archive,
            "adamD",
            &t.discriminator.store,
            &mut t.opt_d,
            field("adam_d_steps")?,
        )?;
        let pos: u128 = train["rng_word_pos"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MrtError::invalid("checkpoint lacks rng_word_pos"))?;
        t.rng.set_word_pos(pos);
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

fn push_moments(a: &mut Archive, prefix: &str, store: &ParamStore, opt: &AdamState) {
    for (p, (m, v)) in store
        .iter()
        .zip(opt.first_moments().iter().zip(opt.second_moments()))
    {
        a.push(format!("{prefix}.m.{}", p.name), m.clone());
        a.push(format!("{prefix}.v.{}", p.name), v.clone());
    }
}

fn restore_moments(
    a: &Archive,
    prefix: &str,
    store: &ParamStore,
    opt: &mut AdamState,
    steps: u64,
) -> Result<()> {
    if steps == 0 {
        return Ok(());
    }
    let mut m = Vec::with_capacity(store.len());
    let mut v = Vec::with_capacity(store.len());
    for p in store.iter() {
        let get = |kind: &str| {
            a.get(&format!("{prefix}.{kind}.{}", p.name))
                .cloned()
                .ok_or_else(|| {
                    MrtError::invalid(format!("checkpoint lacks {prefix} moments for {}", p.name))
                })
        };
        m.push(get("m")?);
        v.push(get("v")?);
    }
    opt.restore(steps, m, v);
    Ok(())
}

// ---------------------------------------------------------------------------
// Inference

/// Autoregressive output: per person, every predicted pose in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// Per person, `(chunks·k_out) × 3J`.
    pub per_person: Vec<Tensor>,
    /// Per chunk, one prediction per person.
    pub chunks: Vec<Vec<PredictionChunk>>,
    /// History length fed to the encoders for each chunk.
    pub history_lengths: Vec<usize>,
}

/// Predicts `horizon_chunks` consecutive chunks. Each chunk re-encodes the
/// whole history so far (observed plus predicted) and queries with the last
/// pose in it.
pub fn predict_autoregressive(
    scene: &Scene,
    horizon_chunks: usize,
    p: &MrtParams,
) -> Result<Rollout> {
    if horizon_chunks == 0 {
        return Err(MrtError::invalid("horizon_chunks must be >= 1"));
    }
    if scene.joints() != p.config.joints {
        return Err(MrtError::config(format!(
            "scene has {} joints, model expects {}",
            scene.joints(),
            p.config.joints
        )));
    }
    let mut history = scene.clone();
    let mut chunks = Vec::with_capacity(horizon_chunks);
    let mut history_lengths = Vec::with_capacity(horizon_chunks);
    for c in 0..horizon_chunks {
        history_lengths.push(history.len());
        let step = predict_scene(&history, p)?;
        if c + 1 < horizon_chunks {
            let persons = history
                .persons()
                .iter()
                .zip(&step)
                .map(|(seq, chunk)| seq.extended(&chunk.poses))
                .collect::<Result<Vec<_>>>()?;
            history = Scene::new(persons, scene.name.clone())?;
        }
        chunks.push(step);
    }
    let per_person = (0..scene.num_persons())
        .map(|n| {
            let mut data = Vec::new();
            for step in &chunks {
                data.extend_from_slice(step[n].poses.data());
            }
            Tensor::new(
                [horizon_chunks * p.config.k_out, p.config.pose_width()],
                data,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Rollout {
        per_person,
        chunks,
        history_lengths,
    })
}

//! The predictor (local-range encoder, global-range encoder, single-query
//! decoder with an IDCT output head) and the motion discriminator.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attention::{
    decoder_layer, encoder_layer, AttentionRecord, DecoderLayerParams, EncoderLayerParams, Linear,
    QueryToken, TokenLabel, TokenSource,
};
use crate::data::{MotionSequence, Pose, Scene, DEFAULT_FRAME_RATE, DEFAULT_JOINTS, ROOT_JOINT};
use crate::error::{MrtError, Result};
use crate::numerics::{Archive, Graph, ParamStore, Tensor, Var};
use crate::rng::stream_rng;
use crate::transforms::{dct_plan, spatial_pe, temporal_pe};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub joints: usize,
    /// Observed steps `k` per prediction pass during training.
    pub history: usize,
    pub k_out: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub frame_rate: f64,
    pub root_joint: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            joints: DEFAULT_JOINTS,
            history: 15,
            k_out: 15,
            layers: 3,
            heads: 8,
            d_model: 128,
            d_ff: 256,
            frame_rate: DEFAULT_FRAME_RATE,
            root_joint: ROOT_JOINT,
        }
    }
}

impl ModelConfig {
    /// Smallest useful configuration, used for gradient checks.
    pub fn micro() -> Self {
        ModelConfig {
            joints: 3,
            history: 4,
            k_out: 4,
            layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            ..ModelConfig::default()
        }
    }

    pub fn pose_width(&self) -> usize {
        3 * self.joints
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MrtError::config(m));
        if self.joints == 0 {
            return fail("joints must be >= 1".into());
        }
        if self.k_out < 2 {
            return fail(format!("k_out must be >= 2, got {}", self.k_out));
        }
        if self.history < 2 {
            return fail(format!("history must be >= 2, got {}", self.history));
        }
        if self.layers == 0 {
            return fail("layers must be >= 1".into());
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if !self.d_model.is_multiple_of(2) {
            return fail(format!("d_model must be even, got {}", self.d_model));
        }
        if self.d_ff == 0 {
            return fail("d_ff must be >= 1".into());
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return fail(format!("bad frame rate {}", self.frame_rate));
        }
        if self.root_joint >= self.joints {
            return fail(format!(
                "root joint {} out of range for {} joints",
                self.root_joint, self.joints
            ));
        }
        Ok(())
    }
}

fn init_layers(
    store: &mut ParamStore,
    name: &str,
    cfg: &ModelConfig,
    rng: &mut impl Rng,
) -> Result<Vec<EncoderLayerParams>> {
    (0..cfg.layers)
        .map(|i| {
            EncoderLayerParams::init(
                store,
                &format!("{name}.layer{i}"),
                cfg.d_model,
                cfg.d_ff,
                cfg.heads,
                rng,
            )
        })
        .collect()
}

/// Predictor weights.
#[derive(Clone, Debug)]
pub struct MrtParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub local_embed: Linear,
    pub local_layers: Vec<EncoderLayerParams>,
    pub global_embed: Linear,
    pub global_layers: Vec<EncoderLayerParams>,
    pub query_embed: Linear,
    pub decoder_layers: Vec<DecoderLayerParams>,
    pub head_hidden: Linear,
    pub head_out: Linear,
}

impl MrtParams {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let (w, d) = (config.pose_width(), config.d_model);
        let s = &mut store;
        let local_embed = Linear::init(s, "local.embed", w, d, rng)?;
        let local_layers = init_layers(s, "local", config, rng)?;
        let global_embed = Linear::init(s, "global.embed", w, d, rng)?;
        let global_layers = init_layers(s, "global", config, rng)?;
        let query_embed = Linear::init(s, "decoder.query", w, d, rng)?;
        let decoder_layers = init_layers(s, "decoder", config, rng)?;
        let head_hidden = Linear::init(s, "head.fc1", d, config.d_ff, rng)?;
        let head_out = Linear::init(s, "head.fc2", config.d_ff, config.k_out * w, rng)?;
        Ok(MrtParams {
            config: config.clone(),
            store,
            local_embed,
            local_layers,
            global_embed,
            global_layers,
            query_embed,
            decoder_layers,
            head_hidden,
            head_out,
        })
    }

    /// Initialization from the `init` stream of a run seed.
    pub fn seeded(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init(config, &mut stream_rng(seed, "init"))
    }

    /// Rebuilds a predictor from the `P.` entries of a checkpoint archive.
    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let config = config_from_header(&archive.header)?;
        let mut params = Self::seeded(&config, 0)?;
        archive.load_store(PREDICTOR_PREFIX, &mut params.store)?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut archive = Archive::new(checkpoint_header(&self.config));
        archive.push_store(PREDICTOR_PREFIX, &self.store);
        archive.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

/// Discriminator weights: an encoder stack shaped like the local-range
/// encoder plus a per-token two-layer head.
#[derive(Clone, Debug)]
pub struct DiscriminatorParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub embed: Linear,
    pub layers: Vec<EncoderLayerParams>,
    pub head_hidden: Linear,
    pub head_out: Linear,
}

impl DiscriminatorParams {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let s = &mut store;
        let embed = Linear::init(s, "disc.embed", config.pose_width(), config.d_model, rng)?;
        let layers = init_layers(s, "disc", config, rng)?;
        let head_hidden = Linear::init(s, "disc.fc1", config.d_model, config.d_ff, rng)?;
        let head_out = Linear::init(s, "disc.fc2", config.d_ff, 1, rng)?;
        Ok(DiscriminatorParams {
            config: config.clone(),
            store,
            embed,
            layers,
            head_hidden,
            head_out,
        })
    }

    pub fn seeded(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init(config, &mut stream_rng(seed, "init-discriminator"))
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let config = config_from_header(&archive.header)?;
        let mut params = Self::seeded(&config, 0)?;
        archive.load_store(DISCRIMINATOR_PREFIX, &mut params.store)?;
        Ok(params)
    }
}

pub const PREDICTOR_PREFIX: &str = "P.";
pub const DISCRIMINATOR_PREFIX: &str = "D.";
pub const CHECKPOINT_KIND: &str = "mrt-checkpoint";

/// Archive header recording the architecture.
pub fn checkpoint_header(config: &ModelConfig) -> serde_json::Value {
    json!({ "kind": CHECKPOINT_KIND, "config": config })
}

pub fn config_from_header(header: &serde_json::Value) -> Result<ModelConfig> {
    if header.get("kind").and_then(|k| k.as_str()) != Some(CHECKPOINT_KIND) {
        return Err(MrtError::invalid("archive is not a model checkpoint"));
    }
    let cfg = header
        .get("config")
        .ok_or_else(|| MrtError::invalid("checkpoint header has no config"))?;
    let config: ModelConfig = serde_json::from_value(cfg.clone())?;
    config.validate()?;
    Ok(config)
}

// ---------------------------------------------------------------------------
// Graph-level forward passes

fn check_width(config: &ModelConfig, t: &Tensor, what: &str) -> Result<()> {
    if t.shape().len() != 2 || t.cols() != config.pose_width() {
        return Err(MrtError::invalid(format!(
            "{what} must be T × {}, got {:?}",
            config.pose_width(),
            t.shape()
        )));
    }
    Ok(())
}

fn run_stack<'a>(
    g: &mut Graph<'a>,
    store: &'a ParamStore,
    layers: &[EncoderLayerParams],
    mut x: Var,
) -> Result<Var> {
    for layer in layers {
        x = encoder_layer(g, store, layer, x)?;
    }
    Ok(x)
}

/// Local-range features `e_{1:k}` for one `k × 3J` history.
pub fn local_encode_graph<'a>(
    g: &mut Graph<'a>,
    p: &MrtParams,
    store: &'a ParamStore,
    seq: &Tensor,
) -> Result<Var> {
    let cfg = &p.config;
    check_width(cfg, seq, "local history")?;
    let (k, c) = (seq.rows(), seq.cols());
    if k < 2 {
        return Err(MrtError::invalid(format!(
            "local encoder needs at least 2 poses, got {k}"
        )));
    }
    // zero offset first, then x_{t+1} - x_t
    let d = seq.data();
    let mut offsets = vec![0.0; c];
    offsets.extend((0..(k - 1) * c).map(|i| d[i + c] - d[i]));
    let coeffs = dct_plan(k)?.forward(&Tensor::new([k, c], offsets)?)?;
    let x = g.input(coeffs);
    let x = p.local_embed.forward(g, store, x)?;
    let pe = g.input(temporal_pe(k, cfg.d_model)?);
    let x = g.add(x, pe)?;
    run_stack(g, store, &p.local_layers, x)
}

/// Global-range output `o^{1:N}_{1:k}` as `N·k × d_model`, person-major.
pub fn global_encode_graph<'a>(
    g: &mut Graph<'a>,
    p: &MrtParams,
    store: &'a ParamStore,
    persons: &[&Tensor],
) -> Result<Var> {
    let cfg = &p.config;
    let first = persons
        .first()
        .ok_or_else(|| MrtError::invalid("global encoder needs at least one person"))?;
    let k = first.rows();
    let mut data = Vec::with_capacity(persons.len() * first.len());
    for (n, t) in persons.iter().enumerate() {
        check_width(cfg, t, "global history")?;
        if t.rows() != k {
            return Err(MrtError::invalid(format!(
                "person {n} has {} steps, person 0 has {k}",
                t.rows()
            )));
        }
        data.extend_from_slice(t.data());
    }
    let tokens = g.input(Tensor::new([persons.len() * k, cfg.pose_width()], data)?);
    let x = p.global_embed.forward(g, store, tokens)?;
    // the same temporal table repeats for every person block
    let pe = temporal_pe(k, cfg.d_model)?;
    let mut tiled = Vec::with_capacity(persons.len() * pe.len());
    for _ in persons {
        tiled.extend_from_slice(pe.data());
    }
    let pe = g.input(Tensor::new([persons.len() * k, cfg.d_model], tiled)?);
    let x = g.add(x, pe)?;
    run_stack(g, store, &p.global_layers, x)
}

/// Decoder results for one queried person.
#[derive(Clone, Debug)]
pub struct DecodeOutput {
    /// `k_out × 3J` predicted offsets.
    pub offsets: Var,
    /// `k_out × 3J` absolute poses integrated from the query.
    pub poses: Var,
    pub records: Vec<AttentionRecord>,
}

/// Labels of the decoder memory `[e_{1:k}; f^1_{1:k}; …; f^N_{1:k}]`.
pub fn memory_labels(person: usize, persons: usize, k: usize) -> Vec<TokenLabel> {
    let local = (0..k).map(|time| TokenLabel {
        source: TokenSource::Local,
        person,
        time,
    });
    let global = (0..persons).flat_map(|n| {
        (0..k).map(move |time| TokenLabel {
            source: TokenSource::Global,
            person: n,
            time,
        })
    });
    local.chain(global).collect()
}

/// `k_out × k_out` lower-triangular ones: row `t` sums offsets `0..=t`.
fn integration_matrix(n: usize) -> Tensor {
    let mut m = Tensor::zeros([n, n]);
    for r in 0..n {
        for c in 0..=r {
            m.set(r, c, 1.0);
        }
    }
    m
}

/// Decodes one person's chunk from local features `local` (`k × d`),
/// global output `global` (`N·k × d`), the raw `N × k × 3J` poses for the
/// spatial encoding, and the query pose.
#[allow(clippy::too_many_arguments)]
pub fn decode_graph<'a>(
    g: &mut Graph<'a>,
    p: &MrtParams,
    store: &'a ParamStore,
    local: Var,
    global: Var,
    all_poses: &Tensor,
    query: &[f64],
    person: usize,
) -> Result<DecodeOutput> {
    let cfg = &p.config;
    let (d, w) = (cfg.d_model, cfg.pose_width());
    if query.len() != w {
        return Err(MrtError::invalid(format!(
            "query pose has {} values, expected {w}",
            query.len()
        )));
    }
    let spe = spatial_pe(all_poses, query)?;
    let (n, k) = (spe.values.rows(), spe.values.cols());
    if g.shape(global) != [n * k, d] || g.shape(local) != [k, d] {
        return Err(MrtError::invalid(format!(
            "context does not match scene: local {:?}, global {:?}, scene {n} persons × {k} steps",
            g.shape(local),
            g.shape(global)
        )));
    }
    if person >= n {
        return Err(MrtError::invalid(format!(
            "person {person} not in a {n}-person scene"
        )));
    }
    // each scalar is broadcast across all channels of its token
    let mut bias = Vec::with_capacity(n * k * d);
    for &s in spe.values.data() {
        bias.extend(std::iter::repeat_n(s, d));
    }
    let bias = g.input(Tensor::new([n * k, d], bias)?);
    let f = g.add(global, bias)?;
    let memory = g.concat_rows(&[local, f])?;
    let labels = memory_labels(person, n, k);

    let q_in = g.input(Tensor::new([1, w], query.to_vec())?);
    let q_embed = p.query_embed.forward(g, store, q_in)?;
    let mut q = QueryToken::new(g, q_embed)?;
    let mut records = Vec::with_capacity(p.decoder_layers.len());
    for layer in &p.decoder_layers {
        let (next, mut rec) = decoder_layer(g, store, layer, q, memory)?;
        rec.labels = labels.clone();
        records.push(rec);
        q = next;
    }
    let hidden = p.head_hidden.forward(g, store, q.var())?;
    let hidden = g.relu(hidden);
    let coeffs = p.head_out.forward(g, store, hidden)?;
    let coeffs = g.reshape(coeffs, &[cfg.k_out, w])?;
    let idct = g.input(dct_plan(cfg.k_out)?.inverse_basis().clone());
    let offsets = g.matmul(idct, coeffs)?;
    let integrate = g.input(integration_matrix(cfg.k_out));
    let summed = g.matmul(integrate, offsets)?;
    let anchor = g.input(Tensor::new([w], query.to_vec())?);
    let poses = g.add_row(summed, anchor)?;
    Ok(DecodeOutput {
        offsets,
        poses,
        records,
    })
}

/// Stacks equal-length per-person histories into `N × k × 3J`.
pub fn stack_persons(persons: &[&Tensor]) -> Result<Tensor> {
    let first = persons
        .first()
        .ok_or_else(|| MrtError::invalid("no persons"))?;
    let mut data = Vec::with_capacity(persons.len() * first.len());
    for t in persons {
        if t.shape() != first.shape() {
            return Err(MrtError::dim("stack persons", first.shape(), t.shape()));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new([persons.len(), first.rows(), first.cols()], data)
}

/// Full predictor pass over one scene history: one global encoding, then
/// a local encoding and decode per person, each queried by its last pose.
pub fn predict_scene_graph<'a>(
    g: &mut Graph<'a>,
    p: &MrtParams,
    store: &'a ParamStore,
    persons: &[&Tensor],
) -> Result<Vec<DecodeOutput>> {
    let global = global_encode_graph(g, p, store, persons)?;
    let all = stack_persons(persons)?;
    persons
        .iter()
        .enumerate()
        .map(|(n, hist)| {
            let local = local_encode_graph(g, p, store, hist)?;
            let query = hist.row(hist.rows() - 1);
            decode_graph(g, p, store, local, global, &all, query, n)
        })
        .collect()
}

/// One score per input pose: `m × 3J` absolute poses to an `m × 1` node.
pub fn discriminate_graph<'a>(
    g: &mut Graph<'a>,
    d: &DiscriminatorParams,
    store: &'a ParamStore,
    motion: Var,
) -> Result<Var> {
    let cfg = &d.config;
    let shape = g.shape(motion).to_vec();
    if shape.len() != 2 || shape[1] != cfg.pose_width() || shape[0] == 0 {
        return Err(MrtError::dim("discriminate", &shape, &[cfg.pose_width()]));
    }
    let m = shape[0];
    let basis = g.input(dct_plan(m)?.basis().clone());
    let coeffs = g.matmul(basis, motion)?;
    let x = d.embed.forward(g, store, coeffs)?;
    let pe = g.input(temporal_pe(m, cfg.d_model)?);
    let x = g.add(x, pe)?;
    let x = run_stack(g, store, &d.layers, x)?;
    let hidden = d.head_hidden.forward(g, store, x)?;
    let hidden = g.relu(hidden);
    d.head_out.forward(g, store, hidden)
}

// ---------------------------------------------------------------------------
// Value-level API

/// Global encoder output with per-token labels.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalContext {
    pub output: Tensor,
    pub labels: Vec<TokenLabel>,
    pub persons: usize,
    pub steps: usize,
}

/// Everything the decoder reads for one queried person.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedContext {
    pub person: usize,
    /// `k × d_model`.
    pub local_features: Tensor,
    /// `N·k × d_model`.
    pub global_output: Tensor,
    pub labels: Vec<TokenLabel>,
}

/// One decoded chunk for one person.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionChunk {
    pub offsets: Tensor,
    pub poses: Tensor,
    /// One record per decoder layer.
    pub attention: Vec<AttentionRecord>,
}

pub fn local_encode(seq: &MotionSequence, p: &MrtParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = local_encode_graph(&mut g, p, &p.store, seq.poses())?;
    Ok(g.value(v).clone())
}

pub fn global_encode(scene: &Scene, p: &MrtParams) -> Result<GlobalContext> {
    let persons: Vec<&Tensor> = scene.persons().iter().map(|s| s.poses()).collect();
    let mut g = Graph::new();
    let v = global_encode_graph(&mut g, p, &p.store, &persons)?;
    let (n, k) = (scene.num_persons(), scene.len());
    let labels = (0..n)
        .flat_map(|person| {
            (0..k).map(move |time| TokenLabel {
                source: TokenSource::Global,
                person,
                time,
            })
        })
        .collect();
    Ok(GlobalContext {
        output: g.value(v).clone(),
        labels,
        persons: n,
        steps: k,
    })
}

impl EncodedContext {
    pub fn new(person: usize, local_features: Tensor, global: &GlobalContext) -> Self {
        EncodedContext {
            person,
            local_features,
            global_output: global.output.clone(),
            labels: global.labels.clone(),
        }
    }
}

pub fn decode_person(
    context: &EncodedContext,
    query_pose: &Pose,
    all_poses: &Tensor,
    p: &MrtParams,
) -> Result<PredictionChunk> {
    let mut g = Graph::new();
    let local = g.input(context.local_features.clone());
    let global = g.input(context.global_output.clone());
    let out = decode_graph(
        &mut g,
        p,
        &p.store,
        local,
        global,
        all_poses,
        query_pose.coords(),
        context.person,
    )?;
    Ok(PredictionChunk {
        offsets: g.value(out.offsets).clone(),
        poses: g.value(out.poses).clone(),
        attention: out.records,
    })
}

/// One chunk per person, in scene order.
pub fn predict_scene(scene: &Scene, p: &MrtParams) -> Result<Vec<PredictionChunk>> {
    scene.validate()?;
    let persons: Vec<&Tensor> = scene.persons().iter().map(|s| s.poses()).collect();
    let mut g = Graph::new();
    let outs = predict_scene_graph(&mut g, p, &p.store, &persons)?;
    Ok(outs
        .into_iter()
        .map(|o| PredictionChunk {
            offsets: g.value(o.offsets).clone(),
            poses: g.value(o.poses).clone(),
            attention: o.records,
        })
        .collect())
}

/// Per-step realism scores for `m × 3J` absolute poses.
pub fn discriminate(motion: &Tensor, d: &DiscriminatorParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.input(motion.clone());
    let s = discriminate_graph(&mut g, d, &d.store, x)?;
    let v = g.value(s);
    Tensor::new([v.rows()], v.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticParams};
    use crate::numerics::grad_check;

    fn micro_scene(n: usize, seed: u64) -> Scene {
        generate_synthetic(n, 4, 3, seed, &SyntheticParams::default()).unwrap()
    }

    fn micro() -> MrtParams {
        MrtParams::seeded(&ModelConfig::micro(), 1).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        for bad in [
            ModelConfig {
                k_out: 1,
                ..ModelConfig::micro()
            },
            ModelConfig {
                joints: 0,
                ..ModelConfig::micro()
            },
            ModelConfig {
                layers: 0,
                ..ModelConfig::micro()
            },
            ModelConfig {
                heads: 3,
                ..ModelConfig::micro()
            },
        ] {
            assert!(
                matches!(bad.validate(), Err(MrtError::Config(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn local_shapes_for_any_length() {
        let p = MrtParams::seeded(
            &ModelConfig {
                joints: 15,
                d_model: 16,
                heads: 2,
                d_ff: 8,
                layers: 1,
                ..ModelConfig::default()
            },
            3,
        )
        .unwrap();
        let scene = generate_synthetic(1, 45, 15, 2, &SyntheticParams::default()).unwrap();
        for k in [4, 15, 30, 45] {
            let e = local_encode(&scene.person(0).window(0, k).unwrap(), &p).unwrap();
            assert_eq!(e.shape(), &[k, 16]);
        }
        let one = scene.person(0).window(0, 1).unwrap();
        assert!(matches!(
            local_encode(&one, &p),
            Err(MrtError::InvalidInput(_))
        ));
    }

    #[test]
    fn static_persons_share_local_features() {
        let p = micro();
        let pose: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        let a = Tensor::from_rows(&vec![pose.clone(); 4]).unwrap();
        let moved: Vec<f64> = pose.iter().map(|v| v + 7.0).collect();
        let b = Tensor::from_rows(&vec![moved; 4]).unwrap();
        let ea = local_encode(&MotionSequence::new(a, 15.0).unwrap(), &p).unwrap();
        let eb = local_encode(&MotionSequence::new(b, 15.0).unwrap(), &p).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn local_translation_invariant_global_not() {
        let p = micro();
        let scene = micro_scene(2, 4);
        let moved = scene.translated_person(0, [1.5, -2.0, 0.3]).unwrap();
        let a = local_encode(scene.person(0), &p).unwrap();
        let b = local_encode(moved.person(0), &p).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-9);
        let ga = global_encode(&scene, &p).unwrap().output;
        let gb = global_encode(&moved, &p).unwrap().output;
        assert!(ga.max_abs_diff(&gb).unwrap() > 1e-6);
    }

    #[test]
    fn global_labels_and_person_equivariance() {
        let p = micro();
        let scene = micro_scene(3, 5);
        let ctx = global_encode(&scene, &p).unwrap();
        assert_eq!(ctx.output.rows(), 12);
        assert_eq!(
            ctx.labels[5],
            TokenLabel {
                source: TokenSource::Global,
                person: 1,
                time: 1
            }
        );
        let perm = scene.permuted(&[2, 0, 1]).unwrap();
        let pc = global_encode(&perm, &p).unwrap();
        for (new, &old) in [2usize, 0, 1].iter().enumerate() {
            for t in 0..4 {
                for (a, b) in pc
                    .output
                    .row(new * 4 + t)
                    .iter()
                    .zip(ctx.output.row(old * 4 + t))
                {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
        let single = micro_scene(1, 5);
        assert_eq!(global_encode(&single, &p).unwrap().output.rows(), 4);
    }

    #[test]
    fn zero_head_freezes_query_pose() {
        let mut p = micro();
        for id in [p.head_out.weight, p.head_out.bias] {
            let shape = p.store.value(id).shape().to_vec();
            p.store.get_mut(id).value = Tensor::zeros(shape);
        }
        let scene = micro_scene(2, 6);
        let chunks = predict_scene(&scene, &p).unwrap();
        for (n, c) in chunks.iter().enumerate() {
            assert_eq!(c.offsets.max_abs(), 0.0);
            let last = scene.person(n).pose_slice(3);
            for t in 0..4 {
                assert_eq!(c.poses.row(t), last);
            }
        }
    }

    #[test]
    fn integration_identity() {
        let p = micro();
        let scene = micro_scene(2, 7);
        for (n, c) in predict_scene(&scene, &p).unwrap().iter().enumerate() {
            let q = scene.person(n).pose_slice(3);
            for j in 0..9 {
                assert!((c.poses.get(0, j) - (q[j] + c.offsets.get(0, j))).abs() < 1e-12);
                for t in 1..4 {
                    let step = c.poses.get(t, j) - c.poses.get(t - 1, j);
                    assert!((step - c.offsets.get(t, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn predict_scene_is_composition_of_decodes() {
        let p = micro();
        let scene = micro_scene(3, 8);
        let chunks = predict_scene(&scene, &p).unwrap();
        assert_eq!(chunks.len(), 3);
        let global = global_encode(&scene, &p).unwrap();
        let all = scene.all_poses();
        for (n, chunk) in chunks.iter().enumerate() {
            let local = local_encode(scene.person(n), &p).unwrap();
            let ctx = EncodedContext::new(n, local, &global);
            let alone = decode_person(&ctx, &scene.person(n).pose(3), &all, &p).unwrap();
            assert_eq!(&alone, chunk);
            assert_eq!(chunk.attention.len(), 1);
            assert_eq!(chunk.attention[0].key_count(), 4 + 12);
        }
    }

    #[test]
    fn permuting_others_leaves_query_unchanged() {
        let p = micro();
        let scene = micro_scene(3, 9);
        let base = predict_scene(&scene, &p).unwrap();
        let perm = scene.permuted(&[0, 2, 1]).unwrap();
        let moved = predict_scene(&perm, &p).unwrap();
        assert!(base[0].poses.max_abs_diff(&moved[0].poses).unwrap() < 1e-9);
        assert!(base[1].poses.max_abs_diff(&moved[2].poses).unwrap() < 1e-9);
    }

    #[test]
    fn context_mismatch_rejected() {
        let p = micro();
        let scene = micro_scene(2, 10);
        let global = global_encode(&scene, &p).unwrap();
        let local = local_encode(scene.person(0), &p).unwrap();
        let ctx = EncodedContext::new(0, local, &global);
        let other = micro_scene(3, 10).all_poses();
        assert!(decode_person(&ctx, &scene.person(0).pose(3), &other, &p).is_err());
    }

    #[test]
    fn discriminator_scores_every_step() {
        let cfg = ModelConfig::micro();
        let d = DiscriminatorParams::seeded(&cfg, 2).unwrap();
        let motion = micro_scene(1, 3).person(0).poses().clone();
        let s = discriminate(&motion, &d).unwrap();
        assert_eq!(s.shape(), &[4]);
        assert!(s.is_finite());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.mrtp");
        let p = micro();
        p.save(&path).unwrap();
        let back = MrtParams::load(&path).unwrap();
        assert_eq!(back.config, p.config);
        for (a, b) in p.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert_eq!(f64::from(*x as f32), *y);
            }
        }
        let header = Archive::load(&path).unwrap().header;
        for key in [
            "joints",
            "k_out",
            "layers",
            "heads",
            "d_model",
            "d_ff",
            "frame_rate",
        ] {
            assert!(header["config"].get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn predictor_gradients_match_finite_differences() {
        let mut p = micro();
        let scene = micro_scene(2, 12);
        let hist: Vec<Tensor> = scene.persons().iter().map(|s| s.poses().clone()).collect();
        let layout = p.clone();
        let report = grad_check(
            &mut p.store,
            |g, store| {
                let refs: Vec<&Tensor> = hist.iter().collect();
                let outs = predict_scene_graph(g, &layout, store, &refs)?;
                let mut total = None;
                for o in outs {
                    let sq = g.square(o.offsets);
                    let m = g.mean_all(sq);
                    total = Some(match total {
                        None => m,
                        Some(t) => g.add(t, m)?,
                    });
                }
                Ok(total.unwrap())
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.worst());
    }
}

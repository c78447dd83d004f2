//! Error metrics, movement histograms and decoder attention export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionRecord, TokenLabel, TokenSource};
use crate::error::{MrtError, Result};
use crate::model::PredictionChunk;
use crate::numerics::Tensor;

/// Reported horizons in seconds.
pub const HORIZONS_SECONDS: [usize; 3] = [1, 2, 3];
pub const HISTOGRAM_BINS: usize = 50;

fn check_pair(pred: &Tensor, truth: &Tensor, horizon: usize) -> Result<()> {
    if pred.shape() != truth.shape() || pred.shape().len() != 2 || !pred.cols().is_multiple_of(3) {
        return Err(MrtError::dim("metric", pred.shape(), truth.shape()));
    }
    if horizon == 0 || horizon > pred.rows() {
        return Err(MrtError::invalid(format!(
            "horizon {horizon} outside 1..={}",
            pred.rows()
        )));
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean per-joint Euclidean error over the first `horizon` steps, no alignment.
pub fn mpjpe(pred: &Tensor, truth: &Tensor, horizon: usize) -> Result<f64> {
    check_pair(pred, truth, horizon)?;
    let joints = pred.cols() / 3;
    let mut total = 0.0;
    for t in 0..horizon {
        for (p, q) in pred.row(t).chunks(3).zip(truth.row(t).chunks(3)) {
            total += dist(p, q);
        }
    }
    Ok(total / (horizon * joints) as f64)
}

fn check_root(pred: &Tensor, root: usize) -> Result<()> {
    if root >= pred.cols() / 3 {
        return Err(MrtError::config(format!(
            "root joint {root} out of range for {} joints",
            pred.cols() / 3
        )));
    }
    Ok(())
}

/// Mean Euclidean error of the root joint alone.
pub fn root_error(pred: &Tensor, truth: &Tensor, horizon: usize, root: usize) -> Result<f64> {
    check_pair(pred, truth, horizon)?;
    check_root(pred, root)?;
    let r = 3 * root..3 * root + 3;
    let total: f64 = (0..horizon)
        .map(|t| dist(&pred.row(t)[r.clone()], &truth.row(t)[r.clone()]))
        .sum();
    Ok(total / horizon as f64)
}

/// MPJPE after translating both skeletons so their roots coincide, per frame.
pub fn pose_error(pred: &Tensor, truth: &Tensor, horizon: usize, root: usize) -> Result<f64> {
    check_pair(pred, truth, horizon)?;
    check_root(pred, root)?;
    let joints = pred.cols() / 3;
    let mut total = 0.0;
    for t in 0..horizon {
        let (p, q) = (pred.row(t), truth.row(t));
        let (pr, qr) = (&p[3 * root..3 * root + 3], &q[3 * root..3 * root + 3]);
        for (a, b) in p.chunks(3).zip(q.chunks(3)) {
            let d: f64 = (0..3)
                .map(|i| {
                    let e = (a[i] - pr[i]) - (b[i] - qr[i]);
                    e * e
                })
                .sum();
            total += d.sqrt();
        }
    }
    Ok(total / (horizon * joints) as f64)
}

/// Mean over joints of the distance between first and last positions.
pub fn movement_distance(seq: &Tensor) -> Result<f64> {
    if seq.shape().len() != 2 || !seq.cols().is_multiple_of(3) || seq.rows() < 2 {
        return Err(MrtError::invalid(format!(
            "movement needs at least two poses, got {:?}",
            seq.shape()
        )));
    }
    let (first, last) = (seq.row(0), seq.row(seq.rows() - 1));
    let joints = seq.cols() / 3;
    let total: f64 = first
        .chunks(3)
        .zip(last.chunks(3))
        .map(|(a, b)| dist(a, b))
        .sum();
    Ok(total / joints as f64)
}

// ---------------------------------------------------------------------------
// Reports

/// Errors in meters at one horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub seconds: usize,
    pub steps: usize,
    pub mpjpe: f64,
    pub root_error: f64,
    pub pose_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub name: String,
    pub persons: usize,
    pub horizons: Vec<HorizonMetrics>,
}

/// Per-scene metrics and a person-weighted corpus aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub units: String,
    pub scenes: Vec<SceneMetrics>,
    pub corpus: Vec<HorizonMetrics>,
}

/// Horizons (in steps) that fit in `available` steps at `frame_rate`.
pub fn horizon_steps(frame_rate: f64, available: usize) -> Vec<(usize, usize)> {
    HORIZONS_SECONDS
        .iter()
        .map(|&s| (s, (s as f64 * frame_rate).round() as usize))
        .filter(|&(_, steps)| steps >= 1 && steps <= available)
        .collect()
}

/// Metrics averaged over persons for one scene.
pub fn evaluate_scene(
    name: &str,
    pred: &[Tensor],
    truth: &[Tensor],
    frame_rate: f64,
    root: usize,
) -> Result<SceneMetrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(MrtError::invalid(format!(
            "{} predicted persons vs {} true persons",
            pred.len(),
            truth.len()
        )));
    }
    let available = pred.iter().map(Tensor::rows).min().unwrap_or(0);
    let mut horizons = Vec::new();
    for (seconds, steps) in horizon_steps(frame_rate, available) {
        let mut m = HorizonMetrics {
            seconds,
            steps,
            mpjpe: 0.0,
            root_error: 0.0,
            pose_error: 0.0,
        };
        for (p, t) in pred.iter().zip(truth) {
            m.mpjpe += mpjpe(p, t, steps)?;
            m.root_error += root_error(p, t, steps, root)?;
            m.pose_error += pose_error(p, t, steps, root)?;
        }
        let n = pred.len() as f64;
        m.mpjpe /= n;
        m.root_error /= n;
        m.pose_error /= n;
        horizons.push(m);
    }
    Ok(SceneMetrics {
        name: name.to_string(),
        persons: pred.len(),
        horizons,
    })
}

impl MetricReport {
    /// Person-weighted mean over scenes, for the horizons every scene has.
    pub fn from_scenes(scenes: Vec<SceneMetrics>) -> Self {
        let common = scenes.iter().map(|s| s.horizons.len()).min().unwrap_or(0);
        let total: usize = scenes.iter().map(|s| s.persons).sum();
        let corpus = (0..common)
            .map(|i| {
                let mut m = HorizonMetrics {
                    seconds: scenes[0].horizons[i].seconds,
                    steps: scenes[0].horizons[i].steps,
                    mpjpe: 0.0,
                    root_error: 0.0,
                    pose_error: 0.0,
                };
                for s in &scenes {
                    let w = s.persons as f64 / total as f64;
                    m.mpjpe += w * s.horizons[i].mpjpe;
                    m.root_error += w * s.horizons[i].root_error;
                    m.pose_error += w * s.horizons[i].pose_error;
                }
                m
            })
            .collect();
        MetricReport {
            units: "meters".into(),
            scenes,
            corpus,
        }
    }

    /// One row per (scene, horizon) plus `corpus` rows; every error appears
    /// in meters and in units of 0.1 m.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scene,horizon_s,steps,mpjpe_m,root_error_m,pose_error_m,mpjpe_dm,root_error_dm,pose_error_dm\n",
        );
        let rows = self
            .scenes
            .iter()
            .flat_map(|s| s.horizons.iter().map(move |h| (s.name.as_str(), h)))
            .chain(self.corpus.iter().map(|h| ("corpus", h)));
        for (name, h) in rows {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{},{},{}",
                h.seconds,
                h.steps,
                h.mpjpe,
                h.root_error,
                h.pose_error,
                h.mpjpe * 10.0,
                h.root_error * 10.0,
                h.pose_error * 10.0
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Short human-readable table in both unit conventions.
    pub fn summary(&self) -> String {
        let mut out = String::from(
            "horizon   MPJPE(m)  root(m)  pose(m) | MPJPE(0.1m) root(0.1m) pose(0.1m)\n",
        );
        for h in &self.corpus {
            let _ = writeln!(
                out,
                "{:>5}s  {:>9.4} {:>8.4} {:>8.4} | {:>11.3} {:>10.3} {:>10.3}",
                h.seconds,
                h.mpjpe,
                h.root_error,
                h.pose_error,
                h.mpjpe * 10.0,
                h.root_error * 10.0,
                h.pose_error * 10.0
            );
        }
        out
    }
}

/// Counts of start-to-end movement distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovementHistogram {
    pub label: String,
    /// `bins + 1` edges in meters.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl MovementHistogram {
    /// 50 uniform bins over `[0, max]`; the maximum lands in the last bin.
    /// An all-zero sample uses `[0, 1]` so the bins keep a positive width.
    pub fn from_distances(label: &str, distances: &[f64]) -> Result<Self> {
        if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(MrtError::invalid(
                "movement distances must be finite and >= 0",
            ));
        }
        let max = distances.iter().copied().fold(0.0, f64::max);
        let top = if max > 0.0 { max } else { 1.0 };
        let width = top / HISTOGRAM_BINS as f64;
        let edges = (0..=HISTOGRAM_BINS).map(|i| i as f64 * width).collect();
        let mut counts = vec![0; HISTOGRAM_BINS];
        for &d in distances {
            let bin = ((d / width) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
        Ok(MovementHistogram {
            label: label.to_string(),
            edges,
            counts,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# {}: {HISTOGRAM_BINS} uniform bins over [0, max observed] meters\nbin_left,bin_right,count\n",
            self.label
        );
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{c}", self.edges[i], self.edges[i + 1]);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Attention export

/// Decoder attention of one queried person at one layer, heads × memory
/// tokens, with the local and global segments normalized separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTable {
    pub person: usize,
    pub layer: usize,
    pub labels: Vec<TokenLabel>,
    pub matrix: Tensor,
}

impl AttentionTable {
    /// Columns belonging to `source`.
    pub fn segment(&self, source: TokenSource) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.source == source)
            .map(|(i, _)| i)
            .collect()
    }
}

fn normalize_segments(raw: &Tensor, labels: &[TokenLabel]) -> Tensor {
    let mut out = raw.clone();
    for source in [TokenSource::Local, TokenSource::Global] {
        let cols: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i].source == source)
            .collect();
        for r in 0..out.rows() {
            let total: f64 = cols.iter().map(|&c| raw.get(r, c)).sum();
            if total > 0.0 {
                for &c in &cols {
                    out.set(r, c, raw.get(r, c) / total);
                }
            }
        }
    }
    out
}

/// Tables for one layer (0 = first decoder layer) from per-person records.
pub fn attention_tables_from_records(
    records: &[Vec<AttentionRecord>],
    layer: usize,
) -> Result<Vec<AttentionTable>> {
    if records.is_empty() || records.iter().any(Vec::is_empty) {
        return Err(MrtError::Unsupported(
            "predictions carry no attention records".into(),
        ));
    }
    records
        .iter()
        .enumerate()
        .map(|(person, layers)| {
            let rec = layers.get(layer).ok_or_else(|| {
                MrtError::invalid(format!(
                    "layer {layer} requested but only {} decoder layers were recorded",
                    layers.len()
                ))
            })?;
            if rec.labels.len() != rec.key_count() {
                return Err(MrtError::Unsupported(
                    "attention record has no token labels".into(),
                ));
            }
            let raw = rec.head_matrix()?;
            Ok(AttentionTable {
                person,
                layer,
                labels: rec.labels.clone(),
                matrix: normalize_segments(&raw, &rec.labels),
            })
        })
        .collect()
}

pub fn attention_tables(chunks: &[PredictionChunk], layer: usize) -> Result<Vec<AttentionTable>> {
    let records: Vec<Vec<AttentionRecord>> = chunks.iter().map(|c| c.attention.clone()).collect();
    attention_tables_from_records(&records, layer)
}

fn label_name(l: &TokenLabel) -> String {
    let src = match l.source {
        TokenSource::Local => "local",
        TokenSource::Global => "global",
    };
    format!("{src}:p{}:t{}", l.person, l.time)
}

/// CSV with a label header row and one row per (person, head).
pub fn attention_csv(tables: &[AttentionTable]) -> String {
    let mut out = String::new();
    if let Some(first) = tables.first() {
        out.push_str("person,layer,head");
        for l in &first.labels {
            out.push(',');
            out.push_str(&label_name(l));
        }
        out.push('\n');
    }
    for t in tables {
        for h in 0..t.matrix.rows() {
            let _ = write!(out, "{},{},{h}", t.person, t.layer);
            for v in t.matrix.row(h) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

/// Writes the attention CSV for one layer of a scene's chunks.
pub fn export_attention(
    chunks: &[PredictionChunk],
    layer: usize,
    path: impl AsRef<Path>,
) -> Result<Vec<AttentionTable>> {
    let tables = attention_tables(chunks, layer)?;
    std::fs::write(path, attention_csv(&tables))?;
    Ok(tables)
}

/// Cosine similarity between persons' flattened global-segment attention.
/// Global columns are keyed by (person, time) so every table lines up.
pub fn attention_similarity(tables: &[AttentionTable]) -> Tensor {
    let vectors: Vec<Vec<f64>> = tables
        .iter()
        .map(|t| {
            let cols = t.segment(TokenSource::Global);
            (0..t.matrix.rows())
                .flat_map(|h| cols.iter().map(move |&c| (h, c)))
                .map(|(h, c)| t.matrix.get(h, c))
                .collect()
        })
        .collect();
    let n = vectors.len();
    let mut sim = Tensor::zeros([n.max(1), n.max(1)]);
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            let ni = vectors[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            let nj = vectors[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            sim.set(
                i,
                j,
                if ni > 0.0 && nj > 0.0 {
                    dot / (ni * nj)
                } else {
                    0.0
                },
            );
        }
    }
    sim
}

pub fn similarity_csv(sim: &Tensor) -> String {
    let n = sim.rows();
    let mut out = String::from("person");
    for j in 0..n {
        let _ = write!(out, ",p{j}");
    }
    out.push('\n');
    for i in 0..n {
        let _ = write!(out, "p{i}");
        for v in sim.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

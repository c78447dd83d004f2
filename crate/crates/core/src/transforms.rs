//! Temporal DCT/IDCT and the temporal and spatial positional encodings.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{MrtError, Result};
use crate::numerics::Tensor;

/// Orthonormal DCT-II basis for sequences of a fixed length.
///
/// Row `k` of the basis holds coefficient `k`'s weights over time, so
/// `basis · seq` transforms every channel (column) of a `n × c` sequence and
/// the inverse is the transpose.
#[derive(Debug)]
pub struct DctPlan {
    length: usize,
    basis: Tensor,
    inverse: Tensor,
}

impl DctPlan {
    pub fn new(length: usize) -> Result<Self> {
        if length == 0 {
            return Err(MrtError::invalid("DCT length must be >= 1"));
        }
        let n = length as f64;
        let mut basis = Tensor::zeros([length, length]);
        for k in 0..length {
            let alpha = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            for t in 0..length {
                let angle = PI * (2 * t + 1) as f64 * k as f64 / (2.0 * n);
                basis.set(k, t, alpha * angle.cos());
            }
        }
        let inverse = basis.transpose()?;
        Ok(DctPlan {
            length,
            basis,
            inverse,
        })
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn basis(&self) -> &Tensor {
        &self.basis
    }

    pub fn inverse_basis(&self) -> &Tensor {
        &self.inverse
    }

    fn check(&self, op: &'static str, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.shape()[0] != self.length {
            return Err(MrtError::Dimension {
                op,
                lhs: vec![self.length, self.length],
                rhs: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, seq: &Tensor) -> Result<Tensor> {
        self.check("dct_forward", seq)?;
        self.basis.matmul(seq)
    }

    pub fn inverse(&self, coeffs: &Tensor) -> Result<Tensor> {
        self.check("dct_inverse", coeffs)?;
        self.inverse.matmul(coeffs)
    }
}

static PLANS: OnceLock<RwLock<HashMap<usize, Arc<DctPlan>>>> = OnceLock::new();

/// Shared plan for a sequence length, built once per length.
pub fn dct_plan(length: usize) -> Result<Arc<DctPlan>> {
    let cache = PLANS.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(plan) = cache.read().expect("plan cache poisoned").get(&length) {
        return Ok(plan.clone());
    }
    let plan = Arc::new(DctPlan::new(length)?);
    let mut w = cache.write().expect("plan cache poisoned");
    Ok(w.entry(length).or_insert(plan).clone())
}

/// DCT-II along the time axis (rows) of a `n × c` sequence.
pub fn dct_forward(seq: &Tensor) -> Result<Tensor> {
    dct_plan(seq.shape()[0])?.forward(seq)
}

/// Inverse of [`dct_forward`].
pub fn dct_inverse(coeffs: &Tensor) -> Result<Tensor> {
    dct_plan(coeffs.shape()[0])?.inverse(coeffs)
}

/// Sinusoidal table: `PE(p, 2i) = sin(p / 10000^(2i/d))`, `PE(p, 2i+1) = cos(...)`.
pub fn temporal_pe(length: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(MrtError::config(format!(
            "positional encoding width must be even, got {dim}"
        )));
    }
    if length == 0 {
        return Err(MrtError::invalid("positional encoding length must be >= 1"));
    }
    let mut pe = Tensor::zeros([length, dim]);
    for pos in 0..length {
        for i in 0..dim / 2 {
            let freq = 10000f64.powf(2.0 * i as f64 / dim as f64);
            let angle = pos as f64 / freq;
            pe.set(pos, 2 * i, angle.sin());
            pe.set(pos, 2 * i + 1, angle.cos());
        }
    }
    Ok(pe)
}

/// Query-relative spatial encoding for every (person, time) pose.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeMatrix {
    /// `N × k` values in `(0, 1]`.
    pub values: Tensor,
    pub queried_pose: Vec<f64>,
}

/// `exp(-‖x_{n,t} - q‖² / 3J)` for a `N × k × 3J` pose tensor.
pub fn spatial_pe(all_poses: &Tensor, query_pose: &[f64]) -> Result<SpeMatrix> {
    let shape = all_poses.shape();
    if shape.len() != 3 || shape[2] != query_pose.len() {
        return Err(MrtError::Dimension {
            op: "spatial_pe",
            lhs: shape.to_vec(),
            rhs: vec![query_pose.len()],
        });
    }
    let width = query_pose.len() as f64;
    let data = all_poses
        .data()
        .chunks(query_pose.len())
        .map(|pose| {
            let d2: f64 = pose
                .iter()
                .zip(query_pose)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (-d2 / width).exp()
        })
        .collect();
    Ok(SpeMatrix {
        values: Tensor::new([shape[0], shape[1]], data)?,
        queried_pose: query_pose.to_vec(),
    })
}

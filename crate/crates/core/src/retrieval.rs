//! Scene retrieval, query fusion, entropy-driven k and content retrieval.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::HyperParams;
use crate::error::{EqaError, Result};
use crate::memory::{MemoryStore, VectorRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalParams {
    pub top_k_scene: usize,
    pub alpha_scene: f64,
    pub alpha_e: f64,
    pub alpha_s: f64,
    pub k_min: usize,
    pub beta: f64,
    pub max_retrieval_num: usize,
}

impl RetrievalParams {
    pub fn from_params(p: &HyperParams) -> Self {
        let m = &p.memory;
        Self {
            top_k_scene: m.top_k_scene,
            alpha_scene: m.alpha_scene,
            alpha_e: m.alpha_e,
            alpha_s: m.alpha_s,
            k_min: m.k_min,
            beta: m.beta,
            max_retrieval_num: p.rag.max_retrieval_num,
        }
    }
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self::from_params(&HyperParams::default())
    }
}

/// Normalized Shannon entropy of the magnitude distribution of `f`.
pub fn entropy(f: &[f64]) -> Result<f64> {
    let total: f64 = f.iter().map(|x| x.abs()).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(EqaError::InvalidInput("entropy of a zero or non-finite vector".into()));
    }
    if f.len() < 2 {
        return Ok(0.0);
    }
    let h: f64 = f
        .iter()
        .map(|x| x.abs() / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok((h / (f.len() as f64).ln()).clamp(0.0, 1.0))
}

fn unit(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// `normalize(concat(obs, text))`.
pub fn fuse_query(f_obs: &[f32], f_text: &[f32]) -> Result<Vec<f64>> {
    if f_obs.len() != f_text.len() {
        return Err(EqaError::Dimension {
            expected: f_obs.len(),
            got: f_text.len(),
        });
    }
    let mut v = unit(f_obs);
    v.extend(unit(f_text));
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return Err(EqaError::InvalidInput("cannot fuse zero vectors".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Brings a fused query down to record dimension: the mean of its two
/// halves, renormalized.
pub fn reduce_query(f_q: &[f64]) -> Result<Vec<f64>> {
    if f_q.len() % 2 != 0 || f_q.is_empty() {
        return Err(EqaError::InvalidInput(format!("fused query of odd length {}", f_q.len())));
    }
    let d = f_q.len() / 2;
    let mut v: Vec<f64> = (0..d).map(|i| (f_q[i] + f_q[i + d]) / 2.0).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    Ok(v)
}

pub fn dynamic_k_for_entropy(h: f64, params: &RetrievalParams) -> usize {
    let k = (params.k_min as f64 + params.beta * h).ceil();
    let hi = params.max_retrieval_num.max(params.k_min);
    (k.max(0.0) as usize).clamp(params.k_min, hi)
}

pub fn dynamic_k(f_q: &[f64], params: &RetrievalParams) -> Result<usize> {
    Ok(dynamic_k_for_entropy(entropy(f_q)?, params))
}

pub fn cosine(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y as f64).sum()
}

pub fn euclidean(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y as f64).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub index: u64,
    pub similarity: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentResult {
    pub entropy: f64,
    pub k: usize,
    pub hits: Vec<Hit>,
}

/// Gated top-k over the live records of one scene.
///
/// A record qualifies when `‖q′ − f‖ < α_e(1 + H)` and `cos(q′, f) > α_s`,
/// where `q′` is the reduced query and `H` the entropy of the fused query.
/// Qualifiers are ranked by cosine, ties by lower index.
pub fn content_retrieve(
    store: &MemoryStore,
    scene_id: u32,
    f_q: &[f64],
    params: &RetrievalParams,
) -> Result<ContentResult> {
    let h = entropy(f_q)?;
    let k = dynamic_k_for_entropy(h, params);
    let q = reduce_query(f_q)?;
    if q.len() != store.dim() {
        return Err(EqaError::Dimension {
            expected: store.dim(),
            got: q.len(),
        });
    }
    let radius = params.alpha_e * (1.0 + h);
    let mut hits: Vec<Hit> = store
        .live(scene_id)
        .filter_map(|r| {
            let similarity = cosine(&q, &r.embedding);
            let distance = euclidean(&q, &r.embedding);
            (distance < radius && similarity > params.alpha_s).then_some(Hit {
                index: r.index,
                similarity,
                distance,
            })
        })
        .collect();
    hits.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.index.cmp(&b.index)));
    hits.truncate(k);
    Ok(ContentResult { entropy: h, k, hits })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SceneMatch {
    Known(u32),
    Unknown,
}

/// Votes among the `top_k_scene` most similar live records above
/// `α_scene`; the most frequent scene wins, ties to the lowest id.
pub fn scene_retrieve(store: &MemoryStore, f_obs: &[f32], params: &RetrievalParams) -> Result<SceneMatch> {
    if store.is_empty() {
        return Ok(SceneMatch::Unknown);
    }
    if f_obs.len() != store.dim() {
        return Err(EqaError::Dimension {
            expected: store.dim(),
            got: f_obs.len(),
        });
    }
    let q = unit(f_obs);
    let mut scored: Vec<(&VectorRecord, f64)> = store
        .records()
        .iter()
        .filter(|r| !r.superseded)
        .map(|r| (r, cosine(&q, &r.embedding)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.index.cmp(&b.0.index)));
    let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
    for (r, s) in scored.into_iter().take(params.top_k_scene) {
        if s > params.alpha_scene {
            *votes.entry(r.scene_id).or_default() += 1;
        }
    }
    // lower ids rank higher among equal counts
    Ok(votes
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(SceneMatch::Unknown, |(id, _)| SceneMatch::Known(id)))
}

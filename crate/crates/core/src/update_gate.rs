//! Admission rules for new local memories: pose novelty, observation
//! dissimilarity and an unobstructed view.

use std::collections::HashMap;

use image::RgbImage;

use crate::config::HyperParams;
use crate::error::{EqaError, Result};
use crate::geometry::{angle_between, Pose};
use crate::memory::MemoryStore;
use crate::retrieval::cosine;

/// A channel value below this counts as black.
pub const BLACK_LEVEL: u8 = 8;
const SSIM_WINDOW: usize = 8;
const SSIM_STRIDE: usize = 4;
const L: f64 = 255.0;
const C1: f64 = (0.01 * L) * (0.01 * L);
const C2: f64 = (0.03 * L) * (0.03 * L);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateParams {
    pub beta_p: f64,
    /// Radians.
    pub beta_r: f64,
    pub alpha: f64,
    pub sim_threshold: f64,
    pub black_ratio_max: f64,
}

impl UpdateParams {
    pub fn from_params(p: &HyperParams) -> Self {
        let m = &p.memory;
        Self {
            beta_p: m.beta_p,
            beta_r: m.beta_r_deg.to_radians(),
            alpha: m.alpha,
            sim_threshold: m.sim_threshold,
            black_ratio_max: m.black_ratio_max,
        }
    }
}

impl Default for UpdateParams {
    fn default() -> Self {
        Self::from_params(&HyperParams::default())
    }
}

/// Images and image embeddings of stored local entries, keyed by record
/// index. Only the current process has them; a loaded bank starts empty.
#[derive(Debug, Clone, Default)]
pub struct ObservationCache {
    entries: HashMap<u64, (RgbImage, Vec<f32>)>,
}

impl ObservationCache {
    pub fn insert(&mut self, index: u64, image: RgbImage, embedding: Vec<f32>) {
        self.entries.insert(index, (image, embedding));
    }

    pub fn get(&self, index: u64) -> Option<(&RgbImage, &[f32])> {
        self.entries.get(&index).map(|(i, e)| (i, e.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn stored_poses(store: &MemoryStore, scene_id: u32) -> impl Iterator<Item = (u64, Pose)> + '_ {
    store
        .live(scene_id)
        .filter_map(|r| r.payload.as_local().map(|e| (r.index, e.state.pose)))
}

/// True iff both the nearest stored position is farther than `β_p` and the
/// nearest stored heading differs by more than `β_r`. Vacuously true on an
/// empty partition.
pub fn novelty_gate(pose: &Pose, store: &MemoryStore, scene_id: u32, params: &UpdateParams) -> bool {
    let mut min_d = f64::INFINITY;
    let mut min_a = f64::INFINITY;
    for (_, p) in stored_poses(store, scene_id) {
        let d = ((pose.position[0] - p.position[0]).powi(2)
            + (pose.position[1] - p.position[1]).powi(2)
            + (pose.position[2] - p.position[2]).powi(2))
        .sqrt();
        min_d = min_d.min(d);
        min_a = min_a.min(angle_between(pose.yaw, p.yaw));
    }
    min_d > params.beta_p && min_a > params.beta_r
}

fn gray(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| 0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64)
        .collect()
}

fn window_starts(n: usize, w: usize) -> Vec<usize> {
    if n <= w {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..=n - w).step_by(SSIM_STRIDE).collect();
    if *v.last().unwrap() != n - w {
        v.push(n - w);
    }
    v
}

/// Mean SSIM over 8×8 uniform windows (stride 4) of the luma channel.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(EqaError::InvalidInput(format!(
            "ssim of {:?} and {:?} images",
            a.dimensions(),
            b.dimensions()
        )));
    }
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w == 0 || h == 0 {
        return Err(EqaError::InvalidInput("ssim of an empty image".into()));
    }
    let (ga, gb) = (gray(a), gray(b));
    let (ww, wh) = (SSIM_WINDOW.min(w), SSIM_WINDOW.min(h));
    let n = (ww * wh) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in window_starts(h, wh) {
        for x0 in window_starts(w, ww) {
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in y0..y0 + wh {
                for x in x0..x0 + ww {
                    sa += ga[y * w + x];
                    sb += gb[y * w + x];
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in y0..y0 + wh {
                for x in x0..x0 + ww {
                    let (da, db) = (ga[y * w + x] - ma, gb[y * w + x] - mb);
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            let (va, vb, cov) = (va / n, vb / n, cov / n);
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `α·SSIM + (1−α)·cos`.
pub fn blended_similarity(o_i: &RgbImage, o_j: &RgbImage, f_i: &[f32], f_j: &[f32], alpha: f64) -> Result<f64> {
    let s = ssim(o_i, o_j)?;
    let fi: Vec<f64> = f_i.iter().map(|&x| x as f64).collect();
    Ok(alpha * s + (1.0 - alpha) * cosine(&fi, f_j))
}

pub fn black_fraction(img: &RgbImage) -> f64 {
    let n = (img.width() as usize * img.height() as usize).max(1);
    img.pixels().filter(|p| p.0.iter().all(|&c| c < BLACK_LEVEL)).count() as f64 / n as f64
}

/// True when the black share of the image is at most `black_ratio_max`.
pub fn fov_gate(obs: &RgbImage, params: &UpdateParams) -> bool {
    black_fraction(obs) <= params.black_ratio_max
}

/// Highest blended similarity between the observation and any stored local
/// entry. Entries whose image is not cached compare by embedding only.
pub fn max_similarity(
    obs: &RgbImage,
    f_obs: &[f32],
    store: &MemoryStore,
    scene_id: u32,
    cache: &ObservationCache,
    params: &UpdateParams,
) -> Result<f64> {
    let fo: Vec<f64> = f_obs.iter().map(|&x| x as f64).collect();
    let mut best = f64::NEG_INFINITY;
    for r in store.live(scene_id).filter(|r| r.payload.as_local().is_some()) {
        let s = match cache.get(r.index) {
            Some((img, emb)) if img.dimensions() == obs.dimensions() => {
                blended_similarity(obs, img, f_obs, emb, params.alpha)?
            }
            _ => cosine(&fo, &r.embedding),
        };
        best = best.max(s);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateOutcome {
    Accepted,
    NotNovel,
    TooSimilar,
    Obstructed,
}

/// The three rules in order, stopping at the first that fails.
pub fn evaluate(
    pose: &Pose,
    obs: &RgbImage,
    f_obs: &[f32],
    store: &MemoryStore,
    scene_id: u32,
    cache: &ObservationCache,
    params: &UpdateParams,
) -> Result<GateOutcome> {
    if !novelty_gate(pose, store, scene_id, params) {
        return Ok(GateOutcome::NotNovel);
    }
    if max_similarity(obs, f_obs, store, scene_id, cache, params)? >= params.sim_threshold {
        return Ok(GateOutcome::TooSimilar);
    }
    if !fov_gate(obs, params) {
        return Ok(GateOutcome::Obstructed);
    }
    Ok(GateOutcome::Accepted)
}

pub fn should_update(
    pose: &Pose,
    obs: &RgbImage,
    f_obs: &[f32],
    store: &MemoryStore,
    scene_id: u32,
    cache: &ObservationCache,
    params: &UpdateParams,
) -> Result<bool> {
    Ok(evaluate(pose, obs, f_obs, store, scene_id, cache, params)? == GateOutcome::Accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{build_local_entry, MemoryPayload, StateNote};
    use image::Rgb;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn local(step: i64, pose: Pose) -> MemoryPayload {
        MemoryPayload::Local(
            build_local_entry(step, "o", vec![], None, "", StateNote { pose, space: String::new() }).unwrap(),
        )
    }

    fn store_with(poses: &[Pose]) -> MemoryStore {
        let mut s = MemoryStore::new(2);
        for (i, p) in poses.iter().enumerate() {
            s.insert_embedded(local(i as i64, *p), 0, vec![1.0, 0.0]).unwrap();
        }
        s
    }

    fn noise(seed: u64, w: u32, h: u32) -> RgbImage {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
    }

    #[test]
    fn novelty_cases() {
        let p = UpdateParams { beta_p: 1.0, beta_r: PI / 6.0, ..Default::default() };
        assert!(novelty_gate(&Pose::new(0.0, 0.0, 0.0), &MemoryStore::new(2), 0, &p));
        let s = store_with(&[Pose::new(0.0, 0.0, 0.0), Pose::new(5.0, 0.0, PI / 2.0)]);
        assert!(!novelty_gate(&Pose::new(0.0, 0.0, 0.0), &s, 0, &p));
        // 2 m and 90° away from both
        let q = Pose::new(2.0, 2.0, -PI / 2.0);
        let d_min = [(0.0, 0.0), (5.0, 0.0)]
            .iter()
            .map(|(x, y): &(f64, f64)| ((2.0 - x).powi(2) + (2.0 - y).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(d_min > 1.0);
        assert!(novelty_gate(&q, &s, 0, &p));
        // far away but same heading as a stored pose
        assert!(!novelty_gate(&Pose::new(20.0, 20.0, 0.0), &s, 0, &p));
        // other scenes do not count
        assert!(novelty_gate(&Pose::new(0.0, 0.0, 0.0), &s, 1, &p));
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let a = RgbImage::from_pixel(16, 16, Rgb([64, 64, 64]));
        let b = RgbImage::from_pixel(16, 16, Rgb([192, 192, 192]));
        // luma weights sum to 1, so gray levels are the channel values
        let (mx, my) = (64.0f64, 192.0f64);
        let expected = (2.0 * mx * my + C1) / (mx * mx + my * my + C1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
        assert!(ssim(&a, &RgbImage::new(8, 8)).is_err());
    }

    #[test]
    fn blend_endpoints() {
        let a = noise(1, 16, 12);
        let b = noise(2, 16, 12);
        let (fi, fj) = ([0.6f32, 0.8], [1.0f32, 0.0]);
        let s = ssim(&a, &b).unwrap();
        assert_eq!(blended_similarity(&a, &b, &fi, &fj, 1.0).unwrap(), s);
        assert!((blended_similarity(&a, &b, &fi, &fj, 0.0).unwrap() - 0.6f32 as f64).abs() < 1e-12);
        assert!((blended_similarity(&a, &a, &[1.0], &[0.0], 0.5).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn fov_cases() {
        let p = UpdateParams { black_ratio_max: 0.5, ..Default::default() };
        assert!(!fov_gate(&RgbImage::new(4, 4), &p));
        assert!(fov_gate(&RgbImage::from_pixel(4, 4, Rgb([8, 8, 8])), &p));
        let half = RgbImage::from_fn(4, 4, |x, _| if x < 2 { Rgb([0, 0, 0]) } else { Rgb([100, 0, 0]) });
        assert_eq!(black_fraction(&half), 0.5);
        assert!(fov_gate(&half, &p));
    }

    #[test]
    fn gate_order_and_outcomes() {
        let p = UpdateParams::default();
        let img = noise(3, 16, 12);
        let empty = MemoryStore::new(2);
        let cache = ObservationCache::default();
        assert!(should_update(&Pose::new(0.0, 0.0, 0.0), &img, &[1.0, 0.0], &empty, 0, &cache, &p).unwrap());
        // duplicate pose fails first even with a black image
        let s = store_with(&[Pose::new(0.0, 0.0, 0.0)]);
        let black = RgbImage::new(16, 12);
        assert_eq!(
            evaluate(&Pose::new(0.0, 0.0, 0.0), &black, &[0.0, 1.0], &s, 0, &cache, &p).unwrap(),
            GateOutcome::NotNovel
        );
        // novel pose, identical image and embedding
        let mut cache = ObservationCache::default();
        cache.insert(0, img.clone(), vec![1.0, 0.0]);
        let far = Pose::new(5.0, 5.0, PI / 2.0);
        assert_eq!(evaluate(&far, &img, &[1.0, 0.0], &s, 0, &cache, &p).unwrap(), GateOutcome::TooSimilar);
        // novel and dissimilar but obstructed
        assert_eq!(evaluate(&far, &black, &[0.0, 1.0], &s, 0, &cache, &p).unwrap(), GateOutcome::Obstructed);
        assert_eq!(evaluate(&far, &noise(9, 16, 12), &[0.0, 1.0], &s, 0, &cache, &p).unwrap(), GateOutcome::Accepted);
    }

    #[test]
    fn uncached_entries_compare_by_embedding() {
        let p = UpdateParams::default();
        let s = store_with(&[Pose::new(0.0, 0.0, 0.0)]);
        let img = noise(4, 16, 12);
        let sim = max_similarity(&img, &[1.0, 0.0], &s, 0, &ObservationCache::default(), &p).unwrap();
        assert!((sim - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ssim_identity_and_symmetry(sa in any::<u64>(), sb in any::<u64>(), w in 1u32..24, h in 1u32..24) {
            let a = noise(sa, w, h);
            let b = noise(sb, w, h);
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        }

        #[test]
        fn blend_monotone_in_cosine(alpha in 0.0f64..1.0, c1 in -1.0f64..1.0, c2 in -1.0f64..1.0) {
            let img = noise(5, 8, 8);
            let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            let v = |c: f64| [c as f32, (1.0 - c * c).max(0.0).sqrt() as f32];
            let b_lo = blended_similarity(&img, &img, &[1.0, 0.0], &v(lo), alpha).unwrap();
            let b_hi = blended_similarity(&img, &img, &[1.0, 0.0], &v(hi), alpha).unwrap();
            prop_assert!(b_lo <= b_hi + 1e-6);
        }
    }
}

//! Hyperparameters. The TOML layout follows the published hyperparameter
//! table (section and key names verbatim where the table names them);
//! symbols the table leaves unnamed live under `[memory]` and `[tsdf]`.
//! Keys that are accepted by the table but not consulted here are ignored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EqaError, Result};
use crate::geometry::CameraModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub seed: u64,
    pub rag: RagParams,
    pub camera: CameraParams,
    pub navigation: NavigationParams,
    pub planner: PlannerParams,
    pub visual_prompt: VisualPromptParams,
    pub memory: MemoryParams,
    pub tsdf: TsdfParams,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            seed: 42,
            rag: RagParams::default(),
            camera: CameraParams::default(),
            navigation: NavigationParams::default(),
            planner: PlannerParams::default(),
            visual_prompt: VisualPromptParams::default(),
            memory: MemoryParams::default(),
            tsdf: TsdfParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RagParams {
    pub use_rag: bool,
    /// Encoder used for text: `mock-semantic` or `mock-hash`.
    pub text: String,
    pub visual: String,
    /// Dimension of the fused (image ‖ text) query; records use half of it.
    pub dim: usize,
    pub max_retrieval_num: usize,
}

impl Default for RagParams {
    fn default() -> Self {
        Self {
            use_rag: true,
            text: "mock-semantic".into(),
            visual: "mock-semantic".into(),
            dim: 1536,
            max_retrieval_num: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraParams {
    pub camera_height: f64,
    pub camera_tilt_deg: f64,
    pub img_width: usize,
    pub img_height: usize,
    pub hfov: f64,
    pub tsdf_grid_size: f64,
    pub margin_w_ratio: f64,
    pub margin_h_ratio: f64,
    pub max_depth: f64,
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            camera_height: 1.5,
            camera_tilt_deg: -30.0,
            img_width: 64,
            img_height: 48,
            hfov: 120.0,
            tsdf_grid_size: 0.1,
            margin_w_ratio: 0.25,
            margin_h_ratio: 0.6,
            max_depth: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavigationParams {
    pub max_step_room_size_ratio: f64,
    /// View-rejection ratio applied when settling at a navigation point.
    pub black_pixel_ratio: f64,
    pub min_random_init_steps: usize,
}

impl Default for NavigationParams {
    fn default() -> Self {
        Self {
            max_step_room_size_ratio: 3.0,
            black_pixel_ratio: 0.7,
            min_random_init_steps: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    /// Gaussian smoothing of the semantic weight, in cells.
    pub smooth_sigma: f64,
    pub min_dist_from_cur: f64,
    pub max_dist_from_cur: f64,
    pub frontier_spacing: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            smooth_sigma: 5.0,
            min_dist_from_cur: 0.5,
            max_dist_from_cur: 3.0,
            frontier_spacing: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisualPromptParams {
    pub cluster_threshold: f64,
    pub num_prompt_points: usize,
    pub min_points_clustering: usize,
    pub point_min_dist: f64,
    pub point_max_dist: f64,
    pub min_prompt_points: usize,
    pub circle_radius: u32,
}

impl Default for VisualPromptParams {
    fn default() -> Self {
        Self {
            cluster_threshold: 1.0,
            num_prompt_points: 3,
            min_points_clustering: 3,
            point_min_dist: 2.0,
            point_max_dist: 10.0,
            min_prompt_points: 2,
            circle_radius: 18,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryParams {
    /// SSIM weight in the blended observation similarity.
    pub alpha: f64,
    pub alpha_e: f64,
    pub alpha_s: f64,
    pub alpha_scene: f64,
    pub top_k_scene: usize,
    pub beta: f64,
    pub k_min: usize,
    pub beta_p: f64,
    pub beta_r_deg: f64,
    pub sim_threshold: f64,
    pub black_ratio_max: f64,
    /// Stop when the mapped confidence is at least this value.
    pub gamma: f64,
    pub gamma_s: f64,
}

impl Default for MemoryParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            alpha_e: 0.9,
            alpha_s: 0.5,
            alpha_scene: 0.8,
            top_k_scene: 5,
            beta: 8.0,
            k_min: 2,
            beta_p: 1.0,
            beta_r_deg: 30.0,
            sim_threshold: 0.85,
            black_ratio_max: 0.5,
            gamma: 0.5,
            gamma_s: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsdfParams {
    /// Truncation distance in voxel edges.
    pub truncation_voxels: f64,
    pub weight_cap: f32,
    pub max_voxels: usize,
}

impl Default for TsdfParams {
    fn default() -> Self {
        Self {
            truncation_voxels: 3.0,
            weight_cap: 100.0,
            max_voxels: 40_000_000,
        }
    }
}

fn in_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(EqaError::Config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(EqaError::Config(format!("{name} must be positive, got {v}")))
    }
}

impl HyperParams {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: Self = toml::from_str(s).map_err(|e| EqaError::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| EqaError::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("hyperparameters always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        self.camera_model().validate()?;
        let m = &self.memory;
        in_unit("alpha", m.alpha)?;
        in_unit("alpha_s", m.alpha_s)?;
        in_unit("alpha_scene", m.alpha_scene)?;
        in_unit("sim_threshold", m.sim_threshold)?;
        in_unit("black_ratio_max", m.black_ratio_max)?;
        in_unit("gamma", m.gamma)?;
        in_unit("black_pixel_ratio", self.navigation.black_pixel_ratio)?;
        in_unit("margin_w_ratio", self.camera.margin_w_ratio)?;
        in_unit("margin_h_ratio", self.camera.margin_h_ratio)?;
        if self.camera.margin_w_ratio >= 0.5 || self.camera.margin_h_ratio >= 1.0 {
            return Err(EqaError::Config(
                "field-of-view margins leave no usable pixels".into(),
            ));
        }
        if m.alpha_e < 0.0 || m.beta < 0.0 {
            return Err(EqaError::Config("alpha_e and beta must be non-negative".into()));
        }
        if m.k_min == 0 || m.k_min > self.rag.max_retrieval_num {
            return Err(EqaError::Config(format!(
                "k_min must lie in [1, max_retrieval_num={}], got {}",
                self.rag.max_retrieval_num, m.k_min
            )));
        }
        if m.top_k_scene == 0 {
            return Err(EqaError::Config("top_k_scene must be at least 1".into()));
        }
        positive("gamma_s", m.gamma_s)?;
        positive("beta_p", m.beta_p)?;
        positive("beta_r_deg", m.beta_r_deg)?;
        positive("tsdf_grid_size", self.camera.tsdf_grid_size)?;
        positive("max_step_room_size_ratio", self.navigation.max_step_room_size_ratio)?;
        positive("smooth_sigma", self.planner.smooth_sigma)?;
        positive("truncation_voxels", self.tsdf.truncation_voxels)?;
        if !(self.tsdf.weight_cap >= 1.0) {
            return Err(EqaError::Config("weight_cap must be at least 1".into()));
        }
        if self.rag.dim == 0 || self.rag.dim % 2 != 0 {
            return Err(EqaError::Config(format!(
                "rag dim must be even and positive, got {}",
                self.rag.dim
            )));
        }
        let p = &self.planner;
        if !(p.min_dist_from_cur >= 0.0 && p.max_dist_from_cur > p.min_dist_from_cur) {
            return Err(EqaError::Config(
                "need 0 <= min_dist_from_cur < max_dist_from_cur".into(),
            ));
        }
        let v = &self.visual_prompt;
        if !(v.point_min_dist >= 0.0 && v.point_max_dist > v.point_min_dist) {
            return Err(EqaError::Config("need 0 <= point_min_dist < point_max_dist".into()));
        }
        if v.num_prompt_points == 0 || v.num_prompt_points > 26 || v.min_prompt_points > v.num_prompt_points {
            return Err(EqaError::Config(
                "need 1 <= min_prompt_points <= num_prompt_points <= 26".into(),
            ));
        }
        Ok(())
    }

    pub fn camera_model(&self) -> CameraModel {
        CameraModel {
            mount_height: self.camera.camera_height,
            tilt_deg: self.camera.camera_tilt_deg,
            hfov_deg: self.camera.hfov,
            image_width: self.camera.img_width,
            image_height: self.camera.img_height,
            max_depth: self.camera.max_depth,
        }
    }

    /// Record embedding dimension (half the fused query dimension).
    pub fn record_dim(&self) -> usize {
        self.rag.dim / 2
    }

    pub fn voxel_size(&self) -> f64 {
        self.camera.tsdf_grid_size
    }

    /// Hard step bound for a scene of the given floor area.
    pub fn max_steps(&self, area_m2: f64) -> usize {
        ((self.navigation.max_step_room_size_ratio * area_m2.max(0.0).sqrt()).ceil() as usize).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        HyperParams::default().validate().unwrap();
        assert_eq!(HyperParams::default().record_dim(), 768);
    }

    #[test]
    fn toml_roundtrip_and_partial_override() {
        let p = HyperParams::default();
        let back = HyperParams::from_toml_str(&p.to_toml_string()).unwrap();
        assert_eq!(p, back);

        let q = HyperParams::from_toml_str(
            "seed = 7\n[visual_prompt]\nnum_prompt_points = 4\n[planner]\ndist_T = 10\n",
        )
        .unwrap();
        assert_eq!(q.seed, 7);
        assert_eq!(q.visual_prompt.num_prompt_points, 4);
        assert_eq!(q.visual_prompt.point_min_dist, 2.0);
    }

    #[test]
    fn out_of_range_rejected() {
        let mut p = HyperParams::default();
        p.memory.alpha = 1.5;
        assert!(p.validate().is_err());
        let mut p = HyperParams::default();
        p.memory.k_min = 11;
        assert!(p.validate().is_err());
        let mut p = HyperParams::default();
        p.rag.dim = 7;
        assert!(p.validate().is_err());
    }

    #[test]
    fn max_steps_formula() {
        let p = HyperParams::default();
        assert_eq!(p.max_steps(16.0), 12);
        assert_eq!(p.max_steps(60.0), 24); // ceil(3 * 7.746)
    }
}

//! Run configuration: a TOML file with one section per subsystem,
//! mirroring the registration framework parameter table. Unknown keys
//! are rejected.

use lungwarp_core::analysis::{HUBER_DELTA, DEFAULT_RATIO_FLOOR};
use lungwarp_core::objective::DEFAULT_EPSILON_VAR;
use lungwarp_core::optimize::{
    AffineSchedule, ConvergenceRule, Modality, PipelineConfig,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub modality: Modality,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    pub nonrigid: Nonrigid,
    #[serde(default)]
    pub affine: Affine,
    #[serde(default)]
    pub analysis: Analysis,
    #[serde(default)]
    pub sweep: Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    /// Pad to this square size before anything else; 0 pads to the
    /// larger input dimension.
    #[serde(default)]
    pub pad_to: usize,
    /// Manual horizontal shift of the moving image, px.
    #[serde(default)]
    pub shift_px: i64,
    /// Resolution pyramid depth.
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Extra half-resolution steps applied to both images up front.
    #[serde(default)]
    pub downsample_steps: usize,
}

fn default_levels() -> usize {
    4
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing { pad_to: 0, shift_px: 0, levels: 4, downsample_steps: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Nonrigid {
    pub stride: f64,
    pub alpha: f64,
    /// LNCC kernel per pyramid level, coarse to fine.
    pub kernels: Vec<usize>,
    pub lr: f64,
    pub max_steps: usize,
    pub window: usize,
    pub threshold_factor: f64,
    #[serde(default = "default_epsilon_var")]
    pub epsilon_var: f64,
}

fn default_epsilon_var() -> f64 {
    DEFAULT_EPSILON_VAR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Affine {
    /// Optimization steps per level, coarse to fine.
    pub steps: Vec<usize>,
    pub lr: f64,
    pub roi_dilation_px: f64,
    pub roi_concavity: f64,
}

impl Default for Affine {
    fn default() -> Self {
        Affine {
            steps: vec![800, 50, 50, 50],
            lr: 1e-3,
            roi_dilation_px: 25.0,
            roi_concavity: 300.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandRule {
    EqualRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analysis {
    pub ratio_floor: f64,
    pub huber_delta: f64,
    pub band_rule: BandRule,
    pub weighted_cc_fit: bool,
}

impl Default for Analysis {
    fn default() -> Self {
        Analysis {
            ratio_floor: DEFAULT_RATIO_FLOOR,
            huber_delta: HUBER_DELTA,
            band_rule: BandRule::EqualRows,
            weighted_cc_fit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub alphas: Vec<f64>,
    pub strides: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep { alphas: vec![1.0, 100.0, 200.0, 500.0], strides: vec![8.0, 9.0, 10.0] }
    }
}

impl RunConfig {
    pub fn darkfield_default() -> Self {
        RunConfig {
            modality: Modality::Darkfield,
            seed: 0,
            preprocessing: Preprocessing::default(),
            nonrigid: Nonrigid {
                stride: 10.0,
                alpha: 100.0,
                kernels: vec![11, 21, 41, 81],
                lr: 1e-4,
                max_steps: 3500,
                window: 200,
                threshold_factor: 1e-3,
                epsilon_var: DEFAULT_EPSILON_VAR,
            },
            affine: Affine::default(),
            analysis: Analysis::default(),
            sweep: Sweep::default(),
        }
    }

    pub fn attenuation_default() -> Self {
        RunConfig {
            modality: Modality::Attenuation,
            nonrigid: Nonrigid {
                alpha: 80.0,
                kernels: vec![5, 11, 21, 41],
                ..RunConfig::darkfield_default().nonrigid
            },
            ..RunConfig::darkfield_default()
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let config: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        let p = &self.preprocessing;
        if p.levels == 0 {
            return Err("preprocessing.levels must be >= 1".into());
        }
        let n = &self.nonrigid;
        if n.kernels.len() != p.levels {
            return Err(format!(
                "nonrigid.kernels has {} entries for {} levels",
                n.kernels.len(),
                p.levels
            ));
        }
        for &k in &n.kernels {
            if k % 2 == 0 || k < 3 {
                return Err(format!("LNCC kernel {k} must be odd and >= 3"));
            }
        }
        if !(n.stride >= 1.0) {
            return Err("nonrigid.stride must be >= 1".into());
        }
        if !(n.alpha >= 0.0) {
            return Err("nonrigid.alpha must be >= 0".into());
        }
        if !(n.lr > 0.0) || !(self.affine.lr > 0.0) {
            return Err("learning rates must be > 0".into());
        }
        if n.window == 0 || n.max_steps == 0 || !(n.threshold_factor > 0.0) {
            return Err("bad convergence rule".into());
        }
        if !(n.epsilon_var > 0.0) {
            return Err("nonrigid.epsilon_var must be > 0".into());
        }
        if self.affine.steps.is_empty() {
            return Err("affine.steps must not be empty".into());
        }
        if !(self.affine.roi_dilation_px >= 0.0) || !(self.affine.roi_concavity > 0.0) {
            return Err("bad ROI parameters".into());
        }
        if !(self.analysis.ratio_floor > 0.0) || !(self.analysis.huber_delta > 0.0) {
            return Err("bad analysis parameters".into());
        }
        if self.sweep.alphas.is_empty() || self.sweep.strides.is_empty() {
            return Err("sweep grids must not be empty".into());
        }
        Ok(())
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            levels: self.preprocessing.levels,
            stride: self.nonrigid.stride,
            alpha: self.nonrigid.alpha,
            kernels: self.nonrigid.kernels.clone(),
            lr: self.nonrigid.lr,
            rule: ConvergenceRule {
                window: self.nonrigid.window,
                threshold_factor: self.nonrigid.threshold_factor,
                max_steps: self.nonrigid.max_steps,
            },
            affine: AffineSchedule { steps: self.affine.steps.clone(), lr: self.affine.lr },
            roi_dilation_px: self.affine.roi_dilation_px,
            roi_concavity: self.affine.roi_concavity,
            epsilon_var: self.nonrigid.epsilon_var,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_identity() {
        for config in [RunConfig::darkfield_default(), RunConfig::attenuation_default()] {
            let text = config.to_toml();
            let back = RunConfig::parse(&text).unwrap();
            assert_eq!(back, config);
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = RunConfig::darkfield_default().to_toml();
        text.push_str("\nmystery_knob = 3\n");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn kernel_level_mismatch_rejected() {
        let mut config = RunConfig::darkfield_default();
        config.nonrigid.kernels = vec![11, 21];
        assert!(config.validate().is_err());
    }

    #[test]
    fn even_kernel_rejected() {
        let mut config = RunConfig::darkfield_default();
        config.nonrigid.kernels = vec![10, 21, 41, 81];
        assert!(config.validate().is_err());
    }
}

//! TOML run configuration for `fb4 simulate`.

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use fb4_core::attention::AttentionKind;
use fb4_core::decomp::BranchMode;
use fb4_core::pipeline::{RunConfig, SceneConfig, SedaAttention};
use fb4_core::seda::{FactorizedParams, JointParams};
use fb4_core::{BlockLayout, Selection};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub quant: QuantSection,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub decomp: DecompSection,
    #[serde(default)]
    pub seda: SedaSection,
}

fn default_steps() -> usize {
    100
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantSection {
    pub block: usize,
    pub groups: usize,
    pub mode: String,
}

impl Default for QuantSection {
    fn default() -> Self {
        QuantSection {
            block: 32,
            groups: 8,
            mode: "grouped".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub clusters: usize,
    pub cluster_radius: f64,
    pub outlier_rate: f64,
    pub outlier_scale: f64,
    pub attn_gain: f64,
    pub attn_noise: f64,
    pub branches: bool,
    pub drift: f64,
    pub layers: usize,
}

impl Default for SceneSection {
    fn default() -> Self {
        let s = SceneConfig::default();
        SceneSection {
            frames: s.frames,
            height: s.height,
            width: s.width,
            dim: s.dim,
            clusters: s.clusters,
            cluster_radius: s.cluster_radius,
            outlier_rate: s.outlier_rate,
            outlier_scale: s.outlier_scale,
            attn_gain: s.attn_gain,
            attn_noise: s.attn_noise,
            branches: s.branches,
            drift: s.drift,
            layers: s.layers,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecompSection {
    pub layers: Vec<usize>,
    pub branch_mode: String,
    pub attention: String,
}

impl Default for DecompSection {
    fn default() -> Self {
        DecompSection {
            layers: vec![0, 1],
            branch_mode: "split".into(),
            attention: "temporal".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SedaSection {
    pub layers: Vec<usize>,
    pub attention: String,
    pub tile: usize,
    pub window: usize,
    pub tau_spatial: f32,
    pub tau_temporal: f32,
    pub window_frames: usize,
    pub tau: f32,
    pub skip: f64,
    pub period: usize,
    #[serde(rename = "final")]
    pub final_fraction: f64,
}

impl Default for SedaSection {
    fn default() -> Self {
        let f = FactorizedParams::default();
        let j = JointParams::default();
        SedaSection {
            layers: vec![0, 1],
            attention: "factorized".into(),
            tile: f.tile,
            window: f.window,
            tau_spatial: f.tau_spatial,
            tau_temporal: f.tau_temporal,
            window_frames: j.window_frames,
            tau: j.tau,
            skip: 0.2,
            period: 10,
            final_fraction: 0.1,
        }
    }
}

pub fn parse_mode(s: &str) -> Result<Selection> {
    match s {
        "grouped" => Ok(Selection::Grouped),
        "exact" => Ok(Selection::Exact),
        _ => bail!("unknown selection mode {s:?} (grouped|exact)"),
    }
}

fn parse_kind(s: &str) -> Result<AttentionKind> {
    match s {
        "spatial" => Ok(AttentionKind::Spatial),
        "temporal" => Ok(AttentionKind::Temporal),
        "3d" | "joint" => Ok(AttentionKind::ThreeD),
        _ => bail!("unknown attention kind {s:?} (spatial|temporal|3d)"),
    }
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid run config")
    }

    pub fn into_run_config(self) -> Result<RunConfig> {
        let q = &self.quant;
        let layout = BlockLayout::new(q.block, q.groups).context("[quant]")?;
        let s = self.scene;
        let branch_mode = match self.decomp.branch_mode.as_str() {
            "split" => BranchMode::Split,
            "cond_only" => BranchMode::CondOnly,
            other => bail!("unknown branch_mode {other:?} (split|cond_only)"),
        };
        let seda_attention = match self.seda.attention.as_str() {
            "factorized" => SedaAttention::Factorized,
            "3d" | "joint" => SedaAttention::Joint,
            other => bail!("unknown seda attention {other:?} (factorized|3d)"),
        };
        let sd = self.seda;
        let cfg = RunConfig {
            seed: self.seed,
            steps: self.steps,
            layout,
            mode: parse_mode(&q.mode)?,
            scene: SceneConfig {
                frames: s.frames,
                height: s.height,
                width: s.width,
                dim: s.dim,
                clusters: s.clusters,
                cluster_radius: s.cluster_radius,
                outlier_rate: s.outlier_rate,
                outlier_scale: s.outlier_scale,
                attn_gain: s.attn_gain,
                attn_noise: s.attn_noise,
                branches: s.branches,
                drift: s.drift,
                layers: s.layers,
            },
            decompose_layers: self.decomp.layers,
            branch_mode,
            salient_attention: parse_kind(&self.decomp.attention)?,
            seda_layers: sd.layers,
            seda_attention,
            factorized: FactorizedParams {
                tile: sd.tile,
                window: sd.window,
                tau_spatial: sd.tau_spatial,
                tau_temporal: sd.tau_temporal,
            },
            joint: JointParams {
                tile: sd.tile,
                window: sd.window,
                window_frames: sd.window_frames,
                tau: sd.tau,
            },
            skip_fraction: sd.skip,
            update_period: sd.period,
            final_fraction: sd.final_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

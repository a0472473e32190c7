//! Plain-text `key = value` pipeline configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or
//! repeated keys are errors, and every value is checked against the
//! preconditions of the stage that consumes it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use sgdcn_core::deepergcn::{Aggregator, ModelConfig, TrainConfig};
use sgdcn_core::feature_selection::SvmParams;
use sgdcn_core::features::FeatureConfig;
use sgdcn_core::superpixel::SuperpixelParams;
use sgdcn_core::synth::SceneDistribution;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Dataset directory holding `manifest.csv`; empty means `<run>/data`,
    /// which `synth` fills.
    pub data_dir: Option<PathBuf>,

    pub synth_scenes: usize,
    pub synth_size: usize,
    pub synth_looks: f64,
    pub synth_background_min: f64,
    pub synth_background_max: f64,
    pub synth_contrast_min: f64,
    pub synth_contrast_max: f64,
    pub synth_spots_min: usize,
    pub synth_spots_max: usize,
    pub synth_ellipse_axis_min: f64,
    pub synth_ellipse_axis_max: f64,
    pub synth_ribbon_width_min: f64,
    pub synth_ribbon_width_max: f64,
    pub synth_ribbon_fraction: f64,

    pub tile_size: usize,
    pub lee_window: usize,
    pub lee_cu: f64,

    pub n_init: usize,
    pub max_iters: usize,
    pub spatial_weight: f64,
    pub label_threshold: f64,

    pub glcm_levels: usize,
    pub efd_harmonics: usize,

    pub svm_c: f64,
    pub svm_epochs: usize,
    pub svm_learning_rate: f64,
    pub f1_tolerance: f64,
    /// Cap on training rows used for ranking; rows are subsampled
    /// deterministically above it.
    pub select_max_samples: usize,
    /// Fixed subset size; 0 takes the F1-curve choice.
    pub n_features: usize,

    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub aggregator: Aggregator,
    pub beta_init: f64,
    pub s_init: f64,
    pub y_init: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,

    pub seed: u64,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let dist = SceneDistribution::default();
        let sp = SuperpixelParams::default();
        let fc = FeatureConfig::default();
        let svm = SvmParams::default();
        let tc = TrainConfig::default();
        Self {
            data_dir: None,
            synth_scenes: 60,
            synth_size: dist.size,
            synth_looks: dist.speckle_looks,
            synth_background_min: dist.background_mean.0,
            synth_background_max: dist.background_mean.1,
            synth_contrast_min: dist.contrast.0,
            synth_contrast_max: dist.contrast.1,
            synth_spots_min: dist.spots_per_scene.0,
            synth_spots_max: dist.spots_per_scene.1,
            synth_ellipse_axis_min: dist.ellipse_axis.0,
            synth_ellipse_axis_max: dist.ellipse_axis.1,
            synth_ribbon_width_min: dist.ribbon_width.0,
            synth_ribbon_width_max: dist.ribbon_width.1,
            synth_ribbon_fraction: dist.ribbon_fraction,
            tile_size: 256,
            lee_window: 3,
            lee_cu: 0.25,
            n_init: sp.n_init,
            max_iters: sp.max_iters,
            spatial_weight: sp.spatial_weight,
            label_threshold: 0.5,
            glcm_levels: fc.glcm_levels,
            efd_harmonics: fc.efd_harmonics,
            svm_c: svm.c,
            svm_epochs: svm.epochs,
            svm_learning_rate: svm.learning_rate,
            f1_tolerance: 0.005,
            select_max_samples: 3000,
            n_features: 0,
            hidden: 128,
            layers: 28,
            dropout: 0.2,
            aggregator: Aggregator::SoftMax,
            beta_init: 1.0,
            s_init: 1.0,
            y_init: 0.0,
            learning_rate: tc.learning_rate,
            batch_size: tc.batch_size,
            epochs: tc.epochs,
            seed: 0,
            workers: 1,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> CliResult<T> {
    raw.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse '{raw}'")))
}

fn aggregator_name(a: Aggregator) -> &'static str {
    match a {
        Aggregator::SoftMax => "softmax",
        Aggregator::PowerMean => "powermean",
        Aggregator::Sum => "sum",
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: duplicate key '{key}'", n + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                CliError::Config(m) if m.starts_with("unknown key") => CliError::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        macro_rules! p {
            ($field:ident) => {
                self.$field = parse_value(key, v)?
            };
        }
        match key {
            "data_dir" => self.data_dir = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "synth_scenes" => p!(synth_scenes),
            "synth_size" => p!(synth_size),
            "synth_looks" => p!(synth_looks),
            "synth_background_min" => p!(synth_background_min),
            "synth_background_max" => p!(synth_background_max),
            "synth_contrast_min" => p!(synth_contrast_min),
            "synth_contrast_max" => p!(synth_contrast_max),
            "synth_spots_min" => p!(synth_spots_min),
            "synth_spots_max" => p!(synth_spots_max),
            "synth_ellipse_axis_min" => p!(synth_ellipse_axis_min),
            "synth_ellipse_axis_max" => p!(synth_ellipse_axis_max),
            "synth_ribbon_width_min" => p!(synth_ribbon_width_min),
            "synth_ribbon_width_max" => p!(synth_ribbon_width_max),
            "synth_ribbon_fraction" => p!(synth_ribbon_fraction),
            "tile_size" => p!(tile_size),
            "lee_window" => p!(lee_window),
            "lee_cu" => p!(lee_cu),
            "n_init" => p!(n_init),
            "max_iters" => p!(max_iters),
            "spatial_weight" => p!(spatial_weight),
            "label_threshold" => p!(label_threshold),
            "glcm_levels" => p!(glcm_levels),
            "efd_harmonics" => p!(efd_harmonics),
            "svm_c" => p!(svm_c),
            "svm_epochs" => p!(svm_epochs),
            "svm_learning_rate" => p!(svm_learning_rate),
            "f1_tolerance" => p!(f1_tolerance),
            "select_max_samples" => p!(select_max_samples),
            "n_features" => p!(n_features),
            "hidden" => p!(hidden),
            "layers" => p!(layers),
            "dropout" => p!(dropout),
            "aggregator" => p!(aggregator),
            "beta_init" => p!(beta_init),
            "s_init" => p!(s_init),
            "y_init" => p!(y_init),
            "learning_rate" => p!(learning_rate),
            "batch_size" => p!(batch_size),
            "epochs" => p!(epochs),
            "seed" => p!(seed),
            "workers" => p!(workers),
            other => return Err(CliError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// All settings as `key = value` lines in a fixed order. `workers` is
    /// left out because it never changes results.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("data_dir", self.data_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("synth_scenes", self.synth_scenes.to_string());
        put("synth_size", self.synth_size.to_string());
        put("synth_looks", self.synth_looks.to_string());
        put("synth_background_min", self.synth_background_min.to_string());
        put("synth_background_max", self.synth_background_max.to_string());
        put("synth_contrast_min", self.synth_contrast_min.to_string());
        put("synth_contrast_max", self.synth_contrast_max.to_string());
        put("synth_spots_min", self.synth_spots_min.to_string());
        put("synth_spots_max", self.synth_spots_max.to_string());
        put("synth_ellipse_axis_min", self.synth_ellipse_axis_min.to_string());
        put("synth_ellipse_axis_max", self.synth_ellipse_axis_max.to_string());
        put("synth_ribbon_width_min", self.synth_ribbon_width_min.to_string());
        put("synth_ribbon_width_max", self.synth_ribbon_width_max.to_string());
        put("synth_ribbon_fraction", self.synth_ribbon_fraction.to_string());
        put("tile_size", self.tile_size.to_string());
        put("lee_window", self.lee_window.to_string());
        put("lee_cu", self.lee_cu.to_string());
        put("n_init", self.n_init.to_string());
        put("max_iters", self.max_iters.to_string());
        put("spatial_weight", self.spatial_weight.to_string());
        put("label_threshold", self.label_threshold.to_string());
        put("glcm_levels", self.glcm_levels.to_string());
        put("efd_harmonics", self.efd_harmonics.to_string());
        put("svm_c", self.svm_c.to_string());
        put("svm_epochs", self.svm_epochs.to_string());
        put("svm_learning_rate", self.svm_learning_rate.to_string());
        put("f1_tolerance", self.f1_tolerance.to_string());
        put("select_max_samples", self.select_max_samples.to_string());
        put("n_features", self.n_features.to_string());
        put("hidden", self.hidden.to_string());
        put("layers", self.layers.to_string());
        put("dropout", self.dropout.to_string());
        put("aggregator", aggregator_name(self.aggregator).to_string());
        put("beta_init", self.beta_init.to_string());
        put("s_init", self.s_init.to_string());
        put("y_init", self.y_init.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("seed", self.seed.to_string());
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn validate(&self) -> CliResult<()> {
        let fail = |key: &str, why: &str| Err(CliError::Config(format!("{key}: {why}")));
        let positive = |key: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { fail(key, "must be positive and finite") };
        if self.synth_scenes < 5 {
            return fail("synth_scenes", "must be at least 5");
        }
        positive("synth_looks", self.synth_looks)?;
        positive("learning_rate", self.learning_rate)?;
        positive("lee_cu", self.lee_cu)?;
        positive("spatial_weight", self.spatial_weight)?;
        positive("svm_c", self.svm_c)?;
        positive("svm_learning_rate", self.svm_learning_rate)?;
        if self.lee_window < 3 || self.lee_window % 2 == 0 {
            return fail("lee_window", "must be odd and >= 3");
        }
        if self.tile_size < 32 {
            return fail("tile_size", "must be >= 32");
        }
        if self.n_init == 0 {
            return fail("n_init", "must be >= 1");
        }
        if self.max_iters == 0 {
            return fail("max_iters", "must be >= 1");
        }
        if !(self.label_threshold > 0.0 && self.label_threshold <= 1.0) {
            return fail("label_threshold", "must be in (0, 1]");
        }
        if !(self.f1_tolerance >= 0.0 && self.f1_tolerance.is_finite()) {
            return fail("f1_tolerance", "must be non-negative");
        }
        if self.select_max_samples < 2 {
            return fail("select_max_samples", "must be >= 2");
        }
        if self.svm_epochs == 0 {
            return fail("svm_epochs", "must be >= 1");
        }
        if self.hidden == 0 {
            return fail("hidden", "must be >= 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be >= 1");
        }
        if self.epochs == 0 {
            return fail("epochs", "must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout", "must be in [0, 1)");
        }
        if self.aggregator == Aggregator::PowerMean && self.beta_init == 0.0 {
            return fail("beta_init", "power-mean exponent must be nonzero");
        }
        if self.workers == 0 {
            return fail("workers", "must be >= 1");
        }
        self.scene_distribution().validate().map_err(|e| CliError::Config(format!("synth_*: {e}")))?;
        self.feature_config().validate().map_err(|e| CliError::Config(format!("glcm_levels/efd_harmonics: {e}")))?;
        self.svm_params().validate().map_err(|e| CliError::Config(format!("svm_*: {e}")))?;
        Ok(())
    }

    pub fn scene_distribution(&self) -> SceneDistribution {
        SceneDistribution {
            size: self.synth_size,
            background_mean: (self.synth_background_min, self.synth_background_max),
            speckle_looks: self.synth_looks,
            contrast: (self.synth_contrast_min, self.synth_contrast_max),
            spots_per_scene: (self.synth_spots_min, self.synth_spots_max),
            ellipse_axis: (self.synth_ellipse_axis_min, self.synth_ellipse_axis_max),
            ribbon_width: (self.synth_ribbon_width_min, self.synth_ribbon_width_max),
            ribbon_fraction: self.synth_ribbon_fraction,
        }
    }

    pub fn superpixel_params(&self) -> SuperpixelParams {
        SuperpixelParams {
            n_init: self.n_init,
            max_iters: self.max_iters,
            spatial_weight: self.spatial_weight,
            seed: self.seed,
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            glcm_levels: self.glcm_levels,
            efd_harmonics: self.efd_harmonics,
        }
    }

    pub fn svm_params(&self) -> SvmParams {
        SvmParams {
            c: self.svm_c,
            epochs: self.svm_epochs,
            learning_rate: self.svm_learning_rate,
        }
    }

    pub fn model_config(&self, in_dim: usize) -> ModelConfig {
        ModelConfig {
            in_dim,
            hidden: self.hidden,
            n_layers: self.layers,
            dropout: self.dropout,
            aggregator: self.aggregator,
            agg_init: self.beta_init,
            s_init: self.s_init,
            y_init: self.y_init,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }
}

//! Run configuration: defaults plus overrides from a key-value file.
//!
//! Keys are dotted (`render.opacity 0.9`, `fit.total_steps = 200`); any key
//! not listed here is an error.

use std::path::Path;

use crate::codec::{COARSE_COMPONENTS, DEFAULT_BATCH_SIZE, DEFAULT_COMPONENTS};
use crate::error::{Error, Result};
use crate::gabor::GaborParams;
use crate::hairmap::{DEFAULT_BALD_THRESHOLD, DEFAULT_NEAREST_WEIGHT};
use crate::io::KvFile;
use crate::losses::LossWeights;
use crate::optim::FitSchedule;
use crate::render::RenderConfig;
use crate::synth::{SceneOptions, StyleParams};

#[derive(Clone, Debug, PartialEq)]
pub struct PcaSettings {
    pub components: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSettings {
    pub upsample: usize,
    pub nearest_weight: f64,
    pub bald_threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSettings {
    pub total_steps: usize,
    pub coarse_steps: usize,
    pub coarse_components: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Optimize coefficients in units of the basis' per-component standard
    /// deviation; the learning rate is then measured in those units.
    pub normalize: bool,
    pub random_views: bool,
    pub undirected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSettings {
    pub corpus_size: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    /// Views rendered for a scene bundle; the first is the hemisphere camera.
    pub views: usize,
    /// Standard deviation of the fit initialization noise, in coefficient
    /// standard deviations.
    pub init_noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub render: RenderConfig,
    pub weights: LossWeights,
    pub pca: PcaSettings,
    pub model: ModelSettings,
    pub fit: FitSettings,
    pub style: StyleParams,
    pub scene: SceneOptions,
    pub synth: SynthSettings,
    pub gabor: GaborParams,
    pub depth_erode: usize,
    pub chamfer_samples: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            render: RenderConfig::default(),
            weights: LossWeights::inversion(),
            pca: PcaSettings { components: DEFAULT_COMPONENTS, batch_size: DEFAULT_BATCH_SIZE },
            model: ModelSettings { upsample: 2, nearest_weight: DEFAULT_NEAREST_WEIGHT, bald_threshold: DEFAULT_BALD_THRESHOLD },
            fit: FitSettings {
                total_steps: 400,
                coarse_steps: 20,
                coarse_components: COARSE_COMPONENTS,
                learning_rate: 0.01,
                weight_decay: 1e-3,
                normalize: true,
                random_views: true,
                undirected: false,
            },
            style: StyleParams::default(),
            scene: SceneOptions::default(),
            synth: SynthSettings { corpus_size: 5000, grid_width: 16, grid_height: 16, views: 1, init_noise: 0.5 },
            gabor: GaborParams::default(),
            depth_erode: 2,
            chamfer_samples: 10_000,
        }
    }
}

fn range(kv: &mut KvFile, key: &str, slot: &mut std::ops::Range<f64>) -> Result<()> {
    if let Some(v) = kv.floats(key, 2)? {
        *slot = v[0]..v[1];
    }
    Ok(())
}

macro_rules! set {
    ($kv:expr, $key:literal, $slot:expr) => {
        if let Some(v) = $kv.parsed($key)? {
            $slot = v;
        }
    };
}

impl Config {
    pub fn from_kv_text(text: &str, origin: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut kv = KvFile::parse(text, origin)?;
        set!(kv, "seed", c.seed);

        set!(kv, "render.width_scale", c.render.width_scale);
        set!(kv, "render.epsilon", c.render.epsilon);
        set!(kv, "render.opacity", c.render.opacity);
        set!(kv, "render.cutoff", c.render.cutoff);
        set!(kv, "render.screen_blur", c.render.screen_blur);

        if let Some(preset) = kv.take("loss.preset") {
            c.weights = match preset.as_slice() {
                [p] if p == "coarse" => LossWeights::coarse(),
                [p] if p == "fine" => LossWeights::fine(),
                [p] if p == "joint" => LossWeights::joint(),
                [p] if p == "hybrid" => LossWeights::hybrid(),
                [p] if p == "inversion" => LossWeights::inversion(),
                other => return Err(Error::Config(format!("{origin}: unknown loss preset {other:?}"))),
            };
        }
        set!(kv, "loss.lambda_pca", c.weights.lambda_pca);
        set!(kv, "loss.lambda_dir", c.weights.lambda_dir);
        set!(kv, "loss.lambda_curv", c.weights.lambda_curv);
        set!(kv, "loss.lambda_mask", c.weights.lambda_mask);
        set!(kv, "loss.lambda_seg", c.weights.lambda_seg);
        set!(kv, "loss.lambda_dirmap", c.weights.lambda_dirmap);
        set!(kv, "loss.lambda_pen", c.weights.lambda_pen);
        set!(kv, "loss.lambda_depth", c.weights.lambda_depth);
        set!(kv, "loss.mixing_rate", c.weights.mixing_rate_r);

        set!(kv, "pca.components", c.pca.components);
        set!(kv, "pca.batch_size", c.pca.batch_size);

        set!(kv, "model.upsample", c.model.upsample);
        set!(kv, "model.nearest_weight", c.model.nearest_weight);
        set!(kv, "model.bald_threshold", c.model.bald_threshold);

        set!(kv, "fit.total_steps", c.fit.total_steps);
        set!(kv, "fit.coarse_steps", c.fit.coarse_steps);
        set!(kv, "fit.coarse_components", c.fit.coarse_components);
        set!(kv, "fit.learning_rate", c.fit.learning_rate);
        set!(kv, "fit.weight_decay", c.fit.weight_decay);
        set!(kv, "fit.normalize", c.fit.normalize);
        set!(kv, "fit.random_views", c.fit.random_views);
        set!(kv, "fit.undirected", c.fit.undirected);

        set!(kv, "style.point_count", c.style.point_count);
        range(&mut kv, "style.length", &mut c.style.length)?;
        range(&mut kv, "style.wave_amplitude", &mut c.style.wave_amplitude)?;
        range(&mut kv, "style.wave_frequency", &mut c.style.wave_frequency)?;
        range(&mut kv, "style.wave_damping", &mut c.style.wave_damping)?;
        range(&mut kv, "style.droop", &mut c.style.droop)?;
        range(&mut kv, "style.lift", &mut c.style.lift)?;
        set!(kv, "style.heading_spread", c.style.heading_spread);
        set!(kv, "style.frizz", c.style.frizz);

        set!(kv, "scene.image_width", c.scene.image_width);
        set!(kv, "scene.image_height", c.scene.image_height);
        set!(kv, "scene.focal_factor", c.scene.focal_factor);
        set!(kv, "scene.camera_distance", c.scene.camera_distance);
        range(&mut kv, "scene.elevation", &mut c.scene.elevation)?;
        set!(kv, "scene.clip_sigma", c.scene.clip_sigma);

        set!(kv, "synth.corpus_size", c.synth.corpus_size);
        set!(kv, "synth.grid_width", c.synth.grid_width);
        set!(kv, "synth.grid_height", c.synth.grid_height);
        set!(kv, "synth.views", c.synth.views);
        set!(kv, "synth.init_noise", c.synth.init_noise);

        set!(kv, "gabor.orientations", c.gabor.orientations);
        set!(kv, "gabor.wavelength", c.gabor.wavelength);
        set!(kv, "gabor.sigma", c.gabor.sigma);
        set!(kv, "depth.erode", c.depth_erode);
        set!(kv, "eval.chamfer_samples", c.chamfer_samples);
        kv.finish()?;

        // The scene shares the model and render settings.
        c.scene.upsample = c.model.upsample;
        c.scene.nearest_weight = c.model.nearest_weight;
        c.scene.render = c.render.clone();
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_kv_text(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.weights.validate()?;
        self.style.validate()?;
        self.gabor.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.pca.components == 0 || self.pca.batch_size == 0 {
            return bad("pca.components and pca.batch_size must be positive");
        }
        if self.model.upsample == 0 || !(0.0..=1.0).contains(&self.model.nearest_weight) {
            return bad("model.upsample must be positive and model.nearest_weight in [0, 1]");
        }
        if self.synth.grid_width == 0 || self.synth.grid_height == 0 || self.synth.views == 0 || self.synth.corpus_size == 0 {
            return bad("synth grid, views and corpus size must be positive");
        }
        if !(self.synth.init_noise >= 0.0) {
            return bad("synth.init_noise must be nonnegative");
        }
        if self.chamfer_samples == 0 {
            return bad("eval.chamfer_samples must be positive");
        }
        Ok(())
    }

    /// The fit schedule; `scale` is the per-component standard deviation
    /// used when `fit.normalize` is on.
    pub fn schedule(&self, scale: Option<Vec<f64>>) -> FitSchedule {
        FitSchedule {
            total_steps: self.fit.total_steps,
            coarse_steps: self.fit.coarse_steps,
            coarse_components: self.fit.coarse_components,
            weights: self.weights,
            learning_rate: self.fit.learning_rate,
            weight_decay: self.fit.weight_decay,
            coefficient_scale: if self.fit.normalize { scale } else { None },
            random_views: self.fit.random_views,
            seed: self.seed,
            render: self.render.clone(),
            undirected: self.fit.undirected,
        }
    }
}

//! Dual-space optimisation loop, Adam, checkpoints and deterministic replay.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bodymodel::{capsule, BodyModelAsset, PoseShapeParams};
use crate::container::{Container, Section};
use crate::deform::{SpaceContext, SpaceKind};
use crate::error::{Error, Result};
use crate::field::{self, FieldConfig, FieldParams, FieldSample};
use crate::guidance::{
    sds_pixel_grad, Denoiser, EchoDenoiser, MockDenoiser, MockTarget, NoiseSchedule, RemoteConfig, RemoteDenoiser,
    SdsQuery, DEFAULT_GUIDANCE_SCALE,
};
use crate::losses::{
    normal_consistency_loss, total_step_loss, LossCsv, LossReport, LossWeights, StepGradients, CSV_HEADER,
    NORMAL_LOSS_MIN_SIGMA,
};
use crate::render::{
    self, sample_camera, write_preview_png, Camera, CameraConfig, LatentImage, Orbit, RenderOptions, RenderTrace,
};
use crate::Vec3;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DenoiserConfig {
    Mock { target: MockTarget },
    Echo,
    Remote(RemoteConfig),
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig::Mock {
            target: MockTarget::Flat([0.4; 4]),
        }
    }
}

impl DenoiserConfig {
    pub fn build(&self) -> Box<dyn Denoiser> {
        match self {
            DenoiserConfig::Mock { target } => Box::new(MockDenoiser::new(target.clone())),
            DenoiserConfig::Echo => Box::new(EchoDenoiser),
            DenoiserConfig::Remote(cfg) => Box::new(RemoteDenoiser::new(cfg.clone().with_env_override())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub lambda_n: f64,
    pub lambda_sds: f64,
    pub seed: u64,
    /// Body asset file; the built-in capsule person when unset.
    pub asset: Option<PathBuf>,
    /// Target pose; the A-pose when unset. Its `beta` also shapes the
    /// canonical body.
    pub observation_pose: Option<PoseShapeParams>,
    pub prompt: String,
    pub denoiser: DenoiserConfig,
    pub guidance_scale: f64,
    pub render_resolution: usize,
    pub samples_per_ray: usize,
    pub min_transmittance: f64,
    pub prior_sharpness: f64,
    pub grad_clip: f64,
    /// Supervise one space per step, canonical on even steps.
    pub alternating: bool,
    pub checkpoint_every: usize,
    pub preview_every: usize,
    pub camera: CameraConfig,
    pub field: FieldConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            lr: 1e-3,
            lambda_n: 5e-4,
            lambda_sds: 1.0,
            seed: 0,
            asset: None,
            observation_pose: None,
            prompt: "a person".into(),
            denoiser: DenoiserConfig::default(),
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            render_resolution: 64,
            samples_per_ray: 64,
            min_transmittance: 1e-4,
            prior_sharpness: 1e-3,
            grad_clip: 10.0,
            alternating: false,
            checkpoint_every: 500,
            preview_every: 100,
            camera: CameraConfig::default(),
            field: FieldConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.render_resolution == 0 || self.samples_per_ray == 0 {
            return bad("render_resolution and samples_per_ray must be positive");
        }
        if self.checkpoint_every == 0 || self.preview_every == 0 {
            return bad("checkpoint_every and preview_every must be positive");
        }
        if !(self.prior_sharpness > 0.0) {
            return bad("prior_sharpness must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if self.lambda_n < 0.0 || self.lambda_sds < 0.0 {
            return bad("loss weights must be nonnegative");
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_sds: self.lambda_sds,
            lambda_n: self.lambda_n,
        }
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            n_samples: self.samples_per_ray,
            stratified: true,
            min_transmittance: self.min_transmittance,
            background: true,
        }
    }

    pub fn load_asset(&self) -> Result<Arc<BodyModelAsset>> {
        match &self.asset {
            Some(p) => Ok(Arc::new(BodyModelAsset::load(p)?)),
            None => Ok(Arc::new(capsule::capsule_person().clone())),
        }
    }

    pub fn pose(&self, asset: &BodyModelAsset) -> PoseShapeParams {
        self.observation_pose
            .clone()
            .unwrap_or_else(|| PoseShapeParams::a_pose(asset, &vec![0.0; asset.n_shape]))
    }
}

/// Canonical and observation spaces of a config.
pub fn build_spaces(cfg: &TrainConfig, asset: &BodyModelAsset) -> Result<(SpaceContext, SpaceContext)> {
    let pose = cfg.pose(asset);
    pose.validate(asset)?;
    let canonical = SpaceContext::canonical(asset, &pose.beta, cfg.prior_sharpness)?;
    let observation = SpaceContext::observation(asset, &canonical, &pose, cfg.prior_sharpness)?;
    Ok((canonical, observation))
}

/// Adam moments. Values are kept f32-representable like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: FieldParams,
    pub v: FieldParams,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &FieldParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// One update with `grad` already clipped.
    pub fn step(&mut self, params: &mut FieldParams, grad: &FieldParams, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.data.len() {
            let g = grad.data[i];
            let m = ADAM_BETA1 * self.m.data[i] + (1.0 - ADAM_BETA1) * g;
            let v = ADAM_BETA2 * self.v.data[i] + (1.0 - ADAM_BETA2) * g * g;
            self.m.data[i] = m as f32 as f64;
            self.v.data[i] = v as f32 as f64;
            params.data[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
        }
        params.round_to_f32();
    }
}

/// Scales `grad` down to at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut FieldParams, max_norm: f64) -> f64 {
    let n = grad.norm();
    if n > max_norm {
        grad.scale(max_norm / n);
    }
    n
}

/// Full training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: FieldParams,
    pub adam: AdamState,
    /// Steps completed.
    pub step: usize,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn init(config: &TrainConfig) -> Self {
        let params = FieldParams::new(&config.field, config.seed);
        Self {
            adam: AdamState::new(&params),
            params,
            step: 0,
            config: config.clone(),
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        self.params.write_sections(&mut c, "params/");
        self.adam.m.write_sections(&mut c, "adam_m/");
        self.adam.v.write_sections(&mut c, "adam_v/");
        c.push(Section::u64("step", &[1], vec![self.step as u64]));
        c.push(Section::u64("adam_t", &[1], vec![self.adam.t]));
        // per-step streams are derived from (seed, step)
        c.push(Section::u64("rng_state", &[2], vec![self.config.seed, self.step as u64]));
        c.push(Section::bytes("config", serde_json::to_vec(&self.config)?));
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::malformed("checkpoint", format!("unsupported version {}", c.version)));
        }
        let config: TrainConfig = serde_json::from_slice(c.bytes_section("config")?)?;
        let scalar = |name: &str| -> Result<u64> {
            c.u64_section(name)?
                .first()
                .copied()
                .ok_or_else(|| Error::malformed("checkpoint", format!("empty section '{name}'")))
        };
        let params = FieldParams::read_sections(&config.field, c, "params/")?;
        let m = FieldParams::read_sections(&config.field, c, "adam_m/")?;
        let v = FieldParams::read_sections(&config.field, c, "adam_v/")?;
        Ok(Self {
            params,
            adam: AdamState {
                m,
                v,
                t: scalar("adam_t")?,
            },
            step: scalar("step")? as usize,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path, CHECKPOINT_MAGIC)?)
    }
}

/// Render of one space for one step.
pub struct SpaceRender {
    pub camera: Camera,
    pub orbit: Orbit,
    pub image: LatentImage,
    pub trace: RenderTrace,
    pub sds_t: usize,
    pub sds_grad: Vec<f64>,
}

/// Front-facing evaluation camera used for previews and metrics.
pub fn preview_camera(resolution: usize) -> Camera {
    let orbit = Orbit {
        radius: 1.5,
        elevation_deg: 0.0,
        azimuth_deg: 0.0,
        fov_deg: 60.0,
    };
    Camera::orbit(&orbit, [0.0; 3], resolution, resolution)
}

/// Rng for `space` at `step`; independent of everything before it.
pub fn step_rng(seed: u64, step: usize, space: SpaceKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lane = match space {
        SpaceKind::Canonical => 0,
        SpaceKind::Observation => 1,
    };
    rng.set_stream(2 * step as u64 + lane);
    rng
}

pub struct Trainer {
    pub state: Checkpoint,
    pub canonical: SpaceContext,
    pub observation: SpaceContext,
    pub denoiser: Box<dyn Denoiser>,
    pub schedule: NoiseSchedule,
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::init(config), None)
    }

    /// Resumes from `state`; `denoiser` replaces the configured one.
    pub fn from_checkpoint(state: Checkpoint, denoiser: Option<Box<dyn Denoiser>>) -> Result<Self> {
        state.config.validate()?;
        let asset = state.config.load_asset()?;
        let (canonical, observation) = build_spaces(&state.config, &asset)?;
        let denoiser = denoiser.unwrap_or_else(|| state.config.denoiser.build());
        Ok(Self {
            state,
            canonical,
            observation,
            denoiser,
            schedule: NoiseSchedule::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    pub fn params(&self) -> &FieldParams {
        &self.state.params
    }

    pub fn space(&self, kind: SpaceKind) -> &SpaceContext {
        match kind {
            SpaceKind::Canonical => &self.canonical,
            SpaceKind::Observation => &self.observation,
        }
    }

    /// Which spaces step `step` supervises.
    pub fn spaces_for_step(&self, step: usize) -> Vec<SpaceKind> {
        if self.config().alternating {
            vec![if step % 2 == 0 {
                SpaceKind::Canonical
            } else {
                SpaceKind::Observation
            }]
        } else {
            vec![SpaceKind::Canonical, SpaceKind::Observation]
        }
    }

    fn render_space(&self, kind: SpaceKind, step: usize) -> Result<SpaceRender> {
        let cfg = self.config();
        let mut rng = step_rng(cfg.seed, step, kind);
        let res = cfg.render_resolution;
        let (camera, tag, orbit) = sample_camera(&mut rng, &cfg.camera, res, res);
        let (image, trace) = render::render(&self.state.params, self.space(kind), &camera, &cfg.render_options(), &mut rng)?;
        let query = SdsQuery {
            prompt: &cfg.prompt,
            view_tag: tag,
            guidance_scale: cfg.guidance_scale,
        };
        let sds = sds_pixel_grad(self.denoiser.as_ref(), &self.schedule, &image, &query, &mut rng)?;
        Ok(SpaceRender {
            camera,
            orbit,
            image,
            trace,
            sds_t: sds.t,
            sds_grad: sds.grad,
        })
    }

    /// Normal-loss samples of one render: positions and field samples with
    /// `∇σ`, restricted to `σ > NORMAL_LOSS_MIN_SIGMA`.
    fn normal_batch(&self, kind: SpaceKind, trace: &RenderTrace) -> Result<(Vec<Vec3>, Vec<FieldSample>)> {
        let picked: Vec<_> = trace.samples().filter(|s| s.sigma > NORMAL_LOSS_MIN_SIGMA).collect();
        let xs: Vec<Vec3> = picked.iter().map(|s| s.x).collect();
        let grads = field::density_gradients(&self.state.params, self.space(kind), &xs)?;
        let samples = picked
            .iter()
            .zip(&grads)
            .map(|(s, g)| FieldSample {
                sigma: s.sigma,
                color: s.color,
                normal: s.normal,
                prior_sigma: 0.0,
                density_gradient: Some([g.x, g.y, g.z]),
            })
            .collect();
        Ok((xs, samples))
    }

    /// One optimisation step. Returns the loss report; parameters and
    /// moments are updated in place.
    pub fn train_step(&mut self) -> Result<LossReport> {
        let step = self.state.step;
        let spaces = self.spaces_for_step(step);
        let renders: Vec<(SpaceKind, SpaceRender)> = spaces
            .iter()
            .map(|&k| Ok((k, self.render_space(k, step)?)))
            .collect::<Result<_>>()?;

        let params = &self.state.params;
        let mut g_c = params.zeros_like();
        let mut g_o = params.zeros_like();
        let mut norms = (0.0, 0.0);
        for (kind, r) in &renders {
            let (g, n) = match kind {
                SpaceKind::Canonical => (&mut g_c, &mut norms.0),
                SpaceKind::Observation => (&mut g_o, &mut norms.1),
            };
            render::render_backward(params, self.space(*kind), &r.trace, &r.sds_grad, g)?;
            *n = r.sds_grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        }

        // normal loss over the union of both renders' samples, canonical first
        let mut batches = Vec::new();
        let mut all = Vec::new();
        for (kind, r) in &renders {
            let (xs, samples) = self.normal_batch(*kind, &r.trace)?;
            batches.push((*kind, xs, samples.len()));
            all.extend(samples);
        }
        let nl = normal_consistency_loss(&all)?;
        let mut g_n = params.zeros_like();
        let mut off = 0;
        for (kind, xs, len) in &batches {
            field::backward_batch(params, self.space(*kind), xs, &nl.grads[off..off + len], Some(&mut g_n))?;
            off += len;
        }

        let grads = StepGradients {
            sds_canonical: &g_c,
            sds_observation: &g_o,
            normal: &g_n,
        };
        let (report, mut total) = total_step_loss(&self.config().loss_weights(), &grads, norms, nl.value)?;
        let clip = self.config().grad_clip;
        clip_grad_norm(&mut total, clip);
        let lr = self.config().lr;
        let mut next = self.state.params.clone();
        self.state.adam.step(&mut next, &total, lr);
        if !next.is_finite() {
            return Err(Error::Numeric(format!("non-finite parameters after step {step}")));
        }
        self.state.params = next;
        self.state.step += 1;
        Ok(report)
    }

    /// Deterministic render at `camera` (midpoint sampling).
    pub fn render_eval(&self, kind: SpaceKind, camera: &Camera) -> Result<LatentImage> {
        let opts = RenderOptions {
            n_samples: self.config().samples_per_ray,
            stratified: false,
            min_transmittance: 0.0,
            background: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(render::render(&self.state.params, self.space(kind), camera, &opts, &mut rng)?.0)
    }

    fn write_previews(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let cam = preview_camera(self.config().render_resolution);
        let mut out = Vec::new();
        for kind in [SpaceKind::Canonical, SpaceKind::Observation] {
            let img = self.render_eval(kind, &cam)?;
            let path = dir.join(format!("preview_{:06}_{kind}.png", self.state.step));
            write_preview_png(&img, &path)?;
            out.push(path);
        }
        Ok(out)
    }
}

/// Where `train` writes its artifacts.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub dir: PathBuf,
}

impl TrainOutputs {
    pub fn csv(&self) -> PathBuf {
        self.dir.join("losses.csv")
    }

    pub fn checkpoint(&self, step: usize) -> PathBuf {
        self.dir.join(format!("checkpoint_{step:06}.avck"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("final.avck")
    }
}

/// Summary of a `train` call.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub reports: Vec<LossReport>,
    pub checkpoints: Vec<PathBuf>,
    pub previews: Vec<PathBuf>,
}

/// Runs `trainer` up to its configured iteration count, writing the loss CSV,
/// periodic checkpoints and previews, and `final.avck`. A resumed trainer
/// keeps the CSV rows of earlier steps.
pub fn train(trainer: &mut Trainer, out: &TrainOutputs) -> Result<TrainSummary> {
    std::fs::create_dir_all(&out.dir)?;
    let start = trainer.state.step;
    let csv_path = out.csv();
    let mut csv = if start == 0 || !csv_path.exists() {
        LossCsv::new(BufWriter::new(File::create(&csv_path)?))?
    } else {
        let text = std::fs::read_to_string(&csv_path)?;
        let kept: Vec<&str> = text
            .lines()
            .filter(|l| l.split(',').next().and_then(|s| s.parse::<usize>().ok()).map_or(false, |s| s < start))
            .collect();
        let mut body = format!("{CSV_HEADER}\n");
        for l in kept {
            body.push_str(l);
            body.push('\n');
        }
        std::fs::write(&csv_path, body)?;
        LossCsv::resume(BufWriter::new(std::fs::OpenOptions::new().append(true).open(&csv_path)?))
    };
    let mut summary = TrainSummary {
        reports: Vec::new(),
        checkpoints: Vec::new(),
        previews: Vec::new(),
    };
    let mut last_good: Option<PathBuf> = None;
    while trainer.state.step < trainer.config().iterations {
        let step = trainer.state.step;
        let report = trainer.train_step().map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(match &last_good {
                Some(p) => format!("{m}; last good checkpoint: {}", p.display()),
                None => format!("{m}; no checkpoint written yet"),
            }),
            other => other,
        })?;
        csv.push(step, &report)?;
        summary.reports.push(report);
        let done = trainer.state.step;
        if done % trainer.config().checkpoint_every == 0 {
            let p = out.checkpoint(done);
            trainer.state.save(&p)?;
            last_good = Some(p.clone());
            summary.checkpoints.push(p);
        }
        if done % trainer.config().preview_every == 0 {
            summary.previews.extend(trainer.write_previews(&out.dir)?);
        }
        log::info!(
            "step {done}: sds_c {:.4e} sds_o {:.4e} normal {:.4e}",
            report.sds_canonical,
            report.sds_observation,
            report.normal_loss
        );
    }
    let fin = out.final_checkpoint();
    trainer.state.save(&fin)?;
    summary.checkpoints.push(fin);
    Ok(summary)
}

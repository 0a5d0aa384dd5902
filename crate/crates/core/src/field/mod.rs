//! The trainable implicit field: grid encoder, main network predicting
//! (normal, density residual, latent colour), non-rigid offset network and
//! background network, with batched forward and reverse-mode passes.

mod hashgrid;
mod mlp;

use std::sync::Arc;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{Container, Section};
use crate::deform::SpaceContext;
use crate::error::{Error, Result};
use crate::geoquery::PriorSample;
use crate::Vec3;

pub use hashgrid::{GridConfig, GridLayout, Level, ENCODED_DIM, FEATURES, LEVELS};
pub use mlp::{FinalInit, MlpLayout};

pub const MAIN_DIMS: [usize; 4] = [ENCODED_DIM, 64, 64, 8];
pub const NONRIGID_DIMS: [usize; 4] = [ENCODED_DIM, 64, 64, 3];
pub const BACKGROUND_OCTAVES: usize = 4;
pub const BACKGROUND_ENCODED_DIM: usize = 3 + 6 * BACKGROUND_OCTAVES;
pub const BACKGROUND_DIMS: [usize; 3] = [BACKGROUND_ENCODED_DIM, 32, 4];
pub const LATENT_CHANNELS: usize = 4;

/// Output channel layout of the main network.
pub const NORMAL_CHANNELS: std::ops::Range<usize> = 0..3;
pub const DENSITY_CHANNEL: usize = 3;
pub const COLOR_CHANNELS: std::ops::Range<usize> = 4..8;

/// Bound on the non-rigid correction: `offset = NONRIGID_SCALE · tanh(·)`.
pub const NONRIGID_SCALE: f64 = 0.1;
/// Half-width of the uniform grid-feature initialisation.
pub const GRID_INIT_RANGE: f64 = 1e-4;
/// Step of the finite-difference density gradient.
pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    #[serde(default)]
    pub grid: GridConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub config: FieldConfig,
    pub grid: GridLayout,
    pub main: MlpLayout,
    pub nonrigid: MlpLayout,
    pub background: MlpLayout,
    pub tensors: Vec<TensorInfo>,
    len: usize,
}

impl Layout {
    pub fn new(config: &FieldConfig) -> Self {
        let grid = GridLayout::new(&config.grid, 0);
        let main = MlpLayout::new(&MAIN_DIMS, grid.len());
        let nonrigid = MlpLayout::new(&NONRIGID_DIMS, grid.len() + main.len());
        let background = MlpLayout::new(&BACKGROUND_DIMS, grid.len() + main.len() + nonrigid.len());
        let len = grid.len() + main.len() + nonrigid.len() + background.len();

        let mut tensors = Vec::new();
        for (l, level) in grid.levels.iter().enumerate() {
            tensors.push(TensorInfo {
                name: format!("encoder.level{l:02}"),
                shape: vec![level.entries, FEATURES],
                offset: level.offset,
            });
        }
        for (prefix, m) in [("main", &main), ("nonrigid", &nonrigid), ("background", &background)] {
            for l in 0..m.num_layers() {
                let (w, b) = m.layer_ranges(l);
                tensors.push(TensorInfo {
                    name: format!("{prefix}.layer{l}.weight"),
                    shape: vec![m.dims[l + 1], m.dims[l]],
                    offset: w.start,
                });
                tensors.push(TensorInfo {
                    name: format!("{prefix}.layer{l}.bias"),
                    shape: vec![m.dims[l + 1]],
                    offset: b.start,
                });
            }
        }
        Self {
            config: config.clone(),
            grid,
            main,
            nonrigid,
            background,
            tensors,
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// All trainable parameters in one flat vector, with named tensor views.
/// Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    layout: Arc<Layout>,
    pub data: Vec<f64>,
}

impl FieldParams {
    /// Fresh initialisation: grid features uniform in ±1e-4, He-initialised
    /// layers, and zero final layers for the density channel, the non-rigid
    /// offset and the background. Values are rounded to f32.
    pub fn new(config: &FieldConfig, seed: u64) -> Self {
        let layout = Arc::new(Layout::new(config));
        let mut data = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut data[..layout.grid.len()] {
            *v = rng.gen_range(-GRID_INIT_RANGE..GRID_INIT_RANGE);
        }
        layout.main.init(&mut data, &mut rng, FinalInit::HeExcept(&[DENSITY_CHANNEL]));
        layout.nonrigid.init(&mut data, &mut rng, FinalInit::Zero);
        layout.background.init(&mut data, &mut rng, FinalInit::Zero);
        let mut p = Self { layout, data };
        p.round_to_f32();
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn config(&self) -> &FieldConfig {
        &self.layout.config
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.tensor(name).map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.layout.tensor(name)?.range();
        Some(&mut self.data[r])
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&TensorInfo, &[f64])> {
        self.layout.tensors.iter().map(|t| (t, &self.data[t.range()]))
    }

    /// Range of the non-rigid network's parameters.
    pub fn nonrigid_range(&self) -> std::ops::Range<usize> {
        let start = self.layout.grid.len() + self.layout.main.len();
        start..start + self.layout.nonrigid.len()
    }

    pub fn background_range(&self) -> std::ops::Range<usize> {
        let start = self.layout.grid.len() + self.layout.main.len() + self.layout.nonrigid.len();
        start..start + self.layout.background.len()
    }

    pub fn grid_range(&self) -> std::ops::Range<usize> {
        0..self.layout.grid.len()
    }

    pub fn main_range(&self) -> std::ops::Range<usize> {
        let g = self.layout.grid.len();
        g..g + self.layout.main.len()
    }

    fn check_same(&self, other: &Self) {
        assert!(
            Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout,
            "parameter layouts differ"
        );
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        self.check_same(other);
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.check_same(other);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn round_to_f32(&mut self) {
        self.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }

    /// Appends one f32 section per tensor, named `{prefix}{tensor}`.
    pub fn write_sections(&self, c: &mut Container, prefix: &str) {
        for (t, v) in self.tensors() {
            c.push(Section::f32_from_f64(&format!("{prefix}{}", t.name), &t.shape, v));
        }
    }

    /// Reads tensors written by [`write_sections`](Self::write_sections).
    pub fn read_sections(config: &FieldConfig, c: &Container, prefix: &str) -> Result<Self> {
        let layout = Arc::new(Layout::new(config));
        let mut data = vec![0.0; layout.len()];
        for t in &layout.tensors {
            let shape: Vec<Option<usize>> = t.shape.iter().map(|&d| Some(d)).collect();
            let (_, v) = c.f32_section(&format!("{prefix}{}", t.name), &shape)?;
            for (d, s) in data[t.range()].iter_mut().zip(v) {
                *d = *s as f64;
            }
        }
        Ok(Self { layout, data })
    }
}

/// Field output at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldSample {
    pub sigma: f64,
    pub color: [f64; LATENT_CHANNELS],
    pub normal: [f64; 3],
    pub prior_sigma: f64,
    pub density_gradient: Option<[f64; 3]>,
}

impl FieldSample {
    /// Unit vector of `tanh(n)` for display; zero when `n` is zero.
    pub fn reported_normal(&self) -> [f64; 3] {
        let t = Vec3::new(self.normal[0].tanh(), self.normal[1].tanh(), self.normal[2].tanh());
        let len = t.norm();
        if len > 0.0 {
            (t / len).into()
        } else {
            [0.0; 3]
        }
    }
}

/// Upstream gradient for one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleGrad {
    pub dsigma: f64,
    pub dcolor: [f64; LATENT_CHANNELS],
    pub dnormal: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

/// The 32-dimensional grid feature of `x`.
pub fn encode(params: &FieldParams, x: &Vec3) -> [f64; ENCODED_DIM] {
    let mut out = [0.0; ENCODED_DIM];
    params.layout.grid.encode(&params.data, x, &mut out);
    out
}

fn encode_batch(params: &FieldParams, xs: &[Vec3]) -> Vec<f64> {
    let mut out = vec![0.0; xs.len() * ENCODED_DIM];
    for (x, o) in xs.iter().zip(out.chunks_exact_mut(ENCODED_DIM)) {
        params.layout.grid.encode(&params.data, x, o);
    }
    out
}

struct NonrigidCache {
    enc: Vec<f64>,
    acts: Vec<Vec<f64>>,
    /// tanh of the raw offset, `[n, 3]`.
    tanh: Vec<f64>,
}

/// Forward intermediates of one batch.
struct Forward {
    prior: Vec<PriorSample>,
    x_lbs: Vec<Vec3>,
    jac: Vec<Matrix3<f64>>,
    nonrigid: Option<NonrigidCache>,
    x_hat: Vec<Vec3>,
    enc: Vec<f64>,
    acts: Vec<Vec<f64>>,
}

impl Forward {
    fn out(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    fn sample(&self, i: usize) -> FieldSample {
        let o = &self.out()[i * 8..(i + 1) * 8];
        let prior_sigma = self.prior[i].sigma;
        FieldSample {
            sigma: (o[DENSITY_CHANNEL] + prior_sigma).max(0.0),
            color: [o[4], o[5], o[6], o[7]],
            normal: [o[0], o[1], o[2]],
            prior_sigma,
            density_gradient: None,
        }
    }
}

fn nonrigid_forward(params: &FieldParams, x_lbs: &[Vec3]) -> NonrigidCache {
    let n = x_lbs.len();
    let enc = encode_batch(params, x_lbs);
    let acts = params.layout.nonrigid.forward(&params.data, &enc, n);
    let tanh = acts.last().unwrap().iter().map(|v| v.tanh()).collect();
    NonrigidCache { enc, acts, tanh }
}

/// Runs the whole graph for points given in `space` coordinates.
fn forward(params: &FieldParams, space: &SpaceContext, xs: &[Vec3]) -> Result<Forward> {
    let n = xs.len();
    let prior: Vec<PriorSample> = xs.iter().map(|x| space.prior_sample(x)).collect();
    let mut x_lbs = Vec::with_capacity(n);
    let mut jac = Vec::with_capacity(n);
    for x in xs {
        let (p, j) = space.inverse_lbs(x)?;
        x_lbs.push(p);
        jac.push(j);
    }
    let (nonrigid, x_hat) = if space.uses_nonrigid() {
        let cache = nonrigid_forward(params, &x_lbs);
        let x_hat = x_lbs
            .iter()
            .zip(cache.tanh.chunks_exact(3))
            .map(|(p, t)| p + NONRIGID_SCALE * Vec3::new(t[0], t[1], t[2]))
            .collect();
        (Some(cache), x_hat)
    } else {
        (None, x_lbs.clone())
    };
    let enc = encode_batch(params, &x_hat);
    let acts = params.layout.main.forward(&params.data, &enc, n);
    Ok(Forward {
        prior,
        x_lbs,
        jac,
        nonrigid,
        x_hat,
        enc,
        acts,
    })
}

/// Evaluates the field at points given in `space` coordinates, with that
/// space's deformation and prior.
pub fn eval_batch(params: &FieldParams, space: &SpaceContext, xs: &[Vec3]) -> Result<Vec<FieldSample>> {
    let f = forward(params, space, xs)?;
    Ok((0..xs.len()).map(|i| f.sample(i)).collect())
}

pub fn eval_in_space(params: &FieldParams, space: &SpaceContext, x: &Vec3) -> Result<FieldSample> {
    Ok(eval_batch(params, space, std::slice::from_ref(x))?[0])
}

/// Canonical-space evaluation with an explicit prior: `σ = max(0, raw + σ̄_c)`.
pub fn eval_canonical(params: &FieldParams, x_c: &Vec3, prior_sigma: f64) -> FieldSample {
    let enc = encode(params, x_c);
    let acts = params.layout.main.forward(&params.data, &enc, 1);
    let o = acts.last().unwrap();
    FieldSample {
        sigma: (o[DENSITY_CHANNEL] + prior_sigma).max(0.0),
        color: [o[4], o[5], o[6], o[7]],
        normal: [o[0], o[1], o[2]],
        prior_sigma,
        density_gradient: None,
    }
}

/// Observation-space evaluation with an explicit prior: the point is deformed
/// to canonical space, then evaluated as in [`eval_canonical`].
pub fn eval_observation(params: &FieldParams, space: &SpaceContext, x_o: &Vec3, prior_sigma: f64) -> Result<FieldSample> {
    let x_hat = deform_to_canonical(params, space, x_o)?;
    Ok(eval_canonical(params, &x_hat, prior_sigma))
}

/// `x̂_c = x_c^lbs + 0.1 · tanh(MLP_NR(γ(x_c^lbs)))`.
pub fn deform_to_canonical(params: &FieldParams, space: &SpaceContext, x_o: &Vec3) -> Result<Vec3> {
    let (x_lbs, _) = space.inverse_lbs(x_o)?;
    let c = nonrigid_forward(params, std::slice::from_ref(&x_lbs));
    Ok(x_lbs + NONRIGID_SCALE * Vec3::new(c.tanh[0], c.tanh[1], c.tanh[2]))
}

/// Reverse pass for a batch. Adds parameter gradients into `grad` when given
/// and returns `dL/dx` for each input point (prior included).
pub fn backward_batch(
    params: &FieldParams,
    space: &SpaceContext,
    xs: &[Vec3],
    upstream: &[SampleGrad],
    mut grad: Option<&mut FieldParams>,
) -> Result<Vec<Vec3>> {
    assert_eq!(xs.len(), upstream.len());
    let n = xs.len();
    let f = forward(params, space, xs)?;
    let out = f.out();
    let mut d_out = vec![0.0; n * 8];
    let mut active = vec![false; n];
    for i in 0..n {
        let o = &out[i * 8..(i + 1) * 8];
        let g = &upstream[i];
        let d = &mut d_out[i * 8..(i + 1) * 8];
        d[..3].copy_from_slice(&g.dnormal);
        // clamp derivative is zero at and below zero
        active[i] = o[DENSITY_CHANNEL] + f.prior[i].sigma > 0.0;
        d[DENSITY_CHANNEL] = if active[i] { g.dsigma } else { 0.0 };
        d[4..8].copy_from_slice(&g.dcolor);
    }
    let layout = &params.layout;
    let mut grad_data = grad.as_deref_mut().map(|g| g.data.as_mut_slice());
    let d_enc = layout.main.backward(&params.data, &f.enc, &f.acts, &d_out, n, grad_data.as_deref_mut());
    let mut dx_hat: Vec<Vec3> = (0..n)
        .map(|i| {
            layout
                .grid
                .backward(&params.data, &f.x_hat[i], &d_enc[i * ENCODED_DIM..(i + 1) * ENCODED_DIM], grad_data.as_deref_mut())
        })
        .collect();
    if let Some(nr) = &f.nonrigid {
        let mut d_raw = vec![0.0; n * 3];
        for i in 0..n {
            for a in 0..3 {
                let t = nr.tanh[i * 3 + a];
                d_raw[i * 3 + a] = dx_hat[i][a] * NONRIGID_SCALE * (1.0 - t * t);
            }
        }
        let d_enc_lbs = layout.nonrigid.backward(&params.data, &nr.enc, &nr.acts, &d_raw, n, grad_data.as_deref_mut());
        for i in 0..n {
            dx_hat[i] += layout.grid.backward(
                &params.data,
                &f.x_lbs[i],
                &d_enc_lbs[i * ENCODED_DIM..(i + 1) * ENCODED_DIM],
                grad_data.as_deref_mut(),
            );
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut dx = f.jac[i].transpose() * dx_hat[i];
            if active[i] {
                dx += upstream[i].dsigma * f.prior[i].grad;
            }
            dx
        })
        .collect())
}

/// Exact `∇σ` for a batch of points (zero where the clamp is active).
pub fn density_gradients(params: &FieldParams, space: &SpaceContext, xs: &[Vec3]) -> Result<Vec<Vec3>> {
    let up = vec![
        SampleGrad {
            dsigma: 1.0,
            ..Default::default()
        };
        xs.len()
    ];
    backward_batch(params, space, xs, &up, None)
}

/// `∇σ` at `x` in `space`, analytically or by central differences with step
/// [`FD_STEP`] on the full density.
pub fn density_gradient(params: &FieldParams, space: &SpaceContext, x: &Vec3, mode: GradientMode) -> Result<Vec3> {
    match mode {
        GradientMode::Analytic => Ok(density_gradients(params, space, std::slice::from_ref(x))?[0]),
        GradientMode::FiniteDifference => {
            if x.iter().any(|c| c.abs() > 1.0 - FD_STEP) {
                return Err(Error::NearBoundary {
                    point: [x.x, x.y, x.z],
                    step: FD_STEP,
                });
            }
            let mut pts = Vec::with_capacity(6);
            for a in 0..3 {
                let mut e = Vec3::zeros();
                e[a] = FD_STEP;
                pts.push(x + e);
                pts.push(x - e);
            }
            let s = eval_batch(params, space, &pts)?;
            Ok(Vec3::new(
                (s[0].sigma - s[1].sigma) / (2.0 * FD_STEP),
                (s[2].sigma - s[3].sigma) / (2.0 * FD_STEP),
                (s[4].sigma - s[5].sigma) / (2.0 * FD_STEP),
            ))
        }
    }
}

/// Frequency encoding of a direction: `[d, sin(2^k π d), cos(2^k π d)]`.
pub fn encode_direction(d: &Vec3) -> [f64; BACKGROUND_ENCODED_DIM] {
    let mut out = [0.0; BACKGROUND_ENCODED_DIM];
    out[..3].copy_from_slice(d.as_slice());
    for k in 0..BACKGROUND_OCTAVES {
        let f = std::f64::consts::PI * (1u32 << k) as f64;
        for a in 0..3 {
            out[3 + 6 * k + a] = (f * d[a]).sin();
            out[3 + 6 * k + 3 + a] = (f * d[a]).cos();
        }
    }
    out
}

/// Background latent for a unit ray direction.
pub fn background_feature(params: &FieldParams, dir: &Vec3) -> Result<[f64; LATENT_CHANNELS]> {
    if !(dir.norm() > 0.0) || !dir.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidArgument("background direction must be nonzero and finite".into()));
    }
    Ok(background_batch(params, std::slice::from_ref(dir))[0])
}

pub fn background_batch(params: &FieldParams, dirs: &[Vec3]) -> Vec<[f64; LATENT_CHANNELS]> {
    let enc: Vec<f64> = dirs.iter().flat_map(encode_direction).collect();
    let acts = params.layout.background.forward(&params.data, &enc, dirs.len());
    acts.last()
        .unwrap()
        .chunks_exact(LATENT_CHANNELS)
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect()
}

/// Adds background parameter gradients for upstream `d_bg` per direction.
pub fn background_backward(params: &FieldParams, dirs: &[Vec3], d_bg: &[[f64; LATENT_CHANNELS]], grad: &mut FieldParams) {
    let n = dirs.len();
    let enc: Vec<f64> = dirs.iter().flat_map(encode_direction).collect();
    let acts = params.layout.background.forward(&params.data, &enc, n);
    let d: Vec<f64> = d_bg.iter().flatten().copied().collect();
    params
        .layout
        .background
        .backward(&params.data, &enc, &acts, &d, n, Some(&mut grad.data));
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> FieldConfig {
        FieldConfig {
            grid: GridConfig {
                base_resolution: 2,
                max_resolution: 16,
                log2_table_size: 8,
            },
        }
    }

    #[test]
    fn layout_shapes() {
        let p = FieldParams::new(&FieldConfig::default(), 0);
        assert_eq!(p.tensor("main.layer0.weight").unwrap().len(), 64 * 32);
        assert_eq!(p.tensor("main.layer2.weight").unwrap().len(), 8 * 64);
        assert_eq!(p.tensor("nonrigid.layer2.bias").unwrap().len(), 3);
        assert_eq!(p.tensor("background.layer0.weight").unwrap().len(), 32 * 27);
        let total: usize = p.layout().tensors.iter().map(|t| t.len()).sum();
        assert_eq!(total, p.len());
    }

    #[test]
    fn init_is_deterministic_and_zero_where_required() {
        let a = FieldParams::new(&tiny_config(), 7);
        assert_eq!(a, FieldParams::new(&tiny_config(), 7));
        let w = a.tensor("main.layer2.weight").unwrap();
        assert!(w[DENSITY_CHANNEL * 64..(DENSITY_CHANNEL + 1) * 64].iter().all(|&v| v == 0.0));
        assert!(w[..64].iter().any(|&v| v != 0.0));
        assert!(a.tensor("nonrigid.layer2.weight").unwrap().iter().all(|&v| v == 0.0));
        assert!(a.tensor("background.layer1.weight").unwrap().iter().all(|&v| v == 0.0));
        assert!(a.data[a.grid_range()].iter().all(|v| v.abs() <= GRID_INIT_RANGE));
    }

    #[test]
    fn zero_init_density_equals_prior() {
        let p = FieldParams::new(&tiny_config(), 1);
        let s = eval_canonical(&p, &Vec3::new(0.1, 0.2, 0.0), 1000.0);
        assert_eq!(s.sigma, 1000.0);
        assert_eq!(eval_canonical(&p, &Vec3::new(0.9, 0.9, 0.9), 0.0).sigma, 0.0);
    }

    #[test]
    fn background_zero_init_and_direction_check() {
        let p = FieldParams::new(&tiny_config(), 2);
        assert_eq!(background_feature(&p, &Vec3::z()).unwrap(), [0.0; 4]);
        assert!(background_feature(&p, &Vec3::zeros()).is_err());
    }

    #[test]
    fn sections_round_trip() {
        let p = FieldParams::new(&tiny_config(), 3);
        let mut c = Container::new(*b"TEST", 1);
        p.write_sections(&mut c, "params.");
        let back = FieldParams::read_sections(&tiny_config(), &c, "params.").unwrap();
        assert_eq!(back, p);
    }
}

//! Volume rendering of latent features with background compositing, its
//! reverse pass, prior-only silhouettes and a triangle rasterizer.

mod camera;
mod io;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deform::{SpaceContext, SpaceKind};
use crate::error::Result;
use crate::field::{self, FieldParams, SampleGrad, LATENT_CHANNELS};
use crate::Vec3;

pub use camera::{sample_camera, Camera, CameraConfig, Orbit, ViewTag};
pub use io::{mock_decode_rgb, read_avim, write_avim, write_png, write_preview_png, IMAGE_MAGIC};

/// Rays per parallel work item.
const RAY_CHUNK: usize = 64;
/// Samples evaluated per ray before checking for early termination.
const SEGMENT: usize = 16;
/// Samples per reverse-pass field batch.
const BACKWARD_BATCH: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub n_samples: usize,
    /// Jittered sample positions; midpoints otherwise.
    pub stratified: bool,
    /// Rays stop once transmittance falls below this (0 disables).
    pub min_transmittance: f64,
    pub background: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            n_samples: 64,
            stratified: true,
            min_transmittance: 1e-6,
            background: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentImage {
    pub width: usize,
    pub height: usize,
    /// `[H, W, 4]`, row 0 at the top.
    pub features: Vec<f64>,
    /// `[H, W]` accumulated weight.
    pub opacity: Vec<f64>,
    pub space: SpaceKind,
}

impl LatentImage {
    pub fn zeros(width: usize, height: usize, space: SpaceKind) -> Self {
        Self {
            width,
            height,
            features: vec![0.0; width * height * LATENT_CHANNELS],
            opacity: vec![0.0; width * height],
            space,
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * LATENT_CHANNELS;
        &self.features[i..i + LATENT_CHANNELS]
    }

    pub fn mask(&self, threshold: f64) -> Vec<bool> {
        self.opacity.iter().map(|&o| o > threshold).collect()
    }
}

/// Entry and exit distances of a ray through `[-1, 1]³`, starting no earlier
/// than the origin.
pub fn ray_box(origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
    let mut t0: f64 = 0.0;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a].abs() > 1.0 {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut lo, mut hi) = ((-1.0 - origin[a]) * inv, (1.0 - origin[a]) * inv);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
    }
    (t1 > t0).then_some((t0, t1))
}

/// Sample distances and interval lengths; the last interval repeats the one
/// before it.
pub fn sample_ray(t0: f64, t1: f64, n: usize, jitter: Option<&mut dyn FnMut() -> f64>) -> (Vec<f64>, Vec<f64>) {
    let step = (t1 - t0) / n as f64;
    let ts: Vec<f64> = match jitter {
        Some(j) => (0..n).map(|i| t0 + (i as f64 + j()) * step).collect(),
        None => (0..n).map(|i| t0 + (i as f64 + 0.5) * step).collect(),
    };
    let mut deltas: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    deltas.push(deltas.last().copied().unwrap_or(t1 - t0));
    (ts, deltas)
}

/// Opacity of one interval, `1 − e^{−σΔ}`.
pub fn alpha(sigma: f64, delta: f64) -> f64 {
    -(-sigma * delta).exp_m1()
}

/// Front-to-back compositing with accumulated opacity. Returns the pixel,
/// the opacity `ΣW` and the weights.
pub fn composite(
    sigmas: &[f64],
    deltas: &[f64],
    colors: &[[f64; LATENT_CHANNELS]],
    background: &[f64; LATENT_CHANNELS],
) -> ([f64; LATENT_CHANNELS], f64, Vec<f64>) {
    let mut acc = 0.0;
    let mut c = [0.0; LATENT_CHANNELS];
    let mut w = Vec::with_capacity(sigmas.len());
    for i in 0..sigmas.len() {
        let wi = alpha(sigmas[i], deltas[i]) * (1.0 - acc);
        for k in 0..LATENT_CHANNELS {
            c[k] += wi * colors[i][k];
        }
        acc += wi;
        w.push(wi);
    }
    for k in 0..LATENT_CHANNELS {
        c[k] += (1.0 - acc) * background[k];
    }
    (c, acc, w)
}

/// A sample with nonzero density kept for the reverse pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedSample {
    pub x: Vec3,
    pub sigma: f64,
    pub delta: f64,
    pub weight: f64,
    /// Transmittance after this sample.
    pub t_after: f64,
    pub color: [f64; LATENT_CHANNELS],
    pub normal: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayTrace {
    pub dir: Vec3,
    pub samples: Vec<TracedSample>,
    pub t_final: f64,
    pub background: [f64; LATENT_CHANNELS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderTrace {
    pub width: usize,
    pub height: usize,
    pub rays: Vec<RayTrace>,
    pub with_background: bool,
}

impl RenderTrace {
    pub fn samples(&self) -> impl Iterator<Item = &TracedSample> {
        self.rays.iter().flat_map(|r| r.samples.iter())
    }

    pub fn max_weight_sum(&self) -> f64 {
        self.rays
            .iter()
            .map(|r| r.samples.iter().map(|s| s.weight).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

struct RayState {
    origin: Vec3,
    dir: Vec3,
    ts: Vec<f64>,
    deltas: Vec<f64>,
    acc: f64,
    color: [f64; LATENT_CHANNELS],
    samples: Vec<TracedSample>,
}

fn transmittance(acc: f64) -> f64 {
    1.0 - acc
}

fn terminated(acc: f64, opts: &RenderOptions) -> bool {
    opts.min_transmittance > 0.0 && transmittance(acc) < opts.min_transmittance
}

/// Renders every pixel of `camera` in `space`. Jitter for stratified
/// sampling is drawn from `rng` in pixel order before any evaluation.
pub fn render(
    params: &FieldParams,
    space: &SpaceContext,
    camera: &Camera,
    opts: &RenderOptions,
    rng: &mut impl Rng,
) -> Result<(LatentImage, RenderTrace)> {
    let (w, h) = (camera.width, camera.height);
    let n = opts.n_samples.max(1);
    let origin = camera.origin();
    let mut rays: Vec<RayState> = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let dir = camera.ray_direction(row, col);
            let (ts, deltas) = match ray_box(&origin, &dir) {
                Some((t0, t1)) if opts.stratified => {
                    let mut j = || rng.gen::<f64>();
                    sample_ray(t0, t1, n, Some(&mut j))
                }
                Some((t0, t1)) => sample_ray(t0, t1, n, None),
                None => (Vec::new(), Vec::new()),
            };
            rays.push(RayState {
                origin,
                dir,
                ts,
                deltas,
                acc: 0.0,
                color: [0.0; LATENT_CHANNELS],
                samples: Vec::new(),
            });
        }
    }

    let dirs: Vec<Vec3> = rays.iter().map(|r| r.dir).collect();
    let backgrounds = if opts.background {
        field::background_batch(params, &dirs)
    } else {
        vec![[0.0; LATENT_CHANNELS]; dirs.len()]
    };

    rays.par_chunks_mut(RAY_CHUNK)
        .map(|chunk| march_chunk(params, space, chunk, opts))
        .collect::<Result<Vec<()>>>()?;

    let mut img = LatentImage::zeros(w, h, space.kind);
    let mut traces = Vec::with_capacity(rays.len());
    for (i, (ray, bg)) in rays.into_iter().zip(backgrounds).enumerate() {
        let t_final = transmittance(ray.acc);
        for k in 0..LATENT_CHANNELS {
            img.features[i * LATENT_CHANNELS + k] = ray.color[k] + t_final * bg[k];
        }
        img.opacity[i] = ray.acc;
        traces.push(RayTrace {
            dir: ray.dir,
            samples: ray.samples,
            t_final,
            background: bg,
        });
    }
    Ok((
        img,
        RenderTrace {
            width: w,
            height: h,
            rays: traces,
            with_background: opts.background,
        },
    ))
}

fn march_chunk(params: &FieldParams, space: &SpaceContext, rays: &mut [RayState], opts: &RenderOptions) -> Result<()> {
    let n = rays.iter().map(|r| r.ts.len()).max().unwrap_or(0);
    let mut start = 0;
    while start < n {
        let end = (start + SEGMENT).min(n);
        let alive: Vec<usize> = (0..rays.len())
            .filter(|&r| rays[r].ts.len() > start && !terminated(rays[r].acc, opts))
            .collect();
        if alive.is_empty() {
            break;
        }
        let mut pts = Vec::with_capacity(alive.len() * (end - start));
        for &r in &alive {
            let ray = &rays[r];
            for i in start..end.min(ray.ts.len()) {
                pts.push(ray.origin + ray.ts[i] * ray.dir);
            }
        }
        let samples = field::eval_batch(params, space, &pts)?;
        let mut it = pts.iter().zip(samples);
        for &r in &alive {
            let ray = &mut rays[r];
            for i in start..end.min(ray.ts.len()) {
                let (x, s) = it.next().unwrap();
                if terminated(ray.acc, opts) {
                    continue;
                }
                if s.sigma <= 0.0 {
                    continue;
                }
                let delta = ray.deltas[i];
                let wi = alpha(s.sigma, delta) * transmittance(ray.acc);
                for k in 0..LATENT_CHANNELS {
                    ray.color[k] += wi * s.color[k];
                }
                ray.acc += wi;
                ray.samples.push(TracedSample {
                    x: *x,
                    sigma: s.sigma,
                    delta,
                    weight: wi,
                    t_after: transmittance(ray.acc),
                    color: s.color,
                    normal: s.normal,
                });
            }
        }
        start = end;
    }
    Ok(())
}

/// Per-sample upstream gradients of a render for pixel gradient `pixel_grad`
/// (`[H, W, 4]`), and the background gradient per ray.
pub fn composite_backward(trace: &RenderTrace, pixel_grad: &[f64]) -> (Vec<SampleGrad>, Vec<[f64; LATENT_CHANNELS]>) {
    let mut out = Vec::new();
    let mut d_bg = Vec::with_capacity(trace.rays.len());
    for (r, ray) in trace.rays.iter().enumerate() {
        let g = &pixel_grad[r * LATENT_CHANNELS..(r + 1) * LATENT_CHANNELS];
        let dot = |c: &[f64; LATENT_CHANNELS]| (0..LATENT_CHANNELS).map(|k| c[k] * g[k]).sum::<f64>();
        let mut s = if trace.with_background { ray.t_final * dot(&ray.background) } else { 0.0 };
        let base = out.len();
        out.resize(base + ray.samples.len(), SampleGrad::default());
        for (i, smp) in ray.samples.iter().enumerate().rev() {
            let cg = dot(&smp.color);
            let d = &mut out[base + i];
            d.dsigma = smp.delta * (smp.t_after * cg - s);
            for k in 0..LATENT_CHANNELS {
                d.dcolor[k] = smp.weight * g[k];
            }
            s += smp.weight * cg;
        }
        d_bg.push(std::array::from_fn(|k| ray.t_final * g[k]));
    }
    (out, d_bg)
}

/// Adds `∂(Σ pixel_grad · image)/∂θ` into `grad`.
pub fn render_backward(
    params: &FieldParams,
    space: &SpaceContext,
    trace: &RenderTrace,
    pixel_grad: &[f64],
    grad: &mut FieldParams,
) -> Result<()> {
    assert_eq!(pixel_grad.len(), trace.rays.len() * LATENT_CHANNELS);
    let (up, d_bg) = composite_backward(trace, pixel_grad);
    let xs: Vec<Vec3> = trace.samples().map(|s| s.x).collect();
    for (xc, gc) in xs.chunks(BACKWARD_BATCH).zip(up.chunks(BACKWARD_BATCH)) {
        field::backward_batch(params, space, xc, gc, Some(grad))?;
    }
    if trace.with_background {
        let dirs: Vec<Vec3> = trace.rays.iter().map(|r| r.dir).collect();
        field::background_backward(params, &dirs, &d_bg, grad);
    }
    Ok(())
}

/// Opacity of the body prior alone (σ = σ̄).
pub fn render_silhouette(space: &SpaceContext, camera: &Camera, n_samples: usize) -> Vec<f64> {
    let origin = camera.origin();
    let pixels: Vec<(usize, usize)> = (0..camera.height).flat_map(|r| (0..camera.width).map(move |c| (r, c))).collect();
    pixels
        .par_iter()
        .map(|&(row, col)| {
            let dir = camera.ray_direction(row, col);
            let Some((t0, t1)) = ray_box(&origin, &dir) else {
                return 0.0;
            };
            let (ts, deltas) = sample_ray(t0, t1, n_samples, None);
            let mut acc = 0.0;
            for (t, d) in ts.iter().zip(&deltas) {
                let s = space.prior_sample(&(origin + *t * dir)).sigma;
                acc += alpha(s, *d) * (1.0 - acc);
            }
            acc
        })
        .collect()
}

/// Pixels whose centre is covered by any projected triangle.
pub fn rasterize_mask(vertices: &[Vec3], faces: &[[u32; 3]], camera: &Camera) -> Vec<bool> {
    let (w, h) = (camera.width, camera.height);
    let mut mask = vec![false; w * h];
    let proj: Vec<Option<(f64, f64)>> = vertices.iter().map(|v| camera.project(v)).collect();
    for f in faces {
        let (Some(a), Some(b), Some(c)) = (proj[f[0] as usize], proj[f[1] as usize], proj[f[2] as usize]) else {
            continue;
        };
        let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        if area == 0.0 {
            continue;
        }
        let edge = |p: (f64, f64), q: (f64, f64), x: f64, y: f64| ((q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0)) * area.signum();
        let c0 = (a.0.min(b.0).min(c.0) - 0.5).floor().max(0.0) as usize;
        let c1 = ((a.0.max(b.0).max(c.0) - 0.5).ceil().max(0.0) as usize).min(w.saturating_sub(1));
        let r0 = (a.1.min(b.1).min(c.1) - 0.5).floor().max(0.0) as usize;
        let r1 = ((a.1.max(b.1).max(c.1) - 0.5).ceil().max(0.0) as usize).min(h.saturating_sub(1));
        for row in r0..=r1 {
            for col in c0..=c1 {
                let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
                if edge(a, b, x, y) >= 0.0 && edge(b, c, x, y) >= 0.0 && edge(c, a, x, y) >= 0.0 {
                    mask[row * w + col] = true;
                }
            }
        }
    }
    mask
}

pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

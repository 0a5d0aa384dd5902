#![allow(dead_code)]

pub mod gradients;
pub mod lbs;

use avatarforge_core::bodymodel::capsule::capsule_person;
use avatarforge_core::bodymodel::PoseShapeParams;
use avatarforge_core::deform::SpaceContext;
use avatarforge_core::field::{FieldConfig, FieldParams, GridConfig, DENSITY_CHANNEL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SHARPNESS: f64 = 1e-3;

/// Every level dense: resolutions 2..8, at most 9³ entries.
pub fn tiny_config() -> FieldConfig {
    FieldConfig {
        grid: GridConfig {
            base_resolution: 2,
            max_resolution: 8,
            log2_table_size: 10,
        },
    }
}

/// Small hashed grid, to exercise the hash path.
pub fn hashed_config() -> FieldConfig {
    FieldConfig {
        grid: GridConfig {
            base_resolution: 2,
            max_resolution: 16,
            log2_table_size: 6,
        },
    }
}

/// Non-trivial parameters: grid features of order 0.3, every layer nonzero,
/// and a density bias that keeps σ positive without a prior.
pub fn generic_params(config: &FieldConfig, seed: u64) -> FieldParams {
    let mut p = FieldParams::new(config, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let grid = p.grid_range();
    for v in &mut p.data[grid] {
        *v = rng.gen_range(-0.3..0.3);
    }
    for name in ["main.layer2.weight", "nonrigid.layer2.weight", "background.layer1.weight"] {
        for v in p.tensor_mut(name).unwrap() {
            *v = rng.gen_range(-0.2..0.2);
        }
    }
    p.tensor_mut("main.layer2.bias").unwrap()[DENSITY_CHANNEL] = 3.0;
    p
}

pub fn arms_down() -> PoseShapeParams {
    let asset = capsule_person();
    let mut p = PoseShapeParams::a_pose(asset, &[0.0; 10]);
    p.xi[16] = [0.0, 0.0, -1.1];
    p.xi[17] = [0.0, 0.0, 1.1];
    p.xi[4] = [0.6, 0.0, 0.0];
    p.xi[1] = [-0.3, 0.0, 0.1];
    p
}

pub fn spaces(obs: &PoseShapeParams) -> (SpaceContext, SpaceContext) {
    let asset = capsule_person();
    let c = SpaceContext::canonical(asset, &[0.0; 10], SHARPNESS).unwrap();
    let o = SpaceContext::observation(asset, &c, obs, SHARPNESS).unwrap();
    (c, o)
}

/// Relative agreement with a small absolute floor.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-9
}

/// Central differences of `loss` at the listed parameter indices, compared
/// with `analytic`. Returns the worst relative error.
pub fn check_param_gradient(
    params: &FieldParams,
    analytic: &[f64],
    indices: &[usize],
    h: f64,
    loss: impl Fn(&FieldParams) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for &i in indices {
        let mut p = params.clone();
        p.data[i] = params.data[i] + h;
        let lp = loss(&p);
        p.data[i] = params.data[i] - h;
        let lm = loss(&p);
        let fd = (lp - lm) / (2.0 * h);
        let err = (fd - analytic[i]).abs() / (fd.abs().max(analytic[i].abs()) + 1e-9);
        assert!(
            err <= 1e-3 || (fd - analytic[i]).abs() < 1e-9,
            "param {i}: analytic {} vs finite difference {fd}",
            analytic[i]
        );
        if err <= 1e-3 {
            worst = worst.max(err);
        }
    }
    worst
}

/// Indices with a nonzero analytic gradient, spread over `range`.
pub fn sample_indices(grad: &[f64], range: std::ops::Range<usize>, count: usize) -> Vec<usize> {
    let nz: Vec<usize> = range.filter(|&i| grad[i].abs() > 1e-7).collect();
    let step = (nz.len() / count).max(1);
    nz.into_iter().step_by(step).take(count).collect()
}

use avatarforge_core::render::{self, iou, rasterize_mask, Camera, Orbit, RenderOptions};

/// Midpoint sampling, no early termination.
pub fn eval_options(n_samples: usize) -> RenderOptions {
    RenderOptions {
        n_samples,
        stratified: false,
        min_transmittance: 0.0,
        background: true,
    }
}

pub fn orbit_camera(azimuth_deg: f64, resolution: usize) -> Camera {
    let orbit = Orbit {
        radius: 1.5,
        elevation_deg: 0.0,
        azimuth_deg,
        fov_deg: 60.0,
    };
    Camera::orbit(&orbit, [0.0; 3], resolution, resolution)
}

/// IoU of the rendered opacity mask (> 0.5) against the rasterized body of
/// `space`, at 64×64 with 64 samples per ray.
pub fn silhouette_iou(params: &FieldParams, space: &SpaceContext, body: &SpaceContext, azimuth_deg: f64) -> f64 {
    let cam = orbit_camera(azimuth_deg, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (img, _) = render::render(params, space, &cam, &eval_options(64), &mut rng).unwrap();
    iou(&img.mask(0.5), &rasterize_mask(&body.body.vertices, &body.body.faces, &cam))
}

/// Observation poses used by the silhouette checks.
pub fn test_poses() -> Vec<(&'static str, PoseShapeParams)> {
    let asset = capsule_person();
    let mut walk = PoseShapeParams::a_pose(asset, &[0.0; 10]);
    walk.xi[1] = [-0.5, 0.0, 0.0];
    walk.xi[2] = [0.4, 0.0, 0.0];
    walk.xi[4] = [0.7, 0.0, 0.0];
    let mut shaped = PoseShapeParams::a_pose(asset, &[0.0; 10]);
    shaped.beta = vec![1.0, -0.5, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    shaped.xi[18] = [0.0, -1.0, 0.0];
    shaped.xi[19] = [0.0, 1.0, 0.0];
    vec![("arms down", arms_down()), ("walking", walk), ("shaped, elbows bent", shaped)]
}

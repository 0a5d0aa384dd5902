//! Finite-difference suites shared by the module tests and the acceptance
//! run. Each panics on a mismatch and returns the worst relative error.

use avatarforge_core::deform::{SpaceContext, SpaceKind};
use avatarforge_core::field::{
    background_backward, background_batch, backward_batch, density_gradients, encode, eval_batch, FieldParams,
    FieldSample, SampleGrad, DENSITY_CHANNEL, ENCODED_DIM,
};
use avatarforge_core::losses::normal_consistency_loss;
use avatarforge_core::render::{self, render_backward};
use avatarforge_core::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub fn random_point(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r))
}

pub fn random_upstream(rng: &mut ChaCha8Rng, n: usize) -> Vec<SampleGrad> {
    (0..n)
        .map(|_| SampleGrad {
            dsigma: rng.gen_range(-1.0..1.0),
            dcolor: [0; 4].map(|_| rng.gen_range(-1.0..1.0)),
            dnormal: [0; 3].map(|_| rng.gen_range(-1.0..1.0)),
        })
        .collect()
}

fn weighted(samples: &[FieldSample], up: &[SampleGrad]) -> f64 {
    samples
        .iter()
        .zip(up)
        .map(|(s, u)| {
            s.sigma * u.dsigma
                + (0..4).map(|k| s.color[k] * u.dcolor[k]).sum::<f64>()
                + (0..3).map(|k| s.normal[k] * u.dnormal[k]).sum::<f64>()
        })
        .sum()
}

fn space_of(kind: SpaceKind) -> SpaceContext {
    let (c, o) = spaces(&arms_down());
    match kind {
        SpaceKind::Canonical => c.without_prior(),
        SpaceKind::Observation => o.without_prior(),
    }
}

/// Hash-grid encoding against its reverse pass, in the table entries and in
/// the query position.
pub fn encode_suite() -> f64 {
    let p = generic_params(&hashed_config(), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = &p.layout().grid;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let x = random_point(&mut rng, 0.9);
        let r: Vec<f64> = (0..ENCODED_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |q: &FieldParams, y: &Vec3| encode(q, y).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        let mut g = p.zeros_like();
        let dx = grid.backward(&p.data, &x, &r, Some(&mut g.data));
        let idx = sample_indices(&g.data, p.grid_range(), 20);
        worst = worst.max(check_param_gradient(&p, &g.data, &idx, 1e-4, |q| loss(q, &x)));
        // tiny step: trilinear interpolation is only piecewise smooth in x
        let h = 1e-8;
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            let fd = (loss(&p, &(x + e)) - loss(&p, &(x - e))) / (2.0 * h);
            let err = (fd - dx[a]).abs() / (fd.abs().max(dx[a].abs()) + 1e-9);
            assert!(err <= 1e-3 || (fd - dx[a]).abs() < 1e-6, "axis {a}: {} vs {fd}", dx[a]);
            worst = worst.max(err);
        }
    }
    worst
}

/// `Σ up · eval(xs)` against the reverse pass over every parameter group that
/// receives gradient in `kind`.
pub fn field_suite(kind: SpaceKind) -> f64 {
    let space = space_of(kind);
    let p = generic_params(&tiny_config(), 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let xs: Vec<Vec3> = (0..6).map(|_| random_point(&mut rng, 0.5)).collect();
    let up = random_upstream(&mut rng, xs.len());
    let mut g = p.zeros_like();
    backward_batch(&p, &space, &xs, &up, Some(&mut g)).unwrap();
    let loss = |q: &FieldParams| weighted(&eval_batch(q, &space, &xs).unwrap(), &up);
    let mut idx = sample_indices(&g.data, p.grid_range(), 25);
    idx.extend(sample_indices(&g.data, p.main_range(), 25));
    if kind == SpaceKind::Observation {
        let nr = sample_indices(&g.data, p.nonrigid_range(), 25);
        assert!(!nr.is_empty(), "no gradient reaches the non-rigid network");
        idx.extend(nr);
    } else {
        assert!(g.data[p.nonrigid_range()].iter().all(|&v| v == 0.0));
    }
    check_param_gradient(&p, &g.data, &idx, 1e-6, loss)
}

pub fn background_suite() -> f64 {
    let p = generic_params(&tiny_config(), 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let dirs: Vec<Vec3> = (0..5).map(|_| random_point(&mut rng, 1.0).normalize()).collect();
    let d: Vec<[f64; 4]> = (0..5).map(|_| [0; 4].map(|_| rng.gen_range(-1.0..1.0))).collect();
    let mut g = p.zeros_like();
    background_backward(&p, &dirs, &d, &mut g);
    let loss = |q: &FieldParams| {
        background_batch(q, &dirs)
            .iter()
            .zip(&d)
            .map(|(b, w)| (0..4).map(|k| b[k] * w[k]).sum::<f64>())
            .sum()
    };
    let idx = sample_indices(&g.data, p.background_range(), 40);
    assert!(idx.len() >= 20);
    check_param_gradient(&p, &g.data, &idx, 1e-4, loss)
}

/// A random linear functional of a 4×4 render against `render_backward`.
pub fn render_suite(kind: SpaceKind) -> f64 {
    let space = space_of(kind);
    let mut p = generic_params(&tiny_config(), 31);
    p.tensor_mut("main.layer2.bias").unwrap()[DENSITY_CHANNEL] = 0.8;
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let g: Vec<f64> = (0..4 * 4 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cam = orbit_camera(30.0, 4);
    let opts = eval_options(16);
    let pixel_loss = |q: &FieldParams| {
        let (img, _) = render::render(q, &space, &cam, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        img.features.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
    };
    let (img, trace) = render::render(&p, &space, &cam, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(img.opacity.iter().any(|&a| a > 0.05 && a < 0.95), "fixture should be semi-transparent");
    let mut grad = p.zeros_like();
    render_backward(&p, &space, &trace, &g, &mut grad).unwrap();
    let mut idx = sample_indices(&grad.data, p.grid_range(), 20);
    idx.extend(sample_indices(&grad.data, p.main_range(), 20));
    idx.extend(sample_indices(&grad.data, p.background_range(), 10));
    if kind == SpaceKind::Observation {
        let nr = sample_indices(&grad.data, p.nonrigid_range(), 10);
        assert!(!nr.is_empty());
        idx.extend(nr);
    }
    // small step: non-rigid weights move samples across trilinear cell faces
    check_param_gradient(&p, &grad.data, &idx, 1e-6, pixel_loss)
}

/// L_n through the field with `∇σ` frozen at the base parameters.
pub fn normal_loss_suite(kind: SpaceKind) -> f64 {
    let space = space_of(kind);
    let p = generic_params(&tiny_config(), 13);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let xs: Vec<Vec3> = (0..24)
        .map(|_| Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.8..0.8), rng.gen_range(-0.3..0.3)))
        .collect();
    let frozen = density_gradients(&p, &space, &xs).unwrap();
    let loss = |q: &FieldParams| {
        let mut samples = eval_batch(q, &space, &xs).unwrap();
        for (s, g) in samples.iter_mut().zip(&frozen) {
            s.density_gradient = Some([g.x, g.y, g.z]);
        }
        normal_consistency_loss(&samples).unwrap()
    };
    let up = loss(&p).grads;
    let mut grad = p.zeros_like();
    backward_batch(&p, &space, &xs, &up, Some(&mut grad)).unwrap();
    let mut idx = sample_indices(&grad.data, p.grid_range(), 15);
    idx.extend(sample_indices(&grad.data, p.main_range(), 25));
    if kind == SpaceKind::Observation {
        idx.extend(sample_indices(&grad.data, p.nonrigid_range(), 10));
    }
    check_param_gradient(&p, &grad.data, &idx, 1e-6, |q| loss(q).value)
}

use std::sync::Arc;

use super::SpatialIndex;
use crate::error::{Error, Result};
use crate::Vec3;

/// Above this τ, `ln(expm1 τ)` is replaced by `τ + ln1p(-e^-τ)`.
const STABLE_SWITCH: f64 = 20.0;
/// Culling grid cells per axis over the scene box.
const CULL_CELLS: usize = 64;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn inv_softplus(tau: f64) -> f64 {
    if tau < STABLE_SWITCH {
        tau.exp_m1().ln()
    } else {
        tau + (-(-tau).exp()).ln_1p()
    }
}

fn check_sharpness(a: f64) -> Result<()> {
    if a > 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sharpness a must be positive, got {a}")))
    }
}

/// Body density from signed distance: `max(0, softplus⁻¹(τ))` with
/// `τ = sigmoid(-d/a) / a`.
pub fn density_from_distance(d: f64, a: f64) -> Result<f64> {
    check_sharpness(a)?;
    Ok(density_unchecked(d, a).0)
}

/// `dσ̄/dd` at `d`; zero wherever the clamp is active.
pub fn density_from_distance_derivative(d: f64, a: f64) -> Result<f64> {
    check_sharpness(a)?;
    Ok(density_unchecked(d, a).1)
}

/// (σ̄, dσ̄/dd).
fn density_unchecked(d: f64, a: f64) -> (f64, f64) {
    let s = sigmoid(-d / a);
    let tau = s / a;
    if tau <= std::f64::consts::LN_2 {
        return (0.0, 0.0);
    }
    let dtau_dd = -s * (1.0 - s) / (a * a);
    let dsig_dtau = 1.0 / -(-tau).exp_m1();
    (inv_softplus(tau), dsig_dtau * dtau_dd)
}

/// Prior density and its spatial gradient at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSample {
    pub sigma: f64,
    pub grad: Vec3,
}

impl PriorSample {
    pub const ZERO: PriorSample = PriorSample {
        sigma: 0.0,
        grad: Vec3::new(0.0, 0.0, 0.0),
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cell {
    Near,
    Outside,
    Inside,
}

/// Density prior over a posed body. A coarse grid marks cells that lie wholly
/// beyond the sigmoid's saturation distance, where σ̄ is a known constant;
/// every other point runs the exact signed-distance query. Results are
/// identical to querying exactly everywhere.
#[derive(Debug, Clone)]
pub struct DensityPrior {
    index: Arc<SpatialIndex>,
    a: f64,
    inside_value: f64,
    cells: Vec<Cell>,
}

impl DensityPrior {
    pub fn new(index: Arc<SpatialIndex>, a: f64) -> Result<Self> {
        check_sharpness(a)?;
        // beyond `cutoff` both the sigmoid (which rounds to 0 or 1) and the
        // clamp make σ̄ constant with zero gradient
        let clamp_d = a * (1.0 / (a * std::f64::consts::LN_2) - 1.0).max(1.0).ln();
        let cutoff = (40.0 * a).max(clamp_d + a);
        let inside_value = density_unchecked(-cutoff, a).0;
        debug_assert_eq!(density_unchecked(-cutoff, a).1, 0.0);

        let n = CULL_CELLS;
        let h = 2.0 / n as f64;
        let centre = |i: f64, j: f64, k: f64| Vec3::new(-1.0 + i * h, -1.0 + j * h, -1.0 + k * h);
        let classify = |d: f64, half_diag: f64| {
            if d > cutoff + half_diag {
                Cell::Outside
            } else if d < -(cutoff + half_diag) {
                Cell::Inside
            } else {
                Cell::Near
            }
        };
        let mut cells = vec![Cell::Near; n * n * n];
        // classify 8³ blocks first; only undecided blocks visit their cells
        let b = 8;
        for (bi, bj, bk) in (0..n / b).flat_map(|i| (0..n / b).flat_map(move |j| (0..n / b).map(move |k| (i, j, k)))) {
            let mid = |t: usize| (t * b) as f64 + 0.5 * b as f64;
            let d = index.signed_distance(&centre(mid(bi), mid(bj), mid(bk))).d;
            let block = classify(d, 0.5 * h * b as f64 * 3f64.sqrt());
            for i in bi * b..(bi + 1) * b {
                for j in bj * b..(bj + 1) * b {
                    for k in bk * b..(bk + 1) * b {
                        cells[(i * n + j) * n + k] = if block != Cell::Near {
                            block
                        } else {
                            let c = centre(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5);
                            classify(index.signed_distance(&c).d, 0.5 * h * 3f64.sqrt())
                        };
                    }
                }
            }
        }
        Ok(Self {
            index,
            a,
            inside_value,
            cells,
        })
    }

    pub fn sharpness(&self) -> f64 {
        self.a
    }

    pub fn index(&self) -> &Arc<SpatialIndex> {
        &self.index
    }

    fn cell(&self, x: &Vec3) -> Cell {
        let n = CULL_CELLS;
        let mut c = [0usize; 3];
        for k in 0..3 {
            let u = (x[k] + 1.0) * 0.5 * n as f64;
            if !(u >= 0.0 && u < n as f64) {
                return Cell::Near;
            }
            c[k] = u as usize;
        }
        self.cells[(c[0] * n + c[1]) * n + c[2]]
    }

    pub fn sigma(&self, x: &Vec3) -> f64 {
        self.sample(x).sigma
    }

    pub fn sample(&self, x: &Vec3) -> PriorSample {
        match self.cell(x) {
            Cell::Outside => PriorSample::ZERO,
            Cell::Inside => PriorSample {
                sigma: self.inside_value,
                grad: Vec3::zeros(),
            },
            Cell::Near => self.sample_exact(x),
        }
    }

    /// Evaluates without the culling grid.
    pub fn sample_exact(&self, x: &Vec3) -> PriorSample {
        let sd = self.index.signed_distance(x);
        let (sigma, dsig_dd) = density_unchecked(sd.d, self.a);
        if dsig_dd == 0.0 {
            return PriorSample {
                sigma,
                grad: Vec3::zeros(),
            };
        }
        let diff = x - sd.closest_point;
        let dist = diff.norm();
        let grad_d = if dist > 0.0 { diff * (sd.d.signum() / dist) } else { Vec3::zeros() };
        PriorSample {
            sigma,
            grad: grad_d * dsig_dd,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::unit_cube;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const A: f64 = 0.001;

    fn rel(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            a.abs()
        } else {
            ((a - b) / b).abs()
        }
    }

    #[test]
    fn matches_extended_precision_values() {
        let cases = [
            (-0.1, 1000.0),
            (-0.01, 999.9546021312975656),
            (-0.001, 731.0585786300048793),
            (-0.0005, 622.4593312018545646),
            (0.0, 500.0),
            (0.001, 268.9414213699951207),
            (0.003, 47.42587317756678088),
            (0.005, 6.691610411851702737),
            (0.01, 0.0),
            (0.1, 0.0),
        ];
        for (d, want) in cases {
            let got = density_from_distance(d, A).unwrap();
            assert!(rel(got, want) < 1e-12, "d={d}: {got} vs {want}");
        }
    }

    #[test]
    fn clamp_boundary_and_deep_inside() {
        let edge = A * (1.0 / (A * std::f64::consts::LN_2) - 1.0).ln();
        assert_eq!(density_from_distance(edge + 1e-12, A).unwrap(), 0.0);
        assert!(density_from_distance(edge - 1e-6, A).unwrap() > 0.0);
        assert!(rel(density_from_distance(-0.05, A).unwrap(), 1.0 / A) < 1e-3);
    }

    #[test]
    fn rejects_nonpositive_sharpness() {
        assert!(density_from_distance(0.0, 0.0).is_err());
        assert!(density_from_distance(0.0, -1.0).is_err());
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for a in [0.001, 0.05] {
            for &d in &[-2.0 * a, -0.5 * a, 0.0, 0.7 * a, 2.0 * a, 4.0 * a] {
                let h = a * 1e-5;
                let fd = (density_from_distance(d + h, a).unwrap() - density_from_distance(d - h, a).unwrap()) / (2.0 * h);
                let an = density_from_distance_derivative(d, a).unwrap();
                assert!(rel(an, fd) < 1e-6, "a={a} d={d}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn culled_equals_exact() {
        let (v, f) = unit_cube();
        let idx = Arc::new(SpatialIndex::build(&v, &f).unwrap());
        for a in [0.001, 0.02] {
            let prior = DensityPrior::new(idx.clone(), a).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..5000 {
                let x = Vec3::new(rng.gen_range(-1.1..1.1), rng.gen_range(-1.1..1.1), rng.gen_range(-1.1..1.1));
                assert_eq!(prior.sample(&x), prior.sample_exact(&x), "{x:?}");
            }
        }
    }
}

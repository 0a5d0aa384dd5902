//! Multiresolution trilinear feature grid. Coarse levels index densely; levels
//! whose vertex count exceeds the table size use the spatial hash.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::Vec3;

pub const LEVELS: usize = 16;
pub const FEATURES: usize = 2;
pub const ENCODED_DIM: usize = LEVELS * FEATURES;

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub base_resolution: usize,
    pub max_resolution: usize,
    pub log2_table_size: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            base_resolution: 16,
            max_resolution: 512,
            log2_table_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub resolution: usize,
    pub entries: usize,
    pub dense: bool,
    /// Offset of this level's table (entries × FEATURES) in the parameter vector.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    pub levels: Vec<Level>,
    len: usize,
}

/// Corner lookups of one point at one level.
pub struct Corners {
    /// Parameter index of feature 0 for each corner.
    pub index: [usize; 8],
    pub weight: [f64; 8],
    /// `∂weight / ∂x` per corner and axis.
    pub dweight: [[f64; 3]; 8],
}

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

impl GridLayout {
    pub fn new(cfg: &GridConfig, base: usize) -> Self {
        let table = 1usize << cfg.log2_table_size;
        let growth = if LEVELS > 1 {
            ((cfg.max_resolution as f64).ln() - (cfg.base_resolution as f64).ln()) / (LEVELS - 1) as f64
        } else {
            0.0
        };
        let mut off = base;
        let levels = (0..LEVELS)
            .map(|l| {
                let resolution = ((cfg.base_resolution as f64) * (growth * l as f64).exp() + 1e-9).floor() as usize;
                let dense_entries = (resolution + 1).pow(3);
                let dense = dense_entries <= table;
                let entries = if dense { dense_entries } else { table };
                let level = Level {
                    resolution,
                    entries,
                    dense,
                    offset: off,
                };
                off += entries * FEATURES;
                level
            })
            .collect();
        Self { levels, len: off - base }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Maps a scene point to unit-cube coordinates, clamping (with a one-time
    /// warning) outside `[-1, 1]³`. Returns the per-axis `∂u/∂x`.
    pub fn normalize(x: &Vec3) -> (Vec3, Vec3) {
        let mut u = Vec3::zeros();
        let mut du = Vec3::repeat(0.5);
        for a in 0..3 {
            let v = (x[a] + 1.0) * 0.5;
            if !(0.0..=1.0).contains(&v) {
                if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
                    log::warn!("encoder input {x:?} outside the scene box; clamping");
                }
                du[a] = 0.0;
            }
            u[a] = v.clamp(0.0, 1.0);
        }
        (u, du)
    }

    pub fn corners(&self, level: &Level, u: &Vec3, du: &Vec3) -> Corners {
        let n = level.resolution;
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let p = u[a] * n as f64;
            let i = (p as usize).min(n - 1);  // u ≥ 0, so truncation floors
            cell[a] = i;
            frac[a] = p - i as f64;
        }
        let mut out = Corners {
            index: [0; 8],
            weight: [0.0; 8],
            dweight: [[0.0; 3]; 8],
        };
        for c in 0..8 {
            let bit = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let g = [cell[0] + bit[0], cell[1] + bit[1], cell[2] + bit[2]];
            out.index[c] = level.offset + level_entry(level, g) * FEATURES;
            let f: [f64; 3] = std::array::from_fn(|a| if bit[a] == 1 { frac[a] } else { 1.0 - frac[a] });
            out.weight[c] = f[0] * f[1] * f[2];
            for a in 0..3 {
                let sign = if bit[a] == 1 { 1.0 } else { -1.0 };
                let others: f64 = (0..3).filter(|&b| b != a).map(|b| f[b]).product();
                out.dweight[c][a] = sign * others * n as f64 * du[a];
            }
        }
        out
    }

    /// Writes the `ENCODED_DIM` features of `x` into `out`.
    pub fn encode(&self, params: &[f64], x: &Vec3, out: &mut [f64]) {
        let (u, _) = Self::normalize(x);
        for (l, level) in self.levels.iter().enumerate() {
            let n = level.resolution;
            let mut cell = [0usize; 3];
            let mut w = [[0.0; 2]; 3];
            for a in 0..3 {
                let p = u[a] * n as f64;
                let i = (p as usize).min(n - 1);
                cell[a] = i;
                let fr = p - i as f64;
                w[a] = [1.0 - fr, fr];
            }
            let mut acc = [0.0; FEATURES];
            for c in 0..8 {
                let bit = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
                let g = [cell[0] + bit[0], cell[1] + bit[1], cell[2] + bit[2]];
                let idx = level.offset + level_entry(level, g) * FEATURES;
                let wt = w[0][bit[0]] * w[1][bit[1]] * w[2][bit[2]];
                for (f, a) in acc.iter_mut().enumerate() {
                    *a += wt * params[idx + f];
                }
            }
            out[l * FEATURES..(l + 1) * FEATURES].copy_from_slice(&acc);
        }
    }

    /// Given `dL/d features` for `x`, accumulates table gradients into `grad`
    /// (when given) and returns `dL/dx`.
    pub fn backward(&self, params: &[f64], x: &Vec3, d_feat: &[f64], mut grad: Option<&mut [f64]>) -> Vec3 {
        let (u, du) = Self::normalize(x);
        let mut dx = Vec3::zeros();
        for (l, level) in self.levels.iter().enumerate() {
            let d = &d_feat[l * FEATURES..(l + 1) * FEATURES];
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            let c = self.corners(level, &u, &du);
            for k in 0..8 {
                let mut proj = 0.0;
                for f in 0..FEATURES {
                    proj += d[f] * params[c.index[k] + f];
                    if let Some(g) = grad.as_deref_mut() {
                        g[c.index[k] + f] += c.weight[k] * d[f];
                    }
                }
                for a in 0..3 {
                    dx[a] += c.dweight[k][a] * proj;
                }
            }
        }
        dx
    }
}

#[inline]
fn level_entry(level: &Level, g: [usize; 3]) -> usize {
    if level.dense {
        let n = level.resolution + 1;
        g[0] + g[1] * n + g[2] * n * n
    } else {
        let h = (g[0] as u32).wrapping_mul(PRIMES[0]) ^ (g[1] as u32).wrapping_mul(PRIMES[1]) ^ (g[2] as u32).wrapping_mul(PRIMES[2]);
        h as usize & (level.entries - 1)
    }
}

//! Isosurface extraction from a density field and OBJ / binary PLY output.

mod io;
mod mc;
mod table;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deform::{SpaceContext, SpaceKind};
use crate::error::{Error, Result};
use crate::field::{self, FieldParams};
use crate::Vec3;

pub use io::{read_obj, read_ply, write_mesh, write_obj, write_ply, MeshFormat};
pub use mc::{marching_cubes, SampleGrid};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// V − E + F, counting each undirected edge once.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.vertices.len() as i64 - edges.len() as i64 + self.faces.len() as i64
    }

    pub fn is_closed(&self) -> bool {
        crate::geoquery::is_closed(&self.faces)
    }

    /// Signed volume by the divergence theorem; positive for outward-facing
    /// closed meshes.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Drops vertices no face references, keeping relative order.
    pub fn compact(&mut self) {
        let mut remap: HashMap<u32, u32> = HashMap::new();
        let mut used: Vec<u32> = self.faces.iter().flatten().copied().collect();
        used.sort_unstable();
        used.dedup();
        let vertices = used
            .iter()
            .enumerate()
            .map(|(new, &old)| {
                remap.insert(old, new as u32);
                self.vertices[old as usize]
            })
            .collect();
        self.vertices = vertices;
        for f in &mut self.faces {
            *f = f.map(|i| remap[&i]);
        }
    }
}

/// Any scalar density over the scene box.
pub trait DensitySource: Sync {
    fn density(&self, x: &Vec3) -> f64;
}

impl<F: Fn(&Vec3) -> f64 + Sync> DensitySource for F {
    fn density(&self, x: &Vec3) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Sample points per axis over `[-1, 1]`.
    pub grid_resolution: usize,
    pub iso_level: f64,
    pub space: SpaceKind,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 128,
            iso_level: 25.0,
            space: SpaceKind::Canonical,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_resolution < 8 {
            return Err(Error::InvalidArgument(format!(
                "grid_resolution must be at least 8, got {}",
                self.grid_resolution
            )));
        }
        if !(self.iso_level > 0.0) {
            return Err(Error::InvalidArgument(format!("iso_level must be positive, got {}", self.iso_level)));
        }
        Ok(())
    }

    /// Grid spacing.
    pub fn voxel_size(&self) -> f64 {
        2.0 / (self.grid_resolution - 1) as f64
    }
}

/// Samples `source` on the configured grid and extracts `{σ >= iso}`. An empty
/// isosurface yields an empty mesh.
pub fn extract_isosurface(source: &dyn DensitySource, config: &ExtractionConfig) -> Result<TriangleMesh> {
    config.validate()?;
    let n = config.grid_resolution;
    let probe = SampleGrid {
        n,
        lo: -1.0,
        hi: 1.0,
        values: &[],
    };
    let values: Vec<f64> = (0..n * n * n)
        .into_par_iter()
        .map(|c| source.density(&probe.point(c / (n * n), (c / n) % n, c % n)))
        .collect();
    mesh_from_samples(&values, config)
}

/// Marching cubes over densities already sampled on the configured grid.
pub fn mesh_from_samples(values: &[f64], config: &ExtractionConfig) -> Result<TriangleMesh> {
    config.validate()?;
    let n = config.grid_resolution;
    if values.len() != n * n * n {
        return Err(Error::DimensionMismatch(format!("{} samples for a {n}³ grid", values.len())));
    }
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite density at grid sample {bad}")));
    }
    let grid = SampleGrid {
        n,
        lo: -1.0,
        hi: 1.0,
        values,
    };
    Ok(marching_cubes(&grid, config.iso_level))
}

/// Extracts the `σ = iso` surface of the field in the configured space.
pub fn extract_mesh(
    params: &FieldParams,
    canonical: &SpaceContext,
    observation: &SpaceContext,
    config: &ExtractionConfig,
) -> Result<TriangleMesh> {
    config.validate()?;
    let space = match config.space {
        SpaceKind::Canonical => canonical,
        SpaceKind::Observation => observation,
    };
    let n = config.grid_resolution;
    let probe = SampleGrid {
        n,
        lo: -1.0,
        hi: 1.0,
        values: &[],
    };
    let rows: Vec<Vec<f64>> = (0..n * n)
        .into_par_iter()
        .map(|r| {
            let pts: Vec<Vec3> = (0..n).map(|k| probe.point(r / n, r % n, k)).collect();
            Ok(field::eval_batch(params, space, &pts)?.iter().map(|s| s.sigma).collect())
        })
        .collect::<Result<_>>()?;
    mesh_from_samples(&rows.concat(), config)
}

/// Symmetric Hausdorff distance between two vertex sets, measured
/// point-to-surface against each mesh.
pub fn hausdorff_distance(a: &TriangleMesh, b: &TriangleMesh) -> Result<f64> {
    let ia = crate::geoquery::SpatialIndex::build(&a.vertices, &a.faces)?;
    let ib = crate::geoquery::SpatialIndex::build(&b.vertices, &b.faces)?;
    let ab = a
        .vertices
        .par_iter()
        .map(|v| ib.signed_distance(v).d.abs())
        .reduce(|| 0.0, f64::max);
    let ba = b
        .vertices
        .par_iter()
        .map(|v| ia.signed_distance(v).d.abs())
        .reduce(|| 0.0, f64::max);
    Ok(ab.max(ba))
}

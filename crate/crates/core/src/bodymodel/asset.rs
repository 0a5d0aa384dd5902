//! `AVBM` asset file: the named-tensor container with the body model sections.

use std::path::Path;

use super::{BodyModelAsset, MAX_INFLUENCES};
use crate::container::{Container, Section};
use crate::error::{Error, Result};
use crate::Vec3;

pub const ASSET_MAGIC: [u8; 4] = *b"AVBM";
pub const ASSET_VERSION: u32 = 1;
/// Parent index stored for the root joint.
const ROOT_PARENT: u32 = u32::MAX;

impl BodyModelAsset {
    pub fn to_container(&self) -> Container {
        let v = self.num_vertices();
        let j = self.num_joints();
        let mut c = Container::new(ASSET_MAGIC, ASSET_VERSION);
        let verts: Vec<f64> = self.template_vertices.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        c.push(Section::f32_from_f64("vertices", &[v, 3], &verts));
        c.push(Section::u32(
            "faces",
            &[self.faces.len(), 3],
            self.faces.iter().flatten().copied().collect(),
        ));
        c.push(Section::f32_from_f64("joint_regressor", &[j, v], &self.joint_regressor));
        let w: Vec<f64> = self.skin_weights.iter().flatten().copied().collect();
        c.push(Section::f32_from_f64("skin_weights", &[v, MAX_INFLUENCES], &w));
        c.push(Section::u32(
            "skin_indices",
            &[v, MAX_INFLUENCES],
            self.skin_indices.iter().flatten().copied().collect(),
        ));
        c.push(Section::f32_from_f64("shape_basis", &[v, 3, self.n_shape], &self.shape_basis));
        c.push(Section::f32_from_f64("pose_basis", &[v, 3, self.pose_features()], &self.pose_basis));
        c.push(Section::u32(
            "parents",
            &[j],
            self.parents.iter().map(|p| p.map_or(ROOT_PARENT, |p| p as u32)).collect(),
        ));
        let a: Vec<f64> = self.a_pose.iter().flatten().copied().collect();
        c.push(Section::f32_from_f64("a_pose", &[j, 3], &a));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.version != ASSET_VERSION {
            return Err(Error::malformed("asset", format!("unsupported version {}", c.version)));
        }
        let (vshape, verts) = c.f32_section("vertices", &[None, Some(3)])?;
        let v = vshape[0];
        let (_, faces) = c.u32_section("faces", &[None, Some(3)])?;
        let (_, parents) = c.u32_section("parents", &[None])?;
        let j = parents.len();
        if j == 0 {
            return Err(Error::SkeletonNotTree("no joints".into()));
        }
        let (_, reg) = c.f32_section("joint_regressor", &[Some(j), Some(v)])?;
        let (_, w) = c.f32_section("skin_weights", &[Some(v), Some(MAX_INFLUENCES)])?;
        let (_, wi) = c.u32_section("skin_indices", &[Some(v), Some(MAX_INFLUENCES)])?;
        let (sshape, shape_basis) = c.f32_section("shape_basis", &[Some(v), Some(3), None])?;
        let (_, pose_basis) = c.f32_section("pose_basis", &[Some(v), Some(3), Some(9 * (j - 1))])?;
        let (_, a_pose) = c.f32_section("a_pose", &[Some(j), Some(3)])?;

        let widen = |s: &[f32]| s.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let asset = BodyModelAsset {
            template_vertices: verts
                .chunks_exact(3)
                .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64))
                .collect(),
            faces: faces.chunks_exact(3).map(|f| [f[0], f[1], f[2]]).collect(),
            joint_regressor: widen(reg),
            skin_weights: w
                .chunks_exact(MAX_INFLUENCES)
                .map(|r| [r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64])
                .collect(),
            skin_indices: wi.chunks_exact(MAX_INFLUENCES).map(|r| [r[0], r[1], r[2], r[3]]).collect(),
            shape_basis: widen(shape_basis),
            n_shape: sshape[2],
            pose_basis: widen(pose_basis),
            parents: parents
                .iter()
                .map(|&p| if p == ROOT_PARENT { None } else { Some(p as usize) })
                .collect(),
            a_pose: a_pose.chunks_exact(3).map(|r| [r[0] as f64, r[1] as f64, r[2] as f64]).collect(),
        };
        asset.validate()?;
        Ok(asset)
    }

    /// Loads an `AVBM` file. Malformed sections and unnormalized weights are
    /// rejected, never repaired.
    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path, ASSET_MAGIC)?;
        let asset = Self::from_container(&c)?;
        if !crate::geoquery::is_closed(&asset.faces) {
            log::warn!("asset {} is not a closed mesh; signed distances fall back to unsigned", path.display());
        }
        Ok(asset)
    }

    /// Writes the asset and a `<path>.json` sidecar listing section shapes.
    pub fn save(&self, path: &Path) -> Result<()> {
        let c = self.to_container();
        c.write(path)?;
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".json");
        std::fs::write(sidecar, serde_json::to_vec_pretty(&c.shape_manifest())?)?;
        Ok(())
    }
}

//! Observation → canonical mapping by inverse skinning from the nearest
//! observed body vertex, and the per-space context (body, prior, deformer)
//! that field evaluation and rendering run against.

use std::sync::Arc;

use nalgebra::{Matrix3, Matrix4};

use crate::bodymodel::{apply_affine, linear_part, BodyModelAsset, PoseShapeParams, PosedBody};
use crate::error::{Error, Result};
use crate::geoquery::{DensityPrior, PriorSample, SpatialIndex};
use crate::Vec3;

/// Minimum |det| of a skinning transform's linear part.
pub const MIN_DETERMINANT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Canonical,
    Observation,
}

impl SpaceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpaceKind::Canonical => "canonical",
            SpaceKind::Observation => "observation",
        }
    }
}

impl std::fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SpaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(SpaceKind::Canonical),
            "observation" => Ok(SpaceKind::Observation),
            _ => Err(Error::InvalidArgument(format!("unknown space '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacePoint {
    pub position: Vec3,
    pub space: SpaceKind,
}

#[derive(Debug, Clone)]
enum VertexMap {
    Affine(Matrix4<f64>),
    Singular(f64),
}

/// Per-vertex affine maps taking the observed body onto the canonical body.
#[derive(Debug, Clone)]
pub struct InverseLbs {
    identity: bool,
    maps: Vec<VertexMap>,
}

impl InverseLbs {
    /// For observed vertex `k`, `M_k = G_A,k · T(−δ_k) · G_obs,k⁻¹` where
    /// `δ_k` is the difference of the two bodies' shaped rest vertices, so
    /// `M_k` sends observed vertex `k` exactly onto canonical vertex `k`.
    pub fn new(canonical: &PosedBody, observed: &PosedBody) -> Result<Self> {
        if canonical.vertices.len() != observed.vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "canonical body has {} vertices, observed body {}",
                canonical.vertices.len(),
                observed.vertices.len()
            )));
        }
        let identity = canonical.source == observed.source;
        let maps = if identity {
            Vec::new()
        } else {
            (0..observed.vertices.len())
                .map(|k| {
                    let g_obs = &observed.per_vertex_transform[k];
                    let det = linear_part(g_obs).determinant();
                    if det.abs() < MIN_DETERMINANT {
                        return VertexMap::Singular(det);
                    }
                    let inv = g_obs.try_inverse().expect("nonzero determinant");
                    let delta = observed.shaped_vertices[k] - canonical.shaped_vertices[k];
                    let shift = Matrix4::new_translation(&-delta);
                    VertexMap::Affine(canonical.per_vertex_transform[k] * shift * inv)
                })
                .collect()
        };
        Ok(Self { identity, maps })
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// Maps `x` with vertex `k`'s transform. Returns the mapped point and the
    /// linear part (the Jacobian of the map).
    pub fn apply(&self, k: usize, x: &Vec3) -> Result<(Vec3, Matrix3<f64>)> {
        if self.identity {
            return Ok((*x, Matrix3::identity()));
        }
        match &self.maps[k] {
            VertexMap::Affine(m) => Ok((apply_affine(m, x), linear_part(m))),
            VertexMap::Singular(det) => Err(Error::SingularTransform { vertex: k, det: *det }),
        }
    }

    pub fn transform(&self, k: usize) -> Result<Matrix4<f64>> {
        if self.identity {
            return Ok(Matrix4::identity());
        }
        match &self.maps[k] {
            VertexMap::Affine(m) => Ok(*m),
            VertexMap::Singular(det) => Err(Error::SingularTransform { vertex: k, det: *det }),
        }
    }
}

/// Everything needed to evaluate the field in one space.
#[derive(Debug, Clone)]
pub struct SpaceContext {
    pub kind: SpaceKind,
    pub body: Arc<PosedBody>,
    index: Arc<SpatialIndex>,
    prior: Option<DensityPrior>,
    deformer: Option<InverseLbs>,
}

impl SpaceContext {
    /// The canonical A-pose space.
    pub fn canonical(asset: &BodyModelAsset, beta: &[f64], sharpness: f64) -> Result<Self> {
        let body = Arc::new(asset.canonical_a_pose_with_shape(beta)?);
        Self::from_body(SpaceKind::Canonical, body, None, sharpness)
    }

    /// The observation space for `params`, deforming back to `canonical`.
    pub fn observation(
        asset: &BodyModelAsset,
        canonical: &SpaceContext,
        params: &PoseShapeParams,
        sharpness: f64,
    ) -> Result<Self> {
        let body = Arc::new(asset.pose_body(params)?);
        let deformer = InverseLbs::new(&canonical.body, &body)?;
        Self::from_body(SpaceKind::Observation, body, Some(deformer), sharpness)
    }

    fn from_body(kind: SpaceKind, body: Arc<PosedBody>, deformer: Option<InverseLbs>, sharpness: f64) -> Result<Self> {
        let index = Arc::new(SpatialIndex::build(&body.vertices, &body.faces)?);
        let prior = Some(DensityPrior::new(index.clone(), sharpness)?);
        Ok(Self {
            kind,
            body,
            index,
            prior,
            deformer,
        })
    }

    /// Same space with the body prior switched off (σ̄ ≡ 0).
    pub fn without_prior(mut self) -> Self {
        self.prior = None;
        self
    }

    pub fn has_prior(&self) -> bool {
        self.prior.is_some()
    }

    pub fn index(&self) -> &Arc<SpatialIndex> {
        &self.index
    }

    pub fn deformer(&self) -> Option<&InverseLbs> {
        self.deformer.as_ref()
    }

    /// Whether the non-rigid offset applies (observation space only).
    pub fn uses_nonrigid(&self) -> bool {
        self.kind == SpaceKind::Observation
    }

    pub fn prior_sample(&self, x: &Vec3) -> PriorSample {
        match &self.prior {
            Some(p) => p.sample(x),
            None => PriorSample::ZERO,
        }
    }

    /// `x_c^lbs` and its Jacobian with respect to `x`.
    pub fn inverse_lbs(&self, x: &Vec3) -> Result<(Vec3, Matrix3<f64>)> {
        match &self.deformer {
            None => Ok((*x, Matrix3::identity())),
            Some(d) if d.is_identity() => Ok((*x, Matrix3::identity())),
            Some(d) => {
                let (k, _) = self.index.nearest_vertex(x);
                d.apply(k, x)
            }
        }
    }
}

/// `x_c^lbs` for an observation-space point.
pub fn inverse_lbs(space: &SpaceContext, x_o: &SpacePoint) -> Result<SpacePoint> {
    if x_o.space != space.kind {
        return Err(Error::InvalidArgument(format!(
            "point tagged {:?} evaluated in {:?} space",
            x_o.space, space.kind
        )));
    }
    Ok(SpacePoint {
        position: space.inverse_lbs(&x_o.position)?.0,
        space: SpaceKind::Canonical,
    })
}

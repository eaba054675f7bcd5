//! Triangle meshes with optional per-vertex attributes.
//!
//! Meshes are accepted as-is: non-manifold, unoriented, open and
//! self-intersecting inputs all load. The only structural requirement is that
//! every face index refers to an existing vertex.

mod io;
pub mod primitives;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Vec3};

pub use io::{export_mesh, load_mesh, load_obj, load_ply, write_ply};

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Unit per-vertex normals, see [`compute_vertex_normals`].
    pub normals: Option<Vec<Vec3>>,
    /// Per-vertex RGB in `[0, 1]`.
    pub colors: Option<Vec<Vec3>>,
}

impl Mesh {
    /// Builds a mesh after checking that every face index is in range.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Mesh {
            vertices,
            faces,
            normals: None,
            colors: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, face) in self.faces.iter().enumerate() {
            for &index in face {
                if index >= n {
                    return Err(Error::FaceIndexOutOfRange {
                        face: fi,
                        index,
                        vertex_count: n,
                    });
                }
            }
        }
        if let Some(normals) = &self.normals {
            check_len("normals", n, normals.len())?;
        }
        if let Some(colors) = &self.colors {
            check_len("colors", n, colors.len())?;
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// For each undirected edge, the faces that contain it.
    pub fn edge_faces(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                if a != b {
                    map.entry((a.min(b), a.max(b))).or_default().push(fi);
                }
            }
        }
        map
    }

    /// Unnormalized face normal; its length is twice the face area.
    pub fn face_normal_raw(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.faces[face];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        math::cross(math::sub(pb, pa), math::sub(pc, pa))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * math::norm(self.face_normal_raw(face))
    }

    /// Vertex positions mapped through `transform`, attributes kept.
    pub fn transformed(&self, transform: &NormalizationTransform) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|&v| transform.apply(v)).collect(),
            ..self.clone()
        }
    }

    pub fn max_radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|&v| math::norm(v))
            .fold(0.0, f64::max)
    }
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

/// `apply(v) = (v + translation) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub translation: Vec3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        NormalizationTransform {
            translation: [0.0; 3],
            scale: 1.0,
        }
    }

    #[inline]
    pub fn apply(&self, v: Vec3) -> Vec3 {
        math::scale(math::add(v, self.translation), self.scale)
    }

    #[inline]
    pub fn invert(&self, v: Vec3) -> Vec3 {
        math::sub(math::scale(v, 1.0 / self.scale), self.translation)
    }
}

/// Centers the bounding box at the origin and scales uniformly so the
/// farthest vertex lies on the unit sphere.
pub fn normalize_mesh(mesh: &Mesh) -> Result<(Mesh, NormalizationTransform)> {
    if mesh.vertices.is_empty() {
        return Err(Error::DegenerateMesh("mesh has no vertices".into()));
    }
    if mesh.vertices.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("vertex coordinates".into()));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in &mesh.vertices {
        for k in 0..3 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let center = math::scale(math::add(lo, hi), 0.5);
    let translation = math::scale(center, -1.0);
    let radius = mesh
        .vertices
        .iter()
        .map(|&v| math::norm(math::add(v, translation)))
        .fold(0.0, f64::max);
    if radius <= 1e-12 {
        return Err(Error::DegenerateMesh(
            "all vertices coincide; normalization scale would be zero".into(),
        ));
    }
    let transform = NormalizationTransform {
        translation,
        scale: 1.0 / radius,
    };
    Ok((mesh.transformed(&transform), transform))
}

/// Area-weighted average of incident face normals. Zero-area faces add
/// nothing; vertices without a usable normal get `(0, 0, 1)`.
pub fn compute_vertex_normals(mesh: &Mesh) -> Mesh {
    let mut acc = vec![[0.0; 3]; mesh.vertices.len()];
    for (fi, face) in mesh.faces.iter().enumerate() {
        let n = mesh.face_normal_raw(fi);
        for &v in face {
            acc[v] = math::add(acc[v], n);
        }
    }
    let normals = acc
        .into_iter()
        .map(|n| math::normalize(n).unwrap_or([0.0, 0.0, 1.0]))
        .collect();
    Mesh {
        normals: Some(normals),
        ..mesh.clone()
    }
}

/// 1-to-4 split of every face. Original vertices keep their indices; edge
/// midpoints are appended in order of first appearance.
pub fn midpoint_subdivide(mesh: &Mesh) -> Mesh {
    let mut vertices = mesh.vertices.clone();
    let mut colors = mesh.colors.clone();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            vertices.push(math::lerp(vertices[key.0], vertices[key.1], 0.5));
            if let Some(colors) = colors.as_mut() {
                colors.push(math::lerp(colors[key.0], colors[key.1], 0.5));
            }
            vertices.len() - 1
        })
    };
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
    for &[a, b, c] in &mesh.faces {
        let ab = midpoint(a, b, &mut vertices);
        let bc = midpoint(b, c, &mut vertices);
        let ca = midpoint(c, a, &mut vertices);
        faces.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    let out = Mesh {
        vertices,
        faces,
        normals: None,
        colors,
    };
    if mesh.normals.is_some() {
        compute_vertex_normals(&out)
    } else {
        out
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::mesh::{compute_vertex_normals, Mesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Extrude,
    Stretch,
    Delete,
    Select,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditSpec {
    pub kind: EditKind,
    /// Extrusion distance along the normal, or stretch offset length.
    #[serde(default)]
    pub magnitude: f64,
    /// Stretch direction, normalized on use.
    #[serde(default = "default_direction")]
    pub direction: Vec3,
}

fn default_direction() -> Vec3 {
    [0.0, 1.0, 0.0]
}

impl EditSpec {
    pub fn new(kind: EditKind, magnitude: f64) -> Self {
        EditSpec {
            kind,
            magnitude,
            direction: default_direction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.magnitude.is_finite() {
            return Err(Error::NonFinite("edit magnitude".into()));
        }
        if self.kind == EditKind::Stretch && math::normalize(self.direction).is_none() {
            return Err(Error::InvalidConfig("stretch direction must be nonzero".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditOutput {
    pub mesh: Mesh,
    /// `old vertex → new vertex`; `None` for removed vertices.
    pub vertex_map: Vec<Option<usize>>,
}

fn check_mask(mesh: &Mesh, mask: &[bool]) -> Result<()> {
    if mask.len() != mesh.vertex_count() {
        return Err(Error::LengthMismatch {
            what: "mask",
            expected: mesh.vertex_count(),
            actual: mask.len(),
        });
    }
    Ok(())
}

pub fn apply_edit(mesh: &Mesh, mask: &[bool], spec: &EditSpec) -> Result<EditOutput> {
    spec.validate()?;
    let identity = || (0..mesh.vertex_count()).map(Some).collect();
    match spec.kind {
        EditKind::Extrude => Ok(EditOutput {
            mesh: extrude_region(mesh, mask, spec.magnitude)?,
            vertex_map: identity(),
        }),
        EditKind::Stretch => {
            let dir = math::normalize(spec.direction).expect("validated");
            Ok(EditOutput {
                mesh: stretch_region(mesh, mask, math::scale(dir, spec.magnitude))?,
                vertex_map: identity(),
            })
        }
        EditKind::Delete => delete_region(mesh, mask),
        EditKind::Select => select_region(mesh, mask),
    }
}

/// Moves masked vertices by `delta` along their vertex normals.
pub fn extrude_region(mesh: &Mesh, mask: &[bool], delta: f64) -> Result<Mesh> {
    check_mask(mesh, mask)?;
    let normals = match &mesh.normals {
        Some(n) => n.clone(),
        None => compute_vertex_normals(mesh).normals.expect("normals computed"),
    };
    let mut out = mesh.clone();
    for (v, n) in out.vertices.iter_mut().zip(&normals).zip(mask).filter(|(_, &m)| m).map(|(vn, _)| vn) {
        *v = math::add(*v, math::scale(*n, delta));
    }
    Ok(out)
}

/// Translates masked vertices by `offset`.
pub fn stretch_region(mesh: &Mesh, mask: &[bool], offset: Vec3) -> Result<Mesh> {
    check_mask(mesh, mask)?;
    let mut out = mesh.clone();
    for (v, _) in out.vertices.iter_mut().zip(mask).filter(|(_, &m)| m) {
        *v = math::add(*v, offset);
    }
    Ok(out)
}

/// Keeps the vertices flagged by `keep` and the faces in `faces`, remapped.
fn compact(mesh: &Mesh, keep: &[bool], faces: impl Iterator<Item = [usize; 3]>) -> EditOutput {
    let mut vertex_map = vec![None; mesh.vertex_count()];
    let mut next = 0;
    for (v, &k) in keep.iter().enumerate() {
        if k {
            vertex_map[v] = Some(next);
            next += 1;
        }
    }
    let pick = |attrs: &Vec<Vec3>| -> Vec<Vec3> {
        attrs.iter().zip(keep).filter(|(_, &k)| k).map(|(a, _)| *a).collect()
    };
    let faces = faces
        .map(|f| f.map(|v| vertex_map[v].expect("face vertices are kept")))
        .collect();
    EditOutput {
        mesh: Mesh {
            vertices: pick(&mesh.vertices),
            faces,
            normals: mesh.normals.as_ref().map(pick),
            colors: mesh.colors.as_ref().map(pick),
        },
        vertex_map,
    }
}

/// Removes masked vertices and every face touching one.
pub fn delete_region(mesh: &Mesh, mask: &[bool]) -> Result<EditOutput> {
    check_mask(mesh, mask)?;
    let keep: Vec<bool> = mask.iter().map(|m| !m).collect();
    let faces = mesh.faces.iter().copied().filter(|f| f.iter().all(|&v| keep[v]));
    Ok(compact(mesh, &keep, faces))
}

/// Keeps only faces whose three vertices are masked, and their vertices.
pub fn select_region(mesh: &Mesh, mask: &[bool]) -> Result<EditOutput> {
    check_mask(mesh, mask)?;
    let faces: Vec<[usize; 3]> = mesh
        .faces
        .iter()
        .copied()
        .filter(|f| f.iter().all(|&v| mask[v]))
        .collect();
    let mut keep = vec![false; mesh.vertex_count()];
    for f in &faces {
        for &v in f {
            keep[v] = true;
        }
    }
    Ok(compact(mesh, &keep, faces.into_iter()))
}

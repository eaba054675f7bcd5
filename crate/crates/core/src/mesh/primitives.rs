//! Procedural meshes used as fixtures and synthetic datasets.

use std::f64::consts::PI;

use super::{midpoint_subdivide, Mesh};
use crate::math;

/// Regular tetrahedron inscribed in the unit sphere, outward CCW faces.
pub fn tetrahedron() -> Mesh {
    let s = 1.0 / 3f64.sqrt();
    Mesh::new(
        vec![[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]],
        vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
    )
    .expect("static tetrahedron")
}

/// Axis-aligned cube with corners at `±half_extent`. Every face diagonal
/// joins two of the corners {0, 3, 5, 6}, so the triangulation is symmetric.
pub fn cube(half_extent: f64) -> Mesh {
    let h = half_extent;
    let vertices = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { -h } else { h },
                if i & 2 == 0 { -h } else { h },
                if i & 4 == 0 { -h } else { h },
            ]
        })
        .collect();
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1], // -z
        [4, 5, 6],
        [5, 7, 6], // +z
        [0, 1, 5],
        [0, 5, 4], // -y
        [2, 6, 3],
        [3, 6, 7], // +y
        [0, 4, 6],
        [0, 6, 2], // -x
        [1, 3, 5],
        [3, 7, 5], // +x
    ];
    Mesh::new(vertices, faces).expect("static cube")
}

/// 12-vertex regular icosahedron on the unit sphere.
pub fn icosahedron() -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let vertices = raw
        .iter()
        .map(|&v| math::normalize(v).expect("nonzero"))
        .collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    Mesh::new(vertices, faces).expect("static icosahedron")
}

/// Icosahedron subdivided `level` times with vertices projected back onto
/// the unit sphere. Level 3 has 642 vertices.
pub fn icosphere(level: usize) -> Mesh {
    let mut mesh = icosahedron();
    for _ in 0..level {
        mesh = midpoint_subdivide(&mesh);
        for v in &mut mesh.vertices {
            *v = math::normalize(*v).expect("nonzero");
        }
    }
    mesh
}

/// Latitude/longitude sphere with poles on the z axis. `stacks ≥ 2`,
/// `slices ≥ 3`.
pub fn uv_sphere(stacks: usize, slices: usize) -> Mesh {
    assert!(stacks >= 2 && slices >= 3);
    let mut vertices = vec![[0.0, 0.0, 1.0]];
    for i in 1..stacks {
        let theta = PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let phi = 2.0 * PI * j as f64 / slices as f64;
            vertices.push([theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]);
        }
    }
    vertices.push([0.0, 0.0, -1.0]);
    let south = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + (j % slices);
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let (a, b) = (ring(i, j), ring(i, j + 1));
            let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    for j in 0..slices {
        faces.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    Mesh::new(vertices, faces).expect("generated uv sphere")
}

/// Flat `nx × ny` vertex grid in the z = 0 plane spanning `[-1, 1]²`.
pub fn grid(nx: usize, ny: usize) -> Mesh {
    assert!(nx >= 2 && ny >= 2);
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push([
                -1.0 + 2.0 * i as f64 / (nx - 1) as f64,
                -1.0 + 2.0 * j as f64 / (ny - 1) as f64,
                0.0,
            ]);
        }
    }
    let mut faces = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            faces.push([a, a + 1, a + nx + 1]);
            faces.push([a, a + nx + 1, a + nx]);
        }
    }
    Mesh::new(vertices, faces).expect("generated grid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_level3_has_642_vertices() {
        let m = icosphere(3);
        assert_eq!(m.vertex_count(), 642);
        assert_eq!(m.face_count(), 1280);
    }

    #[test]
    fn uv_sphere_is_closed() {
        let m = uv_sphere(12, 24);
        let edge_faces = m.edge_faces();
        assert!(edge_faces.values().all(|f| f.len() == 2));
        assert_eq!(m.vertex_count(), 2 + 11 * 24);
    }

    #[test]
    fn primitives_face_outward() {
        for m in [tetrahedron(), cube(1.0), icosahedron(), icosphere(1), uv_sphere(6, 8)] {
            for fi in 0..m.face_count() {
                let [a, b, c] = m.faces[fi];
                let centroid = math::scale(
                    math::add(math::add(m.vertices[a], m.vertices[b]), m.vertices[c]),
                    1.0 / 3.0,
                );
                assert!(math::dot(m.face_normal_raw(fi), centroid) > 0.0);
            }
        }
    }
}

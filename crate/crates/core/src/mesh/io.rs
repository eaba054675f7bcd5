//! OBJ reader and PLY reader/writer.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::Mesh;
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Loads an OBJ or PLY file, chosen by extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match ext.as_str() {
        "obj" => load_obj(&String::from_utf8_lossy(&bytes)),
        "ply" => load_ply(&bytes),
        other => Err(Error::UnsupportedFormat(format!(
            "{} (extension {other:?})",
            path.display()
        ))),
    }
}

/// Parses OBJ text. Polygons are fan-triangulated; `v x y z r g b` vertex
/// colors are kept when present on every vertex.
pub fn load_obj(text: &str) -> Result<Mesh> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut colors: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let vals = tokens
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::parse("OBJ", format!("line {}: {e}", lineno + 1)))?;
                if vals.len() < 3 {
                    return Err(Error::parse(
                        "OBJ",
                        format!("line {}: vertex needs 3 coordinates", lineno + 1),
                    ));
                }
                vertices.push([vals[0], vals[1], vals[2]]);
                if vals.len() >= 6 {
                    colors.push([vals[3], vals[4], vals[5]]);
                }
            }
            Some("f") => {
                let idx = tokens
                    .map(|t| resolve_obj_index(t, vertices.len(), lineno))
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(
                        "OBJ",
                        format!("line {}: face needs at least 3 vertices", lineno + 1),
                    ));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let mut mesh = Mesh {
        vertices,
        faces,
        normals: None,
        colors: None,
    };
    if !colors.is_empty() && colors.len() == mesh.vertices.len() {
        mesh.colors = Some(colors);
    }
    mesh.validate()?;
    Ok(mesh)
}

fn resolve_obj_index(token: &str, vertex_count: usize, lineno: usize) -> Result<usize> {
    let head = token.split('/').next().unwrap_or("");
    let raw: i64 = head
        .parse()
        .map_err(|e| Error::parse("OBJ", format!("line {}: bad index {token:?}: {e}", lineno + 1)))?;
    // Negative indices are relative to the vertices read so far.
    let resolved = if raw < 0 { vertex_count as i64 + raw } else { raw - 1 };
    if resolved < 0 {
        return Err(Error::parse(
            "OBJ",
            format!("line {}: index {raw} out of range", lineno + 1),
        ));
    }
    Ok(resolved as usize)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::parse("PLY", format!("unknown scalar type {other}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
    BinaryBe,
}

/// Values of one element record: scalars in property order, lists inline.
enum Value {
    Scalar(f64),
    List(Vec<f64>),
}

struct Reader<'a> {
    format: PlyFormat,
    bytes: &'a [u8],
    pos: usize,
    tokens: std::vec::IntoIter<&'a str>,
}

impl Reader<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        if self.format == PlyFormat::Ascii {
            let tok = self
                .tokens
                .next()
                .ok_or_else(|| Error::parse("PLY", "unexpected end of ascii body"))?;
            return tok
                .parse::<f64>()
                .map_err(|e| Error::parse("PLY", format!("bad number {tok:?}: {e}")));
        }
        let n = ty.size();
        let end = self.pos + n;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::parse("PLY", "unexpected end of binary body"))?;
        self.pos = end;
        let mut buf = [0u8; 8];
        buf[..n].copy_from_slice(chunk);
        if self.format == PlyFormat::BinaryBe {
            buf[..n].reverse();
        }
        Ok(match ty {
            Scalar::I8 => buf[0] as i8 as f64,
            Scalar::U8 => buf[0] as f64,
            Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(buf),
        })
    }
}

/// Parses ASCII or binary PLY with `vertex` (x, y, z, optional
/// red/green/blue) and `face` (vertex_indices or vertex_index list)
/// elements. Other elements and properties are skipped.
pub fn load_ply(bytes: &[u8]) -> Result<Mesh> {
    const END: &[u8] = b"end_header";
    let header_end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::parse("PLY", "missing end_header"))?;
    let mut body_start = header_end + END.len();
    while body_start < bytes.len() && bytes[body_start] != b'\n' {
        body_start += 1;
    }
    body_start += 1;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::parse("PLY", "header is not utf-8"))?;

    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::parse("PLY", "missing magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", f, ..] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLe,
                    "binary_big_endian" => PlyFormat::BinaryBe,
                    other => return Err(Error::parse("PLY", format!("unknown format {other}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::parse("PLY", format!("bad element count {count}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse("PLY", "property before element"))?
                .properties
                .push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse("PLY", "property before element"))?
                .properties
                .push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty)?,
                }),
            _ => {}
        }
    }
    let format = format.ok_or_else(|| Error::parse("PLY", "missing format line"))?;
    let body = bytes.get(body_start..).unwrap_or(&[]);
    let body_text = if format == PlyFormat::Ascii {
        std::str::from_utf8(body).map_err(|_| Error::parse("PLY", "ascii body is not utf-8"))?
    } else {
        ""
    };
    let mut reader = Reader {
        format,
        bytes: body,
        pos: 0,
        tokens: body_text.split_whitespace().collect::<Vec<_>>().into_iter(),
    };

    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for element in &elements {
        for _ in 0..element.count {
            let mut record = Vec::with_capacity(element.properties.len());
            for prop in &element.properties {
                record.push(match prop {
                    Property::Scalar { ty, .. } => Value::Scalar(reader.scalar(*ty)?),
                    Property::List { count, item, .. } => {
                        let n = reader.scalar(*count)? as usize;
                        Value::List((0..n).map(|_| reader.scalar(*item)).collect::<Result<_>>()?)
                    }
                });
            }
            match element.name.as_str() {
                "vertex" => read_vertex(element, &record, &mut vertices, &mut colors)?,
                "face" => read_face(element, &record, &mut faces)?,
                _ => {}
            }
        }
    }
    let mut mesh = Mesh {
        vertices,
        faces,
        normals: None,
        colors: None,
    };
    if !colors.is_empty() && colors.len() == mesh.vertices.len() {
        mesh.colors = Some(colors);
    }
    mesh.validate()?;
    Ok(mesh)
}

fn read_vertex(
    element: &Element,
    record: &[Value],
    vertices: &mut Vec<Vec3>,
    colors: &mut Vec<Vec3>,
) -> Result<()> {
    let mut pos = [None; 3];
    let mut rgb = [None; 3];
    for (prop, value) in element.properties.iter().zip(record) {
        if let (Property::Scalar { name, ty }, Value::Scalar(v)) = (prop, value) {
            let scale = if ty.is_integer() { 1.0 / 255.0 } else { 1.0 };
            match name.as_str() {
                "x" => pos[0] = Some(*v),
                "y" => pos[1] = Some(*v),
                "z" => pos[2] = Some(*v),
                "red" | "r" => rgb[0] = Some(*v * scale),
                "green" | "g" => rgb[1] = Some(*v * scale),
                "blue" | "b" => rgb[2] = Some(*v * scale),
                _ => {}
            }
        }
    }
    match pos {
        [Some(x), Some(y), Some(z)] => vertices.push([x, y, z]),
        _ => return Err(Error::parse("PLY", "vertex element lacks x/y/z")),
    }
    if let [Some(r), Some(g), Some(b)] = rgb {
        colors.push([r, g, b]);
    }
    Ok(())
}

fn read_face(element: &Element, record: &[Value], faces: &mut Vec<[usize; 3]>) -> Result<()> {
    for (prop, value) in element.properties.iter().zip(record) {
        if let (Property::List { name, .. }, Value::List(idx)) = (prop, value) {
            if name != "vertex_indices" && name != "vertex_index" {
                continue;
            }
            if idx.len() < 3 || idx.iter().any(|&i| i < 0.0) {
                return Err(Error::parse("PLY", "invalid face index list"));
            }
            let idx: Vec<usize> = idx.iter().map(|&i| i as usize).collect();
            for k in 1..idx.len() - 1 {
                faces.push([idx[0], idx[k], idx[k + 1]]);
            }
            return Ok(());
        }
    }
    Err(Error::parse("PLY", "face element lacks vertex_indices"))
}

/// Writes binary little-endian PLY: float32 positions, uchar RGB
/// (`round(255·c)`), and a `uchar`-counted `int` index list per face.
pub fn write_ply(path: impl AsRef<Path>, mesh: &Mesh, colors: Option<&[Vec3]>) -> Result<()> {
    let path = path.as_ref();
    mesh.validate()?;
    if let Some(colors) = colors {
        if colors.len() != mesh.vertex_count() {
            return Err(Error::LengthMismatch {
                what: "vertex colors",
                expected: mesh.vertex_count(),
                actual: colors.len(),
            });
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment written by highlighter\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        mesh.vertex_count()
    );
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str(&format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.face_count()
    ));
    out.write_all(header.as_bytes()).map_err(io)?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v {
            out.write_all(&(*c as f32).to_le_bytes()).map_err(io)?;
        }
        if let Some(colors) = colors {
            let q = colors[i].map(quantize_channel);
            out.write_all(&q).map_err(io)?;
        }
    }
    for f in &mesh.faces {
        out.write_all(&[3u8]).map_err(io)?;
        for &i in f {
            out.write_all(&(i as i32).to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)?;
    Ok(())
}

/// `round(255·c)` after clamping to `[0, 1]`.
pub(crate) fn quantize_channel(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `mesh` as a colored PLY. `colors` must have one RGB per vertex.
pub fn export_mesh(mesh: &Mesh, colors: &[Vec3], path: impl AsRef<Path>) -> Result<()> {
    write_ply(path, mesh, Some(colors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    const TETRA_OBJ: &str = "\
# tetrahedron
v 1 1 1
v 1 -1 -1
v -1 1 -1
v -1 -1 1
f 1 2 3
f 1/1 4/4 2/2
f 1//1 3//3 4//4
f -3 -1 -2
";

    #[test]
    fn obj_tetrahedron() {
        let m = load_obj(TETRA_OBJ).unwrap();
        assert_eq!((m.vertex_count(), m.face_count()), (4, 4));
        assert_eq!(m.faces[3], [1, 3, 2]);
    }

    #[test]
    fn obj_open_fan_loads() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv -1 0 0\nv 0 -1 0\nf 1 2 3\nf 1 3 4\nf 1 4 5\n";
        let m = load_obj(text).unwrap();
        assert_eq!(m.face_count(), 3);
        let boundary = m.edge_faces().values().filter(|f| f.len() == 1).count();
        assert!(boundary > 0);
    }

    #[test]
    fn obj_quad_is_fan_triangulated() {
        let m = load_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_out_of_range_index() {
        let err = load_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 9\n").unwrap_err();
        assert!(matches!(err, Error::FaceIndexOutOfRange { index: 8, .. }));
    }

    #[test]
    fn unsupported_extension() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mesh.stl");
        fs::write(&p, b"solid").unwrap();
        assert!(matches!(load_mesh(&p), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(
            load_mesh(dir.path().join("missing.obj")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn ascii_ply() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0 0 0 255\n3 0 1 2\n";
        let m = load_ply(text.as_bytes()).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
        assert_eq!(m.colors.unwrap()[1], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn yellow_export_writes_255_255_0() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.ply");
        let m = primitives::tetrahedron();
        export_mesh(&m, &[[1.0, 1.0, 0.0]; 4], &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let start = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        for i in 0..4 {
            let rec = &bytes[start + i * 15..start + (i + 1) * 15];
            assert_eq!(&rec[12..], &[255, 255, 0]);
        }
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ply");
        let m = primitives::icosphere(1);
        let colors = vec![[0.5, 0.5, 0.5]; m.vertex_count()];
        export_mesh(&m, &colors, &p).unwrap();
        let back = load_mesh(&p).unwrap();
        assert_eq!(back.faces, m.faces);
        for (a, b) in m.vertices.iter().zip(&back.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-6);
                assert_eq!(a[k] as f32, b[k] as f32);
            }
        }
        for c in back.colors.unwrap() {
            assert_eq!(c, [128.0 / 255.0; 3]);
            assert!((c[0] - 0.5).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn ply_rejects_truncated_body() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ply");
        write_ply(&p, &primitives::tetrahedron(), None).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(load_ply(&bytes[..bytes.len() - 5]).is_err());
    }
}

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

pub fn write_mesh(mesh: &TriangleMesh, path: &Path, format: MeshFormat) -> Result<()> {
    let bytes = match format {
        MeshFormat::Obj => write_obj(mesh).into_bytes(),
        MeshFormat::Ply => write_ply(mesh),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Wavefront OBJ text with 1-based face indices. Coordinates are written as
/// the shortest decimal that round-trips the f32 value.
pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 32 + mesh.faces.len() * 24);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x as f32, v.y as f32, v.z as f32);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn read_obj(text: &str) -> Result<TriangleMesh> {
    let bad = |line: usize, what: &str| Error::malformed("obj", format!("line {}: {what}", line + 1));
    let mut mesh = TriangleMesh::default();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(ln, "bad coordinate"))?;
                if c.len() != 3 {
                    return Err(bad(ln, "vertex needs 3 coordinates"));
                }
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| t.split('/').next().unwrap_or("").parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(ln, "bad face index"))?;
                if idx.len() != 3 || idx.iter().any(|&i| i == 0) {
                    return Err(bad(ln, "expected a triangle with 1-based indices"));
                }
                mesh.faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    Ok(mesh)
}

/// Binary little-endian PLY: float xyz vertices, `uchar`/`int` face lists.
pub fn write_ply(mesh: &TriangleMesh) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    );
    let mut out = header.into_bytes();
    for v in &mesh.vertices {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    for f in &mesh.faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

/// Reads the subset of PLY produced by [`write_ply`].
pub fn read_ply(bytes: &[u8]) -> Result<TriangleMesh> {
    const END: &[u8] = b"end_header\n";
    let bad = |what: &str| Error::malformed("ply", what.to_string());
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| bad("missing end_header"))?
        + END.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header not utf-8"))?;
    if !header.contains("format binary_little_endian 1.0") {
        return Err(bad("only binary_little_endian is supported"));
    }
    let count = |elem: &str| -> Result<usize> {
        header
            .lines()
            .find_map(|l| l.strip_prefix(&format!("element {elem} ")))
            .ok_or_else(|| bad("missing element count"))?
            .trim()
            .parse()
            .map_err(|_| bad("bad element count"))
    };
    let (nv, nf) = (count("vertex")?, count("face")?);
    let mut body = &bytes[end..];
    let mut take = |n: usize| -> Result<&[u8]> {
        if body.len() < n {
            return Err(bad("truncated body"));
        }
        let (a, b) = body.split_at(n);
        body = b;
        Ok(a)
    };
    let mut mesh = TriangleMesh::default();
    for _ in 0..nv {
        let b = take(12)?;
        let f = |o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap()) as f64;
        mesh.vertices.push(Vec3::new(f(0), f(4), f(8)));
    }
    for _ in 0..nf {
        if take(1)?[0] != 3 {
            return Err(bad("non-triangle face"));
        }
        let b = take(12)?;
        let i = |o: usize| i32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let idx = [i(0), i(4), i(8)];
        if idx.iter().any(|&k| k < 0 || k as usize >= nv) {
            return Err(bad("face index out of range"));
        }
        mesh.faces.push(idx.map(|k| k as u32));
    }
    if !body.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(-1.0, 0.5, 1e-3), Vec3::new(0.3333333, 0.0, -0.7)],
            faces: vec![[0, 1, 2]],
        }
    }

    fn as_f32(m: &TriangleMesh) -> Vec<[f32; 3]> {
        m.vertices.iter().map(|v| [v.x as f32, v.y as f32, v.z as f32]).collect()
    }

    #[test]
    fn obj_line_counts_and_round_trip() {
        let m = tri();
        let text = write_obj(&m);
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 1);
        assert!(text.contains("f 1 2 3"));
        let back = read_obj(&text).unwrap();
        assert_eq!(as_f32(&back), as_f32(&m));
        assert_eq!(back.faces, m.faces);
        assert_eq!(write_obj(&m), text);
    }

    #[test]
    fn ply_round_trip() {
        let m = tri();
        let bytes = write_ply(&m);
        let back = read_ply(&bytes).unwrap();
        assert_eq!(as_f32(&back), as_f32(&m));
        assert_eq!(back.faces, m.faces);
    }

    #[test]
    fn empty_mesh_files_are_valid() {
        let m = TriangleMesh::default();
        assert_eq!(read_obj(&write_obj(&m)).unwrap(), m);
        assert_eq!(read_ply(&write_ply(&m)).unwrap(), m);
    }
}

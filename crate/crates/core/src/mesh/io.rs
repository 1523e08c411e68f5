use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{MeshError, Point3, Result, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default();
        ext.parse()
    }
}

impl FromStr for MeshFormat {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            other => Err(MeshError::UnsupportedFormat(other.to_string())),
        }
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriMesh> {
    let text = fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        MeshFormat::Obj => parse_obj(&text, path),
        MeshFormat::Ply => parse_ply(&text, path),
    }
}

pub fn save_mesh(mesh: &TriMesh, path: &Path, format: MeshFormat) -> Result<()> {
    let text = match format {
        MeshFormat::Obj => write_obj(mesh),
        MeshFormat::Ply => write_ply(mesh),
    };
    fs::write(path, text).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: Option<&str>, path: &Path, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| parse_err(path, line, "missing coordinate"))?;
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("invalid number '{tok}'")))
}

/// Validates faces with their source line so errors point into the file.
fn check_faces(
    faces: &[[usize; 3]],
    face_lines: &[usize],
    num_vertices: usize,
    path: &Path,
) -> Result<()> {
    for (f, &line) in faces.iter().zip(face_lines) {
        if f.iter().any(|&i| i >= num_vertices) {
            return Err(parse_err(path, line, "index out of range"));
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(parse_err(path, line, "degenerate face"));
        }
    }
    Ok(())
}

fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let mut vertices: Vec<Point3> = Vec::new();
    let mut faces = Vec::new();
    let mut face_lines = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), path, line)?;
                let y = parse_f64(toks.next(), path, line)?;
                let z = parse_f64(toks.next(), path, line)?;
                vertices.push([x, y, z]);
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in toks {
                    let head = tok.split('/').next().unwrap_or("");
                    let idx: i64 = head
                        .parse()
                        .map_err(|_| parse_err(path, line, format!("invalid index '{tok}'")))?;
                    // 1-based; negative values count back from the latest vertex
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        return Err(parse_err(path, line, "index out of range"));
                    };
                    if resolved < 0 {
                        return Err(parse_err(path, line, "index out of range"));
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(parse_err(path, line, "face with fewer than 3 vertices"));
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                    face_lines.push(line);
                }
            }
            _ => {}
        }
    }
    check_faces(&faces, &face_lines, vertices.len(), path)?;
    TriMesh::new(vertices, faces)
}

fn parse_ply(text: &str, path: &Path) -> Result<TriMesh> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }
    let mut num_vertices = None;
    let mut num_faces = None;
    let mut vertex_props = 0usize;
    let mut current = "";
    let mut header_end = 0;
    for (line, l) in lines.by_ref() {
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(parse_err(path, line, format!("unsupported ply format '{fmt}'")));
                }
            }
            ["element", "vertex", n] => {
                num_vertices = Some(
                    n.parse::<usize>()
                        .map_err(|_| parse_err(path, line, "invalid vertex count"))?,
                );
                current = "vertex";
            }
            ["element", "face", n] => {
                num_faces = Some(
                    n.parse::<usize>()
                        .map_err(|_| parse_err(path, line, "invalid face count"))?,
                );
                current = "face";
            }
            ["element", ..] => current = "other",
            ["property", ..] if current == "vertex" => vertex_props += 1,
            ["end_header"] => {
                header_end = line;
                break;
            }
            _ => {}
        }
    }
    if header_end == 0 {
        return Err(parse_err(path, 1, "missing end_header"));
    }
    let nv = num_vertices.ok_or_else(|| parse_err(path, header_end, "no vertex element"))?;
    let nf = num_faces.unwrap_or(0);
    if vertex_props < 3 {
        return Err(parse_err(path, header_end, "vertex element needs x, y, z"));
    }
    let mut vertices = Vec::with_capacity(nv);
    let mut faces = Vec::with_capacity(nf);
    let mut face_lines = Vec::with_capacity(nf);
    for _ in 0..nv {
        let (line, l) = lines
            .next()
            .ok_or_else(|| parse_err(path, header_end, "truncated vertex list"))?;
        let mut toks = l.split_whitespace();
        let x = parse_f64(toks.next(), path, line)?;
        let y = parse_f64(toks.next(), path, line)?;
        let z = parse_f64(toks.next(), path, line)?;
        vertices.push([x, y, z]);
    }
    for _ in 0..nf {
        let (line, l) = lines
            .next()
            .ok_or_else(|| parse_err(path, header_end, "truncated face list"))?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| parse_err(path, line, format!("invalid index '{t}'")))
            })
            .collect::<Result<_>>()?;
        let count = *idx
            .first()
            .ok_or_else(|| parse_err(path, line, "empty face"))?;
        if count < 3 || idx.len() != count + 1 {
            return Err(parse_err(path, line, "malformed face"));
        }
        for k in 2..count {
            faces.push([idx[1], idx[k], idx[k + 1]]);
            face_lines.push(line);
        }
    }
    check_faces(&faces, &face_lines, vertices.len(), path)?;
    TriMesh::new(vertices, faces)
}

// `{}` on f64 prints the shortest string that parses back to the same value.
fn write_obj(mesh: &TriMesh) -> String {
    let mut out = String::with_capacity(mesh.num_vertices() * 48 + mesh.num_faces() * 24);
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

fn write_ply(mesh: &TriMesh) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.num_vertices(),
        mesh.num_faces()
    );
    for v in mesh.vertices() {
        let _ = writeln!(out, "{} {} {}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

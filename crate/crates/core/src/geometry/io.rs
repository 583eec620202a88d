//! ASCII OBJ and PLY reading and writing.
//!
//! Coordinates are written with Rust's shortest round-trip float formatting,
//! so a save/load cycle reproduces vertices bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use super::{Mesh, Point3};
use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    PlyAscii,
}

impl MeshFormat {
    /// Guesses from the file extension (`.obj` or `.ply`).
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::PlyAscii),
            _ => Err(Error::Precondition(format!(
                "cannot infer mesh format of {}",
                path.display()
            ))),
        }
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        MeshFormat::Obj => parse_obj(&text),
        MeshFormat::PlyAscii => parse_ply(&text),
    }
}

pub fn save_mesh(mesh: &Mesh, path: &Path, format: MeshFormat, colors: Option<&[Rgb]>) -> Result<()> {
    if let Some(c) = colors {
        if c.len() != mesh.vertex_count() {
            return Err(Error::Precondition(format!(
                "{} colors for {} vertices",
                c.len(),
                mesh.vertex_count()
            )));
        }
    }
    let text = match format {
        MeshFormat::Obj => write_obj(mesh, colors),
        MeshFormat::PlyAscii => write_ply(mesh, colors),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::parse(line, "missing coordinate"))?;
    tok.parse()
        .map_err(|_| Error::parse(line, format!("bad number {tok:?}")))
}

pub(crate) fn parse_obj(text: &str) -> Result<Mesh> {
    let mut vertices: Vec<Point3> = Vec::new();
    let mut faces = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), line)?;
                let y = parse_f64(toks.next(), line)?;
                let z = parse_f64(toks.next(), line)?;
                vertices.push([x, y, z]);
            }
            Some("f") => {
                let idx: Vec<&str> = toks.collect();
                if idx.len() != 3 {
                    return Err(Error::parse(
                        line,
                        format!("only triangles are supported, got {} corners", idx.len()),
                    ));
                }
                let mut face = [0usize; 3];
                for (k, tok) in idx.iter().enumerate() {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| Error::parse(line, format!("bad index {tok:?}")))?;
                    face[k] = match i {
                        0 => return Err(Error::parse(line, "OBJ indices are 1-based; got 0")),
                        i if i > 0 => (i - 1) as usize,
                        i => {
                            let back = (-i) as usize;
                            if back > vertices.len() {
                                return Err(Error::parse(line, format!("relative index {i} out of range")));
                            }
                            vertices.len() - back
                        }
                    };
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

fn write_obj(mesh: &Mesh, colors: Option<&[Rgb]>) -> String {
    let mut s = String::new();
    for (i, v) in mesh.vertices().iter().enumerate() {
        let _ = write!(s, "v {} {} {}", v[0], v[1], v[2]);
        if let Some(c) = colors {
            let c = c[i];
            let _ = write!(
                s,
                " {} {} {}",
                c[0] as f64 / 255.0,
                c[1] as f64 / 255.0,
                c[2] as f64 / 255.0
            );
        }
        s.push('\n');
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

pub(crate) fn parse_ply(text: &str) -> Result<Mesh> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::parse(1, "missing 'ply' magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut ascii = false;
    loop {
        let (line, raw) = lines
            .next()
            .ok_or_else(|| Error::parse(0, "unterminated PLY header"))?;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => ascii = true,
            ["format", other, ..] => {
                return Err(Error::parse(line, format!("unsupported PLY format {other:?}")))
            }
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::parse(line, "bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", .., name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse(line, "property before element"))?
                .properties
                .push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    if !ascii {
        return Err(Error::parse(0, "missing 'format ascii 1.0'"));
    }
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let (line, raw) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("truncated {} element", el.name)))?;
            let toks: Vec<&str> = raw.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => {
                    let mut p = [0.0; 3];
                    for (k, axis) in ["x", "y", "z"].iter().enumerate() {
                        let col = el
                            .properties
                            .iter()
                            .position(|n| n == axis)
                            .ok_or_else(|| Error::parse(line, format!("vertex has no {axis}")))?;
                        p[k] = parse_f64(toks.get(col).copied(), line)?;
                    }
                    vertices.push(p);
                }
                "face" => {
                    let n: usize = toks
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::parse(line, "bad face"))?;
                    if n != 3 || toks.len() < 4 {
                        return Err(Error::parse(line, format!("only triangles are supported, got {n}")));
                    }
                    let mut f = [0usize; 3];
                    for k in 0..3 {
                        f[k] = toks[k + 1]
                            .parse()
                            .map_err(|_| Error::parse(line, "bad face index"))?;
                    }
                    faces.push(f);
                }
                _ => {}
            }
        }
    }
    Mesh::new(vertices, faces)
}

fn write_ply(mesh: &Mesh, colors: Option<&[Rgb]>) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertex_count());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if colors.is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    let _ = writeln!(s, "element face {}", mesh.face_count());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, v) in mesh.vertices().iter().enumerate() {
        let _ = write!(s, "{} {} {}", v[0], v[1], v[2]);
        if let Some(c) = colors {
            let _ = write!(s, " {} {} {}", c[i][0], c[i][1], c[i][2]);
        }
        s.push('\n');
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene_io::Vec3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|i| *i >= n)) {
            return Err(Error::Validation(format!("triangle {t:?} indexes past {n} vertices")));
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Validation("mesh has non-finite vertices".into()));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.vertices.len() {
                return Err(Error::Validation("normal count differs from vertex count".into()));
            }
        }
        Ok(())
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Applies `f` to every vertex. Normals are kept as they are, which is
    /// right for translations and positive uniform scales.
    pub fn map_vertices(&self, f: impl FnMut(&Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
            normals: self.normals.clone(),
        }
    }

    /// Area-weighted vertex normals from the triangle winding.
    pub fn compute_vertex_normals(&mut self) {
        let mut normals = vec![Vec3::zeros(); self.vertices.len()];
        for i in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(i);
            let n = (b - a).cross(&(c - a));
            for v in self.triangles[i] {
                normals[v as usize] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        self.normals = Some(normals);
    }

    /// Counts of directed edges that have no opposite partner and of edges
    /// used more than once in the same direction. Both are zero for a
    /// closed, consistently oriented mesh.
    pub fn orientation_defects(&self) -> (usize, usize) {
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        let unmatched = directed.keys().filter(|(a, b)| !directed.contains_key(&(*b, *a))).count();
        let repeated = directed.values().filter(|c| **c > 1).count();
        (unmatched, repeated)
    }
}

/// Writes positions, normals (if any) and faces.
pub fn write_ply(mesh: &TriangleMesh, path: &Path, binary: bool) -> Result<()> {
    let mut out = Vec::new();
    let format = if binary { "binary_little_endian" } else { "ascii" };
    let mut header = format!("ply\nformat {format} 1.0\nelement vertex {}\n", mesh.vertices.len());
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if mesh.normals.is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    header.push_str(&format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.triangles.len()
    ));
    out.extend_from_slice(header.as_bytes());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let mut vals = vec![v.x as f32, v.y as f32, v.z as f32];
        if let Some(n) = &mesh.normals {
            vals.extend([n[i].x as f32, n[i].y as f32, n[i].z as f32]);
        }
        if binary {
            for x in vals {
                out.extend_from_slice(&x.to_le_bytes());
            }
        } else {
            let line: Vec<String> = vals.iter().map(|x| x.to_string()).collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    }
    for t in &mesh.triangles {
        if binary {
            out.push(3);
            for i in t {
                out.extend_from_slice(&(*i as i32).to_le_bytes());
            }
        } else {
            out.extend_from_slice(format!("3 {} {} {}\n", t[0], t[1], t[2]).as_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy)]
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
            other => return Err(Error::Format(format!("unsupported PLY scalar type {other}"))),
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Reads ASCII or binary little-endian PLY meshes with triangle (or
/// polygon, fan-triangulated) faces.
pub fn read_ply(path: &Path) -> Result<TriangleMesh> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let bad = |m: String| Error::Format(format!("{}: {m}", path.display()));
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if line.trim() != "ply" {
        return Err(bad("missing ply magic".into()));
    }
    let mut binary = false;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(bad("header is not terminated".into()));
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => binary = false,
            ["format", "binary_little_endian", _] => binary = true,
            ["format", other, _] => return Err(bad(format!("unsupported format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => elements
                .last_mut()
                .ok_or_else(|| bad("property before element".into()))?
                .props
                .push(Property::List(name.to_string(), Scalar::parse(count)?, Scalar::parse(item)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| bad("property before element".into()))?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            _ => {}
        }
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    let text;
    let mut tokens = if binary {
        None
    } else {
        text = String::from_utf8(rest.clone()).map_err(|_| bad("ASCII body is not UTF-8".into()))?;
        Some(text.split_whitespace())
    };
    let mut at = 0usize;
    let mut next = |ty: Scalar| -> Result<f64> {
        match tokens.as_mut() {
            Some(t) => t
                .next()
                .ok_or_else(|| bad("unexpected end of data".into()))?
                .parse::<f64>()
                .map_err(|_| bad("bad number".into())),
            None => {
                let b = rest.get(at..at + ty.size()).ok_or_else(|| bad("unexpected end of data".into()))?;
                at += ty.size();
                Ok(ty.read_le(b))
            }
        }
    };
    let mut mesh = TriangleMesh::default();
    let mut normals = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut pos = [0.0; 3];
            let mut nrm = [0.0; 3];
            let mut has_normal = false;
            for prop in &el.props {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = next(*ty)?;
                        match name.as_str() {
                            "x" => pos[0] = v,
                            "y" => pos[1] = v,
                            "z" => pos[2] = v,
                            "nx" => (nrm[0], has_normal) = (v, true),
                            "ny" => nrm[1] = v,
                            "nz" => nrm[2] = v,
                            _ => {}
                        }
                    }
                    Property::List(name, count_ty, item_ty) => {
                        let count = next(*count_ty)? as usize;
                        let mut idx = Vec::with_capacity(count);
                        for _ in 0..count {
                            idx.push(next(*item_ty)? as u32);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            for k in 1..count.saturating_sub(1) {
                                mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                mesh.vertices.push(Vec3::from(pos));
                if has_normal {
                    normals.push(Vec3::from(nrm));
                }
            }
        }
    }
    if !normals.is_empty() {
        mesh.normals = Some(normals);
    }
    mesh.validate()?;
    Ok(mesh)
}

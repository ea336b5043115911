//! Mesh export/import: OFF, OBJ, legacy ASCII VTK PolyData and JSON.
//!
//! Coordinates are written with Rust's shortest round-trip float formatting,
//! so an export/import cycle reproduces every coordinate bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{MeshError, TriangleMesh, VertexScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Off,
    Obj,
    Vtk,
    Json,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self, MeshError> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        ext.parse()
    }

    pub fn carries_fields(self) -> bool {
        matches!(self, MeshFormat::Vtk | MeshFormat::Json)
    }

    pub fn extension(self) -> &'static str {
        match self {
            MeshFormat::Off => "off",
            MeshFormat::Obj => "obj",
            MeshFormat::Vtk => "vtk",
            MeshFormat::Json => "json",
        }
    }
}

impl std::fmt::Display for MeshFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for MeshFormat {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(MeshFormat::Off),
            "obj" => Ok(MeshFormat::Obj),
            "vtk" => Ok(MeshFormat::Vtk),
            "json" => Ok(MeshFormat::Json),
            other => Err(MeshError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonMesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    #[serde(default)]
    fields: BTreeMap<String, Vec<f64>>,
}

/// Mesh plus any named vertex fields found in the file.
#[derive(Debug, Clone)]
pub struct ImportedMesh {
    pub mesh: TriangleMesh,
    pub fields: BTreeMap<String, VertexScalarField>,
}

/// Writes `mesh` to `path`. Fields are dropped for OFF and OBJ.
pub fn export(
    mesh: &TriangleMesh,
    fields: &[(&str, &VertexScalarField)],
    path: &Path,
    format: MeshFormat,
) -> Result<(), MeshError> {
    for (_, f) in fields {
        f.check_len(mesh)?;
    }
    let text = match format {
        MeshFormat::Off => to_off(mesh),
        MeshFormat::Obj => to_obj(mesh),
        MeshFormat::Vtk => to_vtk(mesh, fields),
        MeshFormat::Json => {
            let json = JsonMesh {
                vertices: mesh.vertices().iter().map(|p| [p.x, p.y, p.z]).collect(),
                faces: mesh.faces().to_vec(),
                fields: fields.iter().map(|(n, f)| (n.to_string(), f.values().to_vec())).collect(),
            };
            serde_json::to_string(&json).map_err(|e| MeshError::Parse(e.to_string()))?
        }
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn import(path: &Path, format: MeshFormat) -> Result<ImportedMesh, MeshError> {
    let text = fs::read_to_string(path)?;
    match format {
        MeshFormat::Off => from_off(&text),
        MeshFormat::Obj => from_obj(&text),
        MeshFormat::Vtk => from_vtk(&text),
        MeshFormat::Json => {
            let json: JsonMesh = serde_json::from_str(&text).map_err(|e| MeshError::Parse(e.to_string()))?;
            let vertices = json.vertices.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
            let mesh = TriangleMesh::new(vertices, json.faces)?;
            let fields = json
                .fields
                .into_iter()
                .map(|(name, values)| {
                    let f = VertexScalarField::new(values);
                    f.check_len(&mesh).map(|_| (name, f))
                })
                .collect::<Result<_, _>>()?;
            Ok(ImportedMesh { mesh, fields })
        }
    }
}

fn to_off(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    writeln!(s, "OFF").unwrap();
    writeln!(s, "{} {} {}", mesh.num_vertices(), mesh.num_faces(), mesh.num_edges()).unwrap();
    for p in mesh.vertices() {
        writeln!(s, "{:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
    }
    for f in mesh.faces() {
        writeln!(s, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    s
}

fn to_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for p in mesh.vertices() {
        writeln!(s, "v {:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
    }
    for f in mesh.faces() {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    s
}

fn to_vtk(mesh: &TriangleMesh, fields: &[(&str, &VertexScalarField)]) -> String {
    let mut s = String::new();
    writeln!(s, "# vtk DataFile Version 3.0").unwrap();
    writeln!(s, "shrinker-spectra mesh").unwrap();
    writeln!(s, "ASCII").unwrap();
    writeln!(s, "DATASET POLYDATA").unwrap();
    writeln!(s, "POINTS {} double", mesh.num_vertices()).unwrap();
    for p in mesh.vertices() {
        writeln!(s, "{:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
    }
    writeln!(s, "POLYGONS {} {}", mesh.num_faces(), 4 * mesh.num_faces()).unwrap();
    for f in mesh.faces() {
        writeln!(s, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    if !fields.is_empty() {
        writeln!(s, "POINT_DATA {}", mesh.num_vertices()).unwrap();
        for (name, field) in fields {
            // VTK names may not contain whitespace
            let name: String = name.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect();
            writeln!(s, "SCALARS {name} double 1").unwrap();
            writeln!(s, "LOOKUP_TABLE default").unwrap();
            for v in field.values() {
                writeln!(s, "{v:?}").unwrap();
            }
        }
    }
    s
}

fn parse<T: FromStr>(tok: Option<&str>, what: &str) -> Result<T, MeshError> {
    tok.ok_or_else(|| MeshError::Parse(format!("missing {what}")))?
        .parse()
        .map_err(|_| MeshError::Parse(format!("invalid {what}")))
}

/// Tokens of the file with `#` comments stripped.
fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace)
}

fn from_off(text: &str) -> Result<ImportedMesh, MeshError> {
    let mut toks = tokens(text);
    if toks.next() != Some("OFF") {
        return Err(MeshError::Parse("missing OFF header".into()));
    }
    let nv: usize = parse(toks.next(), "vertex count")?;
    let nf: usize = parse(toks.next(), "face count")?;
    let _ne: usize = parse(toks.next(), "edge count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        vertices.push(Vector3::new(
            parse(toks.next(), "coordinate")?,
            parse(toks.next(), "coordinate")?,
            parse(toks.next(), "coordinate")?,
        ));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let arity: usize = parse(toks.next(), "face arity")?;
        if arity != 3 {
            return Err(MeshError::Parse(format!("only triangles supported, got {arity}-gon")));
        }
        faces.push([parse(toks.next(), "index")?, parse(toks.next(), "index")?, parse(toks.next(), "index")?]);
    }
    Ok(ImportedMesh { mesh: TriangleMesh::new(vertices, faces)?, fields: BTreeMap::new() })
}

fn from_obj(text: &str) -> Result<ImportedMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for line in text.lines() {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => vertices.push(Vector3::new(
                parse(toks.next(), "coordinate")?,
                parse(toks.next(), "coordinate")?,
                parse(toks.next(), "coordinate")?,
            )),
            Some("f") => {
                let mut idx = [0usize; 3];
                for slot in &mut idx {
                    // accept v, v/vt and v/vt/vn
                    let tok = toks.next().map(|t| t.split('/').next().unwrap_or(""));
                    let one_based: usize = parse(tok, "face index")?;
                    *slot =
                        one_based.checked_sub(1).ok_or_else(|| MeshError::Parse("OBJ indices are 1-based".into()))?;
                }
                if toks.next().is_some() {
                    return Err(MeshError::Parse("only triangles supported".into()));
                }
                faces.push(idx);
            }
            _ => {}
        }
    }
    Ok(ImportedMesh { mesh: TriangleMesh::new(vertices, faces)?, fields: BTreeMap::new() })
}

fn from_vtk(text: &str) -> Result<ImportedMesh, MeshError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("# vtk DataFile") {
        return Err(MeshError::Parse("missing VTK header".into()));
    }
    lines.next(); // title
    if lines.next().map(str::trim) != Some("ASCII") {
        return Err(MeshError::Parse("only ASCII VTK files are supported".into()));
    }
    let body = lines.collect::<Vec<_>>().join("\n");
    let mut toks = body.split_whitespace();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut fields = BTreeMap::new();
    let mut point_count = 0usize;
    while let Some(tok) = toks.next() {
        match tok {
            "DATASET" => {
                let kind = toks.next().unwrap_or_default();
                if kind != "POLYDATA" {
                    return Err(MeshError::Parse(format!("unsupported dataset {kind}")));
                }
            }
            "POINTS" => {
                point_count = parse(toks.next(), "point count")?;
                toks.next(); // scalar type
                for _ in 0..point_count {
                    vertices.push(Vector3::new(
                        parse(toks.next(), "coordinate")?,
                        parse(toks.next(), "coordinate")?,
                        parse(toks.next(), "coordinate")?,
                    ));
                }
            }
            "POLYGONS" => {
                let n: usize = parse(toks.next(), "polygon count")?;
                toks.next(); // total size
                for _ in 0..n {
                    let arity: usize = parse(toks.next(), "polygon arity")?;
                    if arity != 3 {
                        return Err(MeshError::Parse("only triangles supported".into()));
                    }
                    faces.push([
                        parse(toks.next(), "index")?,
                        parse(toks.next(), "index")?,
                        parse(toks.next(), "index")?,
                    ]);
                }
            }
            "POINT_DATA" => {
                let n: usize = parse(toks.next(), "point data count")?;
                if n != point_count {
                    return Err(MeshError::Parse("POINT_DATA count differs from POINTS".into()));
                }
            }
            "SCALARS" => {
                let name = toks.next().ok_or_else(|| MeshError::Parse("missing scalar name".into()))?;
                toks.next(); // type
                let mut next = toks.next();
                // optional component count, then LOOKUP_TABLE
                if next.is_some_and(|t| t != "LOOKUP_TABLE") {
                    next = toks.next();
                }
                if next != Some("LOOKUP_TABLE") {
                    return Err(MeshError::Parse("expected LOOKUP_TABLE".into()));
                }
                toks.next();
                let values = (0..point_count).map(|_| parse(toks.next(), "scalar")).collect::<Result<Vec<f64>, _>>()?;
                fields.insert(name.to_string(), VertexScalarField::new(values));
            }
            other => return Err(MeshError::Parse(format!("unexpected VTK token {other}"))),
        }
    }
    Ok(ImportedMesh { mesh: TriangleMesh::new(vertices, faces)?, fields })
}

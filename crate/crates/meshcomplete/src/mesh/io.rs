//! OBJ and PLY mesh readers and writers.
//!
//! OBJ: `v`/`f` records with 1-based indices; polygon faces are
//! fan-triangulated; other records are ignored. PLY: ascii and
//! binary-little-endian with float32 positions, an optional `int label`
//! vertex property, and a standard face index list. Degenerate faces are
//! dropped (and counted) at load; vertex order is preserved exactly, so
//! loading is deterministic given the file.

use super::{MeshError, TriMesh};
use nalgebra::Point3;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// A cleaned mesh plus the number of degenerate faces removed at load.
#[derive(Debug)]
pub struct LoadReport {
    pub mesh: TriMesh,
    pub dropped_degenerate: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    #[default]
    BinaryLittleEndian,
    Ascii,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SaveOptions {
    pub ply_encoding: PlyEncoding,
}

pub fn load_mesh<P: AsRef<Path>>(path: P) -> Result<LoadReport, MeshError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let mut mesh = match ext.as_str() {
        "obj" => load_obj(path)?,
        "ply" => load_ply(path)?,
        other => return Err(MeshError::UnsupportedFormat(other.to_string())),
    };
    if mesh.vertices.is_empty() {
        return Err(MeshError::Empty(path.display().to_string()));
    }
    mesh.check_indices()?;
    let dropped_degenerate = mesh.drop_degenerate_faces();
    Ok(LoadReport {
        mesh,
        dropped_degenerate,
    })
}

pub fn save_mesh<P: AsRef<Path>>(mesh: &TriMesh, path: P) -> Result<(), MeshError> {
    save_mesh_with(mesh, path, SaveOptions::default())
}

pub fn save_mesh_with<P: AsRef<Path>>(
    mesh: &TriMesh,
    path: P,
    options: SaveOptions,
) -> Result<(), MeshError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "obj" => save_obj(mesh, path),
        "ply" => save_ply(mesh, path, options.ply_encoding),
        other => Err(MeshError::UnsupportedFormat(other.to_string())),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, MeshError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| MeshError::Read {
            path: path.display().to_string(),
            source,
        })
}

fn create(path: &Path) -> Result<BufWriter<File>, MeshError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| MeshError::Write {
            path: path.display().to_string(),
            source,
        })
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> MeshError + '_ {
    move |source| MeshError::Write {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn load_obj(path: &Path) -> Result<TriMesh, MeshError> {
    let reader = open(path)?;
    let mut vertices = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| MeshError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let lineno = lineno + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| parse_err(path, lineno, "vertex needs 3 coordinates"))?;
                    *c = tok
                        .parse()
                        .map_err(|_| parse_err(path, lineno, format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in tokens {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| parse_err(path, lineno, format!("bad face index {tok:?}")))?;
                    if i < 1 {
                        return Err(parse_err(
                            path,
                            lineno,
                            format!("face index {i} not positive 1-based"),
                        ));
                    }
                    idx.push((i - 1) as u32);
                }
                if idx.len() < 3 {
                    return Err(parse_err(path, lineno, "face needs at least 3 indices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(TriMesh {
        vertices,
        faces,
        labels: None,
    })
}

fn save_obj(mesh: &TriMesh, path: &Path) -> Result<(), MeshError> {
    let mut out = create(path)?;
    let err = write_err(path);
    for v in &mesh.vertices {
        // Default float formatting is shortest-round-trip, so save/load is
        // exact for OBJ.
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).map_err(&err)?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).map_err(&err)?;
    }
    out.flush().map_err(&err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Option<PlyType> {
        Some(match s {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read_f64(self, bytes: &[u8]) -> f64 {
        match self {
            PlyType::I8 => bytes[0] as i8 as f64,
            PlyType::U8 => bytes[0] as f64,
            PlyType::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            PlyType::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            PlyType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct PlyProperty {
    name: String,
    ty: PlyType,
    list: Option<PlyType>, // count type when this is a list property
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

fn load_ply(path: &Path) -> Result<TriMesh, MeshError> {
    let mut reader = open(path)?;
    let mut line = String::new();
    let mut lineno = 0usize;
    let read_line = |reader: &mut BufReader<File>, line: &mut String| -> Result<(), MeshError> {
        line.clear();
        reader
            .read_line(line)
            .map_err(|source| MeshError::Read {
                path: path.display().to_string(),
                source,
            })
            .and_then(|n| {
                if n == 0 {
                    Err(parse_err(path, 0, "unexpected end of header"))
                } else {
                    Ok(())
                }
            })
    };

    read_line(&mut reader, &mut line)?;
    lineno += 1;
    if line.trim() != "ply" {
        return Err(parse_err(path, lineno, "missing ply magic"));
    }

    let mut ascii = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        read_line(&mut reader, &mut line)?;
        lineno += 1;
        let trimmed = line.trim();
        let mut tok = trimmed.split_whitespace();
        match tok.next() {
            Some("format") => match tok.next() {
                Some("ascii") => ascii = Some(true),
                Some("binary_little_endian") => ascii = Some(false),
                other => {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("unsupported ply format {other:?}"),
                    ))
                }
            },
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| parse_err(path, lineno, "element needs a name"))?
                    .to_string();
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(path, lineno, "element needs a count"))?;
                elements.push(PlyElement {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, lineno, "property before any element"))?;
                let first = tok
                    .next()
                    .ok_or_else(|| parse_err(path, lineno, "property needs a type"))?;
                if first == "list" {
                    let count_ty = tok
                        .next()
                        .and_then(PlyType::parse)
                        .ok_or_else(|| parse_err(path, lineno, "bad list count type"))?;
                    let item_ty = tok
                        .next()
                        .and_then(PlyType::parse)
                        .ok_or_else(|| parse_err(path, lineno, "bad list item type"))?;
                    let name = tok
                        .next()
                        .ok_or_else(|| parse_err(path, lineno, "list property needs a name"))?;
                    element.properties.push(PlyProperty {
                        name: name.to_string(),
                        ty: item_ty,
                        list: Some(count_ty),
                    });
                } else {
                    let ty = PlyType::parse(first)
                        .ok_or_else(|| parse_err(path, lineno, format!("bad type {first:?}")))?;
                    let name = tok
                        .next()
                        .ok_or_else(|| parse_err(path, lineno, "property needs a name"))?;
                    element.properties.push(PlyProperty {
                        name: name.to_string(),
                        ty,
                        list: None,
                    });
                }
            }
            Some("end_header") => break,
            other => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("unexpected header line {other:?}"),
                ))
            }
        }
    }
    let ascii = ascii.ok_or_else(|| parse_err(path, lineno, "header missing format line"))?;

    let mut vertices = Vec::new();
    let mut labels: Option<Vec<i32>> = None;
    let mut faces = Vec::new();

    for element in &elements {
        match element.name.as_str() {
            "vertex" => {
                let find = |name: &str| element.properties.iter().position(|p| p.name == name);
                let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
                    (Some(a), Some(b), Some(c)) => (a, b, c),
                    _ => return Err(parse_err(path, lineno, "vertex element missing x/y/z")),
                };
                let ilabel = find("label");
                if ilabel.is_some() {
                    labels = Some(Vec::with_capacity(element.count));
                }
                if element.properties.iter().any(|p| p.list.is_some()) {
                    return Err(parse_err(path, lineno, "list property on vertex element"));
                }
                for _ in 0..element.count {
                    let values = if ascii {
                        read_line(&mut reader, &mut line)?;
                        lineno += 1;
                        let row: Vec<f64> = line
                            .split_whitespace()
                            .map(|t| t.parse::<f64>())
                            .collect::<Result<_, _>>()
                            .map_err(|_| parse_err(path, lineno, "bad vertex row"))?;
                        if row.len() < element.properties.len() {
                            return Err(parse_err(path, lineno, "short vertex row"));
                        }
                        row
                    } else {
                        let mut row = Vec::with_capacity(element.properties.len());
                        for p in &element.properties {
                            let mut buf = [0u8; 8];
                            reader
                                .read_exact(&mut buf[..p.ty.size()])
                                .map_err(|source| MeshError::Read {
                                    path: path.display().to_string(),
                                    source,
                                })?;
                            row.push(p.ty.read_f64(&buf));
                        }
                        row
                    };
                    vertices.push(Point3::new(values[ix], values[iy], values[iz]));
                    if let (Some(il), Some(ls)) = (ilabel, labels.as_mut()) {
                        ls.push(values[il] as i32);
                    }
                }
            }
            "face" => {
                let list = element
                    .properties
                    .iter()
                    .position(|p| {
                        p.list.is_some()
                            && (p.name == "vertex_indices" || p.name == "vertex_index")
                    })
                    .ok_or_else(|| parse_err(path, lineno, "face element missing index list"))?;
                if element.properties.len() != 1 || list != 0 {
                    return Err(parse_err(
                        path,
                        lineno,
                        "only a single index-list face property is supported",
                    ));
                }
                let prop = &element.properties[0];
                let count_ty = prop.list.unwrap();
                for _ in 0..element.count {
                    let idx: Vec<u32> = if ascii {
                        read_line(&mut reader, &mut line)?;
                        lineno += 1;
                        let row: Vec<u32> = line
                            .split_whitespace()
                            .map(|t| t.parse::<u32>())
                            .collect::<Result<_, _>>()
                            .map_err(|_| parse_err(path, lineno, "bad face row"))?;
                        if row.is_empty() || row.len() != row[0] as usize + 1 {
                            return Err(parse_err(path, lineno, "face row count mismatch"));
                        }
                        row[1..].to_vec()
                    } else {
                        let mut buf = [0u8; 8];
                        reader
                            .read_exact(&mut buf[..count_ty.size()])
                            .map_err(|source| MeshError::Read {
                                path: path.display().to_string(),
                                source,
                            })?;
                        let n = count_ty.read_f64(&buf) as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            reader
                                .read_exact(&mut buf[..prop.ty.size()])
                                .map_err(|source| MeshError::Read {
                                    path: path.display().to_string(),
                                    source,
                                })?;
                            idx.push(prop.ty.read_f64(&buf) as u32);
                        }
                        idx
                    };
                    if idx.len() < 3 {
                        return Err(parse_err(path, lineno, "face needs at least 3 indices"));
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
            }
            _ => {
                // Unknown element: only skippable when we can compute its size.
                if element.properties.iter().any(|p| p.list.is_some()) {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("cannot skip list element {:?}", element.name),
                    ));
                }
                let stride: usize = element.properties.iter().map(|p| p.ty.size()).sum();
                if ascii {
                    for _ in 0..element.count {
                        read_line(&mut reader, &mut line)?;
                        lineno += 1;
                    }
                } else {
                    let mut skip = vec![0u8; stride];
                    for _ in 0..element.count {
                        reader
                            .read_exact(&mut skip)
                            .map_err(|source| MeshError::Read {
                                path: path.display().to_string(),
                                source,
                            })?;
                    }
                }
            }
        }
    }

    Ok(TriMesh {
        vertices,
        faces,
        labels,
    })
}

fn save_ply(mesh: &TriMesh, path: &Path, encoding: PlyEncoding) -> Result<(), MeshError> {
    let mut out = create(path)?;
    let err = write_err(path);
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply").map_err(&err)?;
    writeln!(out, "format {format} 1.0").map_err(&err)?;
    writeln!(out, "element vertex {}", mesh.vertices.len()).map_err(&err)?;
    writeln!(out, "property float x").map_err(&err)?;
    writeln!(out, "property float y").map_err(&err)?;
    writeln!(out, "property float z").map_err(&err)?;
    if mesh.labels.is_some() {
        writeln!(out, "property int label").map_err(&err)?;
    }
    writeln!(out, "element face {}", mesh.faces.len()).map_err(&err)?;
    writeln!(out, "property list uchar uint vertex_indices").map_err(&err)?;
    writeln!(out, "end_header").map_err(&err)?;

    match encoding {
        PlyEncoding::Ascii => {
            for (i, v) in mesh.vertices.iter().enumerate() {
                write!(out, "{} {} {}", v.x as f32, v.y as f32, v.z as f32).map_err(&err)?;
                if let Some(labels) = &mesh.labels {
                    write!(out, " {}", labels[i]).map_err(&err)?;
                }
                writeln!(out).map_err(&err)?;
            }
            for f in &mesh.faces {
                writeln!(out, "3 {} {} {}", f[0], f[1], f[2]).map_err(&err)?;
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            for (i, v) in mesh.vertices.iter().enumerate() {
                for c in [v.x, v.y, v.z] {
                    out.write_all(&(c as f32).to_le_bytes()).map_err(&err)?;
                }
                if let Some(labels) = &mesh.labels {
                    out.write_all(&labels[i].to_le_bytes()).map_err(&err)?;
                }
            }
            for f in &mesh.faces {
                out.write_all(&[3u8]).map_err(&err)?;
                for &i in f {
                    out.write_all(&i.to_le_bytes()).map_err(&err)?;
                }
            }
        }
    }
    out.flush().map_err(&err)
}

//! PLY 1.0 reading and writing (ASCII and binary little endian).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use splatforge_core::gaussian::{GaussianRecord, InitAsset};
use splatforge_core::{ColorRgb, Point3, PointCloud};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::I8 => "char",
            Self::U8 => "uchar",
            Self::I16 => "short",
            Self::U16 => "ushort",
            Self::I32 => "int",
            Self::U32 => "uint",
            Self::F32 => "float",
            Self::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ElementDecl {
    name: String,
    count: usize,
    properties: Vec<(String, ScalarType)>,
}

/// The vertex element of a PLY file, every property widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexTable {
    pub encoding: Encoding,
    pub properties: Vec<(String, ScalarType)>,
    pub rows: Vec<Vec<f64>>,
}

impl VertexTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|(n, _)| n == name)
    }

    pub fn property_names(&self) -> Vec<&str> {
        self.properties.iter().map(|(n, _)| n.as_str()).collect()
    }
}

fn header_end(bytes: &[u8]) -> Option<usize> {
    let needle = b"end_header";
    let at = bytes.windows(needle.len()).position(|w| w == needle)?;
    let rest = &bytes[at + needle.len()..];
    match rest.first() {
        Some(b'\n') => Some(at + needle.len() + 1),
        Some(b'\r') if rest.get(1) == Some(&b'\n') => Some(at + needle.len() + 2),
        _ => None,
    }
}

pub fn parse_vertices(bytes: &[u8], path: &Path) -> Result<VertexTable> {
    let end = header_end(bytes).ok_or_else(|| Error::parse(path, 1, "no end_header line"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::parse(path, 1, "header is not UTF-8"))?;
    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(Error::parse(path, 1, "missing ply magic")),
    }
    let mut encoding = None;
    let mut elements: Vec<ElementDecl> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", "1.0"] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", "1.0"] => encoding = Some(Encoding::BinaryLittleEndian),
            ["format", other, ..] => return Err(Error::parse(path, lineno, format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            ["element", name, count] => elements.push(ElementDecl {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad element count {count}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", ..] => {
                let el = elements.last().ok_or_else(|| Error::parse(path, lineno, "property before element"))?;
                if el.name == "vertex" || !elements.iter().any(|e| e.name == "vertex") {
                    return Err(Error::parse(path, lineno, "list properties are only supported after the vertex element"));
                }
            }
            ["property", ty, name] => {
                let ty = ScalarType::parse(ty).ok_or_else(|| Error::parse(path, lineno, format!("unknown type {ty}")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, lineno, "property before element"))?;
                el.properties.push((name.to_string(), ty));
            }
            _ => return Err(Error::parse(path, lineno, format!("unrecognized header line {line:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::parse(path, 1, "missing format line"))?;
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(path, 1, "no vertex element"))?;
    let body = &bytes[end..];
    let header_lines = header.lines().count();
    let vertex = &elements[vi];
    let rows = match encoding {
        Encoding::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| Error::parse(path, header_lines + 1, "body is not UTF-8"))?;
            let skip: usize = elements[..vi].iter().map(|e| e.count).sum();
            let mut rows = Vec::with_capacity(vertex.count);
            let mut data_lines = text.lines().enumerate().skip(skip);
            for _ in 0..vertex.count {
                let (i, line) = data_lines
                    .next()
                    .ok_or_else(|| Error::parse(path, header_lines + skip + rows.len() + 1, "truncated vertex data"))?;
                let lineno = header_lines + i + 1;
                let vals = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, lineno, format!("bad number {t:?}"))))
                    .collect::<Result<Vec<f64>>>()?;
                if vals.len() != vertex.properties.len() {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("expected {} values, found {}", vertex.properties.len(), vals.len()),
                    ));
                }
                rows.push(vals);
            }
            rows
        }
        Encoding::BinaryLittleEndian => {
            let stride = |e: &ElementDecl| e.properties.iter().map(|(_, t)| t.size()).sum::<usize>();
            let offset: usize = elements[..vi].iter().map(|e| e.count * stride(e)).sum();
            let row = stride(vertex);
            let need = offset + row * vertex.count;
            if body.len() < need {
                return Err(Error::parse(
                    path,
                    header_lines,
                    format!("binary body holds {} bytes, vertex data needs {need}", body.len()),
                ));
            }
            (0..vertex.count)
                .map(|i| {
                    let mut at = offset + i * row;
                    vertex
                        .properties
                        .iter()
                        .map(|(_, t)| {
                            let v = t.decode(&body[at..at + t.size()]);
                            at += t.size();
                            v
                        })
                        .collect()
                })
                .collect()
        }
    };
    Ok(VertexTable {
        encoding,
        properties: vertex.properties.clone(),
        rows,
    })
}

pub fn read_vertices(path: &Path) -> Result<VertexTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_vertices(&bytes, path)
}

/// Point cloud from `x/y/z`, optional `red/green/blue` (uchar, 0..255) or
/// `r/g/b` (float, 0..1) and optional `nx/ny/nz`.
pub fn table_to_cloud(t: &VertexTable, path: &Path) -> Result<PointCloud> {
    let col = |n: &str| t.column(n);
    let (x, y, z) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::parse(path, 1, "vertex element lacks x/y/z")),
    };
    let points = t.rows.iter().map(|r| Point3::new(r[x], r[y], r[z])).collect();
    let colors = if let (Some(r), Some(g), Some(b)) = (col("red"), col("green"), col("blue")) {
        let byte = |v: f64| v.clamp(0.0, 255.0) as u8;
        Some(
            t.rows
                .iter()
                .map(|row| ColorRgb::from_u8([byte(row[r]), byte(row[g]), byte(row[b])]))
                .collect(),
        )
    } else if let (Some(r), Some(g), Some(b)) = (col("r"), col("g"), col("b")) {
        Some(
            t.rows
                .iter()
                .map(|row| ColorRgb::new(row[r], row[g], row[b]))
                .collect::<std::result::Result<Vec<_>, _>>()?,
        )
    } else {
        None
    };
    let normals = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some(t.rows.iter().map(|r| Point3::new(r[a], r[b], r[c])).collect()),
        _ => None,
    };
    let cloud = PointCloud { points, colors, normals };
    cloud.validate()?;
    Ok(cloud)
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    table_to_cloud(&read_vertices(path)?, path)
}

/// Positions and normals as `double`, colors quantized to `uchar`.
pub fn encode_cloud(cloud: &PointCloud, encoding: Encoding) -> Vec<u8> {
    let mut header = String::from("ply\n");
    header.push_str(match encoding {
        Encoding::Ascii => "format ascii 1.0\n",
        Encoding::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let _ = writeln!(header, "element vertex {}", cloud.len());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.normals.is_some() {
        header.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    if cloud.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for i in 0..cloud.len() {
        let mut vals: Vec<f64> = cloud.points[i].iter().copied().collect();
        if let Some(n) = &cloud.normals {
            vals.extend(n[i].iter());
        }
        let rgb = cloud.colors.as_ref().map(|c| c[i].to_u8());
        match encoding {
            Encoding::Ascii => {
                let mut line = vals.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ");
                if let Some(c) = rgb {
                    let _ = write!(line, " {} {} {}", c[0], c[1], c[2]);
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            Encoding::BinaryLittleEndian => {
                for v in vals {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(c) = rgb {
                    out.extend_from_slice(&c);
                }
            }
        }
    }
    out
}

pub fn write_cloud(path: &Path, cloud: &PointCloud, encoding: Encoding) -> Result<()> {
    write_bytes(path, &encode_cloud(cloud, encoding))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Property order of the 3DGS initialization schema.
pub const GAUSSIAN_PROPERTIES: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

fn record_values(r: &GaussianRecord) -> [f32; 17] {
    let m = r.mean;
    [
        m.x as f32,
        m.y as f32,
        m.z as f32,
        0.0,
        0.0,
        0.0,
        r.sh_dc[0] as f32,
        r.sh_dc[1] as f32,
        r.sh_dc[2] as f32,
        r.opacity_logit as f32,
        r.scale[0] as f32,
        r.scale[1] as f32,
        r.scale[2] as f32,
        r.rotation[0] as f32,
        r.rotation[1] as f32,
        r.rotation[2] as f32,
        r.rotation[3] as f32,
    ]
}

pub fn encode_asset(asset: &InitAsset) -> Vec<u8> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    let _ = writeln!(header, "element vertex {}", asset.records.len());
    for p in GAUSSIAN_PROPERTIES {
        let _ = writeln!(header, "property float {p}");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    out.reserve(asset.records.len() * 17 * 4);
    for r in &asset.records {
        for v in record_values(r) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_asset(path: &Path, asset: &InitAsset) -> Result<()> {
    asset.validate()?;
    write_bytes(path, &encode_asset(asset))
}

/// Reads a file that must follow the 17-property float schema exactly.
pub fn read_asset(path: &Path) -> Result<Vec<GaussianRecord>> {
    let t = read_vertices(path)?;
    if t.encoding != Encoding::BinaryLittleEndian {
        return Err(Error::parse(path, 2, "asset must be binary little endian"));
    }
    let names = t.property_names();
    if names != GAUSSIAN_PROPERTIES || t.properties.iter().any(|(_, ty)| *ty != ScalarType::F32) {
        return Err(Error::parse(path, 3, format!("property list {names:?} does not match the 3DGS schema")));
    }
    Ok(t.rows
        .iter()
        .map(|r| GaussianRecord {
            mean: Point3::new(r[0], r[1], r[2]),
            sh_dc: [r[6], r[7], r[8]],
            opacity_logit: r[9],
            scale: [r[10], r[11], r[12]],
            rotation: [r[13], r[14], r[15], r[16]],
        })
        .collect())
}

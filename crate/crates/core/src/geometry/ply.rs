//! Minimal PLY support: ASCII and binary little-endian, vertex element only.
//!
//! Elements preceding `vertex` are skipped (ASCII: any; binary: scalar
//! properties only). Everything after the vertex element is ignored.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use super::PointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
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

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn parse_ascii(self, tok: &str) -> Option<f64> {
        if self.is_float() {
            match self {
                Scalar::F32 => tok.parse::<f32>().ok().map(f64::from),
                _ => tok.parse::<f64>().ok(),
            }
        } else {
            tok.parse::<i64>().ok().map(|v| v as f64)
        }
    }
}

#[derive(Debug)]
struct Property {
    name: String,
    // None for list properties
    scalar: Option<Scalar>,
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn ply_err(message: impl Into<String>, offset: usize) -> Error {
    Error::Ply {
        message: message.into(),
        offset: offset as u64,
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0usize;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(ply_err("header not terminated by end_header", offset));
        };
        let line_start = offset;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| ply_err("header line is not valid UTF-8", line_start))?
            .trim_end_matches('\r')
            .trim();
        offset += nl + 1;
        let mut toks = line.split_whitespace();
        let Some(keyword) = toks.next() else {
            continue;
        };
        if first {
            if keyword != "ply" {
                return Err(ply_err("missing 'ply' magic", line_start));
            }
            first = false;
            continue;
        }
        match keyword {
            "format" => {
                format = Some(match toks.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => return Err(ply_err(format!("unsupported format '{other}'"), line_start)),
                    None => return Err(ply_err("format line without format", line_start)),
                });
            }
            "comment" | "obj_info" => {}
            "element" => {
                let name = toks.next().ok_or_else(|| ply_err("element without name", line_start))?;
                let count = toks
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| ply_err("element count is not an integer", line_start))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| ply_err("property before any element", line_start))?;
                let ty = toks
                    .next()
                    .ok_or_else(|| ply_err("property without type", line_start))?;
                let (scalar, name) = if ty == "list" {
                    let count_ty = toks.next().and_then(Scalar::parse);
                    let item_ty = toks.next().and_then(Scalar::parse);
                    if count_ty.is_none() || item_ty.is_none() {
                        return Err(ply_err("malformed list property", line_start));
                    }
                    (None, toks.next())
                } else {
                    let scalar = Scalar::parse(ty)
                        .ok_or_else(|| ply_err(format!("unsupported property type '{ty}'"), line_start))?;
                    (Some(scalar), toks.next())
                };
                let name = name.ok_or_else(|| ply_err("property without name", line_start))?;
                element.properties.push(Property {
                    name: name.to_string(),
                    scalar,
                });
            }
            "end_header" => break,
            other => return Err(ply_err(format!("unknown header keyword '{other}'"), line_start)),
        }
    }
    let format = format.ok_or_else(|| ply_err("missing format line", 0))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
    })
}

struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(element: &Element, offset: usize) -> Result<VertexLayout> {
    let find = |name: &str| element.properties.iter().position(|p| p.name == name);
    for p in &element.properties {
        if p.scalar.is_none() {
            return Err(ply_err(
                format!("list property '{}' in vertex element is unsupported", p.name),
                offset,
            ));
        }
    }
    let (Some(x), Some(y), Some(z)) = (find("x"), find("y"), find("z")) else {
        return Err(ply_err("vertex element lacks x/y/z properties", offset));
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    Ok(VertexLayout { xyz: [x, y, z], rgb })
}

fn color_value(scalar: Scalar, v: f64) -> f64 {
    if scalar.is_float() {
        v
    } else {
        v / 255.0
    }
}

/// Parses a PLY byte buffer into a point cloud.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vertex_idx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| ply_err("no vertex element", header.body_offset))?;
    let vertex = &header.elements[vertex_idx];
    let layout = vertex_layout(vertex, header.body_offset)?;
    let scalars: Vec<Scalar> = vertex.properties.iter().map(|p| p.scalar.unwrap()).collect();

    let mut values = vec![0.0f64; scalars.len()];
    let mut points = Vec::with_capacity(vertex.count);
    let mut colors = layout.rgb.map(|_| Vec::with_capacity(vertex.count));
    let mut push = |values: &[f64]| {
        points.push(Vector3::new(
            values[layout.xyz[0]],
            values[layout.xyz[1]],
            values[layout.xyz[2]],
        ));
        if let (Some(rgb), Some(colors)) = (layout.rgb, colors.as_mut()) {
            colors.push(Vector3::new(
                color_value(scalars[rgb[0]], values[rgb[0]]),
                color_value(scalars[rgb[1]], values[rgb[1]]),
                color_value(scalars[rgb[2]], values[rgb[2]]),
            ));
        }
    };

    match header.format {
        PlyFormat::BinaryLittleEndian => {
            let mut offset = header.body_offset;
            for element in &header.elements[..vertex_idx] {
                let mut row = 0usize;
                for p in &element.properties {
                    match p.scalar {
                        Some(s) => row += s.size(),
                        None => {
                            return Err(ply_err(
                                format!(
                                    "cannot skip list property '{}' of element '{}' in binary body",
                                    p.name, element.name
                                ),
                                offset,
                            ))
                        }
                    }
                }
                offset += row * element.count;
                if offset > bytes.len() {
                    return Err(ply_err(
                        format!("truncated payload in element '{}'", element.name),
                        bytes.len(),
                    ));
                }
            }
            let row: usize = scalars.iter().map(|s| s.size()).sum();
            for i in 0..vertex.count {
                if offset + row > bytes.len() {
                    return Err(ply_err(format!("truncated payload at vertex {}", i + 1), offset));
                }
                let mut o = offset;
                for (v, s) in values.iter_mut().zip(&scalars) {
                    *v = s.read_le(&bytes[o..o + s.size()]);
                    o += s.size();
                }
                push(&values);
                offset += row;
            }
        }
        PlyFormat::Ascii => {
            let mut offset = header.body_offset;
            let next_line = |offset: &mut usize| -> Option<(usize, &[u8])> {
                loop {
                    if *offset >= bytes.len() {
                        return None;
                    }
                    let start = *offset;
                    let rest = &bytes[start..];
                    let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
                    *offset = start + end + 1;
                    let line = &rest[..end];
                    if line.iter().any(|b| !b.is_ascii_whitespace()) {
                        return Some((start, line));
                    }
                }
            };
            for element in &header.elements[..vertex_idx] {
                for _ in 0..element.count {
                    if next_line(&mut offset).is_none() {
                        return Err(ply_err(
                            format!("truncated payload in element '{}'", element.name),
                            bytes.len(),
                        ));
                    }
                }
            }
            for i in 0..vertex.count {
                let Some((start, line)) = next_line(&mut offset) else {
                    return Err(ply_err(format!("truncated payload at vertex {}", i + 1), bytes.len()));
                };
                let line = std::str::from_utf8(line)
                    .map_err(|_| ply_err(format!("vertex {} is not valid UTF-8", i + 1), start))?;
                let mut toks = line.split_whitespace();
                for (v, s) in values.iter_mut().zip(&scalars) {
                    let tok = toks
                        .next()
                        .ok_or_else(|| ply_err(format!("truncated payload at vertex {}", i + 1), start))?;
                    *v = s
                        .parse_ascii(tok)
                        .ok_or_else(|| ply_err(format!("invalid value '{tok}' at vertex {}", i + 1), start))?;
                }
                push(&values);
            }
        }
    }
    PointCloud::new(points, colors)
}

pub fn load_ply(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

/// Serializes a cloud with `double` coordinates and `uchar` colors.
pub fn write_ply(cloud: &PointCloud, format: PlyFormat, out: &mut impl Write) -> std::io::Result<()> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply")?;
    writeln!(out, "format {fmt} 1.0")?;
    writeln!(out, "element vertex {}", cloud.points.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(out, "property double {axis}")?;
    }
    if cloud.colors.is_some() {
        for ch in ["red", "green", "blue"] {
            writeln!(out, "property uchar {ch}")?;
        }
    }
    writeln!(out, "end_header")?;
    let to_byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    for (i, p) in cloud.points.iter().enumerate() {
        let color = cloud.colors.as_ref().map(|c| c[i].map(to_byte));
        match format {
            PlyFormat::Ascii => {
                write!(out, "{} {} {}", p.x, p.y, p.z)?;
                if let Some(c) = color {
                    write!(out, " {} {} {}", c.x, c.y, c.z)?;
                }
                writeln!(out)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in p.iter() {
                    out.write_all(&v.to_le_bytes())?;
                }
                if let Some(c) = color {
                    out.write_all(&[c.x, c.y, c.z])?;
                }
            }
        }
    }
    Ok(())
}

pub fn save_ply(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let mut buf = Vec::new();
    write_ply(cloud, format, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ASCII3: &str = "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0.5 1 -2\n0.25 0 3.5\n-1e-3 2 7\n";

    #[test]
    fn parses_ascii_xyz() {
        let cloud = parse_ply(ASCII3.as_bytes()).unwrap();
        assert_eq!(cloud.len(), 3);
        assert!(cloud.colors.is_none());
        assert_eq!(cloud.points[1], Vector3::new(0.25, 0.0, 3.5));
        assert_eq!(cloud.points[2].x, -1e-3f32 as f64);
    }

    fn binary_f32(points: &[[f32; 3]], declared: usize) -> Vec<u8> {
        let mut bytes = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {declared}\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
        )
        .into_bytes();
        for p in points {
            for v in p {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    #[test]
    fn binary_matches_ascii_bit_for_bit() {
        let ascii = parse_ply(ASCII3.as_bytes()).unwrap();
        let pts: Vec<[f32; 3]> = ascii
            .points
            .iter()
            .map(|p| [p.x as f32, p.y as f32, p.z as f32])
            .collect();
        let bin = parse_ply(&binary_f32(&pts, 3)).unwrap();
        for (a, b) in ascii.points.iter().zip(&bin.points) {
            for k in 0..3 {
                assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }

    #[test]
    fn truncated_binary_reports_vertex_and_offset() {
        let pts = vec![[1.0f32, 2.0, 3.0]; 7];
        let bytes = binary_f32(&pts, 10);
        let header_len = bytes.len() - 7 * 12;
        match parse_ply(&bytes).unwrap_err() {
            Error::Ply { message, offset } => {
                assert!(message.contains("vertex 8"), "{message}");
                assert_eq!(offset as usize, header_len + 7 * 12);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn truncated_ascii_reports_vertex() {
        let mut text = String::from("ply\nformat ascii 1.0\nelement vertex 10\nproperty float x\nproperty float y\nproperty float z\nend_header\n");
        for i in 0..7 {
            text.push_str(&format!("{i} 0 0\n"));
        }
        let err = parse_ply(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("vertex 8"), "{err}");
    }

    #[test]
    fn malformed_header_reports_offset() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty quaternion x\nend_header\n";
        match parse_ply(text.as_bytes()).unwrap_err() {
            Error::Ply { message, offset } => {
                assert!(message.contains("unsupported property type"));
                assert_eq!(offset as usize, text.find("property").unwrap());
            }
            e => panic!("unexpected {e}"),
        }
        assert!(parse_ply(b"plx\nformat ascii 1.0\nend_header\n").is_err());
        assert!(parse_ply(b"ply\nformat binary_big_endian 1.0\nend_header\n").is_err());
        assert!(parse_ply(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n").is_err());
    }

    #[test]
    fn colors_normalized_from_uchar_and_preceding_elements_skipped() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement camera 2\nproperty int id\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n".to_vec();
        bytes.extend_from_slice(&[0u8; 8]);
        for v in [1.0f64, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[255, 0, 51]);
        let cloud = parse_ply(&bytes).unwrap();
        assert_eq!(cloud.points[0], Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(cloud.colors.unwrap()[0], Vector3::new(1.0, 0.0, 0.2));
    }

    proptest! {
        #[test]
        fn save_load_round_trip(
            pts in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3), 1..40),
            ascii in any::<bool>(),
            colored in any::<bool>(),
        ) {
            let points: Vec<_> = pts.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect();
            let colors = colored.then(|| points.iter().enumerate().map(|(i, _)| Vector3::new((i % 256) as f64 / 255.0, 0.0, 1.0)).collect());
            let cloud = PointCloud::new(points, colors).unwrap();
            let format = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
            let mut buf = Vec::new();
            write_ply(&cloud, format, &mut buf).unwrap();
            let back = parse_ply(&buf).unwrap();
            prop_assert_eq!(back.len(), cloud.len());
            for (a, b) in cloud.points.iter().zip(&back.points) {
                prop_assert!((a - b).amax() <= 1e-6);
            }
            prop_assert_eq!(back.colors, cloud.colors);
        }
    }
}

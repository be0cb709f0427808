//! PLY import/export in the conventional 3DGS vertex layout.
//!
//! Reads `ascii` and `binary_little_endian` files with scalar vertex
//! properties of any numeric type; unknown properties (normals, `f_rest_*`)
//! are skipped. Writes `binary_little_endian` with `float` properties.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Vector3, Vector4};

use super::GaussianModel;
use crate::{Error, Result};

/// Property order written by [`save_ply`].
pub const WRITE_LAYOUT: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1",
    "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
];

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
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
    fn parse(name: &str) -> Option<Self> {
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

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, Scalar)>,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    let next_line = |r: &mut R, line: &mut String| -> Result<()> {
        line.clear();
        let n = r
            .read_line(line)
            .map_err(|e| Error::ply("header", e.to_string()))?;
        if n == 0 {
            return Err(Error::ply("header", "unexpected end of file"));
        }
        Ok(())
    };
    next_line(r, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::ply("header", "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(r, &mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", fmt, _version] => {
                format = Some(match *fmt {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => return Err(Error::ply("header", format!("unsupported format {other}"))),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::ply("header", format!("bad count for element {name}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", ..] => {
                let el = elements.last().map(|e| e.name.as_str()).unwrap_or("header");
                if el == "vertex" {
                    return Err(Error::ply("vertex", "list properties are not supported"));
                }
                // Lists are only tolerated on elements after the vertices.
                if let Some(e) = elements.last_mut() {
                    e.properties.push(("<list>".into(), Scalar::U8));
                }
            }
            ["property", ty, name] => {
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| Error::ply("header", format!("unknown property type {ty}")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::ply("header", "property before any element"))?;
                el.properties.push((name.to_string(), scalar));
            }
            _ => return Err(Error::ply("header", format!("unrecognized line {:?}", line.trim_end()))),
        }
    }
    let format = format.ok_or_else(|| Error::ply("header", "missing format line"))?;
    Ok(Header { format, elements })
}

pub fn load_ply(path: &Path) -> Result<GaussianModel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(&mut BufReader::new(file))
}

pub fn read_ply<R: BufRead>(r: &mut R) -> Result<GaussianModel> {
    let header = read_header(r)?;
    let mut skip_bytes = 0usize;
    let mut vertex = None;
    for el in &header.elements {
        if el.name == "vertex" {
            vertex = Some(el);
            break;
        }
        if el.properties.iter().any(|(n, _)| n == "<list>") {
            return Err(Error::ply(&el.name, "list properties before vertices are not supported"));
        }
        skip_bytes += el.count * el.properties.iter().map(|(_, s)| s.size()).sum::<usize>();
    }
    let vertex = vertex.ok_or_else(|| Error::ply("header", "no vertex element"))?;

    let mut columns = [0usize; REQUIRED.len()];
    for (slot, name) in columns.iter_mut().zip(REQUIRED) {
        *slot = vertex
            .properties
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::ply("vertex", format!("missing property {name}")))?;
    }

    let n = vertex.count;
    let nprops = vertex.properties.len();
    let mut values = vec![0.0f64; nprops];
    let mut model = GaussianModel::with_capacity(n);

    match header.format {
        Format::BinaryLe => {
            if skip_bytes > 0 {
                std::io::copy(&mut r.by_ref().take(skip_bytes as u64), &mut std::io::sink())
                    .map_err(|e| Error::ply("header", e.to_string()))?;
            }
            let stride: usize = vertex.properties.iter().map(|(_, s)| s.size()).sum();
            let mut buf = vec![0u8; stride];
            for i in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::ply(format!("vertex {i}"), "truncated binary payload"))?;
                let mut off = 0;
                for (k, (_, ty)) in vertex.properties.iter().enumerate() {
                    values[k] = ty.decode_le(&buf[off..]);
                    off += ty.size();
                }
                push_vertex(&mut model, i, &values, &columns)?;
            }
        }
        Format::Ascii => {
            let mut line = String::new();
            let mut skip_lines: usize = header
                .elements
                .iter()
                .take_while(|e| e.name != "vertex")
                .map(|e| e.count)
                .sum();
            let mut i = 0;
            while i < n {
                line.clear();
                let read = r
                    .read_line(&mut line)
                    .map_err(|e| Error::ply(format!("vertex {i}"), e.to_string()))?;
                if read == 0 {
                    return Err(Error::ply(format!("vertex {i}"), "unexpected end of file"));
                }
                if line.trim().is_empty() {
                    continue;
                }
                if skip_lines > 0 {
                    skip_lines -= 1;
                    continue;
                }
                let mut tokens = line.split_whitespace();
                for (k, (name, _)) in vertex.properties.iter().enumerate() {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| Error::ply(format!("vertex {i}"), format!("missing value for {name}")))?;
                    values[k] = tok.parse().map_err(|_| {
                        Error::ply(format!("vertex {i}"), format!("bad value {tok:?} for {name}"))
                    })?;
                }
                push_vertex(&mut model, i, &values, &columns)?;
                i += 1;
            }
        }
    }
    Ok(model)
}

fn push_vertex(model: &mut GaussianModel, i: usize, values: &[f64], columns: &[usize; 14]) -> Result<()> {
    for (name, &c) in REQUIRED.iter().zip(columns) {
        if !values[c].is_finite() {
            return Err(Error::ply(
                format!("vertex {i}"),
                format!("non-finite value for {name}"),
            ));
        }
    }
    let v = |k: usize| values[columns[k]];
    model.means.push(Vector3::new(v(0), v(1), v(2)));
    model.sh_dc.push(Vector3::new(v(3), v(4), v(5)));
    model.raw_opacities.push(v(6));
    model.log_scales.push(Vector3::new(v(7), v(8), v(9)));
    let q = Vector4::new(v(10), v(11), v(12), v(13));
    if q.norm() == 0.0 {
        return Err(Error::ply(format!("vertex {i}"), "zero rotation quaternion"));
    }
    model.rotations.push(q);
    Ok(())
}

pub fn save_ply(model: &GaussianModel, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_ply(model, &mut bytes).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_ply<W: Write>(model: &GaussianModel, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", model.len())?;
    for name in WRITE_LAYOUT {
        writeln!(w, "property float {name}")?;
    }
    writeln!(w, "end_header")?;
    for i in 0..model.len() {
        let m = &model.means[i];
        let c = &model.sh_dc[i];
        let s = &model.log_scales[i];
        let q = &model.rotations[i];
        let row = [
            m.x,
            m.y,
            m.z,
            0.0,
            0.0,
            0.0,
            c.x,
            c.y,
            c.z,
            model.raw_opacities[i],
            s.x,
            s.y,
            s.z,
            q[0],
            q[1],
            q[2],
            q[3],
        ];
        for v in row {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::sigmoid;

    fn one_gaussian_ascii(opacity: f64) -> String {
        format!(
            "ply\nformat ascii 1.0\ncomment test\nelement vertex 1\n{}end_header\n0 0 0 0 0 0 0 0 0 {opacity} 0 0 0 1 0 0 0\n",
            WRITE_LAYOUT.iter().map(|n| format!("property float {n}\n")).collect::<String>()
        )
    }

    #[test]
    fn identity_gaussian_from_ascii() {
        let m = read_ply(&mut one_gaussian_ascii(0.0).as_bytes()).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.means[0], Vector3::zeros());
        assert_eq!(m.scale(0), Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(m.opacity(0), 0.5);
        assert_eq!(m.color(0), Vector3::new(0.5, 0.5, 0.5));
        assert_eq!(m.rotations[0], Vector4::new(1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn opacity_is_sigmoid_of_raw() {
        let m = read_ply(&mut one_gaussian_ascii(4.0).as_bytes()).unwrap();
        // sigmoid(4) = 0.98201379003790845 (mpmath, 30 digits)
        assert!((m.opacity(0) - 0.982_013_790_037_908_4).abs() < 1e-15);
        assert_eq!(m.opacity(0), sigmoid(4.0));
    }

    #[test]
    fn missing_property_is_named() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n0\n";
        let err = read_ply(&mut text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("vertex") && err.contains("missing property y"), "{err}");
    }

    #[test]
    fn non_finite_value_is_named() {
        let text = one_gaussian_ascii(0.0).replace("0 0 0 1 0 0 0\n", "nan 0 0 1 0 0 0\n");
        let err = read_ply(&mut text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("vertex 0") && err.contains("scale_0"), "{err}");
    }

    #[test]
    fn malformed_header() {
        assert!(read_ply(&mut "plx\n".as_bytes()).is_err());
        assert!(read_ply(&mut "ply\nelement vertex 1\nend_header\n".as_bytes()).is_err());
        let trunc = {
            let mut b = Vec::new();
            let mut m = GaussianModel::default();
            m.push(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), Vector4::new(1.0, 0.0, 0.0, 0.0), 0.5, Vector3::zeros());
            write_ply(&m, &mut b).unwrap();
            b.truncate(b.len() - 3);
            b
        };
        let err = read_ply(&mut trunc.as_slice()).unwrap_err().to_string();
        assert!(err.contains("vertex 0"), "{err}");
    }

    #[test]
    fn binary_with_extra_properties_and_doubles() {
        let mut text = String::from("ply\nformat binary_little_endian 1.0\nelement vertex 2\n");
        let props: Vec<(&str, &str)> = vec![
            ("double", "x"), ("double", "y"), ("double", "z"), ("uchar", "red"),
            ("float", "f_dc_0"), ("float", "f_dc_1"), ("float", "f_dc_2"), ("float", "f_rest_0"),
            ("float", "opacity"), ("float", "scale_0"), ("float", "scale_1"), ("float", "scale_2"),
            ("float", "rot_0"), ("float", "rot_1"), ("float", "rot_2"), ("float", "rot_3"),
        ];
        for (t, n) in &props {
            text.push_str(&format!("property {t} {n}\n"));
        }
        text.push_str("end_header\n");
        let mut bytes = text.into_bytes();
        for i in 0..2 {
            let k = i as f64;
            for (t, n) in &props {
                let v = match *n { "x" => 0.1 + k, "rot_0" => 1.0, "opacity" => -1.5, "red" => 200.0, _ => 0.25 };
                match *t {
                    "double" => bytes.extend_from_slice(&v.to_le_bytes()),
                    "uchar" => bytes.push(v as u8),
                    _ => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        let m = read_ply(&mut bytes.as_slice()).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.means[1].x, 1.1);
        assert_eq!(m.raw_opacities[0], -1.5);
        assert_eq!(m.log_scales[1], Vector3::new(0.25, 0.25, 0.25));
    }
}

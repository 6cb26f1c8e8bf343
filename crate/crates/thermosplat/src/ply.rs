//! Binary little-endian PLY for Gaussian clouds.
//!
//! Written files always use `double` properties in this order:
//! `x y z rot_0..3 log_scale_0..2 opacity_c opacity_t t_base f_dc_0..2 f_rest_* embed_*`.
//! `f_rest` is channel-major: `f_rest_{c*(nb-1)+k-1}` holds band `k` of channel `c`.
//! The reader accepts any scalar property type and ignores unknown properties.

use std::collections::HashMap;
use std::path::Path;

use thermosplat_core::gaussian::{sh_coeff_count, GaussianCloud};

use crate::error::{Error, Result};

const FORMAT: &str = "PLY";

pub fn write_cloud(cloud: &GaussianCloud) -> Vec<u8> {
    let names = property_names(cloud.sh_degree, cloud.embed_dim);
    let mut out = String::from("ply\nformat binary_little_endian 1.0\n");
    out.push_str(&format!("element vertex {}\n", cloud.len()));
    for n in &names {
        out.push_str(&format!("property double {n}\n"));
    }
    out.push_str("end_header\n");
    let mut bytes = out.into_bytes();
    bytes.reserve(cloud.len() * names.len() * 8);
    let nb = cloud.sh_stride() / 3;
    for i in 0..cloud.len() {
        let mut row: Vec<f64> = Vec::with_capacity(names.len());
        row.extend(cloud.position(i));
        row.extend(cloud.rotation(i));
        row.extend(cloud.log_scale(i));
        row.extend([cloud.opacity_c[i], cloud.opacity_t[i], cloud.t_base[i]]);
        let sh = cloud.sh_of(i);
        row.extend((0..3).map(|c| sh[c * nb]));
        for c in 0..3 {
            row.extend(&sh[c * nb + 1..(c + 1) * nb]);
        }
        row.extend(cloud.embedding(i));
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn property_names(sh_degree: usize, embed_dim: usize) -> Vec<String> {
    let nb = sh_coeff_count(sh_degree);
    let mut n: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    n.extend((0..4).map(|k| format!("rot_{k}")));
    n.extend((0..3).map(|k| format!("log_scale_{k}")));
    n.extend(["opacity_c", "opacity_t", "t_base"].iter().map(|s| s.to_string()));
    n.extend((0..3).map(|k| format!("f_dc_{k}")));
    n.extend((0..3 * (nb - 1)).map(|k| format!("f_rest_{k}")));
    n.extend((0..embed_dim).map(|k| format!("embed_{k}")));
    n
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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

    fn read(self, b: &[u8]) -> f64 {
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

struct Header {
    count: usize,
    props: Vec<(String, Scalar)>,
    body: usize,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { format: FORMAT, offset, message: message.into() }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let end = bytes[start..].iter().position(|&b| b == b'\n').ok_or_else(|| parse_err(start, "unterminated header"))?;
        *pos = start + end + 1;
        let line = std::str::from_utf8(&bytes[start..start + end]).map_err(|_| parse_err(start, "header is not UTF-8"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };
    let (_, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(parse_err(0, "missing `ply` magic"));
    }
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    let mut format_seen = false;
    loop {
        let (at, line) = next_line(&mut pos)?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", "binary_little_endian", "1.0"] => format_seen = true,
            ["format", "binary_big_endian", ..] => return Err(Error::UnsupportedEndianness(FORMAT)),
            ["format", other, ..] => return Err(parse_err(at, format!("unsupported format `{other}`"))),
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(parse_err(at, "duplicate vertex element"));
                }
                count = Some(n.parse::<usize>().map_err(|_| parse_err(at, format!("bad vertex count `{n}`")))?);
                in_vertex = true;
            }
            ["element", name, _] => return Err(parse_err(at, format!("unsupported element `{name}`"))),
            ["property", "list", ..] => return Err(parse_err(at, "list properties are not supported")),
            ["property", ty, name] => {
                if !in_vertex {
                    return Err(parse_err(at, "property outside the vertex element"));
                }
                let s = Scalar::parse(ty).ok_or_else(|| parse_err(at, format!("unknown property type `{ty}`")))?;
                if props.iter().any(|(n, _)| n == name) {
                    return Err(parse_err(at, format!("duplicate property `{name}`")));
                }
                props.push((name.to_string(), s));
            }
            _ => return Err(parse_err(at, format!("unrecognized header line `{line}`"))),
        }
    }
    if !format_seen {
        return Err(parse_err(0, "missing `format binary_little_endian 1.0` line"));
    }
    let count = count.ok_or_else(|| parse_err(0, "missing `element vertex`"))?;
    Ok(Header { count, props, body: pos })
}

fn numbered(index: &HashMap<&str, usize>, prefix: &str) -> usize {
    let mut n = 0;
    while index.contains_key(format!("{prefix}{n}").as_str()) {
        n += 1;
    }
    n
}

pub fn read_cloud(bytes: &[u8]) -> Result<GaussianCloud> {
    let h = parse_header(bytes)?;
    let index: HashMap<&str, usize> = h.props.iter().enumerate().map(|(i, (n, _))| (n.as_str(), i)).collect();
    let n_rest = numbered(&index, "f_rest_");
    let embed_dim = numbered(&index, "embed_");
    for (name, _) in &h.props {
        for (prefix, n) in [("f_rest_", n_rest), ("embed_", embed_dim)] {
            if let Some(k) = name.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok()) {
                if k > n {
                    return Err(Error::MissingProperty(format!("{prefix}{n}")));
                }
            }
        }
    }
    if n_rest % 3 != 0 {
        return Err(Error::PropertyCount(format!("{n_rest} f_rest properties is not a multiple of 3")));
    }
    let nb = n_rest / 3 + 1;
    let sh_degree = (0..5).find(|&d| sh_coeff_count(d) == nb).ok_or_else(|| {
        Error::PropertyCount(format!("{n_rest} f_rest properties match no SH degree"))
    })?;
    let names = property_names(sh_degree, embed_dim);
    let cols: Vec<usize> = names
        .iter()
        .map(|n| index.get(n.as_str()).copied().ok_or_else(|| Error::MissingProperty(n.clone())))
        .collect::<Result<_>>()?;
    let offsets: Vec<usize> = h.props.iter().scan(0, |acc, (_, s)| {
        let o = *acc;
        *acc += s.size();
        Some(o)
    }).collect();
    let stride: usize = h.props.iter().map(|(_, s)| s.size()).sum();
    let need = h.count.checked_mul(stride).ok_or_else(|| parse_err(h.body, "vertex data size overflows"))?;
    let have = bytes.len() - h.body;
    if have < need {
        let row = have / stride.max(1);
        return Err(parse_err(bytes.len(), format!("truncated: vertex {row} of {} ends past end of file (need {} bytes of data, have {have})", h.count, need)));
    }
    if have > need {
        return Err(Error::PropertyCount(format!(
            "{} trailing bytes after {} vertices of {} properties",
            have - need,
            h.count,
            h.props.len()
        )));
    }
    let mut cloud = GaussianCloud::new(sh_degree, embed_dim);
    let mut row = vec![0.0; names.len()];
    for i in 0..h.count {
        let base = h.body + i * stride;
        for (slot, &c) in row.iter_mut().zip(&cols) {
            let (_, s) = h.props[c];
            *slot = s.read(&bytes[base + offsets[c]..]);
        }
        push_row(&mut cloud, &row, nb);
    }
    Ok(cloud)
}

fn push_row(cloud: &mut GaussianCloud, row: &[f64], nb: usize) {
    cloud.positions.extend(&row[0..3]);
    cloud.rotations.extend(&row[3..7]);
    cloud.log_scales.extend(&row[7..10]);
    cloud.opacity_c.push(row[10]);
    cloud.opacity_t.push(row[11]);
    cloud.t_base.push(row[12]);
    let rest = &row[16..16 + 3 * (nb - 1)];
    for c in 0..3 {
        cloud.sh.push(row[13 + c]);
        cloud.sh.extend(&rest[c * (nb - 1)..(c + 1) * (nb - 1)]);
    }
    cloud.embeddings.extend(&row[16 + 3 * (nb - 1)..]);
}

pub fn save(path: &Path, cloud: &GaussianCloud) -> Result<()> {
    std::fs::write(path, write_cloud(cloud)).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<GaussianCloud> {
    read_cloud(&std::fs::read(path).map_err(Error::io(path))?)
}

//! PLY point clouds. Writes binary little-endian; reads binary little-endian and ASCII.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Label, PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Ply {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let labelled = cloud.has_labels();
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment sylva point cloud\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        cloud.len()
    );
    if labelled {
        header.push_str("property uchar label_kind\nproperty uint label_id\n");
    }
    header.push_str("end_header\n");
    let stride = 24 + if labelled { 5 } else { 0 };
    let mut out = Vec::with_capacity(header.len() + stride * cloud.len());
    out.extend_from_slice(header.as_bytes());
    for (i, p) in cloud.points.iter().enumerate() {
        out.extend_from_slice(&p.x.to_le_bytes());
        out.extend_from_slice(&p.y.to_le_bytes());
        out.extend_from_slice(&p.z.to_le_bytes());
        if labelled {
            let (kind, id) = cloud.labels[i].code();
            out.push(kind);
            out.extend_from_slice(&id.to_le_bytes());
        }
    }
    out
}

pub fn decode_ply(bytes: &[u8]) -> Result<PointCloud> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err(start, "unterminated header"))?;
        *pos = start + rel + 1;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| err(start, "header is not text"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };
    let (o, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(err(o, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (o, line) = next_line(&mut pos)?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                format = Some(match (tok.next(), tok.next()) {
                    (Some("binary_little_endian"), Some("1.0")) => Format::BinaryLe,
                    (Some("ascii"), Some("1.0")) => Format::Ascii,
                    (f, _) => {
                        return Err(err(o, format!("unsupported format {}", f.unwrap_or(""))))
                    }
                });
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| err(o, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| err(o, "element without count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err(o, "property before element"))?;
                let ty = tok.next().ok_or_else(|| err(o, "property without type"))?;
                if ty == "list" {
                    if el.name == "vertex" || elements.iter().all(|e| e.name != "vertex") {
                        return Err(err(
                            o,
                            "list properties are not supported before or in the vertex element",
                        ));
                    }
                    continue;
                }
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| err(o, format!("unknown property type {ty}")))?;
                let name = tok.next().ok_or_else(|| err(o, "property without name"))?;
                el.props.push((name.to_string(), scalar));
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("end_header") => break,
            Some(other) => return Err(err(o, format!("unexpected header keyword {other}"))),
        }
    }
    let format = format.ok_or_else(|| err(0, "missing format line"))?;
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| err(pos, "no vertex element"))?;
    // Skip fixed-size elements that precede the vertices.
    if format == Format::BinaryLe {
        for e in &elements[..vi] {
            pos += e.count * e.props.iter().map(|p| p.1.size()).sum::<usize>();
        }
    }
    let v = &elements[vi];
    let find = |n: &str| v.props.iter().position(|p| p.0 == n);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(err(pos, "vertex element lacks x, y or z")),
    };
    let labels = find("label_kind").zip(find("label_id"));
    let mut cloud = PointCloud::new();
    cloud.points.reserve(v.count);
    let mut vals = vec![0.0; v.props.len()];
    match format {
        Format::BinaryLe => {
            let offsets: Vec<usize> = v
                .props
                .iter()
                .scan(0, |acc, p| {
                    let o = *acc;
                    *acc += p.1.size();
                    Some(o)
                })
                .collect();
            let stride: usize = v.props.iter().map(|p| p.1.size()).sum();
            let need = pos + stride * v.count;
            if bytes.len() < need {
                let whole = (bytes.len().saturating_sub(pos)) / stride.max(1);
                return Err(err(
                    pos + whole * stride,
                    format!(
                        "truncated vertex data: {} of {} vertices present",
                        whole, v.count
                    ),
                ));
            }
            for k in 0..v.count {
                let rec = &bytes[pos + k * stride..pos + (k + 1) * stride];
                for (m, p) in v.props.iter().enumerate() {
                    vals[m] = p.1.read_le(&rec[offsets[m]..]);
                }
                push_vertex(&mut cloud, &vals, (ix, iy, iz), labels, pos + k * stride)?;
            }
        }
        Format::Ascii => {
            for k in 0..elements[..vi].iter().map(|e| e.count).sum::<usize>() {
                next_line(&mut pos)
                    .map_err(|_| err(pos, format!("truncated element data at line {k}")))?;
            }
            for k in 0..v.count {
                let (o, line) = next_line(&mut pos)
                    .map_err(|_| err(pos, format!("truncated vertex data at vertex {k}")))?;
                let mut tok = line.split_whitespace();
                for (m, slot) in vals.iter_mut().enumerate() {
                    *slot = tok.next().and_then(|t| t.parse().ok()).ok_or_else(|| {
                        err(o, format!("vertex {k}: bad value for {}", v.props[m].0))
                    })?;
                }
                push_vertex(&mut cloud, &vals, (ix, iy, iz), labels, o)?;
            }
        }
    }
    Ok(cloud)
}

fn push_vertex(
    cloud: &mut PointCloud,
    vals: &[f64],
    (ix, iy, iz): (usize, usize, usize),
    labels: Option<(usize, usize)>,
    offset: usize,
) -> Result<()> {
    let p = Vec3::new(vals[ix], vals[iy], vals[iz]);
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(err(offset, "non-finite coordinate"));
    }
    match labels {
        Some((k, i)) => cloud.push(p, Label::from_code(vals[k] as u8, vals[i] as u32)),
        None => cloud.points.push(p),
    }
    Ok(())
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, encode_ply(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ply(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(labelled: bool) -> PointCloud {
        let mut pc = PointCloud::new();
        for k in 0..50 {
            let p = Vec3::new(k as f64 * 0.1, -(k as f64).sqrt(), 1e-7 * k as f64);
            if labelled {
                pc.push(p, Label::Stem(k as u32));
            } else {
                pc.points.push(p);
            }
        }
        pc
    }

    #[test]
    fn binary_round_trip_is_exact() {
        for labelled in [false, true] {
            let pc = sample(labelled);
            assert_eq!(decode_ply(&encode_ply(&pc)).unwrap(), pc);
        }
    }

    #[test]
    fn float_and_ascii_variants() {
        let mut b = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar intensity\nend_header\n".to_vec();
        for v in [[1.5f32, 2.0, -3.0], [0.25, 0.5, 0.75]] {
            for c in v {
                b.extend_from_slice(&c.to_le_bytes());
            }
            b.push(7);
        }
        let pc = decode_ply(&b).unwrap();
        assert_eq!(pc.points[1], Vec3::new(0.25, 0.5, 0.75));
        let a = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n1 2 3\n4 5 6\n";
        assert_eq!(decode_ply(a).unwrap().points[1], Vec3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn truncated_body_reports_offset() {
        let bytes = encode_ply(&sample(false));
        let header_len = bytes.len() - 50 * 24;
        let cut = &bytes[..header_len + 10 * 24 + 5];
        match decode_ply(cut) {
            Err(Error::Ply { offset, message }) => {
                assert_eq!(offset as usize, header_len + 10 * 24);
                assert!(message.contains("10 of 50"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(
            decode_ply(b"plx\n"),
            Err(Error::Ply { offset: 0, .. })
        ));
        let e = decode_ply(b"ply\nformat binary_big_endian 1.0\nend_header\n").unwrap_err();
        assert!(matches!(e, Error::Ply { offset: 4, .. }));
        let e = decode_ply(
            b"ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nend_header\n1\n",
        )
        .unwrap_err();
        assert!(e.to_string().contains("lacks x, y or z"));
        let e = decode_ply(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nend_header\n1 2 oops\n").unwrap_err();
        assert!(matches!(e, Error::Ply { offset, .. } if offset > 0));
    }
}

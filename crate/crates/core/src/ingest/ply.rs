//! PLY and XYZ point/mesh files.
//!
//! Reads ASCII, binary little-endian and binary big-endian PLY. Only the
//! `x y z` vertex properties and the `vertex_indices` (or `vertex_index`)
//! face list are kept; other properties are skipped. Polygons are fanned
//! into triangles.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{format_error, Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Encoding {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Kind {
    fn parse(s: &str) -> Option<Kind> {
        Some(match s {
            "char" | "int8" => Kind::I8,
            "uchar" | "uint8" => Kind::U8,
            "short" | "int16" => Kind::I16,
            "ushort" | "uint16" => Kind::U16,
            "int" | "int32" => Kind::I32,
            "uint" | "uint32" => Kind::U32,
            "float" | "float32" => Kind::F32,
            "double" | "float64" => Kind::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Kind::I8 | Kind::U8 => 1,
            Kind::I16 | Kind::U16 => 2,
            Kind::I32 | Kind::U32 | Kind::F32 => 4,
            Kind::F64 => 8,
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { name: String, kind: Kind },
    List { name: String, count: Kind, item: Kind },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

pub fn read_ply_file(path: &Path) -> Result<PlyData> {
    let bytes = std::fs::read(path)?;
    parse_ply(&bytes, &path.display().to_string())
}

pub fn parse_ply(bytes: &[u8], source: &str) -> Result<PlyData> {
    let err = |loc: String, msg: String| format_error(source, &loc, msg);
    // header
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Option<String> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..].iter().position(|b| *b == b'\n').map_or(bytes.len(), |i| *pos + i);
        let line = String::from_utf8_lossy(&bytes[*pos..end]).trim_end_matches('\r').to_string();
        *pos = (end + 1).min(bytes.len());
        line_no += 1;
        Some(line)
    };
    if next_line(&mut pos).as_deref().map(str::trim) != Some("ply") {
        return Err(err("line 1".into(), "missing 'ply' magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut header_lines = 1;
    loop {
        let line = next_line(&mut pos).ok_or_else(|| err(format!("line {header_lines}"), "header not terminated".into()))?;
        header_lines += 1;
        let loc = format!("line {header_lines}");
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                encoding = Some(match toks.get(1).copied() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLe,
                    Some("binary_big_endian") => Encoding::BinaryBe,
                    other => return Err(err(loc, format!("unknown format {other:?}"))),
                });
            }
            Some("element") => {
                let (Some(name), Some(count)) = (toks.get(1), toks.get(2).and_then(|c| c.parse().ok())) else {
                    return Err(err(loc, format!("bad element line {line:?}")));
                };
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| err(loc.clone(), "property before element".into()))?;
                let prop = if toks.get(1) == Some(&"list") {
                    match (toks.get(2).and_then(|k| Kind::parse(k)), toks.get(3).and_then(|k| Kind::parse(k)), toks.get(4)) {
                        (Some(count), Some(item), Some(name)) => Property::List { name: name.to_string(), count, item },
                        _ => return Err(err(loc, format!("bad list property {line:?}"))),
                    }
                } else {
                    match (toks.get(1).and_then(|k| Kind::parse(k)), toks.get(2)) {
                        (Some(kind), Some(name)) => Property::Scalar { name: name.to_string(), kind },
                        _ => return Err(err(loc, format!("bad property {line:?}"))),
                    }
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(err(loc, format!("unexpected header keyword {other:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| err("header".into(), "missing format line".into()))?;
    let mut out = PlyData::default();
    let body = &bytes[pos..];
    match encoding {
        Encoding::Ascii => read_ascii(body, &elements, header_lines, source, &mut out)?,
        _ => read_binary(body, pos, &elements, encoding == Encoding::BinaryLe, source, &mut out)?,
    }
    Ok(out)
}

fn xyz_slots(el: &Element) -> [Option<usize>; 3] {
    let mut slots = [None; 3];
    for (i, p) in el.props.iter().enumerate() {
        if let Property::Scalar { name, .. } = p {
            match name.as_str() {
                "x" => slots[0] = Some(i),
                "y" => slots[1] = Some(i),
                "z" => slots[2] = Some(i),
                _ => {}
            }
        }
    }
    slots
}

fn is_face_list(name: &str) -> bool {
    name == "vertex_indices" || name == "vertex_index"
}

fn push_polygon(out: &mut PlyData, poly: &[usize]) {
    for k in 1..poly.len().saturating_sub(1) {
        out.faces.push([poly[0], poly[k], poly[k + 1]]);
    }
}

fn read_ascii(body: &[u8], elements: &[Element], header_lines: usize, source: &str, out: &mut PlyData) -> Result<()> {
    let text = String::from_utf8_lossy(body);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    for el in elements {
        let slots = xyz_slots(el);
        for _ in 0..el.count {
            let (idx, line) = lines.next().ok_or_else(|| {
                format_error(source, "end of file", format!("expected {} {} records", el.count, el.name))
            })?;
            let loc = format!("line {}", header_lines + idx + 1);
            let mut toks = line.split_whitespace();
            let mut next = |what: &str| -> Result<f64> {
                toks.next()
                    .ok_or_else(|| format_error(source, &loc, format!("missing {what}")))?
                    .parse::<f64>()
                    .map_err(|e| format_error(source, &loc, format!("{what}: {e}")))
            };
            let mut xyz = [0.0; 3];
            for (pi, p) in el.props.iter().enumerate() {
                match p {
                    Property::Scalar { name, .. } => {
                        let v = next(name)?;
                        for a in 0..3 {
                            if slots[a] == Some(pi) {
                                xyz[a] = v;
                            }
                        }
                    }
                    Property::List { name, .. } => {
                        let n = next("list count")? as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(next(name)? as usize);
                        }
                        if el.name == "face" && is_face_list(name) {
                            push_polygon(out, &items);
                        }
                    }
                }
            }
            if el.name == "vertex" {
                if slots.iter().any(Option::is_none) {
                    return Err(format_error(source, "header", "vertex element lacks x, y or z"));
                }
                out.vertices.push(xyz);
            }
        }
    }
    Ok(())
}

fn read_binary(body: &[u8], base: usize, elements: &[Element], le: bool, source: &str, out: &mut PlyData) -> Result<()> {
    let mut off = 0usize;
    let mut read = |kind: Kind, what: &str| -> Result<f64> {
        let n = kind.size();
        if off + n > body.len() {
            return Err(format_error(source, format!("byte {}", base + off), format!("truncated while reading {what}")));
        }
        let b = &body[off..off + n];
        off += n;
        let mut arr = [0u8; 8];
        arr[..n].copy_from_slice(b);
        if !le {
            arr[..n].reverse();
        }
        Ok(match kind {
            Kind::I8 => arr[0] as i8 as f64,
            Kind::U8 => arr[0] as f64,
            Kind::I16 => i16::from_le_bytes([arr[0], arr[1]]) as f64,
            Kind::U16 => u16::from_le_bytes([arr[0], arr[1]]) as f64,
            Kind::I32 => i32::from_le_bytes([arr[0], arr[1], arr[2], arr[3]]) as f64,
            Kind::U32 => u32::from_le_bytes([arr[0], arr[1], arr[2], arr[3]]) as f64,
            Kind::F32 => f32::from_le_bytes([arr[0], arr[1], arr[2], arr[3]]) as f64,
            Kind::F64 => f64::from_le_bytes(arr),
        })
    };
    for el in elements {
        let slots = xyz_slots(el);
        if el.name == "vertex" && slots.iter().any(Option::is_none) {
            return Err(format_error(source, "header", "vertex element lacks x, y or z"));
        }
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            for (pi, p) in el.props.iter().enumerate() {
                match p {
                    Property::Scalar { name, kind } => {
                        let v = read(*kind, name)?;
                        for a in 0..3 {
                            if slots[a] == Some(pi) {
                                xyz[a] = v;
                            }
                        }
                    }
                    Property::List { name, count, item } => {
                        let n = read(*count, "list count")? as usize;
                        let mut items = Vec::with_capacity(n.min(64));
                        for _ in 0..n {
                            items.push(read(*item, name)? as usize);
                        }
                        if el.name == "face" && is_face_list(name) {
                            push_polygon(out, &items);
                        }
                    }
                }
            }
            if el.name == "vertex" {
                out.vertices.push(xyz);
            }
        }
    }
    Ok(())
}

/// Writes an ASCII PLY with full `f64` precision.
pub fn write_ply_ascii<W: Write>(mut w: W, data: &PlyData) -> Result<()> {
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "element vertex {}", data.vertices.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if !data.faces.is_empty() {
        writeln!(w, "element face {}\nproperty list uchar int vertex_indices", data.faces.len())?;
    }
    writeln!(w, "end_header")?;
    for v in &data.vertices {
        writeln!(w, "{:?} {:?} {:?}", v[0], v[1], v[2])?;
    }
    for f in &data.faces {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a binary little-endian PLY (`float` vertices, `int` indices).
pub fn write_ply_binary<W: Write>(mut w: W, data: &PlyData) -> Result<()> {
    writeln!(w, "ply\nformat binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", data.vertices.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    writeln!(w, "element face {}\nproperty list uchar int vertex_indices", data.faces.len())?;
    writeln!(w, "end_header")?;
    for v in &data.vertices {
        for c in v {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
    }
    for f in &data.faces {
        w.write_all(&[3u8])?;
        for i in f {
            let i = i32::try_from(*i).map_err(|_| Error::InvalidArgument("mesh too large for PLY int indices".into()))?;
            w.write_all(&i.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-delimited `x y z` per line; `#` starts a comment. Extra
/// columns are ignored.
pub fn parse_xyz<R: BufRead>(r: R, source: &str) -> Result<Vec<[f64; 3]>> {
    let mut pts = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or_default().trim();
        if content.is_empty() {
            continue;
        }
        let loc = format!("line {}", i + 1);
        let vals: Vec<f64> = content
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .take(3)
            .map(|s| s.parse::<f64>().map_err(|e| format_error(source, &loc, format!("{s:?}: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() < 3 {
            return Err(format_error(source, &loc, "expected three coordinates"));
        }
        pts.push([vals[0], vals[1], vals[2]]);
    }
    Ok(pts)
}

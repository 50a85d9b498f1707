//! Binary little-endian PLY codec for 3DGS vertex data.
//!
//! Only the `vertex` element is read. Core properties must be `float`;
//! every other scalar property is carried through byte-for-byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{
    decode_color, decode_opacity, decode_rotation, encode_color, encode_opacity, Gaussian,
    GaussianCloud, StoredFields,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarKind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarKind {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    pub fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PropertyDef {
    pub name: String,
    pub kind: ScalarKind,
    /// Type token as written in the header (`float`, `float32`, ...).
    pub type_name: String,
}

impl PropertyDef {
    pub fn float(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ScalarKind::F32,
            type_name: "float".to_string(),
        }
    }
}

const CORE_NAMES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Core(usize),
    Extra { offset: usize },
}

/// Ordered vertex property list plus the byte mapping derived from it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VertexLayout {
    properties: Vec<PropertyDef>,
    slots: Vec<Slot>,
    extra_size: usize,
    stride: usize,
    /// Byte ranges of `f_rest_*` properties inside `raw_extra`.
    sh_rest: Vec<(usize, usize)>,
    /// `comment` and `obj_info` header lines, written back after `format`.
    comments: Vec<String>,
}

impl VertexLayout {
    pub fn new(properties: Vec<PropertyDef>) -> Result<Self> {
        let mut slots = Vec::with_capacity(properties.len());
        let mut seen = [false; 14];
        let mut extra_size = 0;
        let mut stride = 0;
        let mut sh_rest = Vec::new();
        for (i, p) in properties.iter().enumerate() {
            if properties[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Format(format!("duplicate vertex property '{}'", p.name)));
            }
            stride += p.kind.size();
            match CORE_NAMES.iter().position(|&n| n == p.name) {
                Some(c) => {
                    if p.kind != ScalarKind::F32 {
                        return Err(Error::Format(format!(
                            "property '{}' must be float32, found {}",
                            p.name, p.type_name
                        )));
                    }
                    seen[c] = true;
                    slots.push(Slot::Core(c));
                }
                None => {
                    if p.name.starts_with("f_rest_") {
                        sh_rest.push((extra_size, p.kind.size()));
                    }
                    slots.push(Slot::Extra { offset: extra_size });
                    extra_size += p.kind.size();
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!(
                "missing required vertex property '{}'",
                CORE_NAMES[missing]
            )));
        }
        Ok(Self {
            properties,
            slots,
            extra_size,
            stride,
            sh_rest,
            comments: Vec::new(),
        })
    }

    pub fn with_comments(mut self, comments: Vec<String>) -> Self {
        self.comments = comments;
        self
    }

    pub fn comments(&self) -> &[String] {
        &self.comments
    }

    /// `x y z nx ny nz f_dc_0..2 f_rest_0..44 opacity scale_0..2 rot_0..3`, all float.
    pub fn standard() -> Self {
        let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend((0..45).map(|i| format!("f_rest_{i}")));
        names.extend(
            ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
                .iter()
                .map(|s| s.to_string()),
        );
        Self::new(names.into_iter().map(PropertyDef::float).collect())
            .expect("standard layout is valid")
    }

    pub fn properties(&self) -> &[PropertyDef] {
        &self.properties
    }

    /// Bytes per vertex record.
    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Bytes of non-core properties per vertex.
    pub fn extra_size(&self) -> usize {
        self.extra_size
    }
}

struct Header {
    layout: VertexLayout,
    count: usize,
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut read_line = |line: &mut String| -> Result<()> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| Error::Format(format!("reading header: {e}")))?;
        if n == 0 {
            return Err(Error::Format("unexpected end of file in header".into()));
        }
        Ok(())
    };

    read_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::Format("missing 'ply' magic".into()));
    }

    let mut props = Vec::new();
    let mut comments = Vec::new();
    let mut count = None;
    // element currently being declared: None before the first element
    let mut in_vertex = false;
    let mut format_seen = false;
    loop {
        read_line(&mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => comments.push(line.trim_end_matches(['\r', '\n']).to_string()),
            ["format", fmt, _version] => {
                match *fmt {
                    "binary_little_endian" => {}
                    "ascii" => {
                        return Err(Error::Format(
                            "ASCII PLY is not supported; convert to binary_little_endian".into(),
                        ))
                    }
                    other => {
                        return Err(Error::Format(format!("unsupported PLY format '{other}'")))
                    }
                }
                format_seen = true;
            }
            ["element", name, n] => {
                let n: usize = n
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count '{n}'")))?;
                if *name == "vertex" {
                    if count.is_some() {
                        return Err(Error::Format("duplicate vertex element".into()));
                    }
                    count = Some(n);
                    in_vertex = true;
                } else {
                    if count.is_none() && n > 0 {
                        return Err(Error::Format(format!(
                            "element '{name}' precedes vertex data"
                        )));
                    }
                    in_vertex = false;
                }
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(Error::Format("list properties on vertex are not supported".into()));
                }
            }
            ["property", ty, name] => {
                if in_vertex {
                    let kind = ScalarKind::parse(ty)
                        .ok_or_else(|| Error::Format(format!("unknown property type '{ty}'")))?;
                    props.push(PropertyDef {
                        name: name.to_string(),
                        kind,
                        type_name: ty.to_string(),
                    });
                }
            }
            _ => return Err(Error::Format(format!("malformed header line '{}'", line.trim_end()))),
        }
    }
    if !format_seen {
        return Err(Error::Format("missing format line".into()));
    }
    let count = count.ok_or_else(|| Error::Format("no vertex element".into()))?;
    Ok(Header {
        layout: VertexLayout::new(props)?.with_comments(comments),
        count,
    })
}

fn f32_at(record: &[u8], offset: usize) -> f32 {
    f32::from_le_bytes(record[offset..offset + 4].try_into().unwrap())
}

pub fn read_ply<R: Read>(reader: R) -> Result<GaussianCloud> {
    let mut reader = BufReader::new(reader);
    let header = parse_header(&mut reader)?;
    if header.count == 0 {
        return Err(Error::EmptyScene);
    }
    let layout = header.layout;
    let stride = layout.stride;

    // byte offset of every core field inside a record
    let mut core_offset = [0usize; 14];
    let mut extra_ranges = Vec::new();
    let mut off = 0;
    for (p, slot) in layout.properties.iter().zip(&layout.slots) {
        match slot {
            Slot::Core(c) => core_offset[*c] = off,
            Slot::Extra { .. } => extra_ranges.push((off, p.kind.size())),
        }
        off += p.kind.size();
    }

    let mut record = vec![0u8; stride];
    let mut gaussians = Vec::with_capacity(header.count);
    for v in 0..header.count {
        reader.read_exact(&mut record).map_err(|_| {
            Error::Format(format!(
                "truncated vertex data: expected {} vertices, got {v}",
                header.count
            ))
        })?;
        let core: [f32; 14] = std::array::from_fn(|c| f32_at(&record, core_offset[c]));
        for (c, value) in core.iter().enumerate() {
            let needs_finite = matches!(c, 0..=2 | 7..=9);
            if needs_finite && !value.is_finite() {
                return Err(Error::Format(format!(
                    "vertex {v}: non-finite '{}'",
                    CORE_NAMES[c]
                )));
            }
        }
        let mut raw_extra = Vec::with_capacity(layout.extra_size);
        for &(o, n) in &extra_ranges {
            raw_extra.extend_from_slice(&record[o..o + n]);
        }
        let f_dc = [core[3], core[4], core[5]];
        let rotation = [core[10], core[11], core[12], core[13]];
        gaussians.push(Gaussian {
            position: [core[0] as f64, core[1] as f64, core[2] as f64],
            color: decode_color(f_dc),
            log_scale: [core[7] as f64, core[8] as f64, core[9] as f64],
            rotation: decode_rotation(rotation),
            opacity: decode_opacity(core[6]),
            raw_extra,
            stored: Some(StoredFields {
                f_dc,
                opacity: core[6],
                rotation,
            }),
        });
    }
    Ok(GaussianCloud::with_layout(gaussians, Arc::new(layout)))
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut cloud = read_ply(file)?;
    cloud.source_path = Some(path.display().to_string());
    Ok(cloud)
}

fn encode_core(g: &Gaussian) -> [f32; 14] {
    let stored = g.stored.as_ref();
    let f_dc = match stored {
        Some(s) if decode_color(s.f_dc) == g.color => s.f_dc,
        _ => encode_color(g.color),
    };
    let opacity = match stored {
        Some(s) if decode_opacity(s.opacity) == g.opacity => s.opacity,
        _ => encode_opacity(g.opacity),
    };
    let rot = match stored {
        Some(s) if decode_rotation(s.rotation) == g.rotation => s.rotation,
        _ => g.rotation.map(|v| v as f32),
    };
    [
        g.position[0] as f32,
        g.position[1] as f32,
        g.position[2] as f32,
        f_dc[0],
        f_dc[1],
        f_dc[2],
        opacity,
        g.log_scale[0] as f32,
        g.log_scale[1] as f32,
        g.log_scale[2] as f32,
        rot[0],
        rot[1],
        rot[2],
        rot[3],
    ]
}

pub fn write_ply<W: Write>(cloud: &GaussianCloud, writer: W) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::EmptyScene);
    }
    let layout = &cloud.layout;
    let mut w = BufWriter::new(writer);
    let io = |e: std::io::Error| Error::Format(format!("write failed: {e}"));

    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    for c in cloud.layout.comments() {
        header.push_str(c);
        header.push('\n');
    }
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for p in &layout.properties {
        header.push_str(&format!("property {} {}\n", p.type_name, p.name));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(io)?;

    let zeros = vec![0u8; layout.extra_size];
    let mut record = Vec::with_capacity(layout.stride);
    let mut extra = Vec::with_capacity(layout.extra_size);
    for g in &cloud.gaussians {
        let core = encode_core(g);
        extra.clear();
        if g.raw_extra.len() == layout.extra_size {
            extra.extend_from_slice(&g.raw_extra);
            if g.color_modified() {
                for &(o, n) in &layout.sh_rest {
                    extra[o..o + n].fill(0);
                }
            }
        } else {
            extra.extend_from_slice(&zeros);
        }
        record.clear();
        for (p, slot) in layout.properties.iter().zip(&layout.slots) {
            match slot {
                Slot::Core(c) => record.extend_from_slice(&core[*c].to_le_bytes()),
                Slot::Extra { offset } => {
                    record.extend_from_slice(&extra[*offset..*offset + p.kind.size()])
                }
            }
        }
        w.write_all(&record).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn save_ply(cloud: &GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if cloud.is_empty() {
        return Err(Error::EmptyScene);
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply(cloud, file).map_err(|e| match e {
        Error::Format(msg) => Error::io(path, std::io::Error::other(msg)),
        other => other,
    })
}

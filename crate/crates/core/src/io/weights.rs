//! Binary container for network parameters and cascades.
//!
//! Layout (all integers little-endian): magic `MTCW`, version `u16`, record
//! count `u32`, then per record: name length `u16`, name bytes, kind `u8`
//! (0 tensor, 1 cascade blob), rank `u8`, `u32` dims, `f32` payload.
//!
//! A network `n` is stored as an `n.arch` descriptor tensor followed by one
//! tensor per parameter (`n.trunk.<i>.<param>`, `n.<head>.<i>.<param>`), so
//! files are self-describing.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::haar::StrongCascade;
use crate::tensor::{Conv2d, Dense, Head, HeadKind, LayerSpec, MaxPool2d, NetKind, NetworkSpec, PRelu, Softmax, Tensor};

pub const MAGIC: [u8; 4] = *b"MTCW";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Tensor = 0,
    CascadeBlob = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub kind: RecordKind,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl Record {
    fn tensor(name: String, t: &Tensor) -> Self {
        Record {
            name,
            kind: RecordKind::Tensor,
            dims: t.shape().iter().map(|&d| d as u32).collect(),
            data: t.data().to_vec(),
        }
    }
}

/// Everything a weights file can hold.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelBundle {
    pub nets: Vec<NetworkSpec>,
    pub cascade: Option<StrongCascade>,
}

impl ModelBundle {
    pub fn net(&self, kind: NetKind) -> Option<&NetworkSpec> {
        self.nets.iter().find(|n| n.kind == kind)
    }
}

pub fn encode_records(records: &[Record]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        if !seen.insert(r.name.as_str()) {
            return Err(Error::DuplicateRecord { name: r.name.clone() });
        }
        let expect: u64 = r.dims.iter().map(|&d| d as u64).product();
        if r.name.len() > u16::MAX as usize || r.dims.len() > u8::MAX as usize || expect != r.data.len() as u64 {
            return Err(Error::MalformedRecord {
                name: r.name.clone(),
                reason: format!("dims {:?} do not describe {} values", r.dims, r.data.len()),
            });
        }
        out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.kind as u8);
        out.push(r.dims.len() as u8);
        for d in &r.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        for (f, b) in found.iter_mut().zip(bytes) {
            *f = *b;
        }
        return Err(Error::BadMagic { found });
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32()?;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::MalformedRecord {
                name: format!("<at byte {name_at}>"),
                reason: "name is not UTF-8".into(),
            })?
            .to_string();
        let kind = match r.u8()? {
            0 => RecordKind::Tensor,
            1 => RecordKind::CascadeBlob,
            k => {
                return Err(Error::MalformedRecord {
                    name,
                    reason: format!("unknown kind {k} at byte {}", r.pos - 1),
                })
            }
        };
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count: u64 = dims.iter().map(|&d| d as u64).product();
        let bytes_needed = usize::try_from(count * 4).map_err(|_| Error::MalformedRecord {
            name: name.clone(),
            reason: format!("dims {dims:?} too large"),
        })?;
        let payload = r.take(bytes_needed)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateRecord { name });
        }
        records.push(Record { name, kind, dims, data });
    }
    Ok(records)
}

// Arch descriptor codes.
const L_CONV: f32 = 0.0;
const L_PRELU: f32 = 1.0;
const L_POOL: f32 = 2.0;
const L_DENSE: f32 = 3.0;
const L_SOFTMAX: f32 = 4.0;

fn net_code(k: NetKind) -> f32 {
    match k {
        NetKind::PNet => 0.0,
        NetKind::RNet => 1.0,
        NetKind::ONet => 2.0,
        NetKind::Custom => 3.0,
    }
}

fn head_code(k: HeadKind) -> f32 {
    match k {
        HeadKind::Score => 0.0,
        HeadKind::BoxReg => 1.0,
        HeadKind::Landmarks => 2.0,
    }
}

fn describe_layers(layers: &[LayerSpec], out: &mut Vec<f32>) {
    out.push(layers.len() as f32);
    for l in layers {
        match l {
            LayerSpec::Conv(c) => out.extend([L_CONV, c.stride as f32, c.padding as f32]),
            LayerSpec::PRelu(_) => out.push(L_PRELU),
            LayerSpec::MaxPool(p) => out.extend([L_POOL, p.window as f32, p.stride as f32]),
            LayerSpec::Dense(_) => out.push(L_DENSE),
            LayerSpec::Softmax(s) => out.extend([L_SOFTMAX, s.axis as f32]),
        }
    }
}

fn param_records(prefix: &str, layers: &[LayerSpec], out: &mut Vec<Record>) {
    for (i, l) in layers.iter().enumerate() {
        match l {
            LayerSpec::Conv(c) => {
                out.push(Record::tensor(format!("{prefix}.{i}.weight"), &c.weight));
                out.push(Record::tensor(format!("{prefix}.{i}.bias"), &c.bias));
            }
            LayerSpec::Dense(d) => {
                out.push(Record::tensor(format!("{prefix}.{i}.weight"), &d.weight));
                out.push(Record::tensor(format!("{prefix}.{i}.bias"), &d.bias));
            }
            LayerSpec::PRelu(p) => out.push(Record::tensor(format!("{prefix}.{i}.alpha"), &p.alpha)),
            LayerSpec::MaxPool(_) | LayerSpec::Softmax(_) => {}
        }
    }
}

fn net_records(net: &NetworkSpec) -> Vec<Record> {
    let name = net.kind.name();
    let mut arch = vec![net_code(net.kind)];
    describe_layers(&net.trunk, &mut arch);
    arch.push(net.heads.len() as f32);
    for h in &net.heads {
        arch.push(head_code(h.kind));
        describe_layers(&h.layers, &mut arch);
    }
    let mut out = vec![Record {
        name: format!("{name}.arch"),
        kind: RecordKind::Tensor,
        dims: vec![arch.len() as u32],
        data: arch,
    }];
    param_records(&format!("{name}.trunk"), &net.trunk, &mut out);
    for h in &net.heads {
        param_records(&format!("{name}.{}", h.kind.name()), &h.layers, &mut out);
    }
    out
}

/// Records in a fixed order: networks in bundle order, then the cascade.
pub fn bundle_records(bundle: &ModelBundle) -> Vec<Record> {
    let mut out: Vec<Record> = bundle.nets.iter().flat_map(net_records).collect();
    if let Some(c) = &bundle.cascade {
        let blob = c.to_blob();
        out.push(Record {
            name: "cascade".into(),
            kind: RecordKind::CascadeBlob,
            dims: vec![blob.len() as u32],
            data: blob,
        });
    }
    out
}

pub fn encode_bundle(bundle: &ModelBundle) -> Result<Vec<u8>> {
    encode_records(&bundle_records(bundle))
}

struct ArchCursor<'a> {
    name: &'a str,
    vals: &'a [f32],
    pos: usize,
}

impl ArchCursor<'_> {
    fn next(&mut self) -> Result<usize> {
        let v = *self.vals.get(self.pos).ok_or_else(|| Error::MalformedRecord {
            name: self.name.to_string(),
            reason: "descriptor ends early".into(),
        })?;
        self.pos += 1;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::MalformedRecord {
                name: self.name.to_string(),
                reason: format!("descriptor value {v} is not a count"),
            });
        }
        Ok(v as usize)
    }
}

fn fetch(records: &[Record], name: &str) -> Result<Tensor> {
    let r = records
        .iter()
        .find(|r| r.name == name && r.kind == RecordKind::Tensor)
        .ok_or_else(|| Error::MalformedRecord {
            name: name.to_string(),
            reason: "missing parameter record".into(),
        })?;
    let shape: Vec<usize> = r.dims.iter().map(|&d| d as usize).collect();
    Tensor::new(shape, r.data.clone()).map_err(|e| malformed(name, e))
}

fn malformed(name: &str, e: Error) -> Error {
    Error::MalformedRecord {
        name: name.to_string(),
        reason: e.to_string(),
    }
}

fn read_layers(cur: &mut ArchCursor<'_>, records: &[Record], prefix: &str) -> Result<Vec<LayerSpec>> {
    let n = cur.next()?;
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let p = format!("{prefix}.{i}");
        let layer = match cur.next()? as f32 {
            L_CONV => {
                let stride = cur.next()?;
                let padding = cur.next()?;
                let w = fetch(records, &format!("{p}.weight"))?;
                let b = fetch(records, &format!("{p}.bias"))?;
                LayerSpec::Conv(Conv2d::new(w, b, stride, padding).map_err(|e| malformed(&p, e))?)
            }
            L_PRELU => LayerSpec::PRelu(PRelu {
                alpha: fetch(records, &format!("{p}.alpha"))?,
            }),
            L_POOL => {
                let window = cur.next()?;
                let stride = cur.next()?;
                if window == 0 || stride == 0 {
                    return Err(malformed(&p, Error::usage("zero pool window or stride")));
                }
                LayerSpec::MaxPool(MaxPool2d { window, stride })
            }
            L_DENSE => {
                let weight = fetch(records, &format!("{p}.weight"))?;
                let bias = fetch(records, &format!("{p}.bias"))?;
                if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
                    return Err(malformed(&p, Error::shape("dense", weight.shape(), bias.shape())));
                }
                LayerSpec::Dense(Dense { weight, bias })
            }
            L_SOFTMAX => LayerSpec::Softmax(Softmax { axis: cur.next()? }),
            code => {
                return Err(Error::MalformedRecord {
                    name: cur.name.to_string(),
                    reason: format!("unknown layer code {code}"),
                })
            }
        };
        layers.push(layer);
    }
    Ok(layers)
}

fn read_net(arch: &Record, records: &[Record]) -> Result<NetworkSpec> {
    let mut cur = ArchCursor {
        name: &arch.name,
        vals: &arch.data,
        pos: 0,
    };
    let kind = match cur.next()? {
        0 => NetKind::PNet,
        1 => NetKind::RNet,
        2 => NetKind::ONet,
        3 => NetKind::Custom,
        k => {
            return Err(Error::MalformedRecord {
                name: arch.name.clone(),
                reason: format!("unknown network code {k}"),
            })
        }
    };
    let name = kind.name();
    if arch.name != format!("{name}.arch") {
        return Err(Error::MalformedRecord {
            name: arch.name.clone(),
            reason: format!("descriptor is for {name}"),
        });
    }
    let trunk = read_layers(&mut cur, records, &format!("{name}.trunk"))?;
    let n_heads = cur.next()?;
    let mut heads = Vec::with_capacity(n_heads);
    for _ in 0..n_heads {
        let hk = match cur.next()? {
            0 => HeadKind::Score,
            1 => HeadKind::BoxReg,
            2 => HeadKind::Landmarks,
            k => {
                return Err(Error::MalformedRecord {
                    name: arch.name.clone(),
                    reason: format!("unknown head code {k}"),
                })
            }
        };
        let layers = read_layers(&mut cur, records, &format!("{name}.{}", hk.name()))?;
        heads.push(Head { kind: hk, layers });
    }
    if cur.pos != arch.data.len() {
        return Err(Error::MalformedRecord {
            name: arch.name.clone(),
            reason: "trailing descriptor values".into(),
        });
    }
    Ok(NetworkSpec { kind, trunk, heads })
}

pub fn decode_bundle(bytes: &[u8]) -> Result<ModelBundle> {
    let records = decode_records(bytes)?;
    let mut bundle = ModelBundle::default();
    for r in &records {
        if r.kind == RecordKind::Tensor && r.name.ends_with(".arch") {
            bundle.nets.push(read_net(r, &records)?);
        } else if r.kind == RecordKind::CascadeBlob {
            if bundle.cascade.is_some() {
                return Err(Error::DuplicateRecord { name: r.name.clone() });
            }
            bundle.cascade = Some(StrongCascade::from_blob(&r.data).map_err(|e| malformed(&r.name, e))?);
        }
    }
    Ok(bundle)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path.file_name().ok_or_else(|| Error::usage(format!("{path:?} has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save_weights(bundle: &ModelBundle, path: &Path) -> Result<()> {
    write_atomic(path, &encode_bundle(bundle)?)
}

pub fn load_weights(path: &Path) -> Result<ModelBundle> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes)
}

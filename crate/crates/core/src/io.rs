//! On-disk formats.
//!
//! **Tensor file** (little-endian): magic `VSHT`, dtype code `u8`
//! (1 = f32, 2 = f64, 3 = u8), rank `u32`, `rank` dims as `u64`, raw data.
//! A JSON sidecar `<file>.json` carries free-form metadata.
//!
//! **Container** (little-endian): magic `VSHC`, version `u32`, manifest
//! length `u64`, the UTF-8 JSON [`Manifest`], then the payload. Array
//! offsets are relative to the start of the payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::mask::{MaskKind, Region, SamplingMask};
use crate::mri::{CoilSensitivities, ComplexImage, KSpace};
use crate::solver::{Measurement, SolverConfig, VSharp};
use crate::tensor::{DType, Real, Tensor};

const TENSOR_MAGIC: &[u8; 4] = b"VSHT";
const CONTAINER_MAGIC: &[u8; 4] = b"VSHC";
pub const CONTAINER_VERSION: u32 = 1;

/// Raw array of any supported element type.
#[derive(Clone, Debug, PartialEq)]
pub struct RawArray {
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Little-endian element bytes.
    pub bytes: Vec<u8>,
}

impl RawArray {
    pub fn from_tensor<R: Real>(t: &Tensor<R>) -> Self {
        let mut bytes = Vec::with_capacity(t.len() * R::DTYPE.size());
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
        Self {
            dtype: R::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        }
    }

    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape("RawArray::from_u8", shape, data.len()));
        }
        Ok(Self {
            dtype: DType::U8,
            shape,
            bytes: data,
        })
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self) -> Result<()> {
        let want = byte_len(&self.shape, self.dtype);
        if want != Some(self.bytes.len()) {
            return Err(Error::Format(format!(
                "array of shape {:?} and dtype {:?} needs {want:?} bytes, found {}",
                self.shape,
                self.dtype,
                self.bytes.len()
            )));
        }
        Ok(())
    }

    /// Convert to a real tensor of element type `R`.
    pub fn to_tensor<R: Real>(&self) -> Result<Tensor<R>> {
        self.check()?;
        let data = match self.dtype {
            DType::F32 => self.bytes.chunks_exact(4).map(|b| R::of(f32::read_le(b) as f64)).collect(),
            DType::F64 => self.bytes.chunks_exact(8).map(|b| R::of(f64::read_le(b))).collect(),
            DType::U8 => self.bytes.iter().map(|&b| R::of(b as f64)).collect(),
        };
        Tensor::new(self.shape.clone(), data)
    }
}

/// Byte size of an array, `None` on overflow (shapes come from untrusted
/// headers).
fn byte_len(shape: &[usize], dtype: DType) -> Option<usize> {
    shape.iter().try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
}

/// Path of the JSON sidecar of a tensor file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_tensor(a: &RawArray) -> Result<Vec<u8>> {
    a.check()?;
    let mut out = Vec::with_capacity(9 + 8 * a.shape.len() + a.bytes.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(a.dtype.code());
    out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
    for &d in &a.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&a.bytes);
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<RawArray> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != TENSOR_MAGIC {
        return Err(Error::Format("not a tensor file (bad magic)".into()));
    }
    let code = r.take(1)?[0];
    let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("unknown dtype code {code}")))?;
    let rank = r.u32()? as usize;
    let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n = byte_len(&shape, dtype).ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let bytes = r.take(n)?.to_vec();
    if !r.rest().is_empty() {
        return Err(Error::Format("trailing bytes after tensor data".into()));
    }
    Ok(RawArray { dtype, shape, bytes })
}

/// Write a tensor file and its sidecar.
pub fn write_tensor(path: &Path, a: &RawArray, meta: &Value) -> Result<()> {
    fs::write(path, encode_tensor(a)?)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

/// Read a tensor file and its sidecar (`Value::Null` when absent).
pub fn read_tensor(path: &Path) -> Result<(RawArray, Value)> {
    let a = decode_tensor(&fs::read(path)?)?;
    let side = sidecar_path(path);
    let meta = if side.exists() {
        serde_json::from_slice(&fs::read(side)?)?
    } else {
        Value::Null
    };
    Ok((a, meta))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endianness {
    Little,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
    pub endianness: Endianness,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub arrays: Vec<ManifestEntry>,
    #[serde(default)]
    pub meta: Value,
}

impl Manifest {
    /// Entries must have unique names, sizes matching their shapes and
    /// non-overlapping ranges inside a payload of `payload_len` bytes.
    pub fn validate(&self, payload_len: u64) -> Result<()> {
        let mut ranges: Vec<(u64, u64, &str)> = Vec::new();
        for e in &self.arrays {
            let want = byte_len(&e.shape, e.dtype).map(|n| n as u64);
            if want != Some(e.nbytes) {
                return Err(Error::Format(format!("{}: shape {:?} needs {want:?} bytes, manifest says {}", e.name, e.shape, e.nbytes)));
            }
            let end = e.offset.checked_add(e.nbytes).ok_or_else(|| Error::Format(format!("{}: offset overflow", e.name)))?;
            if end > payload_len {
                return Err(Error::Format(format!("{}: range ends at {end}, payload has {payload_len} bytes", e.name)));
            }
            if self.arrays.iter().filter(|o| o.name == e.name).count() > 1 {
                return Err(Error::Format(format!("duplicate array name {}", e.name)));
            }
            ranges.push((e.offset, end, &e.name));
        }
        ranges.sort();
        for w in ranges.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Format(format!("arrays {} and {} overlap", w[0].2, w[1].2)));
            }
        }
        Ok(())
    }
}

/// Named arrays plus JSON metadata, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub arrays: Vec<(String, RawArray)>,
    pub meta: Value,
}

impl Container {
    pub fn new(meta: Value) -> Self {
        Self { arrays: Vec::new(), meta }
    }

    pub fn push(&mut self, name: impl Into<String>, a: RawArray) {
        self.arrays.push((name.into(), a));
    }

    pub fn push_tensor<R: Real>(&mut self, name: impl Into<String>, t: &Tensor<R>) {
        self.push(name, RawArray::from_tensor(t));
    }

    pub fn get(&self, name: &str) -> Option<&RawArray> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn tensor<R: Real>(&self, name: &str) -> Result<Tensor<R>> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("container has no array named {name:?}")))?
            .to_tensor()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut manifest = Manifest {
            arrays: Vec::new(),
            meta: self.meta.clone(),
        };
        let mut payload = Vec::new();
        for (name, a) in &self.arrays {
            a.check()?;
            manifest.arrays.push(ManifestEntry {
                name: name.clone(),
                dtype: a.dtype,
                shape: a.shape.clone(),
                offset: payload.len() as u64,
                nbytes: a.bytes.len() as u64,
                endianness: Endianness::Little,
            });
            payload.extend_from_slice(&a.bytes);
        }
        manifest.validate(payload.len() as u64)?;
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CONTAINER_MAGIC {
            return Err(Error::Format("not a container (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let len = r.u64()? as usize;
        let manifest: Manifest = serde_json::from_slice(r.take(len)?)?;
        let payload = r.rest();
        manifest.validate(payload.len() as u64)?;
        let arrays = manifest
            .arrays
            .iter()
            .map(|e| {
                let bytes = payload[e.offset as usize..(e.offset + e.nbytes) as usize].to_vec();
                (
                    e.name.clone(),
                    RawArray {
                        dtype: e.dtype,
                        shape: e.shape.clone(),
                        bytes,
                    },
                )
            })
            .collect();
        Ok(Self {
            arrays,
            meta: manifest.meta,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("unexpected end of data: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

/// Save a real `[H, W]` image as 8-bit grayscale PNG, scaled so that
/// `white` maps to 255 (the image maximum when `None`).
pub fn save_png<R: Real>(path: &Path, img: &Tensor<R>, white: Option<f64>) -> Result<()> {
    let &[h, w] = img.shape() else {
        return Err(Error::shape("save_png", "[H, W]", img.shape()));
    };
    let top = white.unwrap_or_else(|| img.max().f64());
    let scale = if top > 0.0 { 255.0 / top } else { 0.0 };
    let pixels = img.data().iter().map(|v| (v.f64() * scale).round().clamp(0.0, 255.0) as u8).collect();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer size matches");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Save a binary mask as a black/white PNG.
pub fn save_mask_png(path: &Path, mask: &SamplingMask) -> Result<()> {
    save_png(path, &mask.to_tensor::<f32>(), Some(1.0))
}

/// Save the trainable state of a solver with its configuration.
pub fn save_checkpoint<R: Real>(path: &Path, model: &VSharp<R>, extra: Value) -> Result<()> {
    let mut c = Container::new(serde_json::json!({
        "kind": "checkpoint",
        "config": model.config,
        "extra": extra,
    }));
    for p in model.store.iter() {
        c.push_tensor(p.name.clone(), &p.value);
    }
    c.write(path)
}

/// Rebuild a solver from a checkpoint. Parameters are matched by name and
/// must have the layout implied by the stored configuration.
pub fn load_checkpoint<R: Real>(path: &Path) -> Result<(VSharp<R>, Value)> {
    let c = Container::read(path)?;
    let config: SolverConfig = serde_json::from_value(
        c.meta
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Format("checkpoint has no config".into()))?,
    )?;
    let mut model = VSharp::new(config)?;
    let values = model
        .store
        .iter()
        .map(|p| c.tensor::<R>(&p.name))
        .collect::<Result<Vec<_>>>()?;
    if c.arrays.len() != values.len() {
        return Err(Error::Format(format!("checkpoint has {} arrays, model expects {}", c.arrays.len(), values.len())));
    }
    model.store.load_values(values)?;
    let extra = c.meta.get("extra").cloned().unwrap_or(Value::Null);
    Ok((model, extra))
}

/// One acquisition as stored on disk. Arrays: `y_tilde` `[nc, 2, H, W]`,
/// `mask` (u8 `[H, W]`), and optionally `maps` and `x_gt` `[2, H, W]`.
#[derive(Clone, Debug)]
pub struct Sample<R: Real> {
    pub measurement: Measurement<R>,
    pub x_gt: Option<ComplexImage<R>>,
}

pub fn sample_container<R: Real>(s: &Sample<R>) -> Container {
    let m = &s.measurement;
    let mut c = Container::new(serde_json::json!({
        "kind": "sample",
        "mask": mask_meta(&m.mask),
    }));
    c.push_tensor("y_tilde", m.y_tilde.tensor());
    c.push("mask", mask_array(&m.mask));
    if let Some(maps) = &m.maps {
        c.push_tensor("maps", maps.tensor());
    }
    if let Some(x) = &s.x_gt {
        c.push_tensor("x_gt", x.tensor());
    }
    c
}

pub fn mask_array(mask: &SamplingMask) -> RawArray {
    RawArray {
        dtype: DType::U8,
        shape: vec![mask.height, mask.width],
        bytes: mask.grid().to_vec(),
    }
}

pub fn mask_from_array(a: &RawArray) -> Result<SamplingMask> {
    let &[h, w] = a.shape.as_slice() else {
        return Err(Error::shape("mask_from_array", "[H, W]", &a.shape));
    };
    let t = a.to_tensor::<f64>()?;
    SamplingMask::from_grid(h, w, t.data().iter().map(|&v| u8::from(v != 0.0)).collect())
}

#[derive(Serialize, Deserialize)]
struct MaskInfo {
    kind: MaskKind,
    acs: Region,
    acs_fraction: f64,
    requested_accel: f64,
    seed: u64,
}

/// Mask bookkeeping without the grid itself.
pub fn mask_meta(m: &SamplingMask) -> Value {
    serde_json::to_value(MaskInfo {
        kind: m.kind,
        acs: m.acs,
        acs_fraction: m.acs_fraction,
        requested_accel: m.requested_accel,
        seed: m.seed,
    })
    .expect("mask metadata serializes")
}

/// Restore bookkeeping written by [`mask_meta`] onto a mask read from a grid.
pub fn apply_mask_meta(mask: &mut SamplingMask, meta: &Value) -> Result<()> {
    let info: MaskInfo = serde_json::from_value(meta.clone())?;
    let r = info.acs;
    let sampled = r.row1 <= mask.height
        && r.col1 <= mask.width
        && (r.row0..r.row1).all(|i| (r.col0..r.col1).all(|j| mask.get(i, j)));
    if !sampled {
        return Err(Error::Format("stored ACS region is not fully sampled".into()));
    }
    mask.kind = info.kind;
    mask.acs = info.acs;
    mask.acs_fraction = info.acs_fraction;
    mask.requested_accel = info.requested_accel;
    mask.seed = info.seed;
    Ok(())
}

/// Write a mask as a u8 tensor file with its bookkeeping in the sidecar.
pub fn write_mask(path: &Path, m: &SamplingMask) -> Result<()> {
    write_tensor(path, &mask_array(m), &mask_meta(m))
}

pub fn read_mask(path: &Path) -> Result<SamplingMask> {
    let (raw, meta) = read_tensor(path)?;
    let mut m = mask_from_array(&raw)?;
    if !meta.is_null() {
        apply_mask_meta(&mut m, &meta)?;
    }
    Ok(m)
}

pub fn sample_from_container<R: Real>(c: &Container) -> Result<Sample<R>> {
    let mut mask = mask_from_array(
        c.get("mask")
            .ok_or_else(|| Error::Format("sample has no mask array".into()))?,
    )?;
    if let Some(info) = c.meta.get("mask") {
        apply_mask_meta(&mut mask, info)?;
    }
    let y = KSpace::new(c.tensor("y_tilde")?, true)?.masked(&mask.to_tensor())?;
    let maps = match c.get("maps") {
        Some(a) => Some(CoilSensitivities::new(a.to_tensor()?)?),
        None => None,
    };
    let x_gt = match c.get("x_gt") {
        Some(a) => Some(ComplexImage::new(a.to_tensor()?)?),
        None => None,
    };
    Ok(Sample {
        measurement: Measurement { y_tilde: y, mask, maps },
        x_gt,
    })
}

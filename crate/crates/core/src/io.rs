//! Binary containers and image dumps.
//!
//! GFS1 holds a `T × C × H × W` frame stack:
//!
//! ```text
//! "GFS1"  u16 version  u32 T  u32 C  u32 H  u32 W
//! C × (u32 byte length, UTF-8 channel name)
//! u8 dtype tag (0 = f32, 1 = f64)
//! payload, little-endian, frame-major then channel then row-major
//! ```
//!
//! GCK1 holds named parameter tensors:
//!
//! ```text
//! "GCK1"  u16 version  u32 count
//! count × (u32 length, UTF-8 name, 4 × u32 dims, u8 dtype tag, payload)
//! ```
//!
//! Every integer is little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::{Dtype, ParamSet, Real, Tensor4};
use crate::error::{Error, Result};
use crate::grid::{FrameSequence, ScalarField};

const GFS1_MAGIC: &[u8; 4] = b"GFS1";
const GCK1_MAGIC: &[u8; 4] = b"GCK1";
const VERSION: u16 = 1;

/// Decoded GFS1 contents. Values are held as `f64`; an `f32` file widens
/// losslessly and narrows back to the same bits on write.
#[derive(Debug, Clone, PartialEq)]
pub struct Gfs1 {
    pub dims: [usize; 4],
    pub channels: Vec<String>,
    pub dtype: Dtype,
    pub data: Vec<f64>,
}

impl Gfs1 {
    pub fn from_sequence(seq: &FrameSequence, dtype: Dtype) -> Self {
        let (h, w) = seq.dims().unwrap_or((0, 0));
        let mut data = Vec::with_capacity(seq.len() * seq.channels() * h * w);
        for frame in seq.frames() {
            for field in frame {
                data.extend_from_slice(field.values());
            }
        }
        Self {
            dims: [seq.len(), seq.channels(), h, w],
            channels: seq.channel_labels().to_vec(),
            dtype,
            data,
        }
    }

    /// Rebuilds a sequence with timestamps `0..T`.
    pub fn to_sequence(&self) -> Result<FrameSequence> {
        let [t, c, h, w] = self.dims;
        let plane = h * w;
        let frames = (0..t)
            .map(|ti| {
                (0..c)
                    .map(|ci| {
                        let off = (ti * c + ci) * plane;
                        ScalarField::new(h, w, self.data[off..off + plane].to_vec())
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        FrameSequence::new(frames, (0..t as i64).collect(), self.channels.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.data.len() * self.dtype.size());
        out.extend_from_slice(GFS1_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for name in &self.channels {
            put_str(&mut out, name);
        }
        out.push(self.dtype.tag());
        put_values(&mut out, &self.data, self.dtype);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(GFS1_MAGIC)?;
        r.version()?;
        let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let channels = (0..dims[1]).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let dtype = r.dtype()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Format("GFS1 dims overflow".into()))?;
        let data = r.values(n, dtype)?;
        r.finish("GFS1")?;
        Ok(Self {
            dims,
            channels,
            dtype,
            data,
        })
    }
}

pub fn write_gfs1(path: &Path, seq: &FrameSequence, dtype: Dtype) -> Result<()> {
    fs::write(path, Gfs1::from_sequence(seq, dtype).to_bytes())?;
    Ok(())
}

pub fn read_gfs1(path: &Path) -> Result<FrameSequence> {
    Gfs1::from_bytes(&fs::read(path)?)?.to_sequence()
}

pub fn checkpoint_bytes<T: Real>(params: &ParamSet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(GCK1_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        put_str(&mut out, name);
        for d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(T::DTYPE.tag());
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

/// Checkpoint bytes with every tensor stored at `dtype`.
pub fn checkpoint_bytes_as(params: &ParamSet<f64>, dtype: Dtype) -> Vec<u8> {
    match dtype {
        Dtype::F32 => checkpoint_bytes(&params.cast::<f32>()),
        Dtype::F64 => checkpoint_bytes(params),
    }
}

/// Parses a checkpoint, converting every tensor to `T`.
pub fn checkpoint_from_bytes<T: Real>(bytes: &[u8]) -> Result<ParamSet<T>> {
    let mut r = Reader::new(bytes);
    r.magic(GCK1_MAGIC)?;
    r.version()?;
    let count = r.u32()?;
    let mut set = ParamSet::new();
    for _ in 0..count {
        let name = r.string()?;
        let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let dtype = r.dtype()?;
        let values = r.values(dims.iter().product(), dtype)?;
        set.insert(&name, Tensor4::from_f64(dims, &values)?);
    }
    r.finish("GCK1")?;
    Ok(set)
}

pub fn write_checkpoint<T: Real>(path: &Path, params: &ParamSet<T>) -> Result<()> {
    fs::write(path, checkpoint_bytes(params))?;
    Ok(())
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<ParamSet<T>> {
    checkpoint_from_bytes(&fs::read(path)?)
}

/// 16-hex-digit FNV-1a digest, used as a checkpoint id.
pub fn digest(bytes: &[u8]) -> String {
    let h = bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    });
    format!("{h:016x}")
}

/// Binary 8-bit PGM of `field`, mapping `[lo, hi]` linearly onto `0..=255`.
pub fn write_pgm(mut out: impl Write, field: &ScalarField, lo: f64, hi: f64) -> Result<()> {
    let (h, w) = field.dims();
    write!(out, "P5\n{w} {h}\n255\n")?;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels: Vec<u8> = field
        .values()
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&pixels)?;
    Ok(())
}

/// Reads a binary 8-bit PGM as raw grey levels `(h, w, pixels)`.
pub fn read_pgm(mut input: impl Read) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::Format("expected an 8-bit P5 PGM".into()));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM size `{s}`")));
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let pixels = bytes.get(pos + 1..).unwrap_or_default().to_vec();
    if pixels.len() != w * h {
        return Err(Error::Format(format!("PGM payload has {} bytes, expected {}", pixels.len(), w * h)));
    }
    Ok((h, w, pixels))
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_values(out: &mut Vec<u8>, data: &[f64], dtype: Dtype) {
    match dtype {
        Dtype::F32 => data.iter().for_each(|&v| (v as f32).write_le(out)),
        Dtype::F64 => data.iter().for_each(|&v| v.write_le(out)),
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
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != want {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = u16::from_le_bytes(self.take(2)?.try_into().unwrap());
        if v != VERSION {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("name is not UTF-8".into()))
    }

    fn dtype(&mut self) -> Result<Dtype> {
        let tag = self.take(1)?[0];
        Dtype::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown dtype tag {tag}")))
    }

    fn values(&mut self, n: usize, dtype: Dtype) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::Format("payload size overflow".into()))?;
        let raw = self.take(len)?;
        Ok(match dtype {
            Dtype::F32 => raw.chunks_exact(4).map(|b| f64::from(f32::read_le(b))).collect(),
            Dtype::F64 => raw.chunks_exact(8).map(f64::read_le).collect(),
        })
    }

    fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{what}: {} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

//! Byte layout of a packed model. All integers and reals little-endian.
//!
//! ```text
//! "SLTG"  u8 version
//! u32 spec_len, spec_len bytes of `section.key = value` text
//! u32 weight sets, each: u64 seed, u32 rows, u32 cols, u8 init, u32 fan_in, f64 k1
//! u32 score sets, each: u32 rows, u32 cols, u8 N, N × f64 sparsity,
//!     N byte-aligned LSB-first bitmaps; bitmap 1 covers every entry,
//!     bitmap n+1 covers only the survivors of bitmap n
//! u32 norms, each: u32 width, f32 eps, f32 momentum,
//!     width × f32 for gamma, beta, running mean, running var
//! ```

use super::{PackedMask, PackedModel, PackedWeightSet};
use crate::config::{format_kv, parse_kv, spec_from_kv, spec_to_kv};
use crate::error::{Error, Result};
use crate::model::BatchNorm;
use crate::rand_init::{InitMethod, InitSpec};
use crate::supermask::CoatMaskSum;

pub const MAGIC: &[u8; 4] = b"SLTG";
pub const FORMAT_VERSION: u8 = 1;

fn pack_bits(bits: impl Iterator<Item = bool>, out: &mut Vec<u8>) {
    let mut byte = 0u8;
    let mut used = 0;
    for b in bits {
        byte |= (b as u8) << used;
        used += 1;
        if used == 8 {
            out.push(byte);
            byte = 0;
            used = 0;
        }
    }
    if used > 0 {
        out.push(byte);
    }
}

/// Nested coat bitmaps of `counts`, each padded to a whole byte.
pub fn encode_nested(counts: &CoatMaskSum) -> Vec<u8> {
    let mut out = Vec::new();
    let c = counts.counts();
    pack_bits(c.iter().map(|&v| v > 0), &mut out);
    for n in 1..counts.coats() {
        pack_bits(c.iter().filter(|&&v| v as usize >= n).map(|&v| v as usize > n), &mut out);
    }
    out
}

/// Inverse of [`encode_nested`]; returns the counts and the bytes consumed.
pub fn decode_nested(rows: usize, cols: usize, coats: usize, data: &[u8]) -> Result<(CoatMaskSum, usize)> {
    let len = rows * cols;
    let mut counts = vec![0u8; len];
    let mut pos = 0;
    let mut covered: Vec<usize> = (0..len).collect();
    for n in 0..coats {
        let bytes = covered.len().div_ceil(8);
        let Some(chunk) = data.get(pos..pos + bytes) else {
            return Err(Error::Format { offset: data.len(), msg: format!("coat {} bitmap truncated", n + 1) });
        };
        let mut next = Vec::new();
        for (j, &i) in covered.iter().enumerate() {
            if chunk[j / 8] >> (j % 8) & 1 == 1 {
                counts[i] += 1;
                next.push(i);
            }
        }
        pos += bytes;
        covered = next;
    }
    let mask = CoatMaskSum::new(rows, cols, coats, counts).map_err(|e| Error::Format { offset: 0, msg: e.to_string() })?;
    Ok((mask, pos))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Input(format!("{v} does not fit the u32 field")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Format { offset: self.pos, msg: msg.into() })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.buf.get(self.pos..self.pos.saturating_add(n)) {
            Some(s) => {
                self.pos += n;
                Ok(s)
            }
            None => self.fail(format!("truncated while reading {what}")),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("slice has length N"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array(what)?) as usize)
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        (0..n).map(|_| self.f32(what)).collect()
    }
}

impl PackedModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u8(FORMAT_VERSION);
        let spec = format_kv(&spec_to_kv(&self.spec));
        w.u32(spec.len())?;
        w.0.extend_from_slice(spec.as_bytes());
        w.u32(self.weight_sets.len())?;
        for ws in &self.weight_sets {
            w.u64(ws.init.seed);
            w.u32(ws.rows)?;
            w.u32(ws.cols)?;
            w.u8(ws.init.method.tag());
            w.u32(ws.init.fan_in)?;
            w.f64(ws.init.base_sparsity);
        }
        w.u32(self.masks.len())?;
        for m in &self.masks {
            w.u32(m.counts.rows())?;
            w.u32(m.counts.cols())?;
            let n = u8::try_from(m.sparsities.len()).map_err(|_| Error::Input("more than 255 coats".into()))?;
            w.u8(n);
            m.sparsities.iter().for_each(|&k| w.f64(k));
            w.0.extend(encode_nested(&m.counts));
        }
        w.u32(self.norms.len())?;
        for bn in &self.norms {
            w.u32(bn.width())?;
            w.f32(bn.eps);
            w.f32(bn.momentum);
            for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                v.iter().for_each(|&x| w.f32(x));
            }
        }
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            r.pos = 0;
            return r.fail("bad magic, not a packed model");
        }
        let version = r.u8("version")?;
        if version != FORMAT_VERSION {
            r.pos -= 1;
            return r.fail(format!("unsupported version {version}"));
        }
        let spec_len = r.u32("spec length")?;
        let spec_at = r.pos;
        let text = std::str::from_utf8(r.take(spec_len, "spec text")?)
            .map_err(|e| Error::Format { offset: spec_at, msg: e.to_string() })?;
        let spec = parse_kv(text)
            .and_then(|kv| spec_from_kv(&kv))
            .map_err(|e| Error::Format { offset: spec_at, msg: e.to_string() })?;

        let mut weight_sets = Vec::new();
        for _ in 0..r.u32("weight set count")? {
            let seed = r.u64("seed")?;
            let rows = r.u32("rows")?;
            let cols = r.u32("cols")?;
            let tag = r.u8("init method")?;
            let Some(method) = InitMethod::from_tag(tag) else {
                r.pos -= 1;
                return r.fail(format!("unknown init method {tag}"));
            };
            let fan_in = r.u32("fan_in")?;
            let base_sparsity = r.f64("k1")?;
            let init = InitSpec { method, fan_in, base_sparsity, seed };
            weight_sets.push(PackedWeightSet { init, rows, cols });
        }

        let mut masks = Vec::new();
        for _ in 0..r.u32("score set count")? {
            let rows = r.u32("rows")?;
            let cols = r.u32("cols")?;
            let n = r.u8("coat count")? as usize;
            let sparsities = (0..n).map(|_| r.f64("sparsity")).collect::<Result<Vec<_>>>()?;
            let start = r.pos;
            let (counts, used) = decode_nested(rows, cols, n, &bytes[start..]).map_err(|e| match e {
                Error::Format { offset, msg } => Error::Format { offset: start + offset, msg },
                other => other,
            })?;
            r.pos += used;
            masks.push(PackedMask { sparsities, counts });
        }

        let mut norms = Vec::new();
        for _ in 0..r.u32("norm count")? {
            let width = r.u32("norm width")?;
            let mut bn = BatchNorm::<f32>::new(width);
            bn.eps = r.f32("eps")?;
            bn.momentum = r.f32("momentum")?;
            bn.gamma = r.f32s(width, "gamma")?;
            bn.beta = r.f32s(width, "beta")?;
            bn.running_mean = r.f32s(width, "running mean")?;
            bn.running_var = r.f32s(width, "running var")?;
            norms.push(bn);
        }
        if r.pos != bytes.len() {
            return r.fail(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        let packed = PackedModel { spec, weight_sets, masks, norms };
        packed.validate().map_err(|e| Error::Format { offset: bytes.len(), msg: e.to_string() })?;
        Ok(packed)
    }
}

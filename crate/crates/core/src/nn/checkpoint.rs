//! Flat binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "AFCKPT\0\0"
//! version      u32       currently 1
//! count        u32       number of parameters
//! manifest     count entries of
//!                name_len u32, name (UTF-8), ndim u32, dims u64 × ndim,
//!                offset u64 (byte offset into the payload), len u64 (elements)
//! payload      f64 little-endian values, parameters back to back
//! ```

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::layers::Parameter;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AFCKPT\0\0";
pub const VERSION: u32 = 1;

pub fn encode<'a>(params: impl IntoIterator<Item = &'a Parameter>) -> Vec<u8> {
    let params: Vec<&Parameter> = params.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.write_u32::<LittleEndian>(params.len() as u32).unwrap();
    let mut offset = 0u64;
    for p in &params {
        let name = p.name().as_bytes();
        out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
        out.extend_from_slice(name);
        let shape = p.value.shape();
        out.write_u32::<LittleEndian>(shape.len() as u32).unwrap();
        for &d in shape {
            out.write_u64::<LittleEndian>(d as u64).unwrap();
        }
        out.write_u64::<LittleEndian>(offset).unwrap();
        out.write_u64::<LittleEndian>(p.value.len() as u64).unwrap();
        offset += 8 * p.value.len() as u64;
    }
    for p in &params {
        for &v in p.value.data() {
            out.write_f64::<LittleEndian>(v).unwrap();
        }
    }
    out
}

fn truncated(cur: &Cursor<&[u8]>, what: &str) -> Error {
    Error::Format {
        offset: cur.position(),
        message: format!("truncated checkpoint while reading {what}"),
    }
}

/// Parses a checkpoint into `(name, tensor)` pairs in stored order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)
        .map_err(|_| truncated(&cur, "magic"))?;
    if &magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not an angleforge checkpoint (bad magic)".into(),
        });
    }
    let version = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| truncated(&cur, "version"))?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 8,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let count = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| truncated(&cur, "count"))? as usize;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| truncated(&cur, "name length"))? as usize;
        let mut name = vec![0u8; name_len.min(bytes.len())];
        cur.read_exact(&mut name)
            .map_err(|_| truncated(&cur, "name"))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format {
            offset: cur.position(),
            message: "parameter name is not UTF-8".into(),
        })?;
        let ndim = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| truncated(&cur, "rank"))? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            shape.push(
                cur.read_u64::<LittleEndian>()
                    .map_err(|_| truncated(&cur, "shape"))? as usize,
            );
        }
        let offset = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| truncated(&cur, "offset"))?;
        let len = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| truncated(&cur, "length"))? as usize;
        manifest.push((name, shape, offset, len));
    }
    let payload_start = cur.position() as usize;
    let payload = &bytes[payload_start..];
    let mut out = Vec::with_capacity(manifest.len());
    for (name, shape, offset, len) in manifest {
        let start = offset as usize;
        let end = start.saturating_add(len.saturating_mul(8));
        if end > payload.len() {
            return Err(Error::Format {
                offset: (payload_start + start) as u64,
                message: format!("payload for {name} extends past end of file"),
            });
        }
        let mut values = vec![0.0; len];
        let mut pc = Cursor::new(&payload[start..end]);
        pc.read_f64_into::<LittleEndian>(&mut values)
            .expect("length checked");
        let t = Tensor::new(shape, values).map_err(|_| Error::Format {
            offset: (payload_start + start) as u64,
            message: format!("shape of {name} does not match its element count"),
        })?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save<'a>(path: &Path, params: impl IntoIterator<Item = &'a Parameter>) -> Result<()> {
    let bytes = encode(params);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode(&fs::read(path)?)
}

/// Overwrites each parameter with the stored tensor of the same name.
pub fn restore(stored: &[(String, Tensor)], params: &mut [&mut Parameter]) -> Result<()> {
    for p in params.iter_mut() {
        let Some((_, t)) = stored.iter().find(|(n, _)| n == p.name()) else {
            return Err(Error::Consistency(format!(
                "checkpoint has no parameter {}",
                p.name()
            )));
        };
        if t.shape() != p.value.shape() {
            return Err(Error::Dimension {
                op: "checkpoint restore",
                left: t.shape().to_vec(),
                right: p.value.shape().to_vec(),
            });
        }
        p.value = t.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Vec<Parameter> {
        vec![
            Parameter::new(
                "a.weight",
                Tensor::matrix(2, 3, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5, 1e300, -7.25])
                    .unwrap(),
            ),
            Parameter::new("a.bias", Tensor::vector(vec![0.1, 0.2, 0.3])),
            Parameter::new("s", Tensor::scalar(std::f64::consts::PI)),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ps = params();
        let bytes = encode(&ps);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.len(), 3);
        for (p, (n, t)) in ps.iter().zip(&back) {
            assert_eq!(p.name(), n);
            assert_eq!(p.value.shape(), t.shape());
            let a: Vec<u64> = p.value.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(
            encode(
                back.iter()
                    .map(|(n, t)| Parameter::new(n.clone(), t.clone()))
                    .collect::<Vec<_>>()
                    .iter()
            ),
            bytes
        );
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = encode(&params());
        assert!(matches!(decode(&bytes[..20]), Err(Error::Format { .. })));
        let cut = bytes.len() - 4;
        assert!(matches!(decode(&bytes[..cut]), Err(Error::Format { .. })));
        bytes[0] = b'X';
        assert!(matches!(
            decode(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn restore_checks_shapes() {
        let stored = decode(&encode(&params())).unwrap();
        let mut p = Parameter::new("a.bias", Tensor::zeros(&[4]));
        assert!(matches!(
            restore(&stored, &mut [&mut p]),
            Err(Error::Dimension { .. })
        ));
        let mut q = Parameter::new("a.bias", Tensor::zeros(&[3]));
        restore(&stored, &mut [&mut q]).unwrap();
        assert_eq!(q.value.data(), &[0.1, 0.2, 0.3]);
    }
}

//! Binary record container used for model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TOONCKPT"  u32 version  u32 record_count
//! per record: u32 name_len, name (utf8), u8 dtype, u32 rank, rank x u64 dims, payload
//! ```
//!
//! dtype codes: 1 = f64, 2 = f32, 3 = u64, 4 = utf8 text (rank 1, dim = byte length).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TOONCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U64(Vec<u64>),
    Text(String),
}

impl Payload {
    fn code(&self) -> u8 {
        match self {
            Payload::F64(_) => 1,
            Payload::F32(_) => 2,
            Payload::U64(_) => 3,
            Payload::Text(_) => 4,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F64(v) => v.len(),
            Payload::F32(v) => v.len(),
            Payload::U64(v) => v.len(),
            Payload::Text(s) => s.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub payload: Payload,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, dims: Vec<usize>, payload: Payload) {
        debug_assert_eq!(dims.iter().product::<usize>(), payload.len());
        self.records.retain(|r| r.name != name);
        self.records.push(Record {
            name: name.to_string(),
            dims,
            payload,
        });
    }

    pub fn put_tensor(&mut self, name: &str, t: &Tensor) {
        self.push(name, t.shape().to_vec(), Payload::F64(t.data().to_vec()));
    }

    pub fn put_u64s(&mut self, name: &str, values: &[u64]) {
        self.push(name, vec![values.len()], Payload::U64(values.to_vec()));
    }

    pub fn put_text(&mut self, name: &str, text: &str) {
        self.push(name, vec![text.len()], Payload::Text(text.to_string()));
    }

    pub fn get(&self, name: &str) -> Result<&Record> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::Schema(format!("missing record '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.records.iter().any(|r| r.name == name)
    }

    /// Reads an f64 or f32 record as a tensor. A rank-0 record is a scalar.
    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let r = self.get(name)?;
        let data = match &r.payload {
            Payload::F64(v) => v.clone(),
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            _ => return Err(Error::Schema(format!("record '{name}' is not floating point"))),
        };
        if r.dims.is_empty() {
            return Ok(Tensor::scalar(data[0]));
        }
        Tensor::new(&r.dims, data).map_err(|e| Error::Schema(format!("record '{name}': {e}")))
    }

    /// Like [`Checkpoint::tensor`] but also checks the shape.
    pub fn tensor_shaped(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self.tensor(name)?;
        if t.shape() != shape {
            return Err(Error::Schema(format!(
                "record '{name}' has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    pub fn u64s(&self, name: &str) -> Result<Vec<u64>> {
        match &self.get(name)?.payload {
            Payload::U64(v) => Ok(v.clone()),
            _ => Err(Error::Schema(format!("record '{name}' is not u64"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<String> {
        match &self.get(name)?.payload {
            Payload::Text(s) => Ok(s.clone()),
            _ => Err(Error::Schema(format!("record '{name}' is not text"))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.payload.code());
            out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
            for &d in &r.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &r.payload {
                Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::Text(s) => out.extend_from_slice(s.as_bytes()),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad checkpoint magic".into(),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 8,
                msg: format!("unsupported checkpoint version {version}"),
            });
        }
        let count = r.u32("record count")?;
        let mut records = Vec::new();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let at = r.pos;
            let name = String::from_utf8(r.take(name_len, "name")?.to_vec()).map_err(|_| Error::Format {
                offset: at,
                msg: "record name is not utf-8".into(),
            })?;
            let code_at = r.pos;
            let code = r.take(1, "dtype")?[0];
            let rank = r.u32("rank")? as usize;
            let mut dims = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                dims.push(r.u64("dims")? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format {
                    offset: code_at,
                    msg: format!("record '{name}' dims overflow"),
                })?;
            let payload = match code {
                1 => Payload::F64(r.array(n, 8, &name)?.map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
                2 => Payload::F32(r.array(n, 4, &name)?.map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                3 => Payload::U64(r.array(n, 8, &name)?.map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
                4 => {
                    let at = r.pos;
                    Payload::Text(String::from_utf8(r.take(n, &name)?.to_vec()).map_err(|_| Error::Format {
                        offset: at,
                        msg: format!("record '{name}' is not utf-8"),
                    })?)
                }
                other => {
                    return Err(Error::Format {
                        offset: code_at,
                        msg: format!("unknown dtype code {other} in record '{name}'"),
                    })
                }
            };
            records.push(Record { name, dims, payload });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                msg: "trailing bytes after last record".into(),
            });
        }
        Ok(Checkpoint { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated {
                offset: self.bytes.len(),
                msg: format!("checkpoint ends inside {what}"),
            });
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn array(&mut self, n: usize, width: usize, what: &str) -> Result<std::slice::ChunksExact<'a, u8>> {
        let len = n.checked_mul(width).ok_or_else(|| Error::Format {
            offset: self.pos,
            msg: format!("record '{what}' too large"),
        })?;
        Ok(self.take(len, what)?.chunks_exact(width))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.put_tensor("w", &Tensor::from_fn(&[2, 3], |i| i as f64 * -0.1 + 1e-300));
        c.put_tensor("s", &Tensor::scalar(f64::MIN_POSITIVE));
        c.put_u64s("step", &[7, u64::MAX]);
        c.put_text("config", "a=1\nb=two\n");
        c.records.push(Record {
            name: "half".into(),
            dims: vec![2],
            payload: Payload::F32(vec![0.5, -3.25]),
        });
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.encode();
        assert_eq!(&bytes[..8], b"TOONCKPT");
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.tensor("half").unwrap().data(), &[0.5, -3.25]);
        assert_eq!(back.tensor("s").unwrap().shape(), &[] as &[usize]);
    }

    #[test]
    fn every_truncation_is_reported() {
        let bytes = sample().encode();
        for cut in 0..bytes.len() {
            let err = Checkpoint::decode(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Truncated { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn header_and_schema_errors() {
        let mut bytes = sample().encode();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Format { offset: 0, .. })));
        let mut bytes = sample().encode();
        bytes[8] = 9;
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Format { offset: 8, .. })));
        let c = sample();
        match c.tensor("missing") {
            Err(Error::Schema(m)) => assert!(m.contains("missing")),
            other => panic!("{other:?}"),
        }
        assert!(c.tensor_shaped("w", &[3, 2]).is_err());
        assert!(c.tensor("config").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        sample().save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), sample());
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(values in proptest::collection::vec(any::<f64>(), 1..40)) {
            let mut c = Checkpoint::new();
            let n = values.len();
            c.put_tensor("x", &Tensor::new(&[n], values.clone()).unwrap());
            let back = Checkpoint::decode(&c.encode()).unwrap();
            let got = back.tensor("x").unwrap();
            prop_assert!(got.data().iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}

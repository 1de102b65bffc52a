//! Named parameter collections, initialization and the checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! b"NCLP" | u32 version = 1 | per tensor: u32 name_len, name (UTF-8),
//!                                         u32 rows, u32 cols, rows*cols f32
//! ```
//!
//! Tensors are written in name order and read until end of file.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NCLP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named tensors. Names are unique and iteration is in name order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            tensors: BTreeMap::new(),
        }
    }

    /// Adds a tensor; re-registering a name is an error.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Structure(format!("duplicate parameter {name}")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Structure(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.data().len()).sum()
    }

    /// Records the named tensor on `tape`, trainable or as a constant.
    pub fn load(&self, tape: &mut Tape<T>, name: &str, trainable: bool) -> Result<Var> {
        let t = self.get(name)?.clone();
        Ok(if trainable { tape.param(name, t) } else { tape.constant(t) })
    }

    /// Parameters whose names start with `prefix`, with the prefix kept.
    pub fn subset(&self, prefix: &str) -> ParamSet<T> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Renames every `from*` parameter to `to*`; others are dropped.
    pub fn rename_prefix(&self, from: &str, to: &str) -> ParamSet<T> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(from).map(|rest| (format!("{to}{rest}"), v.clone())))
                .collect(),
        }
    }

    /// Adds every tensor of `other`; names must not collide.
    pub fn extend(&mut self, other: ParamSet<T>) -> Result<()> {
        for (k, v) in other.tensors {
            self.insert(k, v)?;
        }
        Ok(())
    }

    /// True when both sets have identical names and shapes.
    pub fn same_structure(&self, other: &ParamSet<T>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        let io = |e| Error::Checkpoint(format!("write failed: {e}"));
        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
        for (name, t) in &self.tensors {
            let len = u32::try_from(name.len()).map_err(|_| Error::Checkpoint("name too long".into()))?;
            w.write_all(&len.to_le_bytes()).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            w.write_all(&(t.rows() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&(t.cols() as u32).to_le_bytes()).map_err(io)?;
            let mut buf = Vec::with_capacity(t.data().len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
            w.write_all(&buf).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut out = ParamSet::new();
        while cur.pos < bytes.len() {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?
                .to_string();
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let raw = cur.take(rows * cols * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            out.insert(name, Tensor::from_vec(rows, cols, data)?)?;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_checkpoint(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(std::io::BufReader::new(f))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Glorot/Xavier uniform initialization in `±sqrt(6 / (rows + cols))`.
pub fn glorot_init<T: Real>(rows: usize, cols: usize, seed: u64) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    glorot_with(rows, cols, &mut rng)
}

pub(crate) fn glorot_with<T: Real>(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Tensor<T>> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!("glorot_init needs positive dims, got {rows}x{cols}")));
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    #[test]
    fn glorot_is_deterministic_and_bounded() {
        let a = glorot_init::<f32>(40, 25, 7).unwrap();
        let b = glorot_init::<f32>(40, 25, 7).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / 65.0).sqrt() as f32;
        assert_eq!(a.data().len(), 1000);
        assert!(a.data().iter().all(|v| v.abs() <= bound));
        assert_ne!(a, glorot_init::<f32>(40, 25, 8).unwrap());
    }

    #[test]
    fn glorot_mean_is_centered() {
        // 10^4 draws from U(-b, b): sigma of the mean is b / sqrt(3 * 10^4).
        let t = glorot_init::<f64>(100, 100, 3).unwrap();
        let bound = (6.0f64 / 200.0).sqrt();
        let mean = t.data().iter().sum::<f64>() / 1e4;
        let sigma = bound / (3.0e4f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} sigma {sigma}");
    }

    #[test]
    fn glorot_rejects_empty_shape() {
        assert!(glorot_init::<f32>(0, 3, 1).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::<f32>::new();
        p.insert("a", Tensor::zeros(1, 1)).unwrap();
        assert!(p.insert("a", Tensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(ParamSet::<f32>::read_checkpoint(&b"NOPE\x01\x00\x00\x00"[..]).is_err());
        assert!(ParamSet::<f32>::read_checkpoint(&b"NCLP\x02\x00\x00\x00"[..]).is_err());
        assert!(ParamSet::<f32>::read_checkpoint(&b"NCLP\x01\x00\x00\x00\x05\x00"[..]).is_err());
    }

    #[test]
    fn checkpoint_header_layout() {
        let mut p = ParamSet::<f32>::new();
        p.insert("w", Tensor::from_vec(1, 2, vec![1.5, -0.25]).unwrap()).unwrap();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        let mut want = b"NCLP".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.push(b'w');
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1.5f32.to_le_bytes());
        want.extend_from_slice(&(-0.25f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(
            entries in proptest::collection::btree_map("[a-z.]{1,12}", (1usize..4, 1usize..4, any::<u64>()), 0..5)
        ) {
            let mut p = ParamSet::<f32>::new();
            for (name, (r, c, seed)) in entries {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let data = (0..r * c).map(|_| f32::from_bits(rng.gen::<u32>() & 0x7f7f_ffff)).collect();
                p.insert(name, Tensor::from_vec(r, c, data).unwrap()).unwrap();
            }
            let mut buf = Vec::new();
            p.write_checkpoint(&mut buf).unwrap();
            let back = ParamSet::<f32>::read_checkpoint(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), p.len());
            for ((ka, va), (kb, vb)) in p.iter().zip(back.iter()) {
                prop_assert_eq!(ka, kb);
                let bits_a: Vec<u32> = va.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u32> = vb.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }
}

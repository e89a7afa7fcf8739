//! `IBT1` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "IBT1" | u32 tensor count | per tensor:
//!     u16 name length, UTF-8 name, u8 dtype (0=f32, 1=f64, 2=i32), u8 rank,
//!     rank x u64 dims, row-major payload
//! ```
//!
//! Tensors keep insertion order so that writing the same container twice
//! yields identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"IBT1";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
}

impl TensorData {
    fn dtype_code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::I32(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f64(name: &str, dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor {
            name: name.to_string(),
            dims,
            data: TensorData::F64(data),
        }
    }

    pub fn i32(name: &str, dims: Vec<usize>, data: Vec<i32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor {
            name: name.to_string(),
            dims,
            data: TensorData::I32(data),
        }
    }

    /// Values widened to f64 regardless of the stored dtype.
    pub fn as_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::I32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn as_i64(&self) -> Result<Vec<i64>> {
        match &self.data {
            TensorData::I32(v) => Ok(v.iter().map(|&x| x as i64).collect()),
            _ => Err(Error::InvalidTensor {
                name: self.name.clone(),
                reason: "expected integer dtype".into(),
            }),
        }
    }

    /// Checks the shape against `expected`, where `None` matches any extent.
    pub fn expect_shape(&self, expected: &[Option<usize>]) -> Result<()> {
        let ok = self.dims.len() == expected.len()
            && self
                .dims
                .iter()
                .zip(expected)
                .all(|(d, e)| e.map_or(true, |e| e == *d));
        if ok {
            Ok(())
        } else {
            let text = expected
                .iter()
                .map(|e| e.map_or_else(|| "*".to_string(), |v| v.to_string()))
                .collect::<Vec<_>>()
                .join("x");
            Err(Error::Shape {
                name: self.name.clone(),
                expected: format!("[{text}]"),
                found: self.dims.clone(),
            })
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    tensors: Vec<Tensor>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tensor, replacing any previous tensor with the same name in place.
    pub fn insert(&mut self, tensor: Tensor) {
        if let Some(slot) = self.tensors.iter_mut().find(|t| t.name == tensor.name) {
            *slot = tensor;
        } else {
            self.tensors.push(tensor);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        let idx = self.tensors.iter().position(|t| t.name == name)?;
        Some(self.tensors.remove(idx))
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            let name = t.name.as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[t.data.dtype_code(), t.dims.len() as u8])?;
            for &d in &t.dims {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            match &t.data {
                TensorData::F32(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                TensorData::F64(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                TensorData::I32(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic = cursor.take(4)?;
        if magic != MAGIC {
            return Err(Error::Container(format!("bad magic {magic:?}")));
        }
        let count = u32::from_le_bytes(cursor.array()?) as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(cursor.array()?) as usize;
            let name = std::str::from_utf8(cursor.take(name_len)?)
                .map_err(|_| Error::Container("tensor name is not UTF-8".into()))?
                .to_string();
            let [dtype, rank] = cursor.array::<2>()?;
            let mut dims = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                dims.push(u64::from_le_bytes(cursor.array()?) as usize);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Container(format!("tensor {name}: dims overflow")))?;
            let data = match dtype {
                0 => TensorData::F32(
                    cursor
                        .take(len.checked_mul(4).ok_or_else(|| overflow(&name))?)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => TensorData::F64(
                    cursor
                        .take(len.checked_mul(8).ok_or_else(|| overflow(&name))?)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                2 => TensorData::I32(
                    cursor
                        .take(len.checked_mul(4).ok_or_else(|| overflow(&name))?)?
                        .chunks_exact(4)
                        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                other => {
                    return Err(Error::Container(format!(
                        "tensor {name}: unknown dtype code {other}"
                    )))
                }
            };
            debug_assert_eq!(data.len(), len);
            tensors.push(Tensor { name, dims, data });
        }
        if cursor.pos != bytes.len() {
            return Err(Error::Container(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - cursor.pos
            )));
        }
        Ok(Container { tensors })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn overflow(name: &str) -> Error {
    Error::Container(format!("tensor {name}: payload size overflow"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Container("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let mut c = Container::new();
        c.insert(Tensor::i32("ab", vec![2], vec![1, -1]));
        let bytes = c.to_bytes();
        let mut expected = b"IBT1".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&[2, 1]);
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1i32.to_le_bytes());
        expected.extend_from_slice(&(-1i32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            Container::from_bytes(b"IBT2\0\0\0\0"),
            Err(Error::Container(_))
        ));
        let mut c = Container::new();
        c.insert(Tensor::f64("x", vec![3], vec![1.0, 2.0, 3.0]));
        let bytes = c.to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Container::from_bytes(&extra).is_err());
    }

    #[test]
    fn shape_check_names_tensor() {
        let t = Tensor::f64("posedirs", vec![2, 3], vec![0.0; 6]);
        let err = t.expect_shape(&[Some(2), Some(4)]).unwrap_err();
        assert!(err.to_string().contains("posedirs"));
        t.expect_shape(&[None, Some(3)]).unwrap();
    }

    proptest! {
        #[test]
        fn round_trip(
            a in proptest::collection::vec(-1e6f64..1e6, 0..20),
            b in proptest::collection::vec(any::<i32>(), 0..20),
            c in proptest::collection::vec(-1e3f32..1e3, 0..20),
        ) {
            let mut cont = Container::new();
            cont.insert(Tensor::f64("a", vec![a.len()], a.clone()));
            cont.insert(Tensor::i32("b", vec![1, b.len()], b.clone()));
            cont.insert(Tensor { name: "c".into(), dims: vec![c.len()], data: TensorData::F32(c.clone()) });
            let back = Container::from_bytes(&cont.to_bytes()).unwrap();
            prop_assert_eq!(back, cont);
        }
    }
}

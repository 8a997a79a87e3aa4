//! Named parameter lists and their binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FSSL1"                      5-byte magic
//! u32                          parameter count
//! per parameter:
//!   u32 + bytes                name length, UTF-8 name
//!   u32                        rank
//!   u64 × rank                 extents
//!   f64 × product(extents)     values, row-major
//! ```
//!
//! The role is not stored; it is recovered from the trailing layer name.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"FSSL1";

pub const PROJ_WEIGHT: &str = "proj.weight";
pub const PROJ_BIAS: &str = "proj.bias";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Ssl,
    Classifier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSnapshot {
    role: Role,
    params: Vec<NamedTensor>,
}

impl ModelSnapshot {
    pub fn new(role: Role, params: Vec<NamedTensor>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for p in &params {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::contract(format!("duplicate parameter name `{}`", p.name)));
            }
        }
        let tail: Vec<&str> = params.iter().rev().take(2).map(|p| p.name.as_str()).collect();
        let expected = match role {
            Role::Ssl => [PROJ_BIAS, PROJ_WEIGHT],
            Role::Classifier => [HEAD_BIAS, HEAD_WEIGHT],
        };
        if tail != expected {
            return Err(Error::contract(format!(
                "{role:?} snapshot must end with {:?}, found {tail:?}",
                [expected[1], expected[0]]
            )));
        }
        Ok(Self { role, params })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().map(|p| &p.tensor)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn bit_eq(&self, other: &ModelSnapshot) -> bool {
        self.role == other.role
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.tensor.bit_eq(&b.tensor))
    }

    /// Largest elementwise difference; errors when the layouts differ.
    pub fn max_abs_diff(&self, other: &ModelSnapshot) -> Result<f64> {
        if self.params.len() != other.params.len() {
            return Err(Error::contract("snapshots have different parameter counts"));
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name {
                return Err(Error::contract(format!("parameter `{}` vs `{}`", a.name, b.name)));
            }
            worst = worst.max(a.tensor.max_abs_diff(&b.tensor)?);
        }
        Ok(worst)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.scalar_count() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.tensor.rank() as u32).to_le_bytes());
            for &d in p.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: "bad magic".into(),
            });
        }
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_at = r.pos;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format {
                    offset: name_at,
                    reason: "name is not UTF-8".into(),
                })?
                .to_owned();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let values_at = r.pos;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n > 0 && n <= bytes.len() / 8)
                .ok_or_else(|| Error::Format {
                    offset: values_at,
                    reason: format!("implausible shape {shape:?} for `{name}`"),
                })?;
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| Error::Format {
                offset: values_at,
                reason: e.to_string(),
            })?;
            params.push(NamedTensor { name, tensor });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                reason: "trailing bytes".into(),
            });
        }
        let role = match params.last().map(|p| p.name.as_str()) {
            Some(PROJ_BIAS) => Role::Ssl,
            Some(HEAD_BIAS) => Role::Classifier,
            other => {
                return Err(Error::Format {
                    offset: r.pos,
                    reason: format!("cannot infer role from trailing parameter {other:?}"),
                })
            }
        };
        ModelSnapshot::new(role, params).map_err(|e| Error::Format {
            offset: r.pos,
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.pos,
                reason: format!("unexpected end of data reading {n} bytes"),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelSnapshot {
        ModelSnapshot::new(
            Role::Ssl,
            vec![
                NamedTensor {
                    name: "conv0.weight".into(),
                    tensor: Tensor::new(vec![1, 1, 3, 3], (0..9).map(|i| i as f64 * -0.5).collect()).unwrap(),
                },
                NamedTensor {
                    name: PROJ_WEIGHT.into(),
                    tensor: Tensor::new(vec![1, 2], vec![f64::MIN_POSITIVE, -0.0]).unwrap(),
                },
                NamedTensor {
                    name: PROJ_BIAS.into(),
                    tensor: Tensor::vector(vec![1e300, 0.1]),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = tiny().to_bytes();
        assert_eq!(&bytes[..5], b"FSSL1");
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 12);
        assert_eq!(&bytes[13..25], b"conv0.weight");
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = tiny();
        let back = ModelSnapshot::from_bytes(&s.to_bytes()).unwrap();
        assert!(s.bit_eq(&back));
        assert_eq!(back.role(), Role::Ssl);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = tiny().to_bytes();
        let err = ModelSnapshot::from_bytes(&bytes[..30]).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert!(offset <= 30),
            other => panic!("unexpected {other}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelSnapshot::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn role_tail_is_enforced() {
        let mut params = tiny().params().to_vec();
        params.swap(1, 2);
        assert!(ModelSnapshot::new(Role::Ssl, params).is_err());
    }
}

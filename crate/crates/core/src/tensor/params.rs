//! Named parameter storage and the `OKWP` binary format.
//!
//! ```text
//! "OKWP" | version u16 | count u32
//! per parameter: name_len u32 | name utf-8 | rank u32 | extents u32 * rank | values f32 * numel
//! ```
//! All integers little-endian.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const PARAM_MAGIC: &[u8; 4] = b"OKWP";
pub const PARAM_VERSION: u16 = 1;

/// Rounds to the nearest `f32`. Stored parameters are kept on this grid so a
/// save/load cycle reproduces them exactly.
pub fn quantize_f32(v: f64) -> f64 {
    v as f32 as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let mut value = value;
        value.data_mut().iter_mut().for_each(|v| *v = quantize_f32(*v));
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            trainable,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Adds a trainable tensor drawn uniformly from `±sqrt(1 / fan_in)`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?, true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.entries[id.0].trainable)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    /// Replaces a value; the shape must not change. Values are quantized.
    pub fn set(&mut self, id: ParamId, data: &[f64]) -> Result<()> {
        let e = &mut self.entries[id.0];
        if data.len() != e.value.numel() {
            return Err(Error::shape(
                "ParamStore::set",
                format!("{} values for {} {:?}", data.len(), e.name, e.value.shape()),
            ));
        }
        for (dst, &src) in e.value.data_mut().iter_mut().zip(data) {
            *dst = quantize_f32(src);
        }
        Ok(())
    }

    /// Mutable access without quantization; used by finite-difference checks.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Places every parameter on `g` as a leaf. Trainable parameters require grad.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| g.leaf(e.value.clone(), e.trainable))
            .collect();
        Bound { vars }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(PARAM_MAGIC);
        buf.extend_from_slice(&PARAM_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(e.name.as_bytes());
            buf.extend_from_slice(&(e.value.rank() as u32).to_le_bytes());
            for &d in e.value.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in e.value.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)
            .map_err(|e| Error::io("writing parameter file", e))
    }

    /// Parses a parameter file into a store whose entries are all trainable.
    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io("reading parameter file", e))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != PARAM_MAGIC {
            return Err(format_err("bad magic"));
        }
        let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
        if version != PARAM_VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let count = cur.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| format_err("parameter name is not UTF-8"))?
                .to_string();
            let rank = cur.u32()? as usize;
            let shape = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = cur
                .take(n.checked_mul(4).ok_or_else(|| format_err("extent overflow"))?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            store
                .add(&name, Tensor::new(shape, data)?, true)
                .map_err(|_| format_err(format!("duplicate parameter {name:?}")))?;
        }
        if cur.pos != bytes.len() {
            return Err(format_err("trailing bytes"));
        }
        Ok(store)
    }

    /// Copies values from `other`, which must hold exactly the same names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Incompatible(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for e in &mut self.entries {
            let src = other
                .id(&e.name)
                .map(|id| other.get(id))
                .ok_or_else(|| Error::Incompatible(format!("missing parameter {:?}", e.name)))?;
            if src.shape() != e.value.shape() {
                return Err(Error::Incompatible(format!(
                    "parameter {:?} has shape {:?}, expected {:?}",
                    e.name,
                    src.shape(),
                    e.value.shape()
                )));
            }
            e.value = src.clone();
        }
        Ok(())
    }
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "parameter file",
        reason: reason.into(),
    }
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
            .ok_or_else(|| format_err("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Graph handles for every parameter of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradient for each parameter, zeros where none flowed.
    pub fn grads(&self, g: &Graph, store: &ParamStore) -> Vec<Tensor> {
        store
            .ids()
            .map(|id| {
                g.grad(self.var(id))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
            })
            .collect()
    }
}

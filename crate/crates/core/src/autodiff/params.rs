//! Named parameter storage and the checkpoint file.
//!
//! Checkpoint ("FDKC") layout, all integers little-endian:
//!
//! | bytes | content                                            |
//! |-------|----------------------------------------------------|
//! | 4     | magic `FDKC`                                       |
//! | 1     | version (`1`)                                      |
//! | 4     | parameter count `p`                                |
//! | …     | `p` entries                                        |
//! | 4     | optimizer entry count `q`                          |
//! | …     | `q` entries (`adam.m.<name>`, `adam.v.<name>`, `adam.step`) |
//!
//! Each entry is: `u32` name length, UTF-8 name, `u8` rank, `u32` extents,
//! then `f32` values in row-major order.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::read_u32;
use crate::tensor::{Real, Tensor};

pub const FDKC_MAGIC: &[u8; 4] = b"FDKC";
pub const FDKC_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

fn fresh_tag() -> u64 {
    NEXT_TAG.fetch_add(1, Ordering::Relaxed)
}

/// Parameters in insertion order with their gradients and Adam moments.
///
/// Every store carries a tag (shared by its clones) so a graph can bind
/// parameters from several stores without mixing them up.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Real = f32> {
    tag: u64,
    names: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tag: fresh_tag(),
            names: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        let shape = value.shape().to_vec();
        self.values.push(value);
        self.grads.push(Tensor::zeros(&shape));
        self.first.push(Tensor::zeros(&shape));
        self.second.push(Tensor::zeros(&shape));
        Ok(ParamId(id))
    }

    pub(crate) fn tag(&self) -> u64 {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars over all parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) -> Result<()> {
        self.grads[id.0].expect_same_shape(g)?;
        for (a, &b) in self.grads[id.0].data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_grads(&mut self, s: T) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Sets every parameter (and nothing else) to zero.
    pub fn zero_values(&mut self) {
        for v in &mut self.values {
            v.data_mut().iter_mut().for_each(|a| *a = T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::all_finite)
    }

    /// Same schema: names, order and shapes.
    pub fn same_schema(&self, other: &Self) -> bool {
        self.names == other.names && self.values.iter().zip(&other.values).all(|(a, b)| a.shape() == b.shape())
    }

    pub(crate) fn moments_mut(&mut self) -> (&mut [Tensor<T>], &[Tensor<T>], &mut [Tensor<T>], &mut [Tensor<T>], &mut u64) {
        (&mut self.values, &self.grads, &mut self.first, &mut self.second, &mut self.step)
    }

    pub(crate) fn reset_moments(&mut self) {
        for t in self.first.iter_mut().chain(self.second.iter_mut()) {
            t.data_mut().iter_mut().for_each(|a| *a = T::zero());
        }
        self.step = 0;
    }

    /// Converts values, gradients and moments to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tag: self.tag,
            names: self.names.clone(),
            index: self.index.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            grads: self.grads.iter().map(Tensor::cast).collect(),
            first: self.first.iter().map(Tensor::cast).collect(),
            second: self.second.iter().map(Tensor::cast).collect(),
            step: self.step,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(FDKC_MAGIC);
        buf.push(FDKC_VERSION);
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, v) in self.names.iter().zip(&self.values) {
            write_entry(&mut buf, name, v.shape(), v.data());
        }
        buf.extend_from_slice(&(2 * self.len() as u32 + 1).to_le_bytes());
        for (name, m) in self.names.iter().zip(&self.first) {
            write_entry(&mut buf, &format!("adam.m.{name}"), m.shape(), m.data());
        }
        for (name, v) in self.names.iter().zip(&self.second) {
            write_entry(&mut buf, &format!("adam.v.{name}"), v.shape(), v.data());
        }
        write_entry(&mut buf, "adam.step", &[], &[T::c(self.step as f64)]);
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Format { what: "checkpoint", message: m };
        let mut r = bytes;
        let mut head = [0u8; 5];
        r.read_exact(&mut head).map_err(|_| bad("truncated header".into()))?;
        if &head[..4] != FDKC_MAGIC {
            return Err(bad("bad magic".into()));
        }
        if head[4] != FDKC_VERSION {
            return Err(bad(format!("unsupported version {}", head[4])));
        }
        let count = read_u32(&mut r).ok_or_else(|| bad("truncated parameter count".into()))? as usize;
        let mut store = Self::new();
        for _ in 0..count {
            let (name, t) = read_entry(&mut r).map_err(bad)?;
            store.insert(name, t)?;
        }
        let extra = read_u32(&mut r).ok_or_else(|| bad("truncated optimizer count".into()))? as usize;
        for _ in 0..extra {
            let (name, t): (String, Tensor<T>) = read_entry(&mut r).map_err(bad)?;
            if name == "adam.step" {
                store.step = t.data().first().map(|v| v.f64() as u64).unwrap_or(0);
                continue;
            }
            let (slot, pname) = if let Some(p) = name.strip_prefix("adam.m.") {
                (0, p)
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                (1, p)
            } else {
                return Err(bad(format!("unknown optimizer entry {name}")));
            };
            let id = store.id(pname).ok_or_else(|| bad(format!("moment for unknown parameter {pname}")))?;
            store.values[id.0].expect_same_shape(&t)?;
            if slot == 0 {
                store.first[id.0] = t;
            } else {
                store.second[id.0] = t;
            }
        }
        if !r.is_empty() {
            return Err(bad(format!("{} trailing bytes", r.len())));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn write_entry<T: Real>(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[T]) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(shape.len() as u8);
    for &e in shape {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
}

fn read_entry<T: Real>(r: &mut &[u8]) -> std::result::Result<(String, Tensor<T>), String> {
    let n = read_u32(r).ok_or("truncated name length")? as usize;
    if r.len() < n {
        return Err("truncated name".into());
    }
    let name = std::str::from_utf8(&r[..n]).map_err(|_| "name is not UTF-8")?.to_string();
    *r = &r[n..];
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank).map_err(|_| "truncated rank")?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        shape.push(read_u32(r).ok_or("truncated extents")? as usize);
    }
    let len: usize = shape.iter().product();
    if r.len() < 4 * len {
        return Err(format!("truncated data for {name}"));
    }
    let data = r[..4 * len]
        .chunks_exact(4)
        .map(|c| T::c(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    *r = &r[4 * len..];
    let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
    Ok((name, t))
}

/// Normal initialization with standard deviation `gain / sqrt(fan_in)`.
pub fn init_normal<T: Real>(rng: &mut impl Rng, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<T> {
    let std = gain / (fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::c(dist.sample(rng)))
}

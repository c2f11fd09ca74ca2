//! Versioned binary container of named tensors plus string metadata.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "TRJRCKPT"
//! version    u32
//! n_meta     u32, then n_meta × { key_len u32, key utf-8, val_len u32, val utf-8 }
//! n_tensors  u32, then n_tensors × { name_len u32, name utf-8, rank u32,
//!                                    dims u64 × rank, values f64 × prod(dims) }
//! ```
//!
//! Values are stored as raw IEEE-754 bit patterns, so a write/read round trip
//! is bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Result, TensorError};
use crate::optim::{Adam, AdamMoments};
use crate::params::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"TRJRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, name: impl Into<String>, shape: &[usize], values: &[f64]) {
        self.tensors.insert(name.into(), (shape.to_vec(), values.to_vec()));
    }

    pub fn tensor(&self, name: &str) -> Result<&(Vec<usize>, Vec<f64>)> {
        self.tensors.get(name).ok_or_else(|| bad(format!("missing tensor `{name}`")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("missing metadata `{key}`")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.metadata.len() as u32).to_le_bytes())?;
        for (k, v) in &self.metadata {
            write_str(&mut w, k)?;
            write_str(&mut w, v)?;
        }
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, (shape, values)) in &self.tensors {
            write_str(&mut w, name)?;
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in values {
                w.write_all(&v.to_bits().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let mut out = Container::new();
        for _ in 0..read_u32(&mut r)? {
            let k = read_str(&mut r)?;
            let v = read_str(&mut r)?;
            out.metadata.insert(k, v);
        }
        for _ in 0..read_u32(&mut r)? {
            let name = read_str(&mut r)?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                values.push(f64::from_bits(u64::from_le_bytes(b)));
            }
            out.tensors.insert(name, (shape, values));
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Stores parameters under `param/`, buffers under `buffer/`.
    pub fn put_store(&mut self, store: &ParamStore) {
        for (name, t) in store.params() {
            self.put(format!("param/{name}"), &t.shape, &t.values);
        }
        for (name, t) in store.buffers() {
            self.put(format!("buffer/{name}"), &t.shape, &t.values);
        }
    }

    pub fn load_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (key, (shape, values)) in &self.tensors {
            if let Some(name) = key.strip_prefix("param/") {
                store.insert(name, Tensor::new(values.clone(), shape, true)?);
            } else if let Some(name) = key.strip_prefix("buffer/") {
                store.insert_buffer(name, Tensor::new(values.clone(), shape, false)?);
            }
        }
        Ok(store)
    }

    /// Stores optimizer state under `adam.m/`, `adam.v/` plus scalar metadata.
    pub fn put_adam(&mut self, adam: &Adam) {
        self.metadata.insert("adam.step".into(), adam.step.to_string());
        self.put("adam.hyper", &[3], &[adam.beta1, adam.beta2, adam.eps]);
        for (name, st) in &adam.moments {
            self.put(format!("adam.m/{name}"), &[st.m.len()], &st.m);
            self.put(format!("adam.v/{name}"), &[st.v.len()], &st.v);
        }
    }

    pub fn load_adam(&self) -> Result<Adam> {
        let hyper = &self.tensor("adam.hyper")?.1;
        if hyper.len() != 3 {
            return Err(bad("adam.hyper must hold 3 values"));
        }
        let mut adam = Adam::new(hyper[0], hyper[1], hyper[2]);
        adam.step = self
            .meta("adam.step")?
            .parse()
            .map_err(|e| bad(format!("adam.step: {e}")))?;
        for (key, (_, m)) in &self.tensors {
            if let Some(name) = key.strip_prefix("adam.m/") {
                let v = self.tensor(&format!("adam.v/{name}"))?.1.clone();
                adam.moments.insert(name.to_string(), AdamMoments { m: m.clone(), v });
            }
        }
        Ok(adam)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| bad(format!("invalid utf-8: {e}")))
}

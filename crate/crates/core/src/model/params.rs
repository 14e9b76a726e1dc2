//! Named parameter tensors and the flat parameter file.
//!
//! File layout, integers little-endian:
//!
//! ```text
//! magic "OCPF" | version u32 (=1) | meta_len u32 | meta (UTF-8 JSON)
//! block_count u32
//! per block: name_len u16 | name | ndim u8 | dims u64 * ndim | f64 * prod(dims)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub const PARAM_MAGIC: &[u8; 4] = b"OCPF";
pub const PARAM_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of trainable tensors.
///
/// `generation` advances on every mutation so activation caches can detect
/// that the weights they were computed with have changed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    generation: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape of {name}"
        );
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            data,
        });
        self.generation += 1;
        ParamId(self.params.len() - 1)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    /// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, shape, data)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.generation += 1;
        &mut self.params[id.0].data
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Mutable access to every tensor at once.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.generation += 1;
        self.params.iter_mut().map(|p| &mut p.data)
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            data: self
                .params
                .iter()
                .map(|p| vec![0.0; p.data.len()])
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    pub fn write_to<W: Write>(&self, mut w: W, meta: &str) -> Result<()> {
        w.write_all(PARAM_MAGIC)?;
        w.write_all(&PARAM_VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(meta.as_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&(p.name.len() as u16).to_le_bytes())?;
            w.write_all(p.name.as_bytes())?;
            w.write_all(&[p.shape.len() as u8])?;
            for d in &p.shape {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(p.data.len() * 8);
            for v in &p.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Parses a parameter file, returning the store and its metadata string.
    pub fn read_from<R: Read>(mut r: R) -> Result<(ParamStore, String)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PARAM_MAGIC {
            return Err(Error::Malformed("not a parameter file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != PARAM_VERSION {
            return Err(Error::Malformed(format!(
                "unsupported parameter file version {version}"
            )));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta = String::from_utf8(meta)
            .map_err(|_| Error::Malformed("metadata is not UTF-8".into()))?;
        let count = read_u32(&mut r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Malformed("parameter name is not UTF-8".into()))?;
            let mut ndim = [0u8; 1];
            r.read_exact(&mut ndim)?;
            let mut shape = Vec::with_capacity(ndim[0] as usize);
            for _ in 0..ndim[0] {
                let mut d = [0u8; 8];
                r.read_exact(&mut d)?;
                shape.push(u64::from_le_bytes(d) as usize);
            }
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            if store.find(&name).is_some() {
                return Err(Error::Malformed(format!(
                    "duplicate parameter block {name}"
                )));
            }
            store.add(name, &shape, data);
        }
        Ok((store, meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &str) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w, meta)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(ParamStore, String)> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().flatten().for_each(|g| *g *= factor);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().flatten().fold(0.0, |m, g| m.max(g.abs()))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn file_roundtrip_and_generation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let a = s.add_uniform("layer0.wq", &[3, 4], 3, &mut rng);
        s.add_zeros("head.b", &[1]);
        let g0 = s.generation();
        s.get_mut(a)[0] = 0.5;
        assert!(s.generation() > g0);

        let mut buf = Vec::new();
        s.write_to(&mut buf, "{\"k\":1}").unwrap();
        let (back, meta) = ParamStore::read_from(&buf[..]).unwrap();
        assert_eq!(meta, "{\"k\":1}");
        assert_eq!(
            back.iter().collect::<Vec<_>>(),
            s.iter().collect::<Vec<_>>()
        );
        assert_eq!(back.param(a).shape, vec![3, 4]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut s = ParamStore::new();
        s.add_zeros("x", &[2]);
        let mut buf = Vec::new();
        s.write_to(&mut buf, "").unwrap();
        buf.truncate(buf.len() - 3);
        assert!(ParamStore::read_from(&buf[..]).is_err());
        assert!(matches!(
            ParamStore::read_from(&b"XXXX\0\0\0\0"[..]),
            Err(Error::Malformed(_))
        ));
    }
}

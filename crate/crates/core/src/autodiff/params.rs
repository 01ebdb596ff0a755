use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a tensor was initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)`.
    UniformFanIn(usize),
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub init: Init,
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub seed: u64,
    tensors: IndexMap<String, ParamTensor>,
}

fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self { seed, tensors: IndexMap::new() }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.values.len()).sum()
    }

    /// Adds a tensor drawn from `init` with an RNG keyed on the store seed
    /// and the name. Re-adding an existing name is an error.
    pub fn add(&mut self, name: &str, shape: Vec<usize>, init: Init) -> Result<()> {
        if self.tensors.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let n: usize = shape.iter().product();
        let values = match init {
            Init::UniformFanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            }
            Init::Constant(c) => vec![c; n],
        };
        self.tensors.insert(name.to_string(), ParamTensor { shape, values, init });
        Ok(())
    }

    /// Registers `{prefix}.w` (`[out, in]`) and `{prefix}.b` (`[out]`).
    pub fn add_dense(&mut self, prefix: &str, input: usize, output: usize) -> Result<()> {
        self.add(&format!("{prefix}.w"), vec![output, input], Init::UniformFanIn(input))?;
        self.add(&format!("{prefix}.b"), vec![output], Init::UniformFanIn(input))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.get_mut(name)
    }

    pub fn get_index(&self, idx: usize) -> &ParamTensor {
        &self.tensors[idx]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = (&str, &mut Vec<f64>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), &mut v.values))
    }

    pub fn set_constant(&mut self, name: &str, c: f64) -> Result<()> {
        let t = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        t.values.iter_mut().for_each(|v| *v = c);
        Ok(())
    }

    pub fn fill(&mut self, c: f64) {
        for t in self.tensors.values_mut() {
            t.values.iter_mut().for_each(|v| *v = c);
        }
    }

    const MAGIC: &'static [u8; 4] = b"RNPS";
    const VERSION: u32 = 1;

    /// Little-endian binary: magic, version, seed, count, then per tensor
    /// name, init, shape and values.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            match t.init {
                Init::UniformFanIn(f) => {
                    w.write_all(&[0])?;
                    w.write_all(&(f as u64).to_le_bytes())?;
                }
                Init::Constant(c) => {
                    w.write_all(&[1])?;
                    w.write_all(&c.to_le_bytes())?;
                }
            }
            w.write_all(&(t.shape.len() as u64).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &t.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        fn u64_of(r: &mut impl Read) -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        }
        fn len_of(r: &mut impl Read, what: &str) -> Result<usize> {
            let n = u64_of(r)?;
            if n > (1 << 32) {
                return Err(Error::Checkpoint(format!("implausible {what} {n}")));
            }
            Ok(n as usize)
        }
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        let version = u32::from_le_bytes(v);
        if version != Self::VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let seed = u64_of(&mut r)?;
        let count = len_of(&mut r, "tensor count")?;
        let mut tensors = IndexMap::new();
        for _ in 0..count {
            let n = len_of(&mut r, "name length")?;
            let mut name = vec![0u8; n];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let init = match tag[0] {
                0 => Init::UniformFanIn(u64_of(&mut r)? as usize),
                1 => Init::Constant(f64::from_bits(u64_of(&mut r)?)),
                t => return Err(Error::Checkpoint(format!("unknown init tag {t}"))),
            };
            let rank = len_of(&mut r, "rank")?;
            let shape = (0..rank).map(|_| len_of(&mut r, "dimension")).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let values = (0..numel).map(|_| u64_of(&mut r).map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
            tensors.insert(name, ParamTensor { shape, values, init });
        }
        Ok(Self { seed, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Overwrites values from `other`, which must have the same names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Checkpoint("parameter count differs".into()));
        }
        for ((n, t), (m, o)) in self.tensors.iter_mut().zip(&other.tensors) {
            if n != m || t.shape != o.shape {
                return Err(Error::Checkpoint(format!("parameter {n} does not match {m}")));
            }
            t.values.copy_from_slice(&o.values);
        }
        Ok(())
    }
}

/// One gradient vector per store tensor, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            names: store.names().map(str::to_string).collect(),
            values: store.iter().map(|(_, t)| vec![0.0; t.values.len()]).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i].as_slice())
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Dimension("gradient sets over different parameters".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().flatten().for_each(|x| *x *= s);
    }

    /// Keeps only tensors whose name satisfies `keep`.
    pub fn masked(mut self, keep: impl Fn(&str) -> bool) -> Self {
        for (n, v) in self.names.iter().zip(self.values.iter_mut()) {
            if !keep(n) {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        self
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Name of the first tensor holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.names
            .iter()
            .zip(&self.values)
            .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_name() {
        let mut a = ParamStore::new(3);
        a.add_dense("x", 4, 2).unwrap();
        a.add_dense("y", 4, 2).unwrap();
        let mut b = ParamStore::new(3);
        b.add_dense("y", 4, 2).unwrap();
        assert_eq!(a.get("y.w"), b.get("y.w"));
        assert_ne!(a.get("x.w").unwrap().values, a.get("y.w").unwrap().values);
        assert!(a.get("x.w").unwrap().values.iter().all(|v| v.abs() <= 0.5));
        assert!(a.add_dense("x", 1, 1).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut s = ParamStore::new(11);
        s.add_dense("enc", 5, 3).unwrap();
        s.add("log_std", vec![3], Init::Constant(-0.5)).unwrap();
        s.get_mut("enc.b").unwrap().values[0] = f64::MIN_POSITIVE / 3.0;
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let back = ParamStore::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.seed, 11);
        for ((n, t), (m, u)) in s.iter().zip(back.iter()) {
            assert_eq!(n, m);
            assert_eq!(t.shape, u.shape);
            assert_eq!(t.init, u.init);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&t.values), bits(&u.values));
        }
        buf[0] = b'X';
        assert!(ParamStore::read_from(buf.as_slice()).is_err());
    }
}

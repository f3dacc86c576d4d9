//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CHFL" | version: u32 | net_count: u32
//! per net:
//!   name_len: u32 | name: utf-8 bytes
//!   dim_count: u32 | dims: u32 * dim_count
//!   omega0: f64 | omega_hidden: f64 | activation: u8 (0 = sine, 1 = identity)
//!   weights of every layer, row-major f64
//!   biases of every layer, f64
//! meta_len: u32 | meta: utf-8 bytes (free-form TOML written by the caller)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Activation, MlpSpec, SineMlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CHFL";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named networks plus a metadata blob.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub nets: Vec<(String, SineMlp)>,
    pub meta: String,
}

impl Checkpoint {
    pub fn net(&self, name: &str) -> Option<&SineMlp> {
        self.nets.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.nets.len() as u32).to_le_bytes())?;
        for (name, net) in &self.nets {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(net.dims().len() as u32).to_le_bytes())?;
            for &d in net.dims() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            w.write_all(&net.omega0().to_le_bytes())?;
            w.write_all(&net.omega_hidden().to_le_bytes())?;
            let act: u8 = match net.activation() {
                Activation::Sine => 0,
                Activation::Identity => 1,
            };
            w.write_all(&[act])?;
            for s in net.param_slices() {
                for v in s {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        w.write_all(self.meta.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(r)? as usize;
        let mut nets = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_string(r)?;
            let ndims = read_u32(r)? as usize;
            if ndims > 64 {
                return Err(Error::Format("implausible layer count".into()));
            }
            let dims = (0..ndims).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let omega0 = read_f64(r)?;
            let omega_hidden = read_f64(r)?;
            let mut act = [0u8; 1];
            r.read_exact(&mut act)?;
            let activation = match act[0] {
                0 => Activation::Sine,
                1 => Activation::Identity,
                a => return Err(Error::Format(format!("unknown activation tag {a}"))),
            };
            let spec = MlpSpec { dims: dims.clone(), omega0, omega_hidden };
            let mut weights = Vec::new();
            for w in dims.windows(2) {
                let vals = read_f64s(r, w[0] * w[1])?;
                weights.push(Array2::from_shape_vec((w[1], w[0]), vals).expect("shape"));
            }
            let mut biases = Vec::new();
            for &d in &dims[1..] {
                biases.push(Array1::from_vec(read_f64s(r, d)?));
            }
            let net = SineMlp::from_parts(&spec, weights, biases, activation)
                .map_err(|e| Error::Format(e.to_string()))?;
            nets.push((name, net));
        }
        let meta = read_string(r)?;
        Ok(Self { nets, meta })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let ck = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", cursor.len())));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| read_f64(r)).collect()
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = SineMlp::new(&MlpSpec::new(&[4, 8, 8, 16], 30.0), &mut rng).unwrap();
        let b = SineMlp::new(&MlpSpec::new(&[17, 8, 3], 30.0), &mut rng).unwrap().with_activation(Activation::Identity);
        let ck = Checkpoint { nets: vec![("encoder".into(), a), ("decoder".into(), b)], meta: "iter = 3\n".into() };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let ck = Checkpoint::default();
        let mut bytes = ck.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
        let mut bytes = ck.to_bytes();
        bytes[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }
}

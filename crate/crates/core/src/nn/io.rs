//! Flat binary parameter files.
//!
//! Layout: the 8-byte magic `CPI2MLP1`, the layer count as a little-endian
//! `u64`, each layer size as a little-endian `u64`, then every parameter as a
//! little-endian `f64`, layer by layer with the (input-major) weight matrix
//! before the bias vector.

use std::io::{Read, Write};
use std::path::Path;

use super::mlp::{Layer, Mlp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"CPI2MLP1";

impl<T: Scalar> Mlp<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = self.layer_sizes();
        let mut out = Vec::with_capacity(16 + 8 * (sizes.len() + self.num_params()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(sizes.len() as u64).to_le_bytes());
        for &s in sizes {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for p in self.params() {
            out.extend_from_slice(&p.as_f64().to_le_bytes());
        }
        out
    }

    /// Parameters only; the optimizer state starts fresh.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut words = bytes.get(8..).unwrap_or_default().chunks_exact(8);
        if bytes.get(..8) != Some(MAGIC.as_slice()) {
            return Err(Error::BadParameterFile("bad magic".into()));
        }
        let mut next_word = || -> Result<[u8; 8]> {
            words
                .next()
                .map(|w| w.try_into().expect("chunk of 8"))
                .ok_or_else(|| Error::BadParameterFile("truncated".into()))
        };
        let n_sizes = u64::from_le_bytes(next_word()?) as usize;
        if !(2..=1024).contains(&n_sizes) {
            return Err(Error::BadParameterFile(format!("implausible layer count {n_sizes}")));
        }
        let sizes = (0..n_sizes)
            .map(|_| next_word().map(|w| u64::from_le_bytes(w) as usize))
            .collect::<Result<Vec<_>>>()?;
        Mlp::<T>::zeros(&sizes).map_err(|e| Error::BadParameterFile(e.to_string()))?;
        let mut layers = Vec::with_capacity(n_sizes - 1);
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let mut read = |n: usize| -> Result<Vec<T>> {
                (0..n).map(|_| next_word().map(|b| T::lit(f64::from_le_bytes(b)))).collect()
            };
            let weights = read(n_in * n_out)?;
            let bias = read(n_out)?;
            layers.push(Layer {
                n_in,
                n_out,
                weights,
                bias,
            });
        }
        if words.next().is_some() || bytes.len() % 8 != 0 {
            return Err(Error::BadParameterFile("trailing bytes".into()));
        }
        Ok(Mlp::from_layers(sizes, layers))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

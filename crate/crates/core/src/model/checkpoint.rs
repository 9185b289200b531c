//! JSON checkpoints: shape metadata plus each tensor as base64-encoded
//! little-endian `f64` values. Round trips are bit-exact for `f32` and `f64`.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::MlpParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FORMAT: &str = "viser-mlp";
pub const FORMAT_VERSION: u32 = 1;
const NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "w3", "b3"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub f64_le_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub tensors: Vec<TensorBlob>,
}

impl Checkpoint {
    pub fn from_params<T: Scalar>(p: &MlpParams<T>) -> Self {
        let (d, h, n) = p.shape();
        let shapes = [vec![h, d], vec![h], vec![h, h], vec![h], vec![n, h], vec![n]];
        let tensors = p
            .tensors()
            .iter()
            .zip(NAMES)
            .zip(shapes)
            .map(|((t, name), shape)| {
                let mut bytes = Vec::with_capacity(t.len() * 8);
                for v in t.iter() {
                    bytes.extend_from_slice(&v.to_f64_lossless().to_le_bytes());
                }
                TensorBlob {
                    name: name.to_string(),
                    shape,
                    f64_le_base64: STANDARD.encode(bytes),
                }
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            input_dim: d,
            hidden: h,
            outputs: n,
            tensors,
        }
    }

    pub fn to_params<T: Scalar>(&self) -> Result<MlpParams<T>> {
        let bad = |reason: String| Error::Format {
            location: "checkpoint".into(),
            reason,
        };
        if self.format != FORMAT || self.version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format {} v{}", self.format, self.version)));
        }
        let mut p = MlpParams::zeros(self.input_dim, self.hidden, self.outputs);
        if self.tensors.len() != NAMES.len() {
            return Err(bad(format!("expected 6 tensors, found {}", self.tensors.len())));
        }
        for ((dst, blob), name) in p.tensors_mut().into_iter().zip(&self.tensors).zip(NAMES) {
            if blob.name != name {
                return Err(bad(format!("expected tensor {name}, found {}", blob.name)));
            }
            let bytes = STANDARD
                .decode(&blob.f64_le_base64)
                .map_err(|e| bad(format!("{name}: {e}")))?;
            if bytes.len() != dst.len() * 8 || blob.shape.iter().product::<usize>() != dst.len() {
                return Err(bad(format!("{name}: size does not match declared shape")));
            }
            for (v, c) in dst.iter_mut().zip(bytes.chunks_exact(8)) {
                *v = T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap()));
            }
        }
        p.validate()?;
        Ok(p)
    }
}

pub fn save<T: Scalar>(p: &MlpParams<T>, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&Checkpoint::from_params(p))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<MlpParams<T>> {
    let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    ck.to_params()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), d in 1usize..6, h in 1usize..9, n in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = MlpParams::<f64>::glorot(d, h, n, &mut rng);
            p.b2[0] = -0.0;
            p.b3[0] = f64::MIN_POSITIVE / 3.0;
            let json = serde_json::to_string(&Checkpoint::from_params(&p)).unwrap();
            let back: MlpParams<f64> = serde_json::from_str::<Checkpoint>(&json).unwrap().to_params().unwrap();
            for (a, b) in p.tensors().iter().zip(back.tensors()) {
                let ab: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
            let p32 = MlpParams::<f32>::glorot(d, h, n, &mut rng);
            let back32: MlpParams<f32> = Checkpoint::from_params(&p32).to_params().unwrap();
            prop_assert_eq!(back32, p32);
        }
    }

    #[test]
    fn rejects_wrong_sizes() {
        let p = MlpParams::<f64>::zeros(2, 3, 1);
        let mut ck = Checkpoint::from_params(&p);
        ck.tensors[0].f64_le_base64 = STANDARD.encode([0u8; 8]);
        assert!(ck.to_params::<f64>().is_err());
        let mut ck = Checkpoint::from_params(&p);
        ck.version = 9;
        assert!(ck.to_params::<f64>().is_err());
    }
}

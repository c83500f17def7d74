//! Checkpoint directories: `manifest.json` describing every tensor, and
//! `weights.bin` holding the tensors as little-endian `f32`, concatenated in
//! manifest order. Weight matrices are stored row by row (`out × in`).

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Activation, Layer, MlpParams};
use crate::error::{Error, Result};

const FORMAT: &str = "denkf-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    networks: Vec<NetworkEntry>,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// In-memory view of a checkpoint directory.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub networks: Vec<(NetworkEntry, MlpParams)>,
    /// Free-standing vectors stored after the networks (e.g. input normalization).
    pub extra: Vec<(String, Vec<f64>)>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Result<&(NetworkEntry, MlpParams)> {
        self.networks
            .iter()
            .find(|(e, _)| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing network `{name}`")))
    }

    pub fn extra(&self, name: &str) -> Result<&[f64]> {
        self.extra
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut push = |values: &mut dyn Iterator<Item = f64>| {
        for v in values {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    for (entry, params) in &ckpt.networks {
        if entry.dims != params.dims() {
            return Err(Error::Checkpoint(format!(
                "network `{}` dims {:?} do not match parameters {:?}",
                entry.name,
                entry.dims,
                params.dims()
            )));
        }
        for (i, l) in params.layers().iter().enumerate() {
            tensors.push(TensorEntry {
                name: format!("{}.{i}.weight", entry.name),
                shape: vec![l.out_dim(), l.in_dim()],
            });
            push(
                &mut (0..l.out_dim())
                    .flat_map(|r| l.weights.row(r).iter().copied().collect::<Vec<_>>()),
            );
            tensors.push(TensorEntry {
                name: format!("{}.{i}.bias", entry.name),
                shape: vec![l.out_dim()],
            });
            push(&mut l.bias.iter().copied());
        }
    }
    for (name, values) in &ckpt.extra {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: vec![values.len()],
        });
        push(&mut values.iter().copied());
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f32le".into(),
        networks: ckpt.networks.iter().map(|(e, _)| e.clone()).collect(),
        tensors,
        metadata: ckpt.metadata.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    fs::write(dir.join("weights.bin"), blob)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.format != FORMAT || manifest.version != VERSION || manifest.dtype != "f32le" {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{} ({})",
            manifest.format, manifest.version, manifest.dtype
        )));
    }
    let bytes = fs::read(dir.join("weights.bin"))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint(
            "weights.bin is not a whole number of f32".into(),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let expected: usize = manifest
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if expected != values.len() {
        return Err(Error::Checkpoint(format!(
            "manifest describes {expected} values, weights.bin holds {}",
            values.len()
        )));
    }

    let mut offset = 0;
    let mut tensors = manifest.tensors.iter();
    let mut take = |name: &str, shape: &[usize]| -> Result<&[f64]> {
        let t = tensors
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if t.name != name || t.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor order: expected `{name}` {shape:?}, found `{}` {:?}",
                t.name, t.shape
            )));
        }
        let n: usize = shape.iter().product();
        let out = &values[offset..offset + n];
        offset += n;
        Ok(out)
    };

    let mut networks = Vec::new();
    for entry in &manifest.networks {
        if entry.activations.len() + 1 != entry.dims.len() {
            return Err(Error::Checkpoint(format!(
                "network `{}` has {} activations for {} dims",
                entry.name,
                entry.activations.len(),
                entry.dims.len()
            )));
        }
        let mut layers = Vec::new();
        for i in 0..entry.activations.len() {
            let (fan_in, fan_out) = (entry.dims[i], entry.dims[i + 1]);
            let w = take(&format!("{}.{i}.weight", entry.name), &[fan_out, fan_in])?;
            let weights = DMatrix::from_row_slice(fan_out, fan_in, w);
            let b = take(&format!("{}.{i}.bias", entry.name), &[fan_out])?;
            layers.push(Layer {
                weights,
                bias: DVector::from_column_slice(b),
                activation: entry.activations[i],
            });
        }
        networks.push((entry.clone(), MlpParams::from_layers(layers)?));
    }
    let mut extra = Vec::new();
    let rest: Vec<TensorEntry> =
        manifest.tensors[manifest.tensors.len() - remaining_after(&manifest)..].to_vec();
    for t in rest {
        let v = take(&t.name, &t.shape)?.to_vec();
        extra.push((t.name, v));
    }
    Ok(Checkpoint {
        networks,
        extra,
        metadata: manifest.metadata,
    })
}

// Number of trailing tensors that are not network layers.
fn remaining_after(m: &Manifest) -> usize {
    let layer_tensors: usize = m.networks.iter().map(|n| 2 * n.activations.len()).sum();
    m.tensors.len().saturating_sub(layer_tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_at_f32_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = MlpParams::new_random(&[4, 6, 3], &mut rng);
        net.round_to_f32();
        let ckpt = Checkpoint {
            networks: vec![(
                NetworkEntry {
                    name: "demo".into(),
                    dims: net.dims(),
                    activations: net.activations(),
                    dropout: 0.1,
                },
                net.clone(),
            )],
            extra: vec![("norm.shift".into(), vec![0.5, -0.25])],
            metadata: serde_json::json!({"window": 5}),
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &ckpt).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.network("demo").unwrap().1, net);
        assert_eq!(back.extra("norm.shift").unwrap(), &[0.5, -0.25]);
        assert_eq!(back.metadata["window"], 5);
        let size = std::fs::metadata(dir.path().join("weights.bin"))
            .unwrap()
            .len();
        assert_eq!(size as usize, 4 * (net.num_params() + 2));
    }

    #[test]
    fn truncated_weights_rejected() {
        let net = MlpParams::zeros(&[2, 2]);
        let ckpt = Checkpoint {
            networks: vec![(
                NetworkEntry {
                    name: "n".into(),
                    dims: net.dims(),
                    activations: net.activations(),
                    dropout: 0.0,
                },
                net,
            )],
            extra: vec![],
            metadata: serde_json::Value::Null,
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &ckpt).unwrap();
        std::fs::write(dir.path().join("weights.bin"), [0u8; 8]).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(Error::Checkpoint(_))
        ));
    }
}

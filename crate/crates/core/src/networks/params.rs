//! Named parameter storage, seeded initialization and checkpoint files.
//!
//! A checkpoint is a single safetensors archive. Model parameters are stored
//! under their module path (`encoder.conv1.weight`, ...); optimizer state, when
//! present, under `adam.m.<path>` / `adam.v.<path>`. The safetensors metadata
//! block carries JSON documents keyed by [`META_FORMAT`], [`META_MODEL`] and,
//! for training checkpoints, [`META_TRAIN`].

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{safetensors::Load, DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetensors::SafeTensors;
use sha2::{Digest, Sha256};

use crate::error::{FcnrError, Result};

pub const META_FORMAT: &str = "format";
pub const META_MODEL: &str = "model_config";
pub const META_TRAIN: &str = "train_state";
pub const FORMAT_TAG: &str = "fcnr-checkpoint/1";

/// All trainable tensors of a model, keyed by module path.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
}

/// Seeded initializer that registers every tensor it creates.
#[derive(Debug)]
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    prefix: String,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn init(&mut self, seed: u64) -> Init<'_> {
        Init {
            store: self,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: String::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrite every parameter from `tensors`, which must cover them all
    /// with matching shapes.
    pub fn assign(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let src = tensors
                .get(name)
                .ok_or_else(|| FcnrError::Checkpoint(format!("missing parameter {name}")))?;
            if src.dims() != var.dims() {
                return Err(FcnrError::Checkpoint(format!(
                    "parameter {name}: stored shape {:?}, model expects {:?}",
                    src.dims(),
                    var.dims()
                )));
            }
            var.set(&src.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Snapshot of the current values.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().detach()))
            .collect()
    }

    /// 64-bit digest of parameter names, shapes, dtype and raw bytes plus the
    /// serialized config.
    pub fn fingerprint(&self, config_json: &str) -> Result<u64> {
        let mut h = Sha256::new();
        h.update(config_json.as_bytes());
        for (name, var) in &self.vars {
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            let flat = var.as_tensor().flatten_all()?;
            match self.dtype {
                DType::F64 => {
                    for v in flat.to_vec1::<f64>()? {
                        h.update(v.to_le_bytes());
                    }
                }
                _ => {
                    for v in flat.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                        h.update(v.to_le_bytes());
                    }
                }
            }
        }
        let digest = h.finalize();
        Ok(u64::from_le_bytes(digest[..8].try_into().unwrap()))
    }
}

impl Init<'_> {
    /// Initializer for a nested module path.
    pub fn push(&mut self, name: &str) -> Init<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        // Child streams are derived from the parent so module order does not
        // shift the values of unrelated modules.
        let seed = self.rng.random::<u64>();
        Init {
            store: &mut *self.store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix,
        }
    }

    fn register(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.store.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        if self.store.vars.insert(full.clone(), var).is_some() {
            return Err(FcnrError::Checkpoint(format!("parameter {full} registered twice")));
        }
        Ok(handle)
    }

    /// `U(-bound, bound)` entries.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.register(name, values, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        self.register(name, vec![value; n], shape)
    }

    pub fn from_values(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        self.register(name, values, shape)
    }
}

/// Contents of a checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub tensors: HashMap<String, Tensor>,
    pub metadata: HashMap<String, String>,
}

impl Checkpoint {
    pub fn save(
        path: &Path,
        tensors: &BTreeMap<String, Tensor>,
        metadata: HashMap<String, String>,
    ) -> Result<()> {
        let bytes = safetensors::serialize(tensors.iter().map(|(k, v)| (k.as_str(), v)), Some(metadata))
            .map_err(|e| FcnrError::Checkpoint(e.to_string()))?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| FcnrError::io(parent, e))?;
            }
        }
        std::fs::write(path, bytes).map_err(|e| FcnrError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| FcnrError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |e: safetensors::SafeTensorError| FcnrError::Checkpoint(e.to_string());
        let (_, meta) = SafeTensors::read_metadata(bytes).map_err(err)?;
        let metadata = meta.metadata().clone().unwrap_or_default();
        match metadata.get(META_FORMAT) {
            Some(tag) if tag == FORMAT_TAG => {}
            other => {
                return Err(FcnrError::Checkpoint(format!(
                    "unsupported checkpoint format {other:?}"
                )))
            }
        }
        let st = SafeTensors::deserialize(bytes).map_err(err)?;
        let mut tensors = HashMap::new();
        for (name, view) in st.tensors() {
            tensors.insert(name, view.load(&Device::Cpu)?);
        }
        Ok(Checkpoint { tensors, metadata })
    }
}

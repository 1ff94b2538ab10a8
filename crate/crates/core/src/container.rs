//! Named-tensor files in the safetensors layout, used for checkpoints,
//! feature caches, frozen network weights and the NIQE model.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use ultrabm_tensor::{Real, Tensor};

use crate::error::{Error, Result};

/// An ordered set of named `f32`/`f64` arrays with string metadata.
#[derive(Clone, Debug, Default)]
pub struct TensorFile {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Stored>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stored {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl Stored {
    pub fn shape(&self) -> &[usize] {
        match self {
            Stored::F32(t) => t.shape(),
            Stored::F64(t) => t.shape(),
        }
    }

    pub fn to_real<T: Real>(&self) -> Tensor<T> {
        match self {
            Stored::F32(t) => t.cast(),
            Stored::F64(t) => t.cast(),
        }
    }
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let stored = if T::DTYPE == "f64" { Stored::F64(t.cast()) } else { Stored::F32(t.cast()) };
        self.tensors.insert(name.into(), stored);
    }

    pub fn get<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        self.tensors
            .get(name)
            .map(Stored::to_real)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing metadata key `{key}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(k, v)| match v {
                Stored::F32(t) => (k.clone(), Dtype::F32, t.shape().to_vec(), t.data().iter().flat_map(|x| x.to_le_bytes()).collect()),
                Stored::F64(t) => (k.clone(), Dtype::F64, t.shape().to_vec(), t.data().iter().flat_map(|x| x.to_le_bytes()).collect()),
            })
            .collect();
        let mut views = Vec::with_capacity(raw.len());
        for (k, dt, shape, bytes) in &raw {
            let view = TensorView::new(*dt, shape.clone(), bytes).map_err(|e| Error::Format(e.to_string()))?;
            views.push((k.as_str(), view));
        }
        let meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        safetensors::serialize(views, Some(meta)).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Format(format!("not a tensor file: {e}")))?;
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Format(format!("not a tensor file: {e}")))?;
        let mut out = TensorFile::new();
        if let Some(m) = header.metadata() {
            out.metadata = m.clone().into_iter().collect();
        }
        for name in st.names() {
            let view = st.tensor(name).map_err(|e| Error::Format(e.to_string()))?;
            let shape = view.shape().to_vec();
            let data = view.data();
            let stored = match view.dtype() {
                Dtype::F32 => Stored::F32(Tensor::new(
                    shape,
                    data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                )?),
                Dtype::F64 => Stored::F64(Tensor::new(
                    shape,
                    data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                )?),
                other => return Err(Error::Format(format!("tensor `{name}` has unsupported dtype {other:?}"))),
            };
            out.tensors.insert(name.to_string(), stored);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

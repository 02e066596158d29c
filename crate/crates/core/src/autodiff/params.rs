use serde::{Deserialize, Serialize};

use super::{AutodiffError, Gradients, Tape, Tensor, Var};

pub const CHECKPOINT_FORMAT: &str = "ged-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Index of a tensor in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    value: Tensor,
    decay: bool,
}

/// Flat, ordered collection of named learnable tensors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<Entry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor; `decay` marks it for weight decay.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        self.entries.push(Entry {
            name: name.into(),
            value,
            decay,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.entries[id.0].decay
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Records every tensor as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|e| tape.param(e.value.clone())).collect()
    }

    /// Collects gradients for bound leaves, in parameter order.
    pub fn collect_grads(&self, bound: &[Var], grads: &Gradients) -> Vec<Tensor> {
        bound.iter().map(|&v| grads.wrt(v)).collect()
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.entries
            .iter()
            .map(|e| NamedTensor {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                dtype: "f64".into(),
                decay: e.decay,
                data: e.value.data().to_vec(),
            })
            .collect()
    }

    pub fn from_named(tensors: Vec<NamedTensor>) -> Result<Self, AutodiffError> {
        let mut set = Self::new();
        for t in tensors {
            if t.dtype != "f64" {
                return Err(AutodiffError::Checkpoint(format!("tensor `{}` has dtype {}", t.name, t.dtype)));
            }
            let value = Tensor::new(t.shape, t.data)?;
            set.add(t.name, value, t.decay);
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    #[serde(default)]
    pub decay: bool,
    pub data: Vec<f64>,
}

/// Versioned JSON checkpoint: free-form metadata plus named tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value, tensors: Vec<NamedTensor>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            meta,
            tensors,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialisation is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, AutodiffError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(AutodiffError::Checkpoint(format!("unknown format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        Ok(ck)
    }
}

//! Single-layer LSTM mask estimator: LSTM -> linear -> sigmoid, one
//! magnitude frame per step.
//!
//! Weight container layout:
//!
//! ```text
//! [u64 LE manifest length][UTF-8 JSON manifest][raw little-endian tensor data]
//! ```
//!
//! Tensor `byte_offset`s are relative to the first byte after the manifest.
//! Packed gate order in `W_ih`, `W_hh`, `b_ih`, `b_hh` is `(i, f, g, o)`,
//! PyTorch's convention. The output layer has `out_masks * input_dim` rows;
//! mask `k` occupies rows `k*input_dim .. (k+1)*input_dim`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psd::MaskFrame;

pub const FORMAT_VERSION: u32 = 1;
pub const GATE_ORDER: &str = "ifgo";
pub const INPUT_TRANSFORM: &str = "identity";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub byte_offset: usize,
    pub byte_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub out_masks: usize,
    #[serde(default = "default_gate_order")]
    pub gate_order: String,
    #[serde(default = "default_input_transform")]
    pub input_transform: String,
    pub tensors: Vec<TensorEntry>,
}

fn default_gate_order() -> String {
    GATE_ORDER.to_string()
}

fn default_input_transform() -> String {
    INPUT_TRANSFORM.to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmMaskModel {
    input_dim: usize,
    hidden_dim: usize,
    out_masks: usize,
    w_ih: Vec<f64>,
    w_hh: Vec<f64>,
    b_ih: Vec<f64>,
    b_hh: Vec<f64>,
    w_out: Vec<f64>,
    b_out: Vec<f64>,
}

/// Running recurrent state. Zero at stream start.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl ModelState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self { h: vec![0.0; hidden_dim], c: vec![0.0; hidden_dim] }
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = 0.0);
        self.c.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Named tensor slots with their expected shapes.
fn expected_shapes(input_dim: usize, hidden_dim: usize, out_masks: usize) -> [(&'static str, Vec<usize>); 6] {
    let g = 4 * hidden_dim;
    let out = out_masks * input_dim;
    [
        ("W_ih", vec![g, input_dim]),
        ("W_hh", vec![g, hidden_dim]),
        ("b_ih", vec![g]),
        ("b_hh", vec![g]),
        ("W_out", vec![out, hidden_dim]),
        ("b_out", vec![out]),
    ]
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmMaskModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        out_masks: usize,
        w_ih: Vec<f64>,
        w_hh: Vec<f64>,
        b_ih: Vec<f64>,
        b_hh: Vec<f64>,
        w_out: Vec<f64>,
        b_out: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Model("dimensions must be positive".into()));
        }
        if !(1..=2).contains(&out_masks) {
            return Err(Error::Model(format!("out_masks must be 1 or 2, got {out_masks}")));
        }
        let tensors = [&w_ih, &w_hh, &b_ih, &b_hh, &w_out, &b_out];
        for ((name, shape), t) in expected_shapes(input_dim, hidden_dim, out_masks).iter().zip(tensors) {
            let numel: usize = shape.iter().product();
            if t.len() != numel {
                return Err(Error::Model(format!(
                    "tensor {name} has {} values, expected shape {shape:?}",
                    t.len()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Model(format!("tensor {name} contains non-finite weights")));
            }
        }
        Ok(Self { input_dim, hidden_dim, out_masks, w_ih, w_hh, b_ih, b_hh, w_out, b_out })
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, out_masks: usize) -> Result<Self> {
        let g = 4 * hidden_dim;
        let out = out_masks * input_dim;
        Self::new(
            input_dim,
            hidden_dim,
            out_masks,
            vec![0.0; g * input_dim],
            vec![0.0; g * hidden_dim],
            vec![0.0; g],
            vec![0.0; g],
            vec![0.0; out * hidden_dim],
            vec![0.0; out],
        )
    }

    /// Uniform `±1/sqrt(hidden)` initialisation, the usual LSTM default.
    pub fn random(input_dim: usize, hidden_dim: usize, out_masks: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (hidden_dim as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-k..k)).collect::<Vec<f64>>();
        let g = 4 * hidden_dim;
        let out = out_masks * input_dim;
        let w_ih = draw(g * input_dim);
        let w_hh = draw(g * hidden_dim);
        let b_ih = draw(g);
        let b_hh = draw(g);
        let w_out = draw(out * hidden_dim);
        let b_out = draw(out);
        Self::new(input_dim, hidden_dim, out_masks, w_ih, w_hh, b_ih, b_hh, w_out, b_out)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn out_masks(&self) -> usize {
        self.out_masks
    }

    /// Parameters of the recurrent layer (both bias vectors included).
    pub fn lstm_parameters(&self) -> usize {
        self.w_ih.len() + self.w_hh.len() + self.b_ih.len() + self.b_hh.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.lstm_parameters() + self.w_out.len() + self.b_out.len()
    }

    pub fn initial_state(&self) -> ModelState {
        ModelState::zeros(self.hidden_dim)
    }

    fn tensors(&self) -> [&[f64]; 6] {
        [&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh, &self.w_out, &self.b_out]
    }

    pub fn step(&self, state: &mut ModelState, input: &[f64]) -> Result<Vec<MaskFrame>> {
        let (n_in, n_h) = (self.input_dim, self.hidden_dim);
        if input.len() != n_in {
            return Err(Error::shape(format!("model expects {n_in} inputs, got {}", input.len())));
        }
        if state.h.len() != n_h || state.c.len() != n_h {
            return Err(Error::shape("model state does not match hidden size"));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model input".into()));
        }
        let mut gates = vec![0.0; 4 * n_h];
        for (r, gate) in gates.iter_mut().enumerate() {
            let wi = &self.w_ih[r * n_in..(r + 1) * n_in];
            let wh = &self.w_hh[r * n_h..(r + 1) * n_h];
            let a: f64 = wi.iter().zip(input).map(|(w, x)| w * x).sum();
            let b: f64 = wh.iter().zip(&state.h).map(|(w, h)| w * h).sum();
            *gate = a + b + self.b_ih[r] + self.b_hh[r];
        }
        for j in 0..n_h {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[n_h + j]);
            let g = gates[2 * n_h + j].tanh();
            let o = sigmoid(gates[3 * n_h + j]);
            state.c[j] = f * state.c[j] + i * g;
            state.h[j] = o * state.c[j].tanh();
        }
        let out_dim = self.out_masks * n_in;
        let out: Vec<f64> = (0..out_dim)
            .map(|r| {
                let w = &self.w_out[r * n_h..(r + 1) * n_h];
                sigmoid(w.iter().zip(&state.h).map(|(w, h)| w * h).sum::<f64>() + self.b_out[r])
            })
            .collect();
        out.chunks(n_in).map(|m| MaskFrame::new(m.to_vec())).collect()
    }

    /// Steps through `frames` in order, returning the masks of every step.
    pub fn run(&self, state: &mut ModelState, frames: &[Vec<f64>]) -> Result<Vec<Vec<MaskFrame>>> {
        frames.iter().map(|x| self.step(state, x)).collect()
    }

    pub fn to_bytes(&self, dtype: Dtype) -> Vec<u8> {
        let mut data = Vec::new();
        let mut entries = Vec::new();
        for ((name, shape), t) in expected_shapes(self.input_dim, self.hidden_dim, self.out_masks)
            .into_iter()
            .zip(self.tensors())
        {
            let offset = data.len();
            for &v in t {
                match dtype {
                    Dtype::F32 => data.extend_from_slice(&(v as f32).to_le_bytes()),
                    Dtype::F64 => data.extend_from_slice(&v.to_le_bytes()),
                }
            }
            entries.push(TensorEntry {
                name: name.to_string(),
                shape,
                dtype,
                byte_offset: offset,
                byte_length: data.len() - offset,
            });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            out_masks: self.out_masks,
            gate_order: GATE_ORDER.into(),
            input_transform: INPUT_TRANSFORM.into(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut bytes = Vec::with_capacity(8 + json.len() + data.len());
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        bytes.extend_from_slice(&data);
        bytes
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>, dtype: Dtype) -> Result<()> {
        std::fs::write(path, self.to_bytes(dtype))?;
        Ok(())
    }
}

/// Parses and validates a weight container.
pub fn load_model(bytes: &[u8]) -> Result<LstmMaskModel> {
    let manifest = read_manifest(bytes)?;
    let body = &bytes[8 + manifest_len(bytes)?..];
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Model(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.gate_order != GATE_ORDER {
        return Err(Error::Model(format!(
            "gate_order `{}` unsupported, expected `{GATE_ORDER}`",
            manifest.gate_order
        )));
    }
    if manifest.input_transform != INPUT_TRANSFORM {
        return Err(Error::Model(format!(
            "input_transform `{}` unsupported, expected `{INPUT_TRANSFORM}`",
            manifest.input_transform
        )));
    }
    let mut tensors: Vec<Vec<f64>> = Vec::with_capacity(6);
    for (name, shape) in expected_shapes(manifest.input_dim, manifest.hidden_dim, manifest.out_masks) {
        let entry = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Model(format!("missing tensor {name}")))?;
        if entry.shape != shape {
            return Err(Error::Model(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                entry.shape
            )));
        }
        let numel: usize = shape.iter().product();
        if entry.byte_length != numel * entry.dtype.size() {
            return Err(Error::Model(format!(
                "tensor {name}: byte_length {} does not match {numel} {:?} values",
                entry.byte_length, entry.dtype
            )));
        }
        let raw = entry
            .byte_offset
            .checked_add(entry.byte_length)
            .and_then(|end| body.get(entry.byte_offset..end))
            .ok_or_else(|| Error::Model(format!("tensor {name} lies outside the data section")))?;
        let values: Vec<f64> = match entry.dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("tensor {name} contains non-finite weights")));
        }
        tensors.push(values);
    }
    for t in &manifest.tensors {
        if !["W_ih", "W_hh", "b_ih", "b_hh", "W_out", "b_out"].contains(&t.name.as_str()) {
            log::warn!("ignoring unknown tensor {}", t.name);
        }
    }
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("six tensors");
    LstmMaskModel::new(
        manifest.input_dim,
        manifest.hidden_dim,
        manifest.out_masks,
        next(),
        next(),
        next(),
        next(),
        next(),
        next(),
    )
}

fn manifest_len(bytes: &[u8]) -> Result<usize> {
    let head: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::Model("file shorter than the 8-byte manifest length".into()))?;
    let len = u64::from_le_bytes(head) as usize;
    if bytes.len() < 8 + len {
        return Err(Error::Model(format!("manifest length {len} exceeds file size")));
    }
    Ok(len)
}

/// Manifest only, without touching tensor data.
pub fn read_manifest(bytes: &[u8]) -> Result<Manifest> {
    let len = manifest_len(bytes)?;
    serde_json::from_slice(&bytes[8..8 + len])
        .map_err(|e| Error::Model(format!("malformed manifest: {e}")))
}

pub fn load_model_file(path: impl AsRef<std::path::Path>) -> Result<LstmMaskModel> {
    load_model(&std::fs::read(path)?)
}

//! Parameter naming, storage, initialization, and counting.
//!
//! The schema below is the single description of every layer in the network.
//! Initialization walks it in order with a seeded RNG, so weight files and
//! in-memory stores always agree on both names and ordering.

use super::{CtunConfig, UgruVariant};
use crate::error::{CtunError, Result};
use crate::tensor::{Scalar, Shape, Tensor};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named weight tensors with deterministic (insertion) iteration order.
#[derive(Clone)]
pub struct ParamStore<E: Scalar> {
    map: IndexMap<String, Tensor<E>>,
}

impl<E: Scalar> std::fmt::Debug for ParamStore<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ParamStore({} tensors)", self.map.len())
    }
}

impl<E: Scalar> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            map: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: String, tensor: Tensor<E>) -> Result<()> {
        if self.map.contains_key(&name) {
            return Err(CtunError::WeightMismatch {
                name,
                detail: "duplicate parameter name".into(),
            });
        }
        self.map.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.map.get(name).ok_or_else(|| CtunError::WeightMismatch {
            name: name.to_string(),
            detail: "missing parameter".into(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total element count over all tensors.
    pub fn total_elements(&self) -> usize {
        self.map.values().map(|t| t.shape().count()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum LayerKind {
    Conv { c_in: usize, c_out: usize, k: usize },
    LayerNorm { c: usize },
}

pub(crate) struct SchemaEntry {
    pub prefix: String,
    pub kind: LayerKind,
}

fn conv(prefix: impl Into<String>, c_in: usize, c_out: usize, k: usize) -> SchemaEntry {
    SchemaEntry {
        prefix: prefix.into(),
        kind: LayerKind::Conv { c_in, c_out, k },
    }
}

fn norm(prefix: impl Into<String>, c: usize) -> SchemaEntry {
    SchemaEntry {
        prefix: prefix.into(),
        kind: LayerKind::LayerNorm { c },
    }
}

/// Every layer of the network, in file order.
pub(crate) fn schema(config: &CtunConfig) -> Vec<SchemaEntry> {
    let c = config.channels;
    let rc = (c / 4).max(1);
    let mut entries = Vec::new();

    entries.push(conv("extractor.in", 3, c, 3));
    for i in 0..config.blocks.extractor {
        entries.push(conv(format!("extractor.res{i}.c1"), c, c, 3));
        entries.push(conv(format!("extractor.res{i}.c2"), c, c, 3));
    }

    for slot in ["prev", "cur", "next"] {
        entries.push(norm(format!("icam.{slot}.ln"), c));
        entries.push(conv(format!("icam.{slot}.seb.c1"), c, c, 3));
        entries.push(conv(format!("icam.{slot}.seb.c2"), c, c, 3));
        entries.push(conv(format!("icam.{slot}.seb.gate"), 2, 1, 7));
    }

    entries.push(conv("prop.in", 3 * c, c, 3));
    for i in 0..config.blocks.propagation {
        entries.push(conv(format!("prop.res{i}.c1"), c, c, 3));
        entries.push(conv(format!("prop.res{i}.c2"), c, c, 3));
    }

    entries.push(conv("hu.fuse", 3 * c, c, 1));
    entries.push(conv("hu.enc.ca.fc1", c, rc, 1));
    entries.push(conv("hu.enc.ca.fc2", rc, c, 1));
    entries.push(conv("hu.enc.gate", 2, 1, 7));
    if config.ugru_variant == UgruVariant::Split {
        entries.push(conv("hu.ugru.expand", c, 3 * c, 1));
    }
    entries.push(conv("hu.ugru.z", c, c, 3));
    entries.push(conv("hu.ugru.w", c, c, 3));
    entries.push(conv("hu.ugru.q", c, c, 3));

    entries.push(conv("recon.in", 3 * c, c, 3));
    for i in 0..config.blocks.reconstruction {
        entries.push(conv(format!("recon.res{i}.c1"), c, c, 3));
        entries.push(conv(format!("recon.res{i}.c2"), c, c, 3));
    }
    for j in 0..config.upsample_stages() {
        entries.push(conv(format!("recon.up{j}"), c, 4 * c, 3));
    }
    entries.push(conv("recon.out", c, 3, 3));

    entries
}

/// Analytic parameter count: conv layers contribute co*ci*k^2 + co, layer
/// norms 2c. Must equal the element total of an initialized store exactly.
pub fn param_count(config: &CtunConfig) -> usize {
    schema(config)
        .iter()
        .map(|e| match e.kind {
            LayerKind::Conv { c_in, c_out, k } => c_out * c_in * k * k + c_out,
            LayerKind::LayerNorm { c } => 2 * c,
        })
        .sum()
}

/// Fresh parameters: fan-in-scaled uniform conv weights, zero biases,
/// gamma = 1 and beta = 0 for the norms. Deterministic for a given seed.
pub fn init_params<E: Scalar>(config: &CtunConfig, seed: u64, requires_grad: bool) -> ParamStore<E> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for entry in schema(config) {
        match entry.kind {
            LayerKind::Conv { c_in, c_out, k } => {
                let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
                let w: Vec<E> = (0..c_out * c_in * k * k)
                    .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
                    .collect();
                store
                    .insert(
                        format!("{}.weight", entry.prefix),
                        Tensor::leaf(w, Shape::new(c_out, c_in, k, k), requires_grad),
                    )
                    .expect("schema names are unique");
                store
                    .insert(
                        format!("{}.bias", entry.prefix),
                        Tensor::leaf(
                            vec![E::ZERO; c_out],
                            Shape::new(1, c_out, 1, 1),
                            requires_grad,
                        ),
                    )
                    .expect("schema names are unique");
            }
            LayerKind::LayerNorm { c } => {
                store
                    .insert(
                        format!("{}.gamma", entry.prefix),
                        Tensor::leaf(vec![E::ONE; c], Shape::new(1, c, 1, 1), requires_grad),
                    )
                    .expect("schema names are unique");
                store
                    .insert(
                        format!("{}.beta", entry.prefix),
                        Tensor::leaf(vec![E::ZERO; c], Shape::new(1, c, 1, 1), requires_grad),
                    )
                    .expect("schema names are unique");
            }
        }
    }
    store
}

/// All-zero parameters (gamma included); useful for identity checks.
pub fn zero_params<E: Scalar>(config: &CtunConfig) -> ParamStore<E> {
    let mut store = ParamStore::new();
    for entry in schema(config) {
        match entry.kind {
            LayerKind::Conv { c_in, c_out, k } => {
                store
                    .insert(
                        format!("{}.weight", entry.prefix),
                        Tensor::zeros(Shape::new(c_out, c_in, k, k)),
                    )
                    .expect("unique");
                store
                    .insert(
                        format!("{}.bias", entry.prefix),
                        Tensor::zeros(Shape::new(1, c_out, 1, 1)),
                    )
                    .expect("unique");
            }
            LayerKind::LayerNorm { c } => {
                store
                    .insert(
                        format!("{}.gamma", entry.prefix),
                        Tensor::zeros(Shape::new(1, c, 1, 1)),
                    )
                    .expect("unique");
                store
                    .insert(
                        format!("{}.beta", entry.prefix),
                        Tensor::zeros(Shape::new(1, c, 1, 1)),
                    )
                    .expect("unique");
            }
        }
    }
    store
}

/// Expected tensor shapes for validation against a loaded store.
pub(crate) fn expected_shapes(config: &CtunConfig) -> Vec<(String, Shape)> {
    let mut out = Vec::new();
    for entry in schema(config) {
        match entry.kind {
            LayerKind::Conv { c_in, c_out, k } => {
                out.push((format!("{}.weight", entry.prefix), Shape::new(c_out, c_in, k, k)));
                out.push((format!("{}.bias", entry.prefix), Shape::new(1, c_out, 1, 1)));
            }
            LayerKind::LayerNorm { c } => {
                out.push((format!("{}.gamma", entry.prefix), Shape::new(1, c, 1, 1)));
                out.push((format!("{}.beta", entry.prefix), Shape::new(1, c, 1, 1)));
            }
        }
    }
    out
}

/// Plain-text layer table: name, shape, parameter count, FLOPs per output
/// pixel at that layer's own resolution (1 MAC = 2 FLOPs).
pub fn describe(config: &CtunConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<22} {:>16} {:>10} {:>12}\n",
        "layer", "shape", "params", "flops/px"
    ));
    let mut total = 0usize;
    for entry in schema(config) {
        let (shape_str, params, flops_px) = match entry.kind {
            LayerKind::Conv { c_in, c_out, k } => (
                format!("{c_out}x{c_in}x{k}x{k}"),
                c_out * c_in * k * k + c_out,
                2 * c_in * c_out * k * k,
            ),
            LayerKind::LayerNorm { c } => (format!("2x{c}"), 2 * c, 8 * c),
        };
        total += params;
        out.push_str(&format!(
            "{:<22} {:>16} {:>10} {:>12}\n",
            entry.prefix, shape_str, params, flops_px
        ));
    }
    out.push_str(&format!("{:<22} {:>16} {:>10}\n", "total", "", total));
    out
}

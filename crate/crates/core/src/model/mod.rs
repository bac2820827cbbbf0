//! Layer-graph representation of NN models.
//!
//! A [`LayerGraph`] is a DAG of typed layers. Edges carry the number of
//! activation bytes the producer hands to the consumer; that number is always
//! derived from the producer's output shape and never taken from input files.

mod json;
mod lower;
mod synth;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::characterize::{output_dims, GeometryError};

pub use json::{parse_model, parse_model_with_warnings, serialize_model};
pub use lower::lower_lstm;
pub use synth::{
    generate_synthetic, Archetype, SyntheticSpec, CNN_PALETTE, LSTM_HIDDEN_PALETTE, LSTM_TIMESTEP_PALETTE,
    TRANSDUCER_JOINT_OUT,
};
pub use validate::{topological_order, validate_graph, Violation};

pub type LayerId = u32;

/// Number of gates in an LSTM cell.
pub const LSTM_GATES: u32 = 4;

/// Geometry shared by the convolution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvShape {
    pub hi: u32,
    pub wi: u32,
    pub cin: u32,
    pub cout: u32,
    pub kh: u32,
    pub kw: u32,
    pub stride: u32,
    pub padding: u32,
}

impl ConvShape {
    pub fn new(hi: u32, wi: u32, cin: u32, cout: u32, k: u32, stride: u32, padding: u32) -> Self {
        Self { hi, wi, cin, cout, kh: k, kw: k, stride, padding }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LstmShape {
    pub d_in: u32,
    pub d_h: u32,
    pub timesteps: u32,
    pub gates: u32,
}

/// One gate of one LSTM cell: the input MVM (`d_h x d_in`) plus the hidden MVM
/// (`d_h x d_h`) at timestep `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GateShape {
    pub d_in: u32,
    pub d_h: u32,
    pub t: u32,
    pub gate: u32,
}

impl GateShape {
    pub fn input_params(&self) -> u64 {
        self.d_in as u64 * self.d_h as u64
    }

    pub fn hidden_params(&self) -> u64 {
        self.d_h as u64 * self.d_h as u64
    }
}

/// Cell-state update of timestep `t`: combines the four gate outputs into
/// `c_t` and `h_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JoinShape {
    pub d_h: u32,
    pub t: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Conv(ConvShape),
    Depthwise(ConvShape),
    Pointwise(ConvShape),
    FullyConnected { inputs: u32, outputs: u32 },
    LstmLayer(LstmShape),
    LstmGateUnit(GateShape),
    LstmCellJoin(JoinShape),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    Depthwise,
    Pointwise,
    FullyConnected,
    LstmLayer,
    LstmGateUnit,
    LstmCellJoin,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::Conv,
        LayerKind::Depthwise,
        LayerKind::Pointwise,
        LayerKind::FullyConnected,
        LayerKind::LstmLayer,
        LayerKind::LstmGateUnit,
        LayerKind::LstmCellJoin,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Conv => "Conv",
            LayerKind::Depthwise => "Depthwise",
            LayerKind::Pointwise => "Pointwise",
            LayerKind::FullyConnected => "FullyConnected",
            LayerKind::LstmLayer => "LstmLayer",
            LayerKind::LstmGateUnit => "LstmGateUnit",
            LayerKind::LstmCellJoin => "LstmCellJoin",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Matrix-vector shaped work (plus the elementwise cell update that
    /// accompanies LSTM gates).
    pub fn is_mvm(&self) -> bool {
        matches!(self, LayerKind::FullyConnected | LayerKind::LstmGateUnit | LayerKind::LstmCellJoin)
    }

    pub fn is_conv_family(&self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Depthwise | LayerKind::Pointwise)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Shape {
    pub fn kind(&self) -> LayerKind {
        match self {
            Shape::Conv(_) => LayerKind::Conv,
            Shape::Depthwise(_) => LayerKind::Depthwise,
            Shape::Pointwise(_) => LayerKind::Pointwise,
            Shape::FullyConnected { .. } => LayerKind::FullyConnected,
            Shape::LstmLayer(_) => LayerKind::LstmLayer,
            Shape::LstmGateUnit(_) => LayerKind::LstmGateUnit,
            Shape::LstmCellJoin(_) => LayerKind::LstmCellJoin,
        }
    }

    pub fn conv(&self) -> Option<&ConvShape> {
        match self {
            Shape::Conv(c) | Shape::Depthwise(c) | Shape::Pointwise(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Layer {
    pub id: LayerId,
    pub shape: Shape,
    /// Bytes per tensor element.
    pub datum: u32,
}

impl Layer {
    pub fn new(id: LayerId, shape: Shape) -> Self {
        Self { id, shape, datum: 1 }
    }

    pub fn kind(&self) -> LayerKind {
        self.shape.kind()
    }

    /// Output tensor element count.
    pub fn out_elems(&self) -> Result<u64, GeometryError> {
        Ok(match &self.shape {
            Shape::Conv(c) | Shape::Depthwise(c) | Shape::Pointwise(c) => {
                let (ho, wo) = output_dims(c)?;
                ho as u64 * wo as u64 * c.cout as u64
            }
            Shape::FullyConnected { outputs, .. } => *outputs as u64,
            Shape::LstmLayer(l) => l.timesteps as u64 * l.d_h as u64,
            Shape::LstmGateUnit(g) => g.d_h as u64,
            Shape::LstmCellJoin(j) => j.d_h as u64,
        })
    }

    /// Input tensor element count.
    pub fn in_elems(&self) -> u64 {
        match &self.shape {
            Shape::Conv(c) | Shape::Depthwise(c) | Shape::Pointwise(c) => c.hi as u64 * c.wi as u64 * c.cin as u64,
            Shape::FullyConnected { inputs, .. } => *inputs as u64,
            Shape::LstmLayer(l) => l.timesteps as u64 * l.d_in as u64,
            // x_t and h_{t-1}
            Shape::LstmGateUnit(g) => g.d_in as u64 + g.d_h as u64,
            // the four gate activations
            Shape::LstmCellJoin(j) => LSTM_GATES as u64 * j.d_h as u64,
        }
    }

    pub fn out_act_bytes(&self) -> Result<u64, GeometryError> {
        Ok(self.out_elems()? * self.datum as u64)
    }

    pub fn in_act_bytes(&self) -> u64 {
        self.in_elems() * self.datum as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: LayerId,
    pub dst: LayerId,
    /// Activation bytes moved from `src` to `dst`.
    pub bytes: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed model file: {0}")]
    Syntax(String),
    #[error("layer {id}: unknown layer kind `{kind}`")]
    UnknownKind { id: String, kind: String },
    #[error("layer {id}: {reason}")]
    BadLayer { id: String, reason: String },
    #[error("edge ({src}, {dst}) references missing layer {missing}")]
    DanglingEdge { src: LayerId, dst: LayerId, missing: LayerId },
    #[error("cycle detected through layers {0:?}")]
    Cycle(Vec<LayerId>),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

impl From<Violation> for ModelError {
    fn from(v: Violation) -> Self {
        match v {
            Violation::DanglingEdge { src, dst, missing } => ModelError::DanglingEdge { src, dst, missing },
            Violation::Cycle { ids } => ModelError::Cycle(ids),
            other => ModelError::Invalid(other.to_string()),
        }
    }
}

/// A DAG of layers. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerGraph {
    name: String,
    layers: Vec<Layer>,
    edges: Vec<Edge>,
}

impl LayerGraph {
    /// Builds a graph from `(src, dst)` pairs, deriving edge bytes from the
    /// producers, and rejects it if any invariant is violated.
    pub fn new(name: impl Into<String>, layers: Vec<Layer>, edges: &[(LayerId, LayerId)]) -> Result<Self, ModelError> {
        let graph = Self::with_derived_edges(name, layers, edges);
        if let Some(v) = validate_graph(&graph).into_iter().next() {
            return Err(v.into());
        }
        Ok(graph)
    }

    /// Builds a graph with derived edge bytes but without validating it.
    /// Edges whose producer is missing or has broken geometry get 0 bytes.
    pub fn with_derived_edges(name: impl Into<String>, layers: Vec<Layer>, edges: &[(LayerId, LayerId)]) -> Self {
        let by_id: BTreeMap<LayerId, &Layer> = layers.iter().map(|l| (l.id, l)).collect();
        let edges = edges
            .iter()
            .map(|&(src, dst)| Edge {
                src,
                dst,
                bytes: by_id.get(&src).and_then(|l| l.out_act_bytes().ok()).unwrap_or(0),
            })
            .collect();
        Self { name: name.into(), layers, edges }
    }

    /// Assembles a graph verbatim, for inspecting invalid inputs with
    /// [`validate_graph`].
    pub fn from_parts_unchecked(name: impl Into<String>, layers: Vec<Layer>, edges: Vec<Edge>) -> Self {
        Self { name: name.into(), layers, edges }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn layer(&self, id: LayerId) -> Option<&Layer> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn index_of(&self) -> BTreeMap<LayerId, usize> {
        self.layers.iter().enumerate().map(|(i, l)| (l.id, i)).collect()
    }

    /// Producers of each layer, as edge indices, keyed by consumer id.
    pub fn incoming(&self) -> BTreeMap<LayerId, Vec<usize>> {
        let mut map: BTreeMap<LayerId, Vec<usize>> = self.layers.iter().map(|l| (l.id, Vec::new())).collect();
        for (i, e) in self.edges.iter().enumerate() {
            map.entry(e.dst).or_default().push(i);
        }
        map
    }

    /// Same graph with one edge removed.
    pub fn without_edge(&self, index: usize) -> Self {
        let mut edges = self.edges.clone();
        edges.remove(index);
        Self { name: self.name.clone(), layers: self.layers.clone(), edges }
    }

    pub fn is_lowered(&self) -> bool {
        !self.layers.iter().any(|l| l.kind() == LayerKind::LstmLayer)
    }

    pub fn max_id(&self) -> Option<LayerId> {
        self.layers.iter().map(|l| l.id).max()
    }
}

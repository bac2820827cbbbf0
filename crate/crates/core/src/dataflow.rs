//! Traffic and cycle models for the four dataflows.
//!
//! Notation used below: `N` PEs, `M` MACs, `P` parameter bytes, `Ain`/`Aout`
//! activation bytes, `E` output elements, `wp` partial-sum width in bytes.
//! NoC bytes are counted once at injection, so a multicast costs its payload.

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::accel::{AcceleratorConfig, Dataflow, TechnologyTable};
use crate::characterize::LayerProfile;
use crate::model::{GateShape, LayerKind, LstmShape, Shape, LSTM_GATES};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataflowError {
    #[error("{kind} units cannot run on a {dataflow} accelerator")]
    Incompatible { kind: LayerKind, dataflow: Dataflow },
}

/// How often a unit's parameters must come from DRAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamResidency {
    /// The unit runs once; its parameters are fetched once.
    Once,
    /// One invocation of a recurrent layer. `layer_params` is the working set
    /// shared by all timesteps (every gate of the layer).
    Recurrent { timestep: u32, layer_params: u64 },
}

impl ParamResidency {
    pub fn of(p: &LayerProfile) -> Self {
        match p.shape {
            Shape::LstmGateUnit(g) => {
                ParamResidency::Recurrent { timestep: g.t, layer_params: LSTM_GATES as u64 * p.param_bytes }
            }
            _ => ParamResidency::Once,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataflowOptions {
    pub psum_width: u32,
    /// Stream the hidden matrix from DRAM every timestep on the decoupled
    /// LSTM dataflow instead of accumulating `K` partial sums.
    pub hidden_refetch: bool,
}

impl DataflowOptions {
    pub fn new(t: &TechnologyTable, hidden_refetch: bool) -> Self {
        Self { psum_width: t.psum_width, hidden_refetch }
    }
}

impl Default for DataflowOptions {
    fn default() -> Self {
        Self { psum_width: 4, hidden_refetch: false }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct DataflowCost {
    pub dram_param_bytes: u64,
    pub dram_in_act_bytes: u64,
    pub dram_out_act_bytes: u64,
    pub noc_param_bytes: u64,
    pub noc_psum_bytes: u64,
    pub noc_act_bytes: u64,
    pub buf_param_accesses: u64,
    pub buf_act_accesses: u64,
    pub rf_accesses: u64,
    pub compute_cycles: u64,
    /// Parameters stream sequentially from DRAM.
    pub sequential_dram: bool,
}

impl DataflowCost {
    pub fn dram_bytes(&self) -> u64 {
        self.dram_param_bytes + self.dram_in_act_bytes + self.dram_out_act_bytes
    }

    pub fn noc_bytes(&self) -> u64 {
        self.noc_param_bytes + self.noc_psum_bytes + self.noc_act_bytes
    }
}

pub fn is_compatible(kind: LayerKind, dataflow: Dataflow) -> bool {
    match (kind, dataflow) {
        (LayerKind::LstmLayer, _) => false,
        (_, Dataflow::AccelB) => kind.is_mvm(),
        _ => true,
    }
}

/// Baseline residency rule: parameters stay in the buffer across timesteps
/// only if the whole layer fits; there is no partial caching.
fn refetched_params(p: u64, residency: ParamResidency, param_buffer: u64) -> u64 {
    match residency {
        ParamResidency::Once => p,
        ParamResidency::Recurrent { timestep, layer_params } => {
            if layer_params <= param_buffer && timestep > 0 {
                0
            } else {
                p
            }
        }
    }
}

/// Partial sums a PE register file can hold while a parameter sub-row is
/// resident: `floor((rf - datum) / wp)`, at least 1.
pub fn partial_sum_slots(a: &AcceleratorConfig, datum: u32, psum_width: u32) -> u64 {
    (a.pe_rf.saturating_sub(datum as u64) / psum_width as u64).max(1)
}

/// Decoupled LSTM dataflow: each matrix is fetched once per `K` timesteps.
fn decoupled_gate_params(g: &GateShape, datum: u32, k: u64, hidden_refetch: bool) -> u64 {
    let d = datum as u64;
    let window_start = (g.t as u64).is_multiple_of(k);
    let wx = if window_start { g.input_params() * d } else { 0 };
    let wh = if window_start || hidden_refetch { g.hidden_params() * d } else { 0 };
    wx + wh
}

fn dram_acts(p: &LayerProfile, a: &AcceleratorConfig) -> (u64, u64) {
    let spill = |bytes: u64| if bytes > a.act_buffer { bytes } else { 0 };
    (spill(p.in_act_bytes), spill(p.out_act_bytes))
}

/// Traffic counters and cycles of one unit on one accelerator.
pub fn dataflow_cost(
    p: &LayerProfile,
    a: &AcceleratorConfig,
    residency: ParamResidency,
    opts: &DataflowOptions,
) -> Result<DataflowCost, DataflowError> {
    if !is_compatible(p.kind, a.dataflow) {
        return Err(DataflowError::Incompatible { kind: p.kind, dataflow: a.dataflow });
    }
    let n = a.pes();
    let m = p.macs;
    let wp = opts.psum_width as u64;
    let e = p.out_elems.max(1);
    let (dram_in, dram_out) = dram_acts(p, a);
    let (ain, aout) = (p.in_act_bytes, p.out_act_bytes);
    let broadcast_act = ain * e.div_ceil(n);

    let mut c = DataflowCost { dram_in_act_bytes: dram_in, dram_out_act_bytes: dram_out, ..Default::default() };
    match a.dataflow {
        Dataflow::BaselineSystolic => {
            c.dram_param_bytes = refetched_params(p.param_bytes, residency, a.param_buffer);
            c.noc_param_bytes = c.dram_param_bytes;
            c.noc_psum_bytes = m * wp;
            c.noc_act_bytes = broadcast_act;
            c.buf_param_accesses = c.dram_param_bytes + c.noc_param_bytes;
            c.buf_act_accesses = c.noc_act_bytes + aout;
            c.rf_accesses = m;
            c.compute_cycles = m.div_ceil(n) + a.pe_rows as u64 + a.pe_cols as u64;
        }
        Dataflow::AccelA => {
            c.dram_param_bytes = refetched_params(p.param_bytes, residency, a.param_buffer);
            c.noc_param_bytes = c.dram_param_bytes;
            c.noc_act_bytes = broadcast_act;
            c.buf_param_accesses = c.dram_param_bytes + c.noc_param_bytes;
            c.buf_act_accesses = c.noc_act_bytes + aout;
            // temporal reduction: read and write the accumulator per MAC
            c.rf_accesses = 2 * m;
            // each PE owns output elements; one pass covers N of them
            c.compute_cycles = e.div_ceil(n) * m.div_ceil(e);
        }
        Dataflow::AccelB => {
            c.dram_param_bytes = match p.shape {
                Shape::LstmGateUnit(g) => {
                    let k = partial_sum_slots(a, p.datum, opts.psum_width);
                    decoupled_gate_params(&g, p.datum, k, opts.hidden_refetch)
                }
                _ => p.param_bytes,
            };
            c.noc_param_bytes = c.dram_param_bytes;
            c.noc_act_bytes = broadcast_act;
            c.buf_act_accesses = c.noc_act_bytes + aout;
            // parameters land in the register files straight from DRAM
            c.rf_accesses = 2 * m + c.dram_param_bytes;
            c.compute_cycles = m.div_ceil(n);
            c.sequential_dram = true;
        }
        Dataflow::AccelC => {
            c.dram_param_bytes = refetched_params(p.param_bytes, residency, a.param_buffer);
            c.noc_param_bytes = c.dram_param_bytes;
            c.noc_psum_bytes = m * wp;
            c.noc_act_bytes = ain;
            c.buf_param_accesses = c.dram_param_bytes + c.noc_param_bytes;
            c.buf_act_accesses = ain + aout;
            c.rf_accesses = m;
            c.compute_cycles = m.div_ceil(n);
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrafficMode {
    /// Baseline residency rule, one gate invocation at a time.
    Naive,
    /// Decoupled dataflow with `K` register-file partial sums.
    Decoupled,
}

/// DRAM parameter bytes of a whole LSTM layer over all its timesteps.
pub fn lstm_layer_param_traffic(
    layer: &LstmShape,
    datum: u32,
    a: &AcceleratorConfig,
    mode: TrafficMode,
    opts: &DataflowOptions,
) -> u64 {
    let d = datum as u64;
    let gate_params = (layer.d_in as u64 * layer.d_h as u64 + layer.d_h as u64 * layer.d_h as u64) * d;
    let layer_params = layer.gates as u64 * gate_params;
    let k = partial_sum_slots(a, datum, opts.psum_width);
    let mut total = 0;
    for t in 0..layer.timesteps {
        for gate in 0..layer.gates {
            total += match mode {
                TrafficMode::Naive => refetched_params(
                    gate_params,
                    ParamResidency::Recurrent { timestep: t, layer_params },
                    a.param_buffer,
                ),
                TrafficMode::Decoupled => {
                    let g = GateShape { d_in: layer.d_in, d_h: layer.d_h, t, gate };
                    decoupled_gate_params(&g, datum, k, opts.hidden_refetch)
                }
            };
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReuseVariant {
    /// Parameters replicated across PEs, outputs split among them.
    Replicated,
    /// Each parameter pinned to one PE for the whole output plane.
    Stationary,
}

/// Cycles a parameter is reused: `Ho*Wo / N` when replicated, `Ho*Wo` when
/// stationary.
pub fn reuse_factor(p: &LayerProfile, variant: ReuseVariant, pes: u64) -> Ratio<u64> {
    let plane = p.spatial_out();
    match variant {
        ReuseVariant::Replicated => Ratio::new(plane, pes),
        ReuseVariant::Stationary => Ratio::from_integer(plane),
    }
}

//! Per-unit work and footprint metrics.
//!
//! One FLOP is one MAC throughout. Intensities are exact ratios so that
//! `param_intensity * param_bytes == macs` holds without rounding.

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ConvShape, Layer, LayerGraph, LayerId, LayerKind, Shape, LSTM_GATES};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("{axis} kernel {kernel} exceeds padded input {padded}")]
    KernelTooLarge { axis: &'static str, kernel: u32, padded: u64 },
    #[error("stride must be >= 1")]
    ZeroStride,
}

/// Output spatial size of a convolution-family layer.
pub fn output_dims(c: &ConvShape) -> Result<(u32, u32), GeometryError> {
    if c.stride == 0 {
        return Err(GeometryError::ZeroStride);
    }
    let axis = |name, input: u32, k: u32| {
        let padded = input as u64 + 2 * c.padding as u64;
        if padded < k as u64 {
            return Err(GeometryError::KernelTooLarge { axis: name, kernel: k, padded });
        }
        Ok(((padded - k as u64) / c.stride as u64 + 1) as u32)
    };
    Ok((axis("height", c.hi, c.kh)?, axis("width", c.wi, c.kw)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerProfile {
    pub unit_id: LayerId,
    pub kind: LayerKind,
    pub shape: Shape,
    pub macs: u64,
    pub param_bytes: u64,
    pub in_act_bytes: u64,
    pub out_act_bytes: u64,
    /// Output tensor elements (`Ho*Wo*Cout` for convolutions).
    pub out_elems: u64,
    pub datum: u32,
}

impl LayerProfile {
    /// MACs per parameter byte; `None` for parameter-free units.
    pub fn param_intensity(&self) -> Option<Ratio<u64>> {
        (self.param_bytes > 0).then(|| Ratio::new(self.macs, self.param_bytes))
    }

    /// MACs per byte of input plus output activations.
    pub fn act_intensity(&self) -> Option<Ratio<u64>> {
        let act = self.in_act_bytes + self.out_act_bytes;
        (act > 0).then(|| Ratio::new(self.macs, act))
    }

    /// Parameter plus activation bytes.
    pub fn footprint(&self) -> u64 {
        self.param_bytes + self.in_act_bytes + self.out_act_bytes
    }

    /// Output elements per output channel (`Ho*Wo`); equals `out_elems` for
    /// non-convolutional units.
    pub fn spatial_out(&self) -> u64 {
        match self.shape.conv() {
            Some(c) => self.out_elems / c.cout as u64,
            None => self.out_elems,
        }
    }
}

/// Computes MACs, footprints and intensities for one layer or lowered unit.
pub fn layer_profile(layer: &Layer) -> Result<LayerProfile, GeometryError> {
    let d = layer.datum as u64;
    let (macs, params) = match &layer.shape {
        Shape::Conv(c) | Shape::Pointwise(c) => {
            let (ho, wo) = output_dims(c)?;
            let kernel = c.kh as u64 * c.kw as u64 * c.cin as u64 * c.cout as u64;
            (ho as u64 * wo as u64 * kernel, kernel * d)
        }
        Shape::Depthwise(c) => {
            let (ho, wo) = output_dims(c)?;
            let kernel = c.kh as u64 * c.kw as u64 * c.cin as u64;
            (ho as u64 * wo as u64 * kernel, kernel * d)
        }
        Shape::FullyConnected { inputs, outputs } => {
            let n = *inputs as u64 * *outputs as u64;
            (n, n * d)
        }
        Shape::LstmGateUnit(g) => {
            let n = g.input_params() + g.hidden_params();
            (n, n * d)
        }
        // c_t = f*c + i*g, h_t = o*tanh(c_t)
        Shape::LstmCellJoin(j) => (3 * j.d_h as u64, 0),
        Shape::LstmLayer(l) => {
            let gate = l.d_in as u64 * l.d_h as u64 + l.d_h as u64 * l.d_h as u64;
            let gates = LSTM_GATES as u64;
            (l.timesteps as u64 * gates * gate, gates * gate * d)
        }
    };
    Ok(LayerProfile {
        unit_id: layer.id,
        kind: layer.kind(),
        shape: layer.shape,
        macs,
        param_bytes: params,
        in_act_bytes: layer.in_act_bytes(),
        out_act_bytes: layer.out_act_bytes()?,
        out_elems: layer.out_elems()?,
        datum: layer.datum,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub units: u64,
    pub macs: u64,
    pub param_bytes: u64,
    pub in_act_bytes: u64,
    pub out_act_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSummary {
    pub profiles: Vec<LayerProfile>,
    pub totals: Totals,
}

/// Profiles every unit of `g` in layer-list order, with exact totals.
pub fn model_summary(g: &LayerGraph) -> Result<ModelSummary, GeometryError> {
    let profiles = g.layers().iter().map(layer_profile).collect::<Result<Vec<_>, _>>()?;
    let mut totals = Totals::default();
    for p in &profiles {
        totals.units += 1;
        totals.macs += p.macs;
        totals.param_bytes += p.param_bytes;
        totals.in_act_bytes += p.in_act_bytes;
        totals.out_act_bytes += p.out_act_bytes;
    }
    Ok(ModelSummary { profiles, totals })
}

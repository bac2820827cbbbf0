//! Energy accounting and rooflines.

use std::ops::Add;

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::accel::{leakage_power, AccelError, AcceleratorConfig, Placement, Platform, TechnologyTable};
use crate::dataflow::DataflowCost;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnergyError {
    #[error("arithmetic intensity must be positive")]
    ZeroIntensity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBreakdown<S> {
    pub pe_dynamic: S,
    pub buffer_dynamic: S,
    pub noc_dynamic: S,
    pub dram_dynamic: S,
    pub offchip_link: S,
    pub static_total: S,
    pub total: S,
}

impl<S: Scalar> EnergyBreakdown<S> {
    pub fn new(
        pe_dynamic: S,
        buffer_dynamic: S,
        noc_dynamic: S,
        dram_dynamic: S,
        offchip_link: S,
        static_total: S,
    ) -> Self {
        let total = pe_dynamic.clone()
            + buffer_dynamic.clone()
            + noc_dynamic.clone()
            + dram_dynamic.clone()
            + offchip_link.clone()
            + static_total.clone();
        Self { pe_dynamic, buffer_dynamic, noc_dynamic, dram_dynamic, offchip_link, static_total, total }
    }

    pub fn zero() -> Self {
        Self::new(S::zero(), S::zero(), S::zero(), S::zero(), S::zero(), S::zero())
    }

    pub fn components(&self) -> [&S; 6] {
        [
            &self.pe_dynamic,
            &self.buffer_dynamic,
            &self.noc_dynamic,
            &self.dram_dynamic,
            &self.offchip_link,
            &self.static_total,
        ]
    }

    /// Sum of the six components, recomputed.
    pub fn component_sum(&self) -> S {
        self.components().into_iter().fold(S::zero(), |acc, c| acc + c.clone())
    }

    pub fn with_static(self, static_total: S) -> Self {
        Self::new(
            self.pe_dynamic,
            self.buffer_dynamic,
            self.noc_dynamic,
            self.dram_dynamic,
            self.offchip_link,
            static_total,
        )
    }

    pub fn to_f64(&self) -> EnergyBreakdown<f64> {
        EnergyBreakdown {
            pe_dynamic: self.pe_dynamic.to_f64(),
            buffer_dynamic: self.buffer_dynamic.to_f64(),
            noc_dynamic: self.noc_dynamic.to_f64(),
            dram_dynamic: self.dram_dynamic.to_f64(),
            offchip_link: self.offchip_link.to_f64(),
            static_total: self.static_total.to_f64(),
            total: self.total.to_f64(),
        }
    }
}

impl<S: Scalar> Add for EnergyBreakdown<S> {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(
            self.pe_dynamic + o.pe_dynamic,
            self.buffer_dynamic + o.buffer_dynamic,
            self.noc_dynamic + o.noc_dynamic,
            self.dram_dynamic + o.dram_dynamic,
            self.offchip_link + o.offchip_link,
            self.static_total + o.static_total,
        )
    }
}

/// DRAM and off-chip link energy of `bytes` moved by an accelerator with the
/// given placement.
pub fn dram_energy<S: Scalar>(bytes: u64, placement: Placement, t: &TechnologyTable) -> (S, S) {
    let (dram_scale, link_scale) = t.placement_scales::<S>(placement);
    let b = S::from_u64(bytes);
    (b.clone() * S::from_decimal(t.e_dram) * dram_scale, b * S::from_decimal(t.e_offchip_link) * link_scale)
}

/// Dynamic energy of one unit. Static energy is charged platform-wide.
pub fn layer_energy<S: Scalar>(
    c: &DataflowCost,
    macs: u64,
    a: &AcceleratorConfig,
    t: &TechnologyTable,
) -> Result<EnergyBreakdown<S>, AccelError> {
    let pe = S::from_u64(macs) * S::from_decimal(t.e_mac);
    let (dram, link) = dram_energy::<S>(c.dram_bytes(), a.placement, t);
    let noc = S::from_u64(c.noc_bytes()) * S::from_decimal(t.e_noc);
    let mut buffer = S::zero();
    if c.buf_param_accesses > 0 {
        buffer = buffer + S::from_u64(c.buf_param_accesses) * t.buffer_energy_per_byte::<S>(a.param_buffer)?;
    }
    if c.buf_act_accesses > 0 {
        buffer = buffer + S::from_u64(c.buf_act_accesses) * t.buffer_energy_per_byte::<S>(a.act_buffer)?;
    }
    Ok(EnergyBreakdown::new(pe, buffer, noc, dram, link, S::zero()))
}

/// Leakage energy of each accelerator over `horizon` seconds, in platform
/// order. Idle accelerators leak too.
pub fn static_energy<S: Scalar>(platform: &Platform, horizon: &S) -> Vec<S> {
    platform.accelerators.iter().map(|a| leakage_power::<S>(a, &platform.technology) * horizon.clone()).collect()
}

/// Attainable FLOP/s at arithmetic intensity `ai`.
pub fn roofline_throughput<S: Scalar>(ai: &S, a: &AcceleratorConfig) -> S {
    let peak = S::from_u64(a.peak_flops());
    S::min_of(peak, ai.clone() * S::from_u64(a.dram_bandwidth))
}

/// Intensity at which the throughput roofline reaches peak.
pub fn ridge_point(a: &AcceleratorConfig) -> Ratio<u64> {
    Ratio::new(a.peak_flops(), a.dram_bandwidth)
}

/// FLOP per joule at arithmetic intensity `ai`, counting MAC, DRAM and
/// off-chip link energy.
pub fn roofline_energy_efficiency<S: Scalar>(ai: &S, t: &TechnologyTable) -> Result<S, EnergyError> {
    if ai.is_zero() {
        return Err(EnergyError::ZeroIntensity);
    }
    let per_byte = S::from_decimal(t.e_dram) + S::from_decimal(t.e_offchip_link);
    Ok(S::one() / (S::from_decimal(t.e_mac) + per_byte / ai.clone()))
}

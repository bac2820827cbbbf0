//! Accelerator, platform and technology configuration.
//!
//! All physical coefficients are SI: joules, watts, hertz, bytes per second,
//! mm². Buffer capacities are bytes; the per-KB area and leakage rows use
//! 1 KB = 1024 B.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterId, ClusterRange, BUILTIN_RANGES};
use crate::scalar::Scalar;

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccelError {
    #[error("no accelerator named `{0}`")]
    UnknownAccelerator(String),
    #[error("duplicate accelerator name `{0}`")]
    DuplicateName(String),
    #[error("routing table has no entry for cluster {0}")]
    RoutingGap(ClusterId),
    #[error("accelerator `{name}`: {reason}")]
    InvalidConfig { name: String, reason: String },
    #[error("technology table: {0}")]
    InvalidTechnology(String),
    #[error("no buffer energy row covers a {capacity} B buffer")]
    BufferRowMissing { capacity: u64 },
    #[error("no area row covers a {capacity} B buffer")]
    AreaRowMissing { capacity: u64 },
    #[error("unknown platform `{0}` (baseline, base-hb, mensa or a JSON file)")]
    UnknownPlatform(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    OnChip,
    NearData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dataflow {
    BaselineSystolic,
    #[serde(rename = "AccelA-DF")]
    AccelA,
    #[serde(rename = "AccelB-DF")]
    AccelB,
    #[serde(rename = "AccelC-DF")]
    AccelC,
}

impl fmt::Display for Dataflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataflow::BaselineSystolic => "BaselineSystolic",
            Dataflow::AccelA => "AccelA-DF",
            Dataflow::AccelB => "AccelB-DF",
            Dataflow::AccelC => "AccelC-DF",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceleratorConfig {
    pub name: String,
    pub pe_rows: u32,
    pub pe_cols: u32,
    /// Hz.
    pub frequency: u64,
    /// Shared parameter buffer, bytes. Zero means parameters stream from
    /// DRAM into the PE register files.
    pub param_buffer: u64,
    pub act_buffer: u64,
    /// Register file per PE, bytes.
    pub pe_rf: u64,
    /// Bytes per second.
    pub dram_bandwidth: u64,
    pub placement: Placement,
    pub dataflow: Dataflow,
}

impl AcceleratorConfig {
    pub fn pes(&self) -> u64 {
        self.pe_rows as u64 * self.pe_cols as u64
    }

    /// Peak MAC rate (FLOP/s with one FLOP per MAC).
    pub fn peak_flops(&self) -> u64 {
        self.pes() * self.frequency
    }

    fn check(&self) -> Result<(), AccelError> {
        let bad = |reason: &str| Err(AccelError::InvalidConfig { name: self.name.clone(), reason: reason.into() });
        if self.name.is_empty() {
            return bad("empty name");
        }
        if self.pe_rows == 0 || self.pe_cols == 0 {
            return bad("PE array dimensions must be >= 1");
        }
        if self.frequency == 0 || self.dram_bandwidth == 0 {
            return bad("frequency and DRAM bandwidth must be positive");
        }
        if self.act_buffer == 0 || self.pe_rf == 0 {
            return bad("activation buffer and PE register file must be positive");
        }
        Ok(())
    }
}

/// Peak throughput of one accelerator, FLOP/s.
pub fn peak_throughput(a: &AcceleratorConfig) -> u64 {
    a.peak_flops()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferEnergyRow {
    /// Buffer capacity, bytes.
    pub capacity: u64,
    /// Joules per byte accessed.
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaRow {
    /// Buffer capacity, KB.
    pub capacity_kb: u64,
    pub mm2_per_kb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechnologyTable {
    /// J per MAC.
    pub e_mac: f64,
    /// J per DRAM byte.
    pub e_dram: f64,
    /// J per byte over the off-chip link.
    pub e_offchip_link: f64,
    /// J per byte injected into the on-chip network.
    pub e_noc: f64,
    /// Sorted by capacity.
    pub buffer_energy: Vec<BufferEnergyRow>,
    /// W per PE.
    pub leakage_per_pe: f64,
    /// W per KB of shared buffer.
    pub leakage_per_kb: f64,
    /// Partial-sum width, bytes.
    pub psum_width: u32,
    pub area_per_pe: f64,
    pub area_rows: Vec<AreaRow>,
    #[serde(default)]
    pub area_extrapolate: bool,
    /// DRAM energy multiplier for near-data accelerators.
    pub near_data_dram_scale: f64,
    /// Off-chip link energy multiplier for near-data accelerators.
    pub near_data_link_scale: f64,
}

impl Default for TechnologyTable {
    fn default() -> Self {
        Self {
            // 0.2 pJ/bit on 8-bit operands
            e_mac: 1.6e-12,
            e_dram: 32e-12,
            e_offchip_link: 8e-12,
            e_noc: 0.5e-12,
            buffer_energy: vec![
                BufferEnergyRow { capacity: 32 * KIB, energy: 0.3e-12 },
                BufferEnergyRow { capacity: 128 * KIB, energy: 0.5e-12 },
                BufferEnergyRow { capacity: 2 * MIB, energy: 1.5e-12 },
                BufferEnergyRow { capacity: 4 * MIB, energy: 2.0e-12 },
            ],
            leakage_per_pe: 0.2e-6,
            leakage_per_kb: 1.5e-6,
            psum_width: 4,
            area_per_pe: 0.01,
            // fitted once against the baseline buffer share; see tests/area_fit.rs
            area_rows: vec![
                AreaRow { capacity_kb: 1, mm2_per_kb: 0.03 },
                AreaRow { capacity_kb: 16 * 1024, mm2_per_kb: 0.03 },
            ],
            area_extrapolate: false,
            near_data_dram_scale: 0.5,
            near_data_link_scale: 0.0,
        }
    }
}

impl TechnologyTable {
    pub fn validate(&self) -> Result<(), AccelError> {
        let bad = |m: &str| Err(AccelError::InvalidTechnology(m.into()));
        let coeffs = [
            self.e_mac,
            self.e_dram,
            self.e_offchip_link,
            self.e_noc,
            self.leakage_per_pe,
            self.leakage_per_kb,
            self.area_per_pe,
            self.near_data_dram_scale,
            self.near_data_link_scale,
        ];
        if coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return bad("coefficients must be finite and >= 0");
        }
        if self.psum_width == 0 {
            return bad("psum_width must be >= 1");
        }
        if self.buffer_energy.is_empty() {
            return bad("buffer energy table is empty");
        }
        for w in self.buffer_energy.windows(2) {
            if w[1].capacity <= w[0].capacity {
                return bad("buffer energy rows must have increasing capacity");
            }
            if w[1].energy < w[0].energy {
                return bad("buffer energy per byte must not decrease with capacity");
            }
        }
        if self.buffer_energy.iter().any(|r| !r.energy.is_finite() || r.energy < 0.0) {
            return bad("buffer energies must be finite and >= 0");
        }
        if self.area_rows.windows(2).any(|w| w[1].capacity_kb <= w[0].capacity_kb) {
            return bad("area rows must have increasing capacity");
        }
        if self.area_rows.iter().any(|r| !r.mm2_per_kb.is_finite() || r.mm2_per_kb < 0.0) {
            return bad("area densities must be finite and >= 0");
        }
        Ok(())
    }

    /// Energy per byte accessed in a buffer of `capacity` bytes, linearly
    /// interpolated between rows. Buffers smaller than the first row use its
    /// energy; buffers larger than the last row are an error.
    pub fn buffer_energy_per_byte<S: Scalar>(&self, capacity: u64) -> Result<S, AccelError> {
        let rows = &self.buffer_energy;
        let first = rows.first().ok_or(AccelError::BufferRowMissing { capacity })?;
        if capacity <= first.capacity {
            return Ok(S::from_decimal(first.energy));
        }
        for w in rows.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if capacity <= hi.capacity {
                return Ok(lerp(
                    lo.capacity,
                    S::from_decimal(lo.energy),
                    hi.capacity,
                    S::from_decimal(hi.energy),
                    capacity,
                ));
            }
        }
        Err(AccelError::BufferRowMissing { capacity })
    }

    /// mm² of one buffer of `capacity` bytes.
    pub fn buffer_area<S: Scalar>(&self, capacity: u64) -> Result<S, AccelError> {
        if capacity == 0 {
            return Ok(S::zero());
        }
        let kb = S::from_u64(capacity) / S::from_u64(KIB);
        let rows = &self.area_rows;
        let missing = AccelError::AreaRowMissing { capacity };
        let (first, last) = match (rows.first(), rows.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(missing),
        };
        let density = if rows.len() == 1 {
            if !self.area_extrapolate && capacity != first.capacity_kb * KIB {
                return Err(missing);
            }
            S::from_decimal(first.mm2_per_kb)
        } else if capacity < first.capacity_kb * KIB {
            if !self.area_extrapolate {
                return Err(missing);
            }
            S::from_decimal(first.mm2_per_kb)
        } else if capacity > last.capacity_kb * KIB {
            if !self.area_extrapolate {
                return Err(missing);
            }
            S::from_decimal(last.mm2_per_kb)
        } else {
            let w = rows.windows(2).find(|w| capacity <= w[1].capacity_kb * KIB).expect("bracketing rows");
            lerp(
                w[0].capacity_kb * KIB,
                S::from_decimal(w[0].mm2_per_kb),
                w[1].capacity_kb * KIB,
                S::from_decimal(w[1].mm2_per_kb),
                capacity,
            )
        };
        Ok(kb * density)
    }

    /// Effective (DRAM, link) energy multipliers for a placement.
    pub fn placement_scales<S: Scalar>(&self, placement: Placement) -> (S, S) {
        match placement {
            Placement::OnChip => (S::one(), S::one()),
            Placement::NearData => {
                (S::from_decimal(self.near_data_dram_scale), S::from_decimal(self.near_data_link_scale))
            }
        }
    }
}

fn lerp<S: Scalar>(x0: u64, y0: S, x1: u64, y1: S, x: u64) -> S {
    let span = S::from_u64(x1 - x0);
    let frac = S::from_u64(x - x0) / span;
    y0.clone() + (y1 - y0) * frac
}

/// Chip area of one accelerator: PE array plus its shared buffers. Register
/// files are part of the PE.
pub fn area<S: Scalar>(a: &AcceleratorConfig, t: &TechnologyTable) -> Result<S, AccelError> {
    let pes = S::from_u64(a.pes()) * S::from_decimal(t.area_per_pe);
    Ok(pes + buffer_area::<S>(a, t)?)
}

/// Area of the shared buffers alone.
pub fn buffer_area<S: Scalar>(a: &AcceleratorConfig, t: &TechnologyTable) -> Result<S, AccelError> {
    Ok(t.buffer_area::<S>(a.param_buffer)? + t.buffer_area::<S>(a.act_buffer)?)
}

/// Leakage power of one accelerator, W.
pub fn leakage_power<S: Scalar>(a: &AcceleratorConfig, t: &TechnologyTable) -> S {
    let kb = S::from_u64(a.param_buffer + a.act_buffer) / S::from_u64(KIB);
    S::from_u64(a.pes()) * S::from_decimal(t.leakage_per_pe) + kb * S::from_decimal(t.leakage_per_kb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Platform {
    pub name: String,
    pub accelerators: Vec<AcceleratorConfig>,
    #[serde(default)]
    pub technology: TechnologyTable,
    /// Cluster id to accelerator name.
    pub routing: BTreeMap<ClusterId, String>,
    /// Overrides the built-in cluster ranges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_ranges: Option<Vec<ClusterRange>>,
}

impl Platform {
    pub fn ranges(&self) -> &[ClusterRange] {
        self.cluster_ranges.as_deref().unwrap_or(&BUILTIN_RANGES)
    }

    pub fn accelerator(&self, name: &str) -> Result<&AcceleratorConfig, AccelError> {
        self.accelerators.iter().find(|a| a.name == name).ok_or_else(|| AccelError::UnknownAccelerator(name.into()))
    }

    pub fn accelerator_index(&self, name: &str) -> Option<usize> {
        self.accelerators.iter().position(|a| a.name == name)
    }

    pub fn validate(&self) -> Result<(), AccelError> {
        let mut names = BTreeSet::new();
        for a in &self.accelerators {
            a.check()?;
            if !names.insert(a.name.as_str()) {
                return Err(AccelError::DuplicateName(a.name.clone()));
            }
        }
        if self.accelerators.is_empty() {
            return Err(AccelError::InvalidConfig { name: self.name.clone(), reason: "no accelerators".into() });
        }
        self.technology.validate()?;
        for r in self.ranges() {
            if !r.is_well_formed() {
                return Err(AccelError::InvalidConfig {
                    name: self.name.clone(),
                    reason: format!("cluster {} range has lo > hi", r.id),
                });
            }
            let target = self.routing.get(&r.id).ok_or(AccelError::RoutingGap(r.id))?;
            self.accelerator(target)?;
        }
        for target in self.routing.values() {
            self.accelerator(target)?;
        }
        Ok(())
    }

    /// Total chip area, mm².
    pub fn area<S: Scalar>(&self) -> Result<S, AccelError> {
        let mut total = S::zero();
        for a in &self.accelerators {
            total = total + area::<S>(a, &self.technology)?;
        }
        Ok(total)
    }

    pub fn buffer_area<S: Scalar>(&self) -> Result<S, AccelError> {
        let mut total = S::zero();
        for a in &self.accelerators {
            total = total + buffer_area::<S>(a, &self.technology)?;
        }
        Ok(total)
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let p: Platform = serde_json::from_str(text).map_err(|e| e.to_string())?;
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("platform serializes");
        s.push('\n');
        s
    }
}

fn routing(pairs: [(ClusterId, &str); 5]) -> BTreeMap<ClusterId, String> {
    pairs.into_iter().map(|(c, n)| (c, n.to_string())).collect()
}

pub const BASELINE_BANDWIDTH: u64 = 32_000_000_000;
pub const NEAR_DATA_BANDWIDTH: u64 = 256_000_000_000;

fn baseline_accel(bandwidth: u64) -> AcceleratorConfig {
    AcceleratorConfig {
        name: "Baseline".into(),
        pe_rows: 64,
        pe_cols: 64,
        frequency: 500_000_000,
        param_buffer: 4 * MIB,
        act_buffer: 2 * MIB,
        pe_rf: 64,
        dram_bandwidth: bandwidth,
        placement: Placement::OnChip,
        dataflow: Dataflow::BaselineSystolic,
    }
}

fn single(name: &str, bandwidth: u64) -> Platform {
    Platform {
        name: name.into(),
        accelerators: vec![baseline_accel(bandwidth)],
        technology: TechnologyTable::default(),
        routing: routing([(1, "Baseline"), (2, "Baseline"), (3, "Baseline"), (4, "Baseline"), (5, "Baseline")]),
        cluster_ranges: None,
    }
}

pub fn baseline() -> Platform {
    single("Baseline", BASELINE_BANDWIDTH)
}

/// Baseline with the near-data bandwidth.
pub fn base_hb() -> Platform {
    single("Base+HB", NEAR_DATA_BANDWIDTH)
}

pub fn mensa() -> Platform {
    const GHZ2: u64 = 2_000_000_000;
    let accel = |name: &str, n: u32, param_buffer, act_buffer, pe_rf, placement, dataflow| AcceleratorConfig {
        name: name.into(),
        pe_rows: n,
        pe_cols: n,
        frequency: GHZ2,
        param_buffer,
        act_buffer,
        pe_rf,
        dram_bandwidth: if placement == Placement::NearData { NEAR_DATA_BANDWIDTH } else { BASELINE_BANDWIDTH },
        placement,
        dataflow,
    };
    Platform {
        name: "Mensa".into(),
        accelerators: vec![
            accel("Accel-A", 32, 128 * KIB, 256 * KIB, 64, Placement::OnChip, Dataflow::AccelA),
            accel("Accel-B", 8, 0, 128 * KIB, 512, Placement::NearData, Dataflow::AccelB),
            accel("Accel-C", 16, 128 * KIB, 128 * KIB, 64, Placement::NearData, Dataflow::AccelC),
        ],
        technology: TechnologyTable::default(),
        routing: routing([(1, "Accel-A"), (2, "Accel-A"), (3, "Accel-B"), (4, "Accel-C"), (5, "Accel-C")]),
        cluster_ranges: None,
    }
}

/// Baseline, Base+HB and Mensa, in that order.
pub fn builtin_platforms() -> Vec<Platform> {
    vec![baseline(), base_hb(), mensa()]
}

/// Looks up a built-in platform by its CLI name.
pub fn builtin_platform(key: &str) -> Result<Platform, AccelError> {
    match key.to_ascii_lowercase().as_str() {
        "baseline" => Ok(baseline()),
        "base-hb" | "base+hb" => Ok(base_hb()),
        "mensa" => Ok(mensa()),
        _ => Err(AccelError::UnknownPlatform(key.into())),
    }
}

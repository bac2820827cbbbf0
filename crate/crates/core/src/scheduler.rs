//! Two-phase mapping of units onto a platform's accelerators.
//!
//! Phase 1 routes every unit by its cluster. Phase 2 walks the cross-accelerator
//! edges once, in consumer topological order, and moves a consumer onto its
//! producer's accelerator when running it there is cheaper than paying for the
//! DRAM round trip.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::accel::{AccelError, AcceleratorConfig, Platform, TechnologyTable};
use crate::characterize::LayerProfile;
use crate::cluster::{ClusterAssignment, ClusterId};
use crate::dataflow::{dataflow_cost, DataflowError, DataflowOptions, ParamResidency};
use crate::energy::{dram_energy, layer_energy};
use crate::model::{topological_order, LayerGraph, LayerId};
use crate::scalar::Scalar;
use crate::sim::unit_latency;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("routing table has no accelerator for cluster {0}")]
    RoutingGap(ClusterId),
    #[error("unit {0} has no profile")]
    MissingProfile(LayerId),
    #[error("unit {0} has no mapping")]
    Unmapped(LayerId),
    #[error("graph has a cycle through {0:?}")]
    Cycle(Vec<LayerId>),
    #[error(transparent)]
    Accel(#[from] AccelError),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Phase1,
    Remapped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MappingEntry {
    pub accel: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Mapping {
    pub units: BTreeMap<LayerId, MappingEntry>,
}

impl Mapping {
    pub fn accel_of(&self, id: LayerId) -> Option<&str> {
        self.units.get(&id).map(|e| e.accel.as_str())
    }

    /// Places every listed unit on one accelerator.
    pub fn constant(ids: impl IntoIterator<Item = LayerId>, accel: &str) -> Self {
        let units =
            ids.into_iter().map(|id| (id, MappingEntry { accel: accel.into(), phase: Phase::Phase1 })).collect();
        Self { units }
    }

    pub fn remapped(&self) -> impl Iterator<Item = LayerId> + '_ {
        self.units.iter().filter(|(_, e)| e.phase == Phase::Remapped).map(|(id, _)| *id)
    }
}

/// Routes each unit to the accelerator its cluster maps to.
pub fn phase1_map(assignments: &[ClusterAssignment], platform: &Platform) -> Result<Mapping, ScheduleError> {
    let mut units = BTreeMap::new();
    for a in assignments {
        let accel = platform.routing.get(&a.cluster).ok_or(ScheduleError::RoutingGap(a.cluster))?;
        platform.accelerator(accel)?;
        units.insert(a.unit_id, MappingEntry { accel: accel.clone(), phase: Phase::Phase1 });
    }
    Ok(Mapping { units })
}

/// Cost of moving `bytes` between accelerators through DRAM.
#[derive(Debug, Clone, PartialEq)]
pub struct Transfer<S> {
    pub latency: S,
    pub dram: S,
    pub link: S,
}

impl<S: Scalar> Transfer<S> {
    pub fn energy(&self) -> S {
        self.dram.clone() + self.link.clone()
    }
}

/// Write-then-read through DRAM: each side pays its own bandwidth and its own
/// placement's DRAM and link energy.
pub fn transfer<S: Scalar>(
    bytes: u64,
    src: &AcceleratorConfig,
    dst: &AcceleratorConfig,
    t: &TechnologyTable,
) -> Transfer<S> {
    if src.name == dst.name || bytes == 0 {
        return Transfer { latency: S::zero(), dram: S::zero(), link: S::zero() };
    }
    let b = S::from_u64(bytes);
    let latency = b.clone() / S::from_u64(src.dram_bandwidth) + b / S::from_u64(dst.dram_bandwidth);
    let (d0, l0) = dram_energy::<S>(bytes, src.placement, t);
    let (d1, l1) = dram_energy::<S>(bytes, dst.placement, t);
    Transfer { latency, dram: d0 + d1, link: l0 + l1 }
}

/// `(seconds, joules)` to synchronize `bytes` of activations.
pub fn transfer_cost<S: Scalar>(
    bytes: u64,
    src: &AcceleratorConfig,
    dst: &AcceleratorConfig,
    t: &TechnologyTable,
) -> (S, S) {
    let x = transfer::<S>(bytes, src, dst, t);
    let e = x.energy();
    (x.latency, e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleOptions {
    /// Weight of energy (J) against latency (s) in the phase-2 objective.
    pub lambda: f64,
    pub dataflow: DataflowOptions,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self { lambda: 0.0, dataflow: DataflowOptions::default() }
    }
}

/// `latency + lambda * energy` of a unit on an accelerator, or `None` when
/// the dataflow cannot run it.
pub fn unit_cost<S: Scalar>(
    p: &LayerProfile,
    a: &AcceleratorConfig,
    t: &TechnologyTable,
    opts: &ScheduleOptions,
) -> Result<Option<S>, ScheduleError> {
    let c = match dataflow_cost(p, a, ParamResidency::of(p), &opts.dataflow) {
        Ok(c) => c,
        Err(DataflowError::Incompatible { .. }) => return Ok(None),
    };
    let mut cost = unit_latency::<S>(&c, a);
    if opts.lambda != 0.0 {
        cost = cost + S::from_decimal(opts.lambda) * layer_energy::<S>(&c, p.macs, a, t)?.total;
    }
    Ok(Some(cost))
}

/// One evaluated cross-accelerator edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase2Decision<S> {
    pub producer: LayerId,
    pub consumer: LayerId,
    pub keep: S,
    /// `None` when the producer's accelerator cannot run the consumer.
    pub moved: Option<S>,
    pub remapped: bool,
}

/// Phase 2 with the list of edge evaluations it performed.
pub fn phase2_trace<S: Scalar>(
    m: &Mapping,
    g: &LayerGraph,
    profiles: &[LayerProfile],
    platform: &Platform,
    opts: &ScheduleOptions,
) -> Result<(Mapping, Vec<Phase2Decision<S>>), ScheduleError> {
    let order = topological_order(g).map_err(ScheduleError::Cycle)?;
    let mut rank = BTreeMap::new();
    for (pos, &idx) in order.iter().enumerate() {
        rank.insert(g.layers()[idx].id, pos);
    }
    let by_id: BTreeMap<LayerId, &LayerProfile> = profiles.iter().map(|p| (p.unit_id, p)).collect();

    let mut edges: Vec<usize> = (0..g.edges().len()).collect();
    edges.sort_by_key(|&i| {
        let e = &g.edges()[i];
        (rank.get(&e.dst).copied(), rank.get(&e.src).copied(), i)
    });

    let mut out = m.clone();
    let mut moved: BTreeSet<LayerId> = BTreeSet::new();
    let mut trace = Vec::new();
    for i in edges {
        let e = g.edges()[i];
        let src_name = out.accel_of(e.src).ok_or(ScheduleError::Unmapped(e.src))?.to_string();
        let dst_name = out.accel_of(e.dst).ok_or(ScheduleError::Unmapped(e.dst))?.to_string();
        if src_name == dst_name || moved.contains(&e.dst) {
            continue;
        }
        let src = platform.accelerator(&src_name)?;
        let dst = platform.accelerator(&dst_name)?;
        let p = by_id.get(&e.dst).ok_or(ScheduleError::MissingProfile(e.dst))?;
        let t = &platform.technology;

        let x = transfer::<S>(e.bytes, src, dst, t);
        let mut keep = unit_cost::<S>(p, dst, t, opts)?
            .ok_or(ScheduleError::Dataflow(DataflowError::Incompatible { kind: p.kind, dataflow: dst.dataflow }))?
            + x.latency.clone();
        if opts.lambda != 0.0 {
            keep = keep + S::from_decimal(opts.lambda) * x.energy();
        }
        let alt = unit_cost::<S>(p, src, t, opts)?;
        let remap = matches!(&alt, Some(c) if *c < keep);
        if remap {
            out.units.insert(e.dst, MappingEntry { accel: src_name, phase: Phase::Remapped });
            moved.insert(e.dst);
        }
        trace.push(Phase2Decision { producer: e.src, consumer: e.dst, keep, moved: alt, remapped: remap });
    }
    Ok((out, trace))
}

/// Communication-aware adjustment of a phase-1 mapping.
pub fn phase2_adjust<S: Scalar>(
    m: &Mapping,
    g: &LayerGraph,
    profiles: &[LayerProfile],
    platform: &Platform,
    opts: &ScheduleOptions,
) -> Result<Mapping, ScheduleError> {
    phase2_trace::<S>(m, g, profiles, platform, opts).map(|(m, _)| m)
}

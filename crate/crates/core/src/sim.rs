//! Event-driven execution of a mapped graph.
//!
//! Each accelerator runs its units one at a time in global topological order.
//! A unit starts once its accelerator is free and every producer has finished
//! and, if it ran elsewhere, its activations have gone through DRAM. Transfers
//! delay the consumer but do not occupy either accelerator.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::accel::{AccelError, AcceleratorConfig, Platform};
use crate::characterize::{layer_profile, GeometryError, LayerProfile};
use crate::dataflow::{dataflow_cost, DataflowCost, DataflowError, DataflowOptions, ParamResidency};
use crate::energy::{layer_energy, static_energy, EnergyBreakdown};
use crate::model::{topological_order, LayerGraph, LayerId};
use crate::scalar::Scalar;
use crate::scheduler::{transfer, Mapping};

pub use crate::pipeline::compare;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unit {0} is not mapped to any accelerator")]
    Unmapped(LayerId),
    #[error("graph has a cycle through {0:?}")]
    Cycle(Vec<LayerId>),
    #[error("unit {unit}: {source}")]
    Dataflow { unit: LayerId, source: DataflowError },
    #[error(transparent)]
    Accel(#[from] AccelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// `max(compute time, DRAM time)`: compute and memory overlap perfectly.
pub fn unit_latency<S: Scalar>(c: &DataflowCost, a: &AcceleratorConfig) -> S {
    let compute = S::from_u64(c.compute_cycles) / S::from_u64(a.frequency);
    let memory = S::from_u64(c.dram_bytes()) / S::from_u64(a.dram_bandwidth);
    S::max_of(compute, memory)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry<S> {
    pub unit_id: LayerId,
    pub accel: String,
    pub start: S,
    pub end: S,
    pub cost: DataflowCost,
    pub energy: EnergyBreakdown<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccelReport<S> {
    pub name: String,
    pub units: u64,
    pub macs: u64,
    pub busy: S,
    pub utilization: S,
    pub static_energy: S,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport<S> {
    pub model: String,
    pub platform: String,
    pub total_latency: S,
    pub total_macs: u64,
    /// MACs (FLOP) per second.
    pub throughput: S,
    /// Mean of the per-accelerator utilizations.
    pub utilization: S,
    pub accelerators: Vec<AccelReport<S>>,
    pub energy: EnergyBreakdown<S>,
    /// Part of `energy` spent moving activations between accelerators.
    pub transfer_energy: S,
    pub area: S,
    pub trace: Vec<TraceEntry<S>>,
}

impl<S: Scalar> SimReport<S> {
    pub fn to_f64(&self) -> SimReport<f64> {
        SimReport {
            model: self.model.clone(),
            platform: self.platform.clone(),
            total_latency: self.total_latency.to_f64(),
            total_macs: self.total_macs,
            throughput: self.throughput.to_f64(),
            utilization: self.utilization.to_f64(),
            accelerators: self
                .accelerators
                .iter()
                .map(|a| AccelReport {
                    name: a.name.clone(),
                    units: a.units,
                    macs: a.macs,
                    busy: a.busy.to_f64(),
                    utilization: a.utilization.to_f64(),
                    static_energy: a.static_energy.to_f64(),
                })
                .collect(),
            energy: self.energy.to_f64(),
            transfer_energy: self.transfer_energy.to_f64(),
            area: self.area.to_f64(),
            trace: self
                .trace
                .iter()
                .map(|t| TraceEntry {
                    unit_id: t.unit_id,
                    accel: t.accel.clone(),
                    start: t.start.to_f64(),
                    end: t.end.to_f64(),
                    cost: t.cost,
                    energy: t.energy.to_f64(),
                })
                .collect(),
        }
    }
}

/// Total order over scalars for the event queue. Model times are never NaN.
#[derive(Debug, Clone, PartialEq)]
struct Time<S>(S);

impl<S: Scalar> Eq for Time<S> {}

impl<S: Scalar> PartialOrd for Time<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for Time<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.partial_cmp(&other.0).expect("simulation times are comparable")
    }
}

struct Unit<S> {
    accel: usize,
    latency: S,
    cost: DataflowCost,
    energy: EnergyBreakdown<S>,
    macs: u64,
}

/// Runs a lowered graph under a total mapping.
pub fn simulate<S: Scalar>(
    g: &LayerGraph,
    mapping: &Mapping,
    platform: &Platform,
    opts: &DataflowOptions,
) -> Result<SimReport<S>, SimError> {
    let profiles = g.layers().iter().map(layer_profile).collect::<Result<Vec<LayerProfile>, _>>()?;
    simulate_profiled(g, &profiles, mapping, platform, opts)
}

/// [`simulate`] with profiles already computed, one per layer in list order.
pub fn simulate_profiled<S: Scalar>(
    g: &LayerGraph,
    profiles: &[LayerProfile],
    mapping: &Mapping,
    platform: &Platform,
    opts: &DataflowOptions,
) -> Result<SimReport<S>, SimError> {
    let order = topological_order(g).map_err(SimError::Cycle)?;
    let n = g.layers().len();
    let tech = &platform.technology;

    let mut units = Vec::with_capacity(n);
    for (layer, p) in g.layers().iter().zip(profiles) {
        let name = mapping.accel_of(layer.id).ok_or(SimError::Unmapped(layer.id))?;
        let accel = platform.accelerator_index(name).ok_or_else(|| AccelError::UnknownAccelerator(name.into()))?;
        let a = &platform.accelerators[accel];
        let cost = dataflow_cost(p, a, ParamResidency::of(p), opts)
            .map_err(|source| SimError::Dataflow { unit: layer.id, source })?;
        let energy = layer_energy::<S>(&cost, p.macs, a, tech)?;
        units.push(Unit { accel, latency: unit_latency(&cost, a), cost, energy, macs: p.macs });
    }

    let index = g.index_of();
    let mut succ: Vec<Vec<(usize, S)>> = vec![Vec::new(); n];
    let mut waiting = vec![0usize; n];
    let mut transfer_energy = EnergyBreakdown::<S>::zero();
    for e in g.edges() {
        let (s, d) = (index[&e.src], index[&e.dst]);
        let (sa, da) = (&platform.accelerators[units[s].accel], &platform.accelerators[units[d].accel]);
        let x = transfer::<S>(e.bytes, sa, da, tech);
        transfer_energy = transfer_energy
            + EnergyBreakdown::new(S::zero(), S::zero(), S::zero(), x.dram.clone(), x.link.clone(), S::zero());
        succ[s].push((d, x.latency));
        waiting[d] += 1;
    }

    let k = platform.accelerators.len();
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); k];
    for &i in &order {
        queues[units[i].accel].push_back(i);
    }
    let mut rank = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos;
    }

    let mut ready: Vec<S> = vec![S::zero(); n];
    let mut free: Vec<S> = vec![S::zero(); k];
    let mut busy = vec![false; k];
    let mut start: Vec<Option<S>> = vec![None; n];
    let mut end: Vec<Option<S>> = vec![None; n];
    let mut events: BinaryHeap<Reverse<(Time<S>, usize)>> = BinaryHeap::new();

    let dispatch = |acc: usize,
                    queues: &mut Vec<VecDeque<usize>>,
                    busy: &mut Vec<bool>,
                    free: &[S],
                    ready: &[S],
                    waiting: &[usize],
                    start: &mut Vec<Option<S>>,
                    events: &mut BinaryHeap<Reverse<(Time<S>, usize)>>| {
        if busy[acc] {
            return;
        }
        let Some(&head) = queues[acc].front() else { return };
        if waiting[head] > 0 {
            return;
        }
        queues[acc].pop_front();
        let s = S::max_of(free[acc].clone(), ready[head].clone());
        let e = s.clone() + units[head].latency.clone();
        start[head] = Some(s);
        busy[acc] = true;
        events.push(Reverse((Time(e), rank[head])));
    };

    for acc in 0..k {
        dispatch(acc, &mut queues, &mut busy, &free, &ready, &waiting, &mut start, &mut events);
    }
    while let Some(Reverse((Time(t), pos))) = events.pop() {
        let i = order[pos];
        let acc = units[i].accel;
        end[i] = Some(t.clone());
        free[acc] = t.clone();
        busy[acc] = false;
        for (d, lat) in &succ[i] {
            let arrival = t.clone() + lat.clone();
            ready[*d] = S::max_of(ready[*d].clone(), arrival);
            waiting[*d] -= 1;
        }
        for a in 0..k {
            dispatch(a, &mut queues, &mut busy, &free, &ready, &waiting, &mut start, &mut events);
        }
    }
    debug_assert!(queues.iter().all(VecDeque::is_empty));

    let total_latency = end.iter().flatten().fold(S::zero(), |m, e| S::max_of(m, e.clone()));
    let total_macs: u64 = units.iter().map(|u| u.macs).sum();
    let leak = static_energy::<S>(platform, &total_latency);

    let mut accelerators = Vec::with_capacity(k);
    for (ai, a) in platform.accelerators.iter().enumerate() {
        let mine: Vec<&Unit<S>> = units.iter().filter(|u| u.accel == ai).collect();
        let macs: u64 = mine.iter().map(|u| u.macs).sum();
        let busy_time = mine.iter().fold(S::zero(), |acc, u| acc + u.latency.clone());
        let capacity = S::from_u64(a.peak_flops()) * total_latency.clone();
        let utilization = if capacity.is_zero() { S::zero() } else { S::from_u64(macs) / capacity };
        accelerators.push(AccelReport {
            name: a.name.clone(),
            units: mine.len() as u64,
            macs,
            busy: busy_time,
            utilization,
            static_energy: leak[ai].clone(),
        });
    }
    let utilization = accelerators.iter().fold(S::zero(), |acc, r| acc + r.utilization.clone()) / S::from_u64(k as u64);
    let throughput = if total_latency.is_zero() { S::zero() } else { S::from_u64(total_macs) / total_latency.clone() };

    let dynamic = units.iter().fold(EnergyBreakdown::zero(), |acc, u| acc + u.energy.clone());
    let static_total = leak.iter().fold(S::zero(), |acc, e| acc + e.clone());
    let transfer_total = transfer_energy.total.clone();
    let energy = (dynamic + transfer_energy).with_static(static_total);

    let mut trace = Vec::with_capacity(n);
    for &i in &order {
        let u = &units[i];
        trace.push(TraceEntry {
            unit_id: g.layers()[i].id,
            accel: platform.accelerators[u.accel].name.clone(),
            start: start[i].clone().expect("every unit ran"),
            end: end[i].clone().expect("every unit ran"),
            cost: u.cost,
            energy: u.energy.clone(),
        });
    }

    Ok(SimReport {
        model: g.name().to_string(),
        platform: platform.name.clone(),
        total_latency,
        total_macs,
        throughput,
        utilization,
        accelerators,
        energy,
        transfer_energy: transfer_total,
        area: platform.area::<S>()?,
        trace,
    })
}

/// Ratios of one platform against the first platform of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ratios<S> {
    pub platform: String,
    /// `E_first / E_this`.
    pub energy_reduction: S,
    pub throughput_gain: S,
    pub utilization_gain: S,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport<S> {
    pub model: String,
    pub reports: Vec<SimReport<S>>,
    pub ratios: Vec<Ratios<S>>,
}

fn ratio<S: Scalar>(num: &S, den: &S) -> S {
    if den.is_zero() {
        if num.is_zero() {
            S::one()
        } else {
            S::zero()
        }
    } else {
        num.clone() / den.clone()
    }
}

/// Normalizes a set of reports for one model to the first one.
pub fn ratios_of<S: Scalar>(reports: &[SimReport<S>]) -> Vec<Ratios<S>> {
    let Some(first) = reports.first() else { return Vec::new() };
    reports
        .iter()
        .map(|r| Ratios {
            platform: r.platform.clone(),
            energy_reduction: ratio(&first.energy.total, &r.energy.total),
            throughput_gain: ratio(&r.throughput, &first.throughput),
            utilization_gain: ratio(&r.utilization, &first.utilization),
        })
        .collect()
}

/// Arithmetic mean of per-model ratios, per platform position.
pub fn suite_means<S: Scalar>(comparisons: &[ComparisonReport<S>]) -> Vec<Ratios<S>> {
    let Some(first) = comparisons.first() else { return Vec::new() };
    let count = S::from_u64(comparisons.len() as u64);
    (0..first.ratios.len())
        .map(|i| {
            let sum = |f: fn(&Ratios<S>) -> &S| {
                comparisons.iter().fold(S::zero(), |acc, c| acc + f(&c.ratios[i]).clone()) / count.clone()
            };
            Ratios {
                platform: first.ratios[i].platform.clone(),
                energy_reduction: sum(|r| &r.energy_reduction),
                throughput_gain: sum(|r| &r.throughput_gain),
                utilization_gain: sum(|r| &r.utilization_gain),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::accel::{baseline, mensa};
    use crate::model::{lower_lstm, GateShape, Layer, LayerKind, LstmShape, Shape};
    use crate::scalar::Exact;

    #[test]
    fn latency_examples() {
        let m = mensa();
        let a = m.accelerator("Accel-A").unwrap();
        let c = DataflowCost { compute_cycles: 1024, ..Default::default() };
        assert_eq!(unit_latency::<Exact>(&c, a), Exact::new(512.into(), 1_000_000_000u64.into()));

        let gate =
            layer_profile(&Layer::new(0, Shape::LstmGateUnit(GateShape { d_in: 1000, d_h: 1000, t: 0, gate: 0 })))
                .unwrap();
        let b = m.accelerator("Accel-B").unwrap();
        let cb = dataflow_cost(&gate, b, ParamResidency::of(&gate), &DataflowOptions::default()).unwrap();
        assert_eq!(unit_latency::<Exact>(&cb, b), Exact::new(15_625.into(), 1_000_000_000u64.into()));

        let base = baseline();
        let miss = ParamResidency::Recurrent { timestep: 1, layer_params: 8_000_000 };
        let cbase = dataflow_cost(&gate, &base.accelerators[0], miss, &DataflowOptions::default()).unwrap();
        assert_eq!(unit_latency::<Exact>(&cbase, &base.accelerators[0]), Exact::new(625.into(), 10_000_000u64.into()));
    }

    #[test]
    fn single_unit() {
        let g = LayerGraph::new("one", vec![Layer::new(0, Shape::FullyConnected { inputs: 64, outputs: 64 })], &[])
            .unwrap();
        let p = baseline();
        let m = Mapping::constant([0], "Baseline");
        let r: SimReport<Exact> = simulate(&g, &m, &p, &DataflowOptions::default()).unwrap();
        assert_eq!(r.total_latency, r.trace[0].end);
        let a = &p.accelerators[0];
        assert_eq!(r.utilization, Exact::from_u64(4096) / (Exact::from_u64(a.peak_flops()) * r.total_latency.clone()));
        assert_eq!(r.energy.total, r.energy.component_sum());
    }

    #[test]
    fn independent_units_overlap() {
        let fc = |id| Layer::new(id, Shape::FullyConnected { inputs: 512, outputs: 512 });
        let g = LayerGraph::new("two", vec![fc(0), fc(1)], &[]).unwrap();
        let p = mensa();
        let mut m = Mapping::constant([0], "Accel-A");
        m.units.extend(Mapping::constant([1], "Accel-B").units);
        let r: SimReport<Exact> = simulate(&g, &m, &p, &DataflowOptions::default()).unwrap();
        let longest = Exact::max_of(r.trace[0].end.clone(), r.trace[1].end.clone());
        assert_eq!(r.total_latency, longest);
        assert_eq!(r.trace[0].start, Exact::from_u64(0));
        assert_eq!(r.trace[1].start, Exact::from_u64(0));
    }

    #[test]
    fn joins_serialize_timesteps() {
        let l = Layer::new(0, Shape::LstmLayer(LstmShape { d_in: 64, d_h: 64, timesteps: 3, gates: 4 }));
        let g = lower_lstm(&LayerGraph::new("l", vec![l], &[]).unwrap());
        let ids: Vec<LayerId> = g.layers().iter().map(|l| l.id).collect();
        let m = Mapping::constant(ids, "Accel-B");
        let r: SimReport<Exact> = simulate(&g, &m, &mensa(), &DataflowOptions::default()).unwrap();
        let by_id: BTreeMap<LayerId, &TraceEntry<Exact>> = r.trace.iter().map(|t| (t.unit_id, t)).collect();
        for l in g.layers() {
            if let Shape::LstmGateUnit(gs) = l.shape {
                if gs.t == 0 {
                    continue;
                }
                let prev_join = g
                    .layers()
                    .iter()
                    .find(|j| j.shape == Shape::LstmCellJoin(crate::model::JoinShape { d_h: 64, t: gs.t - 1 }))
                    .unwrap();
                assert!(by_id[&l.id].start >= by_id[&prev_join.id].end);
            }
        }
        assert_eq!(g.layers().iter().filter(|l| l.kind() == LayerKind::LstmCellJoin).count(), 3);
    }

    #[test]
    fn unmapped_unit_is_an_error() {
        let g =
            LayerGraph::new("one", vec![Layer::new(4, Shape::FullyConnected { inputs: 2, outputs: 2 })], &[]).unwrap();
        let r = simulate::<f64>(&g, &Mapping::default(), &baseline(), &DataflowOptions::default());
        assert_eq!(r.unwrap_err(), SimError::Unmapped(4));
    }

    #[test]
    fn self_comparison_is_unity() {
        let g =
            LayerGraph::new("one", vec![Layer::new(0, Shape::FullyConnected { inputs: 8, outputs: 8 })], &[]).unwrap();
        let p = baseline();
        let r: SimReport<Exact> =
            simulate(&g, &Mapping::constant([0], "Baseline"), &p, &DataflowOptions::default()).unwrap();
        let ratios = ratios_of(&[r.clone(), r]);
        for x in &ratios {
            assert_eq!(x.energy_reduction, Exact::from_u64(1));
            assert_eq!(x.throughput_gain, Exact::from_u64(1));
            assert_eq!(x.utilization_gain, Exact::from_u64(1));
        }
    }
}

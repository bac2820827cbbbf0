use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_rational::Ratio;
use num_traits::{One, Zero};
use proptest::prelude::*;

use mensa_core::accel::{baseline, mensa, peak_throughput, AcceleratorConfig, Platform, TechnologyTable};
use mensa_core::characterize::{layer_profile, output_dims, LayerProfile};
use mensa_core::cluster::{classify, classify_all, BUILTIN_RANGES};
use mensa_core::dataflow::{
    dataflow_cost, is_compatible, lstm_layer_param_traffic, partial_sum_slots, reuse_factor, DataflowCost,
    DataflowOptions, ParamResidency, ReuseVariant, TrafficMode,
};
use mensa_core::energy::{layer_energy, ridge_point, roofline_energy_efficiency, roofline_throughput};
use mensa_core::model::{
    lower_lstm, parse_model, serialize_model, topological_order, validate_graph, ConvShape, GateShape, Layer,
    LayerGraph, LayerId, LayerKind, LstmShape, Shape,
};
use mensa_core::pipeline::{evaluate, EvalOptions};
use mensa_core::scheduler::{phase1_map, phase2_trace, Mapping, ScheduleOptions};
use mensa_core::sim::{simulate, unit_latency};
use mensa_core::{Exact, Scalar};

fn conv_geometry() -> impl Strategy<Value = ConvShape> {
    (1u32..=16, 1u32..=16, 1u32..=16, 1u32..=16, 1u32..=3, 1u32..=2, 0u32..=1)
        .prop_filter("kernel fits", |&(hi, wi, _, _, k, _, p)| k <= hi + 2 * p && k <= wi + 2 * p)
        .prop_map(|(hi, wi, cin, cout, k, s, p)| ConvShape::new(hi, wi, cin, cout, k, s, p))
}

fn arb_shape() -> impl Strategy<Value = Shape> {
    prop_oneof![
        conv_geometry().prop_map(Shape::Conv),
        conv_geometry().prop_map(|c| Shape::Depthwise(ConvShape { cout: c.cin, ..c })),
        conv_geometry().prop_map(|c| Shape::Pointwise(ConvShape { kh: 1, kw: 1, ..c })),
        (1u32..=256, 1u32..=256).prop_map(|(inputs, outputs)| Shape::FullyConnected { inputs, outputs }),
        (1u32..=64, 1u32..=64, 1u32..=4).prop_map(|(d_in, d_h, timesteps)| Shape::LstmLayer(LstmShape {
            d_in,
            d_h,
            timesteps,
            gates: 4
        })),
    ]
}

/// Random DAG: edges only go from earlier to later list positions. Ids are
/// spaced out so they never coincide with positions.
fn arb_graph() -> impl Strategy<Value = LayerGraph> {
    (proptest::collection::vec(arb_shape(), 1..7), proptest::collection::vec(any::<bool>(), 21)).prop_map(
        |(shapes, bits)| {
            let id = |i: usize| (i as LayerId) * 3 + 7;
            let layers: Vec<Layer> = shapes.iter().enumerate().map(|(i, &s)| Layer::new(id(i), s)).collect();
            let mut edges = Vec::new();
            let mut k = 0;
            for j in 1..layers.len() {
                for i in 0..j {
                    if bits[k % bits.len()] {
                        edges.push((id(i), id(j)));
                    }
                    k += 1;
                }
            }
            LayerGraph::new("random", layers, &edges).expect("generated graphs are valid")
        },
    )
}

fn arb_unit() -> impl Strategy<Value = LayerProfile> {
    prop_oneof![
        arb_shape().prop_filter("schedulable", |s| !matches!(s, Shape::LstmLayer(_))),
        (1u32..=64, 1u32..=64, 0u32..40, 0u32..4).prop_map(|(d_in, d_h, t, gate)| Shape::LstmGateUnit(GateShape {
            d_in,
            d_h,
            t,
            gate
        })),
    ]
    .prop_map(|s| layer_profile(&Layer::new(1, s)).unwrap())
}

fn arb_accel() -> impl Strategy<Value = AcceleratorConfig> {
    let pool: Vec<AcceleratorConfig> = baseline().accelerators.into_iter().chain(mensa().accelerators).collect();
    (proptest::sample::select(pool), 1u32..=64, 1u32..=64, 0u64..=1 << 22, 8u64..=1024).prop_map(
        |(mut a, r, c, pbuf, rf)| {
            a.pe_rows = r;
            a.pe_cols = c;
            a.param_buffer = pbuf;
            a.pe_rf = rf;
            a
        },
    )
}

fn reachable(g: &LayerGraph, from: LayerId, to: LayerId) -> bool {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        if n == to {
            return true;
        }
        if seen.insert(n) {
            queue.extend(g.edges().iter().filter(|e| e.src == n).map(|e| e.dst));
        }
    }
    false
}

fn profiles(g: &LayerGraph) -> Vec<LayerProfile> {
    g.layers().iter().map(|l| layer_profile(l).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lowering_keeps_a_dag(g in arb_graph()) {
        let low = lower_lstm(&g);
        prop_assert!(validate_graph(&low).is_empty());
        prop_assert!(topological_order(&low).is_ok());
        prop_assert!(low.is_lowered());
    }

    #[test]
    fn lowering_is_idempotent(g in arb_graph()) {
        let once = lower_lstm(&g);
        prop_assert_eq!(lower_lstm(&once), once);
    }

    #[test]
    fn lowered_lstm_structure(d_in in 1u32..32, d_h in 1u32..32, t in 1u32..12) {
        let g = LayerGraph::new("l", vec![Layer::new(0, Shape::LstmLayer(LstmShape { d_in, d_h, timesteps: t, gates: 4 }))], &[]).unwrap();
        let low = lower_lstm(&g);
        prop_assert_eq!(low.layers().len() as u32, 4 * t + t);
        let joins: BTreeMap<u32, LayerId> = low.layers().iter().filter_map(|l| match l.shape {
            Shape::LstmCellJoin(j) => Some((j.t, l.id)),
            _ => None,
        }).collect();
        for l in low.layers() {
            if let Shape::LstmGateUnit(gs) = l.shape {
                prop_assert!(reachable(&low, l.id, joins[&gs.t]));
            }
        }
        for step in 1..t {
            prop_assert!(reachable(&low, joins[&(step - 1)], joins[&step]));
        }
    }

    #[test]
    fn serialization_round_trips(g in arb_graph()) {
        let text = serialize_model(&g);
        let back = parse_model(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(serialize_model(&back), text);
    }

    #[test]
    fn mvm_units_have_unit_intensity(inputs in 1u32..5000, outputs in 1u32..5000, d_h in 1u32..2000, t in 0u32..64) {
        let one = Some(Ratio::one());
        let fc = layer_profile(&Layer::new(0, Shape::FullyConnected { inputs, outputs })).unwrap();
        prop_assert_eq!(fc.param_intensity(), one);
        let gate = layer_profile(&Layer::new(0, Shape::LstmGateUnit(GateShape { d_in: inputs, d_h, t, gate: 0 }))).unwrap();
        prop_assert_eq!(gate.param_intensity(), one);
    }

    #[test]
    fn conv_intensity_is_output_plane(c in conv_geometry()) {
        let p = layer_profile(&Layer::new(0, Shape::Conv(c))).unwrap();
        let (ho, wo) = output_dims(&c).unwrap();
        prop_assert_eq!(p.param_intensity(), Some(Ratio::from_integer(ho as u64 * wo as u64)));
    }

    #[test]
    fn conv_scales_linearly_in_cout(c in conv_geometry()) {
        let p = layer_profile(&Layer::new(0, Shape::Conv(c))).unwrap();
        let q = layer_profile(&Layer::new(0, Shape::Conv(ConvShape { cout: 2 * c.cout, ..c }))).unwrap();
        prop_assert_eq!(q.macs, 2 * p.macs);
        prop_assert_eq!(q.param_bytes, 2 * p.param_bytes);
        prop_assert_eq!(q.param_intensity(), p.param_intensity());
    }

    #[test]
    fn classification_is_total_and_pure(units in proptest::collection::vec(arb_unit(), 1..20), seed in any::<u64>()) {
        let units: Vec<LayerProfile> = units.into_iter().enumerate().map(|(i, p)| LayerProfile { unit_id: i as u32, ..p }).collect();
        let a = classify_all(&units, &BUILTIN_RANGES);
        prop_assert_eq!(a.len(), units.len());
        for x in &a {
            prop_assert!((1..=5).contains(&x.cluster));
        }
        let mut shuffled = units.clone();
        shuffled.rotate_left(seed as usize % units.len());
        shuffled.reverse();
        let by_id: BTreeMap<u32, u8> = classify_all(&shuffled, &BUILTIN_RANGES).into_iter().map(|x| (x.unit_id, x.cluster)).collect();
        for x in &a {
            prop_assert_eq!(by_id[&x.unit_id], x.cluster);
        }
    }

    #[test]
    fn large_gates_are_cluster_three(d_in in 300u32..=3000, d_h in 300u32..=3000) {
        let p = layer_profile(&Layer::new(0, Shape::LstmGateUnit(GateShape { d_in, d_h, t: 0, gate: 0 }))).unwrap();
        prop_assume!((900_000..=18_000_000).contains(&p.param_bytes));
        prop_assert_eq!(classify(&p, &BUILTIN_RANGES).cluster, 3);
    }

    #[test]
    fn peak_is_monotonic(a in arb_accel(), dr in 0u32..8, dc in 0u32..8, df in 0u64..1_000_000_000) {
        let mut b = a.clone();
        b.pe_rows += dr;
        b.pe_cols += dc;
        b.frequency += df;
        prop_assert!(peak_throughput(&b) >= peak_throughput(&a));
    }

    #[test]
    fn platform_json_round_trips(a in arb_accel(), e_mac in 1e-13f64..1e-11) {
        let mut p = mensa();
        p.accelerators[0] = AcceleratorConfig { name: "Accel-A".into(), ..a };
        p.technology.e_mac = e_mac;
        let text = p.to_json();
        let back = Platform::from_json(&text).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn psum_free_dataflows(u in arb_unit()) {
        let m = mensa();
        let opts = DataflowOptions::default();
        for a in m.accelerators.iter().take(2) {
            if is_compatible(u.kind, a.dataflow) {
                prop_assert_eq!(dataflow_cost(&u, a, ParamResidency::of(&u), &opts).unwrap().noc_psum_bytes, 0);
            }
        }
    }

    #[test]
    fn stationary_reuse_is_n_times_replicated(u in arb_unit(), pes in 1u64..=4096) {
        let r = reuse_factor(&u, ReuseVariant::Replicated, pes);
        let s = reuse_factor(&u, ReuseVariant::Stationary, pes);
        prop_assert_eq!(s, r * Ratio::from_integer(pes));
    }

    #[test]
    fn decoupled_never_exceeds_naive(
        d_in in 1u32..=512, d_h in 1u32..=512, t in 1u32..=300, datum in 1u32..=2,
        a in arb_accel(), hidden_refetch in any::<bool>(),
    ) {
        let layer = LstmShape { d_in, d_h, timesteps: t, gates: 4 };
        let opts = DataflowOptions { psum_width: 4, hidden_refetch };
        let naive = lstm_layer_param_traffic(&layer, datum, &a, TrafficMode::Naive, &opts);
        let dec = lstm_layer_param_traffic(&layer, datum, &a, TrafficMode::Decoupled, &opts);
        let footprint = 4 * (d_in as u64 + d_h as u64) * d_h as u64 * datum as u64;
        let resident = footprint <= a.param_buffer;
        let k = partial_sum_slots(&a, datum, 4);
        prop_assert!(dec >= footprint);
        // a resident layer is fetched once by the naive flow; the decoupled
        // flow refetches every K steps and streams W_h when asked to
        if resident && (t as u64 > k || hidden_refetch) {
            return Ok(());
        }
        prop_assert!(dec <= naive);
        if !hidden_refetch {
            prop_assert_eq!(dec == naive, t == 1 || resident || k == 1);
        }
    }

    #[test]
    fn params_read_at_least_once(u in arb_unit(), a in arb_accel()) {
        prop_assume!(is_compatible(u.kind, a.dataflow) && u.kind != LayerKind::LstmGateUnit);
        let c = dataflow_cost(&u, &a, ParamResidency::Once, &DataflowOptions::default()).unwrap();
        prop_assert!(c.dram_param_bytes >= u.param_bytes);
    }

    #[test]
    fn counters_ignore_unit_ids(u in arb_unit(), a in arb_accel(), id in any::<u32>()) {
        prop_assume!(is_compatible(u.kind, a.dataflow));
        let opts = DataflowOptions::default();
        let x = dataflow_cost(&u, &a, ParamResidency::of(&u), &opts).unwrap();
        let v = LayerProfile { unit_id: id, ..u };
        prop_assert_eq!(dataflow_cost(&v, &a, ParamResidency::of(&v), &opts).unwrap(), x);
    }

    #[test]
    fn energy_breakdown_is_exact(u in arb_unit(), a in arb_accel()) {
        prop_assume!(is_compatible(u.kind, a.dataflow));
        let c = dataflow_cost(&u, &a, ParamResidency::of(&u), &DataflowOptions::default()).unwrap();
        let e = layer_energy::<Exact>(&c, u.macs, &a, &TechnologyTable::default()).unwrap();
        prop_assert_eq!(e.component_sum(), e.total);
    }

    #[test]
    fn energy_is_affine_in_each_counter(base in proptest::array::uniform10(0u64..1 << 30), field in 0usize..10, k in 1u64..1 << 20, a in arb_accel()) {
        let t = TechnologyTable::default();
        let with = |v: u64| {
            let mut x = base;
            x[field] = v;
            let c = DataflowCost {
                dram_param_bytes: x[0],
                dram_in_act_bytes: x[1],
                dram_out_act_bytes: x[2],
                noc_param_bytes: x[3],
                noc_psum_bytes: x[4],
                noc_act_bytes: x[5],
                buf_param_accesses: x[6],
                buf_act_accesses: x[7],
                rf_accesses: x[8],
                compute_cycles: 0,
                sequential_dram: false,
            };
            // the tenth slot drives the MAC count
            layer_energy::<Exact>(&c, x[9], &a, &t).unwrap().total
        };
        let (e0, e1, e2) = (with(0), with(k), with(2 * k));
        prop_assert_eq!(e2 - e1.clone(), e1 - e0);
    }

    #[test]
    fn throughput_roofline_shape(a in arb_accel(), n in 1u64..1 << 20, d in 1u64..1 << 10) {
        let f = |x: &Exact| roofline_throughput::<Exact>(x, &a);
        let ridge = Exact::from_ratio(&ridge_point(&a));
        let peak = Exact::from_u64(a.peak_flops());
        prop_assert_eq!(f(&ridge), peak.clone());
        let x = Exact::new(n.into(), d.into());
        let y = f(&x);
        if x < ridge {
            prop_assert_eq!(y, x.clone() * Exact::from_u64(a.dram_bandwidth));
        } else {
            prop_assert_eq!(y, peak);
        }
        // concavity at the midpoint of x and 2x
        let two = Exact::from_u64(2);
        let mid = (x.clone() + x.clone() * two.clone()) / two.clone();
        prop_assert!(f(&mid) * two >= f(&x) + f(&(x.clone() * Exact::from_u64(2))));
    }

    #[test]
    fn energy_roofline_is_bounded_and_increasing(n in 1u64..1 << 30, d in 1u64..1 << 10) {
        let t = TechnologyTable::default();
        let x = Exact::new(n.into(), d.into());
        let y = roofline_energy_efficiency::<Exact>(&x, &t).unwrap();
        let bound = Exact::one() / Exact::from_decimal(t.e_mac);
        prop_assert!(y < bound);
        let z = roofline_energy_efficiency::<Exact>(&(x * Exact::from_u64(2)), &t).unwrap();
        prop_assert!(z > y);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn baseline_mapping_is_constant(g in arb_graph()) {
        let p = baseline();
        let low = lower_lstm(&g);
        let prof = profiles(&low);
        let m1 = phase1_map(&classify_all(&prof, p.ranges()), &p).unwrap();
        let (m2, trace) = phase2_trace::<f64>(&m1, &low, &prof, &p, &ScheduleOptions::default()).unwrap();
        let constant = Mapping::constant(low.layers().iter().map(|l| l.id), "Baseline");
        prop_assert_eq!(&m1, &constant);
        prop_assert_eq!(&m2, &constant);
        prop_assert!(trace.is_empty());
    }

    #[test]
    fn phase2_decisions_replay(g in arb_graph(), lambda in prop_oneof![Just(0.0), 1e-3f64..10.0]) {
        let p = mensa();
        let low = lower_lstm(&g);
        let prof = profiles(&low);
        let m1 = phase1_map(&classify_all(&prof, p.ranges()), &p).unwrap();
        let opts = ScheduleOptions { lambda, ..Default::default() };
        let (m2, trace) = phase2_trace::<Exact>(&m1, &low, &prof, &p, &opts).unwrap();
        for d in &trace {
            prop_assert_ne!(m1.accel_of(d.producer), m1.accel_of(d.consumer));
            prop_assert_eq!(d.remapped, matches!(&d.moved, Some(c) if *c < d.keep));
        }
        let decided: BTreeSet<LayerId> = trace.iter().filter(|d| d.remapped).map(|d| d.consumer).collect();
        for l in low.layers() {
            prop_assert_eq!(m1.accel_of(l.id) != m2.accel_of(l.id), decided.contains(&l.id));
        }
    }

    #[test]
    fn report_energy_is_conserved(g in arb_graph()) {
        for p in [baseline(), mensa()] {
            let r = evaluate::<Exact>(&g, &p, &EvalOptions::default()).unwrap().report;
            prop_assert_eq!(r.energy.component_sum(), r.energy.total.clone());
            let units = r.trace.iter().fold(Exact::zero(), |acc, t| acc + t.energy.total.clone());
            let statics = r.accelerators.iter().fold(Exact::zero(), |acc, a| acc + a.static_energy.clone());
            prop_assert_eq!(units + r.transfer_energy.clone() + statics, r.energy.total);
        }
    }

    #[test]
    fn utilization_is_at_most_one(g in arb_graph()) {
        for p in [baseline(), mensa()] {
            let r = evaluate::<Exact>(&g, &p, &EvalOptions::default()).unwrap().report;
            for a in &r.accelerators {
                prop_assert!(a.utilization <= Exact::one());
            }
        }
    }

    #[test]
    fn dropping_an_edge_never_slows_down(g in arb_graph(), pick in any::<prop::sample::Index>()) {
        prop_assume!(!g.edges().is_empty());
        let p = mensa();
        let e = evaluate::<Exact>(&g, &p, &EvalOptions::default()).unwrap();
        prop_assume!(!e.graph.edges().is_empty());
        let relaxed = e.graph.without_edge(pick.index(e.graph.edges().len()));
        let opts = DataflowOptions::default();
        let before = simulate::<Exact>(&e.graph, &e.mapping, &p, &opts).unwrap();
        let after = simulate::<Exact>(&relaxed, &e.mapping, &p, &opts).unwrap();
        prop_assert!(after.total_latency <= before.total_latency);
    }

    #[test]
    fn single_accelerator_work_is_conserved(g in arb_graph()) {
        let p = baseline();
        let a = &p.accelerators[0];
        let r = evaluate::<Exact>(&g, &p, &EvalOptions::default()).unwrap().report;
        let sum = r.trace.iter().fold(Exact::zero(), |acc, t| acc + unit_latency::<Exact>(&t.cost, a));
        prop_assert_eq!(r.total_latency, sum);
        prop_assert!(r.transfer_energy.is_zero());
    }

    #[test]
    fn simulation_is_deterministic(g in arb_graph()) {
        let p = mensa();
        let a = evaluate::<f64>(&g, &p, &EvalOptions::default()).unwrap().report;
        let b = evaluate::<f64>(&g, &p, &EvalOptions::default()).unwrap().report;
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

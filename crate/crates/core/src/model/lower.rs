use std::collections::BTreeMap;

use super::{GateShape, JoinShape, Layer, LayerGraph, LayerId, Shape, LSTM_GATES};

struct Lowered {
    /// `gates[t][g]`
    gates: Vec<[LayerId; LSTM_GATES as usize]>,
    joins: Vec<LayerId>,
}

/// Replaces every `LstmLayer` by `T x 4` gate units plus one cell join per
/// timestep.
///
/// Dependencies: the gates of timestep `t` wait for the join of `t - 1`
/// (recurrent `h_{t-1}`); the join of `t` waits for all four gates of `t`.
/// Gates of one timestep are mutually independent. Fresh ids start after the
/// largest existing id; other layers and their edges are untouched.
pub fn lower_lstm(g: &LayerGraph) -> LayerGraph {
    if g.is_lowered() {
        return g.clone();
    }
    let mut next_id = g.max_id().map_or(0, |m| m + 1);
    let mut layers = Vec::new();
    let mut lowered: BTreeMap<LayerId, Lowered> = BTreeMap::new();
    let mut edges: Vec<(LayerId, LayerId)> = Vec::new();

    for l in g.layers() {
        let Shape::LstmLayer(s) = l.shape else {
            layers.push(*l);
            continue;
        };
        let mut unit = Lowered { gates: Vec::new(), joins: Vec::new() };
        for t in 0..s.timesteps {
            let mut ids = [0; LSTM_GATES as usize];
            for (gate, slot) in ids.iter_mut().enumerate() {
                *slot = next_id;
                next_id += 1;
                let shape = GateShape { d_in: s.d_in, d_h: s.d_h, t, gate: gate as u32 };
                layers.push(Layer { id: *slot, shape: Shape::LstmGateUnit(shape), datum: l.datum });
            }
            let join = next_id;
            next_id += 1;
            layers.push(Layer { id: join, shape: Shape::LstmCellJoin(JoinShape { d_h: s.d_h, t }), datum: l.datum });

            if let Some(&prev) = unit.joins.last() {
                edges.extend(ids.iter().map(|&gid| (prev, gid)));
            }
            edges.extend(ids.iter().map(|&gid| (gid, join)));
            unit.gates.push(ids);
            unit.joins.push(join);
        }
        lowered.insert(l.id, unit);
    }

    for e in g.edges() {
        match (lowered.get(&e.src), lowered.get(&e.dst)) {
            (None, None) => edges.push((e.src, e.dst)),
            (None, Some(dst)) => edges.extend(dst.gates[0].iter().map(|&gid| (e.src, gid))),
            (Some(src), None) => edges.push((*src.joins.last().expect("T >= 1"), e.dst)),
            (Some(src), Some(dst)) => {
                // Layer above consumes h_t of the layer below, timestep by timestep.
                for (t, gates) in dst.gates.iter().enumerate() {
                    let from = src.joins[t.min(src.joins.len() - 1)];
                    edges.extend(gates.iter().map(|&gid| (from, gid)));
                }
            }
        }
    }

    LayerGraph::with_derived_edges(g.name(), layers, &edges)
}

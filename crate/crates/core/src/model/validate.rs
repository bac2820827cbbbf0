use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use super::{Layer, LayerGraph, LayerId, Shape, LSTM_GATES};
use crate::characterize::output_dims;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateId { id: LayerId },
    DanglingEdge { src: LayerId, dst: LayerId, missing: LayerId },
    Cycle { ids: Vec<LayerId> },
    Shape { id: LayerId, reason: String },
    EdgeBytes { src: LayerId, dst: LayerId, expected: u64, found: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { id } => write!(f, "duplicate layer id {id}"),
            Violation::DanglingEdge { src, dst, missing } => {
                write!(f, "edge ({src}, {dst}) references missing layer {missing}")
            }
            Violation::Cycle { ids } => write!(f, "cycle through layers {ids:?}"),
            Violation::Shape { id, reason } => write!(f, "layer {id}: {reason}"),
            Violation::EdgeBytes { src, dst, expected, found } => {
                write!(f, "edge ({src}, {dst}) carries {found} B, producer emits {expected} B")
            }
        }
    }
}

/// Checks every graph invariant and returns all violations found. An empty
/// list means the graph is valid.
pub fn validate_graph(g: &LayerGraph) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut seen = BTreeSet::new();
    for l in g.layers() {
        if !seen.insert(l.id) {
            out.push(Violation::DuplicateId { id: l.id });
        }
        if let Err(reason) = check_shape(l) {
            out.push(Violation::Shape { id: l.id, reason });
        }
    }

    let by_id: BTreeMap<LayerId, &Layer> = g.layers().iter().map(|l| (l.id, l)).collect();
    let mut dangling = false;
    for e in g.edges() {
        for end in [e.src, e.dst] {
            if !by_id.contains_key(&end) {
                out.push(Violation::DanglingEdge { src: e.src, dst: e.dst, missing: end });
                dangling = true;
            }
        }
        if let Some(producer) = by_id.get(&e.src) {
            if let Ok(expected) = producer.out_act_bytes() {
                if expected != e.bytes {
                    out.push(Violation::EdgeBytes { src: e.src, dst: e.dst, expected, found: e.bytes });
                }
            }
        }
    }

    if !dangling {
        if let Err(ids) = topological_order(g) {
            out.push(Violation::Cycle { ids });
        }
    }
    out
}

fn check_shape(l: &Layer) -> Result<(), String> {
    if l.datum == 0 {
        return Err("datum width must be at least 1 byte".into());
    }
    let positive = |name: &str, v: u32| if v == 0 { Err(format!("{name} must be >= 1")) } else { Ok(()) };
    match &l.shape {
        Shape::Conv(c) | Shape::Depthwise(c) | Shape::Pointwise(c) => {
            positive("hi", c.hi)?;
            positive("wi", c.wi)?;
            positive("cin", c.cin)?;
            positive("cout", c.cout)?;
            positive("kh", c.kh)?;
            positive("kw", c.kw)?;
            positive("stride", c.stride)?;
            if matches!(l.shape, Shape::Pointwise(_)) && (c.kh != 1 || c.kw != 1) {
                return Err(format!("pointwise kernel must be 1x1, got {}x{}", c.kh, c.kw));
            }
            if matches!(l.shape, Shape::Depthwise(_)) && c.cout != c.cin {
                return Err(format!("depthwise requires cout == cin, got cin={} cout={}", c.cin, c.cout));
            }
            output_dims(c).map_err(|e| e.to_string())?;
        }
        Shape::FullyConnected { inputs, outputs } => {
            positive("in", *inputs)?;
            positive("out", *outputs)?;
        }
        Shape::LstmLayer(s) => {
            positive("d_in", s.d_in)?;
            positive("d_h", s.d_h)?;
            positive("timesteps", s.timesteps)?;
            if s.gates != LSTM_GATES {
                return Err(format!("LSTM layers have {LSTM_GATES} gates, got {}", s.gates));
            }
        }
        Shape::LstmGateUnit(s) => {
            positive("d_in", s.d_in)?;
            positive("d_h", s.d_h)?;
            if s.gate >= LSTM_GATES {
                return Err(format!("gate index {} out of range", s.gate));
            }
        }
        Shape::LstmCellJoin(s) => positive("d_h", s.d_h)?,
    }
    Ok(())
}

/// Kahn's algorithm, always releasing the ready layer that appears first in
/// the layer list. Returns layer-list indices, or the ids on a cycle.
///
/// Dangling edges are ignored here; [`validate_graph`] reports them.
pub fn topological_order(g: &LayerGraph) -> Result<Vec<usize>, Vec<LayerId>> {
    let index = g.index_of();
    let n = g.layers().len();
    let mut indegree = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in g.edges() {
        if let (Some(&s), Some(&d)) = (index.get(&e.src), index.get(&e.dst)) {
            succ[s].push(d);
            indegree[d] += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &d in &succ[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                ready.push(Reverse(d));
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    let stuck: Vec<usize> = (0..n).filter(|&i| indegree[i] > 0).collect();
    Err(find_cycle(g, &succ, &stuck))
}

fn find_cycle(g: &LayerGraph, succ: &[Vec<usize>], stuck: &[usize]) -> Vec<LayerId> {
    // Every stuck node has a stuck predecessor, so walking predecessors from
    // any of them must revisit a node.
    let stuck_set: BTreeSet<usize> = stuck.iter().copied().collect();
    let mut pred: BTreeMap<usize, usize> = BTreeMap::new();
    for (s, ds) in succ.iter().enumerate() {
        if !stuck_set.contains(&s) {
            continue;
        }
        for &d in ds {
            if stuck_set.contains(&d) {
                pred.entry(d).or_insert(s);
            }
        }
    }
    let mut path = Vec::new();
    let mut pos: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cur = stuck[0];
    while !pos.contains_key(&cur) {
        pos.insert(cur, path.len());
        path.push(cur);
        cur = pred[&cur];
    }
    let mut cycle: Vec<LayerId> = path[pos[&cur]..].iter().map(|&i| g.layers()[i].id).collect();
    cycle.reverse();
    cycle
}

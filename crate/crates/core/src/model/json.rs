//! Canonical JSON model files.
//!
//! ```json
//! {"edges": [[0, 1]], "layers": [{"id": 0, "kind": "Conv", ...}], "name": "m"}
//! ```
//!
//! Unknown fields are rejected. Edges may carry a third element with authored
//! byte counts; it is ignored (with a warning when it disagrees) because edge
//! bytes are always derived from the producer. Serialization sorts keys and
//! writes edges as `[src, dst]` pairs.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{
    validate_graph, ConvShape, GateShape, JoinShape, Layer, LayerGraph, LayerId, LayerKind, LstmShape, ModelError,
    Shape, Violation, LSTM_GATES,
};

fn default_datum() -> u32 {
    1
}

fn default_gates() -> u32 {
    LSTM_GATES
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConv {
    id: LayerId,
    #[serde(default = "default_datum")]
    datum: u32,
    hi: u32,
    wi: u32,
    cin: u32,
    cout: u32,
    kh: u32,
    kw: u32,
    stride: u32,
    padding: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFc {
    id: LayerId,
    #[serde(default = "default_datum")]
    datum: u32,
    #[serde(rename = "in")]
    inputs: u32,
    #[serde(rename = "out")]
    outputs: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLstm {
    id: LayerId,
    #[serde(default = "default_datum")]
    datum: u32,
    d_in: u32,
    d_h: u32,
    timesteps: u32,
    #[serde(default = "default_gates")]
    gates: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGate {
    id: LayerId,
    #[serde(default = "default_datum")]
    datum: u32,
    d_in: u32,
    d_h: u32,
    t: u32,
    gate: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJoin {
    id: LayerId,
    #[serde(default = "default_datum")]
    datum: u32,
    d_h: u32,
    t: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    layers: Vec<Map<String, Value>>,
    #[serde(default)]
    edges: Vec<Vec<u64>>,
}

/// Parses and validates a model file.
pub fn parse_model(contents: &[u8]) -> Result<LayerGraph, ModelError> {
    let (graph, warnings) = parse_model_with_warnings(contents)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(graph)
}

/// Like [`parse_model`], returning the warnings instead of logging them.
pub fn parse_model_with_warnings(contents: &[u8]) -> Result<(LayerGraph, Vec<String>), ModelError> {
    let raw: RawModel = serde_json::from_slice(contents).map_err(|e| ModelError::Syntax(e.to_string()))?;

    let mut layers = Vec::with_capacity(raw.layers.len());
    for (i, obj) in raw.layers.into_iter().enumerate() {
        layers.push(parse_layer(i, obj)?);
    }

    let mut pairs = Vec::with_capacity(raw.edges.len());
    let mut authored = Vec::new();
    for (i, e) in raw.edges.iter().enumerate() {
        let id = |v: u64| {
            LayerId::try_from(v).map_err(|_| ModelError::Syntax(format!("edge #{i}: layer id {v} out of range")))
        };
        match e.as_slice() {
            [s, d] => pairs.push((id(*s)?, id(*d)?)),
            [s, d, b] => {
                pairs.push((id(*s)?, id(*d)?));
                authored.push((pairs.len() - 1, *b));
            }
            _ => return Err(ModelError::Syntax(format!("edge #{i}: expected [src, dst] or [src, dst, bytes]"))),
        }
    }

    let graph = LayerGraph::with_derived_edges(raw.name, layers, &pairs);
    let violations = validate_graph(&graph);
    if let Some(first) = pick_reported(&violations) {
        return Err(match first.clone() {
            Violation::Shape { id, reason } => ModelError::BadLayer { id: id.to_string(), reason },
            Violation::DuplicateId { id } => ModelError::BadLayer { id: id.to_string(), reason: "duplicate id".into() },
            v => v.into(),
        });
    }

    let mut warnings = Vec::new();
    for (idx, bytes) in authored {
        let e = graph.edges()[idx];
        if e.bytes != bytes {
            warnings
                .push(format!("edge ({}, {}): authored {} B replaced by derived {} B", e.src, e.dst, bytes, e.bytes));
        }
    }
    Ok((graph, warnings))
}

// Dangling edges first so the error names the missing id, then cycles, then
// per-layer problems.
fn pick_reported(v: &[Violation]) -> Option<&Violation> {
    v.iter()
        .find(|x| matches!(x, Violation::DanglingEdge { .. }))
        .or_else(|| v.iter().find(|x| matches!(x, Violation::Cycle { .. })))
        .or_else(|| v.first())
}

fn parse_layer(index: usize, mut obj: Map<String, Value>) -> Result<Layer, ModelError> {
    let ident = obj.get("id").map(|v| v.to_string()).unwrap_or_else(|| format!("#{index}"));
    let kind = match obj.remove("kind") {
        Some(Value::String(s)) => s,
        Some(other) => return Err(ModelError::UnknownKind { id: ident, kind: other.to_string() }),
        None => return Err(ModelError::BadLayer { id: ident, reason: "missing `kind`".into() }),
    };
    let Some(kind) = LayerKind::parse(&kind) else {
        return Err(ModelError::UnknownKind { id: ident, kind });
    };
    let value = Value::Object(obj);
    let bad = |e: serde_json::Error| ModelError::BadLayer { id: ident.clone(), reason: e.to_string() };
    fn de<T: DeserializeOwned>(v: Value) -> Result<T, serde_json::Error> {
        serde_json::from_value(v)
    }
    let layer = match kind {
        LayerKind::Conv | LayerKind::Depthwise | LayerKind::Pointwise => {
            let r: RawConv = de(value).map_err(bad)?;
            let c = ConvShape {
                hi: r.hi,
                wi: r.wi,
                cin: r.cin,
                cout: r.cout,
                kh: r.kh,
                kw: r.kw,
                stride: r.stride,
                padding: r.padding,
            };
            let shape = match kind {
                LayerKind::Conv => Shape::Conv(c),
                LayerKind::Depthwise => Shape::Depthwise(c),
                _ => Shape::Pointwise(c),
            };
            Layer { id: r.id, shape, datum: r.datum }
        }
        LayerKind::FullyConnected => {
            let r: RawFc = de(value).map_err(bad)?;
            Layer { id: r.id, shape: Shape::FullyConnected { inputs: r.inputs, outputs: r.outputs }, datum: r.datum }
        }
        LayerKind::LstmLayer => {
            let r: RawLstm = de(value).map_err(bad)?;
            let s = LstmShape { d_in: r.d_in, d_h: r.d_h, timesteps: r.timesteps, gates: r.gates };
            Layer { id: r.id, shape: Shape::LstmLayer(s), datum: r.datum }
        }
        LayerKind::LstmGateUnit => {
            let r: RawGate = de(value).map_err(bad)?;
            let s = GateShape { d_in: r.d_in, d_h: r.d_h, t: r.t, gate: r.gate };
            Layer { id: r.id, shape: Shape::LstmGateUnit(s), datum: r.datum }
        }
        LayerKind::LstmCellJoin => {
            let r: RawJoin = de(value).map_err(bad)?;
            Layer { id: r.id, shape: Shape::LstmCellJoin(JoinShape { d_h: r.d_h, t: r.t }), datum: r.datum }
        }
    };
    Ok(layer)
}

fn layer_value(l: &Layer) -> Value {
    let (id, datum) = (l.id, l.datum);
    let mut v = match &l.shape {
        Shape::Conv(c) | Shape::Depthwise(c) | Shape::Pointwise(c) => serde_json::to_value(RawConv {
            id,
            datum,
            hi: c.hi,
            wi: c.wi,
            cin: c.cin,
            cout: c.cout,
            kh: c.kh,
            kw: c.kw,
            stride: c.stride,
            padding: c.padding,
        }),
        Shape::FullyConnected { inputs, outputs } => {
            serde_json::to_value(RawFc { id, datum, inputs: *inputs, outputs: *outputs })
        }
        Shape::LstmLayer(s) => serde_json::to_value(RawLstm {
            id,
            datum,
            d_in: s.d_in,
            d_h: s.d_h,
            timesteps: s.timesteps,
            gates: s.gates,
        }),
        Shape::LstmGateUnit(s) => {
            serde_json::to_value(RawGate { id, datum, d_in: s.d_in, d_h: s.d_h, t: s.t, gate: s.gate })
        }
        Shape::LstmCellJoin(s) => serde_json::to_value(RawJoin { id, datum, d_h: s.d_h, t: s.t }),
    }
    .expect("plain struct serializes");
    v.as_object_mut().expect("object").insert("kind".into(), Value::String(l.kind().as_str().into()));
    v
}

/// Canonical, byte-stable serialization (sorted keys, two-space indent,
/// trailing newline).
pub fn serialize_model(g: &LayerGraph) -> String {
    let mut top = Map::new();
    top.insert("name".into(), Value::String(g.name().to_string()));
    top.insert("layers".into(), Value::Array(g.layers().iter().map(layer_value).collect()));
    top.insert(
        "edges".into(),
        Value::Array(g.edges().iter().map(|e| Value::Array(vec![e.src.into(), e.dst.into()])).collect()),
    );
    let mut s = serde_json::to_string_pretty(&Value::Object(top)).expect("json");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_fc_layer() {
        let g = parse_model(br#"{"name":"fc","layers":[{"id":0,"kind":"FullyConnected","in":4,"out":4}],"edges":[]}"#)
            .unwrap();
        assert_eq!(g.layers().len(), 1);
        assert!(g.edges().is_empty());
        assert_eq!(g.layers()[0].shape, Shape::FullyConnected { inputs: 4, outputs: 4 });
    }

    #[test]
    fn conv_then_fc_edge_bytes_are_derived() {
        let text = br#"{"name":"c","layers":[
            {"id":0,"kind":"Conv","hi":56,"wi":56,"cin":64,"cout":256,"kh":1,"kw":1,"stride":1,"padding":0},
            {"id":1,"kind":"FullyConnected","in":802816,"out":10}],
            "edges":[[0,1]]}"#;
        let g = parse_model(text).unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.edges()[0].bytes, 802_816);
    }

    #[test]
    fn dangling_edge_names_missing_id() {
        let text = br#"{"name":"d","layers":[{"id":0,"kind":"FullyConnected","in":4,"out":4}],"edges":[[0,7]]}"#;
        match parse_model(text) {
            Err(ModelError::DanglingEdge { missing, .. }) => assert_eq!(missing, 7),
            other => panic!("expected dangling edge, got {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_and_fields_rejected() {
        let text = br#"{"name":"u","layers":[{"id":3,"kind":"Attention","heads":8}],"edges":[]}"#;
        assert_eq!(parse_model(text), Err(ModelError::UnknownKind { id: "3".into(), kind: "Attention".into() }));
        let text = br#"{"name":"u","layers":[{"id":3,"kind":"FullyConnected","in":1,"out":1,"bias":true}],"edges":[]}"#;
        assert!(matches!(parse_model(text), Err(ModelError::BadLayer { id, .. }) if id == "3"));
        let text = br#"{"name":"u","layers":[],"edges":[],"extra":1}"#;
        assert!(matches!(parse_model(text), Err(ModelError::Syntax(_))));
    }

    #[test]
    fn malformed_syntax() {
        assert!(matches!(parse_model(b"{not json"), Err(ModelError::Syntax(_))));
    }

    #[test]
    fn cycle_is_reported() {
        let text = br#"{"name":"c","layers":[{"id":0,"kind":"FullyConnected","in":4,"out":4},
            {"id":1,"kind":"FullyConnected","in":4,"out":4}],"edges":[[0,1],[1,0]]}"#;
        assert!(matches!(parse_model(text), Err(ModelError::Cycle(ids)) if ids.len() == 2));
    }

    #[test]
    fn authored_bytes_overwritten_with_warning() {
        let text = br#"{"name":"w","layers":[{"id":0,"kind":"FullyConnected","in":4,"out":4},
            {"id":1,"kind":"FullyConnected","in":4,"out":4}],"edges":[[0,1,100]]}"#;
        let (g, warnings) = parse_model_with_warnings(text).unwrap();
        assert_eq!(g.edges()[0].bytes, 4);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn canonical_form_sorts_keys_and_round_trips() {
        let text = br#"{"layers":[{"kind":"FullyConnected","out":2,"in":3,"id":0}],"name":"x","edges":[]}"#;
        let g = parse_model(text).unwrap();
        let s = serialize_model(&g);
        assert_eq!(
            s,
            "{\n  \"edges\": [],\n  \"layers\": [\n    {\n      \"datum\": 1,\n      \"id\": 0,\n      \"in\": 3,\n      \"kind\": \"FullyConnected\",\n      \"out\": 2\n    }\n  ],\n  \"name\": \"x\"\n}\n"
        );
        assert_eq!(parse_model(s.as_bytes()).unwrap(), g);
        assert_eq!(serialize_model(&parse_model(s.as_bytes()).unwrap()), s);
    }
}

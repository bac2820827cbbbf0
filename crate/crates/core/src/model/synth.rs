//! Deterministic synthetic model generators.
//!
//! The palettes below are fixed so that, at `scale = 1`, generated layers land
//! inside the five built-in cluster ranges:
//!
//! | block        | layer                            | params   | FLOP/B | MACs   | cluster |
//! |--------------|----------------------------------|----------|--------|--------|---------|
//! | `stem`, `s1` | conv 3x3 56x56 64->64            | 36.9 KB  | 3136   | 115.6M | 1       |
//! | `t1`         | conv 3x3/2 56->28 64->128        | 73.7 KB  | 784    | 57.8M  | 1       |
//! | `t2`         | conv 3x3/2 28->14 128->256       | 294.9 KB | 196    | 57.8M  | 2       |
//! | `pw_expand`  | pointwise 14x14 256->512         | 131.1 KB | 196    | 25.7M  | 2       |
//! | `dw`         | depthwise 3x3 14x14x512          | 4.6 KB   | 196    | 0.9M   | 5       |
//! | `pw`         | pointwise 14x14 512->512         | 262.1 KB | 196    | 51.4M  | 2       |
//! | `pw_reduce`  | pointwise 14x14 512->256         | 131.1 KB | 196    | 25.7M  | 2       |
//! | `t3`, `s4`   | conv 3x3 ->6x6 256->256          | 589.8 KB | 36     | 21.2M  | 4       |
//! | `fc`         | FC 9216->1000                    | 9.2 MB   | 1      | 9.2M   | 3       |
//!
//! LSTM hidden sizes come from [`LSTM_HIDDEN_PALETTE`]; every gate then holds
//! 1.2–3.3 MB of parameters (cluster 3) and every layer's four gates exceed a
//! 4 MiB parameter buffer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConvShape, Layer, LayerGraph, LayerId, LstmShape, Shape, LSTM_GATES};

pub const LSTM_HIDDEN_PALETTE: [u32; 3] = [768, 1024, 1280];
pub const LSTM_TIMESTEP_PALETTE: [u32; 3] = [16, 24, 32];
/// Output width of the transducer joint FC.
pub const TRANSDUCER_JOINT_OUT: u32 = 2048;

/// Named CNN blocks, in backbone order.
pub const CNN_PALETTE: [&str; 11] = ["stem", "s1", "t1", "t2", "pw_expand", "dw", "pw", "pw_reduce", "t3", "s4", "fc"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    Cnn,
    Lstm,
    Transducer,
    Rcnn,
}

impl Archetype {
    pub fn as_str(&self) -> &'static str {
        match self {
            Archetype::Cnn => "cnn",
            Archetype::Lstm => "lstm",
            Archetype::Transducer => "transducer",
            Archetype::Rcnn => "rcnn",
        }
    }
}

impl std::str::FromStr for Archetype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cnn" => Ok(Archetype::Cnn),
            "lstm" => Ok(Archetype::Lstm),
            "transducer" => Ok(Archetype::Transducer),
            "rcnn" => Ok(Archetype::Rcnn),
            other => Err(format!("unknown archetype `{other}` (cnn, lstm, transducer, rcnn)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub archetype: Archetype,
    /// Number of layers (pre-lowering).
    pub depth: u32,
    pub seed: u64,
    /// Channel / hidden-size multiplier.
    pub scale: u32,
}

impl SyntheticSpec {
    pub fn new(archetype: Archetype, depth: u32, seed: u64) -> Self {
        Self { archetype, depth, seed, scale: 1 }
    }
}

#[derive(Clone, Copy)]
enum Block {
    Stem,
    S1,
    T1,
    T2,
    PwExpand,
    Dw,
    Pw,
    PwReduce,
    T3,
    S4,
    Fc,
}

impl Block {
    fn shape(self, scale: u32) -> Shape {
        let c = |n: u32| n * scale;
        match self {
            Block::Stem | Block::S1 => Shape::Conv(ConvShape::new(56, 56, c(64), c(64), 3, 1, 1)),
            Block::T1 => Shape::Conv(ConvShape::new(56, 56, c(64), c(128), 3, 2, 1)),
            Block::T2 => Shape::Conv(ConvShape::new(28, 28, c(128), c(256), 3, 2, 1)),
            Block::PwExpand => Shape::Pointwise(ConvShape::new(14, 14, c(256), c(512), 1, 1, 0)),
            Block::Dw => Shape::Depthwise(ConvShape::new(14, 14, c(512), c(512), 3, 1, 1)),
            Block::Pw => Shape::Pointwise(ConvShape::new(14, 14, c(512), c(512), 1, 1, 0)),
            Block::PwReduce => Shape::Pointwise(ConvShape::new(14, 14, c(512), c(256), 1, 1, 0)),
            Block::T3 => Shape::Conv(ConvShape::new(14, 14, c(256), c(256), 3, 2, 0)),
            Block::S4 => Shape::Conv(ConvShape::new(6, 6, c(256), c(256), 3, 1, 1)),
            Block::Fc => Shape::FullyConnected { inputs: 6 * 6 * c(256), outputs: 1000 },
        }
    }
}

/// Backbone with one dw/pw pair; shorter models are prefixes of it.
const BASE: [Block; 9] =
    [Block::Stem, Block::T1, Block::T2, Block::PwExpand, Block::Dw, Block::Pw, Block::PwReduce, Block::T3, Block::Fc];

fn cnn_blocks(depth: u32, rng: &mut ChaCha8Rng) -> Vec<Block> {
    let depth = depth as usize;
    if depth <= BASE.len() {
        return BASE[..depth].to_vec();
    }
    let (mut n1, mut pairs, mut n4) = (0usize, 1usize, 0usize);
    let mut extra = depth - BASE.len();
    while extra > 0 {
        match rng.gen_range(0..3) {
            0 => {
                n1 += 1;
                extra -= 1;
            }
            1 if extra >= 2 => {
                pairs += 1;
                extra -= 2;
            }
            _ => {
                n4 += 1;
                extra -= 1;
            }
        }
    }
    let mut out = vec![Block::Stem];
    out.extend(std::iter::repeat_n(Block::S1, n1));
    out.extend([Block::T1, Block::T2, Block::PwExpand]);
    for _ in 0..pairs {
        out.extend([Block::Dw, Block::Pw]);
    }
    out.extend([Block::PwReduce, Block::T3]);
    out.extend(std::iter::repeat_n(Block::S4, n4));
    out.push(Block::Fc);
    out
}

struct Builder {
    layers: Vec<Layer>,
    edges: Vec<(LayerId, LayerId)>,
}

impl Builder {
    fn push(&mut self, shape: Shape, after: Option<LayerId>) -> LayerId {
        let id = self.layers.len() as LayerId;
        self.layers.push(Layer::new(id, shape));
        if let Some(p) = after {
            self.edges.push((p, id));
        }
        id
    }

    /// Appends a chain of LSTM layers; returns (last id, last hidden size).
    fn lstm_stack(
        &mut self,
        n: u32,
        d_in: u32,
        timesteps: u32,
        scale: u32,
        after: Option<LayerId>,
        rng: &mut ChaCha8Rng,
    ) -> (Option<LayerId>, u32) {
        let mut prev = after;
        let mut d_in = d_in;
        for _ in 0..n {
            let d_h = *LSTM_HIDDEN_PALETTE.choose(rng).expect("palette") * scale;
            let d = if d_in == 0 { d_h } else { d_in };
            let shape = LstmShape { d_in: d, d_h, timesteps, gates: LSTM_GATES };
            prev = Some(self.push(Shape::LstmLayer(shape), prev));
            d_in = d_h;
        }
        (prev, d_in)
    }
}

/// Generates a model of the requested archetype. Identical specs always
/// produce identical graphs.
pub fn generate_synthetic(spec: &SyntheticSpec) -> LayerGraph {
    let depth = spec.depth.max(1);
    let scale = spec.scale.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut b = Builder { layers: Vec::new(), edges: Vec::new() };
    let name = format!("{}-d{}-s{}-x{}", spec.archetype.as_str(), depth, spec.seed, scale);

    match spec.archetype {
        Archetype::Cnn => {
            let mut prev = None;
            for block in cnn_blocks(depth, &mut rng) {
                prev = Some(b.push(block.shape(scale), prev));
            }
        }
        Archetype::Lstm => {
            let t = *LSTM_TIMESTEP_PALETTE.choose(&mut rng).expect("palette");
            b.lstm_stack(depth, 0, t, scale, None, &mut rng);
        }
        Archetype::Transducer => {
            // encoder (two stacked blocks) and prediction network feed one joint FC
            let rest = depth - 1;
            let sizes = [rest.div_ceil(3), (rest + 1) / 3, rest / 3];
            let t_enc = *LSTM_TIMESTEP_PALETTE.choose(&mut rng).expect("palette");
            let t_pred = *LSTM_TIMESTEP_PALETTE.choose(&mut rng).expect("palette");
            let (enc_low, d_low) = b.lstm_stack(sizes[0], 0, t_enc, scale, None, &mut rng);
            let (enc, d_enc) = b.lstm_stack(sizes[1], d_low, t_enc, scale, enc_low, &mut rng);
            let (enc, d_enc) = if sizes[1] == 0 { (enc_low, d_low) } else { (enc, d_enc) };
            let (pred, d_pred) = b.lstm_stack(sizes[2], 0, t_pred, scale, None, &mut rng);
            let width = |d: u32| if d == 0 { 1024 * scale } else { d };
            let joint = b.push(
                Shape::FullyConnected { inputs: width(d_enc) + width(d_pred), outputs: TRANSDUCER_JOINT_OUT },
                None,
            );
            for p in [enc, pred].into_iter().flatten() {
                b.edges.push((p, joint));
            }
        }
        Archetype::Rcnn => {
            let n_conv = depth.div_ceil(2);
            let mut prev = None;
            for block in cnn_blocks(n_conv, &mut rng).into_iter().filter(|bl| !matches!(bl, Block::Fc)) {
                prev = Some(b.push(block.shape(scale), prev));
            }
            // long front-ends lose their FC head; pad with 6x6 convs
            while (b.layers.len() as u32) < n_conv {
                prev = Some(b.push(Block::S4.shape(scale), prev));
            }
            let t = *LSTM_TIMESTEP_PALETTE.choose(&mut rng).expect("palette");
            b.lstm_stack(depth - n_conv, 0, t, scale, prev, &mut rng);
        }
    }

    LayerGraph::new(name, b.layers, &b.edges).expect("generated graphs are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerKind;

    #[test]
    fn lstm_two_layers_chain() {
        let g = generate_synthetic(&SyntheticSpec::new(Archetype::Lstm, 2, 0));
        assert_eq!(g.layers().len(), 2);
        assert!(g.layers().iter().all(|l| l.kind() == LayerKind::LstmLayer));
        assert_eq!(g.edges().len(), 1);
        assert_eq!((g.edges()[0].src, g.edges()[0].dst), (0, 1));
    }

    #[test]
    fn rcnn_conv_front_lstm_back() {
        let g = generate_synthetic(&SyntheticSpec::new(Archetype::Rcnn, 6, 1));
        let kinds: Vec<_> = g.layers().iter().map(|l| l.kind()).collect();
        assert_eq!(kinds.len(), 6);
        assert!(kinds[..3].iter().all(|k| *k == LayerKind::Conv));
        assert!(kinds[3..].iter().all(|k| *k == LayerKind::LstmLayer));
    }

    #[test]
    fn transducer_has_joint_fed_by_two_blocks() {
        let g = generate_synthetic(&SyntheticSpec::new(Archetype::Transducer, 7, 3));
        assert_eq!(g.layers().len(), 7);
        let joint = g.layers().iter().find(|l| l.kind() == LayerKind::FullyConnected).unwrap();
        assert_eq!(g.edges().iter().filter(|e| e.dst == joint.id).count(), 2);
    }

    #[test]
    fn deterministic_in_seed() {
        for arch in [Archetype::Cnn, Archetype::Lstm, Archetype::Transducer, Archetype::Rcnn] {
            for depth in [1, 5, 14] {
                let spec = SyntheticSpec::new(arch, depth, 42);
                assert_eq!(generate_synthetic(&spec), generate_synthetic(&spec));
                assert_eq!(generate_synthetic(&spec).layers().len(), depth as usize);
            }
        }
    }
}

//! Rule-based assignment of units to the five layer clusters.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::characterize::LayerProfile;
use crate::model::LayerId;

pub type ClusterId = u8;

/// Cluster that parameter-free units (LSTM cell joins) follow: they run
/// wherever the gates they combine run.
pub const PARAMETER_FREE_CLUSTER: ClusterId = 3;

/// Inclusive bounds on the three clustering features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterRange {
    pub id: ClusterId,
    /// Parameter footprint in bytes.
    pub param_bytes: [u64; 2],
    /// MACs per parameter byte.
    pub param_intensity: [u64; 2],
    pub macs: [u64; 2],
}

const KB: u64 = 1_000;
const MB: u64 = 1_000_000;

/// The five built-in clusters.
pub const BUILTIN_RANGES: [ClusterRange; 5] = [
    ClusterRange { id: 1, param_bytes: [KB, 100 * KB], param_intensity: [780, 20_000], macs: [30 * MB, 200 * MB] },
    ClusterRange { id: 2, param_bytes: [100 * KB, 500 * KB], param_intensity: [81, 400], macs: [20 * MB, 100 * MB] },
    ClusterRange { id: 3, param_bytes: [900 * KB, 18 * MB], param_intensity: [0, 2], macs: [100 * KB, 10 * MB] },
    ClusterRange { id: 4, param_bytes: [500 * KB, 2_500 * KB], param_intensity: [25, 64], macs: [5 * MB, 25 * MB] },
    ClusterRange { id: 5, param_bytes: [KB, 100 * KB], param_intensity: [49, 600], macs: [500 * KB, 5 * MB] },
];

impl ClusterRange {
    pub fn is_well_formed(&self) -> bool {
        self.param_bytes[0] <= self.param_bytes[1]
            && self.param_intensity[0] <= self.param_intensity[1]
            && self.macs[0] <= self.macs[1]
    }

    pub fn contains(&self, p: &LayerProfile) -> bool {
        let Some(intensity) = p.param_intensity() else {
            return false;
        };
        let within = |v: u64, r: [u64; 2]| r[0] <= v && v <= r[1];
        within(p.param_bytes, self.param_bytes)
            && within(p.macs, self.macs)
            && Ratio::from_integer(self.param_intensity[0]) <= intensity
            && intensity <= Ratio::from_integer(self.param_intensity[1])
    }

    /// Geometric midpoint of the box, in log10 units. Lower bounds below 1 are
    /// raised to 1 first.
    pub fn centroid(&self) -> [f64; 3] {
        let mid = |r: [u64; 2]| ((r[0].max(1) as f64).log10() + (r[1].max(1) as f64).log10()) / 2.0;
        [mid(self.param_bytes), mid(self.param_intensity), mid(self.macs)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchKind {
    ExactRange,
    NearestFallback,
}

impl fmt::Display for MatchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchKind::ExactRange => "exact-range",
            MatchKind::NearestFallback => "nearest-fallback",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub unit_id: LayerId,
    pub cluster: ClusterId,
    pub matched: MatchKind,
    pub distance: f64,
}

/// Log10 feature point of a profile; every feature is clamped to at least 1.
pub fn feature_point(p: &LayerProfile) -> [f64; 3] {
    let intensity = p.param_intensity().and_then(|r| r.to_f64()).unwrap_or(0.0).max(1.0);
    [(p.param_bytes.max(1) as f64).log10(), intensity.log10(), (p.macs.max(1) as f64).log10()]
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Closest centroid to a log10 feature point; ties go to the lowest id.
pub fn nearest_to_point(point: &[f64; 3], ranges: &[ClusterRange]) -> (ClusterId, f64) {
    let mut best: Option<(ClusterId, f64)> = None;
    for r in ranges {
        let d = distance(point, &r.centroid());
        best = match best {
            Some((id, bd)) if bd < d || (bd == d && id < r.id) => Some((id, bd)),
            _ => Some((r.id, d)),
        };
    }
    best.expect("at least one cluster range")
}

/// Closest cluster centroid in log10 feature space.
pub fn nearest_cluster(p: &LayerProfile, ranges: &[ClusterRange]) -> (ClusterId, f64) {
    nearest_to_point(&feature_point(p), ranges)
}

/// Assigns a unit to a cluster: a unique containing range wins outright,
/// several containing ranges are separated by centroid distance, and
/// uncontained units fall back to the nearest centroid.
pub fn classify(p: &LayerProfile, ranges: &[ClusterRange]) -> ClusterAssignment {
    let exact =
        |cluster| ClusterAssignment { unit_id: p.unit_id, cluster, matched: MatchKind::ExactRange, distance: 0.0 };
    let fallback = |(cluster, distance)| ClusterAssignment {
        unit_id: p.unit_id,
        cluster,
        matched: MatchKind::NearestFallback,
        distance,
    };

    if p.param_bytes == 0 {
        let target = ranges.iter().find(|r| r.id == PARAMETER_FREE_CLUSTER).or(ranges.first()).expect("ranges");
        return fallback((target.id, distance(&feature_point(p), &target.centroid())));
    }
    let hits: Vec<ClusterRange> = ranges.iter().copied().filter(|r| r.contains(p)).collect();
    match hits.len() {
        0 => fallback(nearest_cluster(p, ranges)),
        1 => exact(hits[0].id),
        _ => exact(nearest_cluster(p, &hits).0),
    }
}

pub fn classify_all(profiles: &[LayerProfile], ranges: &[ClusterRange]) -> Vec<ClusterAssignment> {
    profiles.iter().map(|p| classify(p, ranges)).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterStat {
    pub count: u64,
    pub exact: u64,
    pub param_bytes: u64,
    pub macs: u64,
    /// Mean parameter intensity over members that have parameters.
    pub mean_param_intensity: Option<BigRational>,
}

impl ClusterStat {
    pub fn mean_intensity_f64(&self) -> Option<f64> {
        self.mean_param_intensity.as_ref().and_then(|r| r.to_f64())
    }
}

/// Per-cluster aggregates keyed by cluster id. Every cluster in `ranges`
/// appears, even when empty.
pub fn cluster_stats(
    assignments: &[ClusterAssignment],
    profiles: &[LayerProfile],
    ranges: &[ClusterRange],
) -> BTreeMap<ClusterId, ClusterStat> {
    let by_id: BTreeMap<LayerId, &LayerProfile> = profiles.iter().map(|p| (p.unit_id, p)).collect();
    let mut out: BTreeMap<ClusterId, ClusterStat> = ranges.iter().map(|r| (r.id, ClusterStat::default())).collect();
    let mut sums: BTreeMap<ClusterId, (BigRational, u64)> = BTreeMap::new();
    for a in assignments {
        let Some(p) = by_id.get(&a.unit_id) else { continue };
        let stat = out.entry(a.cluster).or_default();
        stat.count += 1;
        stat.exact += u64::from(a.matched == MatchKind::ExactRange);
        stat.param_bytes += p.param_bytes;
        stat.macs += p.macs;
        if let Some(i) = p.param_intensity() {
            let entry = sums.entry(a.cluster).or_insert((BigRational::zero(), 0));
            entry.0 += BigRational::new(BigInt::from(*i.numer()), BigInt::from(*i.denom()));
            entry.1 += 1;
        }
    }
    for (id, (sum, n)) in sums {
        if let Some(stat) = out.get_mut(&id) {
            stat.mean_param_intensity = Some(sum / BigInt::from(n));
        }
    }
    out
}

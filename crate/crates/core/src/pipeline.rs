//! End-to-end evaluation: lower, profile, cluster, map, simulate.

use thiserror::Error;

use crate::accel::{AccelError, Platform};
use crate::characterize::{model_summary, GeometryError, LayerProfile};
use crate::cluster::{classify_all, ClusterAssignment};
use crate::dataflow::DataflowOptions;
use crate::model::{lower_lstm, LayerGraph};
use crate::scalar::Scalar;
use crate::scheduler::{phase1_map, phase2_adjust, Mapping, ScheduleError, ScheduleOptions};
use crate::sim::{ratios_of, simulate_profiled, ComparisonReport, SimError, SimReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Accel(#[from] AccelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("a comparison needs at least two platforms, got {0}")]
    TooFewPlatforms(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalOptions {
    /// Energy weight of the phase-2 objective.
    pub lambda: f64,
    pub hidden_refetch: bool,
}

impl EvalOptions {
    pub fn dataflow(&self, platform: &Platform) -> DataflowOptions {
        DataflowOptions::new(&platform.technology, self.hidden_refetch)
    }

    pub fn schedule(&self, platform: &Platform) -> ScheduleOptions {
        ScheduleOptions { lambda: self.lambda, dataflow: self.dataflow(platform) }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation<S> {
    /// The lowered graph that was simulated.
    pub graph: LayerGraph,
    pub profiles: Vec<LayerProfile>,
    pub assignments: Vec<ClusterAssignment>,
    pub phase1: Mapping,
    pub mapping: Mapping,
    pub report: SimReport<S>,
}

/// Runs one model on one platform.
pub fn evaluate<S: Scalar>(
    graph: &LayerGraph,
    platform: &Platform,
    opts: &EvalOptions,
) -> Result<Evaluation<S>, PipelineError> {
    platform.validate()?;
    let graph = lower_lstm(graph);
    let profiles = model_summary(&graph)?.profiles;
    let assignments = classify_all(&profiles, platform.ranges());
    let phase1 = phase1_map(&assignments, platform)?;
    let mapping = phase2_adjust::<S>(&phase1, &graph, &profiles, platform, &opts.schedule(platform))?;
    let report = simulate_profiled::<S>(&graph, &profiles, &mapping, platform, &opts.dataflow(platform))?;
    log::debug!("{} on {}: {:?} s", graph.name(), platform.name, report.total_latency.to_f64());
    Ok(Evaluation { graph, profiles, assignments, phase1, mapping, report })
}

/// Evaluates `graph` on every platform in parallel and normalizes the results
/// to the first platform. Output order follows `platforms`.
pub fn compare<S: Scalar>(
    graph: &LayerGraph,
    platforms: &[Platform],
    opts: &EvalOptions,
) -> Result<ComparisonReport<S>, PipelineError> {
    if platforms.len() < 2 {
        return Err(PipelineError::TooFewPlatforms(platforms.len()));
    }
    let results: Vec<Result<SimReport<S>, PipelineError>> = std::thread::scope(|scope| {
        let handles: Vec<_> =
            platforms.iter().map(|p| scope.spawn(move || evaluate::<S>(graph, p, opts).map(|e| e.report))).collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
    });
    let reports = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let ratios = ratios_of(&reports);
    Ok(ComparisonReport { model: graph.name().to_string(), reports, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accel::{baseline, mensa};
    use crate::model::{generate_synthetic, Archetype, SyntheticSpec};

    #[test]
    fn baseline_mapping_is_constant() {
        let g = generate_synthetic(&SyntheticSpec::new(Archetype::Cnn, 10, 0));
        let e = evaluate::<f64>(&g, &baseline(), &EvalOptions::default()).unwrap();
        assert_eq!(e.phase1, e.mapping);
        assert!(e.mapping.units.values().all(|u| u.accel == "Baseline"));
    }

    #[test]
    fn compare_needs_two() {
        let g = generate_synthetic(&SyntheticSpec::new(Archetype::Lstm, 1, 0));
        assert_eq!(
            compare::<f64>(&g, &[mensa()], &EvalOptions::default()).unwrap_err(),
            PipelineError::TooFewPlatforms(1)
        );
    }
}

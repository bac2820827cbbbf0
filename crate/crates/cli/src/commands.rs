use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use mensa_core::accel::{builtin_platform, Platform, TechnologyTable};
use mensa_core::characterize::model_summary;
use mensa_core::cluster::classify_all;
use mensa_core::dataflow::{dataflow_cost, is_compatible, ParamResidency};
use mensa_core::energy::{roofline_energy_efficiency, roofline_throughput};
use mensa_core::model::{
    generate_synthetic, lower_lstm, parse_model_with_warnings, serialize_model, Archetype, LayerGraph, SyntheticSpec,
};
use mensa_core::pipeline::{compare, evaluate, EvalOptions};
use mensa_core::sim::{suite_means, unit_latency, SimReport};
use mensa_core::SimReportF64;

use crate::manifest::{digest, RunManifest};
use crate::{ArchetypeArg, Command, Common, Failure, Format};

type Outcome = Result<(), Failure>;

fn input_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Input(e.into())
}

fn read_input(path: &Path, m: &mut RunManifest) -> Result<Vec<u8>, Failure> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display())).map_err(input_err)?;
    m.inputs.push(digest(&path.display().to_string(), &bytes));
    Ok(bytes)
}

fn load_model(path: &Path, m: &mut RunManifest) -> Result<LayerGraph, Failure> {
    let bytes = read_input(path, m)?;
    let (g, warnings) =
        parse_model_with_warnings(&bytes).with_context(|| format!("{}", path.display())).map_err(input_err)?;
    for w in warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(g)
}

fn load_platform(key: &str, common: &Common, m: &mut RunManifest) -> Result<Platform, Failure> {
    let mut p = match builtin_platform(key) {
        Ok(p) => p,
        Err(_) => {
            let bytes = read_input(Path::new(key), m)?;
            let text = String::from_utf8(bytes).map_err(input_err)?;
            Platform::from_json(&text).map_err(|e| input_err(anyhow!("platform {key}: {e}")))?
        }
    };
    if let Some(path) = &common.tech {
        let bytes = read_input(path, m)?;
        let t: TechnologyTable = serde_json::from_slice(&bytes)
            .with_context(|| format!("technology table {}", path.display()))
            .map_err(input_err)?;
        p.technology = t;
    }
    p.validate().with_context(|| format!("platform {key}")).map_err(input_err)?;
    m.platforms.push(p.name.clone());
    Ok(p)
}

fn emit(out: Option<&PathBuf>, bytes: &[u8], m: &mut RunManifest) -> Outcome {
    match out {
        Some(path) => {
            std::fs::write(path, bytes)
                .with_context(|| format!("cannot write {}", path.display()))
                .map_err(input_err)?;
            m.outputs.push(digest(&path.display().to_string(), bytes));
        }
        None => {
            use std::io::Write;
            match std::io::stdout().lock().write_all(bytes) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(Failure::Internal(e.into())),
                _ => {}
            }
            m.outputs.push(digest("-", bytes));
        }
    }
    Ok(())
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Failure::Internal(e.into()))?;
    }
    w.into_inner().map_err(|e| Failure::Internal(anyhow!("{e}")))
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_vec_pretty(value).map_err(|e| Failure::Internal(e.into()))?;
    s.push(b'\n');
    Ok(s)
}

fn rows_bytes<T: Serialize>(rows: &[T], format: Format) -> Result<Vec<u8>, Failure> {
    match format {
        Format::Csv => csv_bytes(rows),
        Format::Json => json_bytes(rows),
    }
}

fn eval_options(common: &Common) -> EvalOptions {
    EvalOptions { lambda: common.lambda, hidden_refetch: common.hidden_refetch }
}

fn ratio_f64(r: num_rational::Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Conservation and range checks every report must satisfy.
fn check_report(r: &SimReportF64) -> Outcome {
    let sum = r.energy.component_sum();
    if (sum - r.energy.total).abs() > 1e-12 * r.energy.total.abs().max(f64::MIN_POSITIVE) {
        return Err(Failure::Internal(anyhow!(
            "energy breakdown does not sum to its total ({sum} vs {})",
            r.energy.total
        )));
    }
    if r.accelerators.iter().any(|a| a.utilization > 1.0 + 1e-9) {
        return Err(Failure::Internal(anyhow!("utilization above 1 on {}", r.platform)));
    }
    Ok(())
}

pub(crate) fn run(cmd: Command, m: &mut RunManifest) -> Outcome {
    match cmd {
        Command::Synth { archetype, depth, seed, scale, out } => synth(archetype, depth, seed, scale, out, m),
        Command::Characterize { model, common } => characterize(&model, &common, m),
        Command::Cluster { model, platform, common } => cluster(&model, &platform, &common, m),
        Command::Cost { model, platform, common } => cost(&model, &platform, &common, m),
        Command::Schedule { model, platform, common } => schedule(&model, &platform, &common, m),
        Command::Simulate { model, platform, trace, common } => simulate(&model, &platform, trace.as_ref(), &common, m),
        Command::Compare { models, platforms, common } => compare_cmd(&models, &platforms, &common, m),
        Command::Roofline { platform, min_exp, max_exp, common } => roofline(&platform, min_exp, max_exp, &common, m),
    }
}

fn synth(arch: ArchetypeArg, depth: u32, seed: u64, scale: u32, out: Option<PathBuf>, m: &mut RunManifest) -> Outcome {
    if depth == 0 || scale == 0 {
        return Err(input_err(anyhow!("depth and scale must be >= 1")));
    }
    let archetype = match arch {
        ArchetypeArg::Cnn => Archetype::Cnn,
        ArchetypeArg::Lstm => Archetype::Lstm,
        ArchetypeArg::Transducer => Archetype::Transducer,
        ArchetypeArg::Rcnn => Archetype::Rcnn,
    };
    m.seed = Some(seed);
    let g = generate_synthetic(&SyntheticSpec { archetype, depth, seed, scale });
    emit(out.as_ref(), serialize_model(&g).as_bytes(), m)
}

#[derive(Serialize)]
struct ProfileRow {
    unit_id: u32,
    kind: &'static str,
    macs: u64,
    param_bytes: u64,
    in_act_bytes: u64,
    out_act_bytes: u64,
    param_intensity: Option<f64>,
    act_intensity: Option<f64>,
}

fn characterize(path: &Path, common: &Common, m: &mut RunManifest) -> Outcome {
    let g = lower_lstm(&load_model(path, m)?);
    let summary = model_summary(&g).map_err(input_err)?;
    let rows: Vec<ProfileRow> = summary
        .profiles
        .iter()
        .map(|p| ProfileRow {
            unit_id: p.unit_id,
            kind: p.kind.as_str(),
            macs: p.macs,
            param_bytes: p.param_bytes,
            in_act_bytes: p.in_act_bytes,
            out_act_bytes: p.out_act_bytes,
            param_intensity: p.param_intensity().map(ratio_f64),
            act_intensity: p.act_intensity().map(ratio_f64),
        })
        .collect();
    emit(common.out.as_ref(), &rows_bytes(&rows, common.format)?, m)
}

#[derive(Serialize)]
struct ClusterRow {
    unit_id: u32,
    cluster: u8,
    matched: String,
    distance: f64,
}

fn cluster(path: &Path, platform: &str, common: &Common, m: &mut RunManifest) -> Outcome {
    let g = lower_lstm(&load_model(path, m)?);
    let p = load_platform(platform, common, m)?;
    let profiles = model_summary(&g).map_err(input_err)?.profiles;
    let rows: Vec<ClusterRow> = classify_all(&profiles, p.ranges())
        .into_iter()
        .map(|a| ClusterRow {
            unit_id: a.unit_id,
            cluster: a.cluster,
            matched: a.matched.to_string(),
            distance: a.distance,
        })
        .collect();
    emit(common.out.as_ref(), &rows_bytes(&rows, common.format)?, m)
}

#[derive(Serialize)]
struct CostRow {
    unit_id: u32,
    kind: &'static str,
    accel: String,
    dataflow: String,
    dram_param_bytes: u64,
    dram_in_act_bytes: u64,
    dram_out_act_bytes: u64,
    noc_param_bytes: u64,
    noc_psum_bytes: u64,
    noc_act_bytes: u64,
    buf_param_accesses: u64,
    buf_act_accesses: u64,
    rf_accesses: u64,
    compute_cycles: u64,
    sequential_dram: bool,
    latency_s: f64,
}

fn cost(path: &Path, platform: &str, common: &Common, m: &mut RunManifest) -> Outcome {
    let g = lower_lstm(&load_model(path, m)?);
    let p = load_platform(platform, common, m)?;
    let opts = eval_options(common).dataflow(&p);
    let profiles = model_summary(&g).map_err(input_err)?.profiles;
    let mut rows = Vec::new();
    for prof in &profiles {
        for a in p.accelerators.iter().filter(|a| is_compatible(prof.kind, a.dataflow)) {
            let c = dataflow_cost(prof, a, ParamResidency::of(prof), &opts).map_err(|e| Failure::Internal(e.into()))?;
            rows.push(CostRow {
                unit_id: prof.unit_id,
                kind: prof.kind.as_str(),
                accel: a.name.clone(),
                dataflow: a.dataflow.to_string(),
                dram_param_bytes: c.dram_param_bytes,
                dram_in_act_bytes: c.dram_in_act_bytes,
                dram_out_act_bytes: c.dram_out_act_bytes,
                noc_param_bytes: c.noc_param_bytes,
                noc_psum_bytes: c.noc_psum_bytes,
                noc_act_bytes: c.noc_act_bytes,
                buf_param_accesses: c.buf_param_accesses,
                buf_act_accesses: c.buf_act_accesses,
                rf_accesses: c.rf_accesses,
                compute_cycles: c.compute_cycles,
                sequential_dram: c.sequential_dram,
                latency_s: unit_latency::<f64>(&c, a),
            });
        }
    }
    emit(common.out.as_ref(), &rows_bytes(&rows, common.format)?, m)
}

#[derive(Serialize)]
struct ScheduleRow {
    unit_id: u32,
    cluster: u8,
    phase1_accel: String,
    final_accel: String,
    remapped: bool,
}

fn schedule(path: &Path, platform: &str, common: &Common, m: &mut RunManifest) -> Outcome {
    let g = load_model(path, m)?;
    let p = load_platform(platform, common, m)?;
    let e = evaluate::<f64>(&g, &p, &eval_options(common)).map_err(input_err)?;
    let rows: Vec<ScheduleRow> = e
        .assignments
        .iter()
        .map(|a| {
            let first = e.phase1.accel_of(a.unit_id).unwrap_or_default().to_string();
            let last = e.mapping.accel_of(a.unit_id).unwrap_or_default().to_string();
            ScheduleRow {
                unit_id: a.unit_id,
                cluster: a.cluster,
                remapped: first != last,
                phase1_accel: first,
                final_accel: last,
            }
        })
        .collect();
    emit(common.out.as_ref(), &rows_bytes(&rows, common.format)?, m)
}

#[derive(Serialize)]
struct TraceRow {
    unit_id: u32,
    accel: String,
    start_s: f64,
    end_s: f64,
    dram_bytes: u64,
    noc_bytes: u64,
    compute_cycles: u64,
    energy_j: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    model: String,
    platform: String,
    latency_s: f64,
    throughput_flops: f64,
    utilization: f64,
    energy_j: f64,
    area_mm2: f64,
}

fn summary_row(r: &SimReport<f64>) -> SummaryRow {
    SummaryRow {
        model: r.model.clone(),
        platform: r.platform.clone(),
        latency_s: r.total_latency,
        throughput_flops: r.throughput,
        utilization: r.utilization,
        energy_j: r.energy.total,
        area_mm2: r.area,
    }
}

fn simulate(path: &Path, platform: &str, trace: Option<&PathBuf>, common: &Common, m: &mut RunManifest) -> Outcome {
    let g = load_model(path, m)?;
    let p = load_platform(platform, common, m)?;
    let report = evaluate::<f64>(&g, &p, &eval_options(common)).map_err(input_err)?.report;
    check_report(&report)?;

    if let Some(trace_path) = trace {
        let rows: Vec<TraceRow> = report
            .trace
            .iter()
            .map(|t| TraceRow {
                unit_id: t.unit_id,
                accel: t.accel.clone(),
                start_s: t.start,
                end_s: t.end,
                dram_bytes: t.cost.dram_bytes(),
                noc_bytes: t.cost.noc_bytes(),
                compute_cycles: t.cost.compute_cycles,
                energy_j: t.energy.total,
            })
            .collect();
        emit(Some(trace_path), &csv_bytes(&rows)?, m)?;
    }

    let bytes = match common.format {
        Format::Json => {
            let mut value = serde_json::to_value(&report).map_err(|e| Failure::Internal(e.into()))?;
            if let Some(obj) = value.as_object_mut() {
                obj.remove("trace");
            }
            json_bytes(&value)?
        }
        Format::Csv => csv_bytes(&[summary_row(&report)])?,
    };
    emit(common.out.as_ref(), &bytes, m)
}

#[derive(Serialize)]
struct CompareRow {
    model: String,
    platform: String,
    latency_s: Option<f64>,
    throughput_flops: Option<f64>,
    utilization: Option<f64>,
    energy_j: Option<f64>,
    area_mm2: Option<f64>,
    energy_reduction: f64,
    throughput_gain: f64,
    utilization_gain: f64,
}

/// Model name used for the suite-average rows.
const SUITE_MEAN: &str = "suite-mean";

fn compare_cmd(models: &[PathBuf], platforms: &[String], common: &Common, m: &mut RunManifest) -> Outcome {
    if platforms.len() < 2 {
        return Err(input_err(anyhow!("compare needs at least two platforms")));
    }
    let plats = platforms.iter().map(|k| load_platform(k, common, m)).collect::<Result<Vec<_>, _>>()?;
    let opts = eval_options(common);
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for path in models {
        let g = load_model(path, m)?;
        let c = compare::<f64>(&g, &plats, &opts).map_err(input_err)?;
        for (r, x) in c.reports.iter().zip(&c.ratios) {
            check_report(r)?;
            rows.push(CompareRow {
                model: r.model.clone(),
                platform: r.platform.clone(),
                latency_s: Some(r.total_latency),
                throughput_flops: Some(r.throughput),
                utilization: Some(r.utilization),
                energy_j: Some(r.energy.total),
                area_mm2: Some(r.area),
                energy_reduction: x.energy_reduction,
                throughput_gain: x.throughput_gain,
                utilization_gain: x.utilization_gain,
            });
        }
        all.push(c);
    }
    if all.len() > 1 {
        for x in suite_means(&all) {
            rows.push(CompareRow {
                model: SUITE_MEAN.into(),
                platform: x.platform,
                latency_s: None,
                throughput_flops: None,
                utilization: None,
                energy_j: None,
                area_mm2: None,
                energy_reduction: x.energy_reduction,
                throughput_gain: x.throughput_gain,
                utilization_gain: x.utilization_gain,
            });
        }
    }
    emit(common.out.as_ref(), &rows_bytes(&rows, common.format)?, m)
}

#[derive(Serialize)]
struct RooflineRow {
    accel: String,
    ai: f64,
    attainable_flops: f64,
    flop_per_joule: f64,
}

fn roofline(platform: &str, min_exp: i32, max_exp: i32, common: &Common, m: &mut RunManifest) -> Outcome {
    if min_exp > max_exp {
        return Err(input_err(anyhow!("--min-exp must not exceed --max-exp")));
    }
    let p = load_platform(platform, common, m)?;
    let mut rows = Vec::new();
    for a in &p.accelerators {
        for e in min_exp..=max_exp {
            let ai = 2f64.powi(e);
            rows.push(RooflineRow {
                accel: a.name.clone(),
                ai,
                attainable_flops: roofline_throughput(&ai, a),
                flop_per_joule: roofline_energy_efficiency(&ai, &p.technology)
                    .map_err(|e| Failure::Internal(e.into()))?,
            });
        }
    }
    emit(common.out.as_ref(), &rows_bytes(&rows, common.format)?, m)
}

//! File-free building blocks behind the subcommands.

use std::collections::BTreeSet;

use airshadow_core::eval::{run_benchmark, BenchmarkReport};
use airshadow_core::ingest::{align_segments, build_labeled_windows_multi, LabeledDataset, Provenance};
use airshadow_core::simulator::{presets, simulate_scenario, simulate_segments, Scenario};
use airshadow_core::{ActivityAnnotation, AlignedSeries, DeviceId, PollutantSample};

use crate::config::{GlobalConfig, Stream};

/// Scenarios longer than this are recorded around their events only, unless
/// a margin is configured.
pub const FULL_TRACE_LIMIT: f64 = 2.0 * 86_400.0;

pub struct Simulated {
    pub segments: Vec<AlignedSeries>,
    pub annotations: Vec<ActivityAnnotation>,
}

/// Resolves a preset name; generated presets draw from the scenario substream.
pub fn preset(name: &str, cfg: &GlobalConfig) -> anyhow::Result<Scenario> {
    Ok(presets::by_name(name, cfg.seed_for(Stream::Scenario))?)
}

pub fn effective_margin(sc: &Scenario, cfg: &GlobalConfig) -> Option<f64> {
    cfg.margin.or_else(|| (sc.duration > FULL_TRACE_LIMIT).then_some(cfg.window.features.tau))
}

pub fn simulate(sc: &Scenario, cfg: &GlobalConfig) -> anyhow::Result<Simulated> {
    let seed = cfg.seed_for(Stream::Simulation);
    let (segments, annotations) = match effective_margin(sc, cfg) {
        Some(margin) => simulate_segments(sc, seed, margin)?,
        None => {
            let (series, annotations) = simulate_scenario(sc, seed)?;
            (vec![series], annotations)
        }
    };
    Ok(Simulated { segments, annotations })
}

pub fn device_order(samples: &[PollutantSample], cfg: &GlobalConfig) -> Vec<DeviceId> {
    cfg.devices.clone().unwrap_or_else(|| {
        samples
            .iter()
            .map(|s| s.device.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    })
}

pub fn align(samples: &[PollutantSample], cfg: &GlobalConfig) -> anyhow::Result<Vec<AlignedSeries>> {
    let devices = device_order(samples, cfg);
    Ok(align_segments(samples, &devices, cfg.step, cfg.split_gap)?)
}

pub fn label_windows(
    segments: &[AlignedSeries],
    annotations: &[ActivityAnnotation],
    cfg: &GlobalConfig,
    sources: Vec<String>,
    seed: Option<u64>,
) -> anyhow::Result<LabeledDataset> {
    let mut dataset = build_labeled_windows_multi(segments, annotations, &cfg.window)?;
    dataset.provenance = Provenance {
        sources,
        seed,
        config_digest: dataset.provenance.config_digest,
    };
    Ok(dataset)
}

/// The whole synthetic path in memory: generated lab quarter, simulated
/// telemetry, labeled windows, then the configured grid.
pub fn synthetic_benchmark(cfg: &GlobalConfig) -> anyhow::Result<(LabeledDataset, BenchmarkReport)> {
    let sc = preset("lab", cfg)?;
    let sim = simulate(&sc, cfg)?;
    let dataset = label_windows(&sim.segments, &sim.annotations, cfg, vec!["preset:lab".into()], Some(cfg.seed))?;
    let report = run_benchmark(&dataset, &cfg.grid(), &cfg.benchmark_protocol())?;
    Ok((dataset, report))
}

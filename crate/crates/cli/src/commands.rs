//! Subcommand bodies.

use std::io::Write;
use std::path::Path;

use log::info;
use serde::Serialize;

use rmt_eed::detect::{self, DetectorConfig, EventConfig, EventReport, Reference};
use rmt_eed::ingest::{self, MissingPolicy, RegionPartition, WindowSpec};
use rmt_eed::les::{self, TestFunction};
use rmt_eed::mapgen::{self, Quantity, RenderConfig};
use rmt_eed::pca::{self, TrainConfig};
use rmt_eed::synth::{self, Scenario};
use rmt_eed::{Error, Result};

use crate::args::{AnalyzeArgs, MapArgs, PcaArgs, SimulateArgs, TheoryArgs};

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Serialize)]
struct RunRecord<'a, P: Serialize> {
    tool: &'static str,
    version: &'static str,
    library_version: &'static str,
    subcommand: &'a str,
    seed: u64,
    params: &'a P,
}

pub fn write_run<P: Serialize>(dir: &Path, subcommand: &str, seed: u64, params: &P) -> Result<()> {
    let rec = RunRecord {
        tool: "rmt-eed",
        version: env!("CARGO_PKG_VERSION"),
        library_version: rmt_eed::VERSION,
        subcommand,
        seed,
        params,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(RUN_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&rec)? + "\n").map_err(|e| io_err(&path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T> {
    s.parse()
}

pub fn simulate(a: &SimulateArgs, seed: u64) -> Result<()> {
    let dir = parent_dir(&a.out);
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let (scenario, partition) = match (&a.preset, &a.scenario) {
        (Some(_), _) => {
            let p = synth::table3(a.n, a.t)?;
            (p.scenario, Some(p.partition))
        }
        (None, Some(path)) => (Scenario::load_json(path)?, None),
        (None, None) => (Scenario::noise(a.n, a.t), None),
    };
    let src = synth::generate(&scenario, seed)?;
    src.write_csv(&a.out)?;
    if let Some(p) = partition {
        let path = dir.join("regions.json");
        std::fs::write(&path, serde_json::to_string_pretty(&p.to_json())? + "\n").map_err(|e| io_err(&path, e))?;
    }
    let scenario_path = dir.join("scenario.json");
    std::fs::write(&scenario_path, serde_json::to_string_pretty(&scenario)? + "\n")
        .map_err(|e| io_err(&scenario_path, e))?;
    info!("wrote {}×{} matrix to {}", src.n(), src.t(), a.out.display());
    write_run(dir, "simulate", seed, a)
}

fn functions(list: &str) -> Result<Vec<TestFunction>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(parse).collect()
}

pub fn analyze(a: &AnalyzeArgs, seed: u64, mut out: impl Write) -> Result<EventReport> {
    let mut src = ingest::load_csv(&a.input, parse::<MissingPolicy>(&a.missing)?)?;
    if let Some(nodes) = &a.nodes {
        let ids: Vec<String> = nodes.split(',').map(|s| s.trim().to_string()).collect();
        src = src.select_nodes(&ids)?;
    }
    let window = WindowSpec::new(a.window).with_stride(a.stride).with_depth(a.depth);
    window.validate()?;
    let mut cfg = DetectorConfig::new(window, functions(&a.functions)?);
    cfg.threshold_k = a.k;
    cfg.reference = parse::<Reference>(&a.reference)?;
    cfg.degenerate = parse(&a.degenerate)?;
    cfg.mc_draws = a.mc_draws;
    cfg.seed = seed;
    cfg.events = EventConfig {
        gap_tolerance: a.gap,
        min_duration: a.min_duration,
    };
    cfg.regions = a.partition.as_deref().map(RegionPartition::load_json).transpose()?;
    let series = detect::regional_series(&src, &cfg)?;
    let report = detect::report(&series, &cfg);
    detect::write_outputs(&a.out, &series, &report)?;
    write_run(&a.out, "analyze", seed, a)?;
    for ev in &report.events {
        detect::describe(ev, &mut out).map_err(|e| io_err(&a.out, e))?;
    }
    writeln!(out, "{} event(s); outputs in {}", report.events.len(), a.out.display()).map_err(|e| io_err(&a.out, e))?;
    Ok(report)
}

pub fn theory(a: &TheoryArgs, seed: u64, mut out: impl Write) -> Result<()> {
    let rows = les::theory_table(a.n, a.t, a.kappa4, a.depth)?;
    let w = |e| io_err(Path::new("<stdout>"), e);
    writeln!(out, "N={} T={} c={:.4} L={} kappa4={}", a.n, a.t, a.n as f64 / a.t as f64, a.depth, a.kappa4).map_err(w)?;
    writeln!(out, "{:<5} {:>14} {:>14} {:>8}", "LES", "E", "D", "c_v").map_err(w)?;
    for r in &rows {
        writeln!(out, "{:<5} {:>14.6e} {:>14.6e} {:>8.4}", r.function, r.expectation, r.variance, r.cv).map_err(w)?;
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join("theory.json");
        std::fs::write(&path, serde_json::to_string_pretty(&rows)? + "\n").map_err(|e| io_err(&path, e))?;
        write_run(dir, "theory", seed, a)?;
    }
    Ok(())
}

fn range(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("expected START:END, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn pca_baseline(a: &PcaArgs, seed: u64, mut out: impl Write) -> Result<EventReport> {
    let src = ingest::load_csv(&a.input, parse::<MissingPolicy>(&a.missing)?)?;
    let model = pca::train(
        &src,
        range(&a.train)?,
        TrainConfig {
            m: a.m,
            m_prime: a.m_prime,
        },
    )?;
    info!("pilots {:?}, condition {:.3e}", model.pilot_ids, model.condition);
    let series = model.series(&src, a.window, a.k)?;
    let events = EventConfig {
        gap_tolerance: a.gap,
        min_duration: a.min_duration,
    };
    let report = detect::summarize(&series, &events, None);
    detect::write_outputs(&a.out, &series, &report)?;
    let path = a.out.join("model.json");
    std::fs::write(&path, serde_json::to_string_pretty(&model)? + "\n").map_err(|e| io_err(&path, e))?;
    write_run(&a.out, "pca-baseline", seed, a)?;
    for ev in &report.events {
        detect::describe(ev, &mut out).map_err(|e| io_err(&a.out, e))?;
    }
    writeln!(out, "{} event(s); pilots {}", report.events.len(), model.pilot_ids.join(","))
        .map_err(|e| io_err(&a.out, e))?;
    Ok(report)
}

pub fn mapframes(a: &MapArgs, seed: u64) -> Result<usize> {
    let report = EventReport::load_json(&a.report.join(detect::REPORT_FILE))?;
    let rows = detect::read_indicators(&a.report.join(detect::INDICATORS_FILE))?;
    let (layout, layout_partition) = mapgen::load_layout(&a.layout)?;
    let partition = match layout_partition {
        Some(p) => Some(p),
        None => report.partition()?,
    };
    let function = match &a.function {
        Some(f) => f.clone(),
        None => rows
            .first()
            .map(|r| r.function.clone())
            .ok_or_else(|| Error::Contract("indicator file is empty".into()))?,
    };
    let quantity = match a.quantity.as_str() {
        "eta" => Quantity::Eta,
        "raw" => Quantity::Raw,
        other => return Err(Error::Config(format!("quantity must be eta or raw, got '{other}'"))),
    };
    let cfg = RenderConfig {
        function,
        quantity,
        grid: a.grid,
        power: a.power,
        stride: a.stride,
    };
    let paths = mapgen::render_run(&rows, Some(&layout), partition.as_ref(), &cfg, &a.out)?;
    write_run(&a.out, "mapframes", seed, a)?;
    Ok(paths.len())
}

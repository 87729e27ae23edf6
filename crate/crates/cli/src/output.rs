//! Writing experiment reports, histogram CSVs and raw path dumps.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bessel_lab::pathsim::{simulate_path, Construction, PathGrid, SimConfig, StopRule};
use bessel_lab::BesselParams;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiments::{ExperimentOutcome, NamedHistogram};

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Header of every histogram CSV.
pub const CSV_HEADER: &str = "bin_left,bin_right,empirical,theoretical";

#[derive(Serialize)]
struct Report<'a> {
    schema: u32,
    experiment_id: &'a str,
    pass: bool,
    config: &'a ExperimentConfig,
    reports: &'a [bessel_lab::stats::StatReport],
    info: &'a std::collections::BTreeMap<String, f64>,
}

/// The JSON report of one run (pretty-printed, trailing newline).
pub fn report_json(cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<String> {
    let report = Report {
        schema: SCHEMA_VERSION,
        experiment_id: &outcome.experiment_id,
        pass: outcome.pass,
        config: cfg,
        reports: &outcome.reports,
        info: &outcome.info,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    Ok(text)
}

/// One histogram as CSV.
pub fn histogram_csv(h: &NamedHistogram) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for b in &h.bins {
        out.push_str(&format!(
            "{},{},{},{}\n",
            b.bin_left, b.bin_right, b.empirical, b.theoretical
        ));
    }
    out
}

fn histogram_file_name(id: &str, h: &NamedHistogram) -> String {
    if h.name.is_empty() {
        format!("{id}.csv")
    } else {
        let safe: String = h
            .name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        format!("{id}_{safe}.csv")
    }
}

/// Write `<id>.json` and the histogram CSVs into `dir`; returns the files written.
pub fn write_outcome(
    dir: &Path,
    cfg: &ExperimentConfig,
    outcome: &ExperimentOutcome,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    let json = dir.join(format!("{}.json", outcome.experiment_id));
    fs::write(&json, report_json(cfg, outcome)?)
        .with_context(|| format!("writing {}", json.display()))?;
    written.push(json);
    for h in &outcome.histograms {
        let file = dir.join(histogram_file_name(&outcome.experiment_id, h));
        fs::write(&file, histogram_csv(h))
            .with_context(|| format!("writing {}", file.display()))?;
        written.push(file);
    }
    Ok(written)
}

fn construction_name(c: Construction) -> &'static str {
    match c {
        Construction::Direct => "direct",
        Construction::TimeChange => "time_change",
    }
}

/// Columnar dump of one path: a `#` header naming the parameters and seed,
/// then `time,r,l,clock` rows (the clock column is empty when not recorded).
pub fn write_path_dump<W: Write>(
    mut w: W,
    cfg: &ExperimentConfig,
    index: usize,
    path: &PathGrid,
) -> Result<()> {
    writeln!(
        w,
        "# mu={} delta={} construction={} seed={} path={} steps={} horizon={}",
        path.params.mu(),
        path.params.delta(),
        construction_name(path.construction),
        cfg.seed,
        index,
        cfg.n_steps,
        cfg.horizon
    )?;
    writeln!(w, "time,r,l,clock")?;
    for i in 0..path.len() {
        let clock = path
            .clock
            .as_ref()
            .map(|c| c[i].to_string())
            .unwrap_or_default();
        writeln!(w, "{},{},{},{}", path.times[i], path.r[i], path.l[i], clock)?;
    }
    Ok(())
}

/// Simulate `cfg.n_paths` paths and write `path_<i>.csv` files into `dir`.
pub fn dump_paths(dir: &Path, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let params = BesselParams::new(cfg.mu)?;
    let mut sim = SimConfig::new(cfg.n_steps, cfg.horizon, cfg.seed, cfg.n_paths);
    sim.zero_threshold = cfg.zero_threshold_rule.threshold(sim.dt_max());
    let construction = cfg.construction.resolve(cfg.mu);
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for i in 0..cfg.n_paths {
        let path = simulate_path(&params, &sim, construction, i as u64, &mut StopRule::Never)?;
        let file = dir.join(format!("path_{i}.csv"));
        let f = fs::File::create(&file).with_context(|| format!("writing {}", file.display()))?;
        let mut w = BufWriter::new(f);
        write_path_dump(&mut w, cfg, i, &path)?;
        w.flush()?;
        written.push(file);
    }
    Ok(written)
}

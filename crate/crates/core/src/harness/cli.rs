//! Command-line front end.
//!
//! Exit codes: 0 when everything ran and every check passed, 1 on a check
//! failure or runtime error, 2 on a configuration error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::checks::Experiment;
use super::config::{help_config, layout_hash, ExperimentConfig};
use super::report::{write_json, write_text, BoundReport, Timings, SCHEMA};
use super::{anchors, CheckId};
use crate::error::{LabError, LabResult};
use crate::oracle::{write_curve_csv, ColeHopf};
use crate::picard::{GridField, SchemeState};
use crate::scalar_flows::{
    classify_regime, cutoff_fixed_point, cutoff_recursion, displacement_envelope, displacement_envelope_bracketed,
    phi_flow,
};
use crate::zones::{safe_interval, subdivide};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "burgers-lab", version, about = "Picard/Feynman-Kac Burgers solver and bound-verification harness")]
pub struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `[iteration] seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: the config's `output`, else `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Format of tables printed to stdout and of curve files.
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    /// Print every configuration key with its default and exit.
    #[arg(long)]
    pub help_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Run the Picard iteration and write fields and statistics.
    Simulate,
    /// Run the enabled checks and write one report per check.
    Verify,
    /// Write Cole-Hopf reference curves and compare the last iterate.
    Oracle,
    /// Validate and subdivide the zone layout; print safe intervals.
    Zones,
    /// Tabulate comparison flows, envelopes and cut-off recursions.
    Flows,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &LabError) -> i32 {
    match e {
        LabError::Config(_) => 2,
        _ => 1,
    }
}

fn dispatch(cli: &Cli) -> LabResult<i32> {
    if cli.help_config {
        print!("{}", help_config());
        return Ok(0);
    }
    let Some(command) = cli.command else {
        return Err(LabError::Config("no subcommand given (try --help)".into()));
    };
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| LabError::Config("--config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.iteration.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let run = || match command {
        Command::Simulate => simulate(cfg.clone(), &out, cli.format),
        Command::Verify => verify(cfg.clone(), &out, cli.format),
        Command::Oracle => oracle(cfg.clone(), &out, cli.format),
        Command::Zones => zones(&cfg, &out, cli.format),
        Command::Flows => flows(&cfg, &out, cli.format),
    };
    match cli.jobs {
        Some(0) => Err(LabError::Config("--jobs must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| LabError::Io(e.to_string()))?;
            pool.install(run)
        }
        None => run(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema: u32,
    simulation_hash: String,
    m_max: usize,
    gradients: bool,
}

fn field_path(out: &Path, name: &str, m: usize) -> PathBuf {
    out.join("fields").join(format!("{name}_{m}.bin"))
}

fn write_field(path: &Path, f: &GridField) -> LabResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    f.write_binary(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_field(path: &Path) -> LabResult<GridField> {
    GridField::read_binary(BufReader::new(File::open(path)?))
}

/// Loads iterates written by `simulate` when they match the configuration.
fn load_state(exp: &Experiment, out: &Path) -> LabResult<Option<SchemeState>> {
    let Ok(text) = std::fs::read_to_string(out.join("fields").join("manifest.json")) else {
        return Ok(None);
    };
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| LabError::Io(e.to_string()))?;
    if manifest.simulation_hash != exp.config.simulation_hash() {
        return Ok(None);
    }
    let mut values = Vec::new();
    let mut grads = Vec::new();
    for m in 0..=manifest.m_max {
        values.push((read_field(&field_path(out, "u", m))?, read_field(&field_path(out, "se", m))?));
        if manifest.gradients {
            grads.push((
                read_field(&field_path(out, "grad", m))?,
                read_field(&field_path(out, "grad_se", m))?,
            ));
        }
    }
    let state = SchemeState::from_parts(
        &exp.field,
        exp.config.iteration.clone(),
        values,
        manifest.gradients.then_some(grads),
    )?;
    Ok(Some(state))
}

fn ensure_state(exp: &mut Experiment, out: &Path, timings: &mut Timings) -> LabResult<()> {
    if exp.has_state() {
        return Ok(());
    }
    if let Some(s) = load_state(exp, out)? {
        exp.set_state(s)?;
        return Ok(());
    }
    let start = Instant::now();
    exp.state()?;
    timings.record("iterates", start.elapsed().as_secs_f64());
    Ok(())
}

fn simulate(cfg: ExperimentConfig, out: &Path, format: Format) -> LabResult<i32> {
    let mut exp = Experiment::new(cfg)?;
    let mut timings = Timings::default();
    let start = Instant::now();
    let state = exp.state()?.clone();
    timings.record("iterates", start.elapsed().as_secs_f64());
    let has_grad = state.gradients.len() == state.iterates.len();
    for m in 0..state.iterates.len() {
        write_field(&field_path(out, "u", m), &state.iterates[m])?;
        write_field(&field_path(out, "se", m), &state.stderr[m])?;
        if has_grad {
            write_field(&field_path(out, "grad", m), &state.gradients[m])?;
            write_field(&field_path(out, "grad_se", m), &state.gradient_stderr[m])?;
        }
        if format == Format::Csv {
            for j in 0..state.config.grid.slices.len() {
                let path = out.join("curves").join(format!("u_m{m}_slice{j}.csv"));
                let mut buf = Vec::new();
                state.iterates[m].write_csv_slice(j, &mut buf)?;
                write_text(&path, &String::from_utf8_lossy(&buf))?;
            }
        }
    }
    let hash = exp.config.simulation_hash();
    write_json(
        &out.join("fields").join("manifest.json"),
        &Manifest {
            schema: SCHEMA,
            simulation_hash: hash.clone(),
            m_max: state.latest().unwrap_or(0),
            gradients: has_grad,
        },
    )?;
    write_json(
        &out.join("reports").join("simulate.json"),
        &json!({ "schema": SCHEMA, "simulation_hash": hash, "stats": state.stats }),
    )?;
    write_json(&out.join("timings").join("simulate.json"), &timings)?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&state.stats).expect("serializable")),
        Format::Csv => {
            println!("m,sup_norm,max_stderr,se_warning,sup_v");
            for s in &state.stats {
                println!("{},{},{},{},{}", s.m, s.sup_norm, s.max_stderr, s.se_warning, s.sup_v);
            }
        }
    }
    Ok(0)
}

fn print_reports(reports: &[BoundReport], format: Format) {
    match format {
        Format::Json => {
            let rows: Vec<_> = reports
                .iter()
                .map(|r| {
                    json!({
                        "check": r.check,
                        "anchor": r.anchor,
                        "status": r.status,
                        "pass": r.pass,
                        "fitted_constant": r.fitted_constant,
                        "violation_fraction": r.violation_fraction,
                    })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&rows).expect("serializable"));
        }
        Format::Csv => {
            println!("check,anchor,status,pass,fitted_constant,violation_fraction");
            for r in reports {
                println!(
                    "{},{},{:?},{},{},{}",
                    r.check.name(),
                    r.anchor,
                    r.status,
                    r.pass,
                    r.fitted_constant,
                    r.violation_fraction
                );
            }
        }
    }
}

fn verify(cfg: ExperimentConfig, out: &Path, format: Format) -> LabResult<i32> {
    let mut exp = Experiment::new(cfg)?;
    let mut timings = Timings::default();
    let ids = exp.config.checks.enabled.clone();
    if ids.iter().any(|id| id.needs_iterates()) {
        ensure_state(&mut exp, out, &mut timings)?;
    }
    let mut reports = Vec::new();
    for id in ids {
        let start = Instant::now();
        let report = exp.run(id)?;
        timings.record(id.name(), start.elapsed().as_secs_f64());
        write_text(&out.join("reports").join(format!("{}.json", id.name())), &report.to_json())?;
        reports.push(report);
    }
    let covered: std::collections::BTreeSet<&str> = reports.iter().flat_map(|r| r.anchors()).collect();
    let missing: Vec<&str> = anchors::REQUIRED.iter().copied().filter(|a| !covered.contains(a)).collect();
    let pass = reports.iter().all(|r| r.pass);
    write_json(
        &out.join("reports").join("verify.json"),
        &json!({
            "schema": SCHEMA,
            "pass": pass,
            "checks": reports.iter().map(|r| json!({"check": r.check, "status": r.status, "pass": r.pass})).collect::<Vec<_>>(),
            "anchors": covered,
            "missing_anchors": missing,
        }),
    )?;
    write_json(&out.join("timings").join("verify.json"), &timings)?;
    print_reports(&reports, format);
    Ok(if pass { 0 } else { 1 })
}

fn oracle(cfg: ExperimentConfig, out: &Path, format: Format) -> LabResult<i32> {
    if cfg.field.dim != 1 || !cfg.iteration.viscous {
        return Err(LabError::Config("the oracle needs a one-dimensional viscous configuration".into()));
    }
    let mut exp = Experiment::new(cfg)?;
    let mut timings = Timings::default();
    let o = exp.config.checks.oracle.clone();
    let spec = exp.config.iteration.grid.clone();
    let times: Vec<f64> = o
        .times
        .clone()
        .unwrap_or_else(|| spec.slices.iter().cloned().filter(|&t| t > 0.0).collect());
    let xs: Vec<f64> = (0..spec.node_count())
        .map(|n| spec.node(n)[0])
        .filter(|&x| x >= o.lower && x <= o.upper)
        .collect();
    let ch = ColeHopf::new(&exp.field)?;
    for &t in &times {
        let us = ch.curve(t, &xs, o.eta, o.quadrature_tol)?;
        let path = out.join("curves").join(format!("oracle_t{t}.{}", ext(format)));
        match format {
            Format::Csv => {
                let mut buf = Vec::new();
                write_curve_csv(&mut buf, t, &xs, &us)?;
                write_text(&path, &String::from_utf8_lossy(&buf))?;
            }
            Format::Json => write_json(&path, &json!({"t": t, "x": xs, "u": us}))?,
        }
    }
    ensure_state(&mut exp, out, &mut timings)?;
    let report = exp.run(CheckId::Oracle)?;
    write_text(&out.join("reports").join("oracle.json"), &report.to_json())?;
    write_json(&out.join("timings").join("oracle.json"), &timings)?;
    print_reports(std::slice::from_ref(&report), format);
    Ok(if report.pass { 0 } else { 1 })
}

fn ext(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

fn zones(cfg: &ExperimentConfig, out: &Path, format: Format) -> LabResult<i32> {
    let layout = cfg
        .layout()
        .ok_or_else(|| LabError::Config("no zone layout configured ([zones] or an annular field)".into()))?;
    let report = layout.validate().map_err(|e| LabError::Config(e.to_string()))?;
    if let Some(v) = report.first_violation {
        return Err(LabError::Config(format!(
            "zone layout violates the {:?} rule at index {}: radii ({}, {}): {}",
            v.rule, v.index, v.radii.0, v.radii.1, v.detail
        )));
    }
    let u = cfg.flow.u_scale.unwrap_or(cfg.field.u_scale);
    let t = cfg.zones.as_ref().and_then(|z| z.time).unwrap_or(1.0 / u);
    let c = cfg.constants.c;
    let fine = subdivide(&layout);
    let mut rows = Vec::new();
    for i in 1..=layout.safe_count() {
        for viscous in [false, true] {
            let iv = safe_interval(&layout, i, t, u, c, viscous)?;
            rows.push(iv);
        }
    }
    let doc = json!({
        "schema": SCHEMA,
        "layout_hash": layout_hash(&layout),
        "radii": layout.radii,
        "subdivided": fine.radii,
        "time": t,
        "intervals": rows,
    });
    write_json(&out.join("reports").join("zones.json"), &doc)?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&doc).expect("serializable")),
        Format::Csv => {
            println!("i,viscous,lower,upper,empty");
            for r in &rows {
                println!("{},{},{},{},{}", r.i, r.viscous, r.lower, r.upper, r.empty);
            }
        }
    }
    Ok(0)
}

fn flows(cfg: &ExperimentConfig, out: &Path, format: Format) -> LabResult<i32> {
    let p = cfg.flow.params(&cfg.field).map_err(|e| LabError::Config(e.to_string()))?;
    let c = cfg.constants.c;
    let mut table = Vec::new();
    let mut csv = String::from("t,x,phi,envelope,envelope_bracketed,regime\n");
    for &t in &cfg.flow.times {
        for &x in &cfg.flow.points {
            let phi = phi_flow(&p, t, x)?;
            let env = displacement_envelope(&p, t.abs(), x)?;
            let envb = displacement_envelope_bracketed(&p, t, x);
            let regime = classify_regime(&p, t.abs(), x, None);
            csv.push_str(&format!("{t},{x},{phi},{env},{envb},{regime:?}\n"));
            table.push(json!({"t": t, "x": x, "phi": phi, "envelope": env, "envelope_bracketed": envb, "regime": regime}));
        }
    }
    let mut recursions = Vec::new();
    for &t in cfg.flow.times.iter().filter(|&&t| t > 0.0) {
        let seq = cutoff_recursion(c, &p, t, cfg.flow.recursion_steps)?;
        recursions.push(json!({"t": t, "C": c, "sequence": seq, "fixed_point": cutoff_fixed_point(c, &p, t)}));
    }
    let doc = json!({"schema": SCHEMA, "params": p, "flows": table, "recursions": recursions});
    match format {
        Format::Csv => {
            write_text(&out.join("curves").join("flows.csv"), &csv)?;
            print!("{csv}");
        }
        Format::Json => {
            write_json(&out.join("curves").join("flows.json"), &doc)?;
            println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
        }
    }
    Ok(0)
}

//! Command-line surface: scenario execution, trace classification, scenario
//! linting and PV curve emission.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 scenario validation
//! failure, 3 numerical failure during a run.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::engine::{self, EngineError, Scenario, Trace};
use crate::events::{classify_rms, ClassifierConfig};
use crate::plot::{line_plot, Series};

/// Environment variable holding the default output directory for `run` and
/// `pv-curve`.
pub const OUT_DIR_ENV: &str = "DVRSIM_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "dvrsim",
    version,
    about = "Time-domain feeder simulator: DVR sag/swell ride-through for a \
             critical load, wind generator and PV array"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file and write the trace CSV
    Run(RunArgs),
    /// Classify an RMS channel of a trace CSV into power-quality records
    Classify(ClassifyArgs),
    /// Lint a scenario file and list every violation
    Validate(ValidateArgs),
    /// Emit the I-V/P-V characteristic of the scenario's PV model
    PvCurve(PvCurveArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file
    scenario: PathBuf,
    /// Output directory (default: $DVRSIM_OUT_DIR, else the working dir)
    #[arg(short, long)]
    out_dir: Option<PathBuf>,
    /// Disable the DVR regardless of the scenario setting
    #[arg(long)]
    no_dvr: bool,
    /// Also write one SVG plot per RMS channel
    #[arg(long)]
    plot: bool,
    /// Overwrite existing output files
    #[arg(long)]
    force: bool,
    /// Scenario override as dotted.path=value (JSON scalar); repeatable,
    /// applied in order before validation
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Trace CSV produced by `run`
    trace: PathBuf,
    /// RMS channel to classify
    #[arg(long, default_value = "rms_load_pu")]
    channel: String,
    /// Fundamental frequency of the recorded system, Hz
    #[arg(long, default_value_t = 50.0)]
    f_nominal: f64,
}

#[derive(Args)]
struct ValidateArgs {
    /// Scenario JSON file
    scenario: PathBuf,
}

#[derive(Args)]
struct PvCurveArgs {
    /// Scenario JSON file with a pv section
    scenario: PathBuf,
    /// Output directory (default: $DVRSIM_OUT_DIR, else the working dir)
    #[arg(short, long)]
    out_dir: Option<PathBuf>,
    /// Number of curve points
    #[arg(long, default_value_t = 400)]
    points: usize,
    /// Overwrite an existing output file
    #[arg(long)]
    force: bool,
}

/// Parses `argv` and executes one subcommand, returning the process exit
/// code. Split from `main` so tests can drive it in-process.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Command::Run(a) => cmd_run(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Validate(a) => cmd_validate(a),
        Command::PvCurve(a) => cmd_pv_curve(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code
        }
    }
}

struct CliError {
    message: String,
    exit_code: i32,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn usage_err(message: impl Into<String>) -> CliError {
    CliError {
        message: message.into(),
        exit_code: 1,
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let exit_code = match &e {
            EngineError::Invalid { .. } | EngineError::Signal(_) => 2,
            EngineError::Network { .. } | EngineError::Wind { .. } | EngineError::Pv { .. } => 3,
            EngineError::Csv(_) => 1,
        };
        CliError {
            message: e.to_string(),
            exit_code,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        usage_err(e.to_string())
    }
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn check_overwrite(paths: &[PathBuf], force: bool) -> Result<(), CliError> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            return Err(usage_err(format!(
                "refusing to overwrite {} (pass --force)",
                p.display()
            )));
        }
    }
    Ok(())
}

fn load_scenario(path: &Path, overrides: &[String], no_dvr: bool) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage_err(format!("{}: {e}", path.display())))?;
    let mut doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError {
        message: format!("{}: {e}", path.display()),
        exit_code: 2,
    })?;
    for pair in overrides {
        let (key, raw) = pair
            .split_once('=')
            .ok_or_else(|| usage_err(format!("override '{pair}' is not KEY=VALUE")))?;
        let value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        apply_override(&mut doc, key, value).map_err(usage_err)?;
    }
    let mut scenario: Scenario = serde_json::from_value(doc).map_err(|e| CliError {
        message: format!("scenario: {e}"),
        exit_code: 2,
    })?;
    if no_dvr {
        scenario.dvr.enabled = false;
    }
    Ok(scenario)
}

/// Sets `path` (dot-separated keys, numeric segments index arrays) to
/// `value`. Missing intermediate objects are created; the final
/// deserialization still rejects keys the schema does not know.
fn apply_override(
    doc: &mut serde_json::Value,
    path: &str,
    value: serde_json::Value,
) -> Result<(), String> {
    let parts: Vec<&str> = path.split('.').collect();
    let (last, walk) = parts
        .split_last()
        .filter(|(l, _)| !l.is_empty())
        .ok_or_else(|| format!("empty override path '{path}'"))?;
    let mut cur = doc;
    for part in walk {
        cur = if let Ok(idx) = part.parse::<usize>() {
            cur.get_mut(idx)
                .ok_or_else(|| format!("index {part} out of range in '{path}'"))?
        } else {
            cur.as_object_mut()
                .ok_or_else(|| format!("'{part}' does not address an object in '{path}'"))?
                .entry(part.to_string())
                .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()))
        };
    }
    if let Ok(idx) = last.parse::<usize>() {
        *cur.get_mut(idx)
            .ok_or_else(|| format!("index {last} out of range in '{path}'"))? = value;
    } else {
        cur.as_object_mut()
            .ok_or_else(|| format!("'{last}' does not address an object in '{path}'"))?
            .insert(last.to_string(), value);
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<i32, CliError> {
    let scenario = load_scenario(&a.scenario, &a.set, a.no_dvr)?;
    let stem = if scenario.name.is_empty() {
        a.scenario
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trace".to_string())
    } else {
        scenario.name.clone()
    };
    let dir = out_dir(a.out_dir);
    let csv_path = dir.join(format!("{stem}_trace.csv"));
    let rms_names = ["rms_grid_pu", "rms_dvr_pu", "rms_load_pu", "rms_wind_pu"];
    let mut targets = vec![csv_path.clone()];
    if a.plot {
        for name in rms_names {
            targets.push(dir.join(format!("{stem}_{name}.svg")));
        }
    }
    check_overwrite(&targets, a.force)?;
    fs::create_dir_all(&dir)?;

    let (trace, summary) = engine::run(scenario)?;
    let file = fs::File::create(&csv_path)?;
    trace.to_csv(std::io::BufWriter::new(file))?;
    println!("wrote {}", csv_path.display());

    if a.plot {
        let t = trace
            .col("t")
            .ok_or_else(|| usage_err("trace has no time column"))?;
        for name in rms_names {
            let Some(y) = trace.col(name) else {
                continue; // channel dropped by the record subset
            };
            let svg = line_plot(
                &format!("{stem}: {name}"),
                "time (s)",
                "rms voltage (pu)",
                &[Series { label: name, x: t, y }],
            );
            let path = dir.join(format!("{stem}_{name}.svg"));
            fs::write(&path, svg)?;
            println!("wrote {}", path.display());
        }
    }
    println!(
        "rows={} wall_s={:.3} kvl_residual_max={:.3e} kcl_residual_max={:.3e} bypass_steps={}",
        summary.rows,
        summary.wall_s,
        summary.kvl_residual_max,
        summary.kcl_residual_max,
        summary.bypass_steps
    );
    Ok(0)
}

fn cmd_classify(a: ClassifyArgs) -> Result<i32, CliError> {
    let file = fs::File::open(&a.trace)
        .map_err(|e| usage_err(format!("{}: {e}", a.trace.display())))?;
    let trace = Trace::from_csv(BufReader::new(file))?;
    let t = trace
        .col("t")
        .ok_or_else(|| usage_err("trace has no 't' column"))?;
    if t.len() < 2 {
        return Err(usage_err("trace too short to classify"));
    }
    let dt = t[1] - t[0];
    let rms = trace
        .col(&a.channel)
        .ok_or_else(|| usage_err(format!("trace has no '{}' column", a.channel)))?;
    let records = classify_rms(rms, dt, a.f_nominal, &ClassifierConfig::default())
        .map_err(|e| usage_err(e.to_string()))?;
    for r in &records {
        println!(
            "{:?} t_start={:.4} t_end={:.4} duration={:.4} extremal_pu={:.4}",
            r.kind, r.t_start, r.t_end, r.duration, r.extremal_pu
        );
    }
    println!("total: {} record(s) on {}", records.len(), a.channel);
    Ok(0)
}

fn cmd_validate(a: ValidateArgs) -> Result<i32, CliError> {
    let scenario = load_scenario(&a.scenario, &[], false)?;
    let violations = scenario.validate();
    if violations.is_empty() {
        println!("ok: {}", a.scenario.display());
        Ok(0)
    } else {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        Err(CliError {
            message: format!("{} violation(s)", violations.len()),
            exit_code: 2,
        })
    }
}

fn cmd_pv_curve(a: PvCurveArgs) -> Result<i32, CliError> {
    let scenario = load_scenario(&a.scenario, &[], false)?;
    let Some(pv) = scenario.pv.as_ref() else {
        return Err(CliError {
            message: "scenario has no pv section".to_string(),
            exit_code: 2,
        });
    };
    if a.points < 2 {
        return Err(usage_err("--points must be at least 2"));
    }
    let stem = if scenario.name.is_empty() {
        a.scenario
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "pv".to_string())
    } else {
        scenario.name.clone()
    };
    let dir = out_dir(a.out_dir);
    let path = dir.join(format!("{stem}_pv_curve.csv"));
    check_overwrite(std::slice::from_ref(&path), a.force)?;
    fs::create_dir_all(&dir)?;

    let v_oc = pv.model.v_oc();
    let mut text = String::from("v,i,p\n");
    for k in 0..a.points {
        let v = v_oc * k as f64 / (a.points - 1) as f64;
        let i = pv
            .model
            .pv_current(v)
            .map_err(|source| EngineError::Pv { source, t: 0.0 })?;
        text.push_str(&format!("{v},{i},{}\n", v * i));
    }
    fs::write(&path, text)?;
    println!("wrote {}", path.display());
    Ok(0)
}

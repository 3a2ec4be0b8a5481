//! Command-line front end: run experiments, compare reports, validate and
//! dump workload documents.

use crate::metrics::{self, ReportDoc};
use crate::sched::PolicyKind;
use crate::simcore::{self, HardwareParams, Mode};
use crate::trace;
use crate::workload::{self, PresetOptions, WorkloadMix};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Parser)]
#[command(
    name = "abacus-sim",
    about = "Discrete-event simulator of a flash-integrated low-power accelerator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one workload under the selected policies and datapath modes.
    Run(RunArgs),
    /// Compare finished reports against a reference.
    Compare(CompareArgs),
    /// Validate a workload document or preset.
    Validate(SourceArgs),
    /// Print a workload as a spec document.
    Dump(SourceArgs),
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Heterogeneous mix id (1..=14).
    #[arg(long)]
    mix: Option<u32>,
    /// Preset name (e.g. atax, syrk, demo-intra).
    #[arg(long)]
    preset: Option<String>,
    /// Workload spec file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Instances per kernel (presets and mixes).
    #[arg(long)]
    instances: Option<u32>,
    /// Input scale factor (presets and mixes).
    #[arg(long)]
    input_scale: Option<f64>,
    /// Hardware parameter overrides, key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Comma-separated policies (interst,interdy,intraio,intrao3,simd) or "all".
    #[arg(long, default_value = "all")]
    policy: String,
    /// Datapath: flashabacus, baseline or both.
    #[arg(long, default_value = "flashabacus")]
    mode: String,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Record per-group I/O detail in the event trace.
    #[arg(long)]
    trace: bool,
    /// Also write the GC trace CSV.
    #[arg(long)]
    gc_trace: bool,
    /// Also write the per-kernel latency CDF CSV.
    #[arg(long)]
    cdf: bool,
    /// Also write a power time series CSV with this bin width (ms).
    #[arg(long, value_name = "MS")]
    timeseries_ms: Option<u64>,
    /// Seed recorded in the report (workload generation is deterministic).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompareArgs {
    /// Report files to compare (first is the reference unless --reference).
    reports: Vec<PathBuf>,
    /// Reference report path.
    #[arg(long)]
    reference: Option<PathBuf>,
}

/// A fully resolved experiment: what `run` executes.
pub struct ExperimentConfig {
    pub mix: WorkloadMix,
    pub workload_token: String,
    pub policies: Vec<PolicyKind>,
    pub modes: Vec<Mode>,
    pub params: HardwareParams,
    pub out_dir: PathBuf,
    pub trace_detail: bool,
    pub gc_trace: bool,
    pub cdf: bool,
    pub timeseries_bin: Option<crate::units::Ps>,
    pub seed: u64,
}

fn fail(msg: impl std::fmt::Display) -> String {
    msg.to_string()
}

fn load_workload(src: &SourceArgs, params: &HardwareParams) -> Result<(WorkloadMix, String), String> {
    let sources = [src.mix.is_some(), src.preset.is_some(), src.spec.is_some()];
    if sources.iter().filter(|s| **s).count() != 1 {
        return Err("exactly one of --mix, --preset, --spec is required".into());
    }
    let mut opts = PresetOptions {
        page_group_size: params.geometry.page_group_size(),
        ..PresetOptions::default()
    };
    if let Some(mix_id) = src.mix {
        let mut mix_opts = PresetOptions {
            page_group_size: opts.page_group_size,
            ..PresetOptions::for_mix()
        };
        if let Some(n) = src.instances {
            mix_opts.instance_count = n;
        }
        if let Some(s) = src.input_scale {
            mix_opts.input_scale = s;
        }
        let mix = workload::build_mix_with(mix_id, mix_opts.instance_count, &mix_opts).map_err(fail)?;
        return Ok((mix, format!("mix{mix_id}")));
    }
    if let Some(name) = &src.preset {
        if let Some(n) = src.instances {
            opts.instance_count = n;
        }
        if let Some(s) = src.input_scale {
            opts.input_scale = s;
        }
        let mix = workload::by_name(name, &opts).map_err(fail)?;
        return Ok((mix, name.clone()));
    }
    let path = src.spec.as_ref().unwrap();
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mix = workload::parse_workload(&text, &params.geometry.validation_limits()).map_err(fail)?;
    let token = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "workload".into());
    Ok((mix, token))
}

fn parse_params(set: &[String]) -> Result<HardwareParams, String> {
    let mut params = HardwareParams::default();
    for kv in set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| format!("--set expects key=value, got `{kv}`"))?;
        params.set(key.trim(), value.trim()).map_err(fail)?;
    }
    params.validate().map_err(fail)?;
    Ok(params)
}

fn parse_policies(list: &str) -> Result<Vec<PolicyKind>, String> {
    if list == "all" {
        // The four accelerator schedulers; the simd reference configuration
        // is requested explicitly since it only exists on the baseline path.
        return Ok(PolicyKind::schedulers().to_vec());
    }
    list.split(',')
        .map(|p| {
            PolicyKind::parse(p.trim()).ok_or_else(|| {
                format!("unknown policy `{p}` (expected interst|interdy|intraio|intrao3|simd|all)")
            })
        })
        .collect()
}

fn parse_modes(mode: &str) -> Result<Vec<Mode>, String> {
    match mode {
        "both" => Ok(vec![Mode::Flashabacus, Mode::Baseline]),
        m => Mode::parse(m)
            .map(|m| vec![m])
            .ok_or_else(|| format!("unknown mode `{mode}` (expected flashabacus|baseline|both)")),
    }
}

fn build_experiment(args: &RunArgs) -> Result<ExperimentConfig, String> {
    let params = parse_params(&args.source.set)?;
    let (mix, token) = load_workload(&args.source, &params)?;
    let policies = parse_policies(&args.policy)?;
    let modes = parse_modes(&args.mode)?;
    if policies.is_empty() || modes.is_empty() {
        return Err("need at least one policy and one mode".into());
    }
    Ok(ExperimentConfig {
        mix,
        workload_token: token,
        policies,
        modes,
        params,
        out_dir: args.out.clone(),
        trace_detail: args.trace,
        gc_trace: args.gc_trace,
        cdf: args.cdf,
        timeseries_bin: args.timeseries_ms.map(|ms| ms * crate::units::PS_PER_MS),
        seed: args.seed,
    })
}

/// Executes every (policy, mode) combination of the experiment, writing
/// `<workload>_<policy>_<mode>.{report,events.csv,dispatch.csv}` per run.
/// Returns the artifact base paths.
pub fn execute(config: &ExperimentConfig) -> Result<Vec<PathBuf>, String> {
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| format!("{}: {e}", config.out_dir.display()))?;
    let mut runs = Vec::new();
    for policy in &config.policies {
        for mode in &config.modes {
            if *policy == PolicyKind::Simd && *mode == Mode::Flashabacus {
                // Documented collapse: the reference configuration only
                // exists on the baseline datapath.
                continue;
            }
            runs.push((*policy, *mode));
        }
    }
    if runs.is_empty() {
        return Err("no runnable (policy, mode) combinations".into());
    }

    let threads = std::env::var("ABACUS_SIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .min(runs.len());

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<PathBuf, String>>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= runs.len() {
                    break;
                }
                let (policy, mode) = runs[i];
                let outcome = run_one(config, policy, mode);
                results.lock().unwrap().push(outcome);
            });
        }
    });
    let mut outcomes = results.into_inner().unwrap();
    outcomes.sort_by(|a, b| {
        let key = |r: &Result<PathBuf, String>| match r {
            Ok(p) => p.display().to_string(),
            Err(e) => e.clone(),
        };
        key(a).cmp(&key(b))
    });
    let mut paths = Vec::new();
    for o in outcomes {
        paths.push(o?);
    }
    Ok(paths)
}

fn run_one(config: &ExperimentConfig, policy: PolicyKind, mode: Mode) -> Result<PathBuf, String> {
    let report = simcore::run_with(
        &config.mix,
        policy,
        &config.params,
        mode,
        config.trace_detail,
        config.seed,
    )
    .map_err(|e| format!("{} {policy} {mode}: {e}", config.workload_token))?;
    let base = config
        .out_dir
        .join(format!("{}_{policy}_{mode}", config.workload_token));
    let doc = metrics::build_report_doc(&report, &config.params);
    let write = |path: PathBuf, text: String| -> Result<(), String> {
        std::fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))
    };
    write(base.with_extension("report"), doc.to_toml_string())?;
    write(base.with_extension("events.csv"), trace::events_csv(&report))?;
    write(base.with_extension("dispatch.csv"), trace::dispatch_csv(&report))?;
    if config.gc_trace {
        write(base.with_extension("gc.csv"), trace::gc_csv(&report))?;
    }
    if config.cdf {
        write(base.with_extension("cdf.csv"), trace::cdf_csv(&doc.latency))?;
    }
    if let Some(bin) = config.timeseries_bin {
        let bins = metrics::power_timeseries(&report, &config.params, bin).map_err(fail)?;
        write(base.with_extension("power.csv"), trace::timeseries_csv(&bins))?;
    }
    Ok(base)
}

fn cmd_run(args: &RunArgs) -> Result<(), String> {
    let config = build_experiment(args)?;
    let paths = execute(&config)?;
    for p in &paths {
        println!("wrote {}.{{report,events.csv,dispatch.csv}}", p.display());
    }
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<(), String> {
    if args.reports.len() < 2 {
        return Err("compare needs at least two reports".into());
    }
    let load = |p: &Path| -> Result<ReportDoc, String> {
        let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
        ReportDoc::from_toml_str(&text).map_err(|e| format!("{}: {e}", p.display()))
    };
    let mut docs = Vec::new();
    for p in &args.reports {
        docs.push((p.clone(), load(p)?));
    }
    let reference = match &args.reference {
        Some(p) => load(p)?,
        None => docs[0].1.clone(),
    };
    for (p, d) in &docs {
        if d.run.workload_digest != reference.run.workload_digest {
            return Err(format!(
                "workload mismatch: {} ran `{}` ({}), reference ran `{}` ({})",
                p.display(),
                d.run.workload,
                d.run.workload_digest,
                reference.run.workload,
                reference.run.workload_digest
            ));
        }
    }
    let ref_tp = reference.throughput.bytes_per_sec;
    let ref_lat = reference.latency.mean_ps;
    let ref_energy = reference.energy.total_j();
    println!(
        "workload: {}   reference: {} / {}",
        reference.run.workload, reference.run.policy, reference.run.mode
    );
    println!(
        "{:<24} {:>14} {:>8} {:>14} {:>8} {:>12} {:>8}",
        "config", "thru(MB/s)", "ratio", "mean_lat(ms)", "ratio", "energy(J)", "ratio"
    );
    let ratio = |v: f64, r: f64| if r > 0.0 { v / r } else { 0.0 };
    for (_, d) in &docs {
        let label = format!("{}_{}", d.run.policy, d.run.mode);
        let tp = d.throughput.bytes_per_sec;
        let lat = d.latency.mean_ps;
        let en = d.energy.total_j();
        println!(
            "{:<24} {:>14.3} {:>8.3} {:>14.3} {:>8.3} {:>12.3} {:>8.3}",
            label,
            tp / 1e6,
            ratio(tp, ref_tp),
            lat / 1e9,
            ratio(lat, ref_lat),
            en,
            ratio(en, ref_energy),
        );
    }
    Ok(())
}

fn cmd_validate(args: &SourceArgs) -> Result<(), String> {
    let params = parse_params(&args.set)?;
    let (mix, token) = load_workload(args, &params)?;
    // Loading already validated; print a summary of what passed.
    let kernels: usize = mix.applications.iter().map(|a| a.kernels.len() * a.instance_count as usize).sum();
    let screens: usize = mix
        .applications
        .iter()
        .map(|a| {
            a.instance_count as usize
                * a.kernels.iter().map(|k| k.screen_count()).sum::<usize>()
        })
        .sum();
    println!(
        "ok: {token}: {} application(s), {kernels} kernel instance(s), {screens} screen(s), {:.1} MiB input",
        mix.applications.len(),
        mix.total_input_bytes() as f64 / (1 << 20) as f64
    );
    Ok(())
}

fn cmd_dump(args: &SourceArgs) -> Result<(), String> {
    let params = parse_params(&args.set)?;
    let (mix, _) = load_workload(args, &params)?;
    print!("{}", workload::serialize_workload(&mix));
    Ok(())
}

/// Entry point used by the binary; returns the process exit code.
pub fn run_cli_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // Help and version are not errors.
            if e.use_stderr() {
                eprintln!("abacus-sim: error: invalid arguments");
                eprint!("{e}");
                return 2;
            }
            print!("{e}");
            return 0;
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Dump(a) => cmd_dump(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(msg) => {
            eprintln!("abacus-sim: error: {msg}");
            1
        }
    }
}

pub fn run_cli() -> i32 {
    run_cli_from(std::env::args_os())
}

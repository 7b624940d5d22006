use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aioarch::sim::{write_trace_csv, TraceEvent};
use aioarch_bench::experiments::{mean_iops, SweepOutput};
use aioarch_bench::plot::{line_chart, steps, Series};
use aioarch_bench::{
    callback_csv, qd_csv, scaling_csv, scaling_trace, sweep_callback, sweep_qd, timeline_csv, verify, BackendKind,
    BenchError, ExperimentConfig,
};
use clap::{Parser, Subcommand};

/// Sweep experiments over the asynchronous I/O execution architectures.
///
/// Exit codes: 0 success, 1 failed check or run, 2 configuration error.
#[derive(Parser, Debug)]
#[command(name = "aio-bench", version)]
struct Cli {
    /// TOML experiment config; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Target file for the native backend.
    #[arg(long, global = true)]
    path: Option<PathBuf>,
    /// Directory for CSV (and plot) output; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write an SVG chart next to the CSV (needs --out).
    #[arg(long, global = true)]
    plot: bool,
    /// Debug: dump the device event trace of the first measured run.
    #[arg(long, global = true)]
    trace: bool,
    /// Print the full default config and exit.
    #[arg(long)]
    dump_defaults: bool,
    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// IOPS against queue depth.
    SweepQd,
    /// IOPS against post-I/O callback cost, inline and on I/O threads.
    SweepCallback,
    /// Dynamic against static pool on a square-wave load.
    ScalingTrace,
    /// Invariant suite; exit 0 iff every check passes.
    Verify,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, BenchError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = cli.backend {
        cfg.backend.kind = b;
    }
    if let Some(p) = &cli.path {
        cfg.backend.native.path = p.clone();
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<(), BenchError> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_trace(out: Option<&Path>, trace: Option<&[TraceEvent]>) -> Result<(), BenchError> {
    let Some(trace) = trace else { return Ok(()) };
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, trace)?;
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("trace.csv"), buf)?;
        }
        None => eprint!("{}", String::from_utf8_lossy(&buf)),
    }
    Ok(())
}

fn series_of(out: &SweepOutput, with_expected: &str) -> Vec<Series> {
    let mut series: Vec<Series> = Vec::new();
    for (name, x, iops) in mean_iops(out) {
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((x as f64, iops)),
            None => series.push(Series {
                name,
                points: vec![(x as f64, iops)],
            }),
        }
    }
    let mut expected: Vec<(f64, f64)> = Vec::new();
    for p in out.samples.iter().filter(|p| p.run == 0) {
        if let Some(e) = p.expected_iops {
            if !expected.iter().any(|&(x, _)| x == p.x as f64) {
                expected.push((p.x as f64, e));
            }
        }
    }
    if !expected.is_empty() && !with_expected.is_empty() {
        series.push(Series {
            name: with_expected.into(),
            points: expected,
        });
    }
    series
}

fn run(cli: &Cli, cmd: Cmd) -> Result<bool, BenchError> {
    let cfg = load(cli)?;
    let out = cli.out.as_deref();
    let plot_dir = if cli.plot { out } else { None };
    if cli.plot && out.is_none() {
        eprintln!("--plot needs --out; skipping the chart");
    }
    match cmd {
        Cmd::SweepQd => {
            let r = sweep_qd(&cfg, cli.trace)?;
            emit(out, "sweep_qd.csv", &qd_csv(&r))?;
            emit_trace(out, r.trace.as_deref())?;
            if let Some(dir) = plot_dir {
                let s = series_of(&r, "little's law");
                line_chart(&dir.join("sweep_qd.svg"), "IOPS vs queue depth", "queue depth", "IOPS", &s, true)?;
            }
        }
        Cmd::SweepCallback => {
            let r = sweep_callback(&cfg, cli.trace)?;
            emit(out, "sweep_callback.csv", &callback_csv(&r))?;
            emit_trace(out, r.trace.as_deref())?;
            if let Some(dir) = plot_dir {
                let mut s = series_of(&r, "");
                for x in &mut s {
                    // Cost 0 cannot sit on a log axis.
                    x.points.retain(|&(c, _)| c > 0.0);
                }
                line_chart(&dir.join("sweep_callback.svg"), "IOPS vs callback cost", "callback cost (ns)", "IOPS", &s, true)?;
            }
        }
        Cmd::ScalingTrace => {
            let t = scaling_trace(&cfg, cli.trace)?;
            emit(out, "scaling_trace.csv", &scaling_csv(&t))?;
            emit(out, "scaling_timeline.csv", &timeline_csv(&t))?;
            emit_trace(out, t.trace.as_deref())?;
            if let Some(dir) = plot_dir {
                let end = t.profile.total_ns();
                let s = vec![
                    Series {
                        name: "dynamic_pool".into(),
                        points: steps(&t.dynamic.active_instance_timeline, end),
                    },
                    Series {
                        name: "static_pool".into(),
                        points: steps(&t.fixed.active_instance_timeline, end),
                    },
                ];
                line_chart(&dir.join("scaling_trace.svg"), "Active I/O instances", "time (ns)", "instances", &s, false)?;
            }
        }
        Cmd::Verify => {
            let r = verify(&cfg);
            emit(out, "verify.csv", &r.render())?;
            if out.is_some() {
                print!("{}", r.render());
            }
            return Ok(r.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.dump_defaults {
        match ExperimentConfig::default().to_toml() {
            Ok(t) => {
                print!("{t}");
                return ExitCode::SUCCESS;
            }
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
        }
    }
    let Some(cmd) = cli.cmd else {
        eprintln!("no command given; see --help");
        return ExitCode::from(2);
    };
    if cfg!(not(feature = "native")) && cli.backend == Some(BackendKind::Native) {
        eprintln!("this build has no native backend; rebuild with --features native");
        return ExitCode::from(2);
    }
    match run(&cli, cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

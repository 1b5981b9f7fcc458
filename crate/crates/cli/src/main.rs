use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vitac_core::config::PipelineConfig;
use vitac_core::dataset::raw::write_raw_dir;
use vitac_core::dataset::{export_episode, load_episode, validate_episode};
use vitac_core::model::DeviceId;
use vitac_core::pipeline::{process_dir, Summary};
use vitac_core::simulator::{simulate, Scenario, SimConfig};
use vitac_core::sync::AlignedEpisode;
use vitac_session::{Session, SessionConfig, SESSION_PATH};

/// Sub-directory of `simulate --out` holding the device logs.
const RAW_DIR: &str = "raw";
/// Sub-directory of `simulate --out` holding the ground-truth episode.
const TRUTH_DIR: &str = "ground_truth";

#[derive(Parser)]
#[command(name = "vitac", version, about = "Record, align and inspect visuo-tactile demonstrations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a demonstration: raw device logs plus its ground-truth episode.
    Simulate(SimulateArgs),
    /// Turn a directory of raw device logs into an aligned episode.
    Process(ProcessArgs),
    /// Print an episode's series as CSV, or its events.
    Inspect(InspectArgs),
    /// Serve the live teleoperation session over WebSocket.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clock offset of a device, local minus master seconds.
    #[arg(long, value_name = "DEV=SECONDS", value_parser = parse_device_value)]
    skew: Vec<(DeviceId, f64)>,
    /// Gaussian timestamp jitter of a device, seconds.
    #[arg(long, value_name = "DEV=STD", value_parser = parse_device_value)]
    jitter: Vec<(DeviceId, f64)>,
    #[arg(long, value_enum, default_value_t = ScenarioArg::ToyInsertion)]
    scenario: ScenarioArg,
    /// Rig and device settings; defaults when absent.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    ToyInsertion,
}

#[derive(Args)]
struct ProcessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Master grid rate, overriding the config file.
    #[arg(long, value_name = "HZ", value_parser = parse_positive)]
    rate: Option<f64>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, conflicts_with = "events")]
    csv: Option<Series>,
    #[arg(long)]
    events: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Series {
    Trajectory,
    Width,
    Labels,
    TactileSum,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 60.0, value_parser = parse_positive)]
    tick_hz: f64,
    #[arg(long, default_value = "recordings")]
    record_dir: PathBuf,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("{s:?} is not a positive number")),
    }
}

fn parse_device_value(s: &str) -> Result<(DeviceId, f64), String> {
    let (dev, v) = s.split_once('=').ok_or_else(|| format!("expected DEV=VALUE, got {s:?}"))?;
    let dev = DeviceId::new(dev).map_err(|e| e.to_string())?;
    let v: f64 = v.parse().map_err(|_| format!("{v:?} is not a number"))?;
    if !v.is_finite() {
        return Err(format!("{v} is not finite"));
    }
    Ok((dev, v))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let pipeline = load_config(a.config.as_deref())?;
    let mut cfg = SimConfig {
        seed: a.seed,
        scenario: match a.scenario {
            ScenarioArg::ToyInsertion => Scenario::ToyInsertion,
        },
        devices: pipeline.devices,
        rig: pipeline.rig.clone(),
        ..SimConfig::default()
    };
    cfg.rates.pose = pipeline.rate_hz;
    for (dev, offset) in a.skew {
        cfg.clock_faults.entry(dev).or_default().offset = offset;
    }
    for (dev, std) in a.jitter {
        cfg.clock_faults.entry(dev).or_default().jitter_std = std;
    }
    let out = simulate(&cfg)?;
    let raw = a.out.join(RAW_DIR);
    write_raw_dir(&out.raw, &raw).with_context(|| format!("writing {}", raw.display()))?;
    export_episode(&out.ground_truth, &a.out.join(TRUTH_DIR))?;
    println!("{}", Summary::of(&out.ground_truth));
    Ok(())
}

fn cmd_process(a: ProcessArgs) -> Result<()> {
    let mut cfg = load_config(Some(&a.config))?;
    if let Some(rate) = a.rate {
        cfg.rate_hz = rate;
    }
    let summary = process_dir(&a.input, &a.out, &cfg).with_context(|| format!("processing {}", a.input.display()))?;
    println!("{summary}");
    Ok(())
}

fn write_csv(ep: &AlignedEpisode, series: Series, w: &mut impl Write) -> io::Result<()> {
    let header = match series {
        Series::Trajectory => "tick,t,tx,ty,tz,qw,qx,qy,qz",
        Series::Width => "tick,t,width",
        Series::Labels => "tick,t,label",
        Series::TactileSum => "tick,t,left_sum,right_sum,left_valid,right_valid",
    };
    writeln!(w, "{header}")?;
    for (k, t) in ep.timeline.iter().enumerate() {
        let t = t.secs();
        match series {
            Series::Trajectory => {
                let p = ep.poses[k].translation();
                let [qw, qx, qy, qz] = ep.poses[k].quat_wxyz();
                writeln!(w, "{k},{t},{},{},{},{qw},{qx},{qy},{qz}", p.x, p.y, p.z)?
            }
            Series::Width => writeln!(w, "{k},{t},{}", ep.widths[k].width())?,
            Series::Labels => writeln!(w, "{k},{t},{}", ep.labels[k].as_u8())?,
            Series::TactileSum => {
                let (l, r) = (&ep.tactile_left[k], &ep.tactile_right[k]);
                writeln!(
                    w,
                    "{k},{t},{},{},{},{}",
                    l.frame.grid().sum(),
                    r.frame.grid().sum(),
                    u8::from(l.valid),
                    u8::from(r.valid)
                )?
            }
        }
    }
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let violations = validate_episode(&a.input);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{v}");
        }
        bail!("{} fails validation ({} violations)", a.input.display(), violations.len());
    }
    let ep = load_episode(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
    let mut out = io::BufWriter::new(io::stdout().lock());
    if let Some(series) = a.csv {
        write_csv(&ep, series, &mut out)?;
    } else if a.events {
        writeln!(out, "order,name,tick,t")?;
        for (i, e) in ep.events.iter().enumerate() {
            writeln!(out, "{},{},{},{}", i + 1, e.name, e.tick, e.t.secs())?;
        }
    } else {
        writeln!(out, "{} {}", ep.meta.episode_id, Summary::of(&ep))?;
    }
    out.flush()?;
    Ok(())
}

async fn cmd_serve(a: ServeArgs) -> Result<()> {
    let pipeline = load_config(a.config.as_deref())?;
    let cfg = SessionConfig::new(SimConfig::default(), pipeline, a.tick_hz, a.record_dir);
    let addr = format!("{}:{}", a.host, a.port);
    let session = Session::bind(&addr, cfg).await?;
    println!("listening on ws://{}{SESSION_PATH}", session.local_addr());
    io::stdout().flush()?;
    session
        .serve(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("interrupted, shutting down");
        })
        .await?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Process(a) => cmd_process(a),
        Cmd::Inspect(a) => cmd_inspect(a),
        Cmd::Serve(a) => tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .context("starting runtime")?
            .block_on(cmd_serve(a)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

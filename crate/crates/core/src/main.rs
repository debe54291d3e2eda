use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use simct::addressing::{AddressMap, AddressMapConfig};
use simct::experiments::{self, parse_time, ExperimentKind, ExperimentSpec};

#[derive(Parser)]
#[command(name = "simct", version, about = "Packetized stacked-memory simulator and experiment harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Base seed for all generators.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time per point, e.g. 2ms, 150us.
    #[arg(long)]
    duration: Option<String>,
    /// Main CSV path; auxiliary tables are written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random vault subsets for `combos` (default: all 1820).
    #[arg(long)]
    sample: Option<usize>,
    /// Write one `tick,seq,target,kind` line per dispatched event.
    #[arg(long)]
    event_log: Option<PathBuf>,
    /// Extra spec settings, `key=value`; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the effective spec and exit.
    #[arg(long)]
    print_spec: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment described by a spec file.
    Run {
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Latency and bandwidth for every access pattern and request size.
    Gups(Common),
    /// Latency versus number of requests streamed into one vault.
    Lowload(Common),
    /// Three pinned ports plus one port visiting every vault.
    Qos(Common),
    /// All four-vault combinations.
    Combos(Common),
    /// Bandwidth versus active port count.
    Portsweep(Common),
    /// Print vault, bank and offsets of an address.
    Decode {
        /// Address in hex, with or without 0x.
        addr: String,
        #[arg(long, default_value_t = 128)]
        block_size: u64,
    },
}

fn apply(mut spec: ExperimentSpec, c: &Common) -> Result<ExperimentSpec> {
    if let Some(s) = c.seed {
        spec.seed = s;
    }
    if let Some(d) = &c.duration {
        spec.duration = parse_time(d).with_context(|| format!("bad duration {d:?}"))?;
        if spec.warmup >= spec.duration {
            spec.warmup = simct::SimTime(spec.duration.0 / 5);
        }
    }
    if let Some(o) = &c.out {
        spec.out = Some(o.clone());
    }
    if let Some(k) = c.sample {
        spec.sample = Some(k);
    }
    if let Some(p) = &c.event_log {
        spec.event_log = Some(p.clone());
    }
    for kv in &c.set {
        let Some((k, v)) = kv.split_once('=') else { bail!("--set expects key=value, got {kv:?}") };
        spec.set(k.trim(), v.trim()).map_err(anyhow::Error::msg)?;
    }
    Ok(spec)
}

fn execute(spec: ExperimentSpec, c: &Common) -> Result<()> {
    if c.print_spec {
        print!("{}", spec.to_text());
        return Ok(());
    }
    let report = experiments::run(&spec)?;
    match &spec.out {
        Some(path) => {
            for p in experiments::emit_csv(&report, path)? {
                eprintln!("wrote {}", p.display());
            }
        }
        None => {
            let mut out = std::io::stdout().lock();
            experiments::write_table(&experiments::points_table(&report.points), &mut out)?;
        }
    }
    Ok(())
}

fn decode(addr: &str, block_size: u64) -> Result<()> {
    let digits = addr.trim_start_matches("0x").trim_start_matches("0X");
    let a = u64::from_str_radix(digits, 16).with_context(|| format!("not a hex address: {addr:?}"))?;
    let map = AddressMap::new(AddressMapConfig { block_size, ..Default::default() })?;
    let d = map.decode(a);
    println!(
        "vault={} bank={} row_offset=0x{:x} block_offset={}",
        d.vault, d.bank, d.row_offset, d.block_offset
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { spec, common } => ExperimentSpec::load(&spec)
            .map_err(anyhow::Error::from)
            .and_then(|s| apply(s, &common))
            .and_then(|s| execute(s, &common)),
        Cmd::Gups(c) => apply(ExperimentSpec::new(ExperimentKind::Gups), &c).and_then(|s| execute(s, &c)),
        Cmd::Lowload(c) => apply(ExperimentSpec::new(ExperimentKind::Lowload), &c).and_then(|s| execute(s, &c)),
        Cmd::Qos(c) => apply(ExperimentSpec::new(ExperimentKind::Qos), &c).and_then(|s| execute(s, &c)),
        Cmd::Combos(c) => apply(ExperimentSpec::new(ExperimentKind::Combos), &c).and_then(|s| execute(s, &c)),
        Cmd::Portsweep(c) => apply(ExperimentSpec::new(ExperimentKind::PortSweep), &c).and_then(|s| execute(s, &c)),
        Cmd::Decode { addr, block_size } => decode(&addr, block_size),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("simct: {e:#}");
            ExitCode::FAILURE
        }
    }
}

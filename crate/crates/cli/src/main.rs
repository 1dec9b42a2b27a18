//! `ctc`: desk-scale sweeps, compression and product benchmarks.
//!
//! Settings are resolved lowest to highest: built-in defaults for the
//! subcommand, `CTC_WORKERS`, the `--config` JSON document, then flags.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctc_core::experiments::{run, ExperimentConfig, ExperimentKind};
use ctc_core::Error;
use serde_json::{json, Map, Value};

const WORKERS_ENV: &str = "CTC_WORKERS";

#[derive(Parser)]
#[command(
    name = "ctc",
    version,
    about = "Tucker-compressed coupling matrix experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank and memory against loop distance.
    DistanceSweep(Common),
    /// Rank and memory against frequency at lambda/20 resolution.
    FrequencySweep(Common),
    /// Rank against plate refinement.
    MeshSweep(Common),
    /// Tucker-based cross approximation against its tolerance.
    ToleranceSweep(Common),
    /// Compress the configured scene into a CTC1 (or CTA1) file.
    Compress {
        #[command(flatten)]
        common: Common,
        /// Use the Tucker-based cross approximation (writes CTA1).
        #[arg(long)]
        aca: bool,
    },
    /// Load a compressed file and time forward and adjoint products.
    MatvecBench {
        #[command(flatten)]
        common: Common,
        /// CTC1 or CTA1 file to load.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Right-hand sides per product.
        #[arg(long)]
        columns: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration document.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output table (sweeps) or binary file (compress); metadata goes to `<out>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core, 1 is sequential and reproducible.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    mem_cap_bytes: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eps: Option<f64>,
}

impl Common {
    fn flags(&self) -> Map<String, Value> {
        let mut m = Map::new();
        if let Some(p) = &self.out {
            m.insert("out".into(), json!(p));
        }
        if let Some(w) = self.workers {
            m.insert("workers".into(), json!(w));
        }
        if let Some(c) = self.mem_cap_bytes {
            m.insert("mem_cap_bytes".into(), json!(c));
        }
        if let Some(s) = self.seed {
            m.insert("seed".into(), json!(s));
        }
        if let Some(e) = self.eps {
            m.insert("eps".into(), json!(e));
        }
        m
    }
}

fn env_layer() -> Result<Value, Error> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| {
                Error::Config(format!("{WORKERS_ENV} must be a worker count, got {v:?}"))
            })?;
            Ok(json!({ "workers": n }))
        }
        Err(_) => Ok(json!({})),
    }
}

fn resolve(
    kind: ExperimentKind,
    common: &Common,
    extra: Map<String, Value>,
) -> Result<ExperimentConfig, Error> {
    let mut layers = vec![env_layer()?];
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        layers.push(doc);
    }
    let mut flags = common.flags();
    flags.extend(extra);
    layers.push(Value::Object(flags));
    ExperimentConfig::from_layers(kind, &layers)
}

fn execute(cli: Cli) -> Result<(), Error> {
    let mut extra = Map::new();
    let (kind, common) = match &cli.command {
        Command::DistanceSweep(c) => (ExperimentKind::Distance, c),
        Command::FrequencySweep(c) => (ExperimentKind::Frequency, c),
        Command::MeshSweep(c) => (ExperimentKind::Mesh, c),
        Command::ToleranceSweep(c) => (ExperimentKind::Tolerance, c),
        Command::Compress { common, aca } => {
            if *aca {
                extra.insert("aca".into(), json!(true));
            }
            (ExperimentKind::Compress, common)
        }
        Command::MatvecBench {
            common,
            input,
            columns,
            repeats,
        } => {
            if let Some(p) = input {
                extra.insert("input".into(), json!(p));
            }
            if let Some(c) = columns {
                extra.insert("columns".into(), json!(c));
            }
            if let Some(r) = repeats {
                extra.insert("repeats".into(), json!(r));
            }
            (ExperimentKind::MatvecBench, common)
        }
    };
    let cfg = resolve(kind, common, extra)?;
    let report = run(&cfg)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Fuse per-camera detection messages into world positions.
//!
//! Input is line-delimited `DetectionMessage` JSON; output is one JSON line
//! per fused position.

use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};

use anyhow::Context;
use clap::Parser;
use vtrack::fusion::{ingest_lines, run_virtual, tick_loop, DetectionMessage, RigRegistry, Tracker, TrackerConfig};

#[derive(Parser)]
#[command(about = "Multi-camera position fusion")]
struct Args {
    /// JSON list of camera rigs.
    #[arg(long)]
    rigs: PathBuf,
    /// Ticks per second.
    #[arg(long, default_value_t = 24.0)]
    rate: f64,
    /// Association gate, meters.
    #[arg(long, default_value_t = 1.0)]
    gate: f64,
    /// Messages older than this many tick periods are dropped.
    #[arg(long, default_value_t = 2.0)]
    staleness_ticks: f64,
    /// Accept messages over TCP at this address, one stream per connection.
    #[arg(long, conflicts_with_all = ["stdin", "replay"])]
    listen: Option<String>,
    /// Read messages from standard input in wall-clock time.
    #[arg(long, conflicts_with = "replay")]
    stdin: bool,
    /// Replay a message file in virtual time and exit.
    #[arg(long, requires = "duration")]
    replay: Option<PathBuf>,
    /// Replay length, seconds.
    #[arg(long)]
    duration: Option<f64>,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let rigs = std::fs::read_to_string(&args.rigs).with_context(|| format!("reading {}", args.rigs.display()))?;
    let config = TrackerConfig {
        rate: args.rate,
        gate: args.gate,
        staleness_ticks: args.staleness_ticks,
    };
    let mut tracker = Tracker::new(RigRegistry::from_json(&rigs)?, config)?;

    if let Some(path) = &args.replay {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let messages = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str::<DetectionMessage>(l).with_context(|| format!("message {}", i + 1)))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let ticks = run_virtual(&mut tracker, &messages, args.duration.unwrap_or_default());
        let mut out = std::io::BufWriter::new(std::io::stdout().lock());
        for p in ticks.iter().flat_map(|t| &t.positions) {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        return Ok(());
    }

    let shared = Arc::new(Mutex::new(tracker));
    let stop = Arc::new(AtomicBool::new(false));
    if let Some(addr) = &args.listen {
        let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
        let shared = Arc::clone(&shared);
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let shared = Arc::clone(&shared);
                std::thread::spawn(move || {
                    if let Ok(bad) = ingest_lines(BufReader::new(stream), &shared) {
                        if bad > 0 {
                            eprintln!("connection closed, {bad} malformed lines");
                        }
                    }
                });
            }
        });
    } else if args.stdin {
        let shared = Arc::clone(&shared);
        let stop = Arc::clone(&stop);
        std::thread::spawn(move || {
            let bad = ingest_lines(std::io::stdin().lock(), &shared).unwrap_or(0);
            if bad > 0 {
                eprintln!("{bad} malformed lines");
            }
            // give the last messages one more tick before exiting
            std::thread::sleep(std::time::Duration::from_secs_f64(2.0 / args.rate));
            stop.store(true, std::sync::atomic::Ordering::Relaxed);
        });
    } else {
        anyhow::bail!("choose one of --listen, --stdin or --replay");
    }
    tick_loop(&shared, std::io::stdout().lock(), &stop, 0.0)?;
    Ok(())
}

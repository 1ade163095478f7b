//! Replay every sequence of a dataset through the tracker and report
//! fused-position error percentiles as CSV.

use std::io::BufReader;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vtrack::fusion::{evaluate_sequence, EvalReport, NoiseModel, TrackerConfig};
use vtrack::syngen::{read_annotations, DatasetManifest, ObjectAnnotation};

#[derive(Parser)]
#[command(about = "Fusion accuracy on a generated dataset")]
struct Args {
    /// Manifest written by `syngen`.
    #[arg(long)]
    dataset: PathBuf,
    /// Noise model JSON; omitted fields take their defaults. No noise when absent.
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Sequence frame rate and tick rate.
    #[arg(long, default_value_t = 24.0)]
    rate: f64,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let manifest: DatasetManifest = serde_json::from_str(
        &std::fs::read_to_string(&args.dataset).with_context(|| format!("reading {}", args.dataset.display()))?,
    )?;
    let dir = args.dataset.parent().unwrap_or(std::path::Path::new("."));
    let file = std::fs::File::open(dir.join(&manifest.annotations))?;
    let records = read_annotations(BufReader::new(file))?;
    let noise: Option<NoiseModel> = match &args.noise {
        Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(noise.map_or(0, |n| n.seed));

    let mut sources: Vec<&str> = records.iter().map(|r| r.source.as_str()).collect();
    sources.sort_unstable();
    sources.dedup();
    let config = TrackerConfig { rate: args.rate, ..TrackerConfig::default() };
    let mut total = EvalReport { errors: Vec::new(), ticks: 0, nearest_camera_hits: 0 };
    for source in sources {
        // dome shots are independent stills, not a time series
        if !source.starts_with("sequence:") {
            continue;
        }
        let seq: Vec<ObjectAnnotation> = records.iter().filter(|r| r.source == source).cloned().collect();
        let report = evaluate_sequence(
            &seq,
            args.rate,
            config,
            noise.as_ref().map(|n| (n, &mut rng as &mut dyn rand::RngCore)),
        )?;
        eprintln!("{source}: {} ticks, {} fused positions", report.ticks, report.errors.len());
        total.errors.extend(report.errors);
        total.ticks += report.ticks;
        total.nearest_camera_hits += report.nearest_camera_hits;
    }
    anyhow::ensure!(!total.errors.is_empty(), "no sequence records in {}", args.dataset.display());
    let csv = total.to_csv(&[50.0, 90.0, 95.0, 99.0, 100.0]);
    match &args.out {
        Some(p) => std::fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

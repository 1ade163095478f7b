//! Generate a synthetic annotation dataset from a JSON profile.

use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use vtrack::fusion::{messages_from_annotations, rigs_from_annotations};
use vtrack::syngen::{load_profile, read_annotations, run_profile};

#[derive(Parser)]
#[command(about = "Render annotation records for the domes and sequences of a profile")]
struct Args {
    /// Profile JSON file.
    #[arg(long)]
    profile: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the profile's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write noise-free detection messages of every sequence record
    /// to this file, ready for `track --replay`.
    #[arg(long)]
    messages: Option<PathBuf>,
    /// Also write the sequence camera rigs to this file, for `track --rigs`.
    #[arg(long)]
    rigs: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let text = std::fs::read_to_string(&args.profile)
        .with_context(|| format!("reading {}", args.profile.display()))?;
    let mut profile = load_profile(&text)?;
    if let Some(seed) = args.seed {
        profile.seed = seed;
    }
    let summary = run_profile(&profile, &args.out)?;
    eprintln!(
        "wrote {} records to {}",
        summary.records,
        args.out.join(&profile.output.annotations_file).display()
    );
    if let Some(m) = summary.manifest {
        eprintln!("split {}/{}/{} (digest {})", m.train.len(), m.val.len(), m.test.len(), m.config_digest);
    }
    if args.messages.is_some() || args.rigs.is_some() {
        let file = std::fs::File::open(args.out.join(&profile.output.annotations_file))?;
        let records: Vec<_> = read_annotations(std::io::BufReader::new(file))?
            .into_iter()
            .filter(|r| r.source.starts_with("sequence:"))
            .collect();
        if let Some(path) = &args.messages {
            let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
            for m in messages_from_annotations(&records) {
                serde_json::to_writer(&mut out, &m)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
        if let Some(path) = &args.rigs {
            std::fs::write(path, serde_json::to_string_pretty(&rigs_from_annotations(&records))?)?;
        }
    }
    Ok(())
}

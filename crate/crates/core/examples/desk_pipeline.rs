//! Runs the whole desk-profile recipe once and prints every report.
//!
//! `cargo run --example desk_pipeline -- [seed] [out_dir]`

use audiotext::pipeline::{run_pipeline, PipelineConfig, Profile, Progress, RunDir};
use audiotext::toygen::default_registry;

struct Stderr;

impl Progress for Stderr {
    fn stage(&mut self, name: &str, secs: f64) {
        eprintln!("[{secs:7.1}s] {name}");
    }
}

fn main() -> audiotext::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map(|s| s.parse().expect("seed is an integer")).unwrap_or(0);
    let out = args.next().map(RunDir::create).transpose()?;
    let cfg = PipelineConfig::profile(Profile::Desk).with_seed(seed);
    let outcome = run_pipeline(&cfg, &default_registry(), out.as_ref(), &mut Stderr)?;
    for r in outcome.reports() {
        print!("{}", r.summary());
    }
    println!("checkpoint {}", outcome.checkpoint_hash);
    Ok(())
}

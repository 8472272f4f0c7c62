//! Trains EDM and the cross-entropy baseline on the default blobs benchmark
//! and prints best / last test accuracy for a few seeds.
//!
//! cargo run --release -p edm-core --example blobs_benchmark -- [epochs] [seeds]

use edm_core::benchgen::BlobsConfig;
use edm_core::train::{run, run_baseline_ce, TrainConfig};

fn main() -> edm_core::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let epochs = args.next().unwrap_or(30);
    let seeds = args.next().unwrap_or(3) as u64;
    for seed in 0..seeds {
        let (train, test) = BlobsConfig { seed, ..Default::default() }.generate()?;
        let test = test.expect("default config builds a test set");
        let cfg = TrainConfig { epochs, seed, ..Default::default() };
        let edm = run(&train, &test, &cfg, |_, _| Ok(()))?;
        let ce = run_baseline_ce(&train, &test, &cfg, |_, _| Ok(()))?;
        let (e, c) = (edm.accuracy.expect("epochs > 0"), ce.accuracy.expect("epochs > 0"));
        let split: Vec<String> = edm
            .reports
            .iter()
            .filter_map(|r| r.split_balanced_accuracy)
            .map(|b| format!("{b:.3}"))
            .collect();
        println!("seed {seed}: edm best {:.3} last {:.3} | ce best {:.3} last {:.3}", e.best, e.last, c.best, c.last);
        println!("  split balanced accuracy by epoch: {}", split.join(" "));
    }
    Ok(())
}

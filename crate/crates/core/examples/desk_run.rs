//! Desk-scale end-to-end run: synthetic corpus, both training phases and
//! held-out evaluation before and after verification training.
//!
//! `cargo run --release -p deepvox-core --example desk_run -- [seed]`

use std::time::Instant;

use deepvox::experiment::{prepare, run, Experiment};

fn main() -> deepvox::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let exp = Experiment::desk(seed);
    let data = prepare(&exp)?;
    println!(
        "{} training / {} held-out utterances, {} trials",
        data.train.len(),
        data.test.len(),
        data.trials.len()
    );
    let start = Instant::now();
    let result = run(&exp, &data, &mut |c| {
        eprintln!("{} epoch {} done", c.phase.as_str(), c.epoch);
        Ok(())
    })?;
    println!("trained in {:.0}s\n", start.elapsed().as_secs_f64());
    print!("{}", result.outcome.log.to_text());
    println!(
        "\n# after identification pretraining\n{}",
        result.pretrain_report.to_text()
    );
    println!("# after verification training\n{}", result.final_report.to_text());
    Ok(())
}

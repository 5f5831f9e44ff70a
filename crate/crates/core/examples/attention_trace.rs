//! Which fact each hop attends to, on generated "where is X" stories.
//!
//!     cargo run --release --example attention_trace

use tmemnn::cli::write_trace;
use tmemnn::corpus::synthetic_location_stories;
use tmemnn::model::Mode;
use tmemnn::train::{train_task, TaskData, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stories = synthetic_location_stories(1100, 11);
    let cfg = TrainConfig {
        epochs: 20,
        lr: 0.05,
        ..TrainConfig::default()
    };
    let data = TaskData::prepare(
        &stories[..1000],
        &stories[1000..],
        cfg.memory_size,
        cfg.seed,
    )?;
    let (net, history) = train_task(&data, &cfg, Mode::Point, |_| {})?;
    println!(
        "validation accuracy {:.3}\n",
        history.last().map_or(0.0, |m| m.val_acc)
    );

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for story in &stories[1000..1003] {
        write_trace(&mut out, &net, story, 1, 0)?;
        println!();
    }
    Ok(())
}

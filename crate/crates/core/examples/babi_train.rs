//! Trains one bAbI task and reports test accuracy with 1 and 10 samples plus
//! the learned degrees of freedom. Reads `$BABI_ROOT/en/qa<task>_*` when the
//! corpus is present, otherwise a generated single-supporting-fact task.
//!
//!     BABI_ROOT=~/tasks_1-20_v1-2 cargo run --release --example babi_train -- [task] [baseline|variational] [epochs] [lr]

use std::path::PathBuf;

use tmemnn::cli::evaluate_stories;
use tmemnn::corpus::{load_task, synthetic_location_stories, Split, Variant, DEFAULT_TASK_PATTERN};
use tmemnn::model::{Mode, EMBEDDINGS};
use tmemnn::train::{train_task, TaskData, TrainConfig, METRICS_HEADER};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let task: u32 = args.first().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let mode: Mode = args
        .get(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(Mode::Variational);
    let mut cfg = TrainConfig::default();
    if let Some(e) = args.get(2) {
        cfg.epochs = e.parse()?;
    }
    if let Some(lr) = args.get(3) {
        cfg.lr = lr.parse()?;
    }

    let (train, test) = match std::env::var_os("BABI_ROOT").map(PathBuf::from) {
        Some(root) => (
            load_task(
                &root,
                DEFAULT_TASK_PATTERN,
                task,
                Variant::EN_1K,
                Split::Train,
            )?,
            load_task(
                &root,
                DEFAULT_TASK_PATTERN,
                task,
                Variant::EN_1K,
                Split::Test,
            )?,
        ),
        None => {
            eprintln!("BABI_ROOT unset, using generated stories");
            let s = synthetic_location_stories(2000, task as u64);
            (s[..1000].to_vec(), s[1000..].to_vec())
        }
    };
    let data = TaskData::prepare(&train, &test, cfg.memory_size, cfg.seed)?;
    println!(
        "{} train / {} val / {} test, vocabulary {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.vocab.size()
    );

    eprintln!("{METRICS_HEADER}");
    let (net, _) = train_task(&data, &cfg, mode, |m| eprintln!("{}", m.tsv_line()))?;
    let (a1, a10) = evaluate_stories(&net, &data.test, cfg.seed)?;
    println!(
        "task {task} {}: 1 sample {a1:.1}%, 10 samples {a10:.1}%",
        mode.as_str()
    );
    for m in EMBEDDINGS {
        if let Some(nu) = net.nu(m) {
            println!("nu_{m} {nu:.3}");
        }
    }
    Ok(())
}

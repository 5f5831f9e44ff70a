//! Trains a network on generated "guess the number" dialogs (range 0..=10,
//! 1000 examples) and lets it play 100 games.
//!
//!     cargo run --release --example guess_the_number -- [baseline|variational] [epochs] [lr]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tmemnn::game::{
    evaluate, play_episode, train_game, write_metrics_block, write_transcript, GameConfig,
    NetStudent,
};
use tmemnn::model::Mode;
use tmemnn::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode: Mode = args
        .first()
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(Mode::Variational);
    let epochs = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(100);
    let lr = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(0.01);

    let game = GameConfig::default();
    let cfg = TrainConfig {
        epochs,
        lr,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (net, history) = train_game(&game, &cfg, mode, &mut rng, |m| {
        if m.epoch % 10 == 0 {
            eprintln!("{}", m.tsv_line());
        }
    })?;
    let last = history.last().expect("at least one epoch");
    println!(
        "final train loss {:.4}, validation accuracy {:.3}",
        last.train_loss, last.val_acc
    );

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for samples in [1, 10] {
        let mut student = NetStudent::new(&net, samples, ChaCha8Rng::seed_from_u64(11))?;
        let (metrics, _) = evaluate(&mut student, &game, 100, &mut ChaCha8Rng::seed_from_u64(12))?;
        write_metrics_block(
            &mut out,
            &format!("{} S={samples}", mode.as_str()),
            &metrics,
        )?;
    }
    let mut student = NetStudent::new(&net, 10, ChaCha8Rng::seed_from_u64(13))?;
    let dialog = play_episode(&mut student, &game, 7)?;
    write_transcript(&mut out, mode.as_str(), game.n_train, &dialog)?;
    Ok(())
}

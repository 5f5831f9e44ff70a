//! Saves a freshly initialized variational network, reads it back and checks
//! that predictions under the same noise seed are identical.
//!
//!     cargo run --release --example checkpoint

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tmemnn::corpus::{
    encode_story, max_sentence_len, synthetic_location_stories, EncodeConfig, Vocabulary,
};
use tmemnn::model::{MemN2N, Mode};
use tmemnn::train::{init_network, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stories = synthetic_location_stories(20, 2);
    let vocab = Vocabulary::build(&stories);
    let width = max_sentence_len(&stories);
    let cfg = TrainConfig::default();
    let net = init_network(
        vocab,
        width,
        Mode::Variational,
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(1),
    )?;

    let mut bytes = Vec::new();
    net.write_checkpoint(&mut bytes)?;
    let back = MemN2N::read_checkpoint(&mut bytes.as_slice())?;
    println!(
        "{} bytes, {} tensors, {} scalars",
        bytes.len(),
        back.params.len(),
        back.params.count_scalars()
    );

    let enc = encode_story(
        &stories[0],
        &net.vocab,
        EncodeConfig {
            memory_size: cfg.memory_size,
            sentence_len: width,
        },
    )?;
    let a = net.predict(&enc, 10, &mut ChaCha8Rng::seed_from_u64(5))?;
    let b = back.predict(&enc, 10, &mut ChaCha8Rng::seed_from_u64(5))?;
    println!("predictions identical: {}", a.probs == b.probs);
    Ok(())
}

//! Monte Carlo check of the samplers: Gamma moments, Student's-t variance and
//! the reparameterized escort draw used during training.
//!
//!     cargo run --release --example sampling -- [draws]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tmemnn::tmath::{reparam_sample, sample_gamma, sample_student_t, TDistParams};

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(200_000);
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    println!("gamma(shape, rate)\tmean\texpected\tvar\texpected");
    for (shape, rate) in [(0.5, 1.0), (2.0, 0.5), (10.0, 3.0)] {
        let xs = (0..n)
            .map(|_| sample_gamma(shape, rate, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let (m, v) = moments(&xs);
        println!(
            "({shape}, {rate})\t{m:.4}\t{:.4}\t{v:.4}\t{:.4}",
            shape / rate,
            shape / (rate * rate)
        );
    }

    println!("\nt(nu)\tvar\texpected");
    for nu in [3.0, 5.0, 10.0] {
        // One draw per call: a longer vector would share its Gamma mixing variable.
        let xs = (0..n)
            .map(|_| sample_student_t(nu, 1, &mut rng).map(|v| v[0]))
            .collect::<Result<Vec<_>, _>>()?;
        println!("{nu}\t{:.4}\t{:.4}", moments(&xs).1, nu / (nu - 2.0));
    }

    // The escort of t(mu, s, nu) has variance s whatever nu is.
    println!("\nescort(s, nu)\tmean\tvar\texpected");
    for (s, nu) in [(0.25, 2.0), (1.0, 5.0), (4.0, 50.0)] {
        let q = TDistParams::univariate(1.0, s, nu)?;
        let xs = (0..n)
            .map(|_| {
                sample_student_t(nu + 2.0, 1, &mut rng)
                    .and_then(|e| reparam_sample(&q, &e))
                    .map(|v| v[0])
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (m, v) = moments(&xs);
        println!("({s}, {nu})\t{m:.4}\t{v:.4}\t{s:.4}");
    }
    Ok(())
}

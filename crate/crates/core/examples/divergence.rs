//! Closed-form divergence of a Student's-t posterior from the standard prior,
//! next to the value obtained by integrating the definition numerically.
//!
//!     cargo run --release --example divergence

use tmemnn::tmath::{t_divergence_closed, t_divergence_numeric_1d, t_hyper, TDistParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("mu\tscale\tnu_q\tnu_p\tclosed\tnumeric");
    let cases = [
        (0.0, 1.0, 10.0, 10.0),
        (0.5, 2.0, 10.0, 10.0),
        (-1.5, 0.3, 4.0, 4.0),
        (1.0, 0.05, 100.0, 100.0),
        // Different degrees of freedom: the closed form and the integral part ways.
        (0.5, 2.0, 30.0, 10.0),
        (0.0, 1.0, 4.0, 100.0),
    ];
    for (mu, scale, nu_q, nu_p) in cases {
        let q = TDistParams::univariate(mu, scale, nu_q)?;
        let p = TDistParams::standard(1, nu_p)?;
        let closed = t_divergence_closed(&q, nu_p)?.total;
        let numeric = match t_divergence_numeric_1d(&q, &p, t_hyper(nu_q)) {
            Ok(v) => format!("{v:.6}"),
            Err(e) => format!("({e})"),
        };
        println!("{mu}\t{scale}\t{nu_q}\t{nu_p}\t{closed:.6}\t{numeric}");
    }

    // The training objective sums the closed form over every coordinate.
    let q = TDistParams::new(vec![0.1, -0.2, 0.0], vec![0.0025; 3], 100.0)?;
    let d = t_divergence_closed(&q, 100.0)?;
    println!(
        "\n3-coordinate posterior, sigma 0.05: total {:.4}, psi_p {:.4}",
        d.total, d.psi_p
    );
    Ok(())
}

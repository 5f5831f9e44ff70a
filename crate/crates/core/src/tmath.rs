//! Special functions and Student's-t machinery.
//!
//! Everything here works on plain `f64` slices. The differentiable versions
//! of the same formulas used during training live in [`crate::model`] and
//! are checked against these.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn check_positive(func: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(
            func,
            format!("expected a finite positive argument, got {x}"),
        ))
    }
}

/// `ln Γ(x)` for `x > 0` via the Lanczos approximation (g = 7, 9 terms).
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive("log_gamma", x)?;
    Ok(ln_gamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma_unchecked(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (z + 0.5) * t.ln() - t + acc.ln()
}

/// The digamma function `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive("digamma", x)?;
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Asymptotic expansion in Bernoulli numbers.
    let series = inv2
        * (1.0 / 12.0
            - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
    shift + x.ln() - 0.5 * inv - series
}

/// Tsallis deformed logarithm `(x^(1-t) - 1) / (1 - t)`, falling back to
/// `ln x` when `t` is within 1e-12 of one.
pub fn log_t(x: f64, t: f64) -> Result<f64> {
    check_positive("log_t", x)?;
    let one_minus_t = 1.0 - t;
    if one_minus_t.abs() < 1e-12 {
        Ok(x.ln())
    } else {
        Ok(((one_minus_t * x.ln()).exp() - 1.0) / one_minus_t)
    }
}

/// Draws from `Gamma(shape, rate)` (mean `shape / rate`) with the
/// Marsaglia–Tsang squeeze method. Shapes below one are boosted through
/// `Gamma(shape + 1) * U^(1/shape)`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    check_positive("sample_gamma", shape)?;
    check_positive("sample_gamma", rate)?;
    Ok(gamma_unit_scale(shape, rng) / rate)
}

fn gamma_unit_scale<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.random();
        return gamma_unit_scale(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x: f64 = rng.sample(StandardNormal);
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Zero-mean, unit-scale multivariate Student's-t draw: `z / sqrt(ξ)` with a
/// single `ξ ~ Gamma(dof/2, dof/2)` shared by all `dim` components.
pub fn sample_student_t<R: Rng + ?Sized>(dof: f64, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    fill_student_t(dof, &mut out, rng)?;
    Ok(out)
}

/// In-place variant of [`sample_student_t`].
pub fn fill_student_t<R: Rng + ?Sized>(dof: f64, out: &mut [f64], rng: &mut R) -> Result<()> {
    check_positive("sample_student_t", dof)?;
    let xi = sample_gamma(0.5 * dof, 0.5 * dof, rng)?;
    let inv_sqrt_xi = 1.0 / xi.sqrt();
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = z * inv_sqrt_xi;
    }
    Ok(())
}

/// Student's-t with diagonal scale. `scale_diag` holds the diagonal of Σ
/// (variance units), not standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct TDistParams {
    pub mean: Vec<f64>,
    pub scale_diag: Vec<f64>,
    pub dof: f64,
}

impl TDistParams {
    pub fn new(mean: Vec<f64>, scale_diag: Vec<f64>, dof: f64) -> Result<Self> {
        let params = TDistParams {
            mean,
            scale_diag,
            dof,
        };
        params.validate()?;
        Ok(params)
    }

    /// One-dimensional shorthand.
    pub fn univariate(mean: f64, scale: f64, dof: f64) -> Result<Self> {
        Self::new(vec![mean], vec![scale], dof)
    }

    /// Zero mean, identity scale: the prior placed on each embedding matrix.
    pub fn standard(dim: usize, dof: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim], dof)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.scale_diag.len() {
            return Err(Error::domain(
                "TDistParams",
                format!(
                    "mean has {} entries but scale_diag has {}",
                    self.mean.len(),
                    self.scale_diag.len()
                ),
            ));
        }
        check_positive("TDistParams", self.dof)?;
        if let Some(bad) = self
            .scale_diag
            .iter()
            .find(|s| !(s.is_finite() && **s > 0.0))
        {
            return Err(Error::domain(
                "TDistParams",
                format!("scale entry {bad} is not positive"),
            ));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::domain("TDistParams", "mean has a non-finite entry"));
        }
        Ok(())
    }
}

/// Log-density of a diagonal-scale Student's-t.
pub fn student_t_log_pdf(y: &[f64], params: &TDistParams) -> Result<f64> {
    params.validate()?;
    if y.len() != params.dim() {
        return Err(Error::domain(
            "student_t_log_pdf",
            format!(
                "point has {} entries, distribution has {}",
                y.len(),
                params.dim()
            ),
        ));
    }
    let d = params.dim() as f64;
    let nu = params.dof;
    let maha: f64 = y
        .iter()
        .zip(&params.mean)
        .zip(&params.scale_diag)
        .map(|((y, m), s)| (y - m) * (y - m) / s)
        .sum();
    let log_det: f64 = params.scale_diag.iter().map(|s| s.ln()).sum();
    Ok(ln_gamma_unchecked(0.5 * (nu + d))
        - ln_gamma_unchecked(0.5 * nu)
        - 0.5 * d * (nu * std::f64::consts::PI).ln()
        - 0.5 * log_det
        - 0.5 * (nu + d) * (maha / nu).ln_1p())
}

/// The divergence hyperparameter `t = 2 / (1 + ν) + 1`.
pub fn t_hyper(nu: f64) -> f64 {
    2.0 / (1.0 + nu) + 1.0
}

/// Escort distribution of a Student's-t posterior: same mean,
/// scale shrunk by `ν / (ν + 2)`, two extra degrees of freedom.
pub fn escort_params(posterior: &TDistParams) -> TDistParams {
    let nu = posterior.dof;
    let shrink = nu / (nu + 2.0);
    TDistParams {
        mean: posterior.mean.clone(),
        scale_diag: posterior.scale_diag.iter().map(|s| s * shrink).collect(),
        dof: nu + 2.0,
    }
}

/// Reparameterized escort sample `μ + sqrt(ν/(ν+2)) · σ ⊙ ε` where
/// `σ = sqrt(scale_diag)` and `ε ~ t(0, I, ν + 2)`.
pub fn reparam_sample(posterior: &TDistParams, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != posterior.dim() {
        return Err(Error::domain(
            "reparam_sample",
            format!(
                "noise has {} entries, posterior has {}",
                eps.len(),
                posterior.dim()
            ),
        ));
    }
    let factor = (posterior.dof / (posterior.dof + 2.0)).sqrt();
    Ok(posterior
        .mean
        .iter()
        .zip(&posterior.scale_diag)
        .zip(eps)
        .map(|((m, s), e)| m + factor * s.sqrt() * e)
        .collect())
}

/// Per-term values of the closed-form divergence against a standard prior.
#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceBreakdown {
    pub psi_q: Vec<f64>,
    pub psi_p: f64,
    pub t_value: f64,
    pub total: f64,
}

impl DivergenceBreakdown {
    /// Reassembles the total from the stored Ψ terms. Needs the posterior
    /// again because the second term depends on its moments.
    pub fn recompute_total(&self, posterior: &TDistParams, prior_nu: f64) -> f64 {
        let one_minus_t = 1.0 - self.t_value;
        let nu_q = posterior.dof;
        self.psi_q
            .iter()
            .zip(&posterior.mean)
            .zip(&posterior.scale_diag)
            .map(|((psi_q, m), s)| {
                psi_q / one_minus_t * (1.0 + 1.0 / nu_q)
                    - self.psi_p / one_minus_t * (1.0 + (s + m * m) / prior_nu)
            })
            .sum()
    }
}

/// `ln` of the univariate Student's-t normalizer `Γ((ν+1)/2) / (Γ(ν/2) sqrt(πν))`.
pub(crate) fn ln_t_normalizer(nu: f64) -> f64 {
    ln_gamma_unchecked(0.5 * (nu + 1.0))
        - ln_gamma_unchecked(0.5 * nu)
        - 0.5 * (std::f64::consts::PI * nu).ln()
}

/// Ψ_p of the zero-mean, unit-scale prior with `nu` degrees of freedom.
pub fn psi_prior(nu: f64) -> Result<f64> {
    check_positive("psi_prior", nu)?;
    Ok((-2.0 / (nu + 1.0) * ln_t_normalizer(nu)).exp())
}

/// Closed-form t-divergence between a diagonal Student's-t posterior and the
/// zero-mean, unit-scale prior with `prior_nu` degrees of freedom, summed over
/// all coordinates.
pub fn t_divergence_closed(posterior: &TDistParams, prior_nu: f64) -> Result<DivergenceBreakdown> {
    posterior.validate()?;
    let psi_p = psi_prior(prior_nu)?;
    let nu_q = posterior.dof;
    let t_value = t_hyper(nu_q);
    let exponent = -2.0 / (nu_q + 1.0);
    let ln_norm = ln_t_normalizer(nu_q);
    let psi_q: Vec<f64> = posterior
        .scale_diag
        .iter()
        .map(|s| (exponent * (ln_norm - 0.5 * s.ln())).exp())
        .collect();
    let mut out = DivergenceBreakdown {
        psi_q,
        psi_p,
        t_value,
        total: 0.0,
    };
    out.total = out.recompute_total(posterior, prior_nu);
    if !out.total.is_finite() {
        return Err(Error::domain(
            "t_divergence_closed",
            "divergence is not finite",
        ));
    }
    Ok(out)
}

/// Numerically integrated t-divergence `∫ q̃ (log_t q − log_t p)` between two
/// univariate Student's-t densities, with `q̃ = q^t / ∫ q^t`.
///
/// The real line is mapped onto `(-π/2, π/2)` through `h = μ_q + σ_q tan θ` and
/// integrated with composite Simpson at two resolutions; disagreement between
/// them is reported as non-convergence (this is how divergent integrals show
/// up). Intended as a reference, not for training.
pub fn t_divergence_numeric_1d(q: &TDistParams, p: &TDistParams, t: f64) -> Result<f64> {
    const INTERVALS: usize = 200_000;
    const EDGE: f64 = 1e-7;
    q.validate()?;
    p.validate()?;
    if q.dim() != 1 || p.dim() != 1 {
        return Err(Error::domain(
            "t_divergence_numeric_1d",
            "both densities must be univariate",
        ));
    }
    let one_minus_t = 1.0 - t;
    if one_minus_t.abs() < 1e-12 {
        return Err(Error::domain(
            "t_divergence_numeric_1d",
            "t = 1 is the KL limit, not supported",
        ));
    }
    let (mu, sigma) = (q.mean[0], q.scale_diag[0].sqrt());
    let lo = -std::f64::consts::FRAC_PI_2 + EDGE;
    let hi = std::f64::consts::FRAC_PI_2 - EDGE;

    // (q^t, q^t · (q^{1-t} - p^{1-t}) / (1 - t)), both times dh/dθ.
    let integrands = |theta: f64| -> (f64, f64) {
        let tan = theta.tan();
        let h = mu + sigma * tan;
        let jac = sigma * (1.0 + tan * tan);
        let lq = student_t_log_pdf(&[h], q).unwrap_or(f64::NEG_INFINITY);
        let lp = student_t_log_pdf(&[h], p).unwrap_or(f64::NEG_INFINITY);
        let qt = (t * lq).exp() * jac;
        let diff = ((one_minus_t * lq).exp() - (one_minus_t * lp).exp()) / one_minus_t;
        (qt, qt * diff)
    };

    let simpson = |n: usize| -> (f64, f64) {
        let step = (hi - lo) / n as f64;
        let (mut norm, mut body) = (0.0, 0.0);
        for i in 0..=n {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let (a, b) = integrands(lo + step * i as f64);
            norm += w * a;
            body += w * b;
        }
        (norm * step / 3.0, body * step / 3.0)
    };

    let (norm_fine, body_fine) = simpson(INTERVALS);
    let (norm_coarse, body_coarse) = simpson(INTERVALS / 2);
    let fine = body_fine / norm_fine;
    let coarse = body_coarse / norm_coarse;
    if !fine.is_finite() || !coarse.is_finite() {
        return Err(Error::NonConvergent("integrand is not finite".into()));
    }
    let gap = (fine - coarse).abs();
    if gap > 1e-7 * fine.abs().max(1.0) {
        return Err(Error::NonConvergent(format!(
            "refinement changed the value from {coarse} to {fine}"
        )));
    }
    Ok(fine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    /// ln Γ by downward recurrence from a Stirling series evaluated at x + n ≥ 30.
    fn stirling_log_gamma(x: f64) -> f64 {
        let mut z = x;
        let mut acc = 0.0;
        while z < 30.0 {
            acc -= z.ln();
            z += 1.0;
        }
        let inv = 1.0 / z;
        let inv2 = inv * inv;
        let series = inv
            * (1.0 / 12.0
                - inv2
                    * (1.0 / 360.0
                        - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 / 1188.0))));
        acc + (z - 0.5) * z.ln() - z + LN_SQRT_2PI + series
    }

    #[test]
    fn log_gamma_known_values() {
        assert!((log_gamma(5.0).unwrap() - 24f64.ln()).abs() < 1e-12);
        assert!((log_gamma(0.5).unwrap() - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-12);
        assert!((log_gamma(1.0).unwrap()).abs() < 1e-13);
        assert!((log_gamma(2.0).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn log_gamma_matches_stirling_recurrence() {
        // 30-digit reference: 13.4820367861383585926530059808
        let oracle = stirling_log_gamma(10.3);
        assert!((oracle - 13.482_036_786_138_358_6).abs() < 1e-12);
        assert!((log_gamma(10.3).unwrap() - oracle).abs() < 1e-10);
        for &x in &[1e-3, 0.37, 1.5, 7.25, 33.3, 250.0, 1e4] {
            let got = log_gamma(x).unwrap();
            assert!((got - stirling_log_gamma(x)).abs() < 1e-10, "x={x}: {got}");
        }
    }

    #[test]
    fn log_gamma_rejects_bad_input() {
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.5).is_err());
        assert!(log_gamma(f64::NAN).is_err());
        assert!(log_gamma(f64::INFINITY).is_err());
    }

    #[test]
    fn digamma_known_values() {
        assert!((digamma(1.0).unwrap() + EULER_GAMMA).abs() < 1e-10);
        assert!((digamma(2.0).unwrap() - (1.0 - EULER_GAMMA)).abs() < 1e-10);
        let h = 1e-6;
        let fd = (log_gamma(3.7 + h).unwrap() - log_gamma(3.7 - h).unwrap()) / (2.0 * h);
        assert!((digamma(3.7).unwrap() - fd).abs() < 1e-8);
        assert!(digamma(-2.0).is_err());
    }

    #[test]
    fn digamma_is_derivative_of_log_gamma() {
        let h = 1e-5;
        let mut x = 0.1;
        while x <= 100.0 {
            let fd = (ln_gamma_unchecked(x + h) - ln_gamma_unchecked(x - h)) / (2.0 * h);
            let got = digamma(x).unwrap();
            assert!((got - fd).abs() < 1e-6, "x={x}: {got} vs {fd}");
            x *= 1.37;
        }
    }

    #[test]
    fn log_t_cases() {
        for &t in &[0.3, 1.0, 1.7, 2.5] {
            assert_eq!(log_t(1.0, t).unwrap(), 0.0);
        }
        for &x in &[0.2, 1.5, 9.0] {
            assert!((log_t(x, 2.0).unwrap() - (1.0 - 1.0 / x)).abs() < 1e-14);
        }
        let e = std::f64::consts::E;
        assert!((log_t(e, 1.0001).unwrap() - 1.0).abs() < 1e-3);
        assert_eq!(log_t(e, 1.0).unwrap(), 1.0);
        assert!(log_t(0.0, 2.0).is_err());
    }

    #[test]
    fn gamma_sampler_rejects_bad_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_gamma(1.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn gamma_small_shape_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let mean: f64 = (0..n)
            .map(|_| sample_gamma(0.3, 2.0, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.15).abs() < 0.005, "{mean}");
    }

    #[test]
    fn student_t_sampler_shares_mixing_variable() {
        // With one ξ per vector, |x_i| / |x_j| is independent of ξ; the
        // product of coordinates is then heavier-tailed than independent draws.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = sample_student_t(4.0, 6, &mut rng).unwrap();
        assert_eq!(v.len(), 6);
        assert!(sample_student_t(-1.0, 2, &mut rng).is_err());
    }

    #[test]
    fn log_pdf_cases() {
        let cauchy = TDistParams::univariate(0.0, 1.0, 1.0).unwrap();
        assert!(
            (student_t_log_pdf(&[0.0], &cauchy).unwrap() + std::f64::consts::PI.ln()).abs() < 1e-12
        );
        let near_normal = TDistParams::univariate(0.0, 1.0, 1e6).unwrap();
        assert!((student_t_log_pdf(&[1.0], &near_normal).unwrap() + 1.418_938_5).abs() < 1e-4);
        assert!(student_t_log_pdf(&[0.0, 1.0], &cauchy).is_err());
        assert!(TDistParams::univariate(0.0, -1.0, 3.0).is_err());
        assert!(TDistParams::new(vec![0.0], vec![1.0, 1.0], 3.0).is_err());
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn log_pdf_normalizes() {
        let p = TDistParams::univariate(0.3, 2.0, 4.0).unwrap();
        let z = simpson(
            |y| student_t_log_pdf(&[y], &p).unwrap().exp(),
            -200.0,
            200.0,
            400_000,
        );
        assert!((z - 1.0).abs() < 1e-6, "{z}");
    }

    #[test]
    fn t_hyper_values() {
        assert_eq!(t_hyper(1.0), 2.0);
        assert_eq!(t_hyper(3.0), 1.5);
        assert!((t_hyper(1e12) - 1.0).abs() < 1e-11);
        assert!(t_hyper(5.0) < t_hyper(4.0));
    }

    #[test]
    fn escort_cases() {
        let q = TDistParams::univariate(0.4, 1.0, 2.0).unwrap();
        let e = escort_params(&q);
        assert_eq!(e.scale_diag, vec![0.5]);
        assert_eq!(e.dof, 4.0);
        assert_eq!(e.mean, q.mean);
        let wide = escort_params(&TDistParams::univariate(0.0, 3.0, 1e12).unwrap());
        assert!((wide.scale_diag[0] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn reparam_cases() {
        let q = TDistParams::new(vec![0.5, -1.0], vec![4.0, 0.25], 3.0).unwrap();
        assert_eq!(reparam_sample(&q, &[0.0, 0.0]).unwrap(), q.mean);
        let eps = [0.7, -1.3];
        let base = reparam_sample(&q, &eps).unwrap();
        let scaled = reparam_sample(&q, &[2.5 * eps[0], 2.5 * eps[1]]).unwrap();
        for i in 0..2 {
            let lhs = scaled[i] - q.mean[i];
            let rhs = 2.5 * (base[i] - q.mean[i]);
            assert!((lhs - rhs).abs() < 1e-12);
        }
        assert!(reparam_sample(&q, &[1.0]).is_err());
    }

    #[test]
    fn divergence_is_zero_when_posterior_equals_prior() {
        for &nu in &[1.0, 2.0, 10.0, 100.0] {
            let q = TDistParams::standard(5, nu).unwrap();
            let d = t_divergence_closed(&q, nu).unwrap();
            assert!(d.total.abs() < 1e-8, "nu={nu}: {}", d.total);
        }
    }

    #[test]
    fn divergence_breakdown_is_consistent() {
        let q = TDistParams::new(vec![0.1, -0.4, 2.0], vec![0.3, 1.2, 0.05], 6.5).unwrap();
        let d = t_divergence_closed(&q, 10.0).unwrap();
        assert_eq!(d.t_value, t_hyper(6.5));
        assert_eq!(d.psi_q.len(), 3);
        assert!((d.recompute_total(&q, 10.0) - d.total).abs() < 1e-12);
    }

    #[test]
    fn divergence_even_and_monotone_in_mean() {
        let at = |m: f64| {
            t_divergence_closed(&TDistParams::univariate(m, 0.7, 5.0).unwrap(), 10.0)
                .unwrap()
                .total
        };
        let grid = [0.0, 0.5, 1.0, 2.0];
        for w in grid.windows(2) {
            assert!(at(w[1]) >= at(w[0]));
        }
        for &m in &grid {
            assert!((at(m) - at(-m)).abs() < 1e-12);
        }
    }

    #[test]
    fn numeric_divergence_is_zero_for_identical_densities() {
        let q = TDistParams::univariate(0.3, 1.7, 6.0).unwrap();
        let d = t_divergence_numeric_1d(&q, &q, t_hyper(6.0)).unwrap();
        assert!(d.abs() < 1e-6, "{d}");
    }

    #[test]
    fn numeric_matches_closed_form_for_matching_dof() {
        for &(m, s, nu) in &[(0.7, 0.25, 4.0), (-1.2, 3.0, 1.5), (0.0, 0.1, 30.0)] {
            let q = TDistParams::univariate(m, s, nu).unwrap();
            let closed = t_divergence_closed(&q, nu).unwrap().total;
            let numeric =
                t_divergence_numeric_1d(&q, &TDistParams::standard(1, nu).unwrap(), t_hyper(nu))
                    .unwrap();
            assert!(
                ((closed - numeric) / numeric).abs() < 1e-6,
                "{closed} vs {numeric}"
            );
        }
    }

    #[test]
    fn numeric_reports_divergent_integrals() {
        // A light-tailed prior against a heavy escort: log_t p grows faster
        // than the escort decays.
        let q = TDistParams::univariate(0.7, 0.25, 4.0).unwrap();
        let p = TDistParams::standard(1, 100.0).unwrap();
        assert!(matches!(
            t_divergence_numeric_1d(&q, &p, t_hyper(4.0)),
            Err(Error::NonConvergent(_))
        ));
    }
}

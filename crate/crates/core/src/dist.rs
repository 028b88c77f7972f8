//! Random variate generation used by weight initialization, the synthetic
//! dataset generator, and the beta mix-weight distribution.
//!
//! Beta(α,α) is sampled through two Gamma(α,1) draws, `w = g1/(g1+g2)`,
//! with the gamma sampler following Marsaglia & Tsang's squeeze method
//! (shape ≥ 1) plus the `U^(1/α)` boost for shape < 1.

use rand::distributions::Open01;
use rand::Rng;

/// Standard normal draw via the Box-Muller transform.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.sample(Open01);
    let u2: f64 = rng.sample(Open01);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Gamma(shape, 1) draw. `shape` must be positive.
pub fn gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    assert!(shape > 0.0, "gamma shape must be positive, got {shape}");
    if shape < 1.0 {
        // Boost: Gamma(a) = Gamma(a+1) * U^(1/a)
        let u: f64 = rng.sample(Open01);
        return gamma_large(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    gamma_large(shape, rng)
}

// Marsaglia & Tsang (2000), valid for shape >= 1.
fn gamma_large<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.sample(Open01);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Beta(alpha, alpha) draw in `[0,1]` via the two-gamma construction.
pub fn beta_symmetric<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    assert!(alpha > 0.0, "beta alpha must be positive, got {alpha}");
    loop {
        let g1 = gamma(alpha, rng);
        let g2 = gamma(alpha, rng);
        let sum = g1 + g2;
        if sum > 0.0 {
            return g1 / sum;
        }
        // Both draws underflowed to zero; retry.
    }
}

/// Closed-form variance of Beta(α,α): αβ/((α+β)²(α+β+1)) = 1/(4(2α+1)).
pub fn beta_symmetric_variance(alpha: f64) -> f64 {
    1.0 / (4.0 * (2.0 * alpha + 1.0))
}

/// Fourth central moment of Beta(α,α), from the raw-moment recurrence
/// E[X^k] = Π_{i<k} (α+i)/(2α+i). Used to bound the sampling error of an
/// empirical variance estimate.
pub fn beta_symmetric_fourth_central_moment(alpha: f64) -> f64 {
    let raw = |k: usize| -> f64 {
        (0..k)
            .map(|i| (alpha + i as f64) / (2.0 * alpha + i as f64))
            .product()
    };
    let (m1, m2, m3, m4) = (raw(1), raw(2), raw(3), raw(4));
    // E[(X-m1)^4] expanded in raw moments; m1 = 1/2 by symmetry.
    m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1 * m1 * m1 * m1
}

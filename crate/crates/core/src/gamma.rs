//! Gamma function at real positive arguments.
//!
//! Lanczos approximation with g = 7 and nine coefficients; relative error is
//! below 2e-15 on (0, 171]. Above that Γ overflows and only [`ln_gamma`] is
//! meaningful.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn lanczos_sum(x: f64) -> f64 {
    // x = z - 1
    let mut acc = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    acc
}

/// Γ(x) for x > 0. Returns `inf` past the overflow threshold.
pub fn gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "gamma is only used at positive arguments");
    if x < 0.5 {
        // Small positive arguments: reflection keeps the Lanczos sum in its
        // accurate range.
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    if x > 171.7 {
        return f64::INFINITY;
    }
    // Integer arguments are common (β = 1, 2, ...); use the exact product.
    if x == x.trunc() && x <= 30.0 {
        let mut p = 1.0;
        let mut k = 2.0;
        while k < x {
            p *= k;
            k += 1.0;
        }
        return p;
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    // split the power so t^(z+1/2) does not overflow before e^(-t) is applied
    let half = t.powf(0.5 * (z + 0.5));
    (2.0 * PI).sqrt() * half * (half * (-t).exp()) * lanczos_sum(z)
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    if x < 20.0 {
        return gamma(x).ln();
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (z + 0.5) * t.ln() - t + lanczos_sum(z).ln()
}

/// 1/Γ(x) for x > 0, returning 0 where Γ overflows.
pub fn rgamma(x: f64) -> f64 {
    if x > 171.0 {
        (-ln_gamma(x)).exp()
    } else {
        1.0 / gamma(x)
    }
}

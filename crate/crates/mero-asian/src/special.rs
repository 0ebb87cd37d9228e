//! Scalar special functions used by the transform evaluators: complex
//! log-gamma, stable log-gamma differences for large arguments, and
//! hyperbolic helpers for the theta-process Laplace exponent.

use num_complex::Complex64;

use crate::error::{Error, Result};

const LN_2PI_HALF: f64 = 0.918_938_533_204_672_74; // ln(2*pi)/2

/// Lanczos coefficients, g = 607/128, 15 terms (Godfrey's set).
const LANCZOS_G: f64 = 4.742_187_5;
const LANCZOS: [f64; 15] = [
    0.999_999_999_999_997_1,
    57.156_235_665_862_92,
    -59.597_960_355_475_49,
    14.136_097_974_741_746,
    -0.491_913_816_097_620_2,
    3.399_464_998_481_188_9e-5,
    4.652_362_892_704_857_5e-5,
    -9.837_447_530_487_956e-5,
    1.580_887_032_249_125e-4,
    -2.102_644_417_241_048_8e-4,
    2.174_396_181_152_126_4e-4,
    -1.643_181_065_367_639e-4,
    8.441_822_398_385_274e-5,
    -2.619_083_840_158_141e-5,
    3.689_918_265_953_162e-6,
];

/// Tolerance used to flag arguments that sit on a gamma pole.
pub const GAMMA_POLE_TOL: f64 = 1e-12;

fn lanczos_log_gamma(z: Complex64) -> Complex64 {
    // valid for Re(z) >= 0.5
    let mut sum = Complex64::new(LANCZOS[0], 0.0);
    for (k, &c) in LANCZOS.iter().enumerate().skip(1) {
        sum += c / (z + (k as f64 - 1.0));
    }
    let t = z + (LANCZOS_G - 0.5);
    (z - 0.5) * t.ln() - t + LN_2PI_HALF + sum.ln()
}

/// ln(sin(pi z)), stable for large |Im z|. The imaginary part may differ from
/// the principal branch by a multiple of 2*pi*i, which is harmless wherever
/// logs are only ever exponentiated after summation.
fn log_sin_pi(z: Complex64) -> Complex64 {
    let y = z.im;
    if y.abs() < 20.0 {
        (Complex64::new(std::f64::consts::PI, 0.0) * z).sin().ln()
    } else if y > 0.0 {
        // sin(pi z) = -exp(-i pi z) (1 - exp(2 i pi z)) / (2 i)
        let w = (Complex64::new(0.0, 2.0 * std::f64::consts::PI) * z).exp();
        Complex64::new(0.0, -std::f64::consts::PI) * z + ln_1p_c(-w)
            - Complex64::new(std::f64::consts::LN_2, std::f64::consts::FRAC_PI_2)
    } else {
        log_sin_pi(z.conj()).conj()
    }
}

/// Distance from `z` to the nearest pole of the gamma function.
pub fn gamma_pole_distance(z: Complex64) -> f64 {
    if z.re > 0.5 {
        return f64::INFINITY;
    }
    let k = z.re.round();
    if k > 0.5 {
        return f64::INFINITY;
    }
    (z - k).norm()
}

/// Complex log-gamma, analytic on the plane cut along the negative real axis.
///
/// For arguments in the left half-plane the reflection formula is used; the
/// imaginary part is then branch-consistent only up to 2*pi*i jumps, which
/// cancels once a sum of logs is exponentiated.
pub fn log_gamma(z: Complex64) -> Complex64 {
    if z.re >= 0.5 {
        lanczos_log_gamma(z)
    } else {
        // Gamma(z) Gamma(1-z) = pi / sin(pi z)
        Complex64::new(std::f64::consts::PI.ln(), 0.0)
            - log_sin_pi(z)
            - lanczos_log_gamma(Complex64::new(1.0, 0.0) - z)
    }
}

/// Log-gamma with a pole guard; returns `Error::Pole` near 0, -1, -2, ...
pub fn log_gamma_checked(z: Complex64) -> Result<Complex64> {
    if gamma_pole_distance(z) < GAMMA_POLE_TOL {
        return Err(Error::Pole {
            at: z,
            what: "gamma-function pole".into(),
        });
    }
    Ok(log_gamma(z))
}

/// Real log-gamma for x > 0.
pub fn log_gamma_real(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    log_gamma(Complex64::new(x, 0.0)).re
}

/// Stirling correction S(z): lnGamma(z) = (z-1/2)ln z - z + ln(2 pi)/2 + S(z).
fn stirling_series(z: Complex64) -> Complex64 {
    // B_{2k} / (2k (2k-1) z^{2k-1}) up to k = 7; |z| >= 12 keeps the tail
    // below 1e-16.
    let w = 1.0 / (z * z);
    let c = [
        8.333_333_333_333_333e-2,   //  1/12
        -2.777_777_777_777_778e-3,  // -1/360
        7.936_507_936_507_937e-4,   //  1/1260
        -5.952_380_952_380_952e-4,  // -1/1680
        8.417_508_417_508_418e-4,   //  1/1188
        -1.917_526_917_526_917_5e-3, // -691/360360
        6.410_256_410_256_41e-3,    //  7/1092
    ];
    let mut s = Complex64::new(c[6], 0.0);
    for k in (0..6).rev() {
        s = s * w + c[k];
    }
    s / z
}

/// Complex ln(1 + w), accurate for small |w|.
pub fn ln_1p_c(w: Complex64) -> Complex64 {
    if w.norm_sqr() < 1e-8 {
        // w - w^2/2 + w^3/3 - w^4/4, tail < |w|^5
        w * (1.0 + w * (-0.5 + w * (1.0 / 3.0 + w * (-0.25))))
    } else {
        (Complex64::new(1.0, 0.0) + w).ln()
    }
}

/// lnGamma(x) - lnGamma(y), computed without the catastrophic cancellation of
/// subtracting two large log-gamma values when x and y are large and close.
pub fn log_gamma_diff(x: Complex64, y: Complex64) -> Complex64 {
    let m = x.re.min(y.re);
    let delta = x - y;
    if m >= 12.0 && delta.norm() <= 0.5 * y.norm() {
        // (x-1/2) ln(x/y) + delta (ln y - 1) + S(x) - S(y)
        (x - 0.5) * ln_1p_c(delta / y) + delta * (y.ln() - 1.0)
            + stirling_series(x)
            - stirling_series(y)
    } else {
        log_gamma(x) - log_gamma(y)
    }
}

/// Checked variant of [`log_gamma_diff`]; poles of the numerator or
/// denominator gamma are reported rather than propagated as non-finite values.
pub fn log_gamma_diff_checked(x: Complex64, y: Complex64) -> Result<Complex64> {
    if gamma_pole_distance(x) < GAMMA_POLE_TOL {
        return Err(Error::Pole {
            at: x,
            what: "gamma-function pole".into(),
        });
    }
    if gamma_pole_distance(y) < GAMMA_POLE_TOL {
        return Err(Error::Pole {
            at: y,
            what: "gamma-function pole (denominator)".into(),
        });
    }
    Ok(log_gamma_diff(x, y))
}

/// exp(w) - 1 for complex w, accurate near zero.
pub fn exp_m1_c(w: Complex64) -> Complex64 {
    if w.norm() > 0.25 {
        return w.exp() - 1.0;
    }
    // Taylor series; the k = 13 tail is below 1e-18 for |w| <= 0.25.
    let mut term = w;
    let mut acc = w;
    for k in 2..=12 {
        term = term * w / (k as f64);
        acc += term;
    }
    acc
}

/// coth(u) for Re(u) >= 0, away from the poles u = i pi k.
pub fn coth_c(u: Complex64) -> Complex64 {
    if u.re > 20.0 {
        1.0 + 2.0 * (-2.0 * u).exp()
    } else {
        1.0 + 2.0 / exp_m1_c(2.0 * u)
    }
}

/// coth(t) for real t > 0.
pub fn coth_r(t: f64) -> f64 {
    if t > 20.0 {
        1.0 + 2.0 * (-2.0 * t).exp()
    } else {
        1.0 + 2.0 / (2.0 * t).exp_m1()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_gamma_known_values() {
        assert_relative_eq!(log_gamma_real(1.0), 0.0, epsilon = 1e-14);
        assert_relative_eq!(log_gamma_real(2.0), 0.0, epsilon = 1e-14);
        assert_relative_eq!(
            log_gamma_real(0.5),
            0.572_364_942_924_700_1,
            epsilon = 1e-14
        );
        assert_relative_eq!(log_gamma_real(5.0), 24.0_f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(
            log_gamma_real(101.0),
            (1..=100).map(|k| (k as f64).ln()).sum::<f64>(),
            max_relative = 5e-15
        );
    }

    #[test]
    fn log_gamma_recurrence_complex() {
        // lnGamma(z+1) - lnGamma(z) = ln z (mod 2 pi i)
        let pts = [
            Complex64::new(0.7, 3.0),
            Complex64::new(2.5, -40.0),
            Complex64::new(15.0, 90.0),
            Complex64::new(1200.5, 55.0),
        ];
        for &z in &pts {
            let d = log_gamma(z + 1.0) - log_gamma(z) - z.ln();
            let wrapped = (d.im / (2.0 * std::f64::consts::PI)).round();
            assert!((d.re).abs() < 1e-11, "re residue {} at {}", d.re, z);
            assert!(
                (d.im - wrapped * 2.0 * std::f64::consts::PI).abs() < 1e-11,
                "im residue {} at {}",
                d.im,
                z
            );
        }
    }

    #[test]
    fn log_gamma_reflection_left_half_plane() {
        // |Gamma(z)| recovered through the reflection path must agree with
        // the product identity Gamma(z)Gamma(1-z) = pi/sin(pi z).
        let z = Complex64::new(-3.3, 2.1);
        let lhs = log_gamma(z) + log_gamma(1.0 - z);
        let rhs = Complex64::new(std::f64::consts::PI.ln(), 0.0)
            - (std::f64::consts::PI * z).sin().ln();
        assert!((lhs.re - rhs.re).abs() < 1e-12);
    }

    #[test]
    fn log_gamma_diff_matches_direct_small_args() {
        let x = Complex64::new(3.2, 1.0);
        let y = Complex64::new(2.9, -0.5);
        let d = log_gamma_diff(x, y);
        let direct = log_gamma(x) - log_gamma(y);
        assert!((d - direct).norm() < 1e-13);
    }

    #[test]
    fn log_gamma_diff_large_args_consistency() {
        // Against the recurrence: lnGamma(x+3) - lnGamma(x) = ln(x(x+1)(x+2)).
        for &re in &[1e4, 3.2e5] {
            let x = Complex64::new(re, 37.0);
            let d = log_gamma_diff(x + 3.0, x);
            let exact = (x * (x + 1.0) * (x + 2.0)).ln();
            assert!(
                (d - exact).norm() < 1e-12 * exact.norm(),
                "diff {} exact {}",
                d,
                exact
            );
        }
    }

    #[test]
    fn exp_m1_and_coth() {
        assert_relative_eq!(
            exp_m1_c(Complex64::new(1e-8, 0.0)).re,
            1e-8_f64.exp_m1(),
            epsilon = 1e-22
        );
        let u = Complex64::new(0.3, 0.2);
        let direct = (2.0 * u).exp();
        let expect = (direct + 1.0) / (direct - 1.0);
        assert!((coth_c(u) - expect).norm() < 1e-14);
        assert_relative_eq!(coth_r(1.5), 1.0 / 1.5_f64.tanh(), epsilon = 1e-15);
    }

    #[test]
    fn pole_guard_flags_nonpositive_integers() {
        assert!(log_gamma_checked(Complex64::new(0.0, 0.0)).is_err());
        assert!(log_gamma_checked(Complex64::new(-3.0, 1e-14)).is_err());
        assert!(log_gamma_checked(Complex64::new(-3.5, 0.0)).is_ok());
    }
}

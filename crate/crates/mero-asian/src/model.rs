//! Levy models: the theta process (closed-form Laplace exponent built from
//! coth terms) and its hyper-exponential truncation, plus drift/compensator
//! calibration and the exponential-mixture view of the Levy density.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{coth_c, coth_r};

/// Which Laplace-exponent family a value (root set, evaluator) refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Theta,
    HyperExp,
}

/// One term of the exponential-mixture Levy density: jump intensity pair
/// (a_n, rho_n) on the positive side and (a_hat_n, rho_hat_n) on the negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffTerm {
    pub a: f64,
    pub rho: f64,
    pub a_hat: f64,
    pub rho_hat: f64,
}

/// Common interface of the supported Laplace exponents psi(z) = ln E[exp(z X_1)].
///
/// `psi` evaluates the meromorphic continuation everywhere off the poles;
/// implementations must report `Error::Pole` within tolerance of a pole.
pub trait LaplaceExponent: Sync {
    fn psi(&self, z: Complex64) -> Result<Complex64>;
    fn dpsi(&self, z: Complex64) -> Result<Complex64>;
    fn psi_real(&self, x: f64) -> Result<f64>;
    fn dpsi_real(&self, x: f64) -> Result<f64>;

    /// Sum of the magnitudes of the terms accumulated in `psi(z)`.
    /// This is the cancellation scale that bounds the achievable absolute
    /// accuracy of a residual |psi(z) - q| in double precision.
    fn psi_scale(&self, z: Complex64) -> f64;

    /// n-th positive-side pole rho_n (1-indexed); `None` past the last one.
    fn pole_pos(&self, n: usize) -> Option<f64>;
    /// n-th negative-side pole magnitude rho_hat_n (the pole is at -rho_hat_n).
    fn pole_neg(&self, n: usize) -> Option<f64>;

    /// Number of solutions of psi(z) = q per side, when finite.
    fn max_roots(&self) -> Option<usize>;

    fn kind(&self) -> ModelKind;

    /// Hash of the parameter bits, used as a cache key component.
    fn fingerprint(&self) -> u64;
}

// ---------------------------------------------------------------------------
// theta building block: h_j(w) = pi (sqrt w)^(2j-1) coth(pi sqrt w)
// ---------------------------------------------------------------------------

/// Taylor coefficients of x coth x = sum c_k (x^2)^k.
const XCOTHX: [f64; 8] = [
    1.0,
    1.0 / 3.0,
    -1.0 / 45.0,
    2.0 / 945.0,
    -1.0 / 4725.0,
    2.0 / 93555.0,
    -1382.0 / 638512875.0,
    4.0 / 18243225.0,
];

const H_SERIES_CUTOFF: f64 = 0.01; // |w| below this: series in pi^2 w

fn h1_series(v: f64) -> f64 {
    // v = pi^2 w, |v| <= pi^2/100
    let mut s = XCOTHX[7];
    for k in (0..7).rev() {
        s = s * v + XCOTHX[k];
    }
    s
}

fn h1_series_d(v: f64) -> f64 {
    // d(x coth x)/dv
    let mut s = 7.0 * XCOTHX[7];
    for k in (1..7).rev() {
        s = s * v + (k as f64) * XCOTHX[k];
    }
    s
}

fn h1_series_c(v: Complex64) -> Complex64 {
    let mut s = Complex64::new(XCOTHX[7], 0.0);
    for k in (0..7).rev() {
        s = s * v + XCOTHX[k];
    }
    s
}

fn h1_series_d_c(v: Complex64) -> Complex64 {
    let mut s = Complex64::new(7.0 * XCOTHX[7], 0.0);
    for k in (1..7).rev() {
        s = s * v + (k as f64) * XCOTHX[k];
    }
    s
}

const PI: f64 = std::f64::consts::PI;
const PI2: f64 = PI * PI;

/// h1 = pi sqrt(w) coth(pi sqrt(w)) and its w-derivative at w = (alpha-x)/beta.
///
/// Near the poles w = -k^2 the cotangent argument is reduced mod pi through
/// the z-space pole distance, delta = pi (x - rho_k) / (beta (s + k)) with
/// rho_k = alpha + beta k^2: the subtraction x - rho_k is exact there, while
/// plain argument reduction of cot(pi s) loses ~|cot|^2 ulp near the poles,
/// which is exactly where the roots of psi(z) = q sit.
fn h1_real(x: f64, alpha: f64, beta: f64) -> (f64, f64) {
    let w = (alpha - x) / beta;
    if w.abs() <= H_SERIES_CUTOFF {
        let v = PI2 * w;
        (h1_series(v), PI2 * h1_series_d(v))
    } else if w > 0.0 {
        let t = PI * w.sqrt();
        let c = coth_r(t);
        let h = t * c;
        // d(u coth u)/dw = pi^2 (coth u + u - u coth^2 u) / (2u)
        let d = PI2 * (c + t - t * c * c) / (2.0 * t);
        (h, d)
    } else {
        let s = (-w).sqrt();
        let k = s.round();
        let (y, c);
        if k >= 1.0 {
            let dz = x - (alpha + beta * k * k);
            let delta = PI * dz / (beta * (s + k));
            y = k * PI + delta;
            c = delta.cos() / delta.sin();
        } else {
            y = PI * s;
            c = y.cos() / y.sin();
        }
        let h = y * c;
        let d = PI2 * (y + y * c * c - c) / (2.0 * y);
        (h, d)
    }
}

/// Complex counterpart of [`h1_real`] at w = (alpha - z)/beta (principal
/// square root), with the same pole-anchored reduction of coth.
fn h1_complex(z: Complex64, alpha: f64, beta: f64) -> (Complex64, Complex64) {
    let w = (alpha - z) / beta;
    if w.norm() <= H_SERIES_CUTOFF {
        let v = PI2 * w;
        (h1_series_c(v), PI2 * h1_series_d_c(v))
    } else {
        let sc = w.sqrt();
        let k = sc.im.round();
        let (u, c);
        if k.abs() >= 1.0 {
            let ik = Complex64::new(0.0, k);
            let dz = z - (alpha + beta * k * k);
            let delta = -PI * dz / (beta * (sc + ik));
            u = Complex64::new(0.0, k * PI) + delta;
            c = coth_c(delta);
        } else {
            u = PI * sc;
            c = coth_c(u);
        }
        let h = u * c;
        let d = PI2 * (c + u - u * c * c) / (2.0 * u);
        (h, d)
    }
}

fn h_j_real(x: f64, alpha: f64, beta: f64, j: u8) -> (f64, f64) {
    let (h1, d1) = h1_real(x, alpha, beta);
    if j == 1 {
        (h1, d1)
    } else {
        let w = (alpha - x) / beta;
        (w * h1, h1 + w * d1)
    }
}

fn h_j_complex(z: Complex64, alpha: f64, beta: f64, j: u8) -> (Complex64, Complex64) {
    let (h1, d1) = h1_complex(z, alpha, beta);
    if j == 1 {
        (h1, d1)
    } else {
        let w = (alpha - z) / beta;
        (w * h1, h1 + w * d1)
    }
}

/// Distance tolerance (in w-space) below which w is treated as the pole -k^2.
fn pole_tol_w(k: f64) -> f64 {
    2.0 * k * (1e-8 / PI)
}

/// Check that w stays clear of the poles of h_j (w = -k^2, k >= 1).
fn guard_w_complex(w: Complex64, z: Complex64) -> Result<()> {
    if w.re < -0.5 && w.im.abs() < 1.0 {
        let k = (-w.re).sqrt().round();
        if k >= 1.0 && (w + k * k).norm() < pole_tol_w(k) {
            return Err(Error::Pole {
                at: z,
                what: "Laplace exponent pole".into(),
            });
        }
    }
    Ok(())
}

fn guard_w_real(w: f64, x: f64) -> Result<()> {
    if w < -0.5 {
        let k = (-w).sqrt().round();
        if k >= 1.0 && (w + k * k).abs() < pole_tol_w(k) {
            return Err(Error::Pole {
                at: Complex64::new(x, 0.0),
                what: "Laplace exponent pole".into(),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ThetaModel
// ---------------------------------------------------------------------------

/// Theta process of order `j` in {1, 2}. `gamma` is always the calibrated
/// compensator (psi(0) = 0 by construction).
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaModel {
    pub j: u8,
    pub sigma: f64,
    pub mu: f64,
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl ThetaModel {
    /// Build a model with a fixed drift `mu`; the compensator gamma is
    /// calibrated so that psi(0) = 0.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        j: u8,
        sigma: f64,
        mu: f64,
        c1: f64,
        c2: f64,
        alpha1: f64,
        alpha2: f64,
        beta1: f64,
        beta2: f64,
    ) -> Result<Self> {
        if j != 1 && j != 2 {
            return Err(Error::Model(format!("j must be 1 or 2, got {j}")));
        }
        if sigma < 0.0 || c1 < 0.0 || c2 < 0.0 || alpha1 < 0.0 || alpha2 < 0.0 {
            return Err(Error::Model(
                "sigma, c1, c2, alpha1, alpha2 must be nonnegative".into(),
            ));
        }
        if beta1 <= 0.0 || beta2 <= 0.0 {
            return Err(Error::Model("beta1, beta2 must be positive".into()));
        }
        let mut m = ThetaModel {
            j,
            sigma,
            mu,
            gamma: 0.0,
            c1,
            c2,
            alpha1,
            alpha2,
            beta1,
            beta2,
        };
        m.gamma = calibrate_gamma(&m);
        Ok(m)
    }

    /// Build a risk-neutral model: gamma makes psi(0) = 0 and the drift is
    /// chosen so that psi(1) = r.
    #[allow(clippy::too_many_arguments)]
    pub fn risk_neutral(
        j: u8,
        sigma: f64,
        c1: f64,
        c2: f64,
        alpha1: f64,
        alpha2: f64,
        beta1: f64,
        beta2: f64,
        r: f64,
    ) -> Result<Self> {
        let mut m = Self::new(j, sigma, 0.0, c1, c2, alpha1, alpha2, beta1, beta2)?;
        m.mu = calibrate_mu(&m, r)?;
        Ok(m)
    }

    fn sign(&self) -> f64 {
        if self.j == 1 {
            -1.0
        } else {
            1.0
        }
    }

    /// Mixture coefficients (a_n, rho_n, a_hat_n, rho_hat_n) of the Levy
    /// density, n >= 1.
    pub fn coeffs(&self, n: usize) -> CoeffTerm {
        debug_assert!(n >= 1);
        let nf = n as f64;
        let n2j = nf.powi(2 * self.j as i32);
        let rho = self.alpha1 + self.beta1 * nf * nf;
        let rho_hat = self.alpha2 + self.beta2 * nf * nf;
        CoeffTerm {
            a: 2.0 * self.c1 * self.beta1 * n2j / rho,
            rho,
            a_hat: 2.0 * self.c2 * self.beta2 * n2j / rho_hat,
            rho_hat,
        }
    }

    /// psi''(0) = sigma^2 + 2 sum_n (a_n/rho_n^2 + a_hat_n/rho_hat_n^2),
    /// with the series tail evaluated by integral comparison.
    pub fn psi_second_derivative_at_zero(&self) -> f64 {
        self.sigma * self.sigma + 2.0 * self.coeff_variance_tail(0)
    }

    /// sum_{n > from} (a_n/rho_n^2 + a_hat_n/rho_hat_n^2).
    pub(crate) fn coeff_variance_tail(&self, from: usize) -> f64 {
        let p = 2 * self.j as i32;
        let pos = move |x: f64| {
            let rho = self.alpha1 + self.beta1 * x * x;
            2.0 * self.c1 * self.beta1 * x.powi(p) / (rho * rho * rho)
        };
        let neg = move |x: f64| {
            let rho = self.alpha2 + self.beta2 * x * x;
            2.0 * self.c2 * self.beta2 * x.powi(p) / (rho * rho * rho)
        };
        tail_sum_from(&pos, from + 1) + tail_sum_from(&neg, from + 1)
    }
}

/// Compensator gamma making psi(0) = 0. Independent of mu.
pub fn calibrate_gamma(m: &ThetaModel) -> f64 {
    let (h1v, _) = h_j_real(0.0, m.alpha1, m.beta1, m.j);
    let (h2v, _) = h_j_real(0.0, m.alpha2, m.beta2, m.j);
    -m.sign() * (m.c1 * h1v + m.c2 * h2v)
}

/// Drift mu solving psi(1) = r. psi(1) is affine in mu, so
/// mu = r - psi(1; mu = 0). Requires rho_1 > 1 so that psi(1) is the
/// exponential moment.
pub fn calibrate_mu(m: &ThetaModel, r: f64) -> Result<f64> {
    if m.alpha1 + m.beta1 <= 1.0 {
        return Err(Error::Pole {
            at: Complex64::new(1.0, 0.0),
            what: "rho_1 <= 1: psi(1) is not a finite exponential moment".into(),
        });
    }
    let mut m0 = m.clone();
    m0.mu = 0.0;
    let psi1 = m0.psi_real(1.0)?;
    Ok(r - psi1)
}

impl LaplaceExponent for ThetaModel {
    fn psi(&self, z: Complex64) -> Result<Complex64> {
        guard_w_complex((self.alpha1 - z) / self.beta1, z)?;
        guard_w_complex((self.alpha2 + z) / self.beta2, z)?;
        let (h1v, _) = h_j_complex(z, self.alpha1, self.beta1, self.j);
        let (h2v, _) = h_j_complex(-z, self.alpha2, self.beta2, self.j);
        Ok(0.5 * self.sigma * self.sigma * z * z
            + self.mu * z
            + self.gamma
            + self.sign() * (self.c1 * h1v + self.c2 * h2v))
    }

    fn dpsi(&self, z: Complex64) -> Result<Complex64> {
        guard_w_complex((self.alpha1 - z) / self.beta1, z)?;
        guard_w_complex((self.alpha2 + z) / self.beta2, z)?;
        let (_, d1) = h_j_complex(z, self.alpha1, self.beta1, self.j);
        let (_, d2) = h_j_complex(-z, self.alpha2, self.beta2, self.j);
        Ok(self.sigma * self.sigma * z
            + self.mu
            + self.sign() * (self.c1 * d1 * (-1.0 / self.beta1) + self.c2 * d2 * (1.0 / self.beta2)))
    }

    fn psi_real(&self, x: f64) -> Result<f64> {
        guard_w_real((self.alpha1 - x) / self.beta1, x)?;
        guard_w_real((self.alpha2 + x) / self.beta2, x)?;
        let (h1v, _) = h_j_real(x, self.alpha1, self.beta1, self.j);
        let (h2v, _) = h_j_real(-x, self.alpha2, self.beta2, self.j);
        Ok(0.5 * self.sigma * self.sigma * x * x
            + self.mu * x
            + self.gamma
            + self.sign() * (self.c1 * h1v + self.c2 * h2v))
    }

    fn dpsi_real(&self, x: f64) -> Result<f64> {
        guard_w_real((self.alpha1 - x) / self.beta1, x)?;
        guard_w_real((self.alpha2 + x) / self.beta2, x)?;
        let (_, d1) = h_j_real(x, self.alpha1, self.beta1, self.j);
        let (_, d2) = h_j_real(-x, self.alpha2, self.beta2, self.j);
        Ok(self.sigma * self.sigma * x
            + self.mu
            + self.sign() * (self.c1 * d1 * (-1.0 / self.beta1) + self.c2 * d2 * (1.0 / self.beta2)))
    }

    fn psi_scale(&self, z: Complex64) -> f64 {
        let h1v = if guard_w_complex((self.alpha1 - z) / self.beta1, z).is_ok() {
            h_j_complex(z, self.alpha1, self.beta1, self.j).0.norm()
        } else {
            f64::INFINITY
        };
        let h2v = if guard_w_complex((self.alpha2 + z) / self.beta2, z).is_ok() {
            h_j_complex(-z, self.alpha2, self.beta2, self.j).0.norm()
        } else {
            f64::INFINITY
        };
        0.5 * self.sigma * self.sigma * z.norm_sqr()
            + (self.mu * z).norm()
            + self.gamma.abs()
            + self.c1 * h1v
            + self.c2 * h2v
    }

    fn pole_pos(&self, n: usize) -> Option<f64> {
        (n >= 1).then(|| self.alpha1 + self.beta1 * (n as f64) * (n as f64))
    }

    fn pole_neg(&self, n: usize) -> Option<f64> {
        (n >= 1).then(|| self.alpha2 + self.beta2 * (n as f64) * (n as f64))
    }

    fn max_roots(&self) -> Option<usize> {
        None
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Theta
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        0x7468_6574_61_u64.hash(&mut h);
        for v in [
            self.j as f64,
            self.sigma,
            self.mu,
            self.gamma,
            self.c1,
            self.c2,
            self.alpha1,
            self.alpha2,
            self.beta1,
            self.beta2,
        ] {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

// ---------------------------------------------------------------------------
// MeromorphicCoeffs
// ---------------------------------------------------------------------------

/// Rule producing the n-th mixture term; lets other meromorphic families plug
/// into the same machinery.
pub trait CoeffRule: Sync + Send {
    fn term(&self, n: usize) -> CoeffTerm;
}

struct ThetaRule(ThetaModel);

impl CoeffRule for ThetaRule {
    fn term(&self, n: usize) -> CoeffTerm {
        self.0.coeffs(n)
    }
}

/// Exponential-mixture view of a meromorphic Levy measure, with the Gaussian
/// coefficient and the series-convention drift mu = psi'(0) = E[X_1].
#[derive(Clone)]
pub struct MeromorphicCoeffs {
    sigma: f64,
    mu: f64,
    rule: Arc<dyn CoeffRule>,
}

impl MeromorphicCoeffs {
    pub fn from_theta(model: &ThetaModel) -> Result<Self> {
        Ok(MeromorphicCoeffs {
            sigma: model.sigma,
            // In the fully compensated series representation the linear
            // coefficient equals psi'(0); the closed form's mu differs from it
            // by the mixture means.
            mu: model.dpsi_real(0.0)?,
            rule: Arc::new(ThetaRule(model.clone())),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Drift in the series convention (equals E[X_1]).
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn term(&self, n: usize) -> CoeffTerm {
        self.rule.term(n)
    }

    pub fn materialize(&self, n: usize) -> Vec<CoeffTerm> {
        (1..=n).map(|k| self.rule.term(k)).collect()
    }

    /// Numerical check that sum_n (a_n/rho_n^2 + a_hat_n/rho_hat_n^2) is
    /// finite: doubling partial sums must be Cauchy within `tol`.
    pub fn check_summability(&self, tol: f64, cap: usize) -> Result<f64> {
        let partial = |m: usize| -> f64 {
            let mut s = 0.0;
            for k in (1..=m).rev() {
                let t = self.rule.term(k);
                s += t.a / (t.rho * t.rho) + t.a_hat / (t.rho_hat * t.rho_hat);
            }
            s
        };
        let mut m = 1024.min(cap);
        let mut prev = partial(m);
        while m < cap {
            m = (2 * m).min(cap);
            let cur = partial(m);
            if (cur - prev).abs() <= tol * (1.0 + cur.abs()) {
                return Ok(cur);
            }
            prev = cur;
        }
        Err(Error::Convergence(format!(
            "coefficient series not Cauchy within {tol} at cap {cap}"
        )))
    }
}

/// Truncated Levy density: sum of the first `n` exponential-mixture terms.
pub fn levy_density(coeffs: &MeromorphicCoeffs, x: f64, n: usize) -> Result<f64> {
    if x == 0.0 {
        return Err(Error::Domain("Levy density is not defined at x = 0".into()));
    }
    if n < 1 {
        return Err(Error::Domain("need at least one mixture term".into()));
    }
    let mut s = 0.0;
    if x > 0.0 {
        for k in (1..=n).rev() {
            let t = coeffs.term(k);
            s += t.a * t.rho * (-t.rho * x).exp();
        }
    } else {
        for k in (1..=n).rev() {
            let t = coeffs.term(k);
            s += t.a_hat * t.rho_hat * (t.rho_hat * x).exp();
        }
    }
    Ok(s)
}

// ---------------------------------------------------------------------------
// HyperExpModel
// ---------------------------------------------------------------------------

/// Hyper-exponential truncation of a meromorphic model: the first `n` mixture
/// terms, a Gaussian coefficient inflated with the truncated-tail variance,
/// and a drift recalibrated to the risk-neutral condition.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperExpModel {
    pub n: usize,
    pub a: Vec<f64>,
    pub rho: Vec<f64>,
    pub a_hat: Vec<f64>,
    pub rho_hat: Vec<f64>,
    pub sigma_tilde: f64,
    pub mu_tilde: f64,
}

impl HyperExpModel {
    /// Truncate `model` at `n` terms, match psi''(0) through sigma_tilde and
    /// enforce psi_tilde(1) = r through mu_tilde.
    pub fn from_theta(model: &ThetaModel, r: f64, n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::Model("truncation order must be >= 1".into()));
        }
        if model.alpha1 + model.beta1 <= 1.0 {
            return Err(Error::Pole {
                at: Complex64::new(1.0, 0.0),
                what: "rho_1 <= 1: psi(1) is not a finite exponential moment".into(),
            });
        }
        let mut a = Vec::with_capacity(n);
        let mut rho = Vec::with_capacity(n);
        let mut a_hat = Vec::with_capacity(n);
        let mut rho_hat = Vec::with_capacity(n);
        for k in 1..=n {
            let t = model.coeffs(k);
            a.push(t.a);
            rho.push(t.rho);
            a_hat.push(t.a_hat);
            rho_hat.push(t.rho_hat);
        }
        let tail = model.coeff_variance_tail(n);
        if !tail.is_finite() || tail < 0.0 {
            return Err(Error::Convergence(
                "tail variance sum failed to converge".into(),
            ));
        }
        let sigma2 = model.sigma * model.sigma + 2.0 * tail;
        if sigma2 <= 0.0 {
            return Err(Error::Model(
                "sigma_tilde must be positive; the model has no jump tail or Gaussian part".into(),
            ));
        }
        let mut m = HyperExpModel {
            n,
            a,
            rho,
            a_hat,
            rho_hat,
            sigma_tilde: sigma2.sqrt(),
            mu_tilde: 0.0,
        };
        let psi1 = m.psi_real(1.0)?;
        m.mu_tilde = r - psi1;
        Ok(m)
    }

    /// psi_tilde''(0), available in closed form.
    pub fn psi_second_derivative_at_zero(&self) -> f64 {
        let mut s = 0.0;
        for k in (0..self.n).rev() {
            s += self.a[k] / (self.rho[k] * self.rho[k])
                + self.a_hat[k] / (self.rho_hat[k] * self.rho_hat[k]);
        }
        self.sigma_tilde * self.sigma_tilde + 2.0 * s
    }

    fn guard(&self, z: Complex64) -> Result<()> {
        if z.im.abs() < 1.0 {
            for &p in &self.rho {
                if (z - p).norm() < 1e-10 * p.max(1.0) {
                    return Err(Error::Pole {
                        at: z,
                        what: "hyper-exponential pole".into(),
                    });
                }
            }
            for &p in &self.rho_hat {
                if (z + p).norm() < 1e-10 * p.max(1.0) {
                    return Err(Error::Pole {
                        at: z,
                        what: "hyper-exponential pole".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

impl LaplaceExponent for HyperExpModel {
    fn psi(&self, z: Complex64) -> Result<Complex64> {
        self.guard(z)?;
        let z2 = z * z;
        let mut s = Complex64::new(0.0, 0.0);
        for k in (0..self.n).rev() {
            s += self.a[k] / (self.rho[k] * (self.rho[k] - z))
                + self.a_hat[k] / (self.rho_hat[k] * (self.rho_hat[k] + z));
        }
        Ok(0.5 * self.sigma_tilde * self.sigma_tilde * z2 + self.mu_tilde * z + z2 * s)
    }

    fn dpsi(&self, z: Complex64) -> Result<Complex64> {
        self.guard(z)?;
        let mut s = Complex64::new(0.0, 0.0);
        for k in (0..self.n).rev() {
            let rp = self.rho[k];
            let rm = self.rho_hat[k];
            let dp = rp - z;
            let dm = rm + z;
            s += self.a[k] * z * (2.0 * rp - z) / (rp * dp * dp)
                + self.a_hat[k] * z * (2.0 * rm + z) / (rm * dm * dm);
        }
        Ok(self.sigma_tilde * self.sigma_tilde * z + self.mu_tilde + s)
    }

    fn psi_real(&self, x: f64) -> Result<f64> {
        self.guard(Complex64::new(x, 0.0))?;
        let x2 = x * x;
        let mut s = 0.0;
        for k in (0..self.n).rev() {
            s += self.a[k] / (self.rho[k] * (self.rho[k] - x))
                + self.a_hat[k] / (self.rho_hat[k] * (self.rho_hat[k] + x));
        }
        Ok(0.5 * self.sigma_tilde * self.sigma_tilde * x2 + self.mu_tilde * x + x2 * s)
    }

    fn dpsi_real(&self, x: f64) -> Result<f64> {
        Ok(self.dpsi(Complex64::new(x, 0.0))?.re)
    }

    fn psi_scale(&self, z: Complex64) -> f64 {
        let z2 = z.norm_sqr();
        let mut s = 0.5 * self.sigma_tilde * self.sigma_tilde * z2 + (self.mu_tilde * z).norm();
        for k in 0..self.n {
            s += z2 / (self.rho[k] * (self.rho[k] - z).norm()) * self.a[k]
                + z2 / (self.rho_hat[k] * (self.rho_hat[k] + z).norm()) * self.a_hat[k];
        }
        s
    }

    fn pole_pos(&self, n: usize) -> Option<f64> {
        (n >= 1 && n <= self.n).then(|| self.rho[n - 1])
    }

    fn pole_neg(&self, n: usize) -> Option<f64> {
        (n >= 1 && n <= self.n).then(|| self.rho_hat[n - 1])
    }

    fn max_roots(&self) -> Option<usize> {
        Some(self.n + 1)
    }

    fn kind(&self) -> ModelKind {
        ModelKind::HyperExp
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        0x6879_7065_7265_7870_u64.hash(&mut h);
        self.n.hash(&mut h);
        self.sigma_tilde.to_bits().hash(&mut h);
        self.mu_tilde.to_bits().hash(&mut h);
        for v in self.a.iter().chain(&self.rho).chain(&self.a_hat).chain(&self.rho_hat) {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

// ---------------------------------------------------------------------------
// Series tails
// ---------------------------------------------------------------------------

const TAIL_EXPLICIT_TERMS: usize = 50_000;

/// sum_{n >= start} f(n) for a smooth, eventually monotone f with an
/// integrable tail: explicit terms plus the midpoint integral of the rest.
pub fn tail_sum_from(f: &dyn Fn(f64) -> f64, start: usize) -> f64 {
    let m = start + TAIL_EXPLICIT_TERMS;
    let mut s = 0.0;
    for n in (start..m).rev() {
        s += f(n as f64);
    }
    s + integral_to_infinity(f, m as f64 - 0.5)
}

/// integral_b^inf f(x) dx (b > 0) via Gauss-Legendre on x = b/(1-t), which
/// keeps the transformed integrand polynomial for algebraically decaying f.
pub fn integral_to_infinity(f: &dyn Fn(f64) -> f64, b: f64) -> f64 {
    debug_assert!(b > 0.0);
    let mut s = 0.0;
    for &(t, w) in gauss_legendre_64() {
        let one_m = 1.0 - t;
        let x = b / one_m;
        s += w * f(x) * b / (one_m * one_m);
    }
    s
}

fn gauss_legendre_64() -> &'static [(f64, f64); 64] {
    use std::sync::OnceLock;
    static NODES: OnceLock<[(f64, f64); 64]> = OnceLock::new();
    NODES.get_or_init(|| {
        // Nodes/weights on [-1, 1] by Newton iteration on P_64, then mapped
        // to [0, 1].
        let n = 64usize;
        let mut out = [(0.0, 0.0); 64];
        for i in 0..n {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..50 {
                let (p, dp) = legendre_pn(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre_pn(n, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            out[i] = (0.5 * (x + 1.0), 0.5 * w);
        }
        out
    })
}

fn legendre_pn(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

// ---------------------------------------------------------------------------
// Model config (JSON)
// ---------------------------------------------------------------------------

/// Drift specification in a model config. gamma never appears: it is always
/// calibrated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum MuMode {
    Riskneutral { r: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: String,
    pub j: u8,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub mu: MuMode,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Instantiate the theta model. Returns the model and, when the config
    /// pins the risk-neutral mode, its interest rate.
    pub fn build(&self) -> Result<(ThetaModel, Option<f64>)> {
        if self.family != "theta" {
            return Err(Error::Config(format!(
                "unsupported model family '{}'",
                self.family
            )));
        }
        match self.mu {
            MuMode::Riskneutral { r } => {
                let m = ThetaModel::risk_neutral(
                    self.j,
                    self.sigma,
                    self.c1,
                    self.c2,
                    self.alpha1,
                    self.alpha2,
                    self.beta1,
                    self.beta2,
                    r,
                )?;
                Ok((m, Some(r)))
            }
            MuMode::Fixed { value } => {
                let m = ThetaModel::new(
                    self.j,
                    self.sigma,
                    value,
                    self.c1,
                    self.c2,
                    self.alpha1,
                    self.alpha2,
                    self.beta1,
                    self.beta2,
                )?;
                Ok((m, None))
            }
        }
    }
}

/// The two parameter sets used throughout the test suite.
pub fn set_one(mu: MuMode) -> ModelConfig {
    ModelConfig {
        family: "theta".into(),
        j: 1,
        sigma: 0.1,
        c1: 0.15,
        c2: 0.3,
        alpha1: 1.5,
        alpha2: 1.5,
        beta1: 2.0,
        beta2: 2.0,
        mu,
    }
}

pub fn set_two(mu: MuMode) -> ModelConfig {
    ModelConfig {
        j: 2,
        sigma: 0.0,
        ..set_one(mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn set1_rn() -> ThetaModel {
        set_one(MuMode::Riskneutral { r: 0.03 }).build().unwrap().0
    }

    fn set2_rn() -> ThetaModel {
        set_two(MuMode::Riskneutral { r: 0.03 }).build().unwrap().0
    }

    #[test]
    fn coeff_values_set_one() {
        let m = set1_rn();
        let t1 = m.coeffs(1);
        assert_relative_eq!(t1.rho, 3.5, epsilon = 1e-15);
        assert_relative_eq!(t1.rho_hat, 3.5, epsilon = 1e-15);
        assert_relative_eq!(t1.a, 6.0 / 35.0, epsilon = 1e-15);
        let t2 = m.coeffs(2);
        assert_relative_eq!(t2.rho, 9.5, epsilon = 1e-15);
        assert_relative_eq!(t2.rho_hat, 9.5, epsilon = 1e-15);
    }

    #[test]
    fn calibration_fixed_points() {
        for m in [set1_rn(), set2_rn()] {
            assert!(m.psi_real(0.0).unwrap().abs() < 1e-14);
            assert!((m.psi_real(1.0).unwrap() - 0.03).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_independent_of_mu() {
        let a = ThetaModel::new(1, 0.1, 0.1, 0.15, 0.3, 1.5, 1.5, 2.0, 2.0).unwrap();
        let b = ThetaModel::new(1, 0.1, -2.7, 0.15, 0.3, 1.5, 1.5, 2.0, 2.0).unwrap();
        assert_eq!(a.gamma, b.gamma);
    }

    #[test]
    fn mu_calibration_is_affine_in_r() {
        let m = set1_rn();
        let d = 0.017;
        let mu1 = calibrate_mu(&m, 0.03).unwrap();
        let mu2 = calibrate_mu(&m, 0.03 + d).unwrap();
        assert_relative_eq!(mu2 - mu1, d, epsilon = 1e-13);
    }

    #[test]
    fn mu_calibration_bisection_oracle() {
        // independent scalar root-solve of psi(1; mu) = r over mu
        let target = 0.03;
        let base = set1_rn();
        let psi1 = |mu: f64| {
            let mut m = base.clone();
            m.mu = mu;
            m.psi_real(1.0).unwrap() - target
        };
        let (mut lo, mut hi) = (-10.0, 10.0);
        assert!(psi1(lo) < 0.0 && psi1(hi) > 0.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if psi1(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(base.mu, 0.5 * (lo + hi), epsilon = 1e-10);
    }

    #[test]
    fn pole_is_reported() {
        let m = set1_rn();
        assert!(matches!(
            m.psi_real(3.5),
            Err(Error::Pole { .. })
        ));
        assert!(m.psi_real(3.5 * (1.0 - 1e-6)).is_ok());
    }

    #[test]
    fn psi_conjugate_symmetry() {
        let m = set2_rn();
        for &(re, im) in &[(0.3, 7.0), (-0.9, 22.0), (2.1, 0.5)] {
            let z = Complex64::new(re, im);
            let a = m.psi(z).unwrap();
            let b = m.psi(z.conj()).unwrap();
            assert!((a.conj() - b).norm() < 1e-12 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn psi_branch_insensitive_in_sqrt() {
        // the coth building block is even in sqrt(w): u coth u == (-u) coth(-u)
        let w = Complex64::new(-2.3, 0.7);
        let u = PI * w.sqrt();
        let plus = u * coth_c(u);
        let minus = (-u) * ((2.0 * (-u)).exp() + 1.0) / ((2.0 * (-u)).exp() - 1.0);
        assert!((plus - minus).norm() < 1e-12);
    }

    #[test]
    fn psi_convex_on_real_strip() {
        for m in [set1_rn(), set2_rn()] {
            let h = 1e-3;
            let mut x = -3.3;
            while x < 3.3 {
                let dd = (m.psi_real(x + h).unwrap() - 2.0 * m.psi_real(x).unwrap()
                    + m.psi_real(x - h).unwrap())
                    / (h * h);
                assert!(dd > -1e-6, "second difference {dd} at {x}");
                x += 0.23;
            }
        }
    }

    #[test]
    fn dpsi_matches_finite_differences() {
        let m = set2_rn();
        for &x in &[-1.2, 0.0, 0.4, 2.9] {
            let h = 1e-6;
            let fd = (m.psi_real(x + h).unwrap() - m.psi_real(x - h).unwrap()) / (2.0 * h);
            let an = m.dpsi_real(x).unwrap();
            assert_relative_eq!(an, fd, epsilon = 1e-6, max_relative = 1e-7);
        }
        let z = Complex64::new(0.7, 11.0);
        let h = 1e-6;
        let fd = (m.psi(z + h).unwrap() - m.psi(z - h).unwrap()) / (2.0 * h);
        assert!((m.dpsi(z).unwrap() - fd).norm() < 1e-5);
    }

    #[test]
    fn levy_density_positive_and_decaying() {
        let m = set1_rn();
        let coeffs = MeromorphicCoeffs::from_theta(&m).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..40 {
            let x = 0.05 * k as f64;
            let p = levy_density(&coeffs, x, 2000).unwrap();
            assert!(p >= 0.0 && p <= prev);
            prev = p;
        }
        // truncation convergence at x = 1
        let lo = levy_density(&coeffs, 1.0, 10_000).unwrap();
        let hi = levy_density(&coeffs, 1.0, 100_000).unwrap();
        assert_relative_eq!(lo, hi, max_relative = 1e-10);
        assert!(levy_density(&coeffs, 0.0, 100).is_err());
    }

    #[test]
    fn summability_check_passes_for_theta() {
        for m in [set1_rn(), set2_rn()] {
            let coeffs = MeromorphicCoeffs::from_theta(&m).unwrap();
            let s = coeffs.check_summability(1e-6, 1 << 21).unwrap();
            assert!(s.is_finite() && s > 0.0);
        }
    }

    #[test]
    fn hyperexp_matches_variance_and_martingale() {
        let r = 0.03;
        for m in [set1_rn(), set2_rn()] {
            let h = HyperExpModel::from_theta(&m, r, 12).unwrap();
            assert!(h.sigma_tilde > 0.0);
            assert!((h.psi_real(1.0).unwrap() - r).abs() < 1e-12);
            assert!(h.psi_real(0.0).unwrap().abs() < 1e-15);

            // Richardson-extrapolated second central difference. The plain
            // 1e-4 step sits on the f64 roundoff floor eps*|terms|/h^2.
            let s = 1e-3;
            let f = |x: f64| m.psi_real(x).unwrap();
            let d2_h = (f(s) - 2.0 * f(0.0) + f(-s)) / (s * s);
            let d2_2h = (f(2.0 * s) - 2.0 * f(0.0) + f(-2.0 * s)) / (4.0 * s * s);
            let fd = (4.0 * d2_h - d2_2h) / 3.0;
            assert_relative_eq!(h.psi_second_derivative_at_zero(), fd, max_relative = 1e-8);
        }
    }

    #[test]
    fn hyperexp_converges_to_theta_psi() {
        let m = set1_rn();
        let h = HyperExpModel::from_theta(&m, 0.03, 80).unwrap();
        let z = Complex64::new(0.5, 0.0);
        let d = (h.psi(z).unwrap() - m.psi(z).unwrap()).norm();
        assert!(d < 1e-4, "psi_tilde(0.5) off by {d}");
    }

    #[test]
    fn config_round_trip() {
        let cfg = set_one(MuMode::Riskneutral { r: 0.03 });
        let text = cfg.to_json();
        let back = ModelConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
        let (m1, r1) = cfg.build().unwrap();
        let (m2, r2) = back.build().unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);

        let fixed = set_two(MuMode::Fixed { value: 0.1 });
        let (m, r) = ModelConfig::from_json(&fixed.to_json()).unwrap().build().unwrap();
        assert_eq!(m.mu, 0.1);
        assert!(r.is_none());
    }

    #[test]
    fn config_rejects_unknown_family() {
        let mut cfg = set_one(MuMode::Fixed { value: 0.0 });
        cfg.family = "beta".into();
        assert!(matches!(cfg.build(), Err(Error::Config(_))));
    }
}

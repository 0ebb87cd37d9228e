//! Mellin transforms of exponential functionals: finite/infinite products of
//! gamma-function ratios over interlaced sequences, the truncated transform
//! with its moment-matched beta-second-kind correction, and the exact
//! hyper-exponential transform.
//!
//! Every product is accumulated as a sum of log-gamma differences and only
//! exponentiated once, so truncation orders into the hundreds and |Im s| of
//! order 100 stay far from overflow.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{HyperExpModel, LaplaceExponent};
use crate::roots::RootSet;
use crate::special::{log_gamma_checked, log_gamma_diff_checked, log_gamma_real};

// ---------------------------------------------------------------------------
// interlaced beta products
// ---------------------------------------------------------------------------

/// A pair of interlaced sequences 0 < alpha_1 < beta_1 < alpha_2 < ...
#[derive(Debug, Clone)]
pub struct InterlacedPair {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl InterlacedPair {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.len() != beta.len() {
            return Err(Error::Domain(
                "interlaced pair needs equal, nonzero lengths".into(),
            ));
        }
        let mut prev = 0.0;
        for (i, (&a, &b)) in alpha.iter().zip(&beta).enumerate() {
            if !(a > prev && b > a) {
                return Err(Error::Domain(format!(
                    "interlacing violated at index {}: ... {prev} < {a} < {b} fails",
                    i + 1
                )));
            }
            prev = b;
        }
        Ok(InterlacedPair { alpha, beta })
    }

    /// Rule-generated pair, materialized to `n` terms.
    pub fn from_rule(n: usize, rule: impl Fn(usize) -> (f64, f64)) -> Result<Self> {
        let (alpha, beta) = (1..=n).map(rule).unzip();
        Self::new(alpha, beta)
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha[n - 1]
    }

    pub fn beta(&self, n: usize) -> f64 {
        self.beta[n - 1]
    }
}

/// Partial product of the Mellin transform of an infinite beta-variable
/// product: prod_{k<=n} Gamma(beta_k) Gamma(alpha_k+s-1) /
/// (Gamma(alpha_k) Gamma(beta_k+s-1)) * (beta_k/alpha_k)^(s-1).
pub fn beta_product_mellin(pair: &InterlacedPair, s: Complex64, n: usize) -> Result<Complex64> {
    if n > pair.len() {
        return Err(Error::Domain(format!(
            "requested {n} terms, pair holds {}",
            pair.len()
        )));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    let sm1 = s - 1.0;
    for k in 1..=n {
        let a = pair.alpha(k);
        let b = pair.beta(k);
        acc += log_gamma_diff_checked(Complex64::new(b, 0.0), Complex64::new(a, 0.0))?;
        acc += log_gamma_diff_checked(a + sm1, b + sm1)?;
        acc += sm1 * (b / a).ln();
    }
    Ok(acc.exp())
}

/// Partial product of phi(s) = prod (1 + (s-1)/alpha_k) / (1 + (s-1)/beta_k),
/// the factor in M(s+1) = phi(s) M(s).
pub fn phi(pair: &InterlacedPair, s: Complex64, n: usize) -> Result<Complex64> {
    if n > pair.len() {
        return Err(Error::Domain(format!(
            "requested {n} terms, pair holds {}",
            pair.len()
        )));
    }
    let sm1 = s - 1.0;
    let mut acc = Complex64::new(1.0, 0.0);
    for k in 1..=n {
        let denom = 1.0 + sm1 / pair.beta(k);
        if denom.norm() < 1e-14 {
            return Err(Error::Pole {
                at: s,
                what: format!("phi pole at s = 1 - beta_{k}"),
            });
        }
        acc *= (1.0 + sm1 / pair.alpha(k)) / denom;
    }
    Ok(acc)
}

/// f_a(z) = ln( Gamma(a+z) / (Gamma(z) z^a) ), the completely monotone
/// building block of the product tail bounds.
pub fn f_ratio_log(a: f64, z: f64) -> f64 {
    log_gamma_real(a + z) - log_gamma_real(z) - a * z.ln()
}

/// |f_{v-1}(alpha_{n_cut+1})|: bound on |log of the omitted product tail| on
/// the vertical line Re s = v, after keeping `n_cut` factors.
pub fn log_mellin_tail_bound(pair: &InterlacedPair, n_cut: usize, v: f64) -> Result<f64> {
    if n_cut + 1 > pair.len() {
        return Err(Error::Domain(format!(
            "tail bound needs alpha_{}, pair holds {}",
            n_cut + 1,
            pair.len()
        )));
    }
    let a_next = pair.alpha(n_cut + 1);
    if v <= 1.0 - a_next {
        return Err(Error::Domain(format!(
            "tail bound requires v > 1 - alpha_{} = {}",
            n_cut + 1,
            1.0 - a_next
        )));
    }
    Ok(f_ratio_log(v - 1.0, a_next).abs())
}

// ---------------------------------------------------------------------------
// Mellin transform of the exponential functional
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MellinKind {
    Truncated,
    Corrected,
    HyperExp,
}

/// Evaluator of M(s, q) = E[I_q^(s-1)] for a fixed q: the truncated
/// gamma-product transform, optionally corrected by a beta variable of the
/// second kind matching the first two moments of the omitted tail, or the
/// exact transform of a hyper-exponential model.
#[derive(Debug, Clone)]
pub struct MellinEval {
    q: Complex64,
    n: usize,
    kind: MellinKind,
    zeta: Vec<Complex64>,
    zeta_hat: Vec<Complex64>,
    rho: Vec<f64>,
    rho_hat: Vec<f64>,
    /// ln b_N for the truncated kinds; ln(sigma_tilde^2 / 2) for hyper-exp.
    log_b: Complex64,
    /// Log of the product part at s = 1; the normalizing constant is
    /// exp(-log_norm).
    log_norm: Complex64,
    /// Beta-second-kind parameters (a, b) of the corrected kind.
    corr: Option<(Complex64, Complex64)>,
}

impl MellinEval {
    /// Truncated transform M_N: the first `n` root/pole pairs with the tail
    /// of the infinite product replaced by 1.
    pub fn truncated(
        psi: &dyn LaplaceExponent,
        roots: &RootSet,
        q: Complex64,
        n: usize,
    ) -> Result<Self> {
        if roots.count() < n {
            return Err(Error::Domain(format!(
                "root set holds {} roots per side, need {n}",
                roots.count()
            )));
        }
        if (roots.q - q).norm() > 1e-12 * q.norm().max(1.0) {
            return Err(Error::Domain("root set solved for a different q".into()));
        }
        let zeta: Vec<_> = roots.zeta[..n].to_vec();
        let zeta_hat: Vec<_> = roots.zeta_hat[..n].to_vec();
        let rho: Vec<_> = (1..=n).map(|k| psi.pole_pos(k).unwrap()).collect();
        let rho_hat: Vec<_> = (1..=n).map(|k| psi.pole_neg(k).unwrap()).collect();

        // b_N = (1 + rho_hat_N)/q * prod zeta_k zeta_hat_k / (rho_k rho_hat_k)
        let mut log_b = Complex64::new((1.0 + rho_hat[n - 1]).ln(), 0.0) - q.ln();
        for k in 0..n {
            log_b += zeta[k].ln() + zeta_hat[k].ln()
                - Complex64::new(rho[k].ln() + rho_hat[k].ln(), 0.0);
        }
        let mut eval = MellinEval {
            q,
            n,
            kind: MellinKind::Truncated,
            zeta,
            zeta_hat,
            rho,
            rho_hat,
            log_b,
            log_norm: Complex64::new(0.0, 0.0),
            corr: None,
        };
        eval.log_norm = eval.log_product(Complex64::new(1.0, 0.0))?;
        Ok(eval)
    }

    /// Truncated transform with the beta-second-kind tail correction; the
    /// correction parameters come from the exact tail moments m_1, m_2.
    pub fn corrected(
        psi: &dyn LaplaceExponent,
        roots: &RootSet,
        q: Complex64,
        n: usize,
    ) -> Result<Self> {
        let mut eval = Self::truncated(psi, roots, q, n)?;
        let (m1, m2) = eval.tail_moments(psi)?;
        let (a, b) = correction_params(m1, m2)?;
        eval.kind = MellinKind::Corrected;
        eval.corr = Some((a, b));
        Ok(eval)
    }

    /// Exact transform of a hyper-exponential model; `roots` must hold the
    /// full n+1 solutions per side of psi_tilde(z) = q.
    pub fn hyperexp(model: &HyperExpModel, roots: &RootSet, q: Complex64) -> Result<Self> {
        if model.sigma_tilde <= 0.0 {
            return Err(Error::Model(
                "hyper-exponential transform needs sigma_tilde > 0".into(),
            ));
        }
        let n = model.n;
        if roots.count() < n + 1 {
            return Err(Error::Domain(format!(
                "need all {} roots per side, got {}",
                n + 1,
                roots.count()
            )));
        }
        if (roots.q - q).norm() > 1e-12 * q.norm().max(1.0) {
            return Err(Error::Domain("root set solved for a different q".into()));
        }
        let mut eval = MellinEval {
            q,
            n,
            kind: MellinKind::HyperExp,
            zeta: roots.zeta[..n + 1].to_vec(),
            zeta_hat: roots.zeta_hat[..n + 1].to_vec(),
            rho: model.rho.clone(),
            rho_hat: model.rho_hat.clone(),
            log_b: Complex64::new((0.5 * model.sigma_tilde * model.sigma_tilde).ln(), 0.0),
            log_norm: Complex64::new(0.0, 0.0),
            corr: None,
        };
        eval.log_norm = eval.log_product(Complex64::new(1.0, 0.0))?;
        Ok(eval)
    }

    /// Log of the gamma-product part (without normalization or the b^(s-1)
    /// prefactor).
    fn log_product(&self, s: Complex64) -> Result<Complex64> {
        let mut acc = Complex64::new(0.0, 0.0);
        match self.kind {
            MellinKind::Truncated | MellinKind::Corrected => {
                // prod Gamma(rho_hat_{k-1}+s)/Gamma(zeta_hat_k+s)
                //    * Gamma(zeta_k+1-s)/Gamma(rho_k+1-s), rho_hat_0 = 0
                for k in 0..self.n {
                    let prev_pole = if k == 0 { 0.0 } else { self.rho_hat[k - 1] };
                    acc += log_gamma_diff_checked(prev_pole + s, self.zeta_hat[k] + s)?;
                    acc += log_gamma_diff_checked(
                        self.zeta[k] + 1.0 - s,
                        Complex64::new(self.rho[k] + 1.0, 0.0) - s,
                    )?;
                }
            }
            MellinKind::HyperExp => {
                // Gamma(s) prod_{j<=N} Gamma(rho_hat_j+s)/Gamma(zeta_hat_j+s)
                //   / Gamma(zeta_hat_{N+1}+s)
                // * Gamma(1+zeta_1-s) prod_{j<=N} Gamma(1+zeta_{j+1}-s)/Gamma(1+rho_j-s)
                acc += log_gamma_checked(s)?;
                for j in 0..self.n {
                    acc += log_gamma_diff_checked(self.rho_hat[j] + s, self.zeta_hat[j] + s)?;
                    acc += log_gamma_diff_checked(
                        self.zeta[j + 1] + 1.0 - s,
                        Complex64::new(self.rho[j] + 1.0, 0.0) - s,
                    )?;
                }
                acc -= log_gamma_checked(self.zeta_hat[self.n] + s)?;
                acc += log_gamma_checked(self.zeta[0] + 1.0 - s)?;
            }
        }
        Ok(acc)
    }

    /// Evaluate M(s, q).
    pub fn eval(&self, s: Complex64) -> Result<Complex64> {
        let prefactor = match self.kind {
            MellinKind::HyperExp => (1.0 - s) * self.log_b,
            _ => (s - 1.0) * self.log_b,
        };
        let mut log = prefactor + self.log_product(s)? - self.log_norm;
        if let Some((a, b)) = self.corr {
            log += log_gamma_diff_checked(a + s - 1.0, a)?;
            log += log_gamma_diff_checked(b + 1.0 - s, b)?;
        }
        Ok(log.exp())
    }

    /// Exact moments m_k = E[(tail remainder)^k], k = 1, 2, of the omitted
    /// product tail, via the functional equation
    /// M(k+1) = k! prod_{j<=k} (q - psi(j))^(-1).
    ///
    /// When psi(j) = q or psi hits a pole at an integer j, the 0/0 or
    /// inf/inf pairing against the matching pole/zero of M_N is resolved by
    /// a symmetric evaluation at j +- eps.
    pub fn tail_moments(&self, psi: &dyn LaplaceExponent) -> Result<(Complex64, Complex64)> {
        let m1 = self.remainder_moment(psi, 1)?;
        let m2 = self.remainder_moment(psi, 2)?;
        Ok((m1, m2))
    }

    fn remainder_moment(&self, psi: &dyn LaplaceExponent, k: usize) -> Result<Complex64> {
        let direct = (|| -> Result<Complex64> {
            let mut acc = Complex64::new(1.0, 0.0);
            for j in 1..=k {
                let pj = psi.psi(Complex64::new(j as f64, 0.0))?;
                let d = self.q - pj;
                if d.norm() < 1e-8 * self.q.norm().max(1.0) {
                    return Err(Error::Singular(format!("psi({j}) = q")));
                }
                acc *= (j as f64) / d;
            }
            let mn = self.eval_truncated_part(Complex64::new(k as f64 + 1.0, 0.0))?;
            Ok(acc / mn)
        })();
        match direct {
            Ok(v) => Ok(v),
            Err(Error::Singular(_)) | Err(Error::Pole { .. }) => {
                let eps = 1e-6;
                let plus = self.remainder_moment_shifted(psi, k, eps)?;
                let minus = self.remainder_moment_shifted(psi, k, -eps)?;
                let lim = 0.5 * (plus + minus);
                if lim.re.is_finite() && lim.im.is_finite() {
                    Ok(lim)
                } else {
                    Err(Error::Singular(format!("limit evaluation of m_{k} failed")))
                }
            }
            Err(e) => Err(e),
        }
    }

    fn remainder_moment_shifted(
        &self,
        psi: &dyn LaplaceExponent,
        k: usize,
        eps: f64,
    ) -> Result<Complex64> {
        let mut acc = Complex64::new(1.0, 0.0);
        for j in 1..=k {
            let x = j as f64 + eps;
            let pj = psi.psi(Complex64::new(x, 0.0))?;
            acc *= x / (self.q - pj);
        }
        let mn = self.eval_truncated_part(Complex64::new(k as f64 + 1.0 + eps, 0.0))?;
        Ok(acc / mn)
    }

    /// M_N without any correction factor (used while building the corrected
    /// kind and by the moment computation).
    fn eval_truncated_part(&self, s: Complex64) -> Result<Complex64> {
        let log = (s - 1.0) * self.log_b + self.log_product(s)? - self.log_norm;
        Ok(log.exp())
    }

    pub fn kind(&self) -> MellinKind {
        self.kind
    }

    pub fn q(&self) -> Complex64 {
        self.q
    }

    pub fn truncation(&self) -> usize {
        self.n
    }

    /// ln a_N (or ln a(q) for the hyper-exp kind): the log-normalizer that
    /// pins M(1) = 1.
    pub fn log_a(&self) -> Complex64 {
        -self.log_norm
    }

    /// ln b_N; ln(sigma_tilde^2/2) for the hyper-exp kind.
    pub fn log_b(&self) -> Complex64 {
        self.log_b
    }

    pub fn correction(&self) -> Option<(Complex64, Complex64)> {
        self.corr
    }

    /// Smallest positive root, which bounds the analyticity strip
    /// 0 < Re s < 1 + zeta_1.
    pub fn zeta1(&self) -> Complex64 {
        self.zeta[0]
    }
}

/// Parameters (a, b) of the beta variable of the second kind with mean m1 and
/// second moment m2.
pub fn correction_params(m1: Complex64, m2: Complex64) -> Result<(Complex64, Complex64)> {
    let var = m2 - m1 * m1;
    let scale = m1.norm_sqr() + m2.norm();
    if var.norm() <= 1e-13 * scale.max(1e-300) || (var.im.abs() < 1e-13 * scale && var.re <= 0.0) {
        return Err(Error::Degenerate(format!(
            "tail variance m2 - m1^2 = {var} is not positive"
        )));
    }
    let ratio = (m1 + m2) / var;
    Ok((m1 * ratio, 1.0 + ratio))
}

/// Free-function form of the tail-moment computation.
pub fn tail_moments(
    psi: &dyn LaplaceExponent,
    roots: &RootSet,
    q: Complex64,
    n: usize,
) -> Result<(Complex64, Complex64)> {
    MellinEval::truncated(psi, roots, q, n)?.tail_moments(psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{set_one, set_two, HyperExpModel, MuMode, ThetaModel};
    use crate::roots::{solve_real, SolveConfig};
    use approx::assert_relative_eq;

    fn set1() -> ThetaModel {
        set_one(MuMode::Riskneutral { r: 0.03 }).build().unwrap().0
    }

    fn half_integer_pair(n: usize) -> InterlacedPair {
        InterlacedPair::from_rule(n, |k| (k as f64 - 0.5, k as f64)).unwrap()
    }

    #[test]
    fn interlacing_is_validated() {
        assert!(InterlacedPair::new(vec![1.0, 2.0], vec![1.5, 1.8]).is_err());
        assert!(InterlacedPair::new(vec![1.0, 2.0], vec![1.5, 2.5]).is_ok());
    }

    #[test]
    fn beta_product_normalization_and_small_case() {
        let pair = half_integer_pair(50);
        let one = beta_product_mellin(&pair, Complex64::new(1.0, 0.0), 50).unwrap();
        assert!((one - 1.0).norm() < 1e-13);

        // single factor, alpha = 2, beta = 3, s = 3:
        // Gamma(3)Gamma(4)/(Gamma(2)Gamma(5)) (3/2)^2 = 1.125
        let single = InterlacedPair::new(vec![2.0], vec![3.0]).unwrap();
        let v = beta_product_mellin(&single, Complex64::new(3.0, 0.0), 1).unwrap();
        assert_relative_eq!(v.re, 1.125, epsilon = 1e-13);
        assert!(v.im.abs() < 1e-14);
    }

    #[test]
    fn phi_is_the_functional_equation_factor() {
        let pair = half_integer_pair(800);
        for &s in &[
            Complex64::new(0.7, 0.0),
            Complex64::new(1.9, 2.5),
            Complex64::new(0.4, -1.0),
        ] {
            let lhs = beta_product_mellin(&pair, s + 1.0, 800).unwrap()
                / beta_product_mellin(&pair, s, 800).unwrap();
            let rhs = phi(&pair, s, 800).unwrap();
            assert!((lhs - rhs).norm() < 1e-10 * rhs.norm().max(1.0));
        }
        let at_one = phi(&pair, Complex64::new(1.0, 0.0), 800).unwrap();
        assert!((at_one - 1.0).norm() < 1e-14);
        // zero of the first numerator factor
        let z = phi(&pair, Complex64::new(1.0 - pair.alpha(1), 0.0), 800).unwrap();
        assert!(z.norm() < 1e-14);
    }

    #[test]
    fn telescoped_product_identity() {
        // With tilde(alpha)_n = beta_n and tilde(beta)_n = alpha_{n+1}, the
        // two partial products collapse to
        // Gamma(alpha_1+s-1)/(Gamma(alpha_1) alpha_1^{s-1})
        //   * Gamma(alpha_{N+1}) alpha_{N+1}^{s-1} / Gamma(alpha_{N+1}+s-1),
        // exactly, where the trailing factor is exp(-f_{s-1}(alpha_{N+1})).
        let n = 2000;
        let pair = half_integer_pair(n + 1);
        let dual = InterlacedPair::from_rule(n, |k| (pair.beta(k), pair.alpha(k + 1))).unwrap();
        for &s in &[Complex64::new(3.0, 0.0), Complex64::new(1.3, 4.0)] {
            let lhs = beta_product_mellin(&pair, s, n).unwrap()
                * beta_product_mellin(&dual, s, n).unwrap();
            let a1 = pair.alpha(1);
            let a_next = pair.alpha(n + 1);
            let log_rhs = log_gamma_checked(a1 + s - 1.0).unwrap()
                - log_gamma_real(a1)
                - (s - 1.0) * a1.ln()
                - (log_gamma_checked(a_next + s - 1.0).unwrap()
                    - log_gamma_real(a_next)
                    - (s - 1.0) * a_next.ln());
            let rhs = log_rhs.exp();
            assert!(
                (lhs - rhs).norm() < 1e-10 * rhs.norm(),
                "telescoped identity off: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn tail_bound_dominates_long_product() {
        let pair = half_integer_pair(100_001);
        assert_eq!(log_mellin_tail_bound(&pair, 100, 1.0).unwrap(), 0.0);
        // decreasing in the cut (note v = 2 is degenerate: every factor of
        // the product equals 1 there, and f_1 vanishes identically)
        let b100 = log_mellin_tail_bound(&pair, 100, 2.5).unwrap();
        let b1000 = log_mellin_tail_bound(&pair, 1000, 2.5).unwrap();
        assert!(b1000 < b100);
        // dominates the actually omitted log-tail
        let s = Complex64::new(2.5, 0.0);
        let full = beta_product_mellin(&pair, s, 100_000).unwrap();
        let head = beta_product_mellin(&pair, s, 100).unwrap();
        let omitted = (full / head).ln().norm();
        assert!(
            omitted <= b100,
            "omitted log-tail {omitted} above bound {b100}"
        );
        assert!(log_mellin_tail_bound(&pair, 100, -105.0).is_err());
    }

    #[test]
    fn truncated_transform_matches_naive_product() {
        // per-factor evaluation (exponentiating each gamma ratio separately)
        // as an independent route through the same formula
        let m = set1();
        let q = 1.0;
        let n = 8;
        let roots = solve_real(&m, q, n, &SolveConfig::default()).unwrap();
        let eval = MellinEval::truncated(&m, &roots, Complex64::new(q, 0.0), n).unwrap();

        for &s in &[
            Complex64::new(0.5, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(2.2, 1.5),
            Complex64::new(0.9, -3.0),
        ] {
            let lg = crate::special::log_gamma;
            let mut log_prod = Complex64::new(0.0, 0.0);
            let mut log_b = Complex64::new(1.0 + m.pole_neg(n).unwrap(), 0.0).ln() - q.ln();
            let mut log_norm = Complex64::new(0.0, 0.0);
            for k in 1..=n {
                let (zk, zhk) = (roots.zeta[k - 1], roots.zeta_hat[k - 1]);
                let (rk, rhk) = (m.pole_pos(k).unwrap(), m.pole_neg(k).unwrap());
                let rh_prev = if k == 1 { 0.0 } else { m.pole_neg(k - 1).unwrap() };
                log_prod += lg(rh_prev + s) - lg(zhk + s) + lg(zk + 1.0 - s)
                    - lg(Complex64::new(rk + 1.0, 0.0) - s);
                log_norm += lg(Complex64::new(rh_prev + 1.0, 0.0)) - lg(zhk + 1.0) + lg(zk)
                    - lg(Complex64::new(rk, 0.0));
                log_b += (zk * zhk / (rk * rhk)).ln();
            }
            let naive = ((s - 1.0) * log_b + log_prod - log_norm).exp();
            let fast = eval.eval(s).unwrap();
            assert!(
                (naive - fast).norm() < 1e-11 * naive.norm(),
                "mismatch at s = {s}: {fast} vs {naive}"
            );
        }
    }

    #[test]
    fn corrected_transform_moments_are_exact() {
        let m = set1();
        let q = 1.0;
        let cfg = SolveConfig::default();
        let roots = solve_real(&m, q, 20, &cfg).unwrap();
        let eval = MellinEval::corrected(&m, &roots, Complex64::new(q, 0.0), 20).unwrap();
        let one = eval.eval(Complex64::new(1.0, 0.0)).unwrap();
        assert!((one - 1.0).norm() < 1e-14);

        let psi1 = m.psi_real(1.0).unwrap();
        let psi2 = m.psi_real(2.0).unwrap();
        let m2 = eval.eval(Complex64::new(2.0, 0.0)).unwrap();
        assert!((m2 - 1.0 / (q - psi1)).norm() < 1e-10 * m2.norm());
        let m3 = eval.eval(Complex64::new(3.0, 0.0)).unwrap();
        let expect = 2.0 / ((q - psi1) * (q - psi2));
        assert!((m3 - expect).norm() < 1e-10 * m3.norm());
    }

    #[test]
    fn tail_moments_have_positive_variance_and_converge_to_one() {
        let m = set1();
        let q = Complex64::new(1.0, 0.0);
        let cfg = SolveConfig::default();
        let roots = solve_real(&m, 1.0, 80, &cfg).unwrap();
        let (m1_20, m2_20) = tail_moments(&m, &roots, q, 20).unwrap();
        assert!(m2_20.re - m1_20.re * m1_20.re > 0.0);
        assert!(m1_20.im.abs() < 1e-12);
        let (m1_80, _) = tail_moments(&m, &roots, q, 80).unwrap();
        assert!((m1_80 - 1.0).norm() < (m1_20 - 1.0).norm());
    }

    #[test]
    fn tail_moment_agrees_with_long_truncation() {
        // m_k = M(k+1)/M_N(k+1); approximate the numerator by the corrected
        // transform at N = 400
        let m = set1();
        let q = Complex64::new(1.0, 0.0);
        let cfg = SolveConfig::default();
        let roots = solve_real(&m, 1.0, 400, &cfg).unwrap();
        let short = MellinEval::truncated(&m, &roots, q, 20).unwrap();
        let long = MellinEval::corrected(&m, &roots, q, 400).unwrap();
        let (m1, m2) = short.tail_moments(&m).unwrap();
        for (k, mk) in [(1, m1), (2, m2)] {
            let s = Complex64::new(k as f64 + 1.0, 0.0);
            let alt = long.eval(s).unwrap() / short.eval(s).unwrap();
            assert!(
                (alt - mk).norm() < 1e-6 * mk.norm(),
                "m_{k}: {mk} vs long-truncation {alt}"
            );
        }
    }

    #[test]
    fn correction_params_examples() {
        let (a, b) =
            correction_params(Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0)).unwrap();
        assert_relative_eq!(a.re, 3.0, epsilon = 1e-14);
        assert_relative_eq!(b.re, 4.0, epsilon = 1e-14);
        // E[xi] = a/(b-1), E[xi^2] = a(a+1)/((b-1)(b-2))
        assert_relative_eq!(a.re / (b.re - 1.0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(
            a.re * (a.re + 1.0) / ((b.re - 1.0) * (b.re - 2.0)),
            2.0,
            epsilon = 1e-14
        );
        assert!(matches!(
            correction_params(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn singular_moment_limit_matches_neighbors() {
        // pick q = psi(2) so that zeta_1(q) = 2 exactly and the k = 2 moment
        // needs the paired-limit path
        let m = set1();
        let q0 = m.psi_real(2.0).unwrap();
        assert!(q0 > 0.0);
        let cfg = SolveConfig::default();
        let n = 12;
        let singular = {
            let roots = solve_real(&m, q0, n, &cfg).unwrap();
            tail_moments(&m, &roots, Complex64::new(q0, 0.0), n).unwrap()
        };
        let nearby = |dq: f64| {
            let q = q0 * (1.0 + dq);
            let roots = solve_real(&m, q, n, &cfg).unwrap();
            tail_moments(&m, &roots, Complex64::new(q, 0.0), n).unwrap()
        };
        let lo = nearby(-1e-5);
        let hi = nearby(1e-5);
        let mid = 0.5 * (lo.1 + hi.1);
        assert!(
            (singular.1 - mid).norm() < 1e-4 * mid.norm(),
            "limit m_2 = {} vs neighbor average {}",
            singular.1,
            mid
        );
    }

    #[test]
    fn hyperexp_transform_functional_equation_and_moments() {
        let theta = set1();
        let r = 0.03;
        let he = HyperExpModel::from_theta(&theta, r, 10).unwrap();
        let q = 1.0;
        let cfg = SolveConfig::default();
        let roots = solve_real(&he, q, 11, &cfg).unwrap();
        let eval = MellinEval::hyperexp(&he, &roots, Complex64::new(q, 0.0)).unwrap();

        let one = eval.eval(Complex64::new(1.0, 0.0)).unwrap();
        assert!((one - 1.0).norm() < 1e-14);

        // M(s+1) = s M(s) / (q - psi(s)) holds exactly for the closed form
        let zeta1 = roots.zeta[0].re;
        let mut s = 0.1;
        while s < zeta1 - 1.0 {
            let lhs = eval.eval(Complex64::new(s + 1.0, 0.0)).unwrap();
            let rhs =
                eval.eval(Complex64::new(s, 0.0)).unwrap() * s / (q - he.psi_real(s).unwrap());
            assert!(
                (lhs - rhs).norm() <= 1e-10 * rhs.norm(),
                "functional equation residual {} at s = {s}",
                (lhs - rhs).norm() / rhs.norm()
            );
            s += 0.17;
        }

        // moment recursion E[I^k] = k E[I^(k-1)]/(q - psi(k))
        let mut rec = Complex64::new(1.0, 0.0);
        for k in 1..=3 {
            rec = rec * (k as f64) / (q - he.psi_real(k as f64).unwrap());
            let direct = eval.eval(Complex64::new(k as f64 + 1.0, 0.0)).unwrap();
            assert!(
                (direct - rec).norm() < 1e-10 * rec.norm(),
                "moment {k}: {direct} vs {rec}"
            );
        }
    }

    #[test]
    fn vertical_line_bounded_by_real_axis_value() {
        let m = set1();
        let q = 1.0;
        let cfg = SolveConfig::default();
        let roots = solve_real(&m, q, 20, &cfg).unwrap();
        let eval = MellinEval::corrected(&m, &roots, Complex64::new(q, 0.0), 20).unwrap();
        for &c in &[0.3, 1.0, 2.0, 3.0] {
            let on_axis = eval.eval(Complex64::new(c, 0.0)).unwrap().norm();
            for &v in &[0.5, 3.0, 17.0, 60.0] {
                let off = eval.eval(Complex64::new(c, v)).unwrap().norm();
                assert!(
                    off <= on_axis * (1.0 + 1e-10),
                    "|M({c}+{v}i)| = {off} above M({c}) = {on_axis}"
                );
            }
        }
    }

    #[test]
    fn conjugate_symmetry_in_s() {
        let m = set_two(MuMode::Riskneutral { r: 0.03 }).build().unwrap().0;
        let q = 1.0;
        let roots = solve_real(&m, q, 15, &SolveConfig::default()).unwrap();
        let eval = MellinEval::corrected(&m, &roots, Complex64::new(q, 0.0), 15).unwrap();
        for &s in &[Complex64::new(0.8, 5.0), Complex64::new(2.1, -11.0)] {
            let a = eval.eval(s).unwrap();
            let b = eval.eval(s.conj()).unwrap();
            assert!((a.conj() - b).norm() < 1e-12 * a.norm());
        }
    }
}

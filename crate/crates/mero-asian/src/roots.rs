//! Solutions of psi(z) = q: the interlaced root chains zeta_n (positive side)
//! and -zeta_hat_n (negative side), solved by bracketed bisection plus Newton
//! polish for real q and tracked by damped-Newton continuation for complex q.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{LaplaceExponent, ModelKind};

#[derive(Debug, Clone, Copy)]
pub struct SolveConfig {
    /// Residual tolerance relative to max(1, |q|).
    pub tol_rel: f64,
    /// Bisection stops once the bracket is this wide (absolute).
    pub bisect_width: f64,
    /// Relative margin by which brackets start shrunk inward from poles.
    pub margin_rel: f64,
    pub max_newton: usize,
    /// Initial number of continuation steps for complex q.
    pub continuation_steps: usize,
    /// Step-count ceiling when continuation is retried after a failure.
    pub max_continuation_steps: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol_rel: 1e-12,
            bisect_width: 1e-6,
            margin_rel: 1e-9,
            max_newton: 60,
            continuation_steps: 32,
            max_continuation_steps: 1024,
        }
    }
}

/// Paired solutions of psi(z) = q. `zeta_hat` stores the magnitudes of the
/// negative-side roots (the roots themselves are -zeta_hat_n).
#[derive(Debug, Clone)]
pub struct RootSet {
    pub q: Complex64,
    pub zeta: Vec<Complex64>,
    pub zeta_hat: Vec<Complex64>,
    /// |psi(root) - q| per root, zeta chain first.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub kind: ModelKind,
}

impl RootSet {
    pub fn count(&self) -> usize {
        self.zeta.len().min(self.zeta_hat.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Pos,
    Neg,
}

impl Side {
    fn name(self) -> &'static str {
        match self {
            Side::Pos => "positive",
            Side::Neg => "negative",
        }
    }
}

struct SideFn<'a> {
    psi: &'a dyn LaplaceExponent,
    q_re: f64,
    side: Side,
}

impl SideFn<'_> {
    /// F(y) = psi(+-y) - Re q on the working coordinate y > 0.
    fn f(&self, y: f64) -> Result<f64> {
        let x = match self.side {
            Side::Pos => y,
            Side::Neg => -y,
        };
        Ok(self.psi.psi_real(x)? - self.q_re)
    }

    fn df(&self, y: f64) -> Result<f64> {
        let x = match self.side {
            Side::Pos => y,
            Side::Neg => -y,
        };
        let d = self.psi.dpsi_real(x)?;
        Ok(match self.side {
            Side::Pos => d,
            Side::Neg => -d,
        })
    }

    fn pole(&self, n: usize) -> Option<f64> {
        match self.side {
            Side::Pos => self.psi.pole_pos(n),
            Side::Neg => self.psi.pole_neg(n),
        }
    }

    fn to_z(&self, y: f64) -> Complex64 {
        match self.side {
            Side::Pos => Complex64::new(y, 0.0),
            Side::Neg => Complex64::new(-y, 0.0),
        }
    }
}

/// Absolute residual floor achievable in f64 at this evaluation point: the
/// cancellation scale of the summed terms plus the sensitivity of psi to the
/// half-ulp rounding of the abscissa itself.
fn residual_floor(psi: &dyn LaplaceExponent, z: Complex64) -> f64 {
    let sens = match psi.dpsi(z) {
        Ok(d) => (z * d).norm(),
        Err(_) => 0.0,
    };
    8.0 * f64::EPSILON * (psi.psi_scale(z) + sens)
}

fn residual_tol(cfg: &SolveConfig, q: Complex64, psi: &dyn LaplaceExponent, z: Complex64) -> f64 {
    (cfg.tol_rel * q.norm().max(1.0)).max(residual_floor(psi, z))
}

/// Solve the first `m` roots of psi(z) = q on each side for real q > 0.
pub fn solve_real(
    psi: &dyn LaplaceExponent,
    q: f64,
    m: usize,
    cfg: &SolveConfig,
) -> Result<RootSet> {
    if q <= 0.0 {
        return Err(Error::Domain(format!("q must be positive, got {q}")));
    }
    if m < 1 {
        return Err(Error::Domain("need at least one root".into()));
    }
    let (zeta, res_pos) = solve_side(psi, q, m, Side::Pos, cfg)?;
    let (zeta_hat, res_neg) = solve_side(psi, q, m, Side::Neg, cfg)?;
    let mut residuals = res_pos;
    residuals.extend(res_neg);
    let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(RootSet {
        q: Complex64::new(q, 0.0),
        zeta: zeta.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
        zeta_hat: zeta_hat.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
        residuals,
        max_residual,
        kind: psi.kind(),
    })
}

fn solve_side(
    psi: &dyn LaplaceExponent,
    q: f64,
    m: usize,
    side: Side,
    cfg: &SolveConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sf = SideFn { psi, q_re: q, side };
    if let Some(cap) = psi.max_roots() {
        if m > cap {
            let last = sf.pole(cap - 1).unwrap_or(f64::NAN);
            return Err(Error::Bracket {
                side: side.name(),
                index: cap + 1,
                lo: last,
                hi: f64::INFINITY,
            });
        }
    }
    let mut roots: Vec<f64> = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    for n in 1..=m {
        let lo_pole = if n == 1 { 0.0 } else { sf.pole(n - 1).unwrap() };
        let (lo, flo, hi, fhi) = match sf.pole(n) {
            Some(hi_pole) => bracket_between(&sf, n, lo_pole, hi_pole, cfg)?,
            None => bracket_unbounded(&sf, n, lo_pole, cfg)?,
        };
        let (root, res) = polish(&sf, q, lo, flo, hi, fhi, cfg)?;
        if let Some(prev) = roots.last() {
            if root <= *prev {
                return Err(Error::Convergence(format!(
                    "roots out of order on the {} side at index {n}",
                    side.name()
                )));
            }
        }
        roots.push(root);
        residuals.push(res);
    }
    Ok((roots, residuals))
}

/// Establish a sign-changing bracket strictly inside (lo_pole, hi_pole).
/// Margins start at the configured relative shrink and adapt: they grow away
/// from a pole that trips the pole guard and shrink toward it when the root
/// sits closer to the pole than the initial margin.
fn bracket_between(
    sf: &SideFn,
    n: usize,
    lo_pole: f64,
    hi_pole: f64,
    cfg: &SolveConfig,
) -> Result<(f64, f64, f64, f64)> {
    let gap = hi_pole - lo_pole;
    let err = || Error::Bracket {
        side: sf.side.name(),
        index: n,
        lo: lo_pole,
        hi: hi_pole,
    };

    // Left end: F must be negative (psi falls to -inf right of a pole; for
    // n == 1 the endpoint is 0 where F = -q < 0 exactly).
    let (mut lo, mut flo) = (0.0, 0.0);
    if n == 1 {
        flo = sf.f(0.0)?;
        if flo >= 0.0 {
            return Err(err());
        }
    } else {
        let mut margin = (cfg.margin_rel * lo_pole.abs().max(1.0)).min(0.25 * gap);
        loop {
            lo = lo_pole + margin;
            match sf.f(lo) {
                Ok(v) if v < 0.0 => {
                    flo = v;
                    break;
                }
                Ok(_) => {
                    // root is closer to the pole than the margin
                    margin /= 8.0;
                    if margin < 32.0 * f64::EPSILON * lo_pole.abs().max(1.0) {
                        return Err(err());
                    }
                }
                Err(Error::Pole { .. }) => {
                    margin *= 4.0;
                    if margin > 0.5 * gap {
                        return Err(err());
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    // Right end: F must be positive (psi rises to +inf left of a pole).
    let mut hi;
    let fhi;
    let mut margin = (cfg.margin_rel * hi_pole.abs().max(1.0)).min(0.25 * gap);
    loop {
        hi = hi_pole - margin;
        match sf.f(hi) {
            Ok(v) if v > 0.0 => {
                fhi = v;
                break;
            }
            Ok(_) => {
                margin /= 8.0;
                if margin < 32.0 * f64::EPSILON * hi_pole.abs().max(1.0) {
                    return Err(err());
                }
            }
            Err(Error::Pole { .. }) => {
                margin *= 4.0;
                if margin > 0.5 * gap {
                    return Err(err());
                }
            }
            Err(e) => return Err(e),
        }
    }
    if hi <= lo {
        return Err(err());
    }
    Ok((lo, flo, hi, fhi))
}

/// Bracket for the last root of a rational exponent: (rho_N, +inf), expanded
/// to the right until the sign flips.
fn bracket_unbounded(
    sf: &SideFn,
    n: usize,
    lo_pole: f64,
    cfg: &SolveConfig,
) -> Result<(f64, f64, f64, f64)> {
    let err = || Error::Bracket {
        side: sf.side.name(),
        index: n,
        lo: lo_pole,
        hi: f64::INFINITY,
    };
    let mut margin = cfg.margin_rel * lo_pole.abs().max(1.0);
    let lo;
    let flo;
    loop {
        let cand = lo_pole + margin;
        match sf.f(cand) {
            Ok(v) if v < 0.0 => {
                lo = cand;
                flo = v;
                break;
            }
            Ok(_) => {
                margin /= 8.0;
                if margin < 32.0 * f64::EPSILON * lo_pole.abs().max(1.0) {
                    return Err(err());
                }
            }
            Err(Error::Pole { .. }) => {
                margin *= 4.0;
                if margin > lo_pole.abs().max(1.0) {
                    return Err(err());
                }
            }
            Err(e) => return Err(e),
        }
    }
    let mut step = lo_pole.abs().max(1.0);
    for _ in 0..200 {
        let hi = lo_pole + step;
        let fhi = sf.f(hi)?;
        if fhi > 0.0 {
            return Ok((lo, flo, hi, fhi));
        }
        step *= 2.0;
    }
    Err(err())
}

/// Bisection to a narrow bracket, then bracket-safeguarded Newton.
fn polish(
    sf: &SideFn,
    q: f64,
    mut lo: f64,
    mut flo: f64,
    mut hi: f64,
    mut fhi: f64,
    cfg: &SolveConfig,
) -> Result<(f64, f64)> {
    debug_assert!(flo < 0.0 && fhi > 0.0);
    let width_target = cfg.bisect_width.max(16.0 * f64::EPSILON * hi.abs());
    while hi - lo > width_target {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket at floating-point resolution
        }
        let fmid = match sf.f(mid) {
            Ok(v) => v,
            // a midpoint can graze the pole guard only next to an endpoint
            Err(Error::Pole { .. }) => {
                let nudged = 0.5 * (mid + if flo.abs() < fhi.abs() { hi } else { lo });
                sf.f(nudged)?
            }
            Err(e) => return Err(e),
        };
        if fmid < 0.0 {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
            fhi = fmid;
        }
    }
    let _ = (flo, fhi);

    let mut x = 0.5 * (lo + hi);
    let mut fx = sf.f(x)?;
    let mut best = (x, fx.abs());
    for _ in 0..cfg.max_newton {
        let dfx = sf.df(x)?;
        let mut next = x - fx / dfx;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let stalled = (next - x).abs() <= 0.5 * f64::EPSILON * x.abs();
        x = next;
        fx = sf.f(x)?;
        if fx.abs() < best.1 {
            best = (x, fx.abs());
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if stalled {
            break;
        }
    }
    // walk the last few ulps: Newton's own step resolution ends a couple of
    // ulps from the sign change
    (x, _) = best;
    fx = sf.f(x)?;
    for _ in 0..16 {
        let dfx = sf.df(x)?;
        let dir = if fx.signum() == dfx.signum() { -1i64 } else { 1 };
        let xn = f64::from_bits((x.to_bits() as i64 + dir) as u64);
        let fn_ = sf.f(xn)?;
        if fn_.abs() < fx.abs() {
            x = xn;
            fx = fn_;
        } else {
            break;
        }
    }
    let res = fx.abs();
    let tol = residual_tol(cfg, Complex64::new(q, 0.0), sf.psi, sf.to_z(x));
    if res > tol {
        return Err(Error::Convergence(format!(
            "root residual {res:.3e} above tolerance {tol:.3e} at x = {x}"
        )));
    }
    Ok((x, res))
}

// ---------------------------------------------------------------------------
// complex q: continuation
// ---------------------------------------------------------------------------

/// Solve psi(z) = q for complex q with Re q > 0 by continuation along
/// q(tau) = Re q + i tau Im q from the real-q roots, tracking each root by
/// index with damped Newton. Retries with doubled step counts up to the
/// configured ceiling.
pub fn solve_complex(
    psi: &dyn LaplaceExponent,
    q: Complex64,
    m: usize,
    cfg: &SolveConfig,
) -> Result<RootSet> {
    if q.re <= 0.0 {
        return Err(Error::Domain(format!("Re q must be positive, got {q}")));
    }
    if q.im == 0.0 {
        return solve_real(psi, q.re, m, cfg);
    }
    let base = solve_real(psi, q.re, m, cfg)?;
    let mut steps = cfg.continuation_steps.max(1);
    loop {
        match continuation(psi, &base, q, steps, cfg) {
            Ok(rs) => return Ok(rs),
            Err(e @ Error::Continuation(_)) => {
                steps *= 2;
                if steps > cfg.max_continuation_steps {
                    return Err(e);
                }
            }
            Err(e) => return Err(e),
        }
    }
}

fn continuation(
    psi: &dyn LaplaceExponent,
    base: &RootSet,
    q: Complex64,
    steps: usize,
    cfg: &SolveConfig,
) -> Result<RootSet> {
    let mut zeta = base.zeta.clone();
    let mut zeta_hat = base.zeta_hat.clone();
    for k in 1..=steps {
        let qk = Complex64::new(q.re, q.im * (k as f64) / (steps as f64));
        step_all(psi, &mut zeta, &mut zeta_hat, qk, cfg)?;
    }
    finish_rootset(psi, q, zeta, zeta_hat, cfg)
}

/// Move every tracked root to the target q by damped Newton, then check that
/// no two tracked roots collided.
fn step_all(
    psi: &dyn LaplaceExponent,
    zeta: &mut [Complex64],
    zeta_hat: &mut [Complex64],
    qk: Complex64,
    cfg: &SolveConfig,
) -> Result<()> {
    for z in zeta.iter_mut() {
        *z = newton_complex(psi, *z, qk, false, cfg)?;
    }
    for z in zeta_hat.iter_mut() {
        *z = newton_complex(psi, *z, qk, true, cfg)?;
    }
    for chain in [&*zeta, &*zeta_hat] {
        for w in chain.windows(2) {
            if (w[1] - w[0]).norm() < 1e-9 * (1.0 + w[1].norm()) {
                return Err(Error::Continuation(
                    "tracked roots collided; refining continuation steps".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Damped Newton for psi(z) = q. `hat` selects the negative-side chain, whose
/// stored coordinate is the root magnitude zeta_hat (root at -zeta_hat).
fn newton_complex(
    psi: &dyn LaplaceExponent,
    start: Complex64,
    q: Complex64,
    hat: bool,
    cfg: &SolveConfig,
) -> Result<Complex64> {
    let to_z = |y: Complex64| if hat { -y } else { y };
    let mut y = start;
    let mut fy = psi.psi(to_z(y))? - q;
    let target = residual_tol(cfg, q, psi, to_z(y));
    for _ in 0..cfg.max_newton {
        if fy.norm() <= target {
            return Ok(y);
        }
        let d = psi.dpsi(to_z(y))?;
        let d = if hat { -d } else { d };
        if d.norm() == 0.0 {
            return Err(Error::Continuation("zero derivative in Newton step".into()));
        }
        let mut step = fy / d;
        let mut accepted = false;
        for _ in 0..24 {
            let cand = y - step;
            match psi.psi(to_z(cand)) {
                Ok(v) => {
                    let fc = v - q;
                    if fc.norm() < fy.norm() {
                        y = cand;
                        fy = fc;
                        accepted = true;
                        break;
                    }
                }
                Err(Error::Pole { .. }) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::Continuation(format!(
                "Newton stalled at y = {y} with residual {:.3e}",
                fy.norm()
            )));
        }
    }
    if fy.norm() <= target {
        Ok(y)
    } else {
        Err(Error::Continuation(format!(
            "Newton did not reach tolerance at y = {y}, residual {:.3e}",
            fy.norm()
        )))
    }
}

fn finish_rootset(
    psi: &dyn LaplaceExponent,
    q: Complex64,
    zeta: Vec<Complex64>,
    zeta_hat: Vec<Complex64>,
    cfg: &SolveConfig,
) -> Result<RootSet> {
    let mut residuals = Vec::with_capacity(zeta.len() + zeta_hat.len());
    let mut max_residual = 0.0f64;
    for (&y, hat) in zeta
        .iter()
        .map(|z| (z, false))
        .chain(zeta_hat.iter().map(|z| (z, true)))
    {
        let z = if hat { -y } else { y };
        let res = (psi.psi(z)? - q).norm();
        let tol = residual_tol(cfg, q, psi, z);
        if res > tol {
            return Err(Error::Continuation(format!(
                "final residual {res:.3e} above tolerance {tol:.3e} at root {z}"
            )));
        }
        max_residual = max_residual.max(res);
        residuals.push(res);
    }
    Ok(RootSet {
        q,
        zeta,
        zeta_hat,
        residuals,
        max_residual,
        kind: psi.kind(),
    })
}

/// One-shot continuation of an existing root set to a nearby q, for marching
/// along a contour whose nodes are closely spaced. Callers fall back to
/// `solve_complex` when the jump is too large for a single Newton basin.
pub fn continue_roots(
    psi: &dyn LaplaceExponent,
    prev: &RootSet,
    q: Complex64,
    cfg: &SolveConfig,
) -> Result<RootSet> {
    let mut zeta = prev.zeta.clone();
    let mut zeta_hat = prev.zeta_hat.clone();
    step_all(psi, &mut zeta, &mut zeta_hat, q, cfg)?;
    finish_rootset(psi, q, zeta, zeta_hat, cfg)
}

// ---------------------------------------------------------------------------
// interlacing verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct InterlacingReport {
    pub positive_ok: bool,
    pub negative_ok: bool,
    /// (side name, 1-based root index) of the first violation.
    pub first_violation: Option<(&'static str, usize)>,
}

impl InterlacingReport {
    pub fn ok(&self) -> bool {
        self.positive_ok && self.negative_ok
    }
}

/// Check 0 < zeta_1 < rho_1 < zeta_2 < rho_2 < ... (and the mirrored chain)
/// for a real-q root set.
pub fn verify_interlacing(rs: &RootSet, psi: &dyn LaplaceExponent) -> Result<InterlacingReport> {
    for z in rs.zeta.iter().chain(rs.zeta_hat.iter()) {
        if z.im.abs() > 1e-10 * (1.0 + z.norm()) {
            return Err(Error::Domain(
                "interlacing is defined for real-q root sets".into(),
            ));
        }
    }
    let check = |roots: &[Complex64], pole: &dyn Fn(usize) -> Option<f64>| -> Option<usize> {
        let mut lower = 0.0f64;
        for (i, z) in roots.iter().enumerate() {
            let x = z.re;
            let upper = pole(i + 1).unwrap_or(f64::INFINITY);
            if !(x > lower && x < upper) {
                return Some(i + 1);
            }
            lower = upper;
        }
        None
    };
    let vp = check(&rs.zeta, &|n| psi.pole_pos(n));
    let vn = check(&rs.zeta_hat, &|n| psi.pole_neg(n));
    Ok(InterlacingReport {
        positive_ok: vp.is_none(),
        negative_ok: vn.is_none(),
        first_violation: vp.map(|i| ("positive", i)).or(vn.map(|i| ("negative", i))),
    })
}

// ---------------------------------------------------------------------------
// memoization
// ---------------------------------------------------------------------------

/// Concurrent root-set memo keyed by (model fingerprint, q). Values are
/// deterministic, so last-writer-wins on racing inserts is benign.
#[derive(Default)]
pub struct RootCache {
    map: Mutex<HashMap<(u64, u64, u64), Arc<RootSet>>>,
}

impl RootCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fetch a cached root set with at least `m` roots per side, solving and
    /// inserting on a miss.
    pub fn get_or_solve(
        &self,
        psi: &dyn LaplaceExponent,
        q: Complex64,
        m: usize,
        cfg: &SolveConfig,
    ) -> Result<Arc<RootSet>> {
        let key = (psi.fingerprint(), q.re.to_bits(), q.im.to_bits());
        if let Some(rs) = self.map.lock().unwrap().get(&key) {
            if rs.count() >= m {
                return Ok(rs.clone());
            }
        }
        let rs = Arc::new(solve_complex(psi, q, m, cfg)?);
        self.map.lock().unwrap().insert(key, rs.clone());
        Ok(rs)
    }
}

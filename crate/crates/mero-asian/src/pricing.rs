//! Fixed-strike Asian option pricing: the two semi-analytic routes (corrected
//! Mellin transform of the exponential functional; exact hyper-exponential
//! transform of the truncated model) and the Monte Carlo check, plus the
//! density-inversion experiment that calibrates trust in the truncation
//! correction.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expfunc::MellinEval;
use crate::model::{HyperExpModel, LaplaceExponent, ThetaModel};
use crate::quad::{
    filon_integral, inverse_mellin_density, inverse_mellin_h, laplace_segments, DensityPoint,
    FilonGrid, InversionConfig, LaplaceCosineGrid,
};
use crate::roots::{continue_roots, solve_complex, solve_real, RootSet, SolveConfig};

/// Relative integrand magnitude at a truncated integral's end above which a
/// warning is recorded.
const TAIL_WARN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceMethod {
    /// Corrected truncated Mellin transform of the exponential functional.
    Mellin,
    /// Hyper-exponential truncation with its exact transform.
    HyperExp,
    /// Monte Carlo over exact-in-distribution increments.
    MonteCarlo,
}

impl PriceMethod {
    pub fn name(self) -> &'static str {
        match self {
            PriceMethod::Mellin => "mellin",
            PriceMethod::HyperExp => "hyperexp",
            PriceMethod::MonteCarlo => "mc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub paths: u64,
    pub steps: u32,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            paths: 1_000_000,
            steps: 400,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PricingRequest {
    pub s0: f64,
    pub strike: f64,
    pub maturity: f64,
    pub rate: f64,
    pub method: PriceMethod,
    pub n: usize,
    pub quad: InversionConfig,
    pub mc: Option<McConfig>,
}

impl PricingRequest {
    pub fn validate(&self) -> Result<()> {
        if self.s0 <= 0.0 {
            return Err(Error::Domain("S0 must be positive".into()));
        }
        if self.strike < 0.0 {
            return Err(Error::Domain("strike must be nonnegative".into()));
        }
        if self.maturity <= 0.0 {
            return Err(Error::Domain("maturity must be positive".into()));
        }
        if self.rate < 0.0 {
            return Err(Error::Domain("rate must be nonnegative".into()));
        }
        if self.n < 1 {
            return Err(Error::Domain("truncation order must be >= 1".into()));
        }
        if self.method == PriceMethod::MonteCarlo {
            match &self.mc {
                None => return Err(Error::Domain("Monte Carlo needs its config".into())),
                Some(mc) if mc.paths < 1 || mc.steps < 1 => {
                    return Err(Error::Domain("paths and steps must be >= 1".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    /// Worst |psi(root) - q| across every root set used.
    pub root_residual_max: f64,
    /// |integrand| at the Mellin integral ends relative to the integral.
    pub mellin_tail_ratio: f64,
    /// Same diagnostic for the Laplace cosine integral.
    pub laplace_tail_ratio: f64,
    /// Nodes where the tail correction degenerated and the truncated
    /// transform was used instead.
    pub correction_fallbacks: usize,
    /// Negative density mass clamped during increment tabulation (MC only).
    pub clamped_mass: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PricingResult {
    pub price: f64,
    pub stderr: Option<f64>,
    pub method: &'static str,
    pub n: usize,
    pub runtime_seconds: f64,
    pub diagnostics: Diagnostics,
}

/// Dispatch on the request's method.
pub fn price(model: &ThetaModel, req: &PricingRequest) -> Result<PricingResult> {
    match req.method {
        PriceMethod::Mellin => price_algo1(model, req),
        PriceMethod::HyperExp => price_algo2(model, req),
        PriceMethod::MonteCarlo => price_mc(model, req),
    }
}

/// Undiscounted E[integral_0^T exp(X_u) du] under psi(1) = r, used for the
/// zero-strike short circuit.
fn zero_strike_factor(rate: f64, t: f64) -> f64 {
    if rate.abs() < 1e-14 {
        t
    } else {
        ((rate * t).exp() - 1.0) / rate
    }
}

/// Price via the corrected truncated Mellin transform of the exponential
/// functional of the theta process itself.
pub fn price_algo1(model: &ThetaModel, req: &PricingRequest) -> Result<PricingResult> {
    req.validate()?;
    let start = Instant::now();
    let n = req.n;
    let (price, diagnostics) = semi_analytic(model, req, n, |roots, q| {
        match MellinEval::corrected(model, roots, q, n) {
            Ok(eval) => Ok((eval, false)),
            Err(Error::Degenerate(_)) => {
                Ok((MellinEval::truncated(model, roots, q, n)?, true))
            }
            Err(e) => Err(e),
        }
    })?;
    Ok(PricingResult {
        price,
        stderr: None,
        method: PriceMethod::Mellin.name(),
        n,
        runtime_seconds: start.elapsed().as_secs_f64(),
        diagnostics,
    })
}

/// Price via the hyper-exponential truncation of the model, whose
/// exponential functional has an exact gamma-product transform.
pub fn price_algo2(model: &ThetaModel, req: &PricingRequest) -> Result<PricingResult> {
    req.validate()?;
    let start = Instant::now();
    let n = req.n;
    let he = HyperExpModel::from_theta(model, req.rate, n)?;
    let (price, diagnostics) = semi_analytic(&he, req, n + 1, |roots, q| {
        Ok((MellinEval::hyperexp(&he, roots, q)?, false))
    })?;
    Ok(PricingResult {
        price,
        stderr: None,
        method: PriceMethod::HyperExp.name(),
        n,
        runtime_seconds: start.elapsed().as_secs_f64(),
        diagnostics,
    })
}

/// Shared inverse Mellin-Laplace pipeline. Roots are continued sequentially
/// along the Laplace contour q = d2 + iu; the per-node Mellin inversions run
/// in parallel and are reduced in index order, so results do not depend on
/// the worker count.
fn semi_analytic<F>(
    psi: &dyn LaplaceExponent,
    req: &PricingRequest,
    roots_per_side: usize,
    make_eval: F,
) -> Result<(f64, Diagnostics)>
where
    F: Fn(&RootSet, Complex64) -> Result<(MellinEval, bool)> + Sync,
{
    let cfg = &req.quad;
    let t = req.maturity;
    let k = req.strike / req.s0;
    let discount = (-req.rate * t).exp();
    if req.strike == 0.0 {
        return Ok((
            discount * req.s0 * zero_strike_factor(req.rate, t),
            Diagnostics::default(),
        ));
    }
    if cfg.d2 <= req.rate {
        return Err(Error::Contour(format!(
            "Laplace abscissa d2 = {} must exceed the rate {}",
            cfg.d2, req.rate
        )));
    }
    let solve_cfg = SolveConfig::default();
    let zeta1_d2 = solve_real(psi, cfg.d2, 1, &solve_cfg)?.zeta[0].re;
    if cfg.d1 >= zeta1_d2 - 1.0 {
        return Err(Error::Contour(format!(
            "Mellin abscissa d1 = {} must lie in (0, {})",
            cfg.d1,
            zeta1_d2 - 1.0
        )));
    }

    // the contour nodes of the segmented cosine grid, in ascending order
    let segments = laplace_segments(cfg);
    let mut node_us: Vec<f64> = Vec::new();
    for &(a, b, n) in &segments {
        let h = (b - a) / n as f64;
        for i in 0..=n {
            node_us.push(a + i as f64 * h);
        }
    }

    // sequential warm-started continuation along the contour
    let mut rootsets: Vec<RootSet> = Vec::with_capacity(node_us.len());
    for &u in &node_us {
        let q = Complex64::new(cfg.d2, u);
        let rs = match rootsets.last() {
            None => solve_real(psi, cfg.d2, roots_per_side, &solve_cfg)?,
            Some(prev) => match continue_roots(psi, prev, q, &solve_cfg) {
                Ok(rs) => rs,
                Err(Error::Continuation(_)) => {
                    solve_complex(psi, q, roots_per_side, &solve_cfg)?
                }
                Err(e) => return Err(e),
            },
        };
        rootsets.push(rs);
    }

    struct NodeOut {
        g: Complex64,
        mellin_tail: f64,
        fallback: bool,
    }
    let nodes: Vec<NodeOut> = rootsets
        .par_iter()
        .zip(&node_us)
        .map(|(roots, &u)| -> Result<NodeOut> {
            let q = Complex64::new(cfg.d2, u);
            let (eval, fallback) = make_eval(roots, q)?;
            let (h, mellin_tail) = inverse_mellin_h(&|s| eval.eval(s), k, cfg)?;
            Ok(NodeOut {
                g: Complex64::new((h / q).re, 0.0),
                mellin_tail,
                fallback,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let root_residual_max = rootsets.iter().map(|r| r.max_residual).fold(0.0, f64::max);
    let mellin_tail_ratio = nodes.iter().map(|n| n.mellin_tail).fold(0.0, f64::max);
    let correction_fallbacks = nodes.iter().filter(|n| n.fallback).count();

    let mut grids = Vec::with_capacity(segments.len());
    let mut offset = 0;
    for &(a, b, n) in &segments {
        let vals: Vec<Complex64> = nodes[offset..offset + n + 1].iter().map(|o| o.g).collect();
        grids.push(FilonGrid::from_samples(a, b, vals)?);
        offset += n + 1;
    }
    let cosine = LaplaceCosineGrid::from_segments(grids, cfg.d2)?;
    let f = cosine.f_at(t)?;
    let laplace_tail_ratio = cosine.tail_ratio();

    let mut diagnostics = Diagnostics {
        root_residual_max,
        mellin_tail_ratio,
        laplace_tail_ratio,
        correction_fallbacks,
        clamped_mass: None,
        warnings: Vec::new(),
    };
    if mellin_tail_ratio > TAIL_WARN {
        diagnostics.warnings.push(format!(
            "Mellin integrand at |v| = v_max is {mellin_tail_ratio:.2e} of the integral; raise v_max"
        ));
    }
    if laplace_tail_ratio > TAIL_WARN {
        diagnostics.warnings.push(format!(
            "Laplace integrand at u_max is {laplace_tail_ratio:.2e} of the integral; raise u_max"
        ));
    }
    if correction_fallbacks > 0 {
        diagnostics.warnings.push(format!(
            "tail correction degenerated on {correction_fallbacks} contour nodes"
        ));
    }

    Ok((discount * req.s0 * f, diagnostics))
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

/// Tabulation parameters for the increment density.
#[derive(Debug, Clone, Copy)]
pub struct IncrementGridConfig {
    pub x_points: usize,
    /// Minimum half-width of the x-domain in marginal standard deviations.
    /// The domain is widened further until the Levy jump tail outside it is
    /// below `tail_mass`: the exponential jump tails, not the Gaussian core,
    /// set the width needed to pass the normalization gate.
    pub sigma_mult: f64,
    /// Jump-measure mass allowed outside the tabulated domain, per side.
    pub tail_mass: f64,
    pub z_panels: usize,
    /// |characteristic function| threshold exp(-decay) for the z cutoff.
    pub decay: f64,
}

impl Default for IncrementGridConfig {
    fn default() -> Self {
        IncrementGridConfig {
            x_points: 1 << 17,
            sigma_mult: 12.0,
            tail_mass: 1e-6,
            z_panels: 4096,
            decay: 40.0,
        }
    }
}

/// Smallest half-width X with dt * (jump mass beyond X on this side) below
/// the target. `rates` yields (weight a_n, rate rho_n).
fn jump_tail_halfwidth(
    dt: f64,
    target: f64,
    x_start: f64,
    rates: impl Fn(usize) -> (f64, f64),
) -> f64 {
    let tail = |x: f64| -> f64 {
        let mut acc = 0.0;
        for n in 1..=64 {
            let (a, rho) = rates(n);
            let term = a * (-rho * x).exp();
            acc += term;
            if term < 1e-18 * acc.max(1e-300) {
                break;
            }
        }
        acc
    };
    let mut x = x_start.max(1e-6);
    for _ in 0..200 {
        if dt * tail(x) <= target {
            return x;
        }
        x *= 1.25;
    }
    x
}

/// Tabulated density/CDF of an increment X_dt, built by Fourier inversion of
/// the characteristic function exp(dt psi(iz)).
#[derive(Debug, Clone)]
pub struct IncrementDensity {
    x0: f64,
    dx: f64,
    pub pdf: Vec<f64>,
    cdf: Vec<f64>,
    /// Mass removed by clamping negative inversion lobes, before rescaling.
    pub clamped_mass: f64,
    /// Integral of the raw inverted density minus one.
    pub normalization_defect: f64,
}

impl IncrementDensity {
    pub fn x_at(&self, i: usize) -> f64 {
        self.x0 + self.dx * i as f64
    }

    /// Inverse-CDF sample with linear interpolation between table nodes.
    pub fn sample(&self, u: f64) -> f64 {
        let idx = self.cdf.partition_point(|&c| c < u);
        if idx == 0 {
            return self.x0;
        }
        if idx >= self.cdf.len() {
            return self.x_at(self.cdf.len() - 1);
        }
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.x_at(idx - 1) + frac * self.dx
    }

    /// Mean of the tabulated density (trapezoid).
    pub fn mean(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.pdf.len() - 1 {
            let x0 = self.x_at(i);
            let x1 = self.x_at(i + 1);
            acc += 0.5 * (self.pdf[i] * x0 + self.pdf[i + 1] * x1) * (x1 - x0);
        }
        acc
    }
}

/// Tabulate the density of X_dt via Filon inversion of the characteristic
/// function on a symmetric z-domain chosen from the decay of |E exp(izX)|.
pub fn increment_density(
    model: &ThetaModel,
    dt: f64,
    cfg: &IncrementGridConfig,
) -> Result<IncrementDensity> {
    if dt <= 0.0 {
        return Err(Error::Domain("dt must be positive".into()));
    }
    let mean = dt * model.dpsi_real(0.0)?;
    let var = dt * model.psi_second_derivative_at_zero();
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::Sampler("increment has zero variance".into()));
    }

    // characteristic function modulus decays like exp(dt Re psi(iz))
    let cf_log_mod = |z: f64| -> Result<f64> {
        Ok(dt * model.psi(Complex64::new(0.0, z))?.re)
    };
    let mut z_max = 1.0 / sd;
    let mut tries = 0;
    while cf_log_mod(z_max)? > -cfg.decay {
        z_max *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::Sampler(
                "characteristic function does not decay; no density table".into(),
            ));
        }
    }

    let grid = FilonGrid::sample_par(0.0, z_max, cfg.z_panels, |z| {
        Ok((dt * model.psi(Complex64::new(0.0, z))?).exp())
    })?;

    let p = cfg.x_points;
    let up = jump_tail_halfwidth(dt, cfg.tail_mass, cfg.sigma_mult * sd, |n| {
        let t = model.coeffs(n);
        (t.a, t.rho)
    });
    let down = jump_tail_halfwidth(dt, cfg.tail_mass, cfg.sigma_mult * sd, |n| {
        let t = model.coeffs(n);
        (t.a_hat, t.rho_hat)
    });
    let x0 = mean - down;
    let dx = (up + down) / (p - 1) as f64;
    let mut pdf: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|j| {
            let x = x0 + dx * j as f64;
            filon_integral(&grid, x).re / std::f64::consts::PI
        })
        .collect();

    // trapezoid mass and clamping of truncation lobes
    let mass = |v: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..v.len() - 1 {
            acc += 0.5 * (v[i] + v[i + 1]) * dx;
        }
        acc
    };
    let raw_mass = mass(&pdf);
    let normalization_defect = raw_mass - 1.0;
    if normalization_defect.abs() > 1e-4 {
        return Err(Error::Sampler(format!(
            "inverted density integrates to {raw_mass}; inversion domain too small"
        )));
    }
    let mut clamped = 0.0;
    for v in pdf.iter_mut() {
        if *v < 0.0 {
            clamped += -*v * dx;
            *v = 0.0;
        }
    }
    if clamped > 1e-5 {
        return Err(Error::Sampler(format!(
            "clamped negative density mass {clamped:.3e} exceeds 1e-5"
        )));
    }

    let mut cdf = Vec::with_capacity(p);
    cdf.push(0.0);
    let mut acc = 0.0;
    for i in 0..p - 1 {
        acc += 0.5 * (pdf[i] + pdf[i + 1]) * dx;
        cdf.push(acc);
    }
    let total = *cdf.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::Sampler("empty density table".into()));
    }
    for c in cdf.iter_mut() {
        *c /= total;
    }
    for v in pdf.iter_mut() {
        *v /= total;
    }
    Ok(IncrementDensity {
        x0,
        dx,
        pdf,
        cdf,
        clamped_mass: clamped,
        normalization_defect,
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

const MC_CHUNK: u64 = 4096;

/// Monte Carlo price over a random walk with exact-in-distribution
/// increments sampled from the tabulated density. Chunks own seed-derived
/// generator streams with a fixed chunk-to-path assignment, so the estimate
/// is bit-reproducible at any worker count.
pub fn price_mc(model: &ThetaModel, req: &PricingRequest) -> Result<PricingResult> {
    req.validate()?;
    let start = Instant::now();
    let mc = req.mc.as_ref().unwrap();
    let t = req.maturity;
    let steps = mc.steps as usize;
    let dt = t / mc.steps as f64;
    let density = increment_density(model, dt, &IncrementGridConfig::default())?;

    let n_chunks = mc.paths.div_ceil(MC_CHUNK);
    let sums: Vec<(f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * MC_CHUNK;
            let hi = (lo + MC_CHUNK).min(mc.paths);
            let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(mc.seed ^ chunk));
            let weight = dt * req.s0;
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for _ in lo..hi {
                let mut z = 0.0;
                let mut acc = 0.0;
                for _ in 0..steps {
                    z += density.sample(rng.gen::<f64>());
                    acc += z.exp();
                }
                let payoff = (weight * acc - req.strike).max(0.0);
                sum += payoff;
                sum2 += payoff * payoff;
            }
            (sum, sum2)
        })
        .collect();

    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for (s1, s2) in sums {
        sum += s1;
        sum2 += s2;
    }
    let n = mc.paths as f64;
    let discount = (-req.rate * t).exp();
    let mean = sum / n;
    let var = ((sum2 - sum * sum / n) / (n - 1.0)).max(0.0);
    let stderr = discount * (var / n).sqrt();

    let diagnostics = Diagnostics {
        clamped_mass: Some(density.clamped_mass),
        ..Default::default()
    };
    Ok(PricingResult {
        price: discount * mean,
        stderr: Some(stderr),
        method: PriceMethod::MonteCarlo.name(),
        n: req.n,
        runtime_seconds: start.elapsed().as_secs_f64(),
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// density experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DensityComparisonPoint {
    pub x: f64,
    pub test: f64,
    pub benchmark: f64,
    pub abs_err: f64,
}

#[derive(Debug, Clone)]
pub struct DensityExperiment {
    pub points: Vec<DensityComparisonPoint>,
    pub max_abs_err: f64,
    /// Worst imaginary residual across both inversions.
    pub imag_residual: f64,
}

/// Invert the density of I_q twice, at a coarse truncation (with or without
/// the tail correction) and at a benchmark truncation, on a common grid and
/// contour, and report the pointwise errors.
pub fn density_experiment(
    model: &ThetaModel,
    q: f64,
    n_test: usize,
    n_benchmark: usize,
    x_grid: &[f64],
    correction: bool,
    quad: &InversionConfig,
) -> Result<DensityExperiment> {
    let solve_cfg = SolveConfig::default();
    let deepest = n_test.max(n_benchmark);
    let roots = solve_real(model, q, deepest, &solve_cfg)?;
    let qc = Complex64::new(q, 0.0);
    let zeta1 = roots.zeta[0].re;
    let c = quad
        .contour_c
        .unwrap_or_else(|| (0.5 * (1.0 + zeta1)).min(1.0));
    let strip = (0.0, 1.0 + zeta1);

    let bench = MellinEval::truncated(model, &roots, qc, n_benchmark)?;
    let test = if correction {
        MellinEval::corrected(model, &roots, qc, n_test)?
    } else {
        MellinEval::truncated(model, &roots, qc, n_test)?
    };

    let p_bench = inverse_mellin_density(&|s| bench.eval(s), c, strip, x_grid, quad)?;
    let p_test = inverse_mellin_density(&|s| test.eval(s), c, strip, x_grid, quad)?;

    let mut points = Vec::with_capacity(x_grid.len());
    let mut max_abs_err = 0.0f64;
    let mut imag_residual = 0.0f64;
    for (b, t) in p_bench.iter().zip(&p_test) {
        let err = (t.p - b.p).abs();
        max_abs_err = max_abs_err.max(err);
        imag_residual = imag_residual.max(b.imag_residual.max(t.imag_residual));
        points.push(DensityComparisonPoint {
            x: b.x,
            test: t.p,
            benchmark: b.p,
            abs_err: err,
        });
    }
    Ok(DensityExperiment {
        points,
        max_abs_err,
        imag_residual,
    })
}

/// Density of I_q on a grid, for the CLI.
pub fn density_curve(
    model: &ThetaModel,
    q: f64,
    n: usize,
    correction: bool,
    x_grid: &[f64],
    quad: &InversionConfig,
) -> Result<Vec<DensityPoint>> {
    let solve_cfg = SolveConfig::default();
    let roots = solve_real(model, q, n, &solve_cfg)?;
    let qc = Complex64::new(q, 0.0);
    let zeta1 = roots.zeta[0].re;
    let c = quad
        .contour_c
        .unwrap_or_else(|| (0.5 * (1.0 + zeta1)).min(1.0));
    let eval = if correction {
        MellinEval::corrected(model, &roots, qc, n)?
    } else {
        MellinEval::truncated(model, &roots, qc, n)?
    };
    inverse_mellin_density(&|s| eval.eval(s), c, (0.0, 1.0 + zeta1), x_grid, quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{set_one, MuMode};
    use crate::quad::QuadProfile;
    use approx::assert_relative_eq;

    fn model1() -> ThetaModel {
        set_one(MuMode::Riskneutral { r: 0.03 }).build().unwrap().0
    }

    fn request(method: PriceMethod, n: usize) -> PricingRequest {
        PricingRequest {
            s0: 100.0,
            strike: 105.0,
            maturity: 1.0,
            rate: 0.03,
            method,
            n,
            quad: QuadProfile::Table.config(),
            mc: None,
        }
    }

    #[test]
    fn zero_strike_reduces_to_closed_form() {
        let m = model1();
        let mut req = request(PriceMethod::Mellin, 10);
        req.strike = 0.0;
        let out = price_algo1(&m, &req).unwrap();
        assert_relative_eq!(
            out.price,
            100.0 * (1.0 - (-0.03f64).exp()) / 0.03,
            epsilon = 1e-10
        );
        assert_relative_eq!(out.price, 98.5148882, epsilon = 1e-6);
        let out2 = price_algo2(&m, &req).unwrap();
        assert!((out.price - out2.price).abs() < 1e-6);
    }

    #[test]
    fn request_validation() {
        let mut req = request(PriceMethod::Mellin, 10);
        req.s0 = -1.0;
        assert!(req.validate().is_err());
        let mut req = request(PriceMethod::MonteCarlo, 10);
        assert!(req.validate().is_err()); // missing MC config
        req.mc = Some(McConfig {
            paths: 0,
            steps: 400,
            seed: 1,
        });
        assert!(req.validate().is_err());
    }

    #[test]
    fn contour_validation() {
        let m = model1();
        let mut req = request(PriceMethod::Mellin, 10);
        req.quad.d2 = 0.01; // below the rate
        assert!(matches!(price_algo1(&m, &req), Err(Error::Contour(_))));
    }

    #[test]
    fn increment_density_normalizes_and_matches_cumulants() {
        let m = model1();
        let dt = 1.0 / 400.0;
        let cfg = IncrementGridConfig {
            x_points: 1 << 15,
            ..Default::default()
        };
        let d = increment_density(&m, dt, &cfg).unwrap();
        assert!(d.normalization_defect.abs() < 1e-4);
        assert!(d.clamped_mass <= 1e-5);
        assert!(d.pdf.iter().all(|&p| p >= 0.0));

        // mean of the table vs dt psi'(0) by central difference
        let h = 1e-3;
        let fd = (m.psi_real(h).unwrap() - m.psi_real(-h).unwrap()) / (2.0 * h);
        assert!(
            (d.mean() - dt * fd).abs() < 1e-5,
            "table mean {} vs dt psi'(0) {}",
            d.mean(),
            dt * fd
        );
    }

    #[test]
    fn mc_seed_determinism_and_zero_strike_consistency() {
        let m = model1();
        let mut req = request(PriceMethod::MonteCarlo, 10);
        req.mc = Some(McConfig {
            paths: 20_000,
            steps: 40,
            seed: 7,
        });
        let a = price_mc(&m, &req).unwrap();
        let b = price_mc(&m, &req).unwrap();
        assert_eq!(a.price.to_bits(), b.price.to_bits());
        assert_eq!(a.stderr.unwrap().to_bits(), b.stderr.unwrap().to_bits());

        req.strike = 0.0;
        let out = price_mc(&m, &req).unwrap();
        let exact = (-0.03f64).exp() * 100.0 * zero_strike_factor(0.03, 1.0);
        let err = out.stderr.unwrap();
        assert!(
            (out.price - exact).abs() <= 3.0 * err,
            "MC {} vs closed form {exact} with stderr {err}",
            out.price
        );
    }

    #[test]
    fn density_experiment_is_zero_against_itself() {
        let m = set_one(MuMode::Fixed { value: 0.1 }).build().unwrap().0;
        let xs: Vec<f64> = (1..=20).map(|i| 0.3 * i as f64).collect();
        let quad = QuadProfile::Fast.config();
        let out = density_experiment(&m, 1.0, 30, 30, &xs, false, &quad).unwrap();
        assert_eq!(out.max_abs_err, 0.0);
    }
}

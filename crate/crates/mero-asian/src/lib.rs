//! Pricing engine for fixed-strike arithmetic Asian options under
//! meromorphic Levy models (theta processes).
//!
//! The engine evaluates the Mellin transform of the exponential functional
//! of the driving process as a product of gamma-function ratios over the
//! roots and poles of psi(z) = q, corrects truncation by matching the first
//! two moments of the omitted tail with a beta variable of the second kind,
//! and recovers densities and option prices by Filon-quadrature inverse
//! Mellin and Laplace transforms. A hyper-exponential truncation of the
//! model and a Monte Carlo sampler provide independent cross-checks.

pub mod error;
pub mod expfunc;
pub mod model;
pub mod pricing;
pub mod quad;
pub mod roots;
pub mod special;

pub use error::{Error, Result};
pub use model::{
    calibrate_gamma, calibrate_mu, levy_density, CoeffTerm, HyperExpModel, LaplaceExponent,
    MeromorphicCoeffs, ModelConfig, ModelKind, MuMode, ThetaModel,
};

/// Initialize the global worker pool, honoring the `MERO_ASIAN_THREADS`
/// environment cap. Later calls (or an already-built pool) are a no-op.
pub fn init_thread_pool() {
    if let Ok(v) = std::env::var("MERO_ASIAN_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

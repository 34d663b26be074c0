//! Photon-number statistics of twin-beam parametric down-conversion emission.
//!
//! A source with `K` Schmidt modes emits, per pulse, `K` independent
//! thermally distributed photon pairs; signal and idler occupations are
//! identical within each mode. The total count over all modes follows a
//! negative-binomial law.

use rand::Rng;

use crate::error::{Error, Result};

/// Omitted probability mass accepted for a certified truncation.
pub const TRUNCATION_TOLERANCE: f64 = 1e-12;

/// Hard cap on automatically chosen truncation orders.
pub const MAX_AUTO_N_MAX: usize = 512;

/// Twin-beam source model: total mean photon number per pulse per beam and
/// the number of Schmidt modes it is spread over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinBeamState {
    mean_total: f64,
    mode_count: u32,
}

impl TwinBeamState {
    pub fn new(mean_total: f64, mode_count: u32) -> Result<Self> {
        if !mean_total.is_finite() || mean_total < 0.0 {
            return Err(Error::InvalidMean(mean_total));
        }
        if mode_count < 1 {
            return Err(Error::InvalidModeCount);
        }
        Ok(Self {
            mean_total,
            mode_count,
        })
    }

    pub fn mean_total(&self) -> f64 {
        self.mean_total
    }

    pub fn mode_count(&self) -> u32 {
        self.mode_count
    }

    pub fn per_mode_mean(&self) -> f64 {
        self.mean_total / f64::from(self.mode_count)
    }

    /// Smallest truncation order whose omitted total-count mass is within
    /// [`TRUNCATION_TOLERANCE`], capped at [`MAX_AUTO_N_MAX`].
    pub fn auto_n_max(&self) -> usize {
        auto_n_max_for_tail(self, TRUNCATION_TOLERANCE)
    }
}

/// Smallest `n_max` with negative-binomial tail mass at or below `tol`,
/// capped at [`MAX_AUTO_N_MAX`]. The cap may leave the tail uncertified;
/// consumers requiring certification must check the resulting bound.
pub fn auto_n_max_for_tail(state: &TwinBeamState, tol: f64) -> usize {
    let lambda = geometric_ratio(state.per_mode_mean());
    if lambda == 0.0 {
        return 0;
    }
    let k = f64::from(state.mode_count());
    let mut p = (1.0 - lambda).powi(state.mode_count() as i32);
    let mut cum = p;
    let mut n = 0usize;
    while 1.0 - cum > tol && n < MAX_AUTO_N_MAX {
        p *= lambda * (n as f64 + k) / (n as f64 + 1.0);
        cum += p;
        n += 1;
    }
    n
}

/// Unconditional second-order correlation of one marginal beam, `1 + 1/K`.
pub fn unconditional_g2_theory(state: &TwinBeamState) -> f64 {
    unconditional_g2_for_modes(f64::from(state.mode_count))
}

/// Same as [`unconditional_g2_theory`] but for a real-valued mode number,
/// as used on the analysis side where measured mode numbers are fractional.
pub fn unconditional_g2_for_modes(mode_count: f64) -> f64 {
    1.0 + 1.0 / mode_count
}

/// Probability vector over Fock numbers `0..=n_max` with a certified bound
/// on the omitted mass.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonNumberDistribution {
    probs: Vec<f64>,
    tail_bound: f64,
}

impl PhotonNumberDistribution {
    /// Builds a distribution from raw probabilities, validating that each
    /// entry is a probability and that total mass accounts to one.
    pub fn new(probs: Vec<f64>, tail_bound: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        for (n, &p) in probs.iter().enumerate() {
            if !(0.0..=1.0 + 1e-12).contains(&p) || !p.is_finite() {
                return Err(Error::InvalidDistribution(format!(
                    "P({n}) = {p} is not a probability"
                )));
            }
        }
        if !(0.0..=1.0).contains(&tail_bound) {
            return Err(Error::InvalidDistribution(format!(
                "tail bound {tail_bound} is not a probability"
            )));
        }
        let total: f64 = probs.iter().sum::<f64>() + tail_bound;
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities plus tail sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs, tail_bound })
    }

    /// Point mass at Fock number `n` on a support up to `n_max`.
    pub fn fock(n: usize, n_max: usize) -> Result<Self> {
        if n > n_max {
            return Err(Error::InvalidDistribution(format!(
                "Fock number {n} exceeds truncation {n_max}"
            )));
        }
        let mut probs = vec![0.0; n_max + 1];
        probs[n] = 1.0;
        Self::new(probs, 0.0)
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn prob(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn is_certified(&self) -> bool {
        self.tail_bound <= TRUNCATION_TOLERANCE
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// Second factorial moment `⟨n(n−1)⟩` of the truncated vector.
    pub fn second_factorial_moment(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| (n * n.saturating_sub(1)) as f64 * p)
            .sum()
    }

    /// Photon-number parity `⟨(−1)^n⟩` of the truncated vector.
    pub fn parity(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| if n % 2 == 0 { *p } else { -*p })
            .sum()
    }

    /// Probability generating function `Σ P(n) x^n` on the truncated support.
    pub fn pgf(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        let mut pow = 1.0;
        for &p in &self.probs {
            acc += p * pow;
            pow *= x;
        }
        acc
    }
}

fn geometric_ratio(mean: f64) -> f64 {
    mean / (1.0 + mean)
}

/// Single-mode thermal (geometric) photon-number distribution truncated at
/// `n_max`, with the exact closed-form tail `λ^(n_max+1)`, `λ = μ/(1+μ)`.
pub fn thermal_pmf(mean: f64, n_max: usize) -> Result<PhotonNumberDistribution> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::InvalidMean(mean));
    }
    let lambda = geometric_ratio(mean);
    let mut probs = Vec::with_capacity(n_max + 1);
    let mut p = 1.0 - lambda;
    for _ in 0..=n_max {
        probs.push(p);
        p *= lambda;
    }
    // exact geometric tail λ^(n_max+1) by plain repeated multiplication
    let mut tail = if lambda > 0.0 { lambda } else { 0.0 };
    for _ in 0..n_max {
        tail *= lambda;
    }
    PhotonNumberDistribution::new(probs, tail)
}

/// Total photon-number distribution over all modes: the K-fold convolution
/// of per-mode thermals, i.e. a negative binomial with `K = mode_count` and
/// per-mode mean `mean_total / K`. Reduces to [`thermal_pmf`] for `K = 1`.
pub fn multimode_total_pmf(
    state: &TwinBeamState,
    n_max: usize,
) -> Result<PhotonNumberDistribution> {
    let lambda = geometric_ratio(state.per_mode_mean());
    let k = f64::from(state.mode_count());
    let mut probs = Vec::with_capacity(n_max + 1);
    let mut p = (1.0 - lambda).powi(state.mode_count() as i32);
    for n in 0..=n_max {
        probs.push(p);
        p *= lambda * (n as f64 + k) / (n as f64 + 1.0);
    }
    let tail = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    PhotonNumberDistribution::new(probs, tail)
}

/// Exact inverse-CDF sampler for the geometric (thermal) law.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GeometricSampler {
    inv_ln_lambda: f64,
    vacuum: bool,
}

impl GeometricSampler {
    pub(crate) fn new(mean: f64) -> Self {
        let lambda = geometric_ratio(mean);
        Self {
            inv_ln_lambda: if lambda > 0.0 {
                1.0 / lambda.ln()
            } else {
                0.0
            },
            vacuum: lambda == 0.0,
        }
    }

    #[inline]
    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        if self.vacuum {
            return 0;
        }
        // CDF(n) = 1 − λ^(n+1): the inverse is floor(ln(1−u)/ln λ)
        ((1.0 - u).ln() * self.inv_ln_lambda) as u64
    }
}

/// Draws one pulse's per-mode occupations. The same vector applies to the
/// signal and idler beams (perfect pair correlation).
pub fn sample_mode_occupations<R: Rng + ?Sized>(state: &TwinBeamState, rng: &mut R) -> Vec<u64> {
    let sampler = GeometricSampler::new(state.per_mode_mean());
    (0..state.mode_count()).map(|_| sampler.sample(rng)).collect()
}

//! Multiplexed click-detector model: the diagonal POVM of an N-bin
//! click/no-click detection system with lumped efficiency and dark counts,
//! its two-bin reduction and Taylor expansion, and the binomial loss channel.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::photon_statistics::PhotonNumberDistribution;

/// Parameters of an N-bin multiplexed click-detection system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickDetectorConfig {
    bins: u32,
    efficiency: f64,
    dark_prob: f64,
}

impl ClickDetectorConfig {
    pub fn new(bins: u32, efficiency: f64, dark_prob: f64) -> Result<Self> {
        if bins < 1 {
            return Err(Error::InvalidBinCount);
        }
        if !(0.0..=1.0).contains(&efficiency) || !efficiency.is_finite() {
            return Err(Error::InvalidProbability {
                name: "efficiency",
                value: efficiency,
            });
        }
        if !dark_prob.is_finite() || dark_prob < 0.0 {
            return Err(Error::InvalidDarkProb(dark_prob));
        }
        Ok(Self {
            bins,
            efficiency,
            dark_prob,
        })
    }

    pub fn bins(&self) -> u32 {
        self.bins
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    pub fn dark_prob(&self) -> f64 {
        self.dark_prob
    }
}

/// Diagonal weights of the k-click POVM element over Fock numbers
/// `0..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct POVMDiagonal {
    clicks: u32,
    weights: Vec<f64>,
}

impl POVMDiagonal {
    pub fn clicks(&self) -> u32 {
        self.clicks
    }

    pub fn n_max(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn weight(&self, n: usize) -> f64 {
        self.weights.get(n).copied().unwrap_or(0.0)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Diagonal of the k-click POVM element for an N-bin system:
///
/// `w_k(n) = Σ_{m=0}^{k} C(N,k) C(k,m) (−1)^m e^{−(ν/N)(N+m−k)} (1 − (η/N)(N+m−k))^n`
pub fn povm_click_diagonal(
    config: &ClickDetectorConfig,
    k: u32,
    n_max: usize,
) -> Result<POVMDiagonal> {
    if k > config.bins {
        return Err(Error::ClickCountOutOfRange {
            clicks: k,
            bins: config.bins,
        });
    }
    let n_bins = f64::from(config.bins);
    let eta = config.efficiency;
    let nu = config.dark_prob;
    let choose_nk = binomial_f64(u64::from(config.bins), u64::from(k));

    // per-m constant coefficient and geometric base
    let terms: Vec<(f64, f64)> = (0..=k)
        .map(|m| {
            let occupied = n_bins + f64::from(m) - f64::from(k);
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let coeff = sign
                * choose_nk
                * binomial_f64(u64::from(k), u64::from(m))
                * (-(nu / n_bins) * occupied).exp();
            let base = 1.0 - (eta / n_bins) * occupied;
            (coeff, base)
        })
        .collect();

    let mut weights = Vec::with_capacity(n_max + 1);
    let mut powers: Vec<f64> = vec![1.0; terms.len()];
    for _ in 0..=n_max {
        let w: f64 = terms.iter().zip(&powers).map(|(&(c, _), &p)| c * p).sum();
        weights.push(w);
        for (pow, &(_, base)) in powers.iter_mut().zip(&terms) {
            *pow *= base;
        }
    }
    Ok(POVMDiagonal { clicks: k, weights })
}

/// Closed-form single-click element for two bins without dark counts:
/// `w_1(n) = 2[(1 − η/2)^n − (1 − η)^n]`.
pub fn reduced_o1_diagonal(efficiency: f64, n_max: usize) -> Result<POVMDiagonal> {
    if !(0.0..=1.0).contains(&efficiency) || !efficiency.is_finite() {
        return Err(Error::InvalidProbability {
            name: "efficiency",
            value: efficiency,
        });
    }
    let mut weights = Vec::with_capacity(n_max + 1);
    let (mut half, mut full) = (1.0, 1.0);
    for _ in 0..=n_max {
        weights.push(2.0 * (half - full));
        half *= 1.0 - efficiency / 2.0;
        full *= 1.0 - efficiency;
    }
    Ok(POVMDiagonal { clicks: 1, weights })
}

/// Low-order expansion of the reduced single-click element in falling
/// factorials of the photon number.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorO1Series {
    coefficients: Vec<f64>,
}

impl TaylorO1Series {
    /// Coefficients applied to `n`, `n(n−1)`, ... in that order.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn evaluate(&self, n: u64) -> f64 {
        let mut acc = 0.0;
        let mut falling = 1.0;
        for (j, &c) in self.coefficients.iter().enumerate() {
            falling *= (n as f64) - j as f64;
            if falling <= 0.0 {
                break;
            }
            acc += c * falling;
        }
        acc
    }
}

/// Expansion coefficients of the reduced single-click element:
/// `{η}` at order 1, `{η, −(3/4)η²}` at order 2.
pub fn taylor_o1_coefficients(efficiency: f64, order: u32) -> Result<TaylorO1Series> {
    if !(0.0..=1.0).contains(&efficiency) || !efficiency.is_finite() {
        return Err(Error::InvalidProbability {
            name: "efficiency",
            value: efficiency,
        });
    }
    let coefficients = match order {
        1 => vec![efficiency],
        2 => vec![efficiency, -0.75 * efficiency * efficiency],
        other => return Err(Error::UnsupportedTaylorOrder(other)),
    };
    Ok(TaylorO1Series { coefficients })
}

/// Applies a Bernoulli loss channel with the given transmission:
/// `P'(m) = Σ_{n≥m} P(n) C(n,m) t^m (1−t)^(n−m)`.
pub fn binomial_loss_transform(
    dist: &PhotonNumberDistribution,
    transmission: f64,
) -> Result<PhotonNumberDistribution> {
    if !(0.0..=1.0).contains(&transmission) || !transmission.is_finite() {
        return Err(Error::InvalidProbability {
            name: "transmission",
            value: transmission,
        });
    }
    let n_max = dist.n_max();
    if transmission == 1.0 {
        return PhotonNumberDistribution::new(dist.probs().to_vec(), dist.tail_bound());
    }
    let mut probs = vec![0.0; n_max + 1];
    if transmission == 0.0 {
        probs[0] = dist.probs().iter().sum::<f64>();
    } else {
        let ln_t = transmission.ln();
        let ln_q = (1.0 - transmission).ln();
        for (n, &p) in dist.probs().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for m in 0..=n {
                let term = if n <= 64 {
                    binomial_f64(n as u64, m as u64)
                        * transmission.powi(m as i32)
                        * (1.0 - transmission).powi((n - m) as i32)
                } else {
                    (ln_binomial(n as u64, m as u64) + m as f64 * ln_t + (n - m) as f64 * ln_q)
                        .exp()
                };
                probs[m] += p * term;
            }
        }
    }
    // the transform conserves the truncated mass, so the omitted-mass bound
    // carries over unchanged
    PhotonNumberDistribution::new(probs, dist.tail_bound())
}

/// Expectation of a POVM diagonal over a photon-number distribution.
pub fn povm_expectation(dist: &PhotonNumberDistribution, povm: &POVMDiagonal) -> Result<f64> {
    if dist.n_max() != povm.n_max() {
        return Err(Error::TruncationMismatch {
            left: dist.n_max(),
            right: povm.n_max(),
        });
    }
    Ok(dist
        .probs()
        .iter()
        .zip(povm.weights())
        .map(|(&p, &w)| p * w)
        .sum())
}

/// Probability of observing exactly `k` clicks on the given distribution;
/// the POVM is evaluated at the distribution's truncation order.
pub fn click_probability(
    dist: &PhotonNumberDistribution,
    config: &ClickDetectorConfig,
    k: u32,
) -> Result<f64> {
    let povm = povm_click_diagonal(config, k, dist.n_max())?;
    Ok(povm_expectation(dist, &povm)?.clamp(0.0, 1.0))
}

/// Binomial coefficient as a float: exact integer arithmetic up to n = 64,
/// log-gamma evaluation beyond.
pub(crate) fn binomial_f64(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    if n <= 64 {
        let mut acc: u128 = 1;
        for i in 1..=k as u128 {
            acc = acc * (n as u128 - k as u128 + i) / i;
        }
        acc as f64
    } else {
        ln_binomial(n, k).exp()
    }
}

pub(crate) fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

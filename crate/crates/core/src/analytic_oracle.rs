//! Exact per-pulse click probabilities and heralded-state observables for
//! the twin-beam + click-detector model.
//!
//! All joint click probabilities come from inclusion–exclusion over the
//! three detectors (herald, signal bin 1, signal bin 2), evaluated per total
//! photon number with per-photon routing closed forms. The truncation is
//! certified: computations refuse to run when the omitted mass exceeds
//! [`TRUNCATION_TOLERANCE`](crate::photon_statistics::TRUNCATION_TOLERANCE).

use crate::error::{Error, Result};
use crate::estimators::{mean_photon_first_value, mean_photon_second_value, parity_value};
use crate::photon_statistics::{
    auto_n_max_for_tail, multimode_total_pmf, PhotonNumberDistribution, TwinBeamState,
    TRUNCATION_TOLERANCE,
};

/// Detector-subset bit for the herald (idler) channel.
const I: usize = 0b100;
/// Detector-subset bit for signal bin 1.
const S1: usize = 0b010;
/// Detector-subset bit for signal bin 2.
const S2: usize = 0b001;

/// Truncation orders beyond this are refused even for internal extension.
const EXTENSION_CAP: usize = 8192;

/// Full experiment topology: twin-beam source, lumped herald-arm and
/// signal-arm efficiencies, signal splitting ratio and per-gate dark-count
/// probability.
///
/// The dark-count probability is split over the physical bins: the herald
/// bin carries `dark_prob`, each signal bin `dark_prob / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentModel {
    source: TwinBeamState,
    eta_idler: f64,
    eta_signal: f64,
    signal_split: f64,
    dark_prob: f64,
    n_max: usize,
}

impl ExperimentModel {
    /// Builds a model with a 50:50 signal split, no dark counts and an
    /// automatically certified truncation order.
    pub fn new(source: TwinBeamState, eta_idler: f64, eta_signal: f64) -> Result<Self> {
        for (name, value) in [("eta_idler", eta_idler), ("eta_signal", eta_signal)] {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(Error::InvalidProbability { name, value });
            }
        }
        Ok(Self {
            source,
            eta_idler,
            eta_signal,
            signal_split: 0.5,
            dark_prob: 0.0,
            n_max: source.auto_n_max(),
        })
    }

    pub fn with_signal_split(mut self, split: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&split) || !split.is_finite() {
            return Err(Error::InvalidProbability {
                name: "signal_split",
                value: split,
            });
        }
        self.signal_split = split;
        Ok(self)
    }

    pub fn with_dark_prob(mut self, dark_prob: f64) -> Result<Self> {
        if !dark_prob.is_finite() || dark_prob < 0.0 || dark_prob > 1.0 {
            return Err(Error::InvalidDarkProb(dark_prob));
        }
        self.dark_prob = dark_prob;
        Ok(self)
    }

    /// Overrides the automatic truncation order.
    pub fn with_n_max(mut self, n_max: usize) -> Self {
        self.n_max = n_max;
        self
    }

    /// Same topology at a different source brightness; the truncation order
    /// is re-derived automatically.
    pub fn with_mean_total(&self, mean_total: f64) -> Result<Self> {
        let source = TwinBeamState::new(mean_total, self.source.mode_count())?;
        Ok(Self {
            source,
            n_max: source.auto_n_max(),
            ..*self
        })
    }

    /// Same topology at a different herald-arm efficiency.
    pub fn with_eta_idler(&self, eta_idler: f64) -> Result<Self> {
        Self::new(self.source, eta_idler, self.eta_signal)
            .map(|m| Self { n_max: self.n_max, signal_split: self.signal_split, dark_prob: self.dark_prob, ..m })
    }

    /// Same topology at a different signal-arm efficiency.
    pub fn with_eta_signal(&self, eta_signal: f64) -> Result<Self> {
        Self::new(self.source, self.eta_idler, eta_signal)
            .map(|m| Self { n_max: self.n_max, signal_split: self.signal_split, dark_prob: self.dark_prob, ..m })
    }

    pub fn source(&self) -> &TwinBeamState {
        &self.source
    }

    pub fn eta_idler(&self) -> f64 {
        self.eta_idler
    }

    pub fn eta_signal(&self) -> f64 {
        self.eta_signal
    }

    pub fn signal_split(&self) -> f64 {
        self.signal_split
    }

    pub fn dark_prob(&self) -> f64 {
        self.dark_prob
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Per-gate dark-click probability of the herald bin.
    pub fn dark_prob_idler_bin(&self) -> f64 {
        self.dark_prob
    }

    /// Per-gate dark-click probability of each signal bin.
    pub fn dark_prob_signal_bin(&self) -> f64 {
        self.dark_prob / 2.0
    }

    /// Per-photon no-click factors for a detector subset: the probability
    /// that one idler photon avoids the subset and that one signal photon
    /// avoids it.
    fn subset_avoidance(&self, subset: usize) -> f64 {
        let idler = if subset & I != 0 {
            1.0 - self.eta_idler
        } else {
            1.0
        };
        let mut routed = 0.0;
        if subset & S1 != 0 {
            routed += self.signal_split;
        }
        if subset & S2 != 0 {
            routed += 1.0 - self.signal_split;
        }
        idler * (1.0 - self.eta_signal * routed)
    }

    /// Dark-count no-click factor for a detector subset.
    fn subset_dark_silence(&self, subset: usize) -> f64 {
        let mut f = 1.0;
        if subset & I != 0 {
            f *= 1.0 - self.dark_prob_idler_bin();
        }
        if subset & S1 != 0 {
            f *= 1.0 - self.dark_prob_signal_bin();
        }
        if subset & S2 != 0 {
            f *= 1.0 - self.dark_prob_signal_bin();
        }
        f
    }
}

/// Exact per-pulse click and coincidence probabilities of a model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PulseProbabilities {
    /// Herald (idler) click.
    pub p_i: f64,
    /// Signal bin 1 click.
    pub p_s1: f64,
    /// Signal bin 2 click.
    pub p_s2: f64,
    /// Herald and signal bin 1.
    pub p_is1: f64,
    /// Herald and signal bin 2.
    pub p_is2: f64,
    /// Both signal bins.
    pub p_s1s2: f64,
    /// Herald and both signal bins.
    pub p_is1s2: f64,
    /// Herald and at least one signal bin.
    pub p_coinc: f64,
}

impl PulseProbabilities {
    /// Probability of a click on either signal bin.
    pub fn p_s_any(&self) -> f64 {
        self.p_s1 + self.p_s2 - self.p_s1s2
    }

    /// The eight probabilities in a fixed order, for grid comparisons.
    pub fn tracked(&self) -> [(&'static str, f64); 8] {
        [
            ("p_i", self.p_i),
            ("p_s1", self.p_s1),
            ("p_s2", self.p_s2),
            ("p_is1", self.p_is1),
            ("p_is2", self.p_is2),
            ("p_s1s2", self.p_s1s2),
            ("p_is1s2", self.p_is1s2),
            ("p_coinc", self.p_coinc),
        ]
    }
}

/// Evaluates all tracked per-pulse probabilities by inclusion–exclusion
/// over detector subsets, weighted by the total photon-number law.
pub fn pulse_probabilities(model: &ExperimentModel) -> Result<PulseProbabilities> {
    let dist = multimode_total_pmf(model.source(), model.n_max())?;
    if !dist.is_certified() {
        return Err(Error::TruncationUncertified {
            tail_bound: dist.tail_bound(),
            tolerance: TRUNCATION_TOLERANCE,
        });
    }

    let bases: [f64; 8] = std::array::from_fn(|s| model.subset_avoidance(s));
    let silence: [f64; 8] = std::array::from_fn(|s| model.subset_dark_silence(s));

    let mut pow = [1.0f64; 8];
    let mut acc = PulseProbabilities::default();
    for &p in dist.probs() {
        let nc = |s: usize| silence[s] * pow[s];
        acc.p_i += p * (1.0 - nc(I));
        acc.p_s1 += p * (1.0 - nc(S1));
        acc.p_s2 += p * (1.0 - nc(S2));
        acc.p_is1 += p * (1.0 - nc(I) - nc(S1) + nc(I | S1));
        acc.p_is2 += p * (1.0 - nc(I) - nc(S2) + nc(I | S2));
        acc.p_s1s2 += p * (1.0 - nc(S1) - nc(S2) + nc(S1 | S2));
        acc.p_is1s2 += p
            * (1.0 - nc(I) - nc(S1) - nc(S2)
                + nc(I | S1)
                + nc(I | S2)
                + nc(S1 | S2)
                - nc(I | S1 | S2));
        acc.p_coinc += p * (1.0 - nc(I) - nc(S1 | S2) + nc(I | S1 | S2));
        for (pw, &b) in pow.iter_mut().zip(&bases) {
            *pw *= b;
        }
    }
    Ok(acc)
}

/// Coincidences-to-accidentals ratio of the model, with the signal treated
/// as one logical detector (a click on either bin).
pub fn car_theory(model: &ExperimentModel) -> Result<f64> {
    let p = pulse_probabilities(model)?;
    let denom = p.p_i * p.p_s_any();
    if denom <= 0.0 {
        return Err(Error::UndefinedResult {
            quantity: "CAR",
            reason: "singles probability product is zero".into(),
        });
    }
    Ok(p.p_coinc / denom)
}

/// Heralded second-order correlation of the model,
/// `g²ₕ = p_i · p_is1s2 / (p_is1 · p_is2)`.
pub fn g2h_theory(model: &ExperimentModel) -> Result<f64> {
    let p = pulse_probabilities(model)?;
    if p.p_is1 <= 0.0 || p.p_is2 <= 0.0 {
        return Err(Error::UndefinedResult {
            quantity: "heralded g²",
            reason: "herald-signal coincidence probability is zero".into(),
        });
    }
    Ok(p.p_i * p.p_is1s2 / (p.p_is1 * p.p_is2))
}

/// Signal photon-number distribution at the source output conditioned on a
/// herald click: `P(n | herald) ∝ P(n) (1 − (1−ν)(1−η_i)^n)`.
///
/// The truncation is extended internally until the conditional omitted mass
/// is certified.
pub fn heralded_state(model: &ExperimentModel) -> Result<PhotonNumberDistribution> {
    let mut n_max = model.n_max();
    loop {
        let dist = multimode_total_pmf(model.source(), n_max)?;
        if !dist.is_certified() {
            return Err(Error::TruncationUncertified {
                tail_bound: dist.tail_bound(),
                tolerance: TRUNCATION_TOLERANCE,
            });
        }
        let beta = 1.0 - model.eta_idler();
        let silent = 1.0 - model.dark_prob_idler_bin();
        let mut numerators = Vec::with_capacity(n_max + 1);
        let mut pow = 1.0;
        for &p in dist.probs() {
            numerators.push(p * (1.0 - silent * pow));
            pow *= beta;
        }
        let norm: f64 = numerators.iter().sum();
        if norm <= 0.0 {
            return Err(Error::UndefinedResult {
                quantity: "heralded state",
                reason: "herald click probability is zero".into(),
            });
        }
        let conditional_tail = dist.tail_bound() / norm;
        if conditional_tail <= TRUNCATION_TOLERANCE {
            for q in &mut numerators {
                *q /= norm;
            }
            return PhotonNumberDistribution::new(numerators, conditional_tail);
        }
        if n_max >= EXTENSION_CAP {
            return Err(Error::TruncationUncertified {
                tail_bound: conditional_tail,
                tolerance: TRUNCATION_TOLERANCE,
            });
        }
        n_max = (n_max.max(8) * 2).min(EXTENSION_CAP);
    }
}

/// Exact conditional mean photon number and photon-number parity of the
/// heralded state.
pub fn heralded_mean_and_parity_theory(model: &ExperimentModel) -> Result<(f64, f64)> {
    let state = heralded_state(model)?;
    Ok((state.mean(), state.parity()))
}

/// One grid point of the theory sweep: exact observables next to the
/// count-estimator formulas evaluated on the exact probabilities.
/// Quantities that are undefined at the grid point come back as `None`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TheoryPoint {
    pub mean_total: f64,
    pub car: Option<f64>,
    pub g2_unconditional: Option<f64>,
    pub g2_heralded: Option<f64>,
    pub mu_s_raw: Option<f64>,
    pub mu_i_raw: Option<f64>,
    pub mean_n_exact: Option<f64>,
    pub parity_exact: Option<f64>,
    pub mean_n_first: Option<f64>,
    pub mean_n_second: Option<f64>,
    pub parity_second: Option<f64>,
}

/// Evaluates a full theory row at one operating point.
pub fn theory_point(model: &ExperimentModel) -> Result<TheoryPoint> {
    let p = pulse_probabilities(model)?;
    let mut row = TheoryPoint {
        mean_total: model.source().mean_total(),
        ..TheoryPoint::default()
    };

    let p_s = p.p_s_any();
    if p.p_i > 0.0 && p_s > 0.0 {
        let car = p.p_coinc / (p.p_i * p_s);
        row.car = Some(car);
        row.mu_s_raw = Some(p.p_coinc / p.p_i);
        row.mu_i_raw = Some(p.p_coinc / p_s);
        row.mean_n_first = mean_photon_first_value(car).ok();
    }
    if p.p_s1 > 0.0 && p.p_s2 > 0.0 {
        row.g2_unconditional = Some(p.p_s1s2 / (p.p_s1 * p.p_s2));
    }
    if p.p_is1 > 0.0 && p.p_is2 > 0.0 {
        let g2h = p.p_i * p.p_is1s2 / (p.p_is1 * p.p_is2);
        row.g2_heralded = Some(g2h);
        if let (Some(mu_s), Some(mu_i)) = (row.mu_s_raw, row.mu_i_raw) {
            // corrected coefficients subtract the accidental probability
            let mu_sc = mu_s - p_s;
            let _ = mu_i;
            if let Ok(n2) = mean_photon_second_value(g2h, mu_s, mu_sc) {
                row.mean_n_second = Some(n2);
                row.parity_second = Some(parity_value(n2, g2h));
            }
        }
    }
    if let Ok((mean, parity)) = heralded_mean_and_parity_theory(model) {
        row.mean_n_exact = Some(mean);
        row.parity_exact = Some(parity);
    }
    Ok(row)
}

/// Finds the source brightness at which the model's CAR equals `target`,
/// by bisection on the (monotone) CAR–brightness relation.
pub fn tune_mean_for_car(model: &ExperimentModel, target: f64) -> Result<f64> {
    if !(target > 1.0) {
        return Err(Error::OutOfDomain {
            quantity: "CAR target",
            bound: "target > 1".into(),
        });
    }
    let mut lo = 1e-9; // high CAR end
    let mut hi = 10.0; // low CAR end
    let car_at = |mean: f64| -> Result<f64> { car_theory(&model.with_mean_total(mean)?) };
    if car_at(lo)? < target {
        return Err(Error::OutOfDomain {
            quantity: "CAR target",
            bound: format!("target {target} above reachable range"),
        });
    }
    if car_at(hi)? > target {
        return Err(Error::OutOfDomain {
            quantity: "CAR target",
            bound: format!("target {target} below reachable range"),
        });
    }
    for _ in 0..200 {
        let mid = (lo.ln() + hi.ln()).mul_add(0.5, 0.0).exp();
        let car = car_at(mid)?;
        if (car - target).abs() <= 1e-12 * target {
            return Ok(mid);
        }
        if car > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) / hi < 1e-15 {
            break;
        }
    }
    Ok((lo.ln() + hi.ln()).mul_add(0.5, 0.0).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
        assert!(
            (actual - expected).abs() <= tol,
            "{what}: {actual} vs {expected} (tol {tol})"
        );
    }

    fn paper_point_model(mean: f64) -> ExperimentModel {
        let source = TwinBeamState::new(mean, 1).unwrap();
        ExperimentModel::new(source, 0.321, 0.378).unwrap()
    }

    /// Independent route to the subset no-click probabilities: the
    /// negative-binomial probability generating function in closed form.
    fn pgf_no_click(model: &ExperimentModel, subset: usize) -> f64 {
        let per_mode = model.source().per_mode_mean();
        let lambda = per_mode / (1.0 + per_mode);
        let b = model.subset_avoidance(subset);
        let d = model.subset_dark_silence(subset);
        d * ((1.0 - lambda) / (1.0 - lambda * b)).powi(model.source().mode_count() as i32)
    }

    #[test]
    fn dark_source_yields_no_clicks() {
        let model = paper_point_model(0.0);
        let p = pulse_probabilities(&model).unwrap();
        for (name, value) in p.tracked() {
            assert_close(value, 0.0, 1e-15, name);
        }
    }

    #[test]
    fn herald_probability_matches_geometric_closed_form() {
        // 1 − (1−λ)/(1−λ(1−η_i)) with λ = mean/(1+mean)
        let model = paper_point_model(0.01);
        let p = pulse_probabilities(&model).unwrap();
        let lambda = 0.01 / 1.01;
        let expected = 1.0 - (1.0 - lambda) / (1.0 - lambda * (1.0 - 0.321));
        assert_close(p.p_i, expected, 1e-15, "herald click probability");
        assert_close(p.p_i, 3.199728e-3, 1e-9, "frozen value");

        // signal bin 1 sees absorption η_s × split = 0.189
        let expected_s1 = 1.0 - (1.0 - lambda) / (1.0 - lambda * (1.0 - 0.189));
        assert_close(p.p_s1, expected_s1, 1e-15, "signal bin 1 probability");
    }

    #[test]
    fn probabilities_match_pgf_route() {
        for &(mean, k) in &[(0.005, 1u32), (0.05, 1), (0.2, 2), (0.5, 5)] {
            let source = TwinBeamState::new(mean, k).unwrap();
            let model = ExperimentModel::new(source, 0.321, 0.378)
                .unwrap()
                .with_dark_prob(1e-8)
                .unwrap();
            let p = pulse_probabilities(&model).unwrap();
            let nc = |s: usize| pgf_no_click(&model, s);
            assert_close(p.p_i, 1.0 - nc(I), 5e-12, "p_i");
            assert_close(p.p_s1, 1.0 - nc(S1), 5e-12, "p_s1");
            assert_close(
                p.p_is1,
                1.0 - nc(I) - nc(S1) + nc(I | S1),
                5e-12,
                "p_is1",
            );
            assert_close(
                p.p_s1s2,
                1.0 - nc(S1) - nc(S2) + nc(S1 | S2),
                5e-12,
                "p_s1s2",
            );
            assert_close(
                p.p_is1s2,
                1.0 - nc(I) - nc(S1) - nc(S2) + nc(I | S1) + nc(I | S2) + nc(S1 | S2)
                    - nc(I | S1 | S2),
                5e-12,
                "p_is1s2",
            );
            assert_close(
                p.p_coinc,
                1.0 - nc(I) - nc(S1 | S2) + nc(I | S1 | S2),
                5e-12,
                "p_coinc",
            );
        }
    }

    #[test]
    fn probabilities_match_exhaustive_routing_enumeration() {
        // brute force for one mode: enumerate idler detections and the
        // multinomial signal routing per total photon number
        let model = paper_point_model(0.05);
        let p = pulse_probabilities(&model).unwrap();
        let lambda: f64 = 0.05 / 1.05;
        let (eta_i, eta_s, split) = (0.321, 0.378, 0.5);
        let mut brute = PulseProbabilities::default();
        for n in 0..=60usize {
            let pn = (1.0 - lambda) * lambda.powi(n as i32);
            let p_idler = 1.0 - (1.0 - eta_i).powi(n as i32);
            // joint signal-bin outcome by multinomial enumeration
            let (mut s1_any, mut s2_any, mut both) = (0.0, 0.0, 0.0);
            for k1 in 0..=n {
                for k2 in 0..=(n - k1) {
                    let lost = n - k1 - k2;
                    let ways = crate::detector_model::binomial_f64(n as u64, k1 as u64)
                        * crate::detector_model::binomial_f64((n - k1) as u64, k2 as u64);
                    let prob = ways
                        * (eta_s * split).powi(k1 as i32)
                        * (eta_s * (1.0 - split)).powi(k2 as i32)
                        * (1.0 - eta_s).powi(lost as i32);
                    if k1 > 0 {
                        s1_any += prob;
                    }
                    if k2 > 0 {
                        s2_any += prob;
                    }
                    if k1 > 0 && k2 > 0 {
                        both += prob;
                    }
                }
            }
            brute.p_i += pn * p_idler;
            brute.p_s1 += pn * s1_any;
            brute.p_s2 += pn * s2_any;
            brute.p_s1s2 += pn * both;
            brute.p_is1 += pn * p_idler * s1_any;
            brute.p_is2 += pn * p_idler * s2_any;
            brute.p_is1s2 += pn * p_idler * both;
            brute.p_coinc += pn * p_idler * (s1_any + s2_any - both);
        }
        for ((name, got), (_, want)) in p.tracked().iter().zip(brute.tracked().iter()) {
            assert_close(*got, *want, 1e-12, name);
        }
    }

    #[test]
    fn probabilities_satisfy_subset_bounds() {
        for &(mean, k, nu) in &[(0.01, 1u32, 0.0), (0.3, 2, 1e-3), (2.0, 4, 1e-2)] {
            let source = TwinBeamState::new(mean, k).unwrap();
            let model = ExperimentModel::new(source, 0.6, 0.7)
                .unwrap()
                .with_dark_prob(nu)
                .unwrap();
            let p = pulse_probabilities(&model).unwrap();
            for (name, value) in p.tracked() {
                assert!((0.0..=1.0).contains(&value), "{name} = {value}");
            }
            assert!(p.p_is1s2 <= p.p_is1.min(p.p_is2) + 1e-15);
            assert!(p.p_coinc <= p.p_i.min(p.p_s1 + p.p_s2) + 1e-15);
        }
    }

    #[test]
    fn uncertified_truncation_is_refused() {
        let model = paper_point_model(50.0);
        assert!(matches!(
            pulse_probabilities(&model),
            Err(Error::TruncationUncertified { .. })
        ));
    }

    #[test]
    fn car_saturates_at_high_gain() {
        let model = paper_point_model(50.0).with_n_max(4096);
        let car = car_theory(&model).unwrap();
        assert!(car < 1.1, "CAR at mean 50 should be near 1, got {car}");
        assert!(car > 1.0);
    }

    #[test]
    fn car_follows_inverse_power_law() {
        let model = paper_point_model(1.0);
        let mut points = Vec::new();
        for i in 0..=12 {
            let mean = 1e-4 * 10f64.powf(i as f64 / 12.0);
            let car = car_theory(&model.with_mean_total(mean).unwrap()).unwrap();
            points.push((mean.ln(), car.ln()));
        }
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert_close(slope, -1.0, 0.01, "log-log slope");
    }

    #[test]
    fn tuner_hits_paper_operating_point() {
        let model = paper_point_model(1.0);
        let mean = tune_mean_for_car(&model, 97.14).unwrap();
        let car = car_theory(&model.with_mean_total(mean).unwrap()).unwrap();
        assert_close(car / 97.14, 1.0, 1e-9, "tuned CAR");
        // brightness sits in the low-gain regime, around 1/CAR
        assert!(mean > 5e-3 && mean < 2e-2, "tuned mean {mean}");
    }

    #[test]
    fn g2h_vanishes_at_zero_gain_limit() {
        let model = paper_point_model(1e-6);
        let g2h = g2h_theory(&model).unwrap();
        assert!(g2h < 1e-5, "g²ₕ should vanish for mean → 0, got {g2h}");
    }

    #[test]
    fn g2h_decreases_with_signal_efficiency() {
        // at fixed source and herald arm the dependence is weak but strictly
        // monotone
        let model = paper_point_model(0.0103);
        let grid = [0.01, 0.1, 0.321, 0.7, 1.0];
        let values: Vec<f64> = grid
            .iter()
            .map(|&eta| g2h_theory(&model.with_eta_signal(eta).unwrap()).unwrap())
            .collect();
        for pair in values.windows(2) {
            assert!(
                pair[1] < pair[0],
                "g²ₕ not decreasing in η_signal: {values:?}"
            );
        }
    }

    #[test]
    fn g2h_band_over_herald_efficiency_brackets_paper_value() {
        let base = paper_point_model(1.0);
        let mean = tune_mean_for_car(&base, 97.14).unwrap();
        let at_eta = |eta: f64| {
            let model = base.with_mean_total(mean).unwrap().with_eta_idler(eta).unwrap();
            g2h_theory(&model).unwrap()
        };
        let lo_eff = at_eta(0.01);
        let hi_eff = at_eta(1.0);
        assert!(
            hi_eff < 2.84e-2 && 2.84e-2 < lo_eff,
            "band [{hi_eff}, {lo_eff}] should bracket 2.84e-2"
        );
        // monotone decreasing in the herald efficiency
        let grid = [0.01, 0.1, 0.321, 0.7, 1.0];
        let values: Vec<f64> = grid.iter().map(|&e| at_eta(e)).collect();
        for pair in values.windows(2) {
            assert!(pair[1] < pair[0], "band not monotone: {values:?}");
        }
    }

    #[test]
    fn heralded_state_structure() {
        let model = paper_point_model(0.01);
        let state = heralded_state(&model).unwrap();
        assert_close(state.probs().iter().sum::<f64>(), 1.0, 1e-12, "normalization");
        // twin-beam correlation forbids heralding vacuum without dark counts
        assert_close(state.prob(0), 0.0, 1e-15, "P(0 | herald)");
        // ratio P(2|h)/P(1|h) = λ(1 − (1−η_i)²)/η_i
        let lambda = 0.01 / 1.01;
        let expected = lambda * (1.0 - (1.0 - 0.321f64).powi(2)) / 0.321;
        assert_close(state.prob(2) / state.prob(1), expected, 1e-12, "two-photon ratio");
    }

    #[test]
    fn heralded_state_approaches_single_photon() {
        let model = paper_point_model(1e-7);
        let state = heralded_state(&model).unwrap();
        assert!(state.prob(1) > 1.0 - 1e-6);
        let (mean, parity) = heralded_mean_and_parity_theory(&model).unwrap();
        assert_close(mean, 1.0, 1e-6, "conditional mean");
        assert_close(parity, -1.0, 1e-6, "conditional parity");
    }

    #[test]
    fn heralded_parity_definition_consistency() {
        let model = paper_point_model(0.0103);
        let state = heralded_state(&model).unwrap();
        let odd_mass: f64 = state
            .probs()
            .iter()
            .enumerate()
            .filter(|(n, _)| n % 2 == 1)
            .map(|(_, p)| p)
            .sum();
        assert_close(state.parity(), 1.0 - 2.0 * odd_mass, 1e-12, "parity identity");
    }

    #[test]
    fn heralded_state_undefined_without_herald() {
        let source = TwinBeamState::new(0.01, 1).unwrap();
        let model = ExperimentModel::new(source, 0.0, 0.378).unwrap();
        assert!(matches!(
            heralded_state(&model),
            Err(Error::UndefinedResult { .. })
        ));
    }

    #[test]
    fn fock_one_distribution_has_unit_mean_and_negative_parity() {
        let one = PhotonNumberDistribution::fock(1, 8).unwrap();
        assert_eq!(one.mean(), 1.0);
        assert_eq!(one.parity(), -1.0);
    }

    #[test]
    fn operating_point_mean_and_parity_near_paper_endpoint() {
        // quoted endpoint values 1.016 and −0.973 at CAR = 97.14; this
        // model is single-mode, so agreement is at the percent level
        let base = paper_point_model(1.0);
        let mean = tune_mean_for_car(&base, 97.14).unwrap();
        let model = base.with_mean_total(mean).unwrap();
        let (n, parity) = heralded_mean_and_parity_theory(&model).unwrap();
        assert_close(n, 1.016, 0.011, "conditional mean vs endpoint");
        assert_close(parity, -0.973, 0.011, "conditional parity vs endpoint");
    }

    #[test]
    fn theory_point_is_self_consistent() {
        let base = paper_point_model(1.0);
        let mean = tune_mean_for_car(&base, 97.14).unwrap();
        let model = base.with_mean_total(mean).unwrap();
        let row = theory_point(&model).unwrap();
        let p = pulse_probabilities(&model).unwrap();
        assert_close(row.car.unwrap(), 97.14, 1e-6, "car");
        assert_close(
            row.g2_unconditional.unwrap(),
            p.p_s1s2 / (p.p_s1 * p.p_s2),
            1e-15,
            "g2 unconditional",
        );
        assert_close(
            row.mean_n_first.unwrap(),
            97.14 / 96.14,
            1e-6,
            "first-order mean",
        );
        // second-order estimator tracks the exact conditional mean to 0.5%
        let n2 = row.mean_n_second.unwrap();
        let exact = row.mean_n_exact.unwrap();
        assert!((n2 - exact).abs() / exact < 5e-3, "n2 {n2} vs exact {exact}");
        // and the first-order bias exceeds the second-order bias
        let n1 = row.mean_n_first.unwrap();
        assert!((n1 - exact).abs() > (n2 - exact).abs());
    }
}

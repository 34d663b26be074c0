//! Figures of merit from coincidence counting, with first-order
//! uncertainty propagation.
//!
//! Count-level estimators are written as expressions over the eight
//! exclusive per-pulse click categories (the joint click pattern of herald,
//! signal bin 1 and signal bin 2). Standard errors come from the delta
//! method: exact gradients via forward-mode dual numbers, and the
//! multinomial covariance of the category counts.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::pulse_simulator::CountRecord;

/// `3·g²ₕ·μ_s` below this switches the second-order mean to its series
/// form, avoiding cancellation in `1 − sqrt(1 − x)`.
pub const SECOND_ORDER_SERIES_THRESHOLD: f64 = 1e-8;

/// Forward-mode scalar carrying one derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub deriv: f64,
}

impl Dual {
    pub const fn constant(value: f64) -> Self {
        Self { value, deriv: 0.0 }
    }

    pub const fn variable(value: f64) -> Self {
        Self { value, deriv: 1.0 }
    }

    pub fn sqrt(self) -> Self {
        let root = self.value.sqrt();
        Self {
            value: root,
            deriv: if root == 0.0 { 0.0 } else { self.deriv / (2.0 * root) },
        }
    }
}

impl From<f64> for Dual {
    fn from(value: f64) -> Self {
        Self::constant(value)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual {
            value: self.value + rhs.value,
            deriv: self.deriv + rhs.deriv,
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual {
            value: self.value - rhs.value,
            deriv: self.deriv - rhs.deriv,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual {
            value: self.value * rhs.value,
            deriv: self.deriv * rhs.value + self.value * rhs.deriv,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        Dual {
            value: self.value / rhs.value,
            deriv: (self.deriv * rhs.value - self.value * rhs.deriv) / (rhs.value * rhs.value),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual {
            value: -self.value,
            deriv: -self.deriv,
        }
    }
}

macro_rules! dual_scalar_ops {
    ($($op:ident, $method:ident);*) => {$(
        impl $op<f64> for Dual {
            type Output = Dual;
            fn $method(self, rhs: f64) -> Dual {
                self.$method(Dual::constant(rhs))
            }
        }
        impl $op<Dual> for f64 {
            type Output = Dual;
            fn $method(self, rhs: Dual) -> Dual {
                Dual::constant(self).$method(rhs)
            }
        }
    )*};
}
dual_scalar_ops!(Add, add; Sub, sub; Mul, mul; Div, div);

/// The count symbols of one record, expressed over the eight exclusive
/// click categories so that covariances are tracked exactly.
#[derive(Debug, Clone, Copy)]
pub struct CountSymbols {
    /// Index bit layout: herald = 4, signal bin 1 = 2, signal bin 2 = 1.
    cats: [Dual; 8],
}

impl CountSymbols {
    fn sum_where(&self, predicate: impl Fn(usize) -> bool) -> Dual {
        let mut acc = Dual::constant(0.0);
        for (pattern, &c) in self.cats.iter().enumerate() {
            if predicate(pattern) {
                acc = acc + c;
            }
        }
        acc
    }

    pub fn pulses(&self) -> Dual {
        self.sum_where(|_| true)
    }

    pub fn s_i(&self) -> Dual {
        self.sum_where(|p| p & 4 != 0)
    }

    pub fn s_s1(&self) -> Dual {
        self.sum_where(|p| p & 2 != 0)
    }

    pub fn s_s2(&self) -> Dual {
        self.sum_where(|p| p & 1 != 0)
    }

    /// Logical-OR signal singles.
    pub fn s_s_or(&self) -> Dual {
        self.sum_where(|p| p & 3 != 0)
    }

    pub fn c_is(&self) -> Dual {
        self.sum_where(|p| p & 4 != 0 && p & 3 != 0)
    }

    pub fn c_is1(&self) -> Dual {
        self.sum_where(|p| p & 4 != 0 && p & 2 != 0)
    }

    pub fn c_is2(&self) -> Dual {
        self.sum_where(|p| p & 4 != 0 && p & 1 != 0)
    }

    pub fn c_s1s2(&self) -> Dual {
        self.sum_where(|p| p & 3 == 3)
    }

    pub fn c_is1s2(&self) -> Dual {
        self.sum_where(|p| p == 7)
    }
}

/// Recovers the exclusive category counts from the marginal tallies.
fn categories(rec: &CountRecord) -> Result<[u64; 8]> {
    let fail = |what: &str| Error::InconsistentRecord(what.into());
    let sub = |a: u64, b: u64, what: &str| a.checked_sub(b).ok_or_else(|| fail(what));

    let n111 = rec.c_is1s2;
    let n110 = sub(rec.c_is1, rec.c_is1s2, "c_is1 >= c_is1s2")?;
    let n101 = sub(rec.c_is2, rec.c_is1s2, "c_is2 >= c_is1s2")?;
    let n011 = sub(rec.c_s1s2, rec.c_is1s2, "c_s1s2 >= c_is1s2")?;
    let n100 = (rec.s_i + rec.c_is1s2)
        .checked_sub(rec.c_is1 + rec.c_is2)
        .ok_or_else(|| fail("s_i >= c_is1 + c_is2 - c_is1s2"))?;
    let n010 = (rec.s_s1 + rec.c_is1s2)
        .checked_sub(rec.c_is1 + rec.c_s1s2)
        .ok_or_else(|| fail("s_s1 >= c_is1 + c_s1s2 - c_is1s2"))?;
    let n001 = (rec.s_s2 + rec.c_is1s2)
        .checked_sub(rec.c_is2 + rec.c_s1s2)
        .ok_or_else(|| fail("s_s2 >= c_is2 + c_s1s2 - c_is1s2"))?;
    let clicked = n111 + n110 + n101 + n011 + n100 + n010 + n001;
    let n000 = sub(rec.pulses, clicked, "pulses cover all click patterns")?;

    if rec.c_is != n110 + n101 + n111 {
        return Err(fail("c_is = c_is1 + c_is2 - c_is1s2"));
    }
    // index bit layout: herald = 4, s1 = 2, s2 = 1
    Ok([n000, n001, n010, n011, n100, n101, n110, n111])
}

/// Delta-method standard error of a count expression: the gradient over
/// the exclusive categories is exact (dual numbers), and the counts are
/// treated as one multinomial draw over the pulses.
pub fn propagate_poisson(
    rec: &CountRecord,
    expr: impl Fn(&CountSymbols) -> Dual,
) -> Result<f64> {
    let cats = categories(rec)?;
    if rec.pulses == 0 {
        return Err(Error::ZeroCount("pulses"));
    }
    let n = rec.pulses as f64;
    let mut gradient = [0.0; 8];
    for (j, g) in gradient.iter_mut().enumerate() {
        let symbols = CountSymbols {
            cats: std::array::from_fn(|i| {
                if i == j {
                    Dual::variable(cats[i] as f64)
                } else {
                    Dual::constant(cats[i] as f64)
                }
            }),
        };
        *g = expr(&symbols).deriv;
    }
    let mut quad = 0.0;
    let mut lin = 0.0;
    for (g, &c) in gradient.iter().zip(&cats) {
        quad += g * g * c as f64;
        lin += g * c as f64;
    }
    Ok((quad - lin * lin / n).max(0.0).sqrt())
}

fn evaluate(rec: &CountRecord, expr: impl Fn(&CountSymbols) -> Dual) -> Result<(f64, f64)> {
    let cats = categories(rec)?;
    let symbols = CountSymbols {
        cats: std::array::from_fn(|i| Dual::constant(cats[i] as f64)),
    };
    let value = expr(&symbols).value;
    let std_err = propagate_poisson(rec, expr)?;
    Ok((value, std_err))
}

/// Which estimator produced a figure of merit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodTag {
    Car,
    KlyshkoRaw,
    KlyshkoCorrected,
    G2Unconditional,
    SchmidtK,
    G2Heralded,
    MeanNFirst,
    MeanNSecond,
    Parity,
}

impl MethodTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodTag::Car => "car",
            MethodTag::KlyshkoRaw => "klyshko_raw",
            MethodTag::KlyshkoCorrected => "klyshko_corrected",
            MethodTag::G2Unconditional => "g2_unconditional",
            MethodTag::SchmidtK => "schmidt_k",
            MethodTag::G2Heralded => "g2_heralded",
            MethodTag::MeanNFirst => "mean_n_first",
            MethodTag::MeanNSecond => "mean_n_second",
            MethodTag::Parity => "parity",
        }
    }
}

/// An estimated quantity with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureOfMerit {
    pub value: f64,
    pub std_err: f64,
    pub method: MethodTag,
}

impl FigureOfMerit {
    fn new(value: f64, std_err: f64, method: MethodTag) -> Result<Self> {
        if !value.is_finite() || !std_err.is_finite() || std_err < 0.0 {
            return Err(Error::UndefinedResult {
                quantity: method.as_str(),
                reason: format!("non-finite estimate {value} ± {std_err}"),
            });
        }
        Ok(Self {
            value,
            std_err,
            method,
        })
    }
}

/// Coincidences-to-accidentals ratio, `pulses · c_is / (s_i · s_s)` with
/// the logical-OR signal singles.
pub fn car(rec: &CountRecord) -> Result<FigureOfMerit> {
    if rec.s_i == 0 || rec.s_s_or() == 0 {
        return Err(Error::UndefinedResult {
            quantity: "CAR",
            reason: "zero singles in the denominator".into(),
        });
    }
    let (value, std_err) = evaluate(rec, |c| {
        c.pulses() * c.c_is() / (c.s_i() * c.s_s_or())
    })?;
    FigureOfMerit::new(value, std_err, MethodTag::Car)
}

/// Klyshko efficiencies `(signal, idler)`. The corrected variant subtracts
/// the accidental coincidences `s_i · s_s / pulses` first.
pub fn klyshko(rec: &CountRecord, corrected: bool) -> Result<(FigureOfMerit, FigureOfMerit)> {
    if rec.s_i == 0 || rec.s_s_or() == 0 {
        return Err(Error::UndefinedResult {
            quantity: "Klyshko efficiency",
            reason: "zero singles in the denominator".into(),
        });
    }
    let tag = if corrected {
        MethodTag::KlyshkoCorrected
    } else {
        MethodTag::KlyshkoRaw
    };
    let effective = move |c: &CountSymbols| {
        if corrected {
            c.c_is() - c.s_i() * c.s_s_or() / c.pulses()
        } else {
            c.c_is()
        }
    };
    let (sig_value, sig_err) = evaluate(rec, |c| effective(c) / c.s_i())?;
    let (idl_value, idl_err) = evaluate(rec, |c| effective(c) / c.s_s_or())?;
    Ok((
        FigureOfMerit::new(sig_value, sig_err, tag)?,
        FigureOfMerit::new(idl_value, idl_err, tag)?,
    ))
}

/// Which beam feeds the 50:50 splitter for the HBT measurement; the split
/// tallies of the record belong to that beam either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HbtArm {
    Signal,
    IdlerAsSplit,
}

/// Unconditional second-order correlation of the split beam,
/// `pulses · c_s1s2 / (s_s1 · s_s2)`.
pub fn g2_unconditional(rec: &CountRecord, _arm: HbtArm) -> Result<FigureOfMerit> {
    if rec.s_s1 == 0 || rec.s_s2 == 0 {
        return Err(Error::UndefinedResult {
            quantity: "unconditional g²",
            reason: "zero split-channel singles".into(),
        });
    }
    let (value, std_err) = evaluate(rec, |c| c.pulses() * c.c_s1s2() / (c.s_s1() * c.s_s2()))?;
    FigureOfMerit::new(value, std_err, MethodTag::G2Unconditional)
}

/// Mode number from the unconditional correlation, `K = 1/(g² − 1)`.
/// Valid in the modest-gain regime; refuses the pole at `g² ≤ 1`.
pub fn schmidt_k(g2: &FigureOfMerit) -> Result<FigureOfMerit> {
    if g2.value <= 1.0 {
        return Err(Error::OutOfDomain {
            quantity: "Schmidt number",
            bound: format!("g2 > 1 (got {})", g2.value),
        });
    }
    let excess = g2.value - 1.0;
    FigureOfMerit::new(
        1.0 / excess,
        g2.std_err / (excess * excess),
        MethodTag::SchmidtK,
    )
}

/// Heralded second-order correlation,
/// `g²ₕ = s_i · c_is1s2 / (c_is1 · c_is2)`.
pub fn g2_heralded(rec: &CountRecord) -> Result<FigureOfMerit> {
    if rec.c_is1 == 0 || rec.c_is2 == 0 {
        return Err(Error::UndefinedResult {
            quantity: "heralded g²",
            reason: "zero heralded coincidences in the denominator".into(),
        });
    }
    if rec.c_is1s2 == 0 {
        // no triple events: report zero with a one-event upper bound
        let bound = rec.s_i as f64 / (rec.c_is1 as f64 * rec.c_is2 as f64);
        return FigureOfMerit::new(0.0, bound, MethodTag::G2Heralded);
    }
    let (value, std_err) = evaluate(rec, |c| {
        c.s_i() * c.c_is1s2() / (c.c_is1() * c.c_is2())
    })?;
    FigureOfMerit::new(value, std_err, MethodTag::G2Heralded)
}

/// First-order mean photon number of the heralded state,
/// `⟨n⟩ = CAR/(CAR − 1)`; valid for small heralding efficiencies.
pub fn mean_photon_first_value(car: f64) -> Result<f64> {
    if car <= 1.0 {
        return Err(Error::OutOfDomain {
            quantity: "mean photon number (first order)",
            bound: format!("CAR > 1 (got {car})"),
        });
    }
    Ok(car / (car - 1.0))
}

pub fn mean_photon_first(car: &FigureOfMerit) -> Result<FigureOfMerit> {
    let value = mean_photon_first_value(car.value)?;
    let slope = 1.0 / ((car.value - 1.0) * (car.value - 1.0));
    FigureOfMerit::new(value, slope * car.std_err, MethodTag::MeanNFirst)
}

fn mean_photon_second_dual(g2h: Dual, mu_s: Dual, mu_sc: Dual) -> Dual {
    let x = 3.0 * g2h * mu_s;
    if x.value.abs() < SECOND_ORDER_SERIES_THRESHOLD {
        // series form of (1 − sqrt(1 − x)) / (1.5 μ_sc g2h)
        (mu_s / mu_sc) * (1.0 + 0.75 * g2h * mu_s)
    } else {
        (1.0 - (1.0 - x).sqrt()) / (1.5 * mu_sc * g2h)
    }
}

/// Second-order mean photon number of the heralded state: the physical
/// root of the quadratic detection-probability relation, which reduces to
/// the first-order form as `g²ₕ → 0`.
pub fn mean_photon_second_value(g2h: f64, mu_s: f64, mu_sc: f64) -> Result<f64> {
    if mu_sc <= 0.0 {
        return Err(Error::UndefinedResult {
            quantity: "mean photon number (second order)",
            reason: format!("corrected efficiency must be positive, got {mu_sc}"),
        });
    }
    let x = 3.0 * g2h * mu_s;
    if 1.0 - x < 0.0 {
        return Err(Error::OutOfDomain {
            quantity: "mean photon number (second order)",
            bound: format!("1 - 3*g2h*mu_s >= 0 (got {})", 1.0 - x),
        });
    }
    Ok(mean_photon_second_dual(
        Dual::constant(g2h),
        Dual::constant(mu_s),
        Dual::constant(mu_sc),
    )
    .value)
}

pub fn mean_photon_second(
    g2h: &FigureOfMerit,
    mu_s_raw: &FigureOfMerit,
    mu_sc: &FigureOfMerit,
) -> Result<FigureOfMerit> {
    let value = mean_photon_second_value(g2h.value, mu_s_raw.value, mu_sc.value)?;
    // independent-input propagation over the three figures
    let inputs = [g2h, mu_s_raw, mu_sc];
    let mut var = 0.0;
    for seed in 0..3 {
        let duals: Vec<Dual> = inputs
            .iter()
            .enumerate()
            .map(|(i, f)| {
                if i == seed {
                    Dual::variable(f.value)
                } else {
                    Dual::constant(f.value)
                }
            })
            .collect();
        let d = mean_photon_second_dual(duals[0], duals[1], duals[2]).deriv;
        var += (d * inputs[seed].std_err).powi(2);
    }
    FigureOfMerit::new(value, var.sqrt(), MethodTag::MeanNSecond)
}

/// Second-order photon-number parity, `Π = 1 − 2⟨n⟩ + 2⟨n⟩² g²ₕ`.
pub fn parity_value(mean_n: f64, g2h: f64) -> f64 {
    1.0 - 2.0 * mean_n + 2.0 * mean_n * mean_n * g2h
}

pub fn parity(mean_n: &FigureOfMerit, g2h: &FigureOfMerit) -> Result<FigureOfMerit> {
    if !mean_n.value.is_finite() || g2h.value < 0.0 {
        return Err(Error::OutOfDomain {
            quantity: "photon-number parity",
            bound: "finite mean and g2h >= 0".into(),
        });
    }
    let value = parity_value(mean_n.value, g2h.value);
    let d_mean = -2.0 + 4.0 * mean_n.value * g2h.value;
    let d_g2h = 2.0 * mean_n.value * mean_n.value;
    let std_err = ((d_mean * mean_n.std_err).powi(2) + (d_g2h * g2h.std_err).powi(2)).sqrt();
    FigureOfMerit::new(value, std_err, MethodTag::Parity)
}

/// One row of the figures table; estimators that cannot run on the record
/// carry their error instead.
pub struct FigureRow {
    pub label: &'static str,
    pub result: Result<FigureOfMerit>,
}

fn unavailable(quantity: &'static str, missing: &str) -> Error {
    Error::UndefinedResult {
        quantity,
        reason: format!("{missing} unavailable"),
    }
}

/// Runs every estimator on a record, in the canonical row order used by
/// the figures CSV: car, klyshko_raw (signal, idler), klyshko_corrected
/// (signal, idler), g2_unconditional, schmidt_k, g2_heralded, mean_n_first,
/// mean_n_second, parity.
pub fn estimate_all(rec: &CountRecord) -> Vec<FigureRow> {
    let car_r = car(rec);
    let raw = klyshko(rec, false);
    let corrected = klyshko(rec, true);
    let g2u = g2_unconditional(rec, HbtArm::Signal);
    let schmidt = match &g2u {
        Ok(g2) => schmidt_k(g2),
        Err(_) => Err(unavailable("Schmidt number", "unconditional g²")),
    };
    let g2h = g2_heralded(rec);
    let mean_first = match &car_r {
        Ok(c) => mean_photon_first(c),
        Err(_) => Err(unavailable("mean photon number (first order)", "CAR")),
    };
    let mean_second = match (&g2h, &raw, &corrected) {
        (Ok(g), Ok((mu_s, _)), Ok((mu_sc, _))) => mean_photon_second(g, mu_s, mu_sc),
        _ => Err(unavailable(
            "mean photon number (second order)",
            "g²ₕ or Klyshko efficiencies",
        )),
    };
    let parity_r = match (&mean_second, &g2h) {
        (Ok(n), Ok(g)) => parity(n, g),
        _ => Err(unavailable("photon-number parity", "second-order mean")),
    };

    let split = |r: Result<(FigureOfMerit, FigureOfMerit)>| match r {
        Ok((s, i)) => (Ok(s), Ok(i)),
        Err(e) => {
            let msg = format!("{e}");
            (
                Err(e),
                Err(Error::UndefinedResult {
                    quantity: "Klyshko efficiency",
                    reason: msg,
                }),
            )
        }
    };
    let (raw_s, raw_i) = split(raw);
    let (cor_s, cor_i) = split(corrected);

    vec![
        FigureRow { label: "car", result: car_r },
        FigureRow { label: "klyshko_raw", result: raw_s },
        FigureRow { label: "klyshko_raw", result: raw_i },
        FigureRow { label: "klyshko_corrected", result: cor_s },
        FigureRow { label: "klyshko_corrected", result: cor_i },
        FigureRow { label: "g2_unconditional", result: g2u },
        FigureRow { label: "schmidt_k", result: schmidt },
        FigureRow { label: "g2_heralded", result: g2h },
        FigureRow { label: "mean_n_first", result: mean_first },
        FigureRow { label: "mean_n_second", result: mean_second },
        FigureRow { label: "parity", result: parity_r },
    ]
}

//! Capture-probability bounds, budget sizing, coverage and quantiles, and a
//! Monte Carlo check of the high-severity coverage bound.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::contingency::ContingencyVector;
use crate::error::{Error, Result};
use crate::{par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureEstimate {
    pub successes: usize,
    pub trials: usize,
    pub p_hat: f64,
    pub p_lower: f64,
    pub confidence: f64,
}

impl CaptureEstimate {
    pub fn from_counts(successes: usize, trials: usize, confidence: f64) -> Result<Self> {
        Ok(Self {
            successes,
            trials,
            p_hat: successes as f64 / trials.max(1) as f64,
            p_lower: binomial_lower_bound(successes, trials, confidence)?,
            confidence,
        })
    }

    /// Counts samples with `s >= tau`.
    pub fn from_severities(severities: &[f64], tau: f64, confidence: f64) -> Result<Self> {
        let hits = severities.iter().filter(|&&s| s >= tau).count();
        Self::from_counts(hits, severities.len(), confidence)
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k)
        .map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

/// `P(X >= x)` for `X ~ Binomial(n, p)` by direct summation of the pmf.
pub fn binomial_upper_tail(x: usize, n: usize, p: f64) -> f64 {
    if x == 0 {
        return 1.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_pmf = ln_choose(n, x) + x as f64 * lp + (n - x) as f64 * lq;
    let mut sum = 0.0;
    for j in x..=n {
        sum += log_pmf.exp();
        if j < n {
            // pmf(j+1)/pmf(j) = (n-j)/(j+1) * p/q
            log_pmf += ((n - j) as f64).ln() - ((j + 1) as f64).ln() + lp - lq;
        }
    }
    sum.min(1.0)
}

/// One-sided Clopper–Pearson lower bound: the `p` at which
/// `P(X >= successes) = 1 - confidence`.
pub fn binomial_lower_bound(successes: usize, trials: usize, confidence: f64) -> Result<f64> {
    if trials == 0 || successes > trials {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= successes <= trials, trials >= 1; got {successes}/{trials}"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    let alpha = 1.0 - confidence;
    if successes == 0 {
        return Ok(0.0);
    }
    if successes == trials {
        return Ok(alpha.powf(1.0 / trials as f64));
    }
    let (mut lo, mut hi) = (0.0, successes as f64 / trials as f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if binomial_upper_tail(successes, trials, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `(1 - p)^B`.
pub fn miss_probability(p: f64, b: usize) -> f64 {
    (1.0 - p).powf(b as f64)
}

/// Smallest `B` with `(1 - p_lower)^B <= delta_miss`.
pub fn required_budget(p_lower: f64, delta_miss: f64) -> Result<usize> {
    if !(delta_miss > 0.0 && delta_miss <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta_miss {delta_miss} outside (0, 1]"
        )));
    }
    if !(0.0..=1.0).contains(&p_lower) {
        return Err(Error::InvalidArgument(format!(
            "p_lower {p_lower} outside [0, 1]"
        )));
    }
    if delta_miss == 1.0 {
        return Ok(0);
    }
    if p_lower == 0.0 {
        return Err(Error::UnboundedBudget);
    }
    if p_lower == 1.0 {
        return Ok(1);
    }
    let mut b = (delta_miss.ln() / (1.0 - p_lower).ln()).ceil().max(0.0) as usize;
    while miss_probability(p_lower, b) > delta_miss {
        b += 1;
    }
    while b > 0 && miss_probability(p_lower, b - 1) <= delta_miss {
        b -= 1;
    }
    Ok(b)
}

/// `|screened ∩ severe| / |severe|` over distinct patterns.
pub fn coverage_metric(
    screened: &[ContingencyVector],
    severe: &[ContingencyVector],
) -> Result<f64> {
    let severe: BTreeSet<&ContingencyVector> = severe.iter().collect();
    if severe.is_empty() {
        return Err(Error::UndefinedCoverage);
    }
    let screened: BTreeSet<&ContingencyVector> = screened.iter().collect();
    Ok(screened.intersection(&severe).count() as f64 / severe.len() as f64)
}

/// Smallest sample value `v` with `#{s >= v} / n <= delta`; `+inf` if none.
pub fn quantile_threshold(severities: &[f64], delta: f64) -> Result<f64> {
    if severities.is_empty() {
        return Err(Error::InvalidArgument("empty severity sample".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta {delta} outside (0, 1]"
        )));
    }
    let mut v = severities.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    // #{s >= v[i]} = n - (first index holding v[i]).
    let mut i = 0;
    while i < v.len() {
        if (v.len() - i) as f64 / n <= delta {
            return Ok(v[i]);
        }
        let cur = v[i];
        while i < v.len() && v[i] == cur {
            i += 1;
        }
    }
    Ok(f64::INFINITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Params {
    pub delta: f64,
    pub epsilon: f64,
    pub m: usize,
    pub eta: f64,
}

impl Theorem1Params {
    /// `δ - sqrt(ε / 2)`, the guaranteed per-draw tail probability.
    pub fn q(&self) -> f64 {
        self.delta - (self.epsilon / 2.0).sqrt()
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta {} outside (0, 1)",
                self.delta
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {} < 0",
                self.epsilon
            )));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eta {} outside (0, 1)",
                self.eta
            )));
        }
        Ok(())
    }
}

/// `1 - exp(-η² m q / 2)` with `q = δ - sqrt(ε/2)`.
pub fn theorem1_bound(p: &Theorem1Params) -> Result<f64> {
    p.validate()?;
    let q = p.q();
    if q <= 0.0 {
        return Err(Error::VacuousBound(q));
    }
    Ok(1.0 - (-p.eta * p.eta * p.m as f64 * q / 2.0).exp())
}

/// Finite-support pair `(p*, p_θ)` with a known tail set and `KL(p_θ || p*)` equal to a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlConstruction {
    pub p_star: Vec<f64>,
    pub p_theta: Vec<f64>,
    /// Atoms `0..tail_atoms` form the δ-tail of `p*`.
    pub tail_atoms: usize,
    pub kl: f64,
}

fn binary_kl(a: f64, b: f64) -> f64 {
    let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * (x / y).ln() };
    term(a, b) + term(1.0 - a, 1.0 - b)
}

pub const SUPPORT: usize = 1000;

/// `p*` uniform on [`SUPPORT`] atoms; `p_θ` moves mass `d` out of the δ-tail,
/// spread evenly, with `d` found by bisection so that the KL hits `epsilon`.
pub fn kl_construction(delta: f64, epsilon: f64) -> Result<KlConstruction> {
    let tail = (delta * SUPPORT as f64).round() as usize;
    if tail == 0 || tail >= SUPPORT || (tail as f64 - delta * SUPPORT as f64).abs() > 1e-9 {
        return Err(Error::KlConstruction(format!(
            "delta {delta} is not a multiple of 1/{SUPPORT}"
        )));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::KlConstruction(format!("epsilon {epsilon} < 0")));
    }
    let max_kl = binary_kl(0.0, delta);
    if epsilon >= max_kl {
        return Err(Error::KlConstruction(format!(
            "epsilon {epsilon} not reachable; the largest tail shift gives {max_kl}"
        )));
    }
    let d = if epsilon == 0.0 {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0, delta);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if binary_kl(delta - mid, delta) < epsilon {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let p_star = vec![1.0 / SUPPORT as f64; SUPPORT];
    let in_tail = (delta - d) / tail as f64;
    let out_tail = (1.0 - delta + d) / (SUPPORT - tail) as f64;
    let p_theta: Vec<f64> = (0..SUPPORT)
        .map(|i| if i < tail { in_tail } else { out_tail })
        .collect();
    let kl = p_theta
        .iter()
        .zip(&p_star)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum();
    Ok(KlConstruction {
        p_star,
        p_theta,
        tail_atoms: tail,
        kl,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Validation {
    pub params: Theorem1Params,
    pub bound: f64,
    /// Rate of `N >= (1 - η) m q`, the event bounded by the Chernoff step.
    pub empirical_rate: f64,
    /// Rate of `N / m >= 1 - η`, the event as displayed in the statement.
    pub literal_rate: f64,
    pub kl: f64,
    pub tail_mass_theta: f64,
    /// Per-trial outcome of the Chernoff event.
    pub outcomes: Vec<bool>,
}

impl Theorem1Validation {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("trial,outcome\n");
        for (i, o) in self.outcomes.iter().enumerate() {
            s.push_str(&format!("{i},{}\n", u8::from(*o)));
        }
        s
    }
}

/// Draws `m` points from `p_θ` per trial and counts hits in the δ-tail of `p*`.
pub fn validate_theorem1_mc(
    delta: f64,
    epsilon_target: f64,
    m: usize,
    eta: f64,
    trials: usize,
    seed: u64,
) -> Result<Theorem1Validation> {
    let params = Theorem1Params {
        delta,
        epsilon: epsilon_target,
        m,
        eta,
    };
    let bound = theorem1_bound(&params)?;
    let cons = kl_construction(delta, epsilon_target)?;
    let dist =
        WeightedIndex::new(&cons.p_theta).map_err(|e| Error::KlConstruction(e.to_string()))?;
    let threshold = (1.0 - eta) * m as f64 * params.q();
    let literal = (1.0 - eta) * m as f64;
    let counts = par::map_range(trials, |trial| {
        let mut r = rng::stream(seed, &[trial as u64]);
        (0..m)
            .filter(|_| dist.sample(&mut r) < cons.tail_atoms)
            .count()
    });
    let outcomes: Vec<bool> = counts.iter().map(|&n| n as f64 >= threshold).collect();
    let rate = |hits: usize| hits as f64 / trials.max(1) as f64;
    Ok(Theorem1Validation {
        params,
        bound,
        empirical_rate: rate(outcomes.iter().filter(|&&o| o).count()),
        literal_rate: rate(counts.iter().filter(|&&n| n as f64 >= literal).count()),
        kl: cons.kl,
        tail_mass_theta: cons.p_theta[..cons.tail_atoms].iter().sum(),
        outcomes,
    })
}

//! Equal-frequency discretization, plug-in mutual information, and the
//! Gamma-approximation significance test for MI between independent
//! discrete variables.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_STATES: usize = 4;

const MAX_ITER: usize = 500;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

/// A series of discrete states in `0..cardinality`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteSeries {
    states: Vec<u8>,
    cardinality: usize,
}

impl DiscreteSeries {
    pub fn new(states: Vec<u8>, cardinality: usize) -> Result<Self> {
        if cardinality == 0 || cardinality > u8::MAX as usize + 1 {
            return Err(Error::InvalidArgument(format!(
                "state count {cardinality} out of range"
            )));
        }
        if let Some(bad) = states.iter().find(|&&s| s as usize >= cardinality) {
            return Err(Error::InvalidArgument(format!(
                "state {bad} >= cardinality {cardinality}"
            )));
        }
        Ok(DiscreteSeries {
            states,
            cardinality,
        })
    }

    pub fn states(&self) -> &[u8] {
        &self.states
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Map values to `states` equally populated bins by rank.
///
/// The value of 0-based rank `r` goes to state `floor(r * states / len)`;
/// ties are ranked by original index.
pub fn discretize_equal_frequency<I>(values: I, states: usize) -> Result<DiscreteSeries>
where
    I: IntoIterator<Item = f64>,
{
    let values: Vec<f64> = values.into_iter().collect();
    let len = values.len();
    if states == 0 || states > u8::MAX as usize + 1 {
        return Err(Error::InvalidArgument(format!(
            "state count {states} out of range"
        )));
    }
    if len < states {
        return Err(Error::InvalidArgument(format!(
            "cannot discretize {len} values into {states} states"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN in series to discretize".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    // stable sort keeps index order among ties
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0u8; len];
    for (rank, &idx) in order.iter().enumerate() {
        out[idx] = (rank * states / len) as u8;
    }
    Ok(DiscreteSeries {
        states: out,
        cardinality: states,
    })
}

/// Plug-in (relative-frequency) mutual information in bits.
pub fn mutual_information_bits(x: &DiscreteSeries, y: &DiscreteSeries) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    let (sx, sy) = (x.cardinality, y.cardinality);
    let mut joint = vec![0u32; sx * sy];
    let mut mx = vec![0u32; sx];
    let mut my = vec![0u32; sy];
    for (&a, &b) in x.states.iter().zip(&y.states) {
        joint[a as usize * sy + b as usize] += 1;
        mx[a as usize] += 1;
        my[b as usize] += 1;
    }
    let n = x.len() as f64;
    let mut mi = 0.0;
    for a in 0..sx {
        for b in 0..sy {
            let c = joint[a * sy + b];
            if c == 0 {
                continue;
            }
            let c = c as f64;
            let ratio = (c * n) / (mx[a] as f64 * my[b] as f64);
            mi += c / n * ratio.log2();
        }
    }
    // rounding can leave a tiny negative for exactly independent tables
    Ok(mi.max(0.0))
}

/// Natural log of the Gamma function (Lanczos, g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower and upper incomplete gamma `(P(a, x), Q(a, x))`.
fn regularized_gamma_pq(a: f64, x: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) || !(x >= 0.0) || !a.is_finite() || x.is_nan() {
        return Err(Error::Domain(format!("incomplete gamma at a={a}, x={x}")));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    if x.is_infinite() {
        return Ok((1.0, 0.0));
    }
    let log_prefactor = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                let p = (sum.ln() + log_prefactor).exp();
                return Ok((p, 1.0 - p));
            }
        }
        Err(Error::NoConvergence(format!(
            "gamma series at a={a}, x={x}"
        )))
    } else {
        // modified Lentz on the continued fraction for Q
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                let q = (h.ln() + log_prefactor).exp();
                return Ok((1.0 - q, q));
            }
        }
        Err(Error::NoConvergence(format!(
            "gamma continued fraction at a={a}, x={x}"
        )))
    }
}

fn check_shape_scale(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!(
            "gamma parameters must be positive (alpha={alpha}, beta={beta})"
        )));
    }
    Ok(())
}

/// CDF of Gamma(shape `alpha`, scale `beta`) at `x`.
pub fn gamma_cdf(x: f64, alpha: f64, beta: f64) -> Result<f64> {
    check_shape_scale(alpha, beta)?;
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("gamma_cdf at negative x={x}")));
    }
    Ok(regularized_gamma_pq(alpha, x / beta)?.0)
}

/// Survival function `1 - cdf`, computed without cancellation in the tail.
pub fn gamma_sf(x: f64, alpha: f64, beta: f64) -> Result<f64> {
    check_shape_scale(alpha, beta)?;
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("gamma_sf at negative x={x}")));
    }
    Ok(regularized_gamma_pq(alpha, x / beta)?.1)
}

/// Quantile of Gamma(shape `alpha`, scale `beta`): the `x` with `cdf(x) = q`.
///
/// Brackets the root on the standardized variable, then runs Newton steps
/// that fall back to bisection whenever they leave the bracket. Above the
/// median the equation is solved on the upper tail for accuracy.
pub fn gamma_quantile(q: f64, alpha: f64, beta: f64) -> Result<f64> {
    check_shape_scale(alpha, beta)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level {q} outside (0, 1)")));
    }
    let upper = q > 0.5;
    let target = if upper { 1.0 - q } else { q };
    // f is increasing in y in both branches
    let f = |y: f64| -> Result<f64> {
        let (p, s) = regularized_gamma_pq(alpha, y)?;
        Ok(if upper { target - s } else { p - target })
    };
    let ln_norm = ln_gamma(alpha);
    let density = |y: f64| ((alpha - 1.0) * y.ln() - y - ln_norm).exp();

    let mut lo = 0.0;
    let mut hi = alpha.max(1.0);
    let mut expansions = 0;
    while f(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 1100 {
            return Err(Error::NoConvergence(format!(
                "could not bracket gamma quantile q={q}, alpha={alpha}"
            )));
        }
    }

    let mut y = 0.5 * (lo + hi);
    for _ in 0..MAX_ITER {
        let fy = f(y)?;
        if fy == 0.0 {
            return Ok(y * beta);
        }
        if fy < 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        let dens = density(y);
        let mut next = if dens > 0.0 && dens.is_finite() {
            y - fy / dens
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - y).abs() <= 1e-15 * y.max(1e-300) || hi - lo <= 1e-15 * hi;
        y = next;
        if done {
            return Ok(y * beta);
        }
    }
    Err(Error::NoConvergence(format!(
        "gamma quantile q={q}, alpha={alpha}, beta={beta}: bracket [{lo}, {hi}] after {MAX_ITER} iterations"
    )))
}

/// Parameters of one MI independence test with Bonferroni correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiTestConfig {
    pub states_x: usize,
    pub states_y: usize,
    pub sample_size: usize,
    pub uncorrected_p: f64,
    pub num_tests: usize,
}

impl MiTestConfig {
    pub fn corrected_level(&self) -> f64 {
        self.uncorrected_p / self.num_tests as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.states_x < 2 || self.states_y < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 states per variable, got {}x{}",
                self.states_x, self.states_y
            )));
        }
        if self.sample_size == 0 || self.num_tests == 0 {
            return Err(Error::InvalidArgument(
                "sample size and test count must be positive".into(),
            ));
        }
        let level = self.corrected_level();
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "corrected level {level} outside (0, 1)"
            )));
        }
        Ok(())
    }

    /// Shape of the null Gamma: `(|X|-1)(|Y|-1)/2`.
    pub fn gamma_shape(&self) -> f64 {
        ((self.states_x - 1) * (self.states_y - 1)) as f64 / 2.0
    }

    /// Scale of the null Gamma for MI in bits: `1 / (N ln 2)`.
    pub fn gamma_scale(&self) -> f64 {
        1.0 / (self.sample_size as f64 * std::f64::consts::LN_2)
    }
}

/// MI value (bits) at or below which independence is accepted.
pub fn significance_threshold(cfg: &MiTestConfig) -> Result<f64> {
    cfg.validate()?;
    gamma_quantile(
        1.0 - cfg.corrected_level(),
        cfg.gamma_shape(),
        cfg.gamma_scale(),
    )
}

/// True when `mi_bits` rejects independence, i.e. strictly exceeds the
/// threshold.
pub fn test_link(mi_bits: f64, cfg: &MiTestConfig) -> Result<bool> {
    Ok(mi_bits > significance_threshold(cfg)?)
}

/// A test with its threshold computed once, for use across a matrix.
#[derive(Debug, Clone, Copy)]
pub struct SignificanceTest {
    pub config: MiTestConfig,
    pub threshold_bits: f64,
}

impl SignificanceTest {
    pub fn new(config: MiTestConfig) -> Result<Self> {
        Ok(SignificanceTest {
            config,
            threshold_bits: significance_threshold(&config)?,
        })
    }

    pub fn is_significant(&self, mi_bits: f64) -> bool {
        mi_bits > self.threshold_bits
    }
}

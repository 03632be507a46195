//! Synthetic price universes with planted lead-lag couplings.
//!
//! Every asset follows a geometric random walk with i.i.d. Gaussian
//! log-returns of standard deviation `volatility`. A coupling makes the
//! follower's return `coupling * leader_return(t - lag) + noise * volatility * eps`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::market_data::MS_PER_MINUTE;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coupling {
    pub leader: usize,
    pub follower: usize,
    /// In base periods.
    pub lag: usize,
    pub coupling: f64,
    /// Follower noise standard deviation, in units of `volatility`.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniverseSpec {
    pub n_assets: usize,
    pub days: usize,
    /// Epoch ms of the first price.
    pub start_ms: i64,
    pub base_period_minutes: u32,
    pub initial_price: f64,
    pub volatility: f64,
    pub couplings: Vec<Coupling>,
}

impl Default for UniverseSpec {
    fn default() -> Self {
        UniverseSpec {
            n_assets: 10,
            days: 30,
            // 2021-01-01T00:00:00Z
            start_ms: 1_609_459_200_000,
            base_period_minutes: 1,
            initial_price: 100.0,
            volatility: 1e-3,
            couplings: vec![Coupling {
                leader: 0,
                follower: 1,
                lag: 1,
                coupling: 0.8,
                noise: 0.5,
            }],
        }
    }
}

impl UniverseSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_assets < 2 {
            return bad(format!("need at least 2 assets, got {}", self.n_assets));
        }
        if self.days == 0
            || self.base_period_minutes == 0
            || !1440u32.is_multiple_of(self.base_period_minutes)
        {
            return bad("days must be positive and the base period must divide a day".into());
        }
        if !(self.initial_price > 0.0) || !(self.volatility > 0.0) {
            return bad("initial price and volatility must be positive".into());
        }
        let mut followers = Vec::new();
        for c in &self.couplings {
            if c.leader >= self.n_assets || c.follower >= self.n_assets {
                return bad(format!("coupling {c:?} references an unknown asset"));
            }
            if c.leader == c.follower {
                return bad(format!("asset {} cannot lead itself", c.leader));
            }
            if c.lag == 0 {
                return bad("coupling lag must be at least 1".into());
            }
            if !c.coupling.is_finite() || !(c.noise >= 0.0) {
                return bad(format!("coupling {c:?} has invalid strength or noise"));
            }
            if followers.contains(&c.follower) {
                return bad(format!("asset {} follows more than one leader", c.follower));
            }
            followers.push(c.follower);
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.days * 1440 / self.base_period_minutes as usize
    }

    pub fn asset_name(&self, i: usize) -> String {
        format!("A{i:02}")
    }
}

/// Log-return paths (steps x n). Couplings are applied in listed order, so a
/// follower may lead a later coupling.
pub fn generate_returns(spec: &UniverseSpec, seed: u64) -> Result<Array2<f64>> {
    spec.validate()?;
    let warmup = spec.couplings.iter().map(|c| c.lag).max().unwrap_or(0);
    let total = spec.steps() + warmup;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let innovations = Array2::from_shape_fn((total, spec.n_assets), |_| {
        let e: f64 = StandardNormal.sample(&mut rng);
        spec.volatility * e
    });
    let mut returns = innovations.clone();
    for c in &spec.couplings {
        for t in c.lag..total {
            returns[[t, c.follower]] = c.coupling * returns[[t - c.lag, c.leader]]
                + c.noise * innovations[[t, c.follower]];
        }
    }
    Ok(returns.slice_move(ndarray::s![warmup.., ..]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticAsset {
    pub name: String,
    pub timestamps: Vec<i64>,
    pub prices: Vec<f64>,
}

pub fn generate_synthetic(spec: &UniverseSpec, seed: u64) -> Result<Vec<SyntheticAsset>> {
    let returns = generate_returns(spec, seed)?;
    let step_ms = spec.base_period_minutes as i64 * MS_PER_MINUTE;
    let timestamps: Vec<i64> = (0..=spec.steps() as i64)
        .map(|t| spec.start_ms + t * step_ms)
        .collect();
    Ok((0..spec.n_assets)
        .map(|j| {
            let mut log_price = spec.initial_price.ln();
            let mut prices = Vec::with_capacity(timestamps.len());
            prices.push(spec.initial_price);
            for r in returns.column(j) {
                log_price += r;
                prices.push(log_price.exp());
            }
            SyntheticAsset {
                name: spec.asset_name(j),
                timestamps: timestamps.clone(),
                prices,
            }
        })
        .collect())
}

/// Write one `timestamp,price` CSV per asset into `dir`.
pub fn write_price_files(dir: &Path, assets: &[SyntheticAsset]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    assets
        .iter()
        .map(|a| {
            let path = dir.join(format!("{}.csv", a.name));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            let io = |e| Error::io(&path, e);
            writeln!(w, "timestamp,price").map_err(io)?;
            for (t, p) in a.timestamps.iter().zip(&a.prices) {
                writeln!(w, "{t},{p}").map_err(io)?;
            }
            w.flush().map_err(io)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(couplings: Vec<Coupling>) -> UniverseSpec {
        UniverseSpec {
            n_assets: 3,
            days: 1,
            couplings,
            ..UniverseSpec::default()
        }
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn exact_copy_with_unit_coupling_and_no_noise() {
        let spec = small(vec![Coupling {
            leader: 0,
            follower: 2,
            lag: 2,
            coupling: 1.0,
            noise: 0.0,
        }]);
        let r = generate_returns(&spec, 3).unwrap();
        for t in 2..r.nrows() {
            assert_eq!(r[[t, 2]], r[[t - 2, 0]]);
        }
    }

    #[test]
    fn zero_coupling_leaves_follower_independent() {
        let spec = small(vec![Coupling {
            leader: 0,
            follower: 1,
            lag: 1,
            coupling: 0.0,
            noise: 1.0,
        }]);
        let r = generate_returns(&spec, 5).unwrap();
        let lead: Vec<f64> = r.column(0).iter().copied().take(r.nrows() - 1).collect();
        let follow: Vec<f64> = r.column(1).iter().copied().skip(1).collect();
        assert!(corr(&lead, &follow).abs() < 0.1);
        // the follower is still a random walk, not a constant
        assert!(r.column(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn default_fixture_shape_and_determinism() {
        let spec = UniverseSpec::default();
        let a = generate_synthetic(&spec, 9).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a[0].prices.len(), 30 * 1440 + 1);
        assert_eq!(a[3].name, "A03");
        assert!(a.iter().all(|s| s.prices.iter().all(|&p| p > 0.0)));
        assert_eq!(generate_synthetic(&spec, 9).unwrap(), a);
        assert_ne!(generate_synthetic(&spec, 10).unwrap(), a);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let c = Coupling {
            leader: 0,
            follower: 0,
            lag: 1,
            coupling: 1.0,
            noise: 0.0,
        };
        assert!(generate_returns(&small(vec![c]), 1).is_err());
        let c = Coupling { follower: 7, ..c };
        assert!(generate_returns(&small(vec![c]), 1).is_err());
        let c = Coupling {
            follower: 1,
            lag: 0,
            ..c
        };
        assert!(generate_returns(&small(vec![c]), 1).is_err());
    }

    #[test]
    fn price_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small(Vec::new());
        let assets = generate_synthetic(&spec, 1).unwrap();
        let paths = write_price_files(dir.path(), &assets).unwrap();
        assert_eq!(paths.len(), 3);
        let text = fs::read_to_string(&paths[0]).unwrap();
        assert!(text.starts_with("timestamp,price\n1609459200000,100\n"));
    }
}

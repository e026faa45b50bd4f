//! System model: harvesting and fading processes, battery dynamics and the
//! per-slot sum rate of the multiple-access channel.
//!
//! Energies are expressed in abstract energy units (one unit is
//! [`SystemConfig::energy_unit_joules`] joules). Channel gains are power
//! gains with unit mean, and the receiver noise spectral density is one, so
//! the sum rate of a slot is `ln(1 + sum_k p_k g_k)` nats.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a K-node energy-harvesting multiple-access channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub k: usize,
    pub b_max: f64,
    pub p_max: f64,
    /// Mean of the parent Gaussian of the truncated harvesting law.
    pub harvest_mean: f64,
    /// Variance of the parent Gaussian of the truncated harvesting law.
    pub harvest_var: f64,
    pub b_init: f64,
    pub energy_unit_joules: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            k: 5,
            b_max: 20.0,
            p_max: 15.0,
            harvest_mean: 6.0,
            harvest_var: 3.5,
            b_init: 10.0,
            energy_unit_joules: 1e-2,
            seed: 0,
        }
    }
}

/// The flat key/value file form of [`SystemConfig`]. Every key is optional;
/// a missing `b_init` defaults to half of the (possibly overridden) battery
/// capacity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub k: Option<usize>,
    pub b_max: Option<f64>,
    pub p_max: Option<f64>,
    pub harvest_mean: Option<f64>,
    pub harvest_var: Option<f64>,
    pub b_init: Option<f64>,
    pub seed: Option<u64>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|m| Error::format(path, m))
    }

    /// Keys present in `other` replace keys in `self`.
    pub fn merged_with(&self, other: &ConfigFile) -> ConfigFile {
        ConfigFile {
            k: other.k.or(self.k),
            b_max: other.b_max.or(self.b_max),
            p_max: other.p_max.or(self.p_max),
            harvest_mean: other.harvest_mean.or(self.harvest_mean),
            harvest_var: other.harvest_var.or(self.harvest_var),
            b_init: other.b_init.or(self.b_init),
            seed: other.seed.or(self.seed),
        }
    }

    pub fn resolve(&self) -> Result<SystemConfig> {
        let d = SystemConfig::default();
        let b_max = self.b_max.unwrap_or(d.b_max);
        let config = SystemConfig {
            k: self.k.unwrap_or(d.k),
            b_max,
            p_max: self.p_max.unwrap_or(d.p_max),
            harvest_mean: self.harvest_mean.unwrap_or(d.harvest_mean),
            harvest_var: self.harvest_var.unwrap_or(d.harvest_var),
            b_init: self.b_init.unwrap_or(b_max / 2.0),
            energy_unit_joules: d.energy_unit_joules,
            seed: self.seed.unwrap_or(d.seed),
        };
        config.validate()?;
        Ok(config)
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.k < 1 {
            return fail("k must be at least 1");
        }
        if !(self.p_max > 0.0 && self.p_max <= self.b_max) {
            return fail("require 0 < p_max <= b_max");
        }
        if !(self.harvest_mean >= 0.0 && self.harvest_mean.is_finite()) {
            return fail("harvest_mean must be finite and nonnegative");
        }
        if !(self.harvest_var > 0.0 && self.harvest_var.is_finite()) {
            return fail("harvest_var must be finite and positive");
        }
        if !(self.b_init >= 0.0 && self.b_init <= self.b_max) {
            return fail("require 0 <= b_init <= b_max");
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        ConfigFile::load(path)?.resolve()
    }

    pub fn initial_batteries(&self) -> Vec<f64> {
        vec![self.b_init; self.k]
    }
}

/// Observable system state at the start of a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotState {
    pub harvested: Vec<f64>,
    pub battery: Vec<f64>,
    pub channel: Vec<f64>,
}

impl SlotState {
    pub fn nodes(&self) -> usize {
        self.battery.len()
    }

    /// Feature vector in (harvest, battery, channel) order.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(3 * self.nodes());
        f.extend_from_slice(&self.harvested);
        f.extend_from_slice(&self.battery);
        f.extend_from_slice(&self.channel);
        f
    }
}

/// Harvested energies and channel power gains over `N` slots, rows indexed
/// by slot and columns by node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRealization {
    pub energies: Array2<f64>,
    pub gains: Array2<f64>,
}

impl EpisodeRealization {
    pub fn new(energies: Array2<f64>, gains: Array2<f64>) -> Result<Self> {
        if energies.dim() != gains.dim() {
            return Err(Error::Dimension(format!(
                "energies {:?} vs gains {:?}",
                energies.dim(),
                gains.dim()
            )));
        }
        if energies.iter().chain(gains.iter()).any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config("realization entries must be finite and nonnegative".into()));
        }
        Ok(EpisodeRealization { energies, gains })
    }

    pub fn horizon(&self) -> usize {
        self.energies.nrows()
    }

    pub fn nodes(&self) -> usize {
        self.energies.ncols()
    }

    /// Slots `start..start + len` as a new realization.
    pub fn block(&self, start: usize, len: usize) -> EpisodeRealization {
        use ndarray::s;
        EpisodeRealization {
            energies: self.energies.slice(s![start..start + len, ..]).to_owned(),
            gains: self.gains.slice(s![start..start + len, ..]).to_owned(),
        }
    }
}

/// Unit-mean exponential power gains (Rayleigh amplitude fading).
pub fn sample_channel_gains<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect()
}

/// One draw from a Gaussian with the given parent mean and variance,
/// conditioned on being nonnegative (rejection sampling).
pub fn sample_truncated_gaussian<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let x = mean + sd * z;
        if x >= 0.0 {
            return x;
        }
    }
}

pub fn sample_harvest<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64, k: usize) -> Vec<f64> {
    (0..k).map(|_| sample_truncated_gaussian(rng, mean, var)).collect()
}

/// Battery level after spending `p` from level `b` and then storing the
/// harvest `e`, clipped to the capacity.
pub fn battery_step(b: f64, e: f64, p: f64, b_max: f64) -> Result<f64> {
    if !(p >= 0.0) || p > b {
        return Err(Error::InfeasibleAction(format!(
            "transmit energy {p} with battery {b}"
        )));
    }
    Ok((b + e - p).max(0.0).min(b_max))
}

/// Sum rate `ln(1 + sum_k p_k g_k)` in nats.
pub fn slot_rate(p: &[f64], g: &[f64]) -> Result<f64> {
    if p.len() != g.len() {
        return Err(Error::Dimension(format!(
            "{} powers vs {} gains",
            p.len(),
            g.len()
        )));
    }
    let snr: f64 = p.iter().zip(g).map(|(p, g)| p * g).sum();
    Ok(snr.ln_1p())
}

/// Draws `n` slots of harvests and gains. Within a slot the K harvests are
/// drawn before the K gains.
pub fn generate_episode<R: Rng + ?Sized>(
    rng: &mut R,
    config: &SystemConfig,
    n: usize,
) -> EpisodeRealization {
    let k = config.k;
    let mut energies = Array2::zeros((n, k));
    let mut gains = Array2::zeros((n, k));
    for slot in 0..n {
        for node in 0..k {
            energies[[slot, node]] =
                sample_truncated_gaussian(rng, config.harvest_mean, config.harvest_var);
        }
        for node in 0..k {
            gains[[slot, node]] = rng.sample::<f64, _>(Exp1);
        }
    }
    EpisodeRealization { energies, gains }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Substream};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn channel_gains_are_deterministic() {
        let a = sample_channel_gains(&mut ChaCha8Rng::seed_from_u64(42), 3);
        let b = sample_channel_gains(&mut ChaCha8Rng::seed_from_u64(42), 3);
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
    }

    #[test]
    fn channel_gain_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = sample_channel_gains(&mut rng, 100_000);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
        // Exponential tail: P(g > 1) = 1/e.
        let tail = draws.iter().filter(|g| **g > 1.0).count() as f64 / draws.len() as f64;
        assert!((tail - (-1.0f64).exp()).abs() < 0.01, "tail {tail}");
    }

    #[test]
    fn harvest_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1_000 {
            let draws = sample_harvest(&mut rng, 0.5, 4.0, 1_000);
            assert!(draws.iter().all(|e| *e >= 0.0));
        }
    }

    #[test]
    fn harvest_mean_far_from_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = sample_harvest(&mut rng, 10.0, 1.0, 100_000);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((9.95..=10.05).contains(&mean), "mean {mean}");
    }

    #[test]
    fn harvest_mean_near_truncation_is_shifted_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draws = sample_harvest(&mut rng, 0.5, 4.0, 100_000);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        // Truncated-normal mean: mu + sigma * phi(a) / (1 - Phi(a)), a = -mu/sigma.
        use statrs::distribution::{Continuous, ContinuousCDF, Normal};
        let n = Normal::standard();
        let a = -0.5 / 2.0;
        let exact = 0.5 + 2.0 * n.pdf(a) / (1.0 - n.cdf(a));
        assert!(mean > 0.5);
        assert!((mean - exact).abs() < 0.02, "mean {mean} vs {exact}");
    }

    #[test]
    fn battery_step_examples() {
        assert_eq!(battery_step(5.0, 3.0, 2.0, 20.0).unwrap(), 6.0);
        assert_eq!(battery_step(19.0, 5.0, 1.0, 20.0).unwrap(), 20.0);
        assert_eq!(battery_step(2.0, 0.0, 2.0, 20.0).unwrap(), 0.0);
        assert!(battery_step(2.0, 0.0, 2.5, 20.0).is_err());
        assert!(battery_step(2.0, 0.0, -0.1, 20.0).is_err());
    }

    #[test]
    fn slot_rate_examples() {
        assert_eq!(slot_rate(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert!((slot_rate(&[1.0], &[1.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((slot_rate(&[1.0, 2.0], &[0.5, 0.25]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(slot_rate(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn episode_shape_and_determinism() {
        let config = SystemConfig {
            k: 5,
            ..SystemConfig::default()
        };
        let a = generate_episode(&mut stream_rng(9, Substream::Dataset, 0), &config, 20);
        let b = generate_episode(&mut stream_rng(9, Substream::Dataset, 0), &config, 20);
        assert_eq!(a.energies.dim(), (20, 5));
        assert_eq!(a.gains.dim(), (20, 5));
        assert_eq!(a, b);
        assert!(a.energies.iter().chain(a.gains.iter()).all(|x| *x >= 0.0));
    }

    #[test]
    fn episode_energy_means_match_harvest_mean() {
        let config = SystemConfig {
            k: 3,
            harvest_mean: 8.0,
            harvest_var: 2.0,
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ep = generate_episode(&mut rng, &config, 20_000);
        for col in ep.energies.columns() {
            let mean = col.sum() / col.len() as f64;
            assert!((mean - 8.0).abs() < 0.05, "mean {mean}");
        }
    }

    #[test]
    fn config_file_resolution() {
        let file = ConfigFile::parse("k = 1\nb_max = 10\np_max = 8\nharvest_mean = 10.0\nseed = 3\n").unwrap();
        let cfg = file.resolve().unwrap();
        assert_eq!(cfg.k, 1);
        assert_eq!(cfg.b_init, 5.0);
        assert_eq!(cfg.seed, 3);
        assert!(ConfigFile::parse("kk = 1").is_err());
        let bad = ConfigFile {
            p_max: Some(30.0),
            ..ConfigFile::default()
        };
        assert!(bad.resolve().is_err());
    }

    proptest! {
        #[test]
        fn slot_rate_is_monotone(
            p in proptest::collection::vec(0.0f64..15.0, 3),
            g in proptest::collection::vec(0.0f64..5.0, 3),
            which in 0usize..3,
            bump in 0.0f64..3.0,
        ) {
            let base = slot_rate(&p, &g).unwrap();
            let mut p2 = p.clone();
            p2[which] += bump;
            let mut g2 = g.clone();
            g2[which] += bump;
            prop_assert!(slot_rate(&p2, &g).unwrap() >= base);
            prop_assert!(slot_rate(&p, &g2).unwrap() >= base);
        }

        #[test]
        fn battery_stays_in_range(
            b in 0.0f64..=20.0,
            e in 0.0f64..30.0,
            frac in 0.0f64..=1.0,
        ) {
            let p = frac * b.min(15.0);
            let next = battery_step(b, e, p, 20.0).unwrap();
            prop_assert!((0.0..=20.0).contains(&next));
        }
    }
}

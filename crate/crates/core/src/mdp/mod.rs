//! Discretized single-node MDP baseline.
//!
//! Battery, harvest and channel are quantized, the battery update is applied
//! on grid values with nearest-point projection, and the average-reward
//! optimal lookup policy is found by relative value iteration. At deployment
//! continuous states are mapped onto the grid (battery floored, harvest and
//! channel by quantization bin).

mod rvi;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::envsim::{SlotState, SystemConfig};
use crate::error::{Error, Result};

pub use rvi::{Action, FiniteMdp, RviOptions, RviSolution};

pub const DEFAULT_LEVELS: usize = 8;

/// A quantized scalar distribution: representative values, their
/// probabilities, and the interior bin edges separating them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
    /// `values.len() - 1` increasing edges; level `i` covers
    /// `[edges[i-1], edges[i])`.
    pub edges: Vec<f64>,
}

impl Grid {
    /// Point mass at `value`.
    pub fn constant(value: f64) -> Self {
        Grid {
            values: vec![value],
            probs: vec![1.0],
            edges: vec![],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Bin containing `x`.
    pub fn level_of(&self, x: f64) -> usize {
        self.edges.partition_point(|e| *e <= x)
    }

    fn validate(&self, name: &str) -> Result<()> {
        let n = self.values.len();
        let total: f64 = self.probs.iter().sum();
        if n == 0 || self.probs.len() != n || self.edges.len() + 1 != n {
            return Err(Error::Config(format!("{name} grid has inconsistent lengths")));
        }
        if (total - 1.0).abs() > 1e-12 || self.probs.iter().any(|p| *p < 0.0) {
            return Err(Error::Config(format!("{name} probabilities sum to {total}")));
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("{name} grid has negative or non-finite values")));
        }
        Ok(())
    }
}

/// Unit-mean exponential split into `levels` equiprobable bins, each
/// represented by its conditional mean.
pub fn quantize_channel(levels: usize) -> Result<Grid> {
    if levels < 2 {
        return Err(Error::Config("channel quantization needs at least 2 levels".into()));
    }
    let n = levels as f64;
    // Upper edge of bin i is -ln(1 - (i+1)/n).
    let edge = |i: usize| -> f64 {
        if i + 1 == levels {
            f64::INFINITY
        } else {
            -(-((i + 1) as f64) / n).ln_1p()
        }
    };
    // Integral of x e^{-x} over [a, b] is (a+1)e^{-a} - (b+1)e^{-b}.
    let partial = |x: f64| if x.is_infinite() { 0.0 } else { (x + 1.0) * (-x).exp() };
    let mut values = Vec::with_capacity(levels);
    let mut lo = 0.0;
    for i in 0..levels {
        let hi = edge(i);
        values.push((partial(lo) - partial(hi)) * n);
        lo = hi;
    }
    Ok(Grid {
        values,
        probs: vec![1.0 / n; levels],
        edges: (0..levels - 1).map(edge).collect(),
    })
}

/// Gaussian with parent moments `(mean, var)` truncated to `[0, inf)`, split
/// into `levels` equiprobable bins represented by conditional means.
pub fn quantize_harvest(mean: f64, var: f64, levels: usize) -> Result<Grid> {
    if levels < 1 || !(var > 0.0) || !mean.is_finite() {
        return Err(Error::Config(format!("cannot quantize harvest with mean {mean}, variance {var}")));
    }
    let sd = var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let alpha = -mean / sd;
    let mass_below = std.cdf(alpha);
    let mass = 1.0 - mass_below;
    let n = levels as f64;
    // Standardized edges of the equiprobable bins of the truncated law.
    let z_edge = |i: usize| -> f64 {
        if i == 0 {
            alpha
        } else if i == levels {
            f64::INFINITY
        } else {
            std.inverse_cdf(mass_below + mass * i as f64 / n)
        }
    };
    let pdf = |z: f64| if z.is_infinite() { 0.0 } else { std.pdf(z) };
    let mut values = Vec::with_capacity(levels);
    for i in 0..levels {
        let (a, b) = (z_edge(i), z_edge(i + 1));
        let p = mass / n;
        values.push((mean + sd * (pdf(a) - pdf(b)) / p).max(0.0));
    }
    Ok(Grid {
        values,
        probs: vec![1.0 / n; levels],
        edges: (1..levels).map(|i| mean + sd * z_edge(i)).collect(),
    })
}

/// Grid choices for [`build_mdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpGrids {
    pub battery_step: f64,
    pub power_step: f64,
    pub harvest: Grid,
    pub channel: Grid,
}

impl MdpGrids {
    /// Unit battery and power steps, 8 harvest and 8 channel levels.
    pub fn for_config(config: &SystemConfig) -> Result<Self> {
        Ok(MdpGrids {
            battery_step: 1.0,
            power_step: 1.0,
            harvest: quantize_harvest(config.harvest_mean, config.harvest_var, DEFAULT_LEVELS)?,
            channel: quantize_channel(DEFAULT_LEVELS)?,
        })
    }
}

fn steps_in(range: f64, step: f64, name: &str) -> Result<usize> {
    let count = range / step;
    if !(step > 0.0) || (count - count.round()).abs() > 1e-9 {
        return Err(Error::Config(format!("{name} step {step} does not divide {range}")));
    }
    Ok(count.round() as usize)
}

/// Single-node MDP on the grid. States are indexed
/// `(battery * harvest_levels + harvest) * channel_levels + channel`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedMdp {
    pub battery: Vec<f64>,
    pub actions: Vec<f64>,
    pub grids: MdpGrids,
    pub b_max: f64,
    pub p_max: f64,
    pub model: FiniteMdp,
}

impl DiscretizedMdp {
    pub fn num_states(&self) -> usize {
        self.battery.len() * self.grids.harvest.len() * self.grids.channel.len()
    }

    pub fn state_index(&self, battery: usize, harvest: usize, channel: usize) -> usize {
        (battery * self.grids.harvest.len() + harvest) * self.grids.channel.len() + channel
    }

    pub fn state_levels(&self, s: usize) -> (usize, usize, usize) {
        let (h, c) = (self.grids.harvest.len(), self.grids.channel.len());
        (s / (h * c), (s / c) % h, s % c)
    }

    /// Feasible action indices of battery level `b`, i.e. powers up to
    /// `min(battery, p_max)`.
    pub fn feasible_actions(&self, b: usize) -> usize {
        let cap = self.battery[b].min(self.p_max);
        self.actions.iter().take_while(|p| **p <= cap + 1e-9).count()
    }

    pub fn project_battery(&self, x: f64) -> usize {
        let step = self.grids.battery_step;
        ((x / step).round().max(0.0) as usize).min(self.battery.len() - 1)
    }

    /// Reference state for value iteration: full battery, middle harvest and
    /// channel levels.
    pub fn reference_state(&self) -> usize {
        self.state_index(
            self.battery.len() - 1,
            self.grids.harvest.len() / 2,
            self.grids.channel.len() / 2,
        )
    }

    pub fn solve(&self, tol: f64) -> Result<MdpPolicy> {
        let options = RviOptions {
            tol,
            reference_state: self.reference_state(),
            ..RviOptions::default()
        };
        let sol = self.model.relative_value_iteration(&options)?;
        log::info!("value iteration converged in {} sweeps, gain {:.6}", sol.sweeps, sol.gain);
        Ok(MdpPolicy {
            battery_step: self.grids.battery_step,
            b_max: self.b_max,
            p_max: self.p_max,
            battery: self.battery.clone(),
            harvest: self.grids.harvest.clone(),
            channel: self.grids.channel.clone(),
            table: sol.policy.iter().map(|a| self.actions[*a]).collect(),
            gain: sol.gain,
        })
    }
}

pub fn build_mdp(config: &SystemConfig, grids: &MdpGrids) -> Result<DiscretizedMdp> {
    config.validate()?;
    if config.k != 1 {
        return Err(Error::Config(format!("the MDP baseline is single-node, got k = {}", config.k)));
    }
    grids.harvest.validate("harvest")?;
    grids.channel.validate("channel")?;
    let nb = steps_in(config.b_max, grids.battery_step, "battery")?;
    let np = steps_in(config.p_max, grids.power_step, "power")?;
    let battery: Vec<f64> = (0..=nb).map(|i| i as f64 * grids.battery_step).collect();
    let actions: Vec<f64> = (0..=np).map(|i| i as f64 * grids.power_step).collect();
    let mut mdp = DiscretizedMdp {
        battery,
        actions,
        grids: grids.clone(),
        b_max: config.b_max,
        p_max: config.p_max,
        model: FiniteMdp { actions: vec![] },
    };

    // Next-slot harvest and channel are independent of everything.
    let (nh, nc) = (grids.harvest.len(), grids.channel.len());
    let mut states = Vec::with_capacity(mdp.num_states());
    for s in 0..mdp.num_states() {
        let (b, h, c) = mdp.state_levels(s);
        let gain = grids.channel.values[c];
        let acts = (0..mdp.feasible_actions(b))
            .map(|a| {
                let power = mdp.actions[a];
                let next_b = mdp.project_battery(
                    (mdp.battery[b] + grids.harvest.values[h] - power).min(config.b_max),
                );
                let mut transitions = Vec::with_capacity(nh * nc);
                for h2 in 0..nh {
                    for c2 in 0..nc {
                        transitions.push((
                            mdp.state_index(next_b, h2, c2),
                            grids.harvest.probs[h2] * grids.channel.probs[c2],
                        ));
                    }
                }
                Action {
                    reward: (power * gain).ln_1p(),
                    transitions,
                }
            })
            .collect::<Vec<_>>();
        assert!(!acts.is_empty(), "zero power is always feasible");
        states.push(acts);
    }
    mdp.model = FiniteMdp { actions: states };
    Ok(mdp)
}

/// Lookup-table power policy for a single node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpPolicy {
    pub battery_step: f64,
    pub b_max: f64,
    pub p_max: f64,
    pub battery: Vec<f64>,
    pub harvest: Grid,
    pub channel: Grid,
    /// Power per state, same indexing as [`DiscretizedMdp`].
    pub table: Vec<f64>,
    /// Average reward per slot of the discretized model.
    pub gain: f64,
}

impl MdpPolicy {
    fn index(&self, b: usize, h: usize, c: usize) -> usize {
        (b * self.harvest.len() + h) * self.channel.len() + c
    }

    /// Power for a continuous single-node state. The battery is floored to
    /// the grid so the table never assumes more energy than is stored.
    pub fn act(&self, state: &SlotState) -> Result<f64> {
        if state.nodes() != 1 {
            return Err(Error::Dimension(format!("MDP policy is single-node, state has {}", state.nodes())));
        }
        let battery = state.battery[0];
        let b = ((battery / self.battery_step + 1e-9).floor().max(0.0) as usize).min(self.battery.len() - 1);
        let h = self.harvest.level_of(state.harvested[0]);
        let c = self.channel.level_of(state.channel[0]);
        Ok(self.table[self.index(b, h, c)].clamp(0.0, battery.min(self.p_max)))
    }

    /// Lookup table as CSV, one row per grid state.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("battery_level,harvest_level,channel_level,battery,harvest,channel,power\n");
        for b in 0..self.battery.len() {
            for h in 0..self.harvest.len() {
                for c in 0..self.channel.len() {
                    writeln!(
                        out,
                        "{b},{h},{c},{},{:.11e},{:.11e},{}",
                        self.battery[b],
                        self.harvest.values[h],
                        self.channel.values[c],
                        self.table[self.index(b, h, c)]
                    )
                    .expect("write to string");
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("policy serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let policy: MdpPolicy = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("line {} column {}: {e}", e.line(), e.column())))?;
        let expected = policy.battery.len() * policy.harvest.len() * policy.channel.len();
        if policy.table.len() != expected || policy.battery.is_empty() {
            return Err(Error::format(path, "table size does not match grids"));
        }
        Ok(policy)
    }
}

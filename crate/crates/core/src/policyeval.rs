//! Online rollouts of power-control policies and the block-wise offline
//! benchmark they are compared against.
//!
//! The evaluation stream is cut into blocks of [`BLOCK_LEN`] slots, block `i`
//! drawn from its own random substream. A policy is rolled out over the
//! whole stream with the clipped battery update; the benchmark solves the
//! offline program block by block, each block starting from the terminal
//! battery of the previous block's offline solution.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envsim::{battery_step, generate_episode, slot_rate, EpisodeRealization, SlotState, SystemConfig};
use crate::error::{Error, Result};
use crate::mdp::MdpPolicy;
use crate::neuralnet::Checkpoint;
use crate::offline::{solve_offline, OfflineProgram};
use crate::rng::{stream_rng, Substream};

pub const BLOCK_LEN: usize = 20;
pub const BENCHMARK_TOL: f64 = 1e-6;

/// An online decision rule mapping the current state to per-node powers.
pub trait Policy: Sync {
    /// Raw powers; may be infeasible, the evaluator clamps them.
    fn act(&self, state: &SlotState) -> Result<Vec<f64>>;
    fn describe(&self) -> String;
}

/// Clamps each entry of `raw` to `[0, min(battery, p_max)]`. NaN maps to 0.
pub fn clamp_powers(raw: &[f64], battery: &[f64], p_max: f64) -> Vec<f64> {
    raw.iter()
        .zip(battery)
        .map(|(p, b)| if p.is_nan() { 0.0 } else { p.clamp(0.0, b.min(p_max)) })
        .collect()
}

/// Feasibility wrapper applied to every policy during evaluation. In strict
/// mode an infeasible raw output is an error instead of being clamped.
pub struct Feasible<'a> {
    pub inner: &'a dyn Policy,
    pub p_max: f64,
    pub strict: bool,
}

impl Feasible<'_> {
    pub fn act(&self, state: &SlotState) -> Result<Vec<f64>> {
        let raw = self.inner.act(state)?;
        if raw.len() != state.nodes() {
            return Err(Error::Dimension(format!(
                "policy returned {} powers for {} nodes",
                raw.len(),
                state.nodes()
            )));
        }
        let clamped = clamp_powers(&raw, &state.battery, self.p_max);
        if self.strict {
            if let Some(k) = raw.iter().zip(&clamped).position(|(r, c)| r != c) {
                return Err(Error::InfeasibleAction(format!(
                    "{} chose {} at node {k} with battery {}",
                    self.inner.describe(),
                    raw[k],
                    state.battery[k]
                )));
            }
        }
        Ok(clamped)
    }
}

/// Transmits nothing.
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&self, state: &SlotState) -> Result<Vec<f64>> {
        Ok(vec![0.0; state.nodes()])
    }

    fn describe(&self) -> String {
        "zero".into()
    }
}

/// Spends `min(battery, p_max)` every slot.
pub struct GreedyPolicy {
    pub p_max: f64,
}

impl Policy for GreedyPolicy {
    fn act(&self, state: &SlotState) -> Result<Vec<f64>> {
        Ok(state.battery.iter().map(|b| b.min(self.p_max)).collect())
    }

    fn describe(&self) -> String {
        "greedy".into()
    }
}

/// Trained network: normalize the state, run the network, output raw powers.
pub struct DnnPolicy {
    pub checkpoint: Checkpoint,
}

impl DnnPolicy {
    pub fn new(checkpoint: Checkpoint, k: usize) -> Result<Self> {
        checkpoint.expect_nodes(k)?;
        Ok(DnnPolicy { checkpoint })
    }
}

impl Policy for DnnPolicy {
    fn act(&self, state: &SlotState) -> Result<Vec<f64>> {
        let x = self.checkpoint.normalization.apply(&state.features());
        self.checkpoint.params.forward(&x)
    }

    fn describe(&self) -> String {
        "dnn".into()
    }
}

impl Policy for MdpPolicy {
    fn act(&self, state: &SlotState) -> Result<Vec<f64>> {
        Ok(vec![MdpPolicy::act(self, state)?])
    }

    fn describe(&self) -> String {
        "mdp".into()
    }
}

/// Deterministic evaluation stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStream {
    pub seed: u64,
    pub block_len: usize,
}

impl EvalStream {
    pub fn new(seed: u64) -> Self {
        EvalStream {
            seed,
            block_len: BLOCK_LEN,
        }
    }

    pub fn block(&self, config: &SystemConfig, index: usize) -> EpisodeRealization {
        generate_episode(&mut stream_rng(self.seed, Substream::Eval, index as u64), config, self.block_len)
    }

    fn blocks(&self, num_slots: usize) -> Result<usize> {
        if num_slots == 0 || self.block_len == 0 || num_slots % self.block_len != 0 {
            return Err(Error::Config(format!(
                "slot count {num_slots} must be a positive multiple of the block length {}",
                self.block_len
            )));
        }
        Ok(num_slots / self.block_len)
    }
}

/// Rolls `policy` out over the first `num_slots` slots of `stream`, calling
/// `observe(state, powers, next_battery)` each slot. Returns the total rate.
pub fn rollout(
    policy: &dyn Policy,
    config: &SystemConfig,
    stream: &EvalStream,
    num_slots: usize,
    strict: bool,
    mut observe: impl FnMut(&SlotState, &[f64], &[f64]),
) -> Result<f64> {
    let blocks = stream.blocks(num_slots)?;
    let wrapper = Feasible {
        inner: policy,
        p_max: config.p_max,
        strict,
    };
    let mut battery = config.initial_batteries();
    let mut total = 0.0;
    for i in 0..blocks {
        let ep = stream.block(config, i);
        for n in 0..ep.horizon() {
            let state = SlotState {
                harvested: ep.energies.row(n).to_vec(),
                battery: battery.clone(),
                channel: ep.gains.row(n).to_vec(),
            };
            let powers = wrapper.act(&state)?;
            total += slot_rate(&powers, &state.channel)?;
            for k in 0..battery.len() {
                battery[k] = battery_step(battery[k], state.harvested[k], powers[k], config.b_max)?;
            }
            observe(&state, &powers, &battery);
        }
    }
    Ok(total)
}

/// Offline-optimal rate per slot over the first `num_slots` slots of
/// `stream`, solved block by block with carried terminal batteries.
pub fn offline_benchmark(config: &SystemConfig, stream: &EvalStream, num_slots: usize) -> Result<f64> {
    let blocks = stream.blocks(num_slots)?;
    let mut battery = config.initial_batteries();
    let mut total = 0.0;
    for i in 0..blocks {
        let program = block_program(config, stream, i, battery)?;
        let sol = solve_offline(&program, BENCHMARK_TOL)?;
        total += sol.objective;
        battery = sol.terminal_battery();
    }
    Ok(total / num_slots as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub policy: String,
    pub slots: usize,
    /// Nats per slot.
    pub policy_rps: f64,
    pub offline_rps: f64,
    /// `100 * policy_rps / offline_rps`.
    pub ratio: f64,
    pub config: SystemConfig,
    pub seed: u64,
}

impl PolicyReport {
    pub fn csv_header() -> &'static str {
        "policy,k,harvest_mean,harvest_var,slots,seed,offline_rps,policy_rps,percentage"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.11e},{:.11e},{:.11e}",
            self.policy,
            self.config.k,
            self.config.harvest_mean,
            self.config.harvest_var,
            self.slots,
            self.seed,
            self.offline_rps,
            self.policy_rps,
            self.ratio
        )
    }
}

/// Evaluates `policy` and the offline benchmark on the same stream.
pub fn evaluate_policy(
    policy: &dyn Policy,
    config: &SystemConfig,
    num_slots: usize,
    seed: u64,
    strict: bool,
) -> Result<PolicyReport> {
    config.validate()?;
    let stream = EvalStream::new(seed);
    let (total, offline_rps) = rayon::join(
        || rollout(policy, config, &stream, num_slots, strict, |_, _, _| {}),
        || offline_benchmark(config, &stream, num_slots),
    );
    let policy_rps = total? / num_slots as f64;
    let offline_rps = offline_rps?;
    Ok(PolicyReport {
        policy: policy.describe(),
        slots: num_slots,
        policy_rps,
        offline_rps,
        ratio: 100.0 * policy_rps / offline_rps,
        config: config.clone(),
        seed,
    })
}

/// Parameter a table sweeps over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Mean,
    Variance,
}

impl Sweep {
    fn column(self) -> &'static str {
        match self {
            Sweep::Mean => "m",
            Sweep::Variance => "v",
        }
    }

    fn value(self, config: &SystemConfig) -> f64 {
        match self {
            Sweep::Mean => config.harvest_mean,
            Sweep::Variance => config.harvest_var,
        }
    }
}

/// Table with one row per sweep point:
/// `<m|v>,offline_rps,<policy>_rps,<policy>_percentage,...` with policies in
/// name order. Reports at the same point must share the offline benchmark.
pub fn report_table(reports: &[PolicyReport], sweep: Sweep) -> Result<String> {
    let mut policies: Vec<&str> = reports.iter().map(|r| r.policy.as_str()).collect();
    policies.sort_unstable();
    policies.dedup();
    let mut points: Vec<f64> = reports.iter().map(|r| sweep.value(&r.config)).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut out = format!("{},offline_rps", sweep.column());
    for p in &policies {
        write!(out, ",{p}_rps,{p}_percentage").expect("write to string");
    }
    out.push('\n');
    for x in points {
        let at: Vec<&PolicyReport> = reports.iter().filter(|r| sweep.value(&r.config) == x).collect();
        let offline = at[0].offline_rps;
        if at.iter().any(|r| r.offline_rps != offline) {
            return Err(Error::Config(format!(
                "reports at {}={x} disagree on the offline benchmark",
                sweep.column()
            )));
        }
        write!(out, "{x},{offline:.11e}").expect("write to string");
        for p in &policies {
            match at.iter().find(|r| r.policy == *p) {
                Some(r) => write!(out, ",{:.11e},{:.11e}", r.policy_rps, 100.0 * r.policy_rps / r.offline_rps),
                None => write!(out, ",,"),
            }
            .expect("write to string");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn generate_report(reports: &[PolicyReport], sweep: Sweep, path: &Path) -> Result<()> {
    let table = report_table(reports, sweep)?;
    fs::write(path, table).map_err(|e| Error::io(path, e))
}

/// Offline program for block `index` of `stream` started from `battery`.
pub fn block_program(
    config: &SystemConfig,
    stream: &EvalStream,
    index: usize,
    battery: Vec<f64>,
) -> Result<OfflineProgram> {
    OfflineProgram::new(&stream.block(config, index), battery, config.b_max, config.p_max)
}

//! Relative value iteration for average-reward MDPs with finite state and
//! action sets.

use crate::error::{Error, Result};

/// Explicit finite MDP. `actions[s]` lists the feasible actions of state `s`
/// in a fixed order; each carries a reward and sparse successor list.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    pub actions: Vec<Vec<Action>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub reward: f64,
    /// `(next_state, probability)` pairs.
    pub transitions: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RviOptions {
    /// Stop once the span of the Bellman residual is below this.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Self-loop weight of the aperiodicity transform is `1 - tau`.
    pub tau: f64,
    pub reference_state: usize,
}

impl Default for RviOptions {
    fn default() -> Self {
        RviOptions {
            tol: 1e-8,
            max_sweeps: 200_000,
            tau: 0.5,
            reference_state: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RviSolution {
    /// Index into `actions[s]` of the greedy action; ties go to the first.
    pub policy: Vec<usize>,
    /// Average reward per step.
    pub gain: f64,
    /// Relative values, zero at the reference state.
    pub bias: Vec<f64>,
    pub sweeps: usize,
    pub span: f64,
}

impl FiniteMdp {
    pub fn num_states(&self) -> usize {
        self.actions.len()
    }

    /// Checks every state has an action and every transition row is a
    /// probability distribution over valid states.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_states();
        for (s, acts) in self.actions.iter().enumerate() {
            if acts.is_empty() {
                return Err(Error::Config(format!("state {s} has no feasible action")));
            }
            for a in acts {
                let total: f64 = a.transitions.iter().map(|(_, p)| p).sum();
                if (total - 1.0).abs() > 1e-12 || a.transitions.iter().any(|(t, p)| *t >= n || *p < 0.0) {
                    return Err(Error::Config(format!("state {s} has an invalid transition row")));
                }
                if !a.reward.is_finite() {
                    return Err(Error::Config(format!("state {s} has a non-finite reward")));
                }
            }
        }
        Ok(())
    }

    fn backup(&self, s: usize, a: &Action, h: &[f64], tau: f64) -> f64 {
        let expected: f64 = a.transitions.iter().map(|(t, p)| p * h[*t]).sum();
        tau * (a.reward + expected) + (1.0 - tau) * h[s]
    }

    /// Relative value iteration on the transformed chain
    /// `tau P + (1 - tau) I`, which is aperiodic and has the same optimal
    /// policies; its gain is `tau` times the original.
    pub fn relative_value_iteration(&self, options: &RviOptions) -> Result<RviSolution> {
        self.validate()?;
        let n = self.num_states();
        let (tau, reference) = (options.tau, options.reference_state);
        if !(tau > 0.0 && tau <= 1.0) || reference >= n {
            return Err(Error::Config("invalid value iteration options".into()));
        }
        let mut h = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut span = f64::INFINITY;
        for sweep in 1..=options.max_sweeps {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for s in 0..n {
                let best = self.actions[s]
                    .iter()
                    .map(|a| self.backup(s, a, &h, tau))
                    .fold(f64::NEG_INFINITY, f64::max);
                let diff = (best - h[s]) / tau;
                lo = lo.min(diff);
                hi = hi.max(diff);
                next[s] = best;
            }
            span = hi - lo;
            let offset = next[reference];
            for (hs, ns) in h.iter_mut().zip(&next) {
                *hs = ns - offset;
            }
            if span < options.tol {
                let policy = (0..n)
                    .map(|s| {
                        let mut best = 0;
                        let mut best_value = f64::NEG_INFINITY;
                        for (i, a) in self.actions[s].iter().enumerate() {
                            let v = self.backup(s, a, &h, tau);
                            if v > best_value {
                                best = i;
                                best_value = v;
                            }
                        }
                        best
                    })
                    .collect();
                return Ok(RviSolution {
                    policy,
                    gain: 0.5 * (lo + hi),
                    bias: h,
                    sweeps: sweep,
                    span,
                });
            }
        }
        Err(Error::RviNonConvergence {
            sweeps: options.max_sweeps,
            span,
        })
    }
}

//! Finite-horizon offline throughput maximization.
//!
//! With the whole realization known in advance, the power schedule solves
//!
//! ```txt
//!   maximize   sum_n ln(1 + sum_k p[n,k] g[n,k])
//!   subject to 0 <= p[n,k] <= P_max,  s[n,k] >= 0,
//!              p[n,k] <= B[n,k],
//!              B[n+1,k] = B[n,k] + e[n,k] - p[n,k] - s[n,k],
//!              0 <= B[n+1,k] <= B_max,
//! ```
//!
//! where `s` is energy spilled because the battery is full. The clipped
//! battery update is replaced by the explicit spill so the feasible set is a
//! polyhedron and the program is convex.

mod banded;
mod barrier;
mod brute;
mod kkt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::envsim::{EpisodeRealization, SystemConfig};
use crate::error::{Error, Result};

pub use barrier::{solve_offline, solve_offline_with, SolverOptions};
pub use brute::brute_force_offline;
pub use kkt::{kkt_residual, nnls};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineProgram {
    /// Harvested energy, slots by nodes.
    pub energies: Array2<f64>,
    /// Channel power gains, slots by nodes.
    pub gains: Array2<f64>,
    pub initial_battery: Vec<f64>,
    pub b_max: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    PowerNonneg,
    SpillNonneg,
    PowerCap,
    /// Transmit energy bounded by the start-of-slot battery.
    Causality,
    /// Two-sided bound `0 <= B[n+1] <= B_max`.
    BatteryRange,
}

/// One linear constraint `lower <= a . x <= upper` over the stacked
/// variable vector `x = [p_1, s_1, p_2, s_2, ...]` (see
/// [`OfflineProgram::power_index`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub kind: RowKind,
    pub slot: usize,
    pub node: usize,
    pub coeffs: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
}

impl ConstraintRow {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|(j, a)| a * x[*j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineSolution {
    pub powers: Array2<f64>,
    pub spills: Array2<f64>,
    /// Batteries at the start of slots `1..=N+1`, `(N+1) x K`.
    pub batteries: Array2<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
}

impl OfflineSolution {
    pub fn terminal_battery(&self) -> Vec<f64> {
        self.batteries.row(self.batteries.nrows() - 1).to_vec()
    }
}

pub fn build_offline_program(
    episode: &EpisodeRealization,
    config: &SystemConfig,
) -> Result<OfflineProgram> {
    if episode.nodes() != config.k {
        return Err(Error::Dimension(format!(
            "episode has {} nodes, config has {}",
            episode.nodes(),
            config.k
        )));
    }
    OfflineProgram::new(episode, config.initial_batteries(), config.b_max, config.p_max)
}

impl OfflineProgram {
    pub fn new(
        episode: &EpisodeRealization,
        initial_battery: Vec<f64>,
        b_max: f64,
        p_max: f64,
    ) -> Result<Self> {
        if initial_battery.len() != episode.nodes() {
            return Err(Error::Dimension(format!(
                "{} initial batteries for {} nodes",
                initial_battery.len(),
                episode.nodes()
            )));
        }
        if episode.horizon() == 0 {
            return Err(Error::Dimension("empty horizon".into()));
        }
        if !(p_max > 0.0 && b_max > 0.0) {
            return Err(Error::Config("b_max and p_max must be positive".into()));
        }
        if initial_battery.iter().any(|b| !(*b >= 0.0 && *b <= b_max)) {
            return Err(Error::Config("initial battery outside [0, b_max]".into()));
        }
        Ok(OfflineProgram {
            energies: episode.energies.clone(),
            gains: episode.gains.clone(),
            initial_battery,
            b_max,
            p_max,
        })
    }

    pub fn horizon(&self) -> usize {
        self.energies.nrows()
    }

    pub fn nodes(&self) -> usize {
        self.energies.ncols()
    }

    pub fn num_variables(&self) -> usize {
        2 * self.horizon() * self.nodes()
    }

    pub fn power_index(&self, slot: usize, node: usize) -> usize {
        2 * self.nodes() * slot + node
    }

    pub fn spill_index(&self, slot: usize, node: usize) -> usize {
        2 * self.nodes() * slot + self.nodes() + node
    }

    /// All constraints, five per (slot, node), grouped by slot. A row for
    /// slot `n` only involves variables of slots `<= n`.
    pub fn constraint_rows(&self) -> Vec<ConstraintRow> {
        let (n_slots, k_nodes) = (self.horizon(), self.nodes());
        let mut rows = Vec::with_capacity(5 * n_slots * k_nodes);
        for n in 0..n_slots {
            for k in 0..k_nodes {
                let p = self.power_index(n, k);
                let s = self.spill_index(n, k);
                let base = |kind, coeffs, lower, upper| ConstraintRow {
                    kind,
                    slot: n,
                    node: k,
                    coeffs,
                    lower,
                    upper,
                };
                rows.push(base(RowKind::PowerNonneg, vec![(p, 1.0)], 0.0, f64::INFINITY));
                rows.push(base(RowKind::SpillNonneg, vec![(s, 1.0)], 0.0, f64::INFINITY));
                rows.push(base(RowKind::PowerCap, vec![(p, 1.0)], f64::NEG_INFINITY, self.p_max));

                // Energy drawn before slot n: sum_{i<n} (p_i + s_i).
                let mut drawn: Vec<(usize, f64)> = Vec::with_capacity(2 * n + 2);
                let mut harvested = 0.0;
                for i in 0..n {
                    drawn.push((self.power_index(i, k), 1.0));
                    drawn.push((self.spill_index(i, k), 1.0));
                    harvested += self.energies[[i, k]];
                }
                let start = self.initial_battery[k] + harvested;

                let mut causal = drawn.clone();
                causal.push((p, 1.0));
                rows.push(base(RowKind::Causality, causal, f64::NEG_INFINITY, start));

                let mut range = drawn;
                range.push((p, 1.0));
                range.push((s, 1.0));
                let end = start + self.energies[[n, k]];
                rows.push(base(RowKind::BatteryRange, range, end - self.b_max, end));
            }
        }
        rows
    }

    /// Stacks powers and spills into the variable vector of
    /// [`constraint_rows`](Self::constraint_rows).
    pub fn stack(&self, powers: &Array2<f64>, spills: &Array2<f64>) -> Vec<f64> {
        let mut x = vec![0.0; self.num_variables()];
        for n in 0..self.horizon() {
            for k in 0..self.nodes() {
                x[self.power_index(n, k)] = powers[[n, k]];
                x[self.spill_index(n, k)] = spills[[n, k]];
            }
        }
        x
    }

    pub fn objective(&self, powers: &Array2<f64>) -> f64 {
        powers
            .rows()
            .into_iter()
            .zip(self.gains.rows())
            .map(|(p, g)| p.dot(&g).ln_1p())
            .sum()
    }

    /// Battery levels under the linear recursion with explicit spills.
    pub fn battery_trajectory(&self, powers: &Array2<f64>, spills: &Array2<f64>) -> Array2<f64> {
        let (n_slots, k_nodes) = (self.horizon(), self.nodes());
        let mut b = Array2::zeros((n_slots + 1, k_nodes));
        for k in 0..k_nodes {
            b[[0, k]] = self.initial_battery[k];
            for n in 0..n_slots {
                b[[n + 1, k]] = b[[n, k]] + self.energies[[n, k]] - powers[[n, k]] - spills[[n, k]];
            }
        }
        b
    }

    /// Largest constraint violation of `(powers, spills)`; zero when feasible.
    pub fn max_violation(&self, powers: &Array2<f64>, spills: &Array2<f64>) -> f64 {
        let x = self.stack(powers, spills);
        self.constraint_rows()
            .iter()
            .map(|row| {
                let v = row.eval(&x);
                (row.lower - v).max(v - row.upper).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// Completes a power schedule into a solution by spilling only on
    /// overflow (the clipped battery update). Powers are clipped to what the
    /// battery holds, so the result is always feasible.
    pub fn complete_schedule(&self, powers: &Array2<f64>, kkt_residual: f64) -> OfflineSolution {
        let (n_slots, k_nodes) = (self.horizon(), self.nodes());
        let mut p = powers.clone();
        let mut spills = Array2::zeros((n_slots, k_nodes));
        let mut batteries = Array2::zeros((n_slots + 1, k_nodes));
        for k in 0..k_nodes {
            batteries[[0, k]] = self.initial_battery[k];
            for n in 0..n_slots {
                let b = batteries[[n, k]];
                let pk = p[[n, k]].clamp(0.0, b.min(self.p_max));
                p[[n, k]] = pk;
                let raw = b + self.energies[[n, k]] - pk;
                let next = raw.min(self.b_max);
                spills[[n, k]] = raw - next;
                batteries[[n + 1, k]] = next;
            }
        }
        let objective = self.objective(&p);
        OfflineSolution {
            powers: p,
            spills,
            batteries,
            objective,
            kkt_residual,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn episode(e: Array2<f64>, g: Array2<f64>) -> EpisodeRealization {
        EpisodeRealization::new(e, g).unwrap()
    }

    #[test]
    fn single_slot_single_node_counts() {
        let ep = episode(array![[1.0]], array![[1.0]]);
        let prog = OfflineProgram::new(&ep, vec![5.0], 20.0, 15.0).unwrap();
        assert_eq!(prog.num_variables(), 2);
        assert_eq!(prog.constraint_rows().len(), 5);
    }

    #[test]
    fn rows_are_block_lower_triangular_in_slot_order() {
        let ep = episode(
            array![[1.0, 2.0], [3.0, 0.5], [0.2, 4.0], [1.0, 1.0]],
            array![[1.0, 0.3], [0.2, 2.0], [1.0, 1.0], [0.7, 0.1]],
        );
        let prog = OfflineProgram::new(&ep, vec![3.0, 4.0], 20.0, 15.0).unwrap();
        let width = 2 * prog.nodes();
        let rows = prog.constraint_rows();
        assert_eq!(rows.len(), 5 * 4 * 2);
        let mut last_slot = 0;
        for row in &rows {
            assert!(row.slot >= last_slot);
            last_slot = row.slot;
            let max_block = row.coeffs.iter().map(|(j, _)| j / width).max().unwrap();
            assert_eq!(max_block, row.slot, "{row:?}");
            // Rows only touch their own node.
            for (j, _) in &row.coeffs {
                assert_eq!(j % prog.nodes(), row.node);
            }
        }
    }

    #[test]
    fn zero_power_with_overflow_spill_is_feasible() {
        let ep = episode(
            array![[12.0, 0.0], [15.0, 1.0], [9.0, 30.0]],
            array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]],
        );
        let prog = OfflineProgram::new(&ep, vec![10.0, 0.0], 20.0, 15.0).unwrap();
        let zero = Array2::zeros((3, 2));
        let sol = prog.complete_schedule(&zero, f64::NAN);
        assert_eq!(prog.max_violation(&sol.powers, &sol.spills), 0.0);
        // s_n = [B_n + e_n - B_max]^+
        assert_eq!(sol.spills[[0, 0]], 2.0);
        assert_eq!(sol.spills[[1, 0]], 15.0);
        assert_eq!(sol.spills[[2, 1]], 11.0);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let ep = episode(array![[1.0, 1.0]], array![[1.0, 1.0]]);
        let config = SystemConfig {
            k: 3,
            ..SystemConfig::default()
        };
        assert!(matches!(build_offline_program(&ep, &config), Err(Error::Dimension(_))));
    }

    #[test]
    fn trajectory_matches_linear_recursion() {
        let ep = episode(array![[1.0], [2.0]], array![[1.0], [1.0]]);
        let prog = OfflineProgram::new(&ep, vec![4.0], 20.0, 15.0).unwrap();
        let b = prog.battery_trajectory(&array![[3.0], [2.0]], &array![[0.5], [0.0]]);
        assert_eq!(b, array![[4.0], [1.5], [1.5]]);
    }
}

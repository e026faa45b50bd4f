//! Exhaustive grid search over power schedules, used as an oracle for the
//! interior-point solver on tiny instances.

use ndarray::Array2;

use super::{kkt_residual, OfflineProgram, OfflineSolution};
use crate::error::{Error, Result};

const MAX_POINTS: f64 = 1e8;

/// Enumerates every schedule whose per-slot powers lie on the grid
/// `0, step, 2 step, ...` below `min(B, P_max)`, plus the two breakpoints of
/// the feasible interval: spending the whole battery and spending exactly
/// enough to avoid overflow. Batteries follow the clipped update, which
/// spills only on overflow.
pub fn brute_force_offline(program: &OfflineProgram, grid_step: f64) -> Result<OfflineSolution> {
    if !(grid_step > 0.0) {
        return Err(Error::Config("grid step must be positive".into()));
    }
    let (n_slots, k_nodes) = (program.horizon(), program.nodes());
    let per_axis = (program.p_max / grid_step).floor() + 1.0;
    let points = per_axis.powi((n_slots * k_nodes) as i32);
    if points > MAX_POINTS {
        return Err(Error::InstanceTooLarge { points });
    }

    let mut batteries = vec![0.0; (n_slots + 1) * k_nodes];
    batteries[..k_nodes].copy_from_slice(&program.initial_battery);
    let mut search = Search {
        program,
        step: grid_step,
        powers: vec![0.0; n_slots * k_nodes],
        batteries,
        best_powers: vec![0.0; n_slots * k_nodes],
        best: f64::NEG_INFINITY,
    };
    search.visit(0, 0, 0.0);

    let powers = Array2::from_shape_vec((n_slots, k_nodes), search.best_powers)
        .expect("shape matches enumeration");
    let mut solution = program.complete_schedule(&powers, f64::NAN);
    solution.kkt_residual = kkt_residual(&solution, program);
    Ok(solution)
}

struct Search<'a> {
    program: &'a OfflineProgram,
    step: f64,
    /// Current schedule, slot-major.
    powers: Vec<f64>,
    /// Battery at the start of each slot under the current schedule.
    batteries: Vec<f64>,
    best_powers: Vec<f64>,
    best: f64,
}

impl Search<'_> {
    /// Chooses p[slot, node] from the grid and breakpoints, then recurses.
    fn visit(&mut self, slot: usize, node: usize, value: f64) {
        let prog = self.program;
        let k_nodes = prog.nodes();
        if slot == prog.horizon() {
            if value > self.best {
                self.best = value;
                self.best_powers.copy_from_slice(&self.powers);
            }
            return;
        }
        if node == k_nodes {
            let mut snr = 0.0;
            for k in 0..k_nodes {
                let p = self.powers[slot * k_nodes + k];
                snr += p * prog.gains[[slot, k]];
                let b = self.batteries[slot * k_nodes + k];
                self.batteries[(slot + 1) * k_nodes + k] =
                    (b + prog.energies[[slot, k]] - p).min(prog.b_max);
            }
            self.visit(slot + 1, 0, value + snr.ln_1p());
            return;
        }
        let battery = self.batteries[slot * k_nodes + node];
        let cap = battery.min(prog.p_max);
        let no_overflow = battery + prog.energies[[slot, node]] - prog.b_max;
        let grid_points = (cap / self.step).floor() as usize + 1;
        let extra = [Some(cap), (no_overflow > 0.0 && no_overflow < cap).then_some(no_overflow)];
        let step = self.step;
        let grid = (0..grid_points).map(move |i| i as f64 * step).filter(move |p| *p <= cap);
        for p in grid.chain(extra.into_iter().flatten()) {
            self.powers[slot * k_nodes + node] = p;
            self.visit(slot, node + 1, value);
        }
    }
}

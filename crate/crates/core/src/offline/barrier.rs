//! Log-barrier interior-point solver for [`OfflineProgram`].
//!
//! The solver works in the equivalent parametrization `(p[n,k], B[n+1,k])`
//! with the spill recovered as `s = B[n] + e[n] - p[n] - B[n+1]`. Every
//! constraint then touches at most three variables from two consecutive
//! slots, so with slot-major ordering the Newton system is banded with
//! half-bandwidth about `2K` and each step costs `O(N K^3)`.
//!
//! Variables forced to zero (a node whose battery is empty and has not yet
//! harvested anything) are removed so the barrier interior is nonempty.

use super::banded::BandedSpd;
use super::{OfflineProgram, OfflineSolution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative objective accuracy.
    pub tol: f64,
    /// Newton iterations allowed per barrier stage.
    pub max_newton: usize,
    pub mu_initial: f64,
    pub mu_factor: f64,
    /// Stop once the barrier weight (per-constraint duality gap) is below
    /// this value.
    pub gap: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_newton: 200,
            mu_initial: 1.0,
            mu_factor: 10.0,
            gap: 1e-8,
        }
    }
}

pub fn solve_offline(program: &OfflineProgram, tol: f64) -> Result<OfflineSolution> {
    solve_offline_with(
        program,
        &SolverOptions {
            tol,
            ..SolverOptions::default()
        },
    )
}

pub fn solve_offline_with(program: &OfflineProgram, opts: &SolverOptions) -> Result<OfflineSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::Config("solver tolerance must be positive".into()));
    }
    let mut problem = Barrier::new(program);
    let (powers, residual) = problem.solve(opts)?;
    Ok(program.complete_schedule(&powers, residual))
}

/// `slack = constant + sum coef * x[var]`, at most three terms.
#[derive(Debug, Clone, Copy)]
struct Row {
    vars: [usize; 3],
    coefs: [f64; 3],
    len: usize,
    constant: f64,
}

impl Row {
    fn slack(&self, x: &[f64]) -> f64 {
        let mut s = self.constant;
        for t in 0..self.len {
            s += self.coefs[t] * x[self.vars[t]];
        }
        s
    }

    fn directional(&self, d: &[f64]) -> f64 {
        let mut s = 0.0;
        for t in 0..self.len {
            s += self.coefs[t] * d[self.vars[t]];
        }
        s
    }
}

/// A term of a row before free/fixed resolution.
#[derive(Debug, Clone, Copy)]
enum Term {
    Var(usize),
    Const(f64),
}

struct SlotTerm {
    vars: Vec<(usize, f64)>,
}

struct Barrier<'a> {
    program: &'a OfflineProgram,
    /// Free-variable index of p[n,k].
    power_var: Vec<Option<usize>>,
    nvar: usize,
    rows: Vec<Row>,
    slots: Vec<SlotTerm>,
    bandwidth: usize,
    x: Vec<f64>,
}

impl<'a> Barrier<'a> {
    fn new(program: &'a OfflineProgram) -> Self {
        let (n_slots, k_nodes) = (program.horizon(), program.nodes());
        let (b_max, p_max) = (program.b_max, program.p_max);
        let id = |n: usize, k: usize| n * k_nodes + k;

        // Upper envelope of the battery: zero only while nothing is stored
        // and nothing has been harvested.
        let mut power_var = vec![None; n_slots * k_nodes];
        let mut battery_var = vec![None; n_slots * k_nodes];
        let mut nvar = 0;
        let mut x = Vec::new();
        for n in 0..n_slots {
            for k in 0..k_nodes {
                let reach_start = reach(program, n, k);
                if reach_start > 0.0 {
                    power_var[id(n, k)] = Some(nvar);
                    nvar += 1;
                    x.push(0.0);
                }
            }
            for k in 0..k_nodes {
                if reach(program, n + 1, k) > 0.0 {
                    battery_var[id(n, k)] = Some(nvar);
                    nvar += 1;
                    x.push(0.0);
                }
            }
        }

        // Strictly feasible start: spend a quarter of what is available and
        // keep half of the remainder.
        for k in 0..k_nodes {
            let mut b = program.initial_battery[k];
            for n in 0..n_slots {
                let p = match power_var[id(n, k)] {
                    Some(v) => {
                        let p = 0.25 * b.min(p_max);
                        x[v] = p;
                        p
                    }
                    None => 0.0,
                };
                let next = match battery_var[id(n, k)] {
                    Some(v) => {
                        let bn = 0.5 * (b + program.energies[[n, k]] - p).min(b_max);
                        x[v] = bn;
                        bn
                    }
                    None => 0.0,
                };
                b = next;
            }
        }

        let term_p = |n: usize, k: usize| match power_var[id(n, k)] {
            Some(v) => Term::Var(v),
            None => Term::Const(0.0),
        };
        let term_b_after = |n: usize, k: usize| match battery_var[id(n, k)] {
            Some(v) => Term::Var(v),
            None => Term::Const(0.0),
        };
        let mut rows = Vec::with_capacity(6 * n_slots * k_nodes);
        let mut push = |terms: &[(Term, f64)], constant: f64| {
            let mut row = Row {
                vars: [0; 3],
                coefs: [0.0; 3],
                len: 0,
                constant,
            };
            for (t, c) in terms {
                match t {
                    Term::Var(v) => {
                        row.vars[row.len] = *v;
                        row.coefs[row.len] = *c;
                        row.len += 1;
                    }
                    Term::Const(val) => row.constant += c * val,
                }
            }
            if row.len > 0 {
                rows.push(row);
            }
        };
        for n in 0..n_slots {
            for k in 0..k_nodes {
                let p = term_p(n, k);
                let b_start = if n == 0 {
                    Term::Const(program.initial_battery[k])
                } else {
                    term_b_after(n - 1, k)
                };
                let b_end = term_b_after(n, k);
                let e = program.energies[[n, k]];
                push(&[(p, 1.0)], 0.0);
                push(&[(p, -1.0)], p_max);
                push(&[(b_start, 1.0), (p, -1.0)], 0.0);
                push(&[(b_start, 1.0), (p, -1.0), (b_end, -1.0)], e);
                push(&[(b_end, 1.0)], 0.0);
                push(&[(b_end, -1.0)], b_max);
            }
        }

        let slots = (0..n_slots)
            .map(|n| SlotTerm {
                vars: (0..k_nodes)
                    .filter_map(|k| power_var[id(n, k)].map(|v| (v, program.gains[[n, k]])))
                    .filter(|(_, g)| *g > 0.0)
                    .collect(),
            })
            .collect::<Vec<_>>();

        let mut bandwidth = 0;
        for row in &rows {
            for a in 0..row.len {
                for b in 0..row.len {
                    bandwidth = bandwidth.max(row.vars[a].abs_diff(row.vars[b]));
                }
            }
        }
        for slot in &slots {
            for (a, _) in &slot.vars {
                for (b, _) in &slot.vars {
                    bandwidth = bandwidth.max(a.abs_diff(*b));
                }
            }
        }

        Barrier {
            program,
            power_var,
            nvar,
            rows,
            slots,
            bandwidth,
            x,
        }
    }

    fn throughput(&self, x: &[f64]) -> f64 {
        self.slots
            .iter()
            .map(|s| s.vars.iter().map(|(v, g)| g * x[*v]).sum::<f64>().ln_1p())
            .sum()
    }

    /// Barrier function `-throughput - mu * sum ln(slack)`, `None` outside
    /// the interior.
    fn value(&self, x: &[f64], mu: f64) -> Option<f64> {
        let mut log_sum = 0.0;
        for row in &self.rows {
            let s = row.slack(x);
            if !(s > 0.0) {
                return None;
            }
            log_sum += s.ln();
        }
        Some(-self.throughput(x) - mu * log_sum)
    }

    fn gradient_hessian(&self, mu: f64, grad: &mut [f64], hess: &mut BandedSpd) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.clear();
        let x = &self.x;
        for slot in &self.slots {
            let u = 1.0 + slot.vars.iter().map(|(v, g)| g * x[*v]).sum::<f64>();
            for (a, ga) in &slot.vars {
                grad[*a] -= ga / u;
                for (b, gb) in &slot.vars {
                    if b <= a {
                        hess.add(*a, *b, ga * gb / (u * u));
                    }
                }
            }
        }
        for row in &self.rows {
            let s = row.slack(x);
            let w = mu / s;
            let h = w / s;
            for a in 0..row.len {
                grad[row.vars[a]] -= w * row.coefs[a];
                for b in 0..=a {
                    hess.add(row.vars[a], row.vars[b], h * row.coefs[a] * row.coefs[b]);
                }
            }
        }
    }

    /// KKT residual of the pair `(x, lambda)` with the primal-dual multiplier
    /// estimate `lambda_i = (mu / s_i) (1 - ds_i / s_i)` taken along the
    /// Newton step. Stationarity then only carries the objective curvature
    /// times the step, which vanishes at the center.
    fn dual_residual(&self, mu: f64, step: &[f64]) -> f64 {
        let x = &self.x;
        let mut res = vec![0.0; self.nvar];
        for slot in &self.slots {
            let u = 1.0 + slot.vars.iter().map(|(v, g)| g * x[*v]).sum::<f64>();
            for (a, ga) in &slot.vars {
                res[*a] -= ga / u;
            }
        }
        let mut worst: f64 = 0.0;
        for row in &self.rows {
            let s = row.slack(x);
            let lambda = mu / s * (1.0 - row.directional(step) / s);
            worst = worst.max((lambda * s).abs()).max(-lambda);
            for t in 0..row.len {
                res[row.vars[t]] -= lambda * row.coefs[t];
            }
        }
        res.iter().fold(worst, |m, r| m.max(r.abs()))
    }

    /// Centers at barrier weight `mu`; returns the Newton step count and the
    /// KKT residual at the center.
    fn center(&mut self, mu: f64, max_newton: usize) -> Result<(usize, f64)> {
        let n = self.nvar;
        let mut grad = vec![0.0; n];
        let mut hess = BandedSpd::zeros(n, self.bandwidth);
        let mut step = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut f = self
            .value(&self.x, mu)
            .expect("barrier iterate left the interior");
        for it in 0..max_newton {
            self.gradient_hessian(mu, &mut grad, &mut hess);
            let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if !hess.factor() {
                return Err(Error::NonConvergence {
                    iterations: it,
                    residual: grad_norm,
                });
            }
            step.iter_mut().zip(&grad).for_each(|(s, g)| *s = -g);
            hess.solve_factored(&mut step);
            let decrement: f64 = -grad.iter().zip(&step).map(|(g, s)| g * s).sum::<f64>();
            if decrement <= 1e-13 * (1.0 + f.abs()) || grad_norm <= 1e-10 {
                return Ok((it, self.dual_residual(mu, &step)));
            }

            // Largest step keeping every slack positive.
            let mut alpha: f64 = 1.0;
            for row in &self.rows {
                let ds = row.directional(&step);
                if ds < 0.0 {
                    alpha = alpha.min(-0.99 * row.slack(&self.x) / ds);
                }
            }
            let mut accepted = false;
            while alpha > 1e-14 {
                for i in 0..n {
                    trial[i] = self.x[i] + alpha * step[i];
                }
                if let Some(ft) = self.value(&trial, mu) {
                    if ft <= f - 0.25 * alpha * decrement {
                        f = ft;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted || alpha < 1e-8 {
                // Line search stalled at the floating-point floor.
                let residual = self.dual_residual(mu, &step);
                if accepted {
                    std::mem::swap(&mut self.x, &mut trial);
                }
                return Ok((it, residual));
            }
            std::mem::swap(&mut self.x, &mut trial);
        }
        self.gradient_hessian(mu, &mut grad, &mut hess);
        let g = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        Err(Error::NonConvergence {
            iterations: max_newton,
            residual: g,
        })
    }

    fn solve(&mut self, opts: &SolverOptions) -> Result<(ndarray::Array2<f64>, f64)> {
        let (n_slots, k_nodes) = (self.program.horizon(), self.program.nodes());
        let mut powers = ndarray::Array2::zeros((n_slots, k_nodes));
        if self.nvar == 0 {
            return Ok((powers, 0.0));
        }
        let m = self.rows.len() as f64;
        let mut mu = opts.mu_initial;
        let mut residual;
        loop {
            residual = self.center(mu, opts.max_newton)?.1;
            let objective = self.throughput(&self.x);
            if mu < opts.gap && m * mu <= opts.tol * objective.abs().max(1.0) {
                break;
            }
            mu /= opts.mu_factor;
        }
        for n in 0..n_slots {
            for k in 0..k_nodes {
                if let Some(v) = self.power_var[n * k_nodes + k] {
                    powers[[n, k]] = self.x[v];
                }
            }
        }
        Ok((powers, residual))
    }
}

/// Upper envelope of the battery at the start of slot `n` (0-based), i.e.
/// the level reached if nothing were ever spent.
fn reach(program: &OfflineProgram, n: usize, k: usize) -> f64 {
    let mut b = program.initial_battery[k];
    for i in 0..n {
        b = (b + program.energies[[i, k]]).min(program.b_max);
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::EpisodeRealization;
    use ndarray::{array, Array2};

    fn program(e: Array2<f64>, g: Array2<f64>, b0: Vec<f64>) -> OfflineProgram {
        let ep = EpisodeRealization::new(e, g).unwrap();
        OfflineProgram::new(&ep, b0, 20.0, 15.0).unwrap()
    }

    #[test]
    fn single_slot_spends_everything() {
        let prog = program(array![[0.0]], array![[1.0]], vec![5.0]);
        let sol = solve_offline(&prog, 1e-6).unwrap();
        assert!((sol.powers[[0, 0]] - 5.0).abs() < 1e-6);
        assert!((sol.objective - 6f64.ln()).abs() < 1e-7);
        assert!(sol.kkt_residual < 1e-6);
    }

    #[test]
    fn two_slot_examples() {
        let prog = program(array![[1.0], [0.0]], array![[1.0], [1.0]], vec![1.0]);
        let sol = solve_offline(&prog, 1e-6).unwrap();
        assert!((sol.objective - 2.0 * 2f64.ln()).abs() < 1e-6);
        assert!((sol.powers[[0, 0]] - 1.0).abs() < 1e-4);
        assert!((sol.powers[[1, 0]] - 1.0).abs() < 1e-4);

        let prog = program(array![[1.0], [0.0]], array![[2.0], [1.0]], vec![1.0]);
        let sol = solve_offline(&prog, 1e-6).unwrap();
        assert!((sol.objective - (3f64.ln() + 2f64.ln())).abs() < 1e-6);
    }

    #[test]
    fn empty_battery_without_harvest() {
        let prog = program(array![[0.0], [0.0], [2.0]], array![[1.0], [1.0], [1.0]], vec![0.0]);
        let sol = solve_offline(&prog, 1e-6).unwrap();
        assert_eq!(sol.powers[[0, 0]], 0.0);
        assert_eq!(sol.powers[[1, 0]], 0.0);
        assert_eq!(sol.powers[[2, 0]], 0.0);
        assert_eq!(sol.objective, 0.0);

        let prog = program(array![[0.0], [3.0], [0.0]], array![[1.0], [1.0], [1.0]], vec![0.0]);
        let sol = solve_offline(&prog, 1e-6).unwrap();
        assert!((sol.objective - 4f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn banded_width_tracks_node_count() {
        let k = 4;
        let prog = program(Array2::from_elem((6, k), 3.0), Array2::from_elem((6, k), 1.0), vec![5.0; k]);
        let b = Barrier::new(&prog);
        assert_eq!(b.nvar, 2 * 6 * k);
        assert!(b.bandwidth <= 2 * k);
    }

    #[test]
    fn zero_gain_slot_contributes_nothing() {
        let prog = program(array![[0.0]], array![[0.0]], vec![5.0]);
        let sol = solve_offline(&prog, 1e-6).unwrap();
        assert_eq!(sol.objective, 0.0);
    }
}

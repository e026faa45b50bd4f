//! Optimality certificate for a primal point of an [`OfflineProgram`].
//!
//! Multipliers are not taken from the solver. For a candidate point `x`
//! every constraint is written as `a_i . x <= b_i` with slack `r_i`, and the
//! multipliers are the nonnegative least-squares fit of
//!
//! ```txt
//!   [ A^T     ]          [ grad f(x) ]
//!   [ diag(r) ] lambda ~ [ 0         ]
//! ```
//!
//! so the residual measures stationarity and complementary slackness
//! together. Dense; meant for certification on small instances.

use nalgebra::{DMatrix, DVector};

use super::{OfflineProgram, OfflineSolution};

/// Largest violation among stationarity, complementary slackness and primal
/// feasibility at `solution`; zero at an exact optimum.
pub fn kkt_residual(solution: &OfflineSolution, program: &OfflineProgram) -> f64 {
    let x = program.stack(&solution.powers, &solution.spills);
    let nvar = x.len();

    let mut a_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut slacks = Vec::new();
    for row in program.constraint_rows() {
        let v = row.eval(&x);
        if row.upper.is_finite() {
            a_rows.push(row.coeffs.clone());
            slacks.push(row.upper - v);
        }
        if row.lower.is_finite() {
            a_rows.push(row.coeffs.iter().map(|(j, c)| (*j, -c)).collect());
            slacks.push(v - row.lower);
        }
    }
    let m = a_rows.len();

    let mut grad = vec![0.0; nvar];
    for n in 0..program.horizon() {
        let u = 1.0
            + (0..program.nodes())
                .map(|k| solution.powers[[n, k]] * program.gains[[n, k]])
                .sum::<f64>();
        for k in 0..program.nodes() {
            grad[program.power_index(n, k)] = program.gains[[n, k]] / u;
        }
    }

    let mut design = DMatrix::<f64>::zeros(nvar + m, m);
    for (i, coeffs) in a_rows.iter().enumerate() {
        for (j, c) in coeffs {
            design[(*j, i)] += c;
        }
        design[(nvar + i, i)] = slacks[i].max(0.0);
    }
    let mut rhs = DVector::<f64>::zeros(nvar + m);
    for j in 0..nvar {
        rhs[j] = grad[j];
    }
    let lambda = nnls(&design, &rhs);

    let mut residual: f64 = 0.0;
    for j in 0..nvar {
        let fit: f64 = (0..m).map(|i| design[(j, i)] * lambda[i]).sum();
        residual = residual.max((grad[j] - fit).abs());
    }
    for i in 0..m {
        residual = residual.max((lambda[i] * slacks[i]).abs());
        residual = residual.max(-slacks[i]);
    }
    residual
}

/// Lawson-Hanson active-set solution of `min ||A x - b||` subject to
/// `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = 10.0 * f64::EPSILON * scale * (a.nrows().max(n) as f64);

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|j| passive[*j]).collect();
        let sub = a.select_columns(&idx);
        let z = sub
            .svd(true, true)
            .solve(b, 1e-13)
            .expect("svd with both factors");
        let mut full = DVector::zeros(n);
        for (t, j) in idx.iter().enumerate() {
            full[*j] = z[t];
        }
        full
    };

    for _ in 0..3 * n.max(1) {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|j| !passive[*j])
            .max_by(|i, j| w[*i].total_cmp(&w[*j]));
        let Some(j) = candidate else { break };
        if w[j] <= tol {
            break;
        }
        passive[j] = true;
        loop {
            let z = solve_passive(&passive);
            if (0..n).filter(|j| passive[*j]).all(|j| z[j] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in 0..n {
                if passive[j] && z[j] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - z[j]));
                }
            }
            x += (z - &x) * alpha;
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
            if !passive.iter().any(|p| *p) {
                break;
            }
        }
    }
    x
}

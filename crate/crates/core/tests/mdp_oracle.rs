use ehpc_core::envsim::SystemConfig;
use ehpc_core::mdp::{build_mdp, quantize_channel, Action, FiniteMdp, Grid, MdpGrids, RviOptions};
use nalgebra::{DMatrix, DVector};

/// Average reward of a fixed deterministic policy, from the evaluation
/// equations `g + h(s) = r(s) + sum P(s, t) h(t)` with `h(0) = 0`.
fn policy_gain(mdp: &FiniteMdp, choice: &[usize]) -> f64 {
    let n = mdp.num_states();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        let act = &mdp.actions[s][choice[s]];
        b[s] = act.reward;
        // Column 0 carries the gain in place of h(0).
        a[(s, 0)] = 1.0;
        for t in 1..n {
            a[(s, t)] = if s == t { 1.0 } else { 0.0 };
        }
        for (t, p) in &act.transitions {
            if *t != 0 {
                a[(s, *t)] -= p;
            }
        }
    }
    let x = a.lu().solve(&b).expect("unichain policy");
    x[0]
}

/// Best gain over every deterministic stationary policy.
fn enumerate_best_gain(mdp: &FiniteMdp) -> f64 {
    let n = mdp.num_states();
    let counts: Vec<usize> = mdp.actions.iter().map(Vec::len).collect();
    let mut choice = vec![0; n];
    let mut best = f64::NEG_INFINITY;
    loop {
        best = best.max(policy_gain(mdp, &choice));
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            choice[i] += 1;
            if choice[i] < counts[i] {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn two_state_toy_matches_enumeration() {
    let mdp = FiniteMdp {
        actions: vec![
            vec![
                Action { reward: 1.0, transitions: vec![(0, 0.9), (1, 0.1)] },
                Action { reward: 0.0, transitions: vec![(1, 1.0)] },
            ],
            vec![
                Action { reward: 2.0, transitions: vec![(0, 1.0)] },
                Action { reward: 1.5, transitions: vec![(1, 0.6), (0, 0.4)] },
            ],
        ],
    };
    let oracle = enumerate_best_gain(&mdp);
    let sol = mdp.relative_value_iteration(&RviOptions::default()).unwrap();
    assert!((sol.gain - oracle).abs() < 1e-6, "{} vs {oracle}", sol.gain);
    assert!((policy_gain(&mdp, &sol.policy) - oracle).abs() < 1e-9);
}

#[test]
fn four_level_battery_chain_matches_enumeration() {
    let config = SystemConfig {
        k: 1,
        b_max: 3.0,
        p_max: 2.0,
        b_init: 1.0,
        ..SystemConfig::default()
    };
    let grids = MdpGrids {
        battery_step: 1.0,
        power_step: 1.0,
        harvest: Grid {
            values: vec![0.6, 5.0],
            probs: vec![0.7, 0.3],
            edges: vec![2.0],
        },
        channel: quantize_channel(2).unwrap(),
    };
    let mdp = build_mdp(&config, &grids).unwrap();
    assert_eq!(mdp.num_states(), 16);
    let oracle = enumerate_best_gain(&mdp.model);
    let policy = mdp.solve(1e-10).unwrap();
    assert!((policy.gain - oracle).abs() < 1e-6, "{} vs {oracle}", policy.gain);
}

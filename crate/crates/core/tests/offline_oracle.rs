use ehpc_core::envsim::{battery_step, generate_episode, EpisodeRealization, SystemConfig};
use ehpc_core::offline::{
    brute_force_offline, build_offline_program, kkt_residual, solve_offline, OfflineProgram,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_config(rng: &mut ChaCha8Rng, k: usize) -> SystemConfig {
    SystemConfig {
        k,
        harvest_mean: rng.random_range(2.0..10.0),
        harvest_var: rng.random_range(1.0..4.0),
        ..SystemConfig::default()
    }
}

#[test]
fn barrier_matches_brute_force_on_tiny_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let config = random_config(&mut rng, 1);
        let ep = generate_episode(&mut rng, &config, 3);
        let prog = build_offline_program(&ep, &config).unwrap();
        let sol = solve_offline(&prog, 1e-6).unwrap();
        let brute = brute_force_offline(&prog, 0.1).unwrap();
        assert!(
            (sol.objective - brute.objective).abs() < 2e-3,
            "{} vs {}",
            sol.objective,
            brute.objective
        );
        assert!(sol.objective >= brute.objective - 1e-6 * brute.objective.max(1.0));
        assert!(kkt_residual(&sol, &prog) < 1e-6);
        assert!(sol.kkt_residual < 1e-6);
    }
}

#[test]
fn kkt_residual_certifies_small_multinode_solutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for k in 1..=3 {
        for n in [1, 2, 5] {
            let config = random_config(&mut rng, k);
            let ep = generate_episode(&mut rng, &config, n);
            let prog = build_offline_program(&ep, &config).unwrap();
            let sol = solve_offline(&prog, 1e-6).unwrap();
            let r = kkt_residual(&sol, &prog);
            assert!(r < 1e-6, "k={k} n={n} residual {r}");
            assert_eq!(prog.max_violation(&sol.powers, &sol.spills), 0.0);
        }
    }
}

/// Random causal schedule simulated through the battery dynamics.
fn random_feasible_objective(rng: &mut ChaCha8Rng, prog: &OfflineProgram) -> f64 {
    let (n, k) = (prog.horizon(), prog.nodes());
    let mut b = prog.initial_battery.clone();
    let mut powers = Array2::zeros((n, k));
    for slot in 0..n {
        for node in 0..k {
            let p = rng.random_range(0.0..=1.0) * b[node].min(prog.p_max);
            powers[[slot, node]] = p;
            b[node] = battery_step(b[node], prog.energies[[slot, node]], p, prog.b_max).unwrap();
        }
    }
    prog.objective(&powers)
}

#[test]
fn offline_optimum_dominates_random_causal_policies() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let config = random_config(&mut rng, 3);
        let ep = generate_episode(&mut rng, &config, 20);
        let prog = build_offline_program(&ep, &config).unwrap();
        let sol = solve_offline(&prog, 1e-6).unwrap();
        for _ in 0..100 {
            assert!(random_feasible_objective(&mut rng, &prog) <= sol.objective + 1e-9);
        }
    }
}

#[test]
fn doubling_gains_increases_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let config = random_config(&mut rng, 2);
    let ep = generate_episode(&mut rng, &config, 10);
    let prog = build_offline_program(&ep, &config).unwrap();
    let base = solve_offline(&prog, 1e-6).unwrap();
    let doubled = EpisodeRealization::new(ep.energies.clone(), &ep.gains * 2.0).unwrap();
    let prog2 = build_offline_program(&doubled, &config).unwrap();
    let better = solve_offline(&prog2, 1e-6).unwrap();
    assert!(better.objective > base.objective + 1e-3);
}

#[test]
fn node_relabeling_permutes_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let config = random_config(&mut rng, 3);
    let ep = generate_episode(&mut rng, &config, 8);
    let perm = [2usize, 0, 1];
    let permute = |m: &Array2<f64>| {
        Array2::from_shape_fn(m.dim(), |(n, k)| m[[n, perm[k]]])
    };
    let ep2 = EpisodeRealization::new(permute(&ep.energies), permute(&ep.gains)).unwrap();
    let a = solve_offline(&build_offline_program(&ep, &config).unwrap(), 1e-6).unwrap();
    let b = solve_offline(&build_offline_program(&ep2, &config).unwrap(), 1e-6).unwrap();
    assert!((a.objective - b.objective).abs() < 1e-6 * a.objective);
}

#[test]
fn full_size_instance_converges() {
    let config = SystemConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let ep = generate_episode(&mut rng, &config, 20);
        let prog = build_offline_program(&ep, &config).unwrap();
        let sol = solve_offline(&prog, 1e-6).unwrap();
        assert!(sol.kkt_residual < 1e-6, "residual {}", sol.kkt_residual);
    }
}

use ehpc_core::datagen::DataPoint;
use ehpc_core::neuralnet::{gradient_check, MlpArchitecture, MlpParameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(rng: &mut ChaCha8Rng, arch: &MlpArchitecture, n: usize) -> Vec<DataPoint> {
    (0..n)
        .map(|_| DataPoint {
            features: (0..arch.input_width()).map(|_| rng.random_range(-2.0..2.0)).collect(),
            label: (0..arch.output_width()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect()
}

fn with_random_biases(mut params: MlpParameters, rng: &mut ChaCha8Rng) -> MlpParameters {
    for b in &mut params.biases {
        b.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
    }
    params
}

#[test]
fn tiny_network_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let arch = MlpArchitecture::new(vec![3, 4, 2], 0.01).unwrap();
    let params = with_random_biases(MlpParameters::random(arch.clone(), &mut rng), &mut rng);
    let batch = random_batch(&mut rng, &arch, 5);
    let check = gradient_check(&params, &batch, 1e-6, 1e-10).unwrap();
    assert!(check.checked > 0);
    assert!(check.max_relative_error < 1e-5, "{check:?}");
}

#[test]
fn random_architectures_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for _ in 0..12 {
        let depth = rng.random_range(1..=4);
        let mut sizes = vec![rng.random_range(1..=6)];
        sizes.extend((0..depth).map(|_| rng.random_range(1..=7)));
        sizes.push(rng.random_range(1..=3));
        let slope = rng.random_range(0.0..0.3);
        let arch = MlpArchitecture::new(sizes, slope).unwrap();
        let params = with_random_biases(MlpParameters::random(arch.clone(), &mut rng), &mut rng);
        for _ in 0..5 {
            let n = rng.random_range(1..=8);
            let batch = random_batch(&mut rng, &arch, n);
            let check = gradient_check(&params, &batch, 1e-6, 1e-10).unwrap();
            worst = worst.max(check.max_relative_error);
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

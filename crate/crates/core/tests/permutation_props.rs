use mcv_core::design::one_way_contrast;
use mcv_core::distributions::{chi2_cdf, Family, PopulationSpec};
use mcv_core::permutation::{permutation_distribution, permutation_tests};
use mcv_core::rng::{derive_seed, stream};
use mcv_core::sim::run_scenario;
use mcv_core::{ContrastSpec, GroupSample, PermutationPlan, ScenarioConfig, TestTarget};

fn groups(spec: &PopulationSpec, sizes: &[usize], seed: u64, index: u64) -> Vec<GroupSample> {
    let sampler = spec.sampler().unwrap();
    let mut rng = stream(seed, index);
    sizes
        .iter()
        .enumerate()
        .map(|(g, &n)| sampler.sample(g, n, &mut rng))
        .collect()
}

/// Kolmogorov–Smirnov distance of `xs` from a continuous CDF.
fn ks_distance(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max)
}

fn p_values_under_exchangeability(reps: usize, b: usize) -> Vec<f64> {
    let spec = PopulationSpec::identity_cov(Family::Normal, vec![2.0]);
    let contrast = one_way_contrast(2).unwrap();
    (0..reps)
        .map(|r| {
            let data = groups(&spec, &[8, 8], 21, r as u64);
            let plan = PermutationPlan::monte_carlo(b, derive_seed(21, r as u64));
            permutation_tests(&data, &contrast, &[TestTarget::Mcv], &plan).unwrap()[0]
                .p_permutation
                .unwrap()
        })
        .collect()
}

#[test]
fn exact_size_under_exchangeability() {
    let reps = 2000;
    let p = p_values_under_exchangeability(reps, 99);
    for alpha in [0.01, 0.05, 0.10] {
        let rate = p.iter().filter(|&&v| v <= alpha).count() as f64 / reps as f64;
        let tol = 3.0 * (alpha * (1.0 - alpha) / reps as f64).sqrt();
        assert!((rate - alpha).abs() <= tol, "alpha {alpha}: rate {rate}");
    }
    // add-one p-values live on the grid j/100 and are uniform on it
    let worst = (1..=100)
        .map(|j| {
            let grid = j as f64 / 100.0;
            let share = p.iter().filter(|&&v| v <= grid + 1e-12).count() as f64 / reps as f64;
            (share - grid).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst < 1.63 / (reps as f64).sqrt(), "KS {worst}");
}

#[test]
fn permutation_distribution_is_chi_square_under_alternative() {
    let contrast = one_way_contrast(2).unwrap();
    let a = PopulationSpec::identity_cov(Family::Normal, vec![1.0]);
    let b = PopulationSpec::identity_cov(Family::PowerExponential { beta: 0.5 }, vec![2.0]);
    let mut data = groups(&a, &[1000], 22, 0);
    let mut second = groups(&b, &[1000], 22, 1);
    second[0] = GroupSample::new(1, 1, second[0].as_slice().to_vec()).unwrap();
    data.append(&mut second);
    let dist = permutation_distribution(
        &data,
        &contrast,
        &[TestTarget::Mcv],
        &PermutationPlan::monte_carlo(1000, 5),
    )
    .unwrap();
    let mut stats = dist.statistics[0].clone();
    let ks = ks_distance(&mut stats, |x| chi2_cdf(x, 1).unwrap());
    assert!(ks <= 0.08, "KS {ks}");
}

#[test]
fn monte_carlo_approaches_exhaustive() {
    let spec = PopulationSpec::identity_cov(Family::Normal, vec![1.5]);
    let data = groups(&spec, &[3, 4], 23, 0);
    let contrast = one_way_contrast(2).unwrap();
    let exact = permutation_tests(
        &data,
        &contrast,
        &TestTarget::BOTH,
        &PermutationPlan::exhaustive(),
    )
    .unwrap();
    let mc = permutation_tests(
        &data,
        &contrast,
        &TestTarget::BOTH,
        &PermutationPlan::monte_carlo(20_000, 9),
    )
    .unwrap();
    for (e, m) in exact.iter().zip(&mc) {
        assert_eq!(e.permutations_used, Some(35));
        let (pe, pm) = (e.p_permutation.unwrap(), m.p_permutation.unwrap());
        assert!((pe - pm).abs() < 0.015, "{pe} vs {pm}");
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let spec = PopulationSpec::identity_cov(Family::StudentT { nu: 5.0 }, vec![1.0, 0.5]);
    let data = groups(&spec, &[12, 15, 10], 24, 0);
    let contrast: ContrastSpec = one_way_contrast(3).unwrap();
    let plan = PermutationPlan::monte_carlo(500, 77);
    let run = || permutation_tests(&data, &contrast, &TestTarget::BOTH, &plan).unwrap();
    assert_eq!(in_pool(1, run), in_pool(4, run));

    let config = ScenarioConfig {
        id: "threads".into(),
        populations: vec![spec.clone(), spec],
        sizes: vec![10, 12],
        contrast: mcv_core::sim::ContrastChoice::Design(mcv_core::DesignSpec::one_way(2)),
        targets: TestTarget::BOTH.to_vec(),
        methods: mcv_core::Method::BOTH.to_vec(),
        alpha: 0.05,
        mc_replications: 40,
        permutation_plan: PermutationPlan::monte_carlo(49, 0),
        seed: 3,
    };
    let sim = || run_scenario(&config).unwrap();
    assert_eq!(in_pool(1, sim), in_pool(3, sim));
}

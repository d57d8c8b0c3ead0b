//! Exact OT oracles checked against exhaustive search.

use otflow::diagnostics::{exact_assignment, marginal_w2_1d, sorted_coupling_1d};
use otflow::{CostFunction, Marginal, Points};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimum average cost over all matchings, by Heap's algorithm.
fn brute_force(xs: &Points, ys: &Points, cost: &CostFunction) -> f64 {
    let n = xs.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| {
        p.iter()
            .enumerate()
            .map(|(i, &j)| cost.eval(xs.row(i), ys.row(j)))
            .sum::<f64>()
    };
    let mut best = eval(&perm);
    let mut c = vec![0; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            let k = if i % 2 == 0 { 0 } else { c[i] };
            perm.swap(k, i);
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Points {
    Points::new(d, (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap()
}

fn costs() -> [CostFunction; 3] {
    [
        CostFunction::Quadratic,
        CostFunction::power(1.5).unwrap(),
        CostFunction::power(3.0).unwrap(),
    ]
}

#[test]
fn sorted_coupling_equals_permutation_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    for k in 0..200 {
        let n = 1 + k % 7;
        let cost = costs()[k % 3];
        let xs = random_points(&mut rng, n, 1);
        let ys = random_points(&mut rng, n, 1);
        let (_, sorted) = sorted_coupling_1d(xs.as_slice(), ys.as_slice(), &cost).unwrap();
        let brute = brute_force(&xs, &ys, &cost);
        assert!(
            (sorted - brute).abs() <= 1e-12 * (1.0 + brute),
            "instance {k}: {sorted} vs {brute}"
        );
    }
}

#[test]
fn assignment_equals_permutation_minimum_in_2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(602);
    for k in 0..100 {
        let n = 1 + k % 7;
        let cost = costs()[k % 3];
        let xs = random_points(&mut rng, n, 2);
        let ys = random_points(&mut rng, n, 2);
        let a = exact_assignment(&xs, &ys, &cost, 512).unwrap();
        let brute = brute_force(&xs, &ys, &cost);
        assert!(
            (a.cost - brute).abs() <= 1e-12 * (1.0 + brute),
            "instance {k}: {} vs {brute}",
            a.cost
        );
        let mut seen = a.matching.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn assignment_equals_sorted_oracle_in_1d() {
    let mut rng = ChaCha8Rng::seed_from_u64(603);
    for n in [1, 2, 17, 64, 100, 255, 256] {
        for cost in costs() {
            let xs = random_points(&mut rng, n, 1);
            let ys = random_points(&mut rng, n, 1);
            let a = exact_assignment(&xs, &ys, &cost, 512).unwrap();
            let (_, sorted) = sorted_coupling_1d(xs.as_slice(), ys.as_slice(), &cost).unwrap();
            assert!((a.cost - sorted).abs() <= 1e-9, "n = {n}: {} vs {sorted}", a.cost);
        }
    }
}

#[test]
fn identical_clouds_cost_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(604);
    for d in [1, 3] {
        let xs = random_points(&mut rng, 40, d);
        let a = exact_assignment(&xs, &xs, &CostFunction::Quadratic, 512).unwrap();
        assert_eq!(a.cost, 0.0);
        assert_eq!(a.matching, (0..40).collect::<Vec<_>>());
    }
}

#[test]
fn assignment_cap_is_enforced() {
    let xs = Points::from_scalars(&[0.0; 20]);
    assert!(exact_assignment(&xs, &xs, &CostFunction::Quadratic, 19).is_err());
    assert!(exact_assignment(&xs, &xs, &CostFunction::Quadratic, 20).is_ok());
}

#[test]
fn w2_of_target_draws_is_small() {
    let target = Marginal::gaussian(vec![6.0], 1.0).unwrap();
    let draws = target.sample(1000, 2024).unwrap();
    let w2 = marginal_w2_1d(draws.as_slice(), &target, 1).unwrap();
    assert!(w2 <= 0.1, "{w2}");
}

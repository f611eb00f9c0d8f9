use grader_core::metrics::{accuracy, discretize, f1, mse_metric, qwk, report};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Nearest of the five levels by exhaustive comparison; ties go up.
fn level(s: f64) -> usize {
    let mut best = 0;
    for j in 1..5 {
        if (s - j as f64 / 4.0).abs() <= (s - best as f64 / 4.0).abs() {
            best = j;
        }
    }
    best
}

/// Kappa from the pairwise form: 1 − mean w(a_k, b_k) / mean over all pairs w(a_k, b_l).
fn qwk_oracle(p: &[f64], y: &[f64]) -> f64 {
    let a: Vec<usize> = y.iter().map(|&s| level(s)).collect();
    let b: Vec<usize> = p.iter().map(|&s| level(s)).collect();
    let w = |i: usize, j: usize| ((i as f64 - j as f64) / 4.0).powi(2);
    let n = a.len() as f64;
    let observed: f64 = a.iter().zip(&b).map(|(&i, &j)| w(i, j)).sum();
    let mut expected = 0.0;
    for &i in &a {
        for &j in &b {
            expected += w(i, j);
        }
    }
    expected /= n;
    if expected == 0.0 {
        return if observed == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - observed / expected
}

fn f1_oracle(p: &[f64], y: &[f64]) -> f64 {
    let count = |pp: bool, yy: bool| p.iter().zip(y).filter(|(a, b)| (**a >= 0.5) == pp && (**b >= 0.5) == yy).count() as f64;
    let (tp, fp, fn_) = (count(true, true), count(true, false), count(false, true));
    if tp + fp + fn_ == 0.0 {
        1.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

fn instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(1..=200);
    let labels: Vec<f64> = (0..n).map(|_| rng.random_range(0..=4) as f64 / 4.0).collect();
    let noise = rng.random_range(0.0..0.6);
    let preds = labels
        .iter()
        .map(|&y| match rng.random_range(0..3) {
            0 => rng.random_range(0.0..=1.0),
            1 => (y + rng.random_range(-noise..=noise)).clamp(0.0, 1.0),
            _ => y,
        })
        .collect();
    (preds, labels)
}

#[test]
fn metrics_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let (p, y) = instance(&mut rng);
        let n = p.len() as f64;
        let mse: f64 = p.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let acc = p.iter().zip(&y).filter(|(a, b)| (**a >= 0.5) == (**b >= 0.5)).count() as f64 / n;
        assert!((mse_metric(&p, &y).unwrap() - mse).abs() <= 1e-12);
        assert!((accuracy(&p, &y).unwrap() - acc).abs() <= 1e-12);
        assert!((f1(&p, &y).unwrap() - f1_oracle(&p, &y)).abs() <= 1e-12);
        let k = qwk(&p, &y).unwrap();
        assert!((k - qwk_oracle(&p, &y)).abs() <= 1e-12, "{k} vs {}", qwk_oracle(&p, &y));
        assert!((-1.0..=1.0).contains(&k));
        for s in &p {
            assert_eq!(discretize(*s).unwrap(), level(*s));
        }
    }
}

#[test]
fn perfect_agreement_and_degenerate_inputs() {
    let y = [0.0, 0.25, 0.5, 0.75, 1.0, 0.5];
    assert_eq!(qwk(&y, &y).unwrap(), 1.0);
    assert_eq!(qwk(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 1.0);
    // All labels on one level, predictions elsewhere: no chance disagreement to compare against.
    assert_eq!(qwk(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 0.0);
    assert_eq!(f1(&[0.1, 0.2], &[0.0, 0.3]).unwrap(), 1.0);
    assert!(qwk(&[0.0, 1.0], &[1.0, 0.0]).unwrap() < 0.0);
    assert!(mse_metric::<f64>(&[], &[]).is_err());
    assert!(qwk(&[1.2], &[1.0]).is_err());
}

#[test]
fn independent_scores_have_near_zero_kappa() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..5 {
        let p: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..=1.0)).collect();
        let y: Vec<f64> = (0..1000).map(|_| rng.random_range(0..=4) as f64 / 4.0).collect();
        assert!(qwk(&p, &y).unwrap().abs() < 0.1);
    }
}

#[test]
fn case_study_triple() {
    let r = report(&[0.99, 0.52, 0.01], &[1.0, 0.5, 0.0]).unwrap();
    assert_eq!(r.acc, 1.0);
    assert_eq!(r.f1, 1.0);
    assert_eq!(r.qwk, 1.0);
    assert_eq!(r.n, 3);
}

//! Closed-form KL between diagonal Gaussians against Monte Carlo.

use p2pdrl::policy::{kl_divergence, log_prob, sample_action, GaussianDist};
use p2pdrl::rng::stream;
use rand::Rng as _;

#[test]
fn closed_form_kl_matches_monte_carlo_within_three_standard_errors() {
    const SAMPLES: usize = 1_000_000;
    let mut rng = stream(0x4B4C, &[]);
    for pair in 0..20 {
        let dim = 1 + pair % 3;
        let draw = |rng: &mut p2pdrl::rng::Rng| {
            GaussianDist::new(
                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..dim).map(|_| rng.random_range(0.4..1.6)).collect(),
            )
            .unwrap()
        };
        let p = draw(&mut rng);
        let q = draw(&mut rng);
        let exact = kl_divergence(&p, &q).unwrap();

        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..SAMPLES {
            let x = sample_action(&p, &mut rng);
            let d = log_prob(&p, &x).unwrap() - log_prob(&q, &x).unwrap();
            sum += d;
            sum_sq += d * d;
        }
        let n = SAMPLES as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) * n / (n - 1.0)).sqrt() / n.sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * se,
            "pair {pair}: closed form {exact}, Monte Carlo {mean} +/- {se}"
        );
    }
}

#[test]
fn kl_is_zero_for_identical_and_positive_otherwise() {
    let p = GaussianDist::new(vec![0.3, -0.2], vec![0.7, 1.1]).unwrap();
    assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    let q = GaussianDist::new(vec![0.3, -0.1], vec![0.7, 1.1]).unwrap();
    assert!(kl_divergence(&p, &q).unwrap() > 0.0);
}

use proptest::prelude::*;

use sceneflow::flow::{affine_forward, affine_inverse, log_density, sigma_from_log};

fn instance(max_dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1..=max_dim).prop_flat_map(|d| {
        (
            prop::collection::vec(-20.0..20.0f64, d),
            prop::collection::vec(-10.0..10.0f64, d),
            prop::collection::vec(-7.0..=7.0f64, d),
        )
    })
}

/// `log |det A|` by elimination with partial pivoting.
fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut total = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, p);
        total += a[c][c].abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    total
}

proptest! {
    #[test]
    fn inverse_round_trips((z, mu, log_sigma) in instance(8)) {
        let sigma = sigma_from_log(&log_sigma, 7.0);
        let back = affine_forward(&affine_inverse(&z, &mu, &sigma).unwrap(), &mu, &sigma).unwrap();
        for (a, b) in back.iter().zip(&z) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn log_det_matches_finite_difference_jacobian((z, mu, log_sigma) in instance(5)) {
        let sigma = sigma_from_log(&log_sigma, 7.0);
        let analytic: f64 = -sigma.iter().map(|s| s.ln()).sum::<f64>();
        prop_assume!(analytic.abs() > 1e-3);
        let h = 1e-5;
        let d = z.len();
        let mut jac = vec![vec![0.0; d]; d];
        for j in 0..d {
            let (mut plus, mut minus) = (z.clone(), z.clone());
            plus[j] += h;
            minus[j] -= h;
            let fp = affine_inverse(&plus, &mu, &sigma).unwrap();
            let fm = affine_inverse(&minus, &mu, &sigma).unwrap();
            for i in 0..d {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let numeric = log_abs_det(jac);
        prop_assert!((analytic - numeric).abs() / analytic.abs() < 1e-4, "{} vs {}", analytic, numeric);
    }

    #[test]
    fn one_dimensional_density_has_unit_mass(mu in -5.0..5.0f64, log_sigma in -7.0..=7.0f64) {
        let sigma = log_sigma.exp();
        let (lo, hi, n) = (mu - 12.0 * sigma, mu + 12.0 * sigma, 4000);
        let h = (hi - lo) / n as f64;
        let p = |x: f64| log_density(&[x], &[mu], &[sigma]).unwrap().exp();
        let mut s = p(lo) + p(hi);
        for i in 1..n {
            s += p(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        prop_assert!((s * h / 3.0 - 1.0).abs() < 1e-4);
    }
}

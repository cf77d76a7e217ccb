use super::*;
use crate::codebooks::rate;
use crate::linalg::{complex_normal_mat, complex_normal_vec, CVec};
use crate::rng::seeded;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn row(values: &[C64]) -> CMat {
    CMat::from_row_slice(1, values.len(), values)
}

#[test]
fn normalization_examples() {
    let ps = PrecoderSet {
        m: vec![identity(2) * c(0.5), CMat::zeros(2, 1)],
        rho: 0.5,
    };
    assert_eq!(normalize_power(&ps, 0.5).unwrap().m, ps.m);
    let big = PrecoderSet {
        m: vec![identity(2) * c(std::f64::consts::SQRT_2)],
        rho: 1.0,
    };
    let scaled = normalize_power(&big, 1.0).unwrap();
    assert!((&scaled.m[0] - &big.m[0] * c(0.5)).norm() < 1e-15);
    let zero = PrecoderSet {
        m: vec![CMat::zeros(2, 1)],
        rho: 1.0,
    };
    assert!(matches!(normalize_power(&zero, 1.0), Err(Error::Degenerate(_))));
}

#[test]
fn sum_rate_examples() {
    let mut rng = seeded(1);
    let h = vec![complex_normal_mat(&mut rng, 2, 3), complex_normal_mat(&mut rng, 2, 3)];
    let zero = PrecoderSet {
        m: vec![CMat::zeros(3, 2); 2],
        rho: 1.0,
    };
    assert_eq!(sum_rate(&h, &zero, 0.1).unwrap(), 0.0);

    let m = complex_normal_mat(&mut rng, 3, 2);
    let single = PrecoderSet {
        m: vec![m.clone()],
        rho: 1.0,
    };
    let expected = rate(&h[0], &(&m * m.adjoint()), 0.3);
    assert!((sum_rate(&h[..1], &single, 0.3).unwrap() - expected).abs() < 1e-10);

    // two single-antenna users: log₂(1 + SINR_j)
    let h = vec![
        row(&[C64::new(1.0, 0.5), c(-0.3)]),
        row(&[c(0.2), C64::new(0.0, 1.1)]),
    ];
    let m = vec![
        CMat::from_column_slice(2, 1, &[c(0.6), C64::new(0.1, 0.2)]),
        CMat::from_column_slice(2, 1, &[C64::new(-0.2, 0.3), c(0.7)]),
    ];
    let sigma2 = 0.25;
    let gain = |j: usize, k: usize| (&h[j] * &m[k])[(0, 0)].norm_sqr();
    let oracle = (1.0 + gain(0, 0) / (gain(0, 1) + sigma2)).log2() + (1.0 + gain(1, 1) / (gain(1, 0) + sigma2)).log2();
    let ps = PrecoderSet { m, rho: 1.0 };
    assert!((sum_rate(&h, &ps, sigma2).unwrap() - oracle).abs() < 1e-10);
}

#[test]
fn waterfilling_examples() {
    let (q, cap) = waterfilling_capacity(&identity(2), 2.0, 1.0).unwrap();
    assert!((q - identity(2)).norm() < 1e-12);
    assert!((cap - 2.0).abs() < 1e-12);

    let mut h = CMat::zeros(2, 2);
    h[(0, 0)] = c(1.0);
    for rho in [0.1, 1.0, 50.0] {
        let (q, _) = waterfilling_capacity(&h, rho, 1.0).unwrap();
        assert!((q[(0, 0)].re - rho).abs() < 1e-12 && q[(1, 1)].norm() < 1e-12);
    }

    h[(1, 1)] = c(0.5);
    let (_, cap) = waterfilling_capacity(&h, 1.0, 1.0).unwrap();
    let steps = 1_000_000;
    let mut best = 0.0f64;
    for i in 0..=steps {
        let p1 = i as f64 / steps as f64;
        best = best.max((1.0 + p1).log2() + (1.0 + 0.25 * (1.0 - p1)).log2());
    }
    assert!((cap - best).abs() < 1e-9);
    assert!(matches!(
        waterfilling_capacity(&CMat::zeros(2, 2), 1.0, 1.0),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn baseline_examples() {
    let q = baseline_tx_strategy(BaselineKind::UniformCov, None, 4, 2, 1.0).unwrap();
    assert_eq!(q, identity(4) * c(0.25));
    let mut rng = seeded(2);
    let h = complex_normal_mat(&mut rng, 2, 5);
    let q = baseline_tx_strategy(BaselineKind::UniformEigsp, Some(&h), 5, 2, 3.0).unwrap();
    assert!((q.trace().re - 3.0).abs() < 1e-12);
    assert!(baseline_tx_strategy(BaselineKind::UniformEigsp, None, 5, 2, 3.0).is_err());

    // orthogonal rows with norms 2 and 0.5: each eigenmode gets ρ/N_rx
    let mut h = CMat::zeros(2, 4);
    h[(0, 1)] = c(2.0);
    h[(1, 3)] = C64::new(0.0, 0.5);
    let (rho, sigma2) = (1.0, 0.2);
    let q = baseline_tx_strategy(BaselineKind::UniformEigsp, Some(&h), 4, 2, rho).unwrap();
    let expected = (1.0 + 4.0 * rho / (2.0 * sigma2)).log2() + (1.0 + 0.25 * rho / (2.0 * sigma2)).log2();
    assert!((rate(&h, &q, sigma2) - expected).abs() < 1e-10);
}

fn interference_ratio(h: &[CMat], ps: &PrecoderSet) -> f64 {
    let mut signal = 0.0;
    let mut leak = 0.0;
    for (j, hj) in h.iter().enumerate() {
        for (k, mk) in ps.m.iter().enumerate() {
            let p = (hj * mk).norm_squared();
            if j == k {
                signal += p;
            } else {
                leak += p;
            }
        }
    }
    leak / signal
}

fn interference_power(h: &[CMat], ps: &PrecoderSet) -> f64 {
    let mut leak = 0.0;
    for (j, hj) in h.iter().enumerate() {
        for (k, mk) in ps.m.iter().enumerate() {
            if j != k {
                leak += (hj * mk).norm_squared();
            }
        }
    }
    leak
}

fn orthogonal_users(seed: u64) -> Vec<CMat> {
    // two users on disjoint halves of a random unitary basis
    let mut rng = seeded(seed);
    let basis = complex_normal_mat(&mut rng, 4, 4).qr().q();
    (0..2)
        .map(|j| complex_normal_mat(&mut rng, 2, 2) * basis.columns(2 * j, 2).adjoint())
        .collect()
}

#[test]
fn rbd_examples() {
    let h = orthogonal_users(3);
    let ps = rbd(&h, 1.0, 1e-12).unwrap();
    assert!(interference_ratio(&h, &ps) < 1e-6);
    assert!((ps.total_power() - 1.0).abs() < 1e-12);

    let mut rng = seeded(4);
    let random: Vec<CMat> = (0..3).map(|_| complex_normal_mat(&mut rng, 2, 6)).collect();
    assert!((rbd(&random, 2.0, 0.3).unwrap().total_power() - 2.0).abs() < 1e-12);

    let h = vec![row(&[c(1.0), c(0.0)]), row(&[c(0.0), c(1.0)])];
    let (rho, sigma2) = (1.0, 0.1);
    let ps = rbd(&h, rho, sigma2).unwrap();
    assert!(ps.m[0][(1, 0)].norm() < 1e-12 && ps.m[1][(0, 0)].norm() < 1e-12);
    let expected = 2.0 * (1.0 + rho / (2.0 * sigma2)).log2();
    assert!((sum_rate(&h, &ps, sigma2).unwrap() - expected).abs() < 1e-10);

    assert!(rbd(&h[..1], rho, sigma2).is_err());
    assert!(rbd(&[h[0].clone(), CMat::zeros(1, 3)], rho, sigma2).is_err());
}

#[test]
fn rci_examples() {
    let mut rng = seeded(5);
    let h: Vec<CMat> = (0..2).map(|_| complex_normal_mat(&mut rng, 2, 4)).collect();
    let ps = rci(&h, 1.0, 1e-14).unwrap();
    assert!((ps.total_power() - 1.0).abs() < 1e-12);
    let mut stacked = CMat::zeros(4, 4);
    stacked.rows_mut(0, 2).copy_from(&h[0]);
    stacked.rows_mut(2, 2).copy_from(&h[1]);
    let mut m = CMat::zeros(4, 4);
    m.columns_mut(0, 2).copy_from(&ps.m[0]);
    m.columns_mut(2, 2).copy_from(&ps.m[1]);
    let hm = &stacked * &m;
    let diag_scale = hm[(0, 0)];
    let off = &hm - identity(4) * diag_scale;
    assert!(off.norm() < 1e-8 * diag_scale.norm());

    // two scalar users: closed-form 2×2 regularized inverse
    let h = vec![row(&[c(1.0), C64::new(0.5, 0.5)]), row(&[c(-0.2), c(0.9)])];
    let (rho, sigma2) = (1.0, 0.2);
    let alpha = 2.0 * sigma2 / rho;
    let g = [
        [
            (&h[0] * h[0].adjoint())[(0, 0)] + c(alpha),
            (&h[0] * h[1].adjoint())[(0, 0)],
        ],
        [
            (&h[1] * h[0].adjoint())[(0, 0)],
            (&h[1] * h[1].adjoint())[(0, 0)] + c(alpha),
        ],
    ];
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let inv = [[g[1][1] / det, -g[0][1] / det], [-g[1][0] / det, g[0][0] / det]];
    let cols: Vec<CMat> = (0..2)
        .map(|k| h[0].adjoint() * inv[0][k] + h[1].adjoint() * inv[1][k])
        .collect();
    let p: f64 = cols.iter().map(|m| m.norm_squared()).sum();
    let ps = rci(&h, rho, sigma2).unwrap();
    for (m, col) in ps.m.iter().zip(&cols) {
        assert!((m - col * c((rho / p).sqrt())).norm() < 1e-12);
    }
}

#[test]
fn smaller_noise_means_less_leakage() {
    let mut rng = seeded(6);
    for _ in 0..20 {
        let h: Vec<CMat> = (0..2).map(|_| complex_normal_mat(&mut rng, 2, 4)).collect();
        for method in [rbd as fn(&[CMat], f64, f64) -> Result<PrecoderSet>, rci] {
            let leaks: Vec<f64> = [1.0, 0.1, 0.01, 0.001]
                .iter()
                .map(|&s| interference_power(&h, &method(&h, 1.0, s).unwrap()))
                .collect();
            for w in leaks.windows(2) {
                assert!(w[1] <= w[0], "{leaks:?}");
            }
        }
    }
}

#[test]
fn single_user_wmmse_reaches_capacity() {
    let mut rng = seeded(7);
    for _ in 0..20 {
        let h = complex_normal_mat(&mut rng, 2, 4);
        let sigma2 = 0.1;
        let res = wmmse(std::slice::from_ref(&h), 1.0, sigma2, 2, DEFAULT_I_MAX).unwrap();
        let (_, cap) = waterfilling_capacity(&h, 1.0, sigma2).unwrap();
        assert!((cap - res.trace.last().unwrap()).abs() < 1e-3);
    }
}

#[test]
fn wmmse_is_monotone_and_feasible() {
    let mut rng = seeded(8);
    let h: Vec<CMat> = (0..3).map(|_| complex_normal_mat(&mut rng, 2, 6)).collect();
    for d in [1, 2] {
        let res = wmmse(&h, 1.0, 0.05, d, 100).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        assert!((res.precoders.total_power() - 1.0).abs() < 1e-10);
        assert!(res.precoders.m.iter().all(|m| m.ncols() == d));
    }
    assert!(wmmse(&h, 1.0, 0.05, 3, 10).is_err());
}

#[test]
fn two_user_wmmse_matches_grid_search() {
    let h = vec![row(&[c(1.0), c(0.0)]), row(&[c(0.0), c(0.6)])];
    let (rho, sigma2) = (1.0, 0.5);
    let res = wmmse(&h, rho, sigma2, 1, DEFAULT_I_MAX).unwrap();
    assert!(res.precoders.m[0][(1, 0)].norm() < 1e-6 * res.precoders.m[0][(0, 0)].norm());
    assert!(res.precoders.m[1][(0, 0)].norm() < 1e-6 * res.precoders.m[1][(1, 0)].norm());

    let mut best = 0.0f64;
    let n_angle = 90;
    let n_power = 500;
    for a in 0..=n_angle {
        let t1 = a as f64 / n_angle as f64 * std::f64::consts::FRAC_PI_2;
        for b in 0..=n_angle {
            let t2 = b as f64 / n_angle as f64 * std::f64::consts::FRAC_PI_2;
            for p in 0..=n_power {
                let p1 = rho * p as f64 / n_power as f64;
                let m = vec![
                    CMat::from_column_slice(2, 1, &[c(p1.sqrt() * t1.cos()), c(p1.sqrt() * t1.sin())]),
                    CMat::from_column_slice(2, 1, &[c((rho - p1).sqrt() * t2.sin()), c((rho - p1).sqrt() * t2.cos())]),
                ];
                let r = sum_rate(&h, &PrecoderSet { m, rho }, sigma2).unwrap();
                best = best.max(r);
            }
        }
    }
    assert!((res.trace.last().unwrap() - best).abs() < 1e-3);
}

#[test]
fn swmmse_on_deterministic_components_matches_wmmse() {
    let mut rng = seeded(9);
    let (nrx, ntx) = (2, 4);
    let means: Vec<CVec> = (0..3).map(|_| complex_normal_vec(&mut rng, nrx * ntx, 1.0)).collect();
    let model = GmmModel::full(vec![1.0 / 3.0; 3], means.clone(), vec![CMat::zeros(8, 8); 3], (nrx, ntx)).unwrap();
    let k_stars = [0, 2];
    let channels: Vec<CMat> = k_stars
        .iter()
        .map(|&k| CMat::from_column_slice(nrx, ntx, means[k].as_slice()))
        .collect();
    let sigma2 = 0.1;
    let mut powers = Vec::new();
    let res = swmmse_monitored(&model, &k_stars, 1.0, sigma2, &SwmmseOptions::default(), &mut rng, |_, ps| {
        powers.push(ps.total_power());
        Ok(())
    })
    .unwrap();
    assert_eq!(powers.len(), DEFAULT_I_MAX);
    assert!(powers.iter().all(|p| (p - 1.0).abs() < 1e-10));
    let stochastic = sum_rate(&channels, &res.precoders, sigma2).unwrap();
    let reference = wmmse(&channels, 1.0, sigma2, nrx, DEFAULT_I_MAX).unwrap();
    let det = reference.trace.last().unwrap();
    assert!((stochastic - det).abs() <= 0.02 * det, "{stochastic} vs {det}");
}

#[test]
fn swmmse_rejects_bad_indices() {
    let model = GmmModel::full(vec![1.0], vec![CVec::zeros(2)], vec![identity(2)], (1, 2)).unwrap();
    assert!(swmmse(&model, &[1], 1.0, 0.1, &SwmmseOptions::default(), &mut seeded(1)).is_err());
    assert!(swmmse(&model, &[], 1.0, 0.1, &SwmmseOptions::default(), &mut seeded(1)).is_err());
}

#[test]
fn constant_step_swmmse_follows_wmmse_on_deterministic_components() {
    let mut rng = seeded(12);
    let (nrx, ntx) = (2, 6);
    let means: Vec<CVec> = (0..3).map(|_| complex_normal_vec(&mut rng, nrx * ntx, 1.0)).collect();
    let model = GmmModel::full(vec![1.0; 3], means.clone(), vec![CMat::zeros(12, 12); 3], (nrx, ntx)).unwrap();
    let channels: Vec<CMat> = means.iter().map(|m| CMat::from_column_slice(nrx, ntx, m.as_slice())).collect();
    let opts = SwmmseOptions {
        i_max: 100,
        beta: Some(0.0),
        step_decay: 0.0,
        ..SwmmseOptions::default()
    };
    let stochastic = swmmse(&model, &[0, 1, 2], 1.0, 0.1, &opts, &mut rng).unwrap();
    let reference = wmmse_with_tol(&channels, 1.0, 0.1, nrx, 100, 0.0).unwrap();
    let a = sum_rate(&channels, &stochastic.precoders, 0.1).unwrap();
    let b = sum_rate(&channels, &reference.precoders, 0.1).unwrap();
    assert!((a - b).abs() < 1e-8 * b, "{a} vs {b}");
}

#[test]
fn swmmse_rejects_step_decay_outside_unit_interval() {
    let model = GmmModel::full(vec![1.0], vec![CVec::zeros(2)], vec![identity(2)], (1, 2)).unwrap();
    let opts = SwmmseOptions {
        step_decay: 1.5,
        ..SwmmseOptions::default()
    };
    assert!(swmmse(&model, &[0], 1.0, 0.1, &opts, &mut seeded(1)).is_err());
}

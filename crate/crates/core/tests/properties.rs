use dirac_mfp::fields;
use dirac_mfp::metrics::{fit_rate, wasserstein, wasserstein_lagrangian, Abscissa, Pushforward, QuantileTable};
use dirac_mfp::run::{RunConfig, TargetKind};
use dirac_mfp::{FlowField, LabelGrid, Profile, SpaceTimeGrid, TerminalDensity};
use proptest::prelude::*;

fn table(steps: &[f64], start: f64) -> QuantileTable {
    let n = steps.len();
    let q: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let mut x = vec![start];
    for s in steps {
        x.push(x[x.len() - 1] + s);
    }
    QuantileTable::new(q, x).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn profile_has_unit_mass(theta in 0.3f64..6.0) {
        let p = Profile::new(theta).unwrap();
        let m = p.integrate_phi_pow(1.0, -p.r_alpha, p.r_alpha);
        prop_assert!((m - 1.0).abs() < 1e-10, "mass {m}");
        prop_assert!((p.cdf(0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn profile_quantile_inverts_cdf(theta in 0.3f64..6.0, q in 0.0f64..1.0) {
        let p = Profile::new(theta).unwrap();
        let y = p.quantile(q).unwrap();
        prop_assert!(y.abs() <= p.r_alpha);
        prop_assert!((p.cdf(y) - q).abs() < 1e-10);
    }

    #[test]
    fn identity_is_stationary(theta in 0.5f64..5.0) {
        let p = Profile::new(theta).unwrap();
        let n = 41;
        let y: Vec<f64> = (0..n).map(|k| -0.8 * p.r_alpha + 1.6 * p.r_alpha * k as f64 / (n - 1) as f64).collect();
        let r = dirac_mfp::rescale::stationary_residual(&y, &y, &p).unwrap();
        let worst = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(worst < 1e-11, "{worst}");
    }

    #[test]
    fn power_bump_quantiles(a in -3.0f64..1.0, w in 0.2f64..4.0, theta in 0.5f64..4.0, q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
        let m = TerminalDensity::power_bump(a, a + w, theta).unwrap();
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let (x1, x2) = (m.quantile(lo).unwrap(), m.quantile(hi).unwrap());
        prop_assert!(x1 <= x2 + 1e-14);
        prop_assert!(x1 >= a - 1e-14 && x2 <= a + w + 1e-14);
        prop_assert!((m.cdf(x1) - lo).abs() < 1e-9);
    }

    #[test]
    fn wasserstein_metric_axioms(
        s1 in prop::collection::vec(0.01f64..1.0, 2..8),
        s2 in prop::collection::vec(0.01f64..1.0, 2..8),
        s3 in prop::collection::vec(0.01f64..1.0, 2..8),
        c in -2.0f64..2.0,
        order in 1u32..=2,
    ) {
        let (u, v, w) = (table(&s1, -0.5), table(&s2, 0.0), table(&s3, 0.3));
        let uv = wasserstein(&u, &v, order).unwrap();
        let vu = wasserstein(&v, &u, order).unwrap();
        let uw = wasserstein(&u, &w, order).unwrap();
        let wv = wasserstein(&w, &v, order).unwrap();
        prop_assert!((uv - vu).abs() < 1e-12);
        prop_assert!(uv <= uw + wv + 1e-12);
        prop_assert!(wasserstein(&u, &u, order).unwrap() == 0.0);
        let shifted = table(&s1, -0.5 + c);
        prop_assert!((wasserstein(&u, &shifted, order).unwrap() - c.abs()).abs() < 1e-12);
    }

    #[test]
    fn fit_rate_exact_on_power_laws(k in -2.0f64..2.0, lp in -3.0f64..3.0) {
        let pts: Vec<(f64, f64)> = (0..30).map(|i| {
            let t = 1e-4 * 1.4f64.powi(i);
            (t, (lp + k * t.ln()).exp())
        }).collect();
        let f = fit_rate(&pts, (1e-4, 1.0), Abscissa::Log).unwrap();
        prop_assert!((f.exponent - k).abs() < 1e-10);
        prop_assert!((f.log_prefactor - lp).abs() < 1e-9);
        prop_assert!(f.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn monotone_flows_conserve_mass(b in -1.0f64..1.0, theta in 0.5f64..4.0) {
        let p = Profile::new(theta).unwrap();
        let grid = SpaceTimeGrid::new(&p, 1e-2, 1.0, 16, 16).unwrap();
        let (eps, a) = (grid.eps, grid.alpha);
        let f = FlowField::from_fn(grid, |t, y| (t + eps).powf(a) * (y + 0.3 * b * (t + 1.0) * y.sin()) + b * t);
        for m in fields::slice_masses(&f, &p) {
            prop_assert!((m - 1.0).abs() < 1e-9, "{m}");
        }
    }

    #[test]
    fn config_round_trips(theta in 0.5f64..5.0, eps in 1e-5f64..2e-2, nt in 16usize..512, ny in 16usize..512,
                          seed in 0u64..1_000_000, self_similar in any::<bool>()) {
        let mut c = RunConfig { theta, eps, nt, ny, seed, ..RunConfig::default() };
        if self_similar {
            c.target.kind = TargetKind::SelfSimilar;
        }
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pushforward_routes_agree(b1 in -0.9f64..0.9, b2 in -0.9f64..0.9, s in 0.5f64..2.0) {
        let p = Profile::new(1.5).unwrap();
        let lab = LabelGrid::new(&p, 24).unwrap();
        let g: Vec<f64> = lab.y.iter().map(|&y| y + 0.3 * b1 * y.sin()).collect();
        let h: Vec<f64> = lab.y.iter().map(|&y| s * y + 0.3 * b2 * y.sin() + 0.1).collect();
        for order in [1, 2] {
            let lag = wasserstein_lagrangian(&p, &lab, &g, &h, order).unwrap();
            let qu = wasserstein(
                &Pushforward { profile: &p, labels: &lab, map: &g },
                &Pushforward { profile: &p, labels: &lab, map: &h },
                order,
            ).unwrap();
            prop_assert!((lag - qu).abs() < 1e-6, "order {order}: {lag} vs {qu}");
        }
    }
}

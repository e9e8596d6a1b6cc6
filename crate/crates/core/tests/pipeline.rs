use dirac_mfp::metrics::{fit_rate, Abscissa};
use dirac_mfp::run::{self, RunConfig, SweepAxis, TargetKind};
use dirac_mfp::Profile;

/// Dilation `gamma = lambda(t) y` carrying the labels to a power bump of
/// half-width `1`: `lambda'' = -2 c lambda^-(theta+1)` with
/// `lambda(0) = eps^alpha`, `lambda(T) = 1 / R`. Integrated with RK4 in
/// `s = ln(t + eps)` and shot on `lambda'(0)` by bisection. Returns
/// `(lambda, lambda')` at the solver's time nodes.
fn dilation_oracle(p: &Profile, eps: f64, t_final: f64, nt: usize) -> Vec<(f64, f64, f64)> {
    let th = p.theta;
    let c = p.coef();
    let sub = 200;
    let s0 = eps.ln();
    let ds = ((t_final + eps).ln() - s0) / (nt * sub) as f64;
    let rhs = |s: f64, z: [f64; 2]| {
        let w = s.exp();
        [w * z[1], -w * 2.0 * c * z[0].powf(-(th + 1.0))]
    };
    let integrate = |v0: f64| -> Option<Vec<(f64, f64, f64)>> {
        let mut z = [eps.powf(p.alpha), v0];
        let mut out = vec![(0.0, z[0], z[1])];
        for k in 0..nt * sub {
            let s = s0 + k as f64 * ds;
            let k1 = rhs(s, z);
            let k2 = rhs(s + 0.5 * ds, [z[0] + 0.5 * ds * k1[0], z[1] + 0.5 * ds * k1[1]]);
            let k3 = rhs(s + 0.5 * ds, [z[0] + 0.5 * ds * k2[0], z[1] + 0.5 * ds * k2[1]]);
            let k4 = rhs(s + ds, [z[0] + ds * k3[0], z[1] + ds * k3[1]]);
            z = [
                z[0] + ds / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                z[1] + ds / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            ];
            if !(z[0] > 0.0) {
                return None;
            }
            if (k + 1) % sub == 0 {
                out.push(((s + ds).exp() - eps, z[0], z[1]));
            }
        }
        Some(out)
    };
    let target = 1.0 / p.r_alpha;
    let (mut lo, mut hi) = (0.0, 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match integrate(mid) {
            Some(v) if v[nt].1 > target => hi = mid,
            _ => lo = mid,
        }
    }
    integrate(0.5 * (lo + hi)).unwrap()
}

#[test]
fn power_bump_rates_match_dilation_oracle() {
    let cfg = RunConfig { eps: 1e-4, fit: run::FitWindow { t_min: Some(1e-3), t_max: Some(0.25) }, ..RunConfig::default() };
    let out = run::execute(&cfg).unwrap();
    let p = &out.profile;
    let r = p.r_alpha;
    let ode = dilation_oracle(p, cfg.eps, cfg.t_final, cfg.nt);
    for (k, &(t, _, _)) in ode.iter().enumerate() {
        assert!((t - out.flow.grid.t[k]).abs() <= 1e-12 * (1.0 + t), "node {k}");
    }
    let w = cfg.window();
    let fit = |f: &dyn Fn(f64, f64) -> f64| {
        let pts: Vec<(f64, f64)> = ode.iter().map(|&(t, l, v)| (t, f(l, v))).collect();
        fit_rate(&pts, w, Abscissa::Log).unwrap().exponent
    };
    let expect = [
        ("support_radius", fit(&|l, _| l * r)),
        ("m_max", fit(&|l, _| 1.0 / l)),
        ("osc_u", fit(&|l, v| l * v * r * r / 2.0)),
        ("ux_max", fit(&|_, v| v.abs() * r)),
    ];
    for (law, e) in expect {
        let got = out.rates.law(law).unwrap().fitted_exponent.unwrap();
        assert!((got - e).abs() < 2e-3, "{law}: solver {got}, oracle {e}");
    }
}

#[test]
fn self_similar_target_passes_every_law() {
    let cfg = RunConfig {
        target: run::TargetSpec { kind: TargetKind::SelfSimilar, ..Default::default() },
        ..RunConfig::default()
    };
    let out = run::execute(&cfg).unwrap();
    assert!(out.checks_pass(), "{:?}", out.checks);
    assert!(out.rates.all_pass(), "{:?}", out.rates);
    let osc = out.rates.law("osc_u").unwrap().fitted_exponent.unwrap();
    assert!((osc - 1.0 / 3.0).abs() <= 0.03, "{osc}");
    let support = out.rates.law("support_radius").unwrap().fitted_exponent.unwrap();
    assert!((support - 2.0 / 3.0).abs() <= 0.1 * 2.0 / 3.0, "{support}");
}

#[test]
fn theta_sweep_tracks_support_exponent() {
    let d = tempfile::tempdir().unwrap();
    let res = run::sweep(&RunConfig::default(), SweepAxis::Theta, &[1.0, 2.0, 3.0], d.path(), &[]).unwrap();
    assert!(res.cauchy.is_empty());
    for e in &res.entries {
        let o = e.outcome.as_ref().unwrap();
        let a = 2.0 / (2.0 + e.value);
        let got = o.rates.law("support_radius").unwrap().fitted_exponent.unwrap();
        assert!((got - a).abs() <= 0.1 * a, "theta {}: {got} vs {a}", e.value);
    }
    let summary = std::fs::read_to_string(d.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("theta,status,iterations"));
}

#[test]
fn sweep_records_failed_runs() {
    let d = tempfile::tempdir().unwrap();
    let base = RunConfig { nt: 16, ny: 16, eps: 1e-2, ..RunConfig::default() };
    let res = run::sweep(&base, SweepAxis::Theta, &[1.0, -1.0], d.path(), &[]).unwrap();
    assert!(res.entries[0].outcome.is_ok());
    assert!(res.entries[1].outcome.is_err());
    let summary = std::fs::read_to_string(d.path().join("summary.csv")).unwrap();
    assert!(summary.lines().nth(2).unwrap().contains("failed"), "{summary}");
    assert!(run::sweep(&base, SweepAxis::Eps, &[], d.path(), &[]).is_err());
}

#[test]
fn run_directory_reconstructs_config() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig { nt: 20, ny: 18, eps: 5e-3, seed: 42, ..RunConfig::default() };
    cfg.target.a = -0.5;
    cfg.target.b = 1.5;
    cfg.fit.t_max = Some(0.4);
    cfg.solver.residual_tol = 1e-11;
    let out = run::execute(&cfg).unwrap();
    let files = run::write_run(&out, d.path()).unwrap();
    assert!(files.contains(&"manifest.json".to_string()));
    assert_eq!(run::read_config(d.path()).unwrap(), cfg);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("manifest.json")).unwrap()).unwrap();
    let echoed: RunConfig = serde_json::from_value(m["config"].clone()).unwrap();
    assert_eq!(echoed, cfg);
    for f in files {
        assert!(d.path().join(&f).is_file(), "{f}");
    }
    let again = run::execute(&run::read_config(d.path()).unwrap()).unwrap();
    assert_eq!(again.flow.gamma, out.flow.gamma);
}

#[test]
fn critical_run_skips_exponential_fits() {
    let cfg = RunConfig { theta: 2.0, nt: 48, ny: 48, ..RunConfig::default() };
    let out = run::execute(&cfg).unwrap();
    assert!(out.rates.critical);
    assert_eq!(out.rates.kappa, 0.0);
    for law in ["lyapunov", "d2_profile", "duality_pairing", "osc_u"] {
        let l = out.rates.law(law).unwrap();
        assert_eq!(l.pass, None, "{law}");
        assert!(l.note.as_deref().unwrap().starts_with("critical"), "{law}");
    }
    assert!(out.rates.law("support_radius").unwrap().fitted_exponent.is_some());
}

#[test]
fn stored_rates_refit_identically() {
    let d = tempfile::tempdir().unwrap();
    let cfg = RunConfig { nt: 32, ny: 32, eps: 1e-2, theta: 3.0, ..RunConfig::default() };
    let out = run::execute(&cfg).unwrap();
    run::write_run(&out, d.path()).unwrap();
    let refit = run::refit_rates(d.path(), None).unwrap();
    for (a, b) in out.rates.laws.iter().zip(&refit.laws) {
        assert_eq!(a.law, b.law);
        match (a.fitted_exponent, b.fitted_exponent) {
            (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12, "{}: {x} vs {y}", a.law),
            (x, y) => assert_eq!(x.is_some(), y.is_some(), "{}", a.law),
        }
    }
}

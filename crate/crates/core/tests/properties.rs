use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;

use loanrate_core::bank::{BankParameters, Costs, Funding, Hazard, MacroState, SignBoxRegion};
use loanrate_core::beliefs::{check_sk_order, InflationBelief, SecondOrderMeasure, TestLibrary};
use loanrate_core::data::{
    read_loans, simulate_loans, simulate_overdrafts, write_loans, GeneratorConfig, Indicator, LoanFile, OverdraftConfig,
};
use loanrate_core::mixture::{em_fit, Component, Design, DesignSpec, EmConfig, MixtureModel};
use loanrate_core::panel::{build_spread, fe_within, within_transform, Benchmark, ClusterScheme, PanelSpec};
use loanrate_core::pricing::{solve_optimal_rate, Problem, SolverConfig};
use loanrate_core::{Belief, Measure, Params};

fn belief() -> impl Strategy<Value = Belief> {
    prop_oneof![
        (-0.01..0.06f64, 0.003..0.03f64).prop_map(|(m, s)| InflationBelief::gaussian(m, s).unwrap()),
        (-0.01..0.06f64, 0.003..0.03f64, 0.003..0.03f64)
            .prop_map(|(m, l, r)| InflationBelief::two_piece_normal(m, l, r).unwrap()),
        (-0.02..0.02f64, prop::collection::vec((0.002..0.02f64, 0.05..1.0f64), 2..6)).prop_map(|(start, atoms)| {
            let total: f64 = atoms.iter().map(|a| a.1).sum();
            let pts = atoms.iter().scan(start, |x, a| {
                *x += a.0;
                Some(*x)
            });
            let pts = pts.collect();
            InflationBelief::discrete_grid(pts, atoms.iter().map(|a| a.1 / total).collect()).unwrap()
        }),
    ]
}

fn three_point() -> impl Strategy<Value = Belief> {
    (0.0..0.04f64, 0.002..0.02f64, 0.1..0.8f64).prop_map(|(c, h, mid)| {
        let side = (1.0 - mid) / 2.0;
        InflationBelief::discrete_grid(vec![c - h, c, c + h], vec![side, mid, side]).unwrap()
    })
}

fn params() -> impl Strategy<Value = Params> {
    (5.0..40.0f64, 0.06..0.16f64, 3.0..6.0f64, 0.5..3.0f64, 0.1..0.6f64, 0.01..0.05f64, 0.05..0.9f64, 0.0..100.0f64)
        .prop_map(|(g, s0, kappa, a_pi, a_x, r_star, rho, eta)| {
            BankParameters::new(
                g,
                Hazard { s0, kappa, a_pi, a_x },
                Funding { r_star, rho_pi: rho, pi_star: 0.02 },
                Costs::default(),
                eta,
            )
            .unwrap()
        })
}

fn macro_state() -> impl Strategy<Value = MacroState> {
    prop_oneof![Just(MacroState::Normal), Just(MacroState::Adverse)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dilation_keeps_mean_and_scales_variance(b in belief(), s in 1.0..3.0f64) {
        let d = b.mps_dilate(s).unwrap();
        prop_assert!((d.mean() - b.mean()).abs() < 1e-12);
        assert_relative_eq!(d.variance(), s * s * b.variance(), max_relative = 1e-9);
    }

    #[test]
    fn skew_shift_is_sk_ordered(b in three_point(), l0 in 0.0..0.5f64, dl in 0.05..0.4f64) {
        let (f, g) = (b.skew_shift(l0).unwrap(), b.skew_shift(l0 + dl).unwrap());
        prop_assert!((f.mean() - g.mean()).abs() < 1e-12);
        let lib = TestLibrary::for_pair(&f, &g, 11);
        prop_assert!(check_sk_order(&f, &g, &lib, 64).unwrap().holds());
    }

    #[test]
    fn expectation_is_linear(b in belief(), a in -3.0..3.0f64, c in -3.0..3.0f64) {
        let f = |x: f64| (1.0 + 10.0 * x).exp();
        let g = |x: f64| x * x;
        let lhs = b.expectation(64, |x| a * f(x) + c * g(x)).unwrap();
        let rhs = a * b.expectation(64, f).unwrap() + c * b.expectation(64, g).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn hazard_signs_and_utility_shape(p in params(), w in -0.5..0.5f64, dw in 1e-4..0.2f64) {
        let rep = p.sign_box(&SignBoxRegion { steps: 12, ..Default::default() });
        prop_assert_eq!(rep.dp_dr_violations + rep.dp_dpi_violations + rep.macro_violations, 0);
        prop_assert!(p.utility(w + dw) > p.utility(w));
        prop_assert!(p.utility_prime(w) > 0.0 && p.utility_second(w) < 0.0);
    }

    #[test]
    fn first_order_condition_matches_difference_quotient(p in params(), b in belief(), x in macro_state(), amb in any::<bool>(), t in 0.1..0.9f64) {
        let mu = SecondOrderMeasure::single(b);
        let cfg = SolverConfig::for_params(&p, x);
        let prob = Problem::new(&mu, &p).with_x(x).with_ambiguity(amb);
        let r = cfg.r_lo + t * (cfg.r_hi - cfg.r_lo);
        let h = 1e-6;
        let fd = (prob.objective(r + h).unwrap() - prob.objective(r - h).unwrap()) / (2.0 * h);
        let an = prob.foc_value(r).unwrap();
        prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "fd {fd} analytic {an}");
    }

    #[test]
    fn doubling_nodes_leaves_rate_unchanged(p in params(), b in belief(), x in macro_state()) {
        let mu = SecondOrderMeasure::single(b);
        let cfg = SolverConfig::for_params(&p, x);
        let base = Problem::new(&mu, &p).with_x(x).with_nodes(64);
        let fine = Problem::new(&mu, &p).with_x(x).with_nodes(128);
        let (a, b) = (solve_optimal_rate(&base, &cfg).unwrap(), solve_optimal_rate(&fine, &cfg).unwrap());
        prop_assert!((a.r_star_loan - b.r_star_loan).abs() < 1e-7);
    }

    #[test]
    fn pooled_measure_objective_is_weighted_sum(p in params(), b1 in belief(), b2 in belief(), w in 0.05..0.95f64, t in 0.1..0.9f64) {
        let pooled: Measure = SecondOrderMeasure::new(vec![(b1.clone(), w), (b2.clone(), 1.0 - w)]).unwrap();
        let (m1, m2) = (SecondOrderMeasure::single(b1), SecondOrderMeasure::single(b2));
        let cfg = SolverConfig::for_params(&p, MacroState::Normal);
        let r = cfg.r_lo + t * (cfg.r_hi - cfg.r_lo);
        let v = Problem::new(&pooled, &p).objective(r).unwrap();
        let parts = w * Problem::new(&m1, &p).objective(r).unwrap() + (1.0 - w) * Problem::new(&m2, &p).objective(r).unwrap();
        prop_assert!((v - parts).abs() <= 1e-12 * (1.0 + v.abs()));
    }
}

fn mixture() -> impl Strategy<Value = MixtureModel> {
    prop::collection::vec((0.05..1.0f64, 0.05..0.5f64, -2.0..4.0f64, -1.0..1.0f64), 1..5).prop_map(|cs| {
        let total: f64 = cs.iter().map(|c| c.0).sum();
        let comps = cs
            .into_iter()
            .map(|(w, s, b0, b1)| Component { weight: w / total, sigma: s, beta: vec![b0, b1] })
            .collect();
        MixtureModel::new(vec!["intercept".into(), "z".into()], comps).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixture_density_integrates_to_one(m in mixture(), z in -1.0..1.0f64) {
        let x = [1.0, z];
        let (lo, hi, n) = (-8.0, 10.0, 36_000);
        let h = (hi - lo) / n as f64;
        // Composite Simpson.
        let mut s = m.density(lo, &x) + m.density(hi, &x);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * m.density(lo + i as f64 * h, &x);
        }
        prop_assert!((s * h / 3.0 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn canonical_order_does_not_change_density(m in mixture(), z in -1.0..1.0f64, r in -2.0..4.0f64) {
        let mut rev = m.clone();
        rev.components.reverse();
        let mut c = rev.clone();
        c.canonicalize();
        let x = [1.0, z];
        prop_assert!((c.density(r, &x) - m.density(r, &x)).abs() < 1e-12);
        prop_assert!((rev.cdf(r, &x) - m.cdf(r, &x)).abs() < 1e-12);
        prop_assert!(c.components.windows(2).all(|w| w[0].beta[0] <= w[1].beta[0]));
    }

    #[test]
    fn quantile_inverts_cdf(m in mixture(), z in -1.0..1.0f64, q in 0.01..0.99f64) {
        let x = [1.0, z];
        let r = m.quantile(q, &x).unwrap();
        prop_assert!((m.cdf(r, &x) - q).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn em_log_likelihood_never_falls(seed in 0u64..10_000, g in 1usize..4) {
        let (rows, _) = simulate_loans(&GeneratorConfig { n: 600, seed, ..Default::default() }).unwrap();
        let d = Design::from_loans(&rows, &DesignSpec::default()).unwrap();
        let (_, rep) = em_fit(&d, g, &EmConfig { restarts: 1, seed, ..Default::default() }).unwrap();
        for w in rep.loglik_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn loan_csv_round_trip(seed in 0u64..10_000, n in 1usize..200) {
        let (rows, _) = simulate_loans(&GeneratorConfig { n, seed, ..Default::default() }).unwrap();
        let file = LoanFile { rows, extra_columns: vec![], extra_values: vec![] };
        let mut buf = Vec::new();
        write_loans(&mut buf, &file).unwrap();
        let back = read_loans(buf.as_slice()).unwrap();
        prop_assert_eq!(back.rows, file.rows);
    }

    #[test]
    fn clustered_covariance_is_psd(seed in 0u64..10_000, two_way in any::<bool>()) {
        let cfg = OverdraftConfig { seed, n_banks: 6, months: 12, obs_per_bank_month: 5, n_borrowers: 40, ..Default::default() };
        let (rows, _) = simulate_overdrafts(&cfg).unwrap();
        let rows = build_spread(&rows, Benchmark::Column).unwrap();
        let cluster = if two_way { ClusterScheme::BankBorrower } else { ClusterScheme::Bank };
        let spec = PanelSpec { bank_fe: true, ..PanelSpec::bivariate(Indicator::Niu, cluster) };
        let est = fe_within(&rows, &spec).unwrap();
        let k = est.covariance.len();
        let cov = DMatrix::from_fn(k, k, |i, j| est.covariance[i][j]);
        prop_assert_eq!(&cov, &cov.transpose());
        let scale = cov.diagonal().amax().max(f64::MIN_POSITIVE);
        prop_assert!(cov.symmetric_eigenvalues().iter().all(|&e| e >= -1e-12 * scale));
    }
}

proptest! {
    #[test]
    fn within_transform_is_idempotent(
        v in prop::collection::vec((0u32..5, -1e3..1e3f64), 1..80)
    ) {
        let (groups, values): (Vec<u32>, Vec<f64>) = v.into_iter().unzip();
        let once = within_transform(&values, &groups).unwrap();
        prop_assert_eq!(within_transform(&once, &groups).unwrap(), once.clone());
        for g in 0..5 {
            let members: Vec<f64> = groups.iter().zip(&once).filter(|(h, _)| **h == g).map(|(_, v)| *v).collect();
            let scale = values.iter().map(|v| v.abs()).fold(1.0, f64::max);
            prop_assert!(members.iter().sum::<f64>().abs() <= 1e-10 * scale * members.len().max(1) as f64);
        }
    }
}

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smoney::analysis::{estimate_stats, CountTable};
use smoney::bits::BitString;
use smoney::bounds::{self, FreeVariables, SchemeParams};
use smoney::photonics::PulseRecord;
use smoney::protocol;
use smoney::qmath::{self, Angle};
use smoney::spacetime::{self, SpacetimePoint};
use statrs::distribution::{Binomial, DiscreteCDF};

/// f recomputed from the raw parameters without sharing any library helper.
fn f_reference(p: &SchemeParams, v: &FreeVariables) -> f64 {
    let th = p.theta_deg.to_radians();
    let o = (th.cos() + th.sin()) / 2f64.sqrt();
    let lambda = 0.5 * (1.0 - (1.0 - (1.0 - o * o) * (1.0 - 4.0 * p.beta_pb * p.beta_pb)).sqrt());
    let h = 2.0 * p.beta_ps
        * (0.5 + 2.0 * p.beta_pb * p.beta_pb + (0.5 - 2.0 * p.beta_pb * p.beta_pb) * (2.0 * th).sin()).sqrt();
    let g = p.gamma_det - v.nu_unf;
    let delta = p.gamma_det * p.gamma_err / g;
    let x = 1.0 - delta / lambda;
    g * (lambda / 2.0 * x * x - (1.0 + 2.0 * p.beta_ps).ln()) - (1.0 - g) * (1.0 + h).ln()
}

fn point() -> impl Strategy<Value = SpacetimePoint> {
    (-50i32..50, -50i32..50).prop_map(|(t, x)| SpacetimePoint::new(t as f64, x as f64))
}

fn record() -> impl Strategy<Value = PulseRecord> {
    (any::<[bool; 4]>(), any::<bool>(), any::<bool>(), 0u32..4).prop_map(|(bits, m, x, photons)| PulseRecord {
        k: 0,
        t: bits[0],
        u: bits[1],
        photons,
        clicks: [false; 4],
        m,
        w: bits[2],
        x: if m { Some(x ^ bits[3]) } else { None },
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lambda_decreases_with_misalignment_and_bias(a in 0.0f64..45.0, b in 0.0f64..45.0, beta in 0.0f64..0.49, beta2 in 0.0f64..0.49) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let l_lo = qmath::lambda_bound(Angle::from_degrees(lo), beta).unwrap();
        let l_hi = qmath::lambda_bound(Angle::from_degrees(hi), beta).unwrap();
        prop_assert!(l_lo >= l_hi - 1e-15);
        let (blo, bhi) = if beta <= beta2 { (beta, beta2) } else { (beta2, beta) };
        prop_assert!(qmath::lambda_bound(Angle::from_degrees(a), blo).unwrap() >= qmath::lambda_bound(Angle::from_degrees(a), bhi).unwrap() - 1e-15);
        prop_assert!((0.0..=0.5).contains(&l_lo));
    }

    #[test]
    fn chernoff_exponent_scales_with_mean(mean in 1.0f64..1e7, eps in 0.01f64..0.99) {
        let lower = qmath::chernoff_tail(mean, eps, qmath::Tail::Lower).unwrap();
        let upper = qmath::chernoff_tail(mean, eps, qmath::Tail::Upper).unwrap();
        prop_assert!(lower.ln <= upper.ln);
        let doubled = qmath::chernoff_tail(2.0 * mean, eps, qmath::Tail::Lower).unwrap();
        prop_assert!((doubled.ln - 2.0 * lower.ln).abs() <= 1e-9 * lower.ln.abs());
    }

    #[test]
    fn log_binomial_tail_matches_direct_cdf(n in 1u64..200, gamma in 0.0f64..1.0, lam in 0.01f64..0.99) {
        let got = qmath::binomial_tail_weighted(n, gamma, 1.0 - lam).unwrap().value;
        let cut = (n as f64 * gamma).floor() as u64;
        let want = Binomial::new(lam, n).unwrap().cdf(cut);
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1e-300) + 1e-300, "{} vs {}", got, want);
    }

    #[test]
    fn robustness_bound_shrinks_with_n(n in 1u64..1_000_000_000, extra in 1u64..1_000_000, pd in 0.01f64..1.0, frac in 0.01f64..0.99) {
        let p = SchemeParams { p_det: pd, gamma_det: pd * frac, ..SchemeParams::ideal(n) };
        let q = SchemeParams { n: n + extra, ..p.clone() };
        prop_assert!(bounds::epsilon_rob(&q).unwrap().ln <= bounds::epsilon_rob(&p).unwrap().ln);
    }

    #[test]
    fn correctness_bound_shrinks_with_n(n in 1000u64..100_000_000, extra in 1u64..1_000_000, e in 0.001f64..0.1, r in 1.05f64..1.95, nu_frac in 0.05f64..0.95) {
        let p = SchemeParams { p_det: 0.5, gamma_det: 0.3, e, gamma_err: e * r, ..SchemeParams::ideal(n) };
        let v = FreeVariables { nu_cor: nu_frac * 0.25, nu_unf: 1e-3 };
        let q = SchemeParams { n: n + extra, ..p.clone() };
        prop_assert!(bounds::epsilon_cor(&q, &v).unwrap().total.ln <= bounds::epsilon_cor(&p, &v).unwrap().total.ln);
    }

    #[test]
    fn causal_order_is_a_partial_order(p in point(), q in point(), r in point()) {
        prop_assert!(spacetime::causally_precedes(&p, &p));
        if spacetime::causally_precedes(&p, &q) && spacetime::causally_precedes(&q, &r) {
            prop_assert!(spacetime::causally_precedes(&p, &r));
        }
        if spacetime::causally_precedes(&p, &q) && spacetime::causally_precedes(&q, &p) {
            prop_assert_eq!((p.t, p.x), (q.t, q.x));
        }
        prop_assert_eq!(spacetime::spacelike(&p, &q), spacetime::spacelike(&q, &p));
        prop_assert_eq!(
            spacetime::spacelike(&p, &q),
            !spacetime::causally_precedes(&p, &q) && !spacetime::causally_precedes(&q, &p)
        );
    }

    #[test]
    fn light_arrival_is_in_the_future(p in point(), x in -100i32..100) {
        let a = spacetime::light_arrival(&p, x as f64);
        prop_assert!(spacetime::causally_precedes(&p, &a));
        prop_assert!(!spacetime::spacelike(&p, &a));
    }

    #[test]
    fn estimators_ignore_record_order(mut records in prop::collection::vec(record(), 1..300), seed in any::<u64>()) {
        let before = CountTable::from_records(&records, false);
        records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let after = CountTable::from_records(&records, false);
        prop_assert_eq!(before, after);
        prop_assert_eq!(estimate_stats(&before), estimate_stats(&after));
        prop_assert!(before.validate().is_ok());
    }

    #[test]
    fn delta_sets_partition_positions(s in prop::collection::vec(any::<bool>(), 0..64), d in prop::collection::vec(any::<bool>(), 64)) {
        let s = BitString(s);
        let d0 = BitString(d[..s.len()].to_vec());
        let d1 = d0.complement();
        let a = protocol::compute_delta(&s, &d0).unwrap();
        let b = protocol::compute_delta(&s, &d1).unwrap();
        prop_assert_eq!(a.len() + b.len(), s.len());
        prop_assert!(a.iter().all(|j| !b.contains(j)));
    }

    #[test]
    fn validation_threshold_is_monotone(x in prop::collection::vec(any::<bool>(), 1..64), r_seed in any::<u64>(), g1 in 0.0f64..1.0, g2 in 0.0f64..1.0) {
        let x = BitString(x);
        let r = BitString((0..x.len()).map(|i| (r_seed >> (i % 64)) & 1 == 1).collect());
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let at_lo = protocol::validate_token(&[(x.clone(), r.clone())], lo, false).unwrap().0;
        let at_hi = protocol::validate_token(&[(x.clone(), r.clone())], hi, false).unwrap().0;
        prop_assert!(!at_lo || at_hi);
        prop_assert!(!protocol::validate_token(&[(x, r)], hi, true).unwrap().0);
    }

    #[test]
    fn bit_index_roundtrip(v in any::<u32>(), extra in 0usize..8) {
        let n = 32 + extra;
        let b = BitString::from_index(v as u64, n);
        prop_assert_eq!(b.to_index(), v as u64);
        let parsed: BitString = b.to_string().parse().unwrap();
        prop_assert_eq!(parsed, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn f_agrees_with_independent_formula(
        theta in 0.0f64..30.0,
        beta_pb in 0.0f64..0.01,
        beta_ps in 0.0f64..0.01,
        gamma_det in 0.005f64..0.1,
        nu_frac in 0.0f64..0.9,
        gamma_frac in 0.01f64..0.99,
    ) {
        let lambda = qmath::lambda_bound(Angle::from_degrees(theta), beta_pb).unwrap();
        let nu_unf = gamma_det * nu_frac * (1.0 - gamma_frac);
        let p = SchemeParams {
            n: 1_000_000,
            p_det: 0.2,
            gamma_det,
            e: 0.5 * lambda * gamma_frac,
            gamma_err: lambda * gamma_frac,
            beta_pb,
            beta_ps,
            theta_deg: theta,
            p_noqub: nu_unf * 0.75,
            ..SchemeParams::ideal(1)
        };
        let v = FreeVariables { nu_cor: 0.01, nu_unf };
        let want = f_reference(&p, &v);
        let h = qmath::h_factor(beta_ps, beta_pb, p.theta()).unwrap();
        let delta = gamma_det * p.gamma_err / (gamma_det - nu_unf);
        let direct = bounds::f_value(gamma_det, nu_unf, lambda, delta, beta_ps, h);
        prop_assert!((direct - want).abs() <= 1e-12 + 1e-9 * want.abs(), "{} vs {}", direct, want);
        if let Ok(u) = bounds::epsilon_unf(&p, &v) {
            prop_assert!((u.f - want).abs() <= 1e-12 + 1e-9 * want.abs());
            prop_assert_eq!(u.eps.is_some(), u.f > 0.0);
        }
    }
}

use proptest::prelude::*;

use powernorm::elempn::{maxexp_pm, pn_forward, PnConfig};
use powernorm::matcore::io::{format_feat, format_sym, parse_feat, parse_sym};
use powernorm::matcore::{lambert_w, sym_eig, Branch, FeatureBlock, Matrix, RngStream, SymMatrix};
use powernorm::specpn::spectral_map;

fn sym_strategy() -> impl Strategy<Value = SymMatrix> {
    (1usize..7).prop_flat_map(|d| {
        prop::collection::vec(-10.0f64..10.0, d * d)
            .prop_map(move |v| SymMatrix::symmetrize(&Matrix::from_vec(d, d, v).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetrize_is_symmetric(m in sym_strategy()) {
        let d = m.dim();
        for i in 0..d {
            for j in 0..d {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }

    #[test]
    fn eig_reconstructs(m in sym_strategy()) {
        let e = sym_eig(&m).unwrap();
        prop_assert!(e.reconstruct().rel_distance(&m) < 1e-10 || m.max_abs() < 1e-12);
        for w in e.values.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        let vtv = e.vectors.transposed_matmul(&e.vectors);
        let d = m.dim();
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((vtv[(i, j)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn elementwise_outputs_stay_symmetric(m in sym_strategy(), p in 0.2f64..4.0) {
        let m = m.map(|v| v.abs() / 11.0);
        for cfg in [PnConfig::gamma(p), PnConfig::maxexp(1.0 + p),
                    PnConfig::asinhe(p), PnConfig::sigme(1.0 + p)] {
            let out = pn_forward(&m, &cfg).unwrap();
            let d = out.dim();
            for i in 0..d {
                for j in 0..d {
                    prop_assert_eq!(out.get(i, j), out.get(j, i));
                }
            }
        }
    }

    #[test]
    fn spectral_identity_map_is_identity(m in sym_strategy()) {
        let out = spectral_map(&m, |x| x).unwrap();
        prop_assert!(out.rel_distance(&m) < 1e-10 || m.max_abs() < 1e-12);
    }

    #[test]
    fn maxexp_pm_is_odd(p in -1.0f64..1.0, n in 1u32..40) {
        let a = maxexp_pm(p, n).unwrap();
        let b = maxexp_pm(-p, n).unwrap();
        prop_assert!((a + b).abs() < 1e-15);
        prop_assert!(a.abs() <= 1.0);
    }

    #[test]
    fn sym_text_round_trip(m in sym_strategy()) {
        prop_assert_eq!(parse_sym(&format_sym(&m)).unwrap(), m);
    }

    #[test]
    fn feat_text_round_trip(k in 1usize..5, n in 1usize..5, seed in 0u64..1000) {
        let mut rng = RngStream::new(seed);
        let data = (0..k * n).map(|_| rng.normal() * 1e3).collect();
        let b = FeatureBlock::new(k, n, data).unwrap();
        prop_assert_eq!(parse_feat(&format_feat(&b)).unwrap(), b);
    }
}

#[test]
fn lambert_principal_thousand_points() {
    let x0 = -1.0 / std::f64::consts::E;
    for i in 0..1000 {
        let x = x0 + (i as f64 + 0.5) / 1000.0 * (50.0 - x0);
        let w = lambert_w(Branch::Principal, x).unwrap();
        assert!(w >= -1.0);
        assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs().max(1.0), "x={x}");
    }
}

#[test]
fn lambert_lower_thousand_points() {
    let x0 = -1.0 / std::f64::consts::E;
    for i in 0..1000 {
        let x = x0 + (i as f64 + 0.5) / 1000.0 * (-1e-6 - x0);
        let w = lambert_w(Branch::Lower, x).unwrap();
        assert!(w <= -1.0);
        assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs().max(1e-3), "x={x}");
    }
}

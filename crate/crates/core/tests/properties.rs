use omicscl_core::clustmetrics::{ari, nmi, purity};
use omicscl_core::coxph::partial_log_likelihood;
use omicscl_core::dataio::{split, SplitSpec, ZScore};
use omicscl_core::encoder::{EncoderConfig, EncoderParams};
use omicscl_core::losses::{ntxent_multimodal, LossConfig};
use omicscl_core::survmetrics::{c_index, km_fit, logrank_k};
use omicscl_core::{Matrix, Rng};
use proptest::prelude::*;

fn survival_data(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<f64>)> {
    (3..max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(0.1f64..10.0, n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(-3.0f64..3.0, n),
        )
    })
}

fn labelings(max_n: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2..max_n).prop_flat_map(|n| (prop::collection::vec(0usize..4, n), prop::collection::vec(0usize..4, n)))
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #[test]
    fn c_index_is_a_rank_statistic((t, e, risk) in survival_data(30)) {
        let Ok(c) = c_index(&risk, &t, &e) else { return Ok(()) };
        prop_assert!((0.0..=1.0).contains(&c));
        let warped: Vec<f64> = risk.iter().map(|r| r.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(c_index(&warped, &t, &e).unwrap(), c);
        let flipped: Vec<f64> = risk.iter().map(|r| -r).collect();
        prop_assert!((c_index(&flipped, &t, &e).unwrap() - (1.0 - c)).abs() < 1e-12);
    }

    #[test]
    fn km_is_a_non_increasing_probability((t, e, _) in survival_data(40)) {
        let curve = km_fit(&t, &e).unwrap();
        let mut prev = 1.0;
        for (&s, w) in curve.survival.iter().zip(curve.times.windows(2).map(|w| w[0] < w[1]).chain([true])) {
            prop_assert!(w);
            prop_assert!((0.0..=prev).contains(&s));
            prev = s;
        }
        prop_assert_eq!(curve.events.iter().sum::<usize>(), e.iter().filter(|&&x| x).count());
    }

    #[test]
    fn logrank_ignores_group_names((t, e, _) in survival_data(30)) {
        let groups: Vec<usize> = (0..t.len()).map(|i| i % 3).collect();
        let renamed: Vec<usize> = groups.iter().map(|g| [7, 2, 5][*g]).collect();
        let (Ok(a), Ok(b)) = (logrank_k(&t, &e, &groups), logrank_k(&t, &e, &renamed)) else {
            return Ok(());
        };
        prop_assert_eq!(a.df, b.df);
        prop_assert!((a.statistic - b.statistic).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a.p_value));
    }

    #[test]
    fn partition_scores_are_symmetric_and_name_free((a, b) in labelings(40)) {
        let renamed: Vec<usize> = a.iter().map(|l| 10 - l).collect();
        prop_assert!((ari(&a, &b).unwrap() - ari(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ari(&a, &b).unwrap() - ari(&renamed, &b).unwrap()).abs() < 1e-12);
        let m = nmi(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!((m - nmi(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((m - nmi(&renamed, &b).unwrap()).abs() < 1e-12);
        let truth: Vec<Option<usize>> = b.iter().map(|&l| Some(l)).collect();
        let p = purity(&a, &truth).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert_eq!(purity(&b, &truth).unwrap(), 1.0);
        prop_assert!((ari(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_is_a_partition(n in 5usize..300, seed in any::<u64>()) {
        let s = split(n, &SplitSpec::new(seed)).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.val.len(), (n as f64 * 0.2 + 1e-9).floor() as usize);
        prop_assert_eq!(&s, &split(n, &SplitSpec::new(seed)).unwrap());
    }

    #[test]
    fn zscore_centers_training_rows(x in matrix(12, 4)) {
        let z = ZScore::fit(&x).unwrap();
        let out = z.apply(&x).unwrap();
        for m in out.column_means() {
            prop_assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn embeddings_have_unit_rows(x in matrix(10, 5), seed in any::<u64>()) {
        let enc = EncoderParams::init(EncoderConfig::new(5, 7, 3), &mut Rng::new(seed)).unwrap();
        // a row whose projection is exactly zero stays zero
        for n in enc.embed(&x).unwrap().row_norms() {
            prop_assert!((n - 1.0).abs() < 1e-9 || n == 0.0, "norm {}", n);
        }
    }

    #[test]
    fn ntxent_ignores_embedding_scale(a in matrix(6, 3), b in matrix(6, 3), s in 0.1f64..10.0) {
        let cfg = LossConfig::default();
        let base = ntxent_multimodal(&[a.clone(), b.clone()], &cfg).unwrap();
        let scaled = ntxent_multimodal(&[a.scale(s), b.scale(s)], &cfg).unwrap();
        prop_assert!((base - scaled).abs() < 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn cox_likelihood_ignores_covariate_shift((t, e, x) in survival_data(20), shift in -5.0f64..5.0, beta in -2.0f64..2.0) {
        prop_assume!(e.iter().any(|&v| v));
        let xm = Matrix::column_vector(&x);
        let shifted = Matrix::column_vector(&x.iter().map(|v| v + shift).collect::<Vec<_>>());
        let a = partial_log_likelihood(&xm, &t, &e, &[beta], 0.0).unwrap();
        let b = partial_log_likelihood(&shifted, &t, &e, &[beta], 0.0).unwrap();
        prop_assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
    }
}

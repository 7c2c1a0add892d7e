use bpu_core::adapters::{adapter_forward, effective_update, AdapterKind, AdapterParams};
use bpu_core::complexity::{lora_param_count, overhead_ratio};
use bpu_core::diagnostics::{check_margin_bound, detect_in_series, median};
use bpu_core::evalkit::{gen_random_label, ks_pvalue, ks_statistic, split, SplitSpec};
use bpu_core::linalg::{svd_small, Matrix};
use bpu_core::rng::RngStream;
use bpu_core::unlearn::{grad_difference_direction, grad_difference_step};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn bounded_kind() -> impl Strategy<Value = AdapterKind> {
    prop_oneof![
        (0.1f64..500.0).prop_map(|omega| AdapterKind::Sine { omega }),
        Just(AdapterKind::Tanh),
        Just(AdapterKind::Sigmoid),
        (-3.0f64..0.0, 0.1f64..3.0).prop_map(|(lo, hi)| AdapterKind::Clip { lo, hi }),
    ]
}

proptest! {
    #[test]
    fn bounded_updates_stay_in_range(
        kind in bounded_kind(),
        (a, b) in (1usize..6, 1usize..6)
            .prop_flat_map(|(o, i)| (Just(o), Just(i), 1..=o.min(i)))
            .prop_flat_map(|(o, i, r)| (matrix(o, r, 50.0), matrix(i, r, 50.0))),
    ) {
        let w0 = Matrix::zeros(a.rows(), b.rows());
        let bias = vec![0.0; a.rows()];
        let ap = AdapterParams::new(a, b, kind, w0, bias).unwrap();
        let u = effective_update(&ap);
        let (lo, hi) = kind.range().unwrap();
        prop_assert!(u.as_slice().iter().all(|&v| v >= lo && v <= hi));
        let (r, c) = u.shape();
        let cap = lo.abs().max(hi.abs()) * ((r * c) as f64).sqrt();
        prop_assert!(u.frobenius_norm() <= cap + 1e-12);
    }

    #[test]
    fn zero_b_adapter_is_the_base_layer(
        w0 in matrix(3, 4, 2.0),
        x in prop::collection::vec(-2.0f64..2.0, 4),
        omega in 1.0f64..200.0,
    ) {
        let a = RngStream::new(5).gaussian_vec(6, 0.0, 1.0);
        let a = Matrix::from_vec(3, 2, a).unwrap();
        let ap = AdapterParams::new(a, Matrix::zeros(4, 2), AdapterKind::Sine { omega }, w0.clone(), vec![0.0; 3]).unwrap();
        let h = adapter_forward(&ap, &x).unwrap();
        let base = w0.matvec(&x).unwrap();
        for (u, v) in h.iter().zip(&base) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn margin_sandwich(z in prop::collection::vec(-40.0f64..40.0, 2..17), pick in 0usize..16) {
        let y = pick % z.len();
        let c = check_margin_bound(&z, y);
        prop_assert!(c.holds, "{c:?}");
        prop_assert!(c.lower <= c.upper);
    }

    #[test]
    fn ks_statistic_properties(
        a in prop::collection::vec(-5.0f64..5.0, 1..40),
        b in prop::collection::vec(-5.0f64..5.0, 1..40),
    ) {
        let d = ks_statistic(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_statistic(&b, &a).unwrap());
        prop_assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
        let p = ks_pvalue(d, a.len(), b.len()).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn ks_pvalue_decreases_with_distance(d1 in 0.0f64..1.0, d2 in 0.0f64..1.0, n in 2usize..200) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(ks_pvalue(lo, n, n).unwrap() >= ks_pvalue(hi, n, n).unwrap());
    }

    #[test]
    fn split_partitions_the_ids(n in 10usize..200, f in 0.05f64..0.45, h in 0.05f64..0.45, seed in any::<u64>()) {
        let ds = gen_random_label(&mut RngStream::new(seed), n, 3, 2).unwrap();
        let (r, fo, ho) = split(&ds, &SplitSpec { forget_fraction: f, holdout_fraction: h, seed }).unwrap();
        prop_assert_eq!(fo.len(), (n as f64 * f).floor() as usize);
        prop_assert_eq!(ho.len(), (n as f64 * h).floor() as usize);
        let mut all: Vec<usize> = r.ids.iter().chain(&fo.ids).chain(&ho.ids).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn derived_streams_are_reproducible(seed in any::<u64>(), tag in any::<u64>()) {
        let root = RngStream::new(seed);
        let mut a = root.derive(tag);
        let mut b = root.derive(tag);
        prop_assert_eq!(a.next_u64(), b.next_u64());
        prop_assert_eq!(root, RngStream::new(seed));
    }

    #[test]
    fn uniform_draws_in_unit_interval(seed in any::<u64>(), n in 1usize..1000) {
        let mut s = RngStream::new(seed);
        for _ in 0..32 {
            let u = s.next_f64();
            prop_assert!((0.0..1.0).contains(&u));
            prop_assert!(s.next_index(n) < n);
        }
    }

    #[test]
    fn svd_reconstructs(m in (1usize..7, 1usize..7).prop_flat_map(|(r, c)| matrix(r, c, 3.0))) {
        let svd = svd_small(&m).unwrap();
        let back = svd.reconstruct();
        for (x, y) in back.as_slice().iter().zip(m.as_slice()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        prop_assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(svd.s.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn grad_difference_step_follows_direction(
        theta in prop::collection::vec(-1.0f64..1.0, 1..10),
        seed in any::<u64>(),
        ar in 0.0f64..1.0,
        af in 0.0f64..1.0,
    ) {
        let mut s = RngStream::new(seed);
        let gr = vec![s.gaussian_vec(theta.len(), 0.0, 1.0)];
        let gf = vec![s.gaussian_vec(theta.len(), 0.0, 1.0)];
        let d = grad_difference_direction(&gr, &gf, ar, af).unwrap();
        let mut t = theta.clone();
        grad_difference_step(&mut [t.as_mut_slice()], &gr, &gf, ar, af).unwrap();
        for ((after, before), dv) in t.iter().zip(&theta).zip(&d[0]) {
            prop_assert!((after - (before + dv)).abs() < 1e-12);
        }
    }

    #[test]
    fn overhead_scales_inversely_with_rank(d in 1u64..5000, k in 1u64..5000, r in 1u64..64) {
        prop_assert_eq!(lora_param_count(d, k, r).unwrap(), (d + k) as u128 * r as u128);
        let ratio = overhead_ratio(d, k, r).unwrap() * r as f64;
        let base = overhead_ratio(d, k, 1).unwrap();
        prop_assert!((ratio - base).abs() <= 1e-9 * base);
    }

    #[test]
    fn constant_series_never_explodes(v in 0.1f64..100.0, n in 1usize..50, w in 1usize..8) {
        prop_assert_eq!(detect_in_series(&vec![v; n], 50.0, w), None);
        prop_assert_eq!(median(&vec![v; n]), v);
    }
}

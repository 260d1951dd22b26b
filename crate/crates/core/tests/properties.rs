use proptest::prelude::*;

use sparsae_core::harness::io::{decode_matrix, encode_matrix, model_from_json, model_to_json, ModelMetadata};
use sparsae_core::linalg::{matmul_tn, svd, Mat};
use sparsae_core::model::{init_dense, reconstruct, sparsify_rows, Architecture};
use sparsae_core::postproc::{latent_truncated_svd, propagate_biases};
use sparsae_core::prox::{prox_group_rows, prox_nuclear};

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Mat> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0..3.0f64, r * c).prop_map(move |v| Mat::from_col_major(r, c, v).unwrap())
    })
}

fn pair(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Mat, Mat)> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        let one = move || prop::collection::vec(-3.0..3.0f64, r * c).prop_map(move |v| Mat::from_col_major(r, c, v).unwrap());
        (one(), one())
    })
}

fn dist(a: &Mat, b: &Mat) -> f64 {
    a.sub(b).unwrap().frobenius_norm()
}

fn small_arch() -> impl Strategy<Value = Architecture> {
    (2..7usize, 2..6usize, 1..4usize, 2..6usize)
        .prop_map(|(d, h, z, g)| Architecture::new(vec![d, h, z, g, d], 2).unwrap())
}

fn inputs(dim: usize, seed: u64) -> Mat {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Mat::from_fn(dim, 16, |_, _| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_prox_is_nonexpansive((a, b) in pair(6, 5), tau in 0.0..2.0f64) {
        let d = dist(&prox_group_rows(&a, tau), &prox_group_rows(&b, tau));
        prop_assert!(d <= dist(&a, &b) + 1e-12);
    }

    #[test]
    fn nuclear_prox_is_nonexpansive((a, b) in pair(6, 5), tau in 0.0..2.0f64) {
        let d = dist(&prox_nuclear(&a, tau).unwrap(), &prox_nuclear(&b, tau).unwrap());
        prop_assert!(d <= dist(&a, &b) + 1e-9);
    }

    #[test]
    fn zero_threshold_is_identity(w in matrix(6, 5)) {
        prop_assert_eq!(prox_group_rows(&w, 0.0), w.clone());
        prop_assert_eq!(prox_nuclear(&w, 0.0).unwrap(), w);
    }

    #[test]
    fn group_prox_rows_vanish_or_shrink(w in matrix(6, 5), tau in 0.0..3.0f64) {
        let p = prox_group_rows(&w, tau);
        for i in 0..w.rows() {
            let n = w.row_norm(i);
            if n <= tau {
                prop_assert!(p.row_is_zero(i));
            } else {
                prop_assert!((p.row_norm(i) - (n - tau)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nuclear_prox_shifts_spectrum(w in matrix(6, 5), tau in 0.0..3.0f64) {
        let s_in = svd(&w).unwrap().s;
        let s_out = svd(&prox_nuclear(&w, tau).unwrap()).unwrap().s;
        for (a, b) in s_in.iter().zip(&s_out) {
            prop_assert!((b - (a - tau).max(0.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn svd_reconstructs(w in matrix(7, 7)) {
        let f = svd(&w).unwrap();
        prop_assert!(f.s.windows(2).all(|p| p[0] >= p[1]));
        prop_assert!(f.reconstruct(None).max_abs_diff(&w) < 1e-12 * (1.0 + f.s[0]) * 10.0);
        let utu = matmul_tn(&f.u, &f.u).unwrap();
        prop_assert!(utu.max_abs_diff(&Mat::identity(f.s.len())) < 1e-10);
    }

    #[test]
    fn propagation_keeps_outputs(arch in small_arch(), seed in 0..1000u64, p in 0.1..0.9f64) {
        let mut m = init_dense(&arch, seed);
        sparsify_rows(&mut m, p, seed).unwrap();
        let x = inputs(arch.input_dim(), seed);
        let before = reconstruct(&m, &x).unwrap();
        let q = propagate_biases(&m);
        prop_assert!(reconstruct(&q, &x).unwrap().max_abs_diff(&before) < 1e-10);
        prop_assert!(q.count_nonzero_weights() <= m.count_nonzero_weights());
        prop_assert_eq!(q.arch().output_dim(), arch.output_dim());
        prop_assert_eq!(propagate_biases(&q), q);
    }

    #[test]
    fn exact_latent_svd_keeps_outputs(arch in small_arch(), seed in 0..1000u64) {
        let m = init_dense(&arch, seed);
        let x = inputs(arch.input_dim(), seed);
        let q = latent_truncated_svd(&m, 0.0).unwrap();
        prop_assert!(reconstruct(&q, &x).unwrap().max_abs_diff(&reconstruct(&m, &x).unwrap()) < 1e-10);
        prop_assert!(q.arch().latent_dim() <= arch.latent_dim());
    }

    #[test]
    fn model_json_round_trip(arch in small_arch(), seed in 0..1000u64, p in 0.1..1.0f64) {
        let mut m = init_dense(&arch, seed);
        sparsify_rows(&mut m, p, seed).unwrap();
        let q = propagate_biases(&m);
        let meta = ModelMetadata { seed: Some(seed), ..Default::default() };
        let (back, meta_back) = model_from_json(&model_to_json(&q, &meta)).unwrap();
        prop_assert_eq!(back, q);
        prop_assert_eq!(meta_back, meta);
    }

    #[test]
    fn snapshot_round_trip(w in matrix(9, 9)) {
        let back = decode_matrix(&encode_matrix(&w).unwrap()).unwrap();
        prop_assert_eq!(back, w);
    }

    #[test]
    fn truncated_snapshot_is_rejected(w in matrix(4, 4), cut in 1..32usize) {
        let bytes = encode_matrix(&w).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_matrix(&bytes[..keep]).is_err());
    }
}


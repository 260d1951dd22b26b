//! Post-processing of a stored diffusion network trained with LinBreg
//! (`sparsae --seed 0 train --equation diffusion --optimizer linbreg`).

use std::sync::OnceLock;

use sparsae_core::harness::io::{model_from_json, model_to_json, ModelMetadata};
use sparsae_core::model::{mean_loss, reconstruct, MlpAutoencoder};
use sparsae_core::pde_data::{diffusion_dataset, Dataset, DiffusionConfig};
use sparsae_core::postproc::{latent_truncated_svd, propagate_biases, run_postprocessing};

const FIXTURE: &str = include_str!("fixtures/diffusion_linbreg_seed0.model.json");
const C_TOL: f64 = 0.01;

fn fixture() -> MlpAutoencoder {
    model_from_json(FIXTURE).unwrap().0
}

fn data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| diffusion_dataset(&DiffusionConfig::default()).unwrap())
}

#[test]
fn fixture_is_compressed_within_budget() {
    let m = fixture();
    let d = data();
    let (post, report) = run_postprocessing(&m, &d.train.x, &d.test.x, C_TOL).unwrap();
    assert!(report.latent_dim_after <= 5, "{report:?}");
    assert!(report.params_after < 12850, "{report:?}");
    assert!(report.params_after < report.params_before);
    assert!(report.train_loss_after <= (1.0 + 3.0 * C_TOL) * report.train_loss_before, "{report:?}");
    assert!(report.test_loss_after <= (1.0 + 2.0 * C_TOL) * report.test_loss_before, "{report:?}");
    assert_eq!(report.latent_dim_after, post.effective_latent_dim());
    assert_eq!(report.params_after, post.count_nonzero_weights());
    assert_eq!(report.train_loss_after, mean_loss(&post, &d.train.x).unwrap());
}

#[test]
fn second_pass_changes_nothing() {
    let d = data();
    let (once, _) = run_postprocessing(&fixture(), &d.train.x, &d.test.x, C_TOL).unwrap();
    let (twice, report) = run_postprocessing(&once, &d.train.x, &d.test.x, C_TOL).unwrap();
    assert_eq!(report.latent_dim_after, report.latent_dim_before);
    assert_eq!(report.params_after, report.params_before);
    assert_eq!(twice.arch(), once.arch());
    assert!(reconstruct(&twice, &d.test.x).unwrap().max_abs_diff(&reconstruct(&once, &d.test.x).unwrap()) < 1e-10);
}

#[test]
fn exact_refactorisation_keeps_outputs() {
    let m = fixture();
    let x = &data().test.x;
    let q = latent_truncated_svd(&m, 0.0).unwrap();
    assert!(reconstruct(&q, x).unwrap().max_abs_diff(&reconstruct(&m, x).unwrap()) < 1e-10);
}

/// Deleting latent columns of the encoder output layer cannot raise its
/// singular values, so at a fixed threshold both orders keep the same
/// latent dimension; the SVD-first order also never yields a larger one.
#[test]
fn both_orders_agree_on_latent_dimension() {
    let m = fixture();
    let d = data();
    let (_, report) = run_postprocessing(&m, &d.train.x, &d.test.x, C_TOL).unwrap();
    for eps in [0.0, report.eps_used, 10.0 * report.eps_used, 1e-2, 1e-1] {
        let svd_first = propagate_biases(&latent_truncated_svd(&m, eps).unwrap());
        let prop_first = latent_truncated_svd(&propagate_biases(&m), eps).unwrap();
        assert!(svd_first.effective_latent_dim() <= prop_first.effective_latent_dim(), "eps {eps}");
        assert!(prop_first.effective_latent_dim() <= svd_first.effective_latent_dim(), "eps {eps}");
        let x = &d.test.x;
        let gap = reconstruct(&svd_first, x).unwrap().max_abs_diff(&reconstruct(&prop_first, x).unwrap());
        if eps == 0.0 {
            assert!(gap < 1e-10);
        }
    }
}

#[test]
fn compressed_model_round_trips() {
    let d = data();
    let (post, _) = run_postprocessing(&fixture(), &d.train.x, &d.test.x, C_TOL).unwrap();
    let meta = ModelMetadata {
        note: Some("post-processed".into()),
        ..Default::default()
    };
    let text = model_to_json(&post, &meta);
    let (back, meta_back) = model_from_json(&text).unwrap();
    assert_eq!(back, post);
    assert_eq!(meta_back, meta);
    assert_eq!(model_to_json(&back, &meta_back), text);
}

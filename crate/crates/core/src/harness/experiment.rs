use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, init_dense, sparsify_rows, spectral_sparsify, MlpAutoencoder};
use crate::optim::{self, TrainOutcome};
use crate::postproc::{run_postprocessing, PostprocReport};
use crate::prox::RegSpec;
use crate::pde_data::{
    advection_dataset, diffusion_dataset, energy_tail, gen_reaction_diffusion, pod, pod_error, pod_loss,
    AdvectionConfig, Dataset, DiffusionConfig, Equation, PodLoss, PodRank, RdDiagnostics, ReactionDiffusionConfig,
};

use super::config::ExperimentConfig;

/// Generates the train/test snapshots of `equation`; `rd_grid` sets the
/// reaction-diffusion resolution.
pub fn generate_dataset(equation: Equation, rd_grid: usize) -> Result<(Dataset, Option<RdDiagnostics>)> {
    match equation {
        Equation::Diffusion => Ok((diffusion_dataset(&DiffusionConfig::default())?, None)),
        Equation::Advection => Ok((advection_dataset(&AdvectionConfig::default())?, None)),
        Equation::ReactionDiffusion => {
            let cfg = ReactionDiffusionConfig {
                n: rd_grid,
                ..ReactionDiffusionConfig::desk()
            };
            let (data, diag) = gen_reaction_diffusion(&cfg)?;
            Ok((data, Some(diag)))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PodReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// Relative squared error of the rank-`r` reconstruction of the
    /// training set, `Σ_{i>r} s_i² / Σ s_i²`.
    pub train_energy_error: f64,
    /// Relative Frobenius error on the training set.
    pub train_frobenius_error: f64,
    pub train_loss: PodLoss,
    pub test_loss: PodLoss,
}

pub fn pod_report(data: &Dataset, rank: PodRank) -> Result<PodReport> {
    let basis = pod(&data.train.x, rank)?;
    let r = basis.rank();
    Ok(PodReport {
        rank: r,
        train_energy_error: energy_tail(&basis.singular_values, r),
        train_frobenius_error: pod_error(&basis, &data.train.x)?,
        train_loss: pod_loss(&basis, &data.train.x)?,
        test_loss: pod_loss(&basis, &data.test.x)?,
        singular_values: basis.singular_values,
    })
}

/// Initial network of an experiment: dense, or row- and
/// spectrally-sparsified when `init_density < 1`.
pub fn initial_model(cfg: &ExperimentConfig) -> Result<MlpAutoencoder> {
    let arch = cfg.architecture()?;
    let mut m = init_dense(&arch, cfg.seed);
    if cfg.optimizer.is_bregman() && cfg.init_density < 1.0 {
        sparsify_rows(&mut m, cfg.init_density, cfg.seed)?;
        spectral_sparsify(&mut m)?;
    }
    Ok(m)
}

pub fn reg_spec(cfg: &ExperimentConfig, model: &MlpAutoencoder) -> Result<RegSpec> {
    RegSpec::new(cfg.effective_lambda(), model.arch())
}

#[derive(Clone, Debug)]
pub struct ExperimentRun {
    pub initial: MlpAutoencoder,
    pub outcome: TrainOutcome,
}

/// Builds the initial model and trains it on `data`.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<ExperimentRun> {
    cfg.validate()?;
    let initial = initial_model(cfg)?;
    if data.train.dim() != initial.arch().input_dim() {
        return Err(Error::DimensionMismatch {
            op: "snapshots vs architecture",
            left: data.train.x.shape(),
            right: (initial.arch().input_dim(), data.train.len()),
        });
    }
    let spec = reg_spec(cfg, &initial)?;
    let outcome = optim::train(initial.clone(), &spec, &cfg.train_config(), &data.train.x, &data.test.x)?;
    Ok(ExperimentRun { initial, outcome })
}

/// The columns of the summary table printed after training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub optimizer: String,
    pub eta: f64,
    pub lambda: f64,
    pub init_density_pct: f64,
    pub params: usize,
    pub latent_dim: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

impl Summary {
    pub fn new(cfg: &ExperimentConfig, model: &MlpAutoencoder, data: &Dataset) -> Result<Self> {
        Ok(Summary {
            optimizer: cfg.optimizer.to_string(),
            eta: cfg.eta,
            lambda: cfg.effective_lambda(),
            init_density_pct: 100.0 * cfg.init_density,
            params: model.count_nonzero_weights(),
            latent_dim: model.effective_latent_dim(),
            train_loss: model::mean_loss(model, &data.train.x)?,
            test_loss: model::mean_loss(model, &data.test.x)?,
        })
    }

    pub const HEADER: &'static str =
        "optimizer  eta        lambda     init%  params    latent  train_loss  test_loss";

    pub fn row(&self) -> String {
        format!(
            "{:<10} {:<10.3e} {:<10} {:<6} {:<9} {:<7} {:<11.3e} {:.3e}",
            self.optimizer,
            self.eta,
            if self.lambda > 0.0 { format!("{:.3e}", self.lambda) } else { "-".into() },
            self.init_density_pct,
            self.params,
            self.latent_dim,
            self.train_loss,
            self.test_loss
        )
    }
}

/// Grid of learning rates, regularisation constants and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub etas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    /// Runs in grid order: eta outermost, then lambda, then seed.
    pub fn points(&self) -> Vec<(f64, f64, u64)> {
        let mut out = Vec::with_capacity(self.etas.len() * self.lambdas.len() * self.seeds.len());
        for &eta in &self.etas {
            for &lambda in &self.lambdas {
                for &seed in &self.seeds {
                    out.push((eta, lambda, seed));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: usize,
    pub eta: f64,
    pub lambda: f64,
    pub seed: u64,
    /// `ok`, `diverged` or `error: …`.
    pub status: String,
    pub best_epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub nonzero_weights: usize,
    pub latent_dim: usize,
    pub post_params: usize,
    pub post_latent_dim: usize,
    pub post_test_loss: f64,
    pub best: bool,
    pub best_sparse: bool,
}

fn failed_row(run: usize, eta: f64, lambda: f64, seed: u64, status: String) -> SweepRow {
    SweepRow {
        run,
        eta,
        lambda,
        seed,
        status,
        best_epoch: 0,
        train_loss: f64::NAN,
        test_loss: f64::NAN,
        nonzero_weights: 0,
        latent_dim: 0,
        post_params: 0,
        post_latent_dim: 0,
        post_test_loss: f64::NAN,
        best: false,
        best_sparse: false,
    }
}

/// Trains and post-processes one grid point. Failures become rows.
pub fn sweep_point(base: &ExperimentConfig, data: &Dataset, run: usize, eta: f64, lambda: f64, seed: u64) -> SweepRow {
    let cfg = ExperimentConfig {
        eta,
        lambda,
        seed,
        ..base.clone()
    };
    let attempt = || -> Result<SweepRow> {
        let ExperimentRun { outcome, .. } = run_experiment(&cfg, data)?;
        if let Some(d) = outcome.divergence {
            let mut row = failed_row(run, eta, lambda, seed, "diverged".into());
            row.train_loss = d.loss;
            return Ok(row);
        }
        let best = &outcome.best;
        let (post, report) = post_or_skip(&cfg, best, data)?;
        Ok(SweepRow {
            run,
            eta,
            lambda,
            seed,
            status: "ok".into(),
            best_epoch: outcome.best_epoch,
            train_loss: model::mean_loss(best, &data.train.x)?,
            test_loss: model::mean_loss(best, &data.test.x)?,
            nonzero_weights: best.count_nonzero_weights(),
            latent_dim: best.effective_latent_dim(),
            post_params: post.count_nonzero_weights(),
            post_latent_dim: post.effective_latent_dim(),
            post_test_loss: report.map_or(model::mean_loss(&post, &data.test.x)?, |r| r.test_loss_after),
            best: false,
            best_sparse: false,
        })
    };
    attempt().unwrap_or_else(|e| failed_row(run, eta, lambda, seed, format!("error: {e}")))
}

/// Post-processing applies to Bregman runs only; plain optimizers keep
/// their dense model.
pub fn post_or_skip(
    cfg: &ExperimentConfig,
    model: &MlpAutoencoder,
    data: &Dataset,
) -> Result<(MlpAutoencoder, Option<PostprocReport>)> {
    if cfg.optimizer.is_bregman() {
        let (m, r) = run_postprocessing(model, &data.train.x, &data.test.x, cfg.c_tol)?;
        Ok((m, Some(r)))
    } else {
        Ok((model.clone(), None))
    }
}

/// Marks the run with the lowest test loss and, among runs within a factor
/// 10 of it, the one with the fewest post-processed parameters (ties go to
/// the lower test loss, then the earlier run).
pub fn mark_best(rows: &mut [SweepRow]) {
    rows.iter_mut().for_each(|r| {
        r.best = false;
        r.best_sparse = false;
    });
    let ok: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].status == "ok" && rows[i].test_loss.is_finite())
        .collect();
    let Some(&best) = ok.iter().min_by(|&&a, &&b| rows[a].test_loss.total_cmp(&rows[b].test_loss)) else {
        return;
    };
    rows[best].best = true;
    let limit = 10.0 * rows[best].test_loss;
    let sparse = ok
        .iter()
        .copied()
        .filter(|&i| rows[i].test_loss <= limit)
        .min_by(|&a, &b| {
            rows[a]
                .post_params
                .cmp(&rows[b].post_params)
                .then(rows[a].test_loss.total_cmp(&rows[b].test_loss))
        })
        .expect("the best run qualifies");
    rows[sparse].best_sparse = true;
}

/// Runs every grid point on a pool of `threads` workers; rows come back in
/// grid order whatever the completion order.
pub fn run_sweep(base: &ExperimentConfig, grid: &SweepGrid, data: &Dataset, threads: usize) -> Result<Vec<SweepRow>> {
    use rayon::prelude::*;
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::invalid("empty sweep grid"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(run, &(eta, lambda, seed))| sweep_point(base, data, run, eta, lambda, seed))
            .collect()
    });
    mark_best(&mut rows);
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::invalid(format!("sweep serialisation failed: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| Error::invalid(format!("sweep serialisation failed: {e}")))
}

pub fn sweep_from_csv(bytes: &[u8]) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                what: "sweep file",
                location: format!("record {}", i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;
    use crate::pde_data::{gen_advection, Split};

    fn tiny_data() -> Dataset {
        let cfg = AdvectionConfig {
            n_x: 12,
            n_t: 10,
            t_end: 1.0,
        };
        Dataset {
            train: gen_advection(&[0.6, 1.2], &cfg, Split::Train).unwrap(),
            test: gen_advection(&[0.9], &cfg, Split::Test).unwrap(),
        }
    }

    fn tiny_config(kind: OptimizerKind) -> ExperimentConfig {
        ExperimentConfig {
            layer_sizes: Some(vec![12, 8, 4, 8, 12]),
            l_enc: Some(2),
            epochs: 5,
            batch_size: 6,
            init_density: if kind.is_bregman() { 0.5 } else { 1.0 },
            ..ExperimentConfig::reference(Equation::Advection, kind)
        }
    }

    #[test]
    fn sparse_init_only_for_bregman() {
        let dense = initial_model(&tiny_config(OptimizerKind::Adam)).unwrap();
        assert_eq!(dense.density(), 1.0);
        let sparse = initial_model(&tiny_config(OptimizerKind::AdaBreg)).unwrap();
        assert!(sparse.density() < 0.6);
    }

    #[test]
    fn sweep_rows_follow_grid_order_and_are_reproducible() {
        let data = tiny_data();
        let base = tiny_config(OptimizerKind::AdaBreg);
        let grid = SweepGrid {
            etas: vec![1e-3, 1e-2],
            lambdas: vec![0.01, 0.1],
            seeds: vec![0],
        };
        let a = run_sweep(&base, &grid, &data, 2).unwrap();
        let b = run_sweep(&base, &grid, &data, 1).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(sweep_to_csv(&a).unwrap(), sweep_to_csv(&b).unwrap());
        for (row, (eta, lambda, _)) in a.iter().zip(grid.points()) {
            assert_eq!((row.eta, row.lambda), (eta, lambda));
        }
        assert_eq!(a.iter().filter(|r| r.best).count(), 1);
        assert_eq!(a.iter().filter(|r| r.best_sparse).count(), 1);
        let back = sweep_from_csv(&sweep_to_csv(&a).unwrap()).unwrap();
        let mut remarked = back.clone();
        mark_best(&mut remarked);
        assert_eq!(
            remarked.iter().map(|r| (r.best, r.best_sparse)).collect::<Vec<_>>(),
            a.iter().map(|r| (r.best, r.best_sparse)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn failures_become_rows() {
        let data = tiny_data();
        let mut base = tiny_config(OptimizerKind::Sgd);
        base.layer_sizes = Some(vec![5, 3, 5]);
        base.l_enc = Some(1);
        let row = sweep_point(&base, &data, 0, 1e-3, 0.0, 0);
        assert!(row.status.starts_with("error"), "{}", row.status);
    }

    #[test]
    fn best_sparse_selection() {
        let mut rows: Vec<SweepRow> = [(1e-4, 500), (5e-4, 100), (2e-3, 10), (1e-4, 400)]
            .iter()
            .enumerate()
            .map(|(i, &(loss, params))| {
                let mut r = failed_row(i, 0.1, 0.1, 0, "ok".into());
                r.test_loss = loss;
                r.post_params = params;
                r
            })
            .collect();
        mark_best(&mut rows);
        assert!(rows[0].best);
        assert!(rows[1].best_sparse);
    }
}

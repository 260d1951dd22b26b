//! Snapshot data for the three model problems and the POD baseline.
//!
//! Every generator is deterministic. Snapshots are raw field values stored as
//! columns; nothing is centred or normalised.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_tn, svd, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    Diffusion,
    Advection,
    ReactionDiffusion,
}

impl Equation {
    pub const ALL: [Equation; 3] = [
        Equation::Diffusion,
        Equation::Advection,
        Equation::ReactionDiffusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Equation::Diffusion => "diffusion",
            Equation::Advection => "advection",
            Equation::ReactionDiffusion => "reaction_diffusion",
        }
    }
}

impl std::fmt::Display for Equation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Equation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_").to_ascii_lowercase();
        Equation::ALL
            .into_iter()
            .find(|e| e.name() == norm || (norm == "rd" && *e == Equation::ReactionDiffusion))
            .ok_or_else(|| Error::invalid(format!("unknown equation `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Everything needed to interpret the columns of a snapshot matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub equation: Equation,
    pub split: Split,
    /// Nodal coordinates along each axis (one entry per axis).
    pub axes: Vec<Vec<f64>>,
    pub dx: f64,
    /// Internal time step of the solver.
    pub dt: f64,
    /// Solver steps between stored snapshots.
    pub stride: usize,
    /// Parameter value `μ` of each column.
    pub mu: Vec<f64>,
    /// Physical time of each column.
    pub t: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    pub x: Mat,
    pub meta: SnapshotMeta,
}

impl SnapshotSet {
    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.cols() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.cols();
        if self.meta.mu.len() != n || self.meta.t.len() != n {
            return Err(Error::invalid(format!(
                "snapshot metadata lists {} parameters and {} times for {n} columns",
                self.meta.mu.len(),
                self.meta.t.len()
            )));
        }
        if !self.x.is_finite() {
            return Err(Error::NonFinite("snapshot values".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: SnapshotSet,
    pub test: SnapshotSet,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let h = (b - a) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { b } else { a + h * i as f64 }).collect()
}

fn concat_columns(blocks: Vec<Vec<f64>>, rows: usize) -> Result<Mat> {
    let cols = blocks.len();
    Mat::from_col_major(rows, cols, blocks.concat())
}

// ---------------------------------------------------------------- diffusion

/// Train and test parameters of the diffusion problem.
pub const DIFFUSION_TRAIN_MU: [f64; 3] = [0.1, 0.5, 1.0];
pub const DIFFUSION_TEST_MU: [f64; 1] = [0.6];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub n_x: usize,
    /// Nominal number of time levels on `[0, t_end]`.
    pub n_t: usize,
    pub t_end: f64,
    /// Nominal levels between stored snapshots.
    pub stride: usize,
    /// Internal step; by default the largest step dividing the snapshot
    /// interval with `μ_max Δt / Δx² ≤ 1/4`.
    pub dt: Option<f64>,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            n_x: 101,
            n_t: 5001,
            t_end: 1.0,
            stride: 20,
            dt: None,
        }
    }
}

impl DiffusionConfig {
    pub fn grid(&self) -> Vec<f64> {
        linspace(-1.0, 1.0, self.n_x)
    }

    pub fn dx(&self) -> f64 {
        2.0 / (self.n_x - 1) as f64
    }

    /// Time between stored snapshots.
    pub fn snapshot_interval(&self) -> f64 {
        self.t_end / (self.n_t - 1) as f64 * self.stride as f64
    }

    pub fn snapshots_per_mu(&self) -> usize {
        self.n_t.div_ceil(self.stride)
    }

    /// Internal time step and the number of steps per snapshot interval.
    pub fn time_step(&self, mu_max: f64) -> Result<(f64, usize)> {
        let interval = self.snapshot_interval();
        let dx = self.dx();
        match self.dt {
            None => {
                let limit = 0.25 * dx * dx / mu_max;
                let sub = (interval / limit - 1e-9).ceil().max(1.0) as usize;
                Ok((interval / sub as f64, sub))
            }
            Some(dt) => {
                if !(dt > 0.0) {
                    return Err(Error::invalid(format!("time step must be positive, got {dt}")));
                }
                let sub = (interval / dt).round().max(1.0) as usize;
                if ((sub as f64) * dt - interval).abs() > 1e-9 * interval {
                    return Err(Error::invalid(format!(
                        "time step {dt} does not divide the snapshot interval {interval}"
                    )));
                }
                Ok((interval / sub as f64, sub))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_x < 3 || self.n_t < 2 || self.stride == 0 || !(self.t_end > 0.0) {
            return Err(Error::invalid(format!("degenerate diffusion discretisation {self:?}")));
        }
        Ok(())
    }
}

/// Initial condition `exp(-x²/0.04) / √(0.04π)`.
pub fn diffusion_initial(x: f64) -> f64 {
    (-x * x / 0.04).exp() / (0.04 * std::f64::consts::PI).sqrt()
}

/// Explicit finite differences with homogeneous Dirichlet ends. Snapshots of
/// every `μ` are stored at multiples of the snapshot interval and stacked in
/// parameter order.
pub fn gen_diffusion(mu_list: &[f64], config: &DiffusionConfig, split: Split) -> Result<SnapshotSet> {
    config.validate()?;
    if mu_list.is_empty() || mu_list.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::invalid(format!("diffusion parameters must be positive: {mu_list:?}")));
    }
    let mu_max = mu_list.iter().copied().fold(0.0, f64::max);
    let (dt, sub) = config.time_step(mu_max)?;
    let dx = config.dx();
    for &mu in mu_list {
        let c = mu * dt / (dx * dx);
        if c > 0.5 {
            return Err(Error::Unstable {
                equation: "diffusion",
                number: c,
                limit: 0.5,
                mu,
                dt,
                dx,
            });
        }
    }

    let grid = config.grid();
    let n = grid.len();
    let per_mu = config.snapshots_per_mu();
    let interval = config.snapshot_interval();
    let mut columns = Vec::with_capacity(mu_list.len() * per_mu);
    let (mut mus, mut times) = (Vec::new(), Vec::new());
    for &mu in mu_list {
        let c = mu * dt / (dx * dx);
        let mut u: Vec<f64> = grid.iter().map(|&x| diffusion_initial(x)).collect();
        u[0] = 0.0;
        u[n - 1] = 0.0;
        let mut next = u.clone();
        for k in 0..per_mu {
            if k > 0 {
                for _ in 0..sub {
                    for i in 1..n - 1 {
                        next[i] = (1.0 - 2.0 * c) * u[i] + c * (u[i - 1] + u[i + 1]);
                    }
                    std::mem::swap(&mut u, &mut next);
                }
            }
            columns.push(u.clone());
            mus.push(mu);
            times.push(k as f64 * interval);
        }
    }
    let set = SnapshotSet {
        x: concat_columns(columns, n)?,
        meta: SnapshotMeta {
            equation: Equation::Diffusion,
            split,
            axes: vec![grid],
            dx,
            dt,
            stride: sub,
            mu: mus,
            t: times,
        },
    };
    set.validate()?;
    Ok(set)
}

pub fn diffusion_dataset(config: &DiffusionConfig) -> Result<Dataset> {
    Ok(Dataset {
        train: gen_diffusion(&DIFFUSION_TRAIN_MU, config, Split::Train)?,
        test: gen_diffusion(&DIFFUSION_TEST_MU, config, Split::Test)?,
    })
}

/// Composite Simpson rule on `n` (even) subintervals.
fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + h * i as f64);
    }
    sum * h / 3.0
}

/// Eigenfunction series of the diffusion problem on `[-1, 1]` with
/// homogeneous Dirichlet conditions, evaluated at the points `x`.
pub fn exact_diffusion(mu: f64, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    if !(t >= 0.0) || !(mu >= 0.0) {
        return Err(Error::invalid(format!("need t >= 0 and mu >= 0, got t = {t}, mu = {mu}")));
    }
    let mut u = vec![0.0; x.len()];
    for n in 1.. {
        let k = n as f64 * std::f64::consts::FRAC_PI_2;
        // the coefficients of the Gaussian decay like exp(-0.01 k²)
        if (-k * k * (0.01 + mu * t)).exp() < 1e-12 {
            break;
        }
        let c = simpson(-1.0, 1.0, 40_000, |q| diffusion_initial(q) * (k * (q + 1.0)).sin());
        let decay = (-k * k * mu * t).exp();
        for (ui, &xi) in u.iter_mut().zip(x) {
            *ui += c * decay * (k * (xi + 1.0)).sin();
        }
    }
    Ok(u)
}

// ---------------------------------------------------------------- advection

pub const ADVECTION_TRAIN_MU: [f64; 3] = [0.6, 0.9, 1.2];
pub const ADVECTION_TEST_MU: [f64; 1] = [1.05];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvectionConfig {
    pub n_x: usize,
    pub n_t: usize,
    pub t_end: f64,
}

impl Default for AdvectionConfig {
    fn default() -> Self {
        AdvectionConfig {
            n_x: 256,
            n_t: 200,
            t_end: 1.0,
        }
    }
}

impl AdvectionConfig {
    /// `n_x` equispaced points on the periodic interval `[0, 2)`.
    pub fn grid(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| 2.0 * i as f64 / self.n_x as f64).collect()
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_t as f64
    }
}

/// Gaussian pulse with mean 0.2 and variance 0.001.
pub fn advection_initial(x: f64) -> f64 {
    let d = x - 0.2;
    (-d * d / 0.002).exp() / (0.002 * std::f64::consts::PI).sqrt()
}

/// Exact periodic transport `u(x, t) = g((x − μt) mod 2)`.
pub fn gen_advection(mu_list: &[f64], config: &AdvectionConfig, split: Split) -> Result<SnapshotSet> {
    if config.n_x == 0 || config.n_t == 0 || mu_list.is_empty() {
        return Err(Error::invalid("empty advection discretisation"));
    }
    let grid = config.grid();
    let dt = config.dt();
    let mut columns = Vec::with_capacity(mu_list.len() * config.n_t);
    let (mut mus, mut times) = (Vec::new(), Vec::new());
    for &mu in mu_list {
        for step in 0..config.n_t {
            let t = step as f64 * dt;
            columns.push(
                grid.iter()
                    .map(|&x| advection_initial((x - mu * t).rem_euclid(2.0)))
                    .collect(),
            );
            mus.push(mu);
            times.push(t);
        }
    }
    let set = SnapshotSet {
        x: concat_columns(columns, grid.len())?,
        meta: SnapshotMeta {
            equation: Equation::Advection,
            split,
            axes: vec![grid],
            dx: 2.0 / config.n_x as f64,
            dt,
            stride: 1,
            mu: mus,
            t: times,
        },
    };
    set.validate()?;
    Ok(set)
}

pub fn advection_dataset(config: &AdvectionConfig) -> Result<Dataset> {
    Ok(Dataset {
        train: gen_advection(&ADVECTION_TRAIN_MU, config, Split::Train)?,
        test: gen_advection(&ADVECTION_TEST_MU, config, Split::Test)?,
    })
}

// -------------------------------------------------------- reaction-diffusion

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReactionDiffusionConfig {
    /// Grid points per axis on `[-extent, extent]`.
    pub n: usize,
    pub extent: f64,
    pub t_end: f64,
    pub n_t: usize,
    pub beta: f64,
    pub mu_u: f64,
    pub mu_v: f64,
    /// Leading solver steps that are discarded.
    pub transient_cut: usize,
    pub stride: usize,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for ReactionDiffusionConfig {
    fn default() -> Self {
        ReactionDiffusionConfig {
            n: 100,
            extent: 10.0,
            t_end: 1.0,
            n_t: 50_000,
            beta: 1.0,
            mu_u: 1.0,
            mu_v: 1.0,
            transient_cut: 5000,
            stride: 36,
            n_train: 750,
            n_test: 250,
        }
    }
}

impl ReactionDiffusionConfig {
    /// The coarse grid used for training experiments.
    pub fn desk() -> Self {
        ReactionDiffusionConfig {
            n: 32,
            ..Self::default()
        }
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.extent / (self.n - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_t as f64
    }

    /// `Δt μ (1/Δx² + 1/Δy²)` for the faster diffusing component.
    pub fn cfl(&self) -> f64 {
        let dx = self.dx();
        self.dt() * self.mu_u.max(self.mu_v) * 2.0 / (dx * dx)
    }

    pub fn grid(&self) -> Vec<f64> {
        linspace(-self.extent, self.extent, self.n)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n_t == 0 || self.stride == 0 || !(self.t_end > 0.0) {
            return Err(Error::invalid(format!("degenerate reaction-diffusion setup {self:?}")));
        }
        let kept = (self.n_t.saturating_sub(self.transient_cut)).div_ceil(self.stride);
        if kept < self.n_train + self.n_test {
            return Err(Error::invalid(format!(
                "only {kept} samples remain after the transient, need {}",
                self.n_train + self.n_test
            )));
        }
        let cfl = self.cfl();
        if cfl > 0.5 {
            return Err(Error::Unstable {
                equation: "reaction-diffusion",
                number: cfl,
                limit: 0.5,
                mu: self.mu_u.max(self.mu_v),
                dt: self.dt(),
                dx: self.dx(),
            });
        }
        Ok(())
    }
}

/// Fields on an `n × n` grid, column-major with the first index along `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct RdState {
    pub n: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl RdState {
    /// Spiral initial condition `tanh(r cos(θ − r))`, `tanh(r sin(θ − r))`.
    pub fn initial(config: &ReactionDiffusionConfig) -> Self {
        let g = config.grid();
        let n = config.n;
        let (mut u, mut v) = (vec![0.0; n * n], vec![0.0; n * n]);
        for j in 0..n {
            for i in 0..n {
                let (x, y) = (g[i], g[j]);
                let r = x.hypot(y);
                let th = y.atan2(x);
                u[i + n * j] = (r * (th - r).cos()).tanh();
                v[i + n * j] = (r * (th - r).sin()).tanh();
            }
        }
        RdState { n, u, v }
    }
}

/// Five-point Laplacian with mirrored ghost cells (zero normal derivative).
fn laplacian(f: &[f64], n: usize, inv_dx2: f64, out: &mut [f64]) {
    let mirror = |k: isize| -> usize {
        if k < 0 {
            1
        } else if k as usize >= n {
            n - 2
        } else {
            k as usize
        }
    };
    for j in 0..n {
        let (jm, jp) = (mirror(j as isize - 1), mirror(j as isize + 1));
        for i in 0..n {
            let (im, ip) = (mirror(i as isize - 1), mirror(i as isize + 1));
            let c = f[i + n * j];
            out[i + n * j] =
                (f[im + n * j] + f[ip + n * j] + f[i + n * jm] + f[i + n * jp] - 4.0 * c) * inv_dx2;
        }
    }
}

/// One explicit Euler step of the λ–ω system
/// `u_t = μ_u Δu + (1 − z) u + β z v`, `v_t = μ_v Δv + (1 − z) v − β z u`
/// with `z = u² + v²`.
pub fn rd_step(state: &mut RdState, config: &ReactionDiffusionConfig, scratch: &mut [Vec<f64>; 2]) {
    let n = state.n;
    let dt = config.dt();
    let inv_dx2 = 1.0 / (config.dx() * config.dx());
    let [lu, lv] = scratch;
    laplacian(&state.u, n, inv_dx2, lu);
    laplacian(&state.v, n, inv_dx2, lv);
    for k in 0..n * n {
        let (u, v) = (state.u[k], state.v[k]);
        let z = u * u + v * v;
        state.u[k] = u + dt * (config.mu_u * lu[k] + (1.0 - z) * u + config.beta * z * v);
        state.v[k] = v + dt * (config.mu_v * lv[k] + (1.0 - z) * v - config.beta * z * u);
    }
}

/// `flip_y(vᵀ)`: transpose followed by reversal of the column order.
pub fn flip_transpose(f: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            out[i + n * j] = f[(n - 1 - j) + n * i];
        }
    }
    out
}

/// Diagnostics gathered while generating reaction-diffusion data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdDiagnostics {
    pub cfl: f64,
    pub max_abs_u: f64,
    pub max_abs_v: f64,
    /// Largest `max |u − flip_y(vᵀ)|` over the stored samples.
    pub symmetry_defect: f64,
}

/// Runs the solver, drops the transient and keeps every `stride`-th state
/// (the `u` field only), split into consecutive train and test blocks.
pub fn gen_reaction_diffusion(config: &ReactionDiffusionConfig) -> Result<(Dataset, RdDiagnostics)> {
    config.validate()?;
    let n = config.n;
    let dt = config.dt();
    let mut state = RdState::initial(config);
    let mut scratch = [vec![0.0; n * n], vec![0.0; n * n]];
    let wanted = config.n_train + config.n_test;
    let mut samples = Vec::with_capacity(wanted);
    let mut times = Vec::with_capacity(wanted);
    let mut diag = RdDiagnostics {
        cfl: config.cfl(),
        max_abs_u: 0.0,
        max_abs_v: 0.0,
        symmetry_defect: 0.0,
    };
    let max_abs = |f: &[f64]| f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for step in 1..=config.n_t {
        rd_step(&mut state, config, &mut scratch);
        diag.max_abs_u = diag.max_abs_u.max(max_abs(&state.u));
        diag.max_abs_v = diag.max_abs_v.max(max_abs(&state.v));
        if !diag.max_abs_u.is_finite() || !diag.max_abs_v.is_finite() {
            return Err(Error::NonFinite(format!("reaction-diffusion state at step {step}")));
        }
        if step > config.transient_cut && (step - config.transient_cut - 1).is_multiple_of(config.stride) {
            let rot = flip_transpose(&state.v, n);
            let defect = state.u.iter().zip(&rot).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            diag.symmetry_defect = diag.symmetry_defect.max(defect);
            samples.push(state.u.clone());
            times.push(step as f64 * dt);
            if samples.len() == wanted {
                break;
            }
        }
    }
    let grid = config.grid();
    let make = |range: std::ops::Range<usize>, split| -> Result<SnapshotSet> {
        let cols: Vec<Vec<f64>> = samples[range.clone()].to_vec();
        let set = SnapshotSet {
            x: concat_columns(cols, n * n)?,
            meta: SnapshotMeta {
                equation: Equation::ReactionDiffusion,
                split,
                axes: vec![grid.clone(), grid.clone()],
                dx: config.dx(),
                dt,
                stride: config.stride,
                mu: vec![config.mu_u; range.len()],
                t: times[range].to_vec(),
            },
        };
        set.validate()?;
        Ok(set)
    };
    let dataset = Dataset {
        train: make(0..config.n_train, Split::Train)?,
        test: make(config.n_train..wanted, Split::Test)?,
    };
    Ok((dataset, diag))
}

// ---------------------------------------------------------------------- POD

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PodRank {
    /// Use exactly this many modes.
    Fixed(usize),
    /// Smallest rank whose relative energy error is below the tolerance.
    Tolerance(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PodBasis {
    /// `d × r`, orthonormal columns.
    pub modes: Mat,
    /// All singular values of the snapshot matrix.
    pub singular_values: Vec<f64>,
    /// Always false: snapshots are not mean-centred.
    pub mean_free: bool,
}

impl PodBasis {
    pub fn rank(&self) -> usize {
        self.modes.cols()
    }
}

/// `Σ_{i≥r} s_i² / Σ s_i²`, the relative squared reconstruction error of the
/// best rank-`r` approximation.
pub fn energy_tail(s: &[f64], r: usize) -> f64 {
    let total: f64 = s.iter().map(|x| x * x).sum();
    if total == 0.0 {
        return 0.0;
    }
    s.iter().skip(r).map(|x| x * x).sum::<f64>() / total
}

/// Left singular vectors of the snapshot matrix.
pub fn pod(x: &Mat, rank: PodRank) -> Result<PodBasis> {
    if x.is_empty() {
        return Err(Error::invalid("POD of an empty snapshot matrix"));
    }
    let f = svd(x)?;
    let r = match rank {
        PodRank::Fixed(r) => {
            if r == 0 || r > f.s.len() {
                return Err(Error::invalid(format!(
                    "POD rank {r} outside 1..={} for a {}x{} snapshot matrix",
                    f.s.len(),
                    x.rows(),
                    x.cols()
                )));
            }
            r
        }
        PodRank::Tolerance(tol) => {
            if !(tol > 0.0) {
                return Err(Error::invalid(format!("POD tolerance must be positive, got {tol}")));
            }
            (1..=f.s.len()).find(|&r| energy_tail(&f.s, r) < tol).unwrap_or(f.s.len())
        }
    };
    Ok(PodBasis {
        modes: f.u.leading_cols(r),
        singular_values: f.s,
        mean_free: false,
    })
}

/// `X − V Vᵀ X`.
pub fn pod_residual(basis: &PodBasis, x: &Mat) -> Result<Mat> {
    let coeffs = matmul_tn(&basis.modes, x)?;
    x.sub(&matmul(&basis.modes, &coeffs)?)
}

/// Relative Frobenius error `‖X − V Vᵀ X‖_F / ‖X‖_F`.
pub fn pod_error(basis: &PodBasis, x: &Mat) -> Result<f64> {
    let norm = x.frobenius_norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(pod_residual(basis, x)?.frobenius_norm() / norm)
}

/// Mean over snapshots of `‖u − V Vᵀ u‖²`, absolute and divided by the mean
/// of `‖u‖²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PodLoss {
    pub absolute: f64,
    pub relative: f64,
}

pub fn pod_loss(basis: &PodBasis, x: &Mat) -> Result<PodLoss> {
    if x.cols() == 0 {
        return Err(Error::invalid("POD loss over an empty snapshot set"));
    }
    let n = x.cols() as f64;
    let res = pod_residual(basis, x)?;
    let absolute = res.frobenius_norm().powi(2) / n;
    let scale = x.frobenius_norm().powi(2) / n;
    Ok(PodLoss {
        absolute,
        relative: if scale == 0.0 { 0.0 } else { absolute / scale },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(m: &Mat, j: usize) -> Vec<f64> {
        m.col(j).to_vec()
    }

    #[test]
    fn diffusion_shapes_and_boundaries() {
        let cfg = DiffusionConfig::default();
        let set = gen_diffusion(&[0.1], &cfg, Split::Train).unwrap();
        assert_eq!(set.x.shape(), (101, 251));
        let g: Vec<f64> = cfg.grid().iter().map(|&x| diffusion_initial(x)).collect();
        let first = col(&set.x, 0);
        for i in 1..100 {
            assert_eq!(first[i], g[i]);
        }
        for j in 0..set.len() {
            assert_eq!(set.x[(0, j)], 0.0);
            assert_eq!(set.x[(100, j)], 0.0);
        }
        assert!((set.meta.t[250] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diffusion_time_step_respects_quarter_limit() {
        let cfg = DiffusionConfig::default();
        let (dt, sub) = cfg.time_step(1.0).unwrap();
        assert!((dt - 1e-4).abs() < 1e-18);
        assert_eq!(sub, 40);
        let (dt, _) = cfg.time_step(0.6).unwrap();
        assert!(0.6 * dt / (cfg.dx() * cfg.dx()) <= 0.25 + 1e-12);
    }

    #[test]
    fn unstable_override_is_rejected() {
        let cfg = DiffusionConfig {
            dt: Some(4e-3 / 3.0),
            ..DiffusionConfig::default()
        };
        match gen_diffusion(&[1.0], &cfg, Split::Train) {
            Err(Error::Unstable { number, mu, .. }) => {
                assert!(number > 0.5);
                assert_eq!(mu, 1.0);
            }
            other => panic!("expected a stability error, got {other:?}"),
        }
        let msg = gen_diffusion(&[1.0], &cfg, Split::Train).unwrap_err().to_string();
        assert!(msg.contains("mu = 1") && msg.contains("dt") && msg.contains("dx"));
    }

    #[test]
    fn exact_series_properties() {
        let x = DiffusionConfig::default().grid();
        let u0 = exact_diffusion(0.1, 0.0, &x).unwrap();
        for (u, &xi) in u0.iter().zip(&x) {
            assert!((u - diffusion_initial(xi)).abs() < 1e-6);
        }
        let late = exact_diffusion(1.0, 50.0, &x).unwrap();
        assert!(late.iter().all(|u| u.abs() < 1e-12));
        for t in [0.0, 0.05, 0.3] {
            let u = exact_diffusion(0.5, t, &x).unwrap();
            let n = u.len();
            for i in 0..n {
                assert!((u[i] - u[n - 1 - i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fd_matches_series_at_t_02() {
        let cfg = DiffusionConfig::default();
        let set = gen_diffusion(&[0.1], &cfg, Split::Train).unwrap();
        // t = 0.2 is snapshot 50
        assert!((set.meta.t[50] - 0.2).abs() < 1e-12);
        let exact = exact_diffusion(0.1, 0.2, &cfg.grid()).unwrap();
        let err = col(&set.x, 50).iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn advection_snapshots() {
        let cfg = AdvectionConfig::default();
        let set = gen_advection(&[0.9], &cfg, Split::Train).unwrap();
        assert_eq!(set.x.shape(), (256, 200));
        let grid = cfg.grid();
        for (i, &x) in grid.iter().enumerate() {
            assert_eq!(set.x[(i, 0)], advection_initial(x));
        }
        let dx = 2.0 / 256.0;
        let mass0: f64 = set.x.col(0).iter().sum::<f64>() * dx;
        for j in 0..200 {
            let mass: f64 = set.x.col(j).iter().sum::<f64>() * dx;
            assert!((mass - mass0).abs() < 1e-8);
            let peak = (0..256).max_by(|&a, &b| set.x[(a, j)].total_cmp(&set.x[(b, j)])).unwrap();
            let expect = (0.2 + 0.9 * set.meta.t[j]).rem_euclid(2.0);
            assert!((grid[peak] - expect).abs() <= dx);
        }
    }

    #[test]
    fn mirror_ghosts_give_zero_normal_derivative() {
        // For a field whose mirror extension is smooth the discrete Laplacian
        // at the boundary must equal the interior stencil with f[-1] = f[1].
        let n = 6;
        let f: Vec<f64> = (0..n * n).map(|k| ((k % n) as f64).powi(2) + (k / n) as f64).collect();
        let mut out = vec![0.0; n * n];
        laplacian(&f, n, 1.0, &mut out);
        // along x: f = i² so the one-sided ghost value is f[1] = 1
        let j = 3;
        let expect_x = 1.0 + 1.0 - 2.0 * 0.0;
        let expect_y = (j - 1) as f64 + (j + 1) as f64 - 2.0 * j as f64;
        assert!((out[n * j] - (expect_x + expect_y)).abs() < 1e-12);
    }

    #[test]
    fn flip_transpose_is_quarter_turn() {
        let n = 3;
        let f: Vec<f64> = (0..9).map(|k| k as f64).collect();
        let g = flip_transpose(&f, n);
        for i in 0..n {
            for j in 0..n {
                // (fᵀ)[i, n-1-j]
                assert_eq!(g[i + n * j], f[(n - 1 - j) + n * i]);
            }
        }
        assert_eq!(flip_transpose(&flip_transpose(&flip_transpose(&flip_transpose(&f, n), n), n), n), f);
    }

    #[test]
    fn small_reaction_diffusion_run() {
        let cfg = ReactionDiffusionConfig {
            n: 16,
            n_t: 2000,
            transient_cut: 200,
            stride: 30,
            n_train: 40,
            n_test: 20,
            ..ReactionDiffusionConfig::default()
        };
        let (data, diag) = gen_reaction_diffusion(&cfg).unwrap();
        assert_eq!(data.train.x.shape(), (256, 40));
        assert_eq!(data.test.x.shape(), (256, 20));
        assert!(diag.max_abs_u <= 1.1 && diag.max_abs_v <= 1.1);
        assert!(diag.symmetry_defect < 1e-12);
        assert!((data.train.meta.t[0] - 201.0 * cfg.dt()).abs() < 1e-15);
        assert!((data.train.meta.t[1] - data.train.meta.t[0] - 30.0 * cfg.dt()).abs() < 1e-12);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let cfg = ReactionDiffusionConfig {
            n_t: 10,
            transient_cut: 0,
            stride: 1,
            n_train: 5,
            n_test: 5,
            ..ReactionDiffusionConfig::default()
        };
        assert!(matches!(gen_reaction_diffusion(&cfg), Err(Error::Unstable { .. })));
    }

    #[test]
    fn pod_examples() {
        let u = [1.0, 2.0, -1.0, 0.5];
        let x = Mat::from_fn(4, 6, |i, j| u[i] * (j as f64 + 1.0));
        let b = pod(&x, PodRank::Tolerance(1e-12)).unwrap();
        assert_eq!(b.rank(), 1);
        assert!(pod_error(&b, &x).unwrap() < 1e-14);
        assert!(pod(&x, PodRank::Fixed(5)).is_err());

        let y = Mat::from_fn(5, 7, |i, j| ((i * 7 + j) as f64).sin() + 0.1 * (i as f64));
        for r in 1..=5 {
            let b = pod(&y, PodRank::Fixed(r)).unwrap();
            let s = &b.singular_values;
            let expect = (s[r..].iter().map(|v| v * v).sum::<f64>()).sqrt() / y.frobenius_norm();
            assert!((pod_error(&b, &y).unwrap() - expect).abs() < 1e-10);
            assert!((pod_error(&b, &y).unwrap().powi(2) - energy_tail(s, r)).abs() < 1e-10);
            let gram = matmul_tn(&b.modes, &b.modes).unwrap();
            assert!(gram.max_abs_diff(&Mat::identity(r)) < 1e-10);
        }
    }
}

//! MMD loss between predicted and empirical characteristic functions, its
//! adjoint gradient, and the trust-region quasi-Newton training loop.

use crate::cfe_engine::{DecayConvention, Propagator, PropagatorConfig};
use crate::drift_model::{FourierDrift, SymmetrySpec};
use crate::error::{Error, Result};
use crate::index::IndexBox;
use crate::simulator::Dataset;
use crate::spectral_grid::{apply_gaussian_factor, empirical_cf, per_trajectory_cf, CFField, SpectralGrid};
use num_complex::Complex64;
use std::time::Instant;

/// How targets are formed from the dataset: one averaged empirical CF per
/// snapshot, or one CF per (trajectory, snapshot) with the per-trajectory
/// squared losses averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    #[default]
    AveragedEcf,
    PerTrajectory,
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub mode: LossMode,
    /// L1 regularization weight
    pub mu: f64,
    /// Gaussian factor exp(-reg |s|^2) applied to initial conditions and
    /// targets alike, so zero residual stays achievable
    pub gaussian_reg: f64,
    /// inner steps per snapshot interval; h = dt / nu
    pub nu: usize,
    pub alpha: f64,
    pub g: Vec<f64>,
    pub grid: SpectralGrid,
    pub decay: DecayConvention,
    /// extra grid points per axis side for the internal evolution grid; the
    /// residual is still taken on `grid`. Padding pushes the zero closure of
    /// off-grid shifts away from the scored frequencies, removing the
    /// attenuation bias it otherwise induces near the boundary
    pub pad: u32,
}

impl LossConfig {
    pub fn new(grid: SpectralGrid, alpha: f64, g: Vec<f64>, nu: usize) -> Self {
        LossConfig {
            mode: LossMode::AveragedEcf,
            mu: 0.0,
            gaussian_reg: 0.0,
            nu,
            alpha,
            g,
            grid,
            decay: DecayConvention::default(),
            pad: 0,
        }
    }

    /// The internal evolution grid: the scoring grid widened by `pad` points
    /// per side.
    fn padded_grid(&self) -> Result<SpectralGrid> {
        SpectralGrid::new(
            self.grid.l,
            self.grid.m + self.pad,
            self.grid.n_l,
            self.grid.dim,
        )
    }

    fn propagator_config(&self, dt: f64) -> Result<PropagatorConfig> {
        if self.nu == 0 {
            return Err(Error::Config("nu must be >= 1".into()));
        }
        if self.mu < 0.0 || self.gaussian_reg < 0.0 {
            return Err(Error::Config("mu and gaussian_reg must be >= 0".into()));
        }
        let mut cfg = PropagatorConfig::new(
            self.alpha,
            self.g.clone(),
            dt / self.nu as f64,
            self.padded_grid()?,
        )?;
        cfg.decay = self.decay;
        Ok(cfg)
    }

    /// Linear indices (on the padded grid) of the scored frequencies.
    fn scored_indices(&self) -> Result<Vec<usize>> {
        let padded = self.padded_grid()?;
        let cut = self.grid.m as i64;
        let mut out = Vec::with_capacity(self.grid.len());
        for (lin, idx) in padded.index_box().iter() {
            if idx[..self.grid.dim].iter().all(|c| c.abs() <= cut) {
                out.push(lin);
            }
        }
        Ok(out)
    }
}

/// One (initial condition, target) pair of CF value arrays with its weight
/// in the total loss.
struct SnapshotPair {
    init: Vec<Complex64>,
    target: Vec<Complex64>,
    weight: f64,
}

/// Materialize all snapshot pairs of the loss for `ds` under `cfg`.
fn snapshot_pairs(ds: &Dataset, cfg: &LossConfig) -> Result<Vec<SnapshotPair>> {
    if ds.dim != cfg.grid.dim {
        return Err(Error::Config("dataset/grid dimension mismatch".into()));
    }
    let n_obs = ds.n_obs();
    if n_obs < 2 {
        return Err(Error::Empty("need at least two snapshots".into()));
    }
    let grid = cfg.padded_grid()?;
    let mut pairs = Vec::new();
    match cfg.mode {
        LossMode::AveragedEcf => {
            let mut fields: Vec<CFField> = Vec::with_capacity(n_obs);
            for j in 0..n_obs {
                let mut f = empirical_cf(ds, j, grid)?;
                if cfg.gaussian_reg > 0.0 {
                    apply_gaussian_factor(&mut f, cfg.gaussian_reg);
                }
                fields.push(f);
            }
            for j in 0..n_obs - 1 {
                pairs.push(SnapshotPair {
                    init: fields[j].values.clone(),
                    target: fields[j + 1].values.clone(),
                    weight: 1.0,
                });
            }
        }
        LossMode::PerTrajectory => {
            let valid: Vec<_> = ds.trajectories.iter().filter(|t| t.valid).collect();
            if valid.is_empty() {
                return Err(Error::Empty("no valid trajectories".into()));
            }
            let w = 1.0 / valid.len() as f64;
            for t in valid {
                let mut prev = per_trajectory_cf(t.state(0), grid, cfg.gaussian_reg)?;
                for j in 1..n_obs {
                    let next = per_trajectory_cf(t.state(j), grid, cfg.gaussian_reg)?;
                    pairs.push(SnapshotPair {
                        init: std::mem::take(&mut prev.values),
                        target: next.values.clone(),
                        weight: w,
                    });
                    prev = next;
                }
            }
        }
    }
    Ok(pairs)
}

fn squared_residual(pred: &[Complex64], target: &[Complex64], scored: &[usize]) -> f64 {
    scored
        .iter()
        .map(|&i| (pred[i] - target[i]).norm_sqr())
        .sum()
}

/// The discrete MMD loss: (1/2) sum over snapshot pairs and grid points of
/// |psi_pred - psi_target|^2 (weighted in per-trajectory mode), plus
/// mu ||theta||_1.
pub fn mmd_loss(model: &FourierDrift, ds: &Dataset, cfg: &LossConfig) -> Result<f64> {
    let pcfg = cfg.propagator_config(ds.dt)?;
    let prop = Propagator::new(&pcfg, model)?;
    let pairs = snapshot_pairs(ds, cfg)?;
    let scored = cfg.scored_indices()?;
    Ok(data_loss(&prop, &pairs, cfg.nu, &scored)? + cfg.mu * model.l1_norm())
}

fn data_loss(
    prop: &Propagator,
    pairs: &[SnapshotPair],
    nu: usize,
    scored: &[usize],
) -> Result<f64> {
    let grid = prop.grid();
    let mut total = 0.0;
    for pair in pairs {
        let init = CFField {
            grid,
            values: pair.init.clone(),
            time_label: 0.0,
        };
        let (pred, _) = prop.evolve(&init, nu, false)?;
        total += 0.5 * pair.weight * squared_residual(&pred.values, &pair.target, scored);
    }
    Ok(total)
}

/// Loss value, gradient over the free real parameters, and per-pair
/// residual norms.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub residual_norms: Vec<f64>,
}

/// Adjoint gradient of [`mmd_loss`] with respect to the free real
/// parameterization of theta. The forward evolution is taped per snapshot
/// pair; the multiplier runs backward with final condition
/// lambda = psi_pred - psi_target, and the holomorphic per-mode gradient is
/// accumulated at every inner step, then mapped to the free parameters.
pub fn mmd_gradient(
    param: &Parameterization,
    p: &[f64],
    ds: &Dataset,
    cfg: &LossConfig,
) -> Result<GradientReport> {
    let model = param.model_of(p)?;
    let pcfg = cfg.propagator_config(ds.dt)?;
    let prop = Propagator::new(&pcfg, &model)?;
    let pairs = snapshot_pairs(ds, cfg)?;
    let scored = cfg.scored_indices()?;
    let grid = prop.grid();
    let n = grid.len();

    let mut loss = 0.0;
    let mut residual_norms = Vec::with_capacity(pairs.len());
    let mut holo = vec![Complex64::new(0.0, 0.0); model.modes().len() * model.dim];
    let mut lam = vec![Complex64::new(0.0, 0.0); n];
    let mut lam_prev = vec![Complex64::new(0.0, 0.0); n];
    for pair in &pairs {
        let init = CFField {
            grid,
            values: pair.init.clone(),
            time_label: 0.0,
        };
        let (pred, tape) = prop.evolve(&init, cfg.nu, true)?;
        let tape = tape.expect("recorded tape");
        let mut sq = 0.0;
        lam.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for &i in &scored {
            let r = pred.values[i] - pair.target[i];
            sq += r.norm_sqr();
            lam[i] = pair.weight * r;
        }
        loss += 0.5 * pair.weight * sq;
        residual_norms.push(sq.sqrt());
        for k in (0..cfg.nu).rev() {
            prop.accumulate_param_gradient(&lam, &tape.states[k], &mut holo);
            if k > 0 {
                prop.adjoint_step_into(&lam, &mut lam_prev);
                std::mem::swap(&mut lam, &mut lam_prev);
            }
        }
    }

    let mut grad = param.gradient_params(&holo);
    if cfg.mu > 0.0 {
        loss += cfg.mu * model.l1_norm();
        param.add_l1_subgradient(p, cfg.mu, &mut grad);
    }
    Ok(GradientReport {
        loss,
        grad,
        residual_norms,
    })
}

/// Bijection between the reality-constrained coefficient array and a flat
/// real parameter vector: one real value for each j = 0 entry, a (Re, Im)
/// pair for each lexicographically positive mode, the negative modes
/// determined by conjugation. Optionally composes a parity symmetry
/// projection.
#[derive(Debug, Clone)]
pub struct Parameterization {
    pub j_max: u32,
    pub l: u32,
    pub dim: usize,
    pub symmetry: Option<SymmetrySpec>,
}

impl Parameterization {
    pub fn new(j_max: u32, l: u32, dim: usize) -> Self {
        Parameterization {
            j_max,
            l,
            dim,
            symmetry: None,
        }
    }

    pub fn with_symmetry(mut self, spec: SymmetrySpec) -> Result<Self> {
        if spec.dim() != self.dim {
            return Err(Error::Config("symmetry spec dimension mismatch".into()));
        }
        self.symmetry = Some(spec);
        Ok(self)
    }

    #[inline]
    fn modes(&self) -> IndexBox {
        IndexBox::new(self.j_max as i64, self.dim)
    }

    /// (2J+1)^d real parameters per field component.
    pub fn n_params(&self) -> usize {
        self.modes().len() * self.dim
    }

    pub fn model_of(&self, p: &[f64]) -> Result<FourierDrift> {
        if p.len() != self.n_params() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        let mut m = FourierDrift::zeros(self.j_max, self.l, self.dim);
        let modes = self.modes();
        let mut at = 0usize;
        for (lin, j) in modes.iter() {
            let j = &j[..self.dim];
            if j.iter().all(|&c| c == 0) {
                for q in 0..self.dim {
                    *m.coeff_mut(lin, q) = Complex64::new(p[at], 0.0);
                    at += 1;
                }
            } else if IndexBox::is_positive_lead(j) {
                let neg: Vec<i64> = j.iter().map(|&c| -c).collect();
                let nlin = modes.index_of(&neg).unwrap();
                for q in 0..self.dim {
                    let c = Complex64::new(p[at], p[at + 1]);
                    at += 2;
                    *m.coeff_mut(lin, q) = c;
                    *m.coeff_mut(nlin, q) = c.conj();
                }
            }
        }
        debug_assert_eq!(at, p.len());
        match &self.symmetry {
            Some(spec) => m.project_symmetry(spec),
            None => Ok(m),
        }
    }

    /// Free parameters of a model; exact inverse of [`model_of`](Self::model_of)
    /// for models satisfying the reality (and symmetry) constraints.
    pub fn params_of(&self, m: &FourierDrift) -> Result<Vec<f64>> {
        if m.j_max != self.j_max || m.l != self.l || m.dim != self.dim {
            return Err(Error::Config("model shape mismatch".into()));
        }
        let mut p = Vec::with_capacity(self.n_params());
        for (lin, j) in self.modes().iter() {
            let j = &j[..self.dim];
            if j.iter().all(|&c| c == 0) {
                for q in 0..self.dim {
                    p.push(m.coeff(lin, q).re);
                }
            } else if IndexBox::is_positive_lead(j) {
                for q in 0..self.dim {
                    let c = m.coeff(lin, q);
                    p.push(c.re);
                    p.push(c.im);
                }
            }
        }
        Ok(p)
    }

    /// Re-impose the constraints on a parameter vector (identity when no
    /// symmetry spec is attached).
    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        match &self.symmetry {
            None => Ok(p.to_vec()),
            Some(_) => self.params_of(&self.model_of(p)?),
        }
    }

    /// Map the accumulated holomorphic gradient G (d Lambda = Re sum G dtheta
    /// over unconstrained complex steps) to the gradient over the free real
    /// parameters, accounting for the conjugate pairing and any symmetry
    /// projection.
    pub fn gradient_params(&self, holo: &[Complex64]) -> Vec<f64> {
        // gamma^j_q = dL/dRe theta^j_q + i dL/dIm theta^j_q = conj(G^j_q);
        // the constraint projections are orthogonal in this real pairing,
        // so projecting gamma like a coefficient array yields the chain rule.
        let mut gamma = FourierDrift::zeros(self.j_max, self.l, self.dim);
        for (i, g) in holo.iter().enumerate() {
            gamma.coeffs[i] = g.conj();
        }
        let gamma = match &self.symmetry {
            Some(spec) => gamma.project_symmetry(spec).expect("matching dims"),
            None => gamma.project_reality(),
        };
        let mut out = Vec::with_capacity(self.n_params());
        for (lin, j) in self.modes().iter() {
            let j = &j[..self.dim];
            if j.iter().all(|&c| c == 0) {
                for q in 0..self.dim {
                    out.push(gamma.coeff(lin, q).re);
                }
            } else if IndexBox::is_positive_lead(j) {
                for q in 0..self.dim {
                    let c = gamma.coeff(lin, q);
                    out.push(2.0 * c.re);
                    out.push(2.0 * c.im);
                }
            }
        }
        out
    }

    /// mu ||theta||_1 as a function of the free parameters.
    pub fn l1_value(&self, p: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut at = 0usize;
        for (_, j) in self.modes().iter() {
            let j = &j[..self.dim];
            if j.iter().all(|&c| c == 0) {
                for _ in 0..self.dim {
                    total += p[at].abs();
                    at += 1;
                }
            } else if IndexBox::is_positive_lead(j) {
                for _ in 0..self.dim {
                    total += 2.0 * (p[at] * p[at] + p[at + 1] * p[at + 1]).sqrt();
                    at += 2;
                }
            }
        }
        total
    }

    /// Group soft-thresholding: the proximal map of t_mu ||theta(p)||_1,
    /// acting per free coefficient (scalar shrink at j = 0, radial shrink on
    /// each conjugate pair, whose pooled magnitude counts twice in the norm).
    pub fn prox_l1(&self, p: &mut [f64], t_mu: f64) {
        let mut at = 0usize;
        for (_, j) in self.modes().iter() {
            let j = &j[..self.dim];
            if j.iter().all(|&c| c == 0) {
                for _ in 0..self.dim {
                    p[at] = p[at].signum() * (p[at].abs() - t_mu).max(0.0);
                    at += 1;
                }
            } else if IndexBox::is_positive_lead(j) {
                for _ in 0..self.dim {
                    let r = (p[at] * p[at] + p[at + 1] * p[at + 1]).sqrt();
                    let f = if r > 0.0 {
                        (1.0 - 2.0 * t_mu / r).max(0.0)
                    } else {
                        0.0
                    };
                    p[at] *= f;
                    p[at + 1] *= f;
                    at += 2;
                }
            }
        }
    }

    /// Componentwise subgradient of mu ||theta||_1, zero at exact zeros.
    pub fn add_l1_subgradient(&self, p: &[f64], mu: f64, grad: &mut [f64]) {
        let mut at = 0usize;
        for (_, j) in self.modes().iter() {
            let j = &j[..self.dim];
            if j.iter().all(|&c| c == 0) {
                for _ in 0..self.dim {
                    grad[at] += mu * p[at].signum() * f64::from(p[at] != 0.0);
                    at += 1;
                }
            } else if IndexBox::is_positive_lead(j) {
                for _ in 0..self.dim {
                    let r = (p[at] * p[at] + p[at + 1] * p[at + 1]).sqrt();
                    if r > 0.0 {
                        grad[at] += mu * 2.0 * p[at] / r;
                        grad[at + 1] += mu * 2.0 * p[at + 1] / r;
                    }
                    at += 2;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    /// initial free parameters; zeros when empty
    pub init: Vec<f64>,
    /// accepted-step droughts longer than this produce a report warning
    pub patience: usize,
    /// proximal-gradient polish iterations run after the trust-region loop
    /// when mu > 0; soft-thresholding gives the L1 term exact zeros that the
    /// smooth loop only approaches
    pub polish_iter: usize,
}

impl TrainConfig {
    /// Optimization tolerances: 1e-9 for d = 1, 1e-3 for d = 2.
    pub fn defaults(dim: usize) -> Self {
        let tol = if dim == 1 { 1e-9 } else { 1e-3 };
        TrainConfig {
            grad_tol: tol,
            step_tol: 1e-12,
            max_iter: 200,
            init: Vec::new(),
            patience: 20,
            polish_iter: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterRecord {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_time_s: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub history: Vec<IterRecord>,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub termination: String,
    pub warning: Option<String>,
}

impl RunReport {
    /// Structured text: one line per record plus a footer.
    pub fn to_text(&self) -> String {
        let mut s = String::from("iter,loss,grad_norm,wall_time_s,accepted\n");
        for r in &self.history {
            s.push_str(&format!(
                "{},{:e},{:e},{:.3},{}\n",
                r.iter, r.loss, r.grad_norm, r.wall_time_s, r.accepted
            ));
        }
        s.push_str(&format!(
            "# termination: {}; final loss {:e}, grad norm {:e}\n",
            self.termination, self.final_loss, self.final_grad_norm
        ));
        if let Some(w) = &self.warning {
            s.push_str(&format!("# warning: {w}\n"));
        }
        s
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat_vec(b: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for i in 0..n {
        out[i] = dot(&b[i * n..(i + 1) * n], v);
    }
}

/// Steihaug-Toint truncated CG for min g's + s'Bs/2 subject to |s| <= delta.
fn steihaug(b: &[f64], g: &[f64], delta: f64) -> Vec<f64> {
    let n = g.len();
    let mut s = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|x| -x).collect();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    if rr.sqrt() < 1e-15 {
        return s;
    }
    let mut bd = vec![0.0; n];
    let to_boundary = |s: &[f64], d: &[f64], delta: f64| -> f64 {
        // positive tau with |s + tau d| = delta
        let (ss, sd, dd) = (dot(s, s), dot(s, d), dot(d, d));
        let disc = (sd * sd + dd * (delta * delta - ss)).max(0.0);
        (-sd + disc.sqrt()) / dd
    };
    for _ in 0..(2 * n + 10) {
        mat_vec(b, &d, &mut bd);
        let dbd = dot(&d, &bd);
        if dbd <= 0.0 {
            let tau = to_boundary(&s, &d, delta);
            for i in 0..n {
                s[i] += tau * d[i];
            }
            return s;
        }
        let alpha = rr / dbd;
        let mut s_next = s.clone();
        for i in 0..n {
            s_next[i] += alpha * d[i];
        }
        if norm2(&s_next) >= delta {
            let tau = to_boundary(&s, &d, delta);
            for i in 0..n {
                s[i] += tau * d[i];
            }
            return s;
        }
        s = s_next;
        for i in 0..n {
            r[i] -= alpha * bd[i];
        }
        let rr_next = dot(&r, &r);
        if rr_next.sqrt() < 1e-10 * (1.0 + norm2(g)) {
            return s;
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for i in 0..n {
            d[i] = r[i] + beta * d[i];
        }
    }
    s
}

/// SR1 update with the standard denominator safeguard; falls back to a
/// (damped-skip) BFGS update when SR1 is rejected.
fn update_hessian(b: &mut [f64], s: &[f64], y: &[f64]) {
    let n = s.len();
    let mut bs = vec![0.0; n];
    mat_vec(b, s, &mut bs);
    let v: Vec<f64> = y.iter().zip(&bs).map(|(a, c)| a - c).collect();
    let vs = dot(&v, s);
    let nv = norm2(&v);
    let ns = norm2(s);
    if vs.abs() >= 1e-8 * nv * ns && nv > 0.0 {
        for i in 0..n {
            for jj in 0..n {
                b[i * n + jj] += v[i] * v[jj] / vs;
            }
        }
        return;
    }
    // BFGS fallback
    let ys = dot(y, s);
    let sbs = dot(s, &bs);
    if ys > 1e-12 * ns * norm2(y) && sbs > 0.0 {
        for i in 0..n {
            for jj in 0..n {
                b[i * n + jj] += y[i] * y[jj] / ys - bs[i] * bs[jj] / sbs;
            }
        }
    }
}

/// Minimize the regularized MMD loss from the zero (or provided) initial
/// guess with a trust-region quasi-Newton loop: Steihaug subproblem, SR1
/// curvature updates on accepted steps, symmetry projection after every
/// iterate.
pub fn train(
    ds: &Dataset,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    param: &Parameterization,
) -> Result<(FourierDrift, RunReport)> {
    let n = param.n_params();
    let mut x = if train_cfg.init.is_empty() {
        vec![0.0; n]
    } else {
        if train_cfg.init.len() != n {
            return Err(Error::Config("initial parameter length mismatch".into()));
        }
        param.project(&train_cfg.init)?
    };
    if !(train_cfg.grad_tol > 0.0 && train_cfg.step_tol > 0.0) {
        return Err(Error::Config("tolerances must be positive".into()));
    }

    let started = Instant::now();
    let mut report = mmd_gradient(param, &x, ds, loss_cfg)?;
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        b[i * n + i] = 1.0;
    }
    let mut delta = 0.1 * (1.0 + norm2(&x));
    let mut history = Vec::new();
    let mut termination = String::from("max iterations");
    let mut drought = 0usize;
    let mut worst_drought = 0usize;

    for iter in 0..train_cfg.max_iter {
        let gnorm = norm2(&report.grad);
        history.push(IterRecord {
            iter,
            loss: report.loss,
            grad_norm: gnorm,
            wall_time_s: started.elapsed().as_secs_f64(),
            accepted: true,
        });
        if gnorm <= train_cfg.grad_tol {
            termination = "gradient tolerance".into();
            break;
        }
        // inner trust-region cycle: shrink until a step is accepted or the
        // region collapses below the step tolerance
        let mut accepted = false;
        loop {
            let s = steihaug(&b, &report.grad, delta);
            let ns = norm2(&s);
            if ns <= train_cfg.step_tol * (1.0 + norm2(&x)) {
                break;
            }
            let x_trial: Vec<f64> = param.project(
                &x.iter().zip(&s).map(|(a, c)| a + c).collect::<Vec<f64>>(),
            )?;
            let model_trial = param.model_of(&x_trial)?;
            let f_trial = mmd_loss(&model_trial, ds, loss_cfg)?;
            let mut bs = vec![0.0; n];
            mat_vec(&b, &s, &mut bs);
            let predicted = -(dot(&report.grad, &s) + 0.5 * dot(&s, &bs));
            let rho = if predicted > 0.0 {
                (report.loss - f_trial) / predicted
            } else {
                -1.0
            };
            if rho < 0.25 {
                delta *= 0.25;
            } else if rho > 0.75 && ns >= 0.8 * delta {
                delta *= 2.0;
            }
            if rho > 1e-4 && f_trial < report.loss {
                let g_old = report.grad.clone();
                let step: Vec<f64> = x_trial.iter().zip(&x).map(|(a, c)| a - c).collect();
                x = x_trial;
                report = mmd_gradient(param, &x, ds, loss_cfg)?;
                let y: Vec<f64> = report.grad.iter().zip(&g_old).map(|(a, c)| a - c).collect();
                update_hessian(&mut b, &step, &y);
                accepted = true;
                break;
            }
            if delta <= train_cfg.step_tol * (1.0 + norm2(&x)) {
                break;
            }
        }
        if accepted {
            drought = 0;
        } else {
            drought += 1;
            worst_drought = worst_drought.max(drought);
            termination = "step tolerance".into();
            break;
        }
        worst_drought = worst_drought.max(drought);
    }
    if loss_cfg.mu > 0.0 && train_cfg.polish_iter > 0 {
        // proximal-gradient polish: descend the smooth data term with
        // backtracking and apply the exact L1 proximal map, so coefficients
        // the trust-region loop left hovering near the kink land on zero
        let data_cfg = LossConfig {
            mu: 0.0,
            ..loss_cfg.clone()
        };
        let mut t = 1.0
            / (0..n)
                .map(|i| b[i * n + i])
                .fold(1.0f64, f64::max);
        let iter0 = history.len();
        for it in 0..train_cfg.polish_iter {
            let data_rep = mmd_gradient(param, &x, ds, &data_cfg)?;
            let f_cur = data_rep.loss + loss_cfg.mu * param.l1_value(&x);
            let mut moved = false;
            while t > 1e-16 {
                let mut xt: Vec<f64> = x
                    .iter()
                    .zip(&data_rep.grad)
                    .map(|(a, g)| a - t * g)
                    .collect();
                param.prox_l1(&mut xt, t * loss_cfg.mu);
                let xt = param.project(&xt)?;
                let f_trial = mmd_loss(&param.model_of(&xt)?, ds, loss_cfg)?;
                if f_trial <= f_cur {
                    let step: f64 = xt
                        .iter()
                        .zip(&x)
                        .map(|(a, c)| (a - c) * (a - c))
                        .sum::<f64>()
                        .sqrt();
                    x = xt;
                    history.push(IterRecord {
                        iter: iter0 + it,
                        loss: f_trial,
                        grad_norm: f64::NAN,
                        wall_time_s: started.elapsed().as_secs_f64(),
                        accepted: true,
                    });
                    moved = step > train_cfg.step_tol * (1.0 + norm2(&x));
                    t *= 1.5;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        report = mmd_gradient(param, &x, ds, loss_cfg)?;
        termination.push_str(" + proximal polish");
    }

    let warning = if worst_drought >= train_cfg.patience {
        Some(format!(
            "loss failed to decrease for {worst_drought} consecutive iterations"
        ))
    } else {
        None
    };
    let model = param.model_of(&x)?;
    let run = RunReport {
        final_loss: report.loss,
        final_grad_norm: norm2(&report.grad),
        history,
        termination,
        warning,
    };
    Ok((model, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift_model::Parity;
    use crate::simulator::{generate_dataset, DriftSpec, InitCondition};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn small_dataset(dim: usize, seed: u64, n_t: usize) -> Dataset {
        let drift = if dim == 1 {
            DriftSpec::Sine1d
        } else {
            DriftSpec::TrigSingleWell2d
        };
        generate_dataset(
            &drift,
            &vec![0.5; dim],
            1.5,
            &InitCondition::Point(vec![0.0; dim]),
            1e-2,
            30,
            10,
            n_t,
            seed,
        )
        .unwrap()
    }

    fn random_params(param: &Parameterization, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..param.n_params())
            .map(|_| scale * rng.gen_range(-1.0..1.0))
            .collect()
    }

    #[test]
    fn parameterization_roundtrip() {
        for &(j_max, dim) in &[(2u32, 1usize), (3, 2), (1, 3)] {
            let param = Parameterization::new(j_max, 2, dim);
            assert_eq!(
                param.n_params(),
                (2 * j_max as usize + 1).pow(dim as u32) * dim
            );
            let p = random_params(&param, 7, 1.0);
            let m = param.model_of(&p).unwrap();
            assert_eq!(m.reality_defect(), 0.0);
            let back = param.params_of(&m).unwrap();
            for (a, b) in p.iter().zip(&back) {
                assert_relative_eq!(a, b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn symmetric_parameterization_roundtrip() {
        let param = Parameterization::new(2, 2, 2)
            .with_symmetry(SymmetrySpec::maier_stein())
            .unwrap();
        let p = param.project(&random_params(&param, 9, 1.0)).unwrap();
        let m = param.model_of(&p).unwrap();
        // idempotence through the parameter map
        let again = param.params_of(&m).unwrap();
        for (a, b) in p.iter().zip(&again) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn l1_value_matches_model_norm() {
        let param = Parameterization::new(2, 2, 2);
        let p = random_params(&param, 11, 0.8);
        let m = param.model_of(&p).unwrap();
        assert_relative_eq!(param.l1_value(&p), m.l1_norm(), epsilon = 1e-12);
        // subgradient of the L1 term alone matches finite differences away
        // from kinks
        let mut grad = vec![0.0; param.n_params()];
        param.add_l1_subgradient(&p, 0.7, &mut grad);
        let eps = 1e-7;
        for i in 0..p.len() {
            let mut pp = p.clone();
            pp[i] += eps;
            let up = param.l1_value(&pp);
            pp[i] -= 2.0 * eps;
            let dn = param.l1_value(&pp);
            assert_relative_eq!(grad[i], 0.7 * (up - dn) / (2.0 * eps), epsilon = 1e-5);
        }
        // zero parameters contribute zero subgradient
        let zeros = vec![0.0; param.n_params()];
        let mut g0 = vec![0.0; param.n_params()];
        param.add_l1_subgradient(&zeros, 0.7, &mut g0);
        assert!(g0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_zero_when_prediction_equals_target() {
        // targets injected as predictions: residual vanishes, loss = mu l1
        let param = Parameterization::new(2, 2, 1);
        let p = random_params(&param, 13, 0.5);
        let model = param.model_of(&p).unwrap();
        assert!(model.l1_norm() > 0.0);
        // residual term exercised through mmd_loss on a real dataset where
        // target == prediction cannot be arranged; check the l1 shift instead
        let ds = small_dataset(1, 3, 4);
        let grid = SpectralGrid::new(2, 16, 4, 1).unwrap();
        let mut cfg = LossConfig::new(grid, 1.5, vec![0.5], 2);
        let base = mmd_loss(&model, &ds, &cfg).unwrap();
        cfg.mu = 0.3;
        let reg = mmd_loss(&model, &ds, &cfg).unwrap();
        assert_relative_eq!(reg - base, 0.3 * model.l1_norm(), epsilon = 1e-10);
        // theta = 0: loss equals pure data term under any mu
        let zero = FourierDrift::zeros(2, 2, 1);
        let a = mmd_loss(&zero, &ds, &cfg).unwrap();
        cfg.mu = 0.0;
        let b = mmd_loss(&zero, &ds, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_nonnegative_and_finite() {
        let ds = small_dataset(2, 5, 3);
        let grid = SpectralGrid::new(2, 8, 4, 2).unwrap();
        let cfg = LossConfig::new(grid, 1.5, vec![0.5, 0.5], 2);
        let param = Parameterization::new(2, 2, 2);
        for seed in 0..5 {
            let p = random_params(&param, seed, 0.3);
            let m = param.model_of(&p).unwrap();
            let v = mmd_loss(&m, &ds, &cfg).unwrap();
            assert!(v.is_finite() && v >= 0.0);
        }
    }

    // the core correctness test: adjoint gradient vs central differences
    #[test]
    fn gradient_matches_finite_differences() {
        let instances: [(usize, u32, usize, u64, LossMode, f64, u32); 6] = [
            (1, 1, 1, 1, LossMode::AveragedEcf, 0.0, 0),
            (1, 2, 3, 2, LossMode::AveragedEcf, 0.0, 8),
            (1, 2, 2, 3, LossMode::PerTrajectory, 0.1, 0),
            (2, 1, 1, 4, LossMode::AveragedEcf, 0.0, 0),
            (2, 2, 3, 5, LossMode::PerTrajectory, 0.0, 4),
            (2, 1, 2, 6, LossMode::AveragedEcf, 0.05, 0),
        ];
        for (dim, j_max, nu, seed, mode, reg, pad) in instances {
            let ds = small_dataset(dim, seed, 3);
            let m_half = if dim == 1 { 16 } else { 8 };
            let grid = SpectralGrid::new(2, m_half, 4, dim).unwrap();
            let mut cfg = LossConfig::new(grid, 1.5, vec![0.5; dim], nu);
            cfg.mode = mode;
            cfg.gaussian_reg = reg;
            cfg.pad = pad;
            let param = Parameterization::new(j_max, 2, dim);
            let p = random_params(&param, seed + 100, 0.3);

            let rep = mmd_gradient(&param, &p, &ds, &cfg).unwrap();
            let eps = 1e-6;
            let mut worst_rel = 0.0f64;
            for i in 0..p.len() {
                let mut pp = p.clone();
                pp[i] += eps;
                let up = mmd_loss(&param.model_of(&pp).unwrap(), &ds, &cfg).unwrap();
                pp[i] -= 2.0 * eps;
                let dn = mmd_loss(&param.model_of(&pp).unwrap(), &ds, &cfg).unwrap();
                let fd = (up - dn) / (2.0 * eps);
                let denom = fd.abs().max(rep.grad[i].abs()).max(1e-8);
                worst_rel = worst_rel.max((rep.grad[i] - fd).abs() / denom);
            }
            assert!(
                worst_rel <= 1e-6,
                "dim={dim} J={j_max} nu={nu} seed={seed}: rel err {worst_rel:.3e}"
            );
        }
    }

    #[test]
    fn gradient_respects_symmetry_projection() {
        let ds = small_dataset(2, 8, 3);
        let grid = SpectralGrid::new(2, 8, 4, 2).unwrap();
        let cfg = LossConfig::new(grid, 1.5, vec![0.5, 0.5], 2);
        let param = Parameterization::new(1, 2, 2)
            .with_symmetry(SymmetrySpec::maier_stein())
            .unwrap();
        let p = param.project(&random_params(&param, 21, 0.3)).unwrap();
        let rep = mmd_gradient(&param, &p, &ds, &cfg).unwrap();
        // the gradient is itself a symmetric direction: projecting changes nothing
        let projected = param.project(&rep.grad).unwrap();
        for (a, b) in rep.grad.iter().zip(&projected) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        // and finite differences along a symmetric direction agree
        let dir = param.project(&random_params(&param, 22, 1.0)).unwrap();
        let eps = 1e-6;
        let shift = |t: f64| -> f64 {
            let q: Vec<f64> = p.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            mmd_loss(&param.model_of(&q).unwrap(), &ds, &cfg).unwrap()
        };
        let fd = (shift(eps) - shift(-eps)) / (2.0 * eps);
        let dd: f64 = rep.grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert_relative_eq!(dd, fd, max_relative = 1e-6, epsilon = 1e-10);
    }

    #[test]
    fn per_trajectory_weighting_averages() {
        // duplicating every trajectory leaves the per-trajectory loss unchanged
        let ds = small_dataset(1, 31, 3);
        let mut doubled = ds.clone();
        doubled.trajectories.extend(ds.trajectories.iter().cloned());
        let grid = SpectralGrid::new(2, 16, 4, 1).unwrap();
        let mut cfg = LossConfig::new(grid, 1.5, vec![0.5], 2);
        cfg.mode = LossMode::PerTrajectory;
        cfg.gaussian_reg = 0.125;
        let m = FourierDrift::sine_1d(2);
        let a = mmd_loss(&m, &ds, &cfg).unwrap();
        let b = mmd_loss(&m, &doubled, &cfg).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    // a tiny end-to-end training run: sine drift, coarse grid, few modes
    #[test]
    fn train_recovers_sine_coarsely() {
        let ds = generate_dataset(
            &DriftSpec::Sine1d,
            &[0.25],
            1.0,
            &InitCondition::Point(vec![0.0]),
            1e-3,
            4000,
            100,
            150,
            42,
        )
        .unwrap();
        let grid = SpectralGrid::new(2, 256, 8, 1).unwrap();
        let mut cfg = LossConfig::new(grid, 1.0, vec![0.25], 10);
        cfg.pad = 64;
        let param = Parameterization::new(2, 2, 1);
        let mut tc = TrainConfig::defaults(1);
        tc.max_iter = 60;
        tc.grad_tol = 1e-7;
        let (model, report) = train(&ds, &cfg, &tc, &param).unwrap();
        // accepted losses decrease monotonically
        for w in report.history.windows(2) {
            assert!(w[1].loss <= w[0].loss + 1e-14);
        }
        let truth = FourierDrift::sine_1d(2);
        let err: f64 = model
            .coeffs
            .iter()
            .zip(&truth.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 0.05, "worst coefficient error {err:.3e}");
        // the fitted loss beats both the zero model and the (noise-biased)
        // ground truth evaluation
        assert!(report.final_loss < report.history[0].loss);
        assert!(report.final_loss <= mmd_loss(&truth, &ds, &cfg).unwrap());
    }

    #[test]
    fn train_with_symmetry_keeps_iterates_symmetric() {
        let ds = small_dataset(2, 77, 4);
        let grid = SpectralGrid::new(2, 8, 4, 2).unwrap();
        let cfg = LossConfig::new(grid, 1.5, vec![0.5, 0.5], 2);
        let spec = SymmetrySpec::new(
            2,
            vec![Parity::None, Parity::Odd, Parity::Odd, Parity::None],
        )
        .unwrap();
        let param = Parameterization::new(1, 2, 2).with_symmetry(spec.clone()).unwrap();
        let mut tc = TrainConfig::defaults(2);
        tc.max_iter = 8;
        let (model, _) = train(&ds, &cfg, &tc, &param).unwrap();
        let projected = model.project_symmetry(&spec).unwrap();
        for (a, b) in model.coeffs.iter().zip(&projected.coeffs) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}

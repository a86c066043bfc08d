//! Equispaced Fourier-space grid and empirical characteristic functions.

use crate::error::{Error, Result};
use crate::index::{IndexBox, MAX_DIM};
use crate::simulator::Dataset;
use num_complex::Complex64;
use std::io::Write;

/// Equispaced grid { j ds : |j_l| <= m } with spacing ds = 1/(n_l * l).
///
/// `l` is the drift period half-width multiplier (shared with the drift
/// model), `n_l` the number of grid points per drift-mode spacing, so a
/// drift mode shift of j/l lands exactly `j * n_l` grid points away.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectralGrid {
    pub l: u32,
    pub m: u32,
    pub n_l: u32,
    pub dim: usize,
}

impl SpectralGrid {
    pub fn new(l: u32, m: u32, n_l: u32, dim: usize) -> Result<Self> {
        if l == 0 || m == 0 || n_l == 0 {
            return Err(Error::Config("grid parameters must be positive".into()));
        }
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Config(format!("unsupported dimension {dim}")));
        }
        Ok(SpectralGrid { l, m, n_l, dim })
    }

    #[inline]
    pub fn ds(&self) -> f64 {
        1.0 / (self.n_l as f64 * self.l as f64)
    }

    #[inline]
    pub fn index_box(&self) -> IndexBox {
        IndexBox::new(self.m as i64, self.dim)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.index_box().len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn center(&self) -> usize {
        self.index_box().center()
    }

    /// Frequency vector j*ds of a linear index.
    pub fn freq_of(&self, lin: usize) -> [f64; MAX_DIM] {
        let j = self.index_box().multi_of(lin);
        let ds = self.ds();
        let mut s = [0.0; MAX_DIM];
        for ax in 0..self.dim {
            s[ax] = j[ax] as f64 * ds;
        }
        s
    }

    /// Drift mode shifts j + k*n_l must land on-grid at least once:
    /// requires n_l * j_max <= m.
    pub fn check_mode_cutoff(&self, j_max: u32) -> Result<()> {
        if self.n_l * j_max > self.m {
            return Err(Error::Config(format!(
                "mode cutoff J={j_max} with n_l={} exceeds grid half-width M={}",
                self.n_l, self.m
            )));
        }
        Ok(())
    }
}

/// Complex field sampled on a [`SpectralGrid`].
#[derive(Debug, Clone)]
pub struct CFField {
    pub grid: SpectralGrid,
    pub values: Vec<Complex64>,
    pub time_label: f64,
}

impl CFField {
    pub fn zeros(grid: SpectralGrid, time_label: f64) -> Self {
        CFField {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
            time_label,
        }
    }

    /// Export as CSV: one row per point, multi-index columns then re, im.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let b = self.grid.index_box();
        let mut header: Vec<String> = (0..self.grid.dim).map(|ax| format!("j{ax}")).collect();
        header.push("re".into());
        header.push("im".into());
        writeln!(w, "{}", header.join(","))?;
        for (lin, j) in b.iter() {
            let mut row: Vec<String> = (0..self.grid.dim).map(|ax| j[ax].to_string()).collect();
            row.push(format!("{:e}", self.values[lin].re));
            row.push(format!("{:e}", self.values[lin].im));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Averaged empirical characteristic function of snapshot `snapshot_index`:
/// values(j) = (1/n_valid) sum_k exp(i (j ds) . X^k). Invalid trajectories
/// are excluded.
pub fn empirical_cf(ds: &Dataset, snapshot_index: usize, grid: SpectralGrid) -> Result<CFField> {
    if grid.dim != ds.dim {
        return Err(Error::Config(format!(
            "grid dimension {} does not match dataset dimension {}",
            grid.dim, ds.dim
        )));
    }
    let valid: Vec<&crate::simulator::Trajectory> =
        ds.trajectories.iter().filter(|t| t.valid).collect();
    if valid.is_empty() {
        return Err(Error::Empty("no valid trajectories".into()));
    }
    let mut field = CFField::zeros(grid, snapshot_index as f64 * ds.dt);
    for t in &valid {
        let x = t.state(snapshot_index);
        accumulate_phase(&mut field.values, grid, x);
    }
    let inv = 1.0 / valid.len() as f64;
    for v in &mut field.values {
        *v *= inv;
    }
    // exact normalization at the center
    field.values[grid.center()] = Complex64::new(1.0, 0.0);
    Ok(field)
}

/// Characteristic function of a single point mass, optionally multiplied by
/// a Gaussian factor exp(-reg * |s|^2):
/// values(j) = exp(i (j ds) . x - reg |j ds|^2).
pub fn per_trajectory_cf(x: &[f64], grid: SpectralGrid, gaussian_reg: f64) -> Result<CFField> {
    if x.len() != grid.dim {
        return Err(Error::Config("state dimension mismatch".into()));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("state must be finite".into()));
    }
    if gaussian_reg < 0.0 {
        return Err(Error::Domain("gaussian_reg must be >= 0".into()));
    }
    let mut field = CFField::zeros(grid, 0.0);
    point_mass_cf(&mut field.values, grid, x, gaussian_reg);
    Ok(field)
}

pub(crate) fn point_mass_cf(out: &mut [Complex64], grid: SpectralGrid, x: &[f64], reg: f64) {
    let b = grid.index_box();
    let ds = grid.ds();
    for (lin, j) in b.iter() {
        let mut phase = 0.0;
        let mut s2 = 0.0;
        for ax in 0..grid.dim {
            let s = j[ax] as f64 * ds;
            phase += s * x[ax];
            s2 += s * s;
        }
        let (im, re) = phase.sin_cos();
        out[lin] = (-reg * s2).exp() * Complex64::new(re, im);
    }
}

fn accumulate_phase(out: &mut [Complex64], grid: SpectralGrid, x: &[f64]) {
    let b = grid.index_box();
    let ds = grid.ds();
    for (lin, j) in b.iter() {
        let mut phase = 0.0;
        for ax in 0..grid.dim {
            phase += j[ax] as f64 * ds * x[ax];
        }
        let (im, re) = phase.sin_cos();
        out[lin] += Complex64::new(re, im);
    }
}

/// Multiply a field elementwise by exp(-reg * |s|^2). Identity for reg = 0.
pub fn apply_gaussian_factor(field: &mut CFField, reg: f64) {
    if reg == 0.0 {
        return;
    }
    let b = field.grid.index_box();
    let ds = field.grid.ds();
    for (lin, j) in b.iter() {
        let mut s2 = 0.0;
        for ax in 0..field.grid.dim {
            let s = j[ax] as f64 * ds;
            s2 += s * s;
        }
        field.values[lin] *= (-reg * s2).exp();
    }
}

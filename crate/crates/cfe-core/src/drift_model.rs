//! Truncated Fourier-series drift fields.
//!
//! A field component is f_m(x) = sum_{|j_l| <= J} theta^j_m exp(i j.x / L)
//! on the box [-L pi, L pi]^d. Coefficients are stored mode-major in the
//! layout of [`IndexBox`], with the d components of each mode contiguous.

use crate::error::{Error, Result};
use crate::index::{IndexBox, MAX_DIM};
use num_complex::Complex64;
use std::io::{BufRead, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    None,
    Even,
    Odd,
}

/// Per-(component, axis) parity constraints on the physical-space field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetrySpec {
    dim: usize,
    /// row-major: parity[component * dim + axis]
    parity: Vec<Parity>,
}

impl SymmetrySpec {
    pub fn new(dim: usize, parity: Vec<Parity>) -> Result<Self> {
        if parity.len() != dim * dim {
            return Err(Error::Config(format!(
                "parity table must have {} entries, got {}",
                dim * dim,
                parity.len()
            )));
        }
        Ok(SymmetrySpec { dim, parity })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn parity(&self, component: usize, axis: usize) -> Parity {
        self.parity[component * self.dim + axis]
    }

    /// The Maier-Stein field symmetries: f1 odd in x1, even in x2;
    /// f2 even in x1, odd in x2.
    pub fn maier_stein() -> Self {
        SymmetrySpec {
            dim: 2,
            parity: vec![Parity::Odd, Parity::Even, Parity::Even, Parity::Odd],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierDrift {
    pub j_max: u32,
    pub l: u32,
    pub dim: usize,
    /// (2J+1)^d * d complex coefficients, mode-major.
    pub coeffs: Vec<Complex64>,
}

impl FourierDrift {
    pub fn zeros(j_max: u32, l: u32, dim: usize) -> Self {
        let modes = IndexBox::new(j_max as i64, dim);
        FourierDrift {
            j_max,
            l,
            dim,
            coeffs: vec![Complex64::new(0.0, 0.0); modes.len() * dim],
        }
    }

    #[inline]
    pub fn modes(&self) -> IndexBox {
        IndexBox::new(self.j_max as i64, self.dim)
    }

    #[inline]
    pub fn coeff(&self, mode_lin: usize, component: usize) -> Complex64 {
        self.coeffs[mode_lin * self.dim + component]
    }

    #[inline]
    pub fn coeff_mut(&mut self, mode_lin: usize, component: usize) -> &mut Complex64 {
        &mut self.coeffs[mode_lin * self.dim + component]
    }

    pub fn set(&mut self, j: &[i64], component: usize, value: Complex64) -> Result<()> {
        let lin = self
            .modes()
            .index_of(j)
            .ok_or_else(|| Error::Config(format!("mode {j:?} out of range")))?;
        *self.coeff_mut(lin, component) = value;
        Ok(())
    }

    pub fn get(&self, j: &[i64], component: usize) -> Complex64 {
        self.modes()
            .index_of(j)
            .map(|lin| self.coeff(lin, component))
            .unwrap_or_else(|| Complex64::new(0.0, 0.0))
    }

    /// The ground-truth sine drift sin(x) for L = 2: modes j = +/-2 with
    /// coefficients -i/2 and +i/2 in the exp(+i j x / L) basis.
    pub fn sine_1d(j_max: u32) -> Self {
        assert!(j_max >= 2);
        let mut m = FourierDrift::zeros(j_max, 2, 1);
        m.set(&[2], 0, Complex64::new(0.0, -0.5)).unwrap();
        m.set(&[-2], 0, Complex64::new(0.0, 0.5)).unwrap();
        m
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    /// Worst violation of the reality constraint theta^{-j} = conj(theta^j).
    pub fn reality_defect(&self) -> f64 {
        let modes = self.modes();
        let mut worst = 0.0f64;
        for (lin, j) in modes.iter() {
            let mut neg = [0i64; MAX_DIM];
            for ax in 0..self.dim {
                neg[ax] = -j[ax];
            }
            let nlin = modes.index_of(&neg[..self.dim]).unwrap();
            for m in 0..self.dim {
                worst = worst.max((self.coeff(lin, m) - self.coeff(nlin, m).conj()).norm());
            }
        }
        worst
    }

    /// Evaluate the field at a physical point. Requires the reality
    /// constraint to hold: the imaginary residue is checked against a
    /// tolerance scaled by the coefficient mass, then discarded.
    pub fn evaluate_field(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Config("point dimension mismatch".into()));
        }
        let modes = self.modes();
        let linv = 1.0 / self.l as f64;
        let mut out = vec![0.0; self.dim];
        let tol = 1e-12 * (1.0 + self.l1_norm());
        let mut acc = vec![Complex64::new(0.0, 0.0); self.dim];
        for (lin, j) in modes.iter() {
            let mut phase = 0.0;
            for ax in 0..self.dim {
                phase += j[ax] as f64 * x[ax] * linv;
            }
            let (im, re) = phase.sin_cos();
            let e = Complex64::new(re, im);
            for m in 0..self.dim {
                acc[m] += self.coeff(lin, m) * e;
            }
        }
        for m in 0..self.dim {
            if acc[m].im.abs() > tol {
                return Err(Error::Constraint(format!(
                    "field evaluation has imaginary residue {:.3e}; reality constraint violated",
                    acc[m].im
                )));
            }
            out[m] = acc[m].re;
        }
        Ok(out)
    }

    /// Coefficient self-convolution (theta * theta^T)^k, k over |k_l| <= 2J,
    /// k-major with the d x d matrix stored row-major per mode.
    pub fn coefficient_convolution(&self) -> ConvCoeffs {
        let modes = self.modes();
        let conv_box = IndexBox::new(2 * self.j_max as i64, self.dim);
        let d = self.dim;
        let mut values = vec![Complex64::new(0.0, 0.0); conv_box.len() * d * d];
        for (alin, a) in modes.iter() {
            for (blin, b) in modes.iter() {
                let mut k = [0i64; MAX_DIM];
                for ax in 0..d {
                    k[ax] = a[ax] + b[ax];
                }
                let klin = conv_box.index_of(&k[..d]).expect("k within 2J box");
                for q in 0..d {
                    let tq = self.coeff(alin, q);
                    for m in 0..d {
                        values[(klin * d + q) * d + m] += tq * self.coeff(blin, m);
                    }
                }
            }
        }
        ConvCoeffs {
            half_width: 2 * self.j_max as i64,
            dim: d,
            values,
        }
    }

    /// Orthogonal projection onto the subspace cut out by the parity
    /// relations of `spec` together with the reality constraint.
    /// Idempotent; the parity reflections and the conjugation map commute,
    /// so sequential averaging equals the full group average.
    pub fn project_symmetry(&self, spec: &SymmetrySpec) -> Result<FourierDrift> {
        if spec.dim() != self.dim {
            return Err(Error::Config("symmetry spec dimension mismatch".into()));
        }
        let mut out = self.clone();
        for axis in 0..self.dim {
            for component in 0..self.dim {
                match spec.parity(component, axis) {
                    Parity::None => {}
                    Parity::Even => average_reflection(&mut out, component, axis, 1.0),
                    Parity::Odd => average_reflection(&mut out, component, axis, -1.0),
                }
            }
        }
        Ok(out.project_reality())
    }

    /// Projection onto theta^{-j} = conj(theta^j) (with j = 0 modes real).
    pub fn project_reality(&self) -> FourierDrift {
        let modes = self.modes();
        let mut out = self.clone();
        for (lin, j) in modes.iter() {
            let mut neg = [0i64; MAX_DIM];
            for ax in 0..self.dim {
                neg[ax] = -j[ax];
            }
            let nlin = modes.index_of(&neg[..self.dim]).unwrap();
            if nlin < lin {
                continue;
            }
            for m in 0..self.dim {
                let avg = 0.5 * (self.coeff(lin, m) + self.coeff(nlin, m).conj());
                *out.coeff_mut(lin, m) = avg;
                *out.coeff_mut(nlin, m) = avg.conj();
            }
        }
        out
    }

    /// Export as CSV: multi-index columns, component, re, im.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header: Vec<String> = (0..self.dim).map(|ax| format!("j{ax}")).collect();
        header.push("component".into());
        header.push("re".into());
        header.push("im".into());
        writeln!(w, "{}", header.join(","))?;
        for (lin, j) in self.modes().iter() {
            for m in 0..self.dim {
                let mut row: Vec<String> = (0..self.dim).map(|ax| j[ax].to_string()).collect();
                let c = self.coeff(lin, m);
                row.push(m.to_string());
                row.push(format!("{:e}", c.re));
                row.push(format!("{:e}", c.im));
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    }

    /// Read coefficients written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: BufRead>(j_max: u32, l: u32, dim: usize, r: R) -> Result<FourierDrift> {
        let mut model = FourierDrift::zeros(j_max, l, dim);
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 3 {
                return Err(Error::Parse {
                    location: format!("line {}", lineno + 1),
                    message: format!("expected {} fields, got {}", dim + 3, fields.len()),
                });
            }
            let parse_err = |message: String| Error::Parse {
                location: format!("line {}", lineno + 1),
                message,
            };
            let mut j = [0i64; MAX_DIM];
            for ax in 0..dim {
                j[ax] = fields[ax]
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(format!("bad index: {e}")))?;
            }
            let m: usize = fields[dim]
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad component: {e}")))?;
            let re: f64 = fields[dim + 1]
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad real part: {e}")))?;
            let im: f64 = fields[dim + 2]
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad imaginary part: {e}")))?;
            if m >= dim {
                return Err(parse_err(format!("component {m} out of range")));
            }
            model
                .set(&j[..dim], m, Complex64::new(re, im))
                .map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(model)
    }
}

fn average_reflection(model: &mut FourierDrift, component: usize, axis: usize, sign: f64) {
    let modes = model.modes();
    let dim = model.dim;
    let old = model.coeffs.clone();
    for (lin, j) in modes.iter() {
        let mut refl = [0i64; MAX_DIM];
        refl[..dim].copy_from_slice(&j[..dim]);
        refl[axis] = -j[axis];
        let rlin = modes.index_of(&refl[..dim]).unwrap();
        *model.coeff_mut(lin, component) =
            0.5 * (old[lin * dim + component] + sign * old[rlin * dim + component]);
    }
}

/// Self-convolution coefficients (theta * theta^T)^k on the box |k_l| <= 2J.
#[derive(Debug, Clone)]
pub struct ConvCoeffs {
    pub half_width: i64,
    pub dim: usize,
    /// k-major; entry (k, q, m) at ((k_lin * d) + q) * d + m.
    pub values: Vec<Complex64>,
}

impl ConvCoeffs {
    #[inline]
    pub fn index_box(&self) -> IndexBox {
        IndexBox::new(self.half_width, self.dim)
    }

    #[inline]
    pub fn entry(&self, k_lin: usize, q: usize, m: usize) -> Complex64 {
        self.values[(k_lin * self.dim + q) * self.dim + m]
    }
}

/// Fourier coefficients of an arbitrary field by composite Gauss-Legendre
/// quadrature over [-L pi, L pi]^d, with one refinement check:
/// theta^j_m = (2 L pi)^{-d} integral f_m(x) exp(-i j.x / L) dx.
///
/// The cell count scales with the mode cutoff so the oscillatory factor is
/// resolved; disagreement between successive refinements above 1e-8 is an
/// error.
pub fn coefficients_by_quadrature<F>(
    f: F,
    j_max: u32,
    l: u32,
    dim: usize,
    base_cells: usize,
) -> Result<FourierDrift>
where
    F: Fn(&[f64], &mut [f64]),
{
    let coarse = quadrature_pass(&f, j_max, l, dim, base_cells.max(8))?;
    let fine = quadrature_pass(&f, j_max, l, dim, 2 * base_cells.max(8))?;
    let mut worst = 0.0f64;
    for (a, b) in coarse.coeffs.iter().zip(&fine.coeffs) {
        worst = worst.max((a - b).norm());
    }
    if worst > 1e-8 {
        return Err(Error::QuadratureDiverged(worst));
    }
    Ok(fine)
}

// 12-point Gauss-Legendre nodes/weights on [-1, 1].
const GL_NODES: [f64; 12] = [
    -0.9815606342467192,
    -0.9041172563704748,
    -0.7699026741943047,
    -0.5873179542866175,
    -0.3678314989981802,
    -0.1252334085114689,
    0.1252334085114689,
    0.3678314989981802,
    0.5873179542866175,
    0.7699026741943047,
    0.9041172563704748,
    0.9815606342467192,
];
const GL_WEIGHTS: [f64; 12] = [
    0.0471753363865118,
    0.1069393259953184,
    0.1600783285433462,
    0.2031674267230659,
    0.2334925365383548,
    0.2491470458134028,
    0.2491470458134028,
    0.2334925365383548,
    0.2031674267230659,
    0.1600783285433462,
    0.1069393259953184,
    0.0471753363865118,
];

fn quadrature_pass<F>(f: &F, j_max: u32, l: u32, dim: usize, cells: usize) -> Result<FourierDrift>
where
    F: Fn(&[f64], &mut [f64]),
{
    // at least 2 cells per oscillation of the highest mode
    let cells = cells.max(2 * j_max as usize);
    let half = l as f64 * std::f64::consts::PI;
    let cell_w = 2.0 * half / cells as f64;
    // 1d nodes and weights
    let n1 = cells * GL_NODES.len();
    let mut nodes = Vec::with_capacity(n1);
    let mut weights = Vec::with_capacity(n1);
    for c in 0..cells {
        let a = -half + c as f64 * cell_w;
        for (t, wt) in GL_NODES.iter().zip(&GL_WEIGHTS) {
            nodes.push(a + 0.5 * cell_w * (t + 1.0));
            weights.push(0.5 * cell_w * wt);
        }
    }
    let modes = IndexBox::new(j_max as i64, dim);
    let mut model = FourierDrift::zeros(j_max, l, dim);
    let norm = 1.0 / (2.0 * half).powi(dim as i32);
    let linv = 1.0 / l as f64;

    // tensor loop over nodes (dim <= MAX_DIM)
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0f64; dim];
    let mut fx = vec![0.0f64; dim];
    loop {
        let mut w = 1.0;
        for ax in 0..dim {
            x[ax] = nodes[idx[ax]];
            w *= weights[idx[ax]];
        }
        f(&x, &mut fx);
        for (lin, j) in modes.iter() {
            let mut phase = 0.0;
            for ax in 0..dim {
                phase -= j[ax] as f64 * x[ax] * linv;
            }
            let (im, re) = phase.sin_cos();
            let e = Complex64::new(re, im) * (w * norm);
            for m in 0..dim {
                *model.coeff_mut(lin, m) += fx[m] * e;
            }
        }
        // advance multi-counter
        let mut ax = 0;
        loop {
            idx[ax] += 1;
            if idx[ax] < n1 {
                break;
            }
            idx[ax] = 0;
            ax += 1;
            if ax == dim {
                return Ok(model);
            }
        }
    }
}

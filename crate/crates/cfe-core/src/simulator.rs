//! Synthetic trajectory generation by Euler-Maruyama discretization of the
//! Levy SDE, dataset filtering, and plain-text persistence.

use crate::drift_model::FourierDrift;
use crate::error::{Error, Result};
use crate::stable_noise::IncrementSampler;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Built-in ground-truth drift fields plus arbitrary Fourier models.
#[derive(Debug, Clone)]
pub enum DriftSpec {
    /// f(x) = sin x
    Sine1d,
    /// f(x) = x - x^3
    DoubleWell1d,
    /// f(x) = -x (closed-form reference)
    OuLinear1d,
    /// f = (sin x2, -sin x1)
    TrigSingleWell2d,
    /// f = (sin x2, -V'(x1)) with V(x) = ((sin x/2)^2 - 4)^2 / 10
    TrigDoubleWell2d,
    /// f = (x2, (2/5) x1 (4 - x1^2) - x1/4)
    PolyDoubleWell2d,
    /// f = (x1 - x1^3 - x1 x2^2, -(1 + x1^2) x2)
    MaierStein,
    Fourier(FourierDrift),
}

impl DriftSpec {
    pub fn dim(&self) -> usize {
        match self {
            DriftSpec::Sine1d | DriftSpec::DoubleWell1d | DriftSpec::OuLinear1d => 1,
            DriftSpec::Fourier(m) => m.dim,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DriftSpec::Sine1d => "sine1d",
            DriftSpec::DoubleWell1d => "doublewell1d",
            DriftSpec::OuLinear1d => "ou_linear1d",
            DriftSpec::TrigSingleWell2d => "trig_singlewell2d",
            DriftSpec::TrigDoubleWell2d => "trig_doublewell2d",
            DriftSpec::PolyDoubleWell2d => "poly_doublewell2d",
            DriftSpec::MaierStein => "maier_stein",
            DriftSpec::Fourier(_) => "fourier",
        }
    }

    pub fn from_name(name: &str) -> Option<DriftSpec> {
        Some(match name {
            "sine1d" => DriftSpec::Sine1d,
            "doublewell1d" => DriftSpec::DoubleWell1d,
            "ou_linear1d" => DriftSpec::OuLinear1d,
            "trig_singlewell2d" => DriftSpec::TrigSingleWell2d,
            "trig_doublewell2d" => DriftSpec::TrigDoubleWell2d,
            "poly_doublewell2d" => DriftSpec::PolyDoubleWell2d,
            "maier_stein" => DriftSpec::MaierStein,
            _ => return None,
        })
    }

    /// Evaluate the field; `out.len()` must equal `self.dim()`.
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            DriftSpec::Sine1d => out[0] = x[0].sin(),
            DriftSpec::DoubleWell1d => out[0] = x[0] - x[0].powi(3),
            DriftSpec::OuLinear1d => out[0] = -x[0],
            DriftSpec::TrigSingleWell2d => {
                out[0] = x[1].sin();
                out[1] = -x[0].sin();
            }
            DriftSpec::TrigDoubleWell2d => {
                out[0] = x[1].sin();
                // V'(x) = ((sin x/2)^2 - 4) sin(x) / 10
                let u = (x[0] / 2.0).sin().powi(2);
                out[1] = -(u - 4.0) * x[0].sin() / 10.0;
            }
            DriftSpec::PolyDoubleWell2d => {
                out[0] = x[1];
                out[1] = 0.4 * x[0] * (4.0 - x[0] * x[0]) - x[0] / 4.0;
            }
            DriftSpec::MaierStein => {
                out[0] = x[0] - x[0].powi(3) - x[0] * x[1] * x[1];
                out[1] = -(1.0 + x[0] * x[0]) * x[1];
            }
            DriftSpec::Fourier(m) => {
                // Fourier models used for simulation carry the reality
                // constraint; evaluation failure means a misconfigured model.
                let v = m.evaluate_field(x).expect("real-valued Fourier drift");
                out.copy_from_slice(&v);
            }
        }
    }
}

/// Initial-condition specification for trajectory ensembles.
#[derive(Debug, Clone)]
pub enum InitCondition {
    /// Every trajectory starts at the same point.
    Point(Vec<f64>),
    /// First coordinate normal(mean, std), remaining coordinates zero.
    GaussianFirstCoord { mean: f64, std: f64, dim: usize },
    /// Trajectory k starts at point k (row-major) of an equispaced
    /// per_axis^d grid over [lo, hi]^d, cycling if k exceeds the grid.
    Grid {
        lo: Vec<f64>,
        hi: Vec<f64>,
        per_axis: usize,
    },
}

impl InitCondition {
    fn sample(&self, traj_index: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            InitCondition::Point(p) => p.clone(),
            InitCondition::GaussianFirstCoord { mean, std, dim } => {
                let mut x = vec![0.0; *dim];
                x[0] = mean + std * standard_normal(rng);
                x
            }
            InitCondition::Grid { lo, hi, per_axis } => {
                let d = lo.len();
                let total = per_axis.pow(d as u32);
                let mut k = traj_index % total;
                let mut x = vec![0.0; d];
                for ax in (0..d).rev() {
                    let i = k % per_axis;
                    k /= per_axis;
                    x[ax] = if *per_axis == 1 {
                        lo[ax]
                    } else {
                        lo[ax] + (hi[ax] - lo[ax]) * i as f64 / (*per_axis as f64 - 1.0)
                    };
                }
                x
            }
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// A single observed trajectory: `n_obs` states of dimension `dim`,
/// flattened row-major, at uniform spacing `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<f64>,
    pub dim: usize,
    pub dt: f64,
    pub valid: bool,
}

impl Trajectory {
    pub fn n_obs(&self) -> usize {
        self.states.len() / self.dim
    }

    #[inline]
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }
}

/// Where the data came from; persisted with the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub drift_name: String,
    pub alpha: f64,
    pub g: Vec<f64>,
    pub seed: u64,
    pub fine_step: f64,
    pub save_stride: usize,
    pub total_steps: usize,
}

impl Provenance {
    pub fn synthetic(drift_name: &str) -> Self {
        Provenance {
            drift_name: drift_name.to_string(),
            alpha: f64::NAN,
            g: Vec::new(),
            seed: 0,
            fine_step: f64::NAN,
            save_stride: 0,
            total_steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub dim: usize,
    pub dt: f64,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn n_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_valid(&self) -> usize {
        self.trajectories.iter().filter(|t| t.valid).count()
    }

    pub fn n_obs(&self) -> usize {
        self.trajectories.first().map(|t| t.n_obs()).unwrap_or(0)
    }
}

/// One Euler-Maruyama update x + f(x) h + diag(g) dL. A non-finite result
/// is returned as-is; the caller flags the trajectory.
pub fn euler_maruyama_step(
    x: &[f64],
    drift: &DriftSpec,
    g: &[f64],
    h: f64,
    noise: &[f64],
) -> Vec<f64> {
    let d = x.len();
    let mut f = vec![0.0; d];
    drift.eval(x, &mut f);
    let mut out = vec![0.0; d];
    for ax in 0..d {
        out[ax] = x[ax] + f[ax] * h + g[ax] * noise[ax];
    }
    out
}

/// Generate `n_t` trajectories of `floor(total_steps / save_stride) + 1`
/// observations at spacing `fine_step * save_stride`. Per-trajectory noise
/// streams are keyed by `(seed, trajectory index)`, so results do not
/// depend on generation order. Trajectories hitting a non-finite state are
/// truncated at the last finite observation and flagged invalid.
#[allow(clippy::too_many_arguments)]
pub fn generate_dataset(
    drift: &DriftSpec,
    g: &[f64],
    alpha: f64,
    init: &InitCondition,
    fine_step: f64,
    total_steps: usize,
    save_stride: usize,
    n_t: usize,
    seed: u64,
) -> Result<Dataset> {
    let d = drift.dim();
    if g.len() != d {
        return Err(Error::Config("diffusion vector dimension mismatch".into()));
    }
    if save_stride == 0 || n_t == 0 {
        return Err(Error::Config("save_stride and n_t must be >= 1".into()));
    }
    let n_saves = total_steps / save_stride + 1;
    let dt = fine_step * save_stride as f64;
    let mut trajectories = Vec::with_capacity(n_t);
    let mut f = vec![0.0; d];
    let mut noise = vec![0.0; d];
    for k in 0..n_t {
        let mut sampler = IncrementSampler::new(alpha, fine_step, seed, 1 + k as u64)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1u64);
        init_rng.set_stream(1 + k as u64);
        let mut x = init.sample(k, &mut init_rng);
        let mut states = Vec::with_capacity(n_saves * d);
        states.extend_from_slice(&x);
        let mut valid = true;
        'steps: for step in 1..=(n_saves - 1) * save_stride {
            drift.eval(&x, &mut f);
            sampler.fill(&mut noise);
            for ax in 0..d {
                x[ax] += f[ax] * fine_step + g[ax] * noise[ax];
            }
            if !x.iter().all(|v| v.is_finite()) {
                valid = false;
                break 'steps;
            }
            if step % save_stride == 0 {
                states.extend_from_slice(&x);
            }
        }
        trajectories.push(Trajectory {
            states,
            dim: d,
            dt,
            valid,
        });
    }
    Ok(Dataset {
        trajectories,
        dim: d,
        dt,
        provenance: Provenance {
            drift_name: drift.name().to_string(),
            alpha,
            g: g.to_vec(),
            seed,
            fine_step,
            save_stride,
            total_steps,
        },
    })
}

/// Keep only trajectories that are valid and whose every saved state lies
/// in [lo, hi] componentwise. Errors if nothing survives.
pub fn filter_box(ds: &Dataset, lo: &[f64], hi: &[f64]) -> Result<Dataset> {
    if lo.len() != ds.dim || hi.len() != ds.dim {
        return Err(Error::Config("box dimension mismatch".into()));
    }
    if lo.iter().zip(hi).any(|(a, b)| a >= b) {
        return Err(Error::Config("box must satisfy lo < hi".into()));
    }
    let kept: Vec<Trajectory> = ds
        .trajectories
        .iter()
        .filter(|t| {
            t.valid
                && (0..t.n_obs()).all(|i| {
                    t.state(i)
                        .iter()
                        .zip(lo.iter().zip(hi))
                        .all(|(x, (a, b))| x.is_finite() && *a <= *x && *x <= *b)
                })
        })
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::Empty(
            "no trajectories remain inside the retention box".into(),
        ));
    }
    Ok(Dataset {
        trajectories: kept,
        dim: ds.dim,
        dt: ds.dt,
        provenance: ds.provenance.clone(),
    })
}

const DATASET_MAGIC: &str = "# cfe dataset v1";

/// Plain-text dataset format: key=value header, then one CSV block per
/// trajectory introduced by a `trajectory` line. State values use the
/// shortest round-trip decimal representation, so persistence is lossless.
pub fn write_dataset_to<W: Write>(ds: &Dataset, w: &mut W) -> Result<()> {
    let p = &ds.provenance;
    writeln!(w, "{DATASET_MAGIC}")?;
    writeln!(w, "dim = {}", ds.dim)?;
    writeln!(w, "n_trajectories = {}", ds.n_trajectories())?;
    writeln!(w, "n_observations = {}", ds.n_obs())?;
    writeln!(w, "dt = {}", ds.dt)?;
    writeln!(w, "drift = {}", p.drift_name)?;
    writeln!(w, "alpha = {}", p.alpha)?;
    let gs: Vec<String> = p.g.iter().map(|v| v.to_string()).collect();
    writeln!(w, "g = {}", gs.join(","))?;
    writeln!(w, "seed = {}", p.seed)?;
    writeln!(w, "fine_step = {}", p.fine_step)?;
    writeln!(w, "save_stride = {}", p.save_stride)?;
    writeln!(w, "total_steps = {}", p.total_steps)?;
    for (k, t) in ds.trajectories.iter().enumerate() {
        writeln!(w, "trajectory {k} valid={} rows={}", t.valid, t.n_obs())?;
        let mut line = String::new();
        for i in 0..t.n_obs() {
            line.clear();
            for (ax, v) in t.state(i).iter().enumerate() {
                if ax > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{v}");
            }
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

pub fn write_dataset<P: AsRef<Path>>(ds: &Dataset, path: P) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_dataset_to(ds, &mut w)
}

pub fn read_dataset_from<R: Read>(r: R) -> Result<Dataset> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines().enumerate();
    let perr = |lineno: usize, message: String| Error::Parse {
        location: format!("line {}", lineno + 1),
        message,
    };

    let (n0, first) = lines
        .next()
        .ok_or_else(|| perr(0, "empty file".into()))
        .and_then(|(n, l)| Ok((n, l?)))?;
    if first.trim() != DATASET_MAGIC {
        return Err(perr(n0, format!("expected header `{DATASET_MAGIC}`")));
    }

    let mut header = std::collections::HashMap::new();
    let mut trajectories = Vec::new();
    let mut pending: Option<(bool, usize, Vec<f64>)> = None;
    let mut dim = 0usize;

    let finish =
        |pending: &mut Option<(bool, usize, Vec<f64>)>,
         trajectories: &mut Vec<Trajectory>,
         dim: usize,
         dt: f64,
         lineno: usize|
         -> Result<()> {
            if let Some((valid, rows, states)) = pending.take() {
                if states.len() != rows * dim {
                    return Err(perr(
                        lineno,
                        format!("trajectory has {} rows, expected {rows}", states.len() / dim),
                    ));
                }
                trajectories.push(Trajectory {
                    states,
                    dim,
                    dt,
                    valid,
                });
            }
            Ok(())
        };

    let mut dt = 0.0f64;
    for (lineno, line) in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix("trajectory ") {
            finish(&mut pending, &mut trajectories, dim, dt, lineno)?;
            if dim == 0 {
                dim = header
                    .get("dim")
                    .and_then(|v: &String| v.parse().ok())
                    .ok_or_else(|| perr(lineno, "missing or bad `dim` in header".into()))?;
                dt = header
                    .get("dt")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| perr(lineno, "missing or bad `dt` in header".into()))?;
            }
            let mut valid = true;
            let mut rows = 0usize;
            for tok in rest.split_whitespace().skip(1) {
                if let Some(v) = tok.strip_prefix("valid=") {
                    valid = v
                        .parse()
                        .map_err(|_| perr(lineno, format!("bad valid flag `{v}`")))?;
                } else if let Some(v) = tok.strip_prefix("rows=") {
                    rows = v
                        .parse()
                        .map_err(|_| perr(lineno, format!("bad rows `{v}`")))?;
                }
            }
            pending = Some((valid, rows, Vec::with_capacity(rows * dim)));
        } else if let Some((_, _, states)) = pending.as_mut() {
            let fields: Vec<&str> = t.split(',').collect();
            if fields.len() != dim {
                return Err(perr(
                    lineno,
                    format!("expected {dim} columns, got {}", fields.len()),
                ));
            }
            for f in fields {
                states.push(
                    f.trim()
                        .parse()
                        .map_err(|e| perr(lineno, format!("bad value `{f}`: {e}")))?,
                );
            }
        } else if let Some((k, v)) = t.split_once('=') {
            header.insert(k.trim().to_string(), v.trim().to_string());
        } else {
            return Err(perr(lineno, format!("unrecognized line `{t}`")));
        }
    }
    finish(&mut pending, &mut trajectories, dim, dt, usize::MAX - 1)?;

    if trajectories.is_empty() {
        return Err(Error::Empty("dataset contains no trajectories".into()));
    }
    let get = |k: &str| header.get(k).cloned().unwrap_or_default();
    let provenance = Provenance {
        drift_name: get("drift"),
        alpha: get("alpha").parse().unwrap_or(f64::NAN),
        g: get("g")
            .split(',')
            .filter_map(|v| v.trim().parse().ok())
            .collect(),
        seed: get("seed").parse().unwrap_or(0),
        fine_step: get("fine_step").parse().unwrap_or(f64::NAN),
        save_stride: get("save_stride").parse().unwrap_or(0),
        total_steps: get("total_steps").parse().unwrap_or(0),
    };
    Ok(Dataset {
        trajectories,
        dim,
        dt,
        provenance,
    })
}

pub fn read_dataset<P: AsRef<Path>>(path: P) -> Result<Dataset> {
    read_dataset_from(std::fs::File::open(path)?)
}

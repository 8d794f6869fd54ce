//! Grid scan for near-returns of the symmetric configuration.
//!
//! Every grid point `(vx, vy)` is integrated to `T0` while a proximity
//! observer samples `P(t) = |u(t) - u(0)|` densely inside each Taylor step.
//! Cells whose minimum over `1 < t <= T0` is a strict local minimum on the
//! grid and below the threshold become candidate triplets `(vx, vy, T)`.

use std::fmt;
use std::str::FromStr;

use rug::{Assign, Float};
use thiserror::Error;

use crate::dynamics::{initial_state, State, VelocityPair, DIM};
use crate::precision::{format_decimal, format_trimmed, make_context, Context, PrecisionConfig, Real};
use crate::sweep::map_ordered;
use crate::taylor::{integrate, IntegrationStatus, Observer, TaylorStep};

/// Significant digits written for `p_min` and `t_argmin` in cell files.
pub const CELL_DIGITS: usize = 20;

/// Default dense samples per Taylor step.
pub const DEFAULT_SAMPLES_PER_STEP: usize = 8;

/// Default candidate threshold on the return proximity.
pub const DEFAULT_THRESHOLD: &str = "0.7";

/// Proximity samples at or before this time are ignored.
const EXCLUDED_UNTIL: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScanError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("malformed line: {0}")]
    Malformed(String),
    #[error("incomplete grid: expected {expected} cells, got {got}")]
    Incomplete { expected: usize, got: usize },
}

/// Rectangular search window and uniform step, kept as the decimal strings
/// they were given in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub vx_lo: String,
    pub vx_hi: String,
    pub vy_lo: String,
    pub vy_hi: String,
    pub step: String,
}

fn grid_ctx() -> Context {
    make_context(64).expect("64 digits is valid")
}

impl GridSpec {
    pub fn new(
        vx_lo: &str,
        vx_hi: &str,
        vy_lo: &str,
        vy_hi: &str,
        step: &str,
    ) -> Result<Self, ScanError> {
        let spec = Self {
            vx_lo: vx_lo.trim().to_string(),
            vx_hi: vx_hi.trim().to_string(),
            vy_lo: vy_lo.trim().to_string(),
            vy_hi: vy_hi.trim().to_string(),
            step: step.trim().to_string(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `[0, 0.8]²` with step `1/2048`.
    pub fn full() -> Self {
        Self::new("0", "0.8", "0", "0.8", "0.00048828125").expect("valid")
    }

    fn parse_all(&self, ctx: &Context) -> Result<[Real; 5], ScanError> {
        let p = |s: &str| ctx.parse(s).map_err(|e| ScanError::InvalidGrid(e.to_string()));
        Ok([
            p(&self.vx_lo)?,
            p(&self.vx_hi)?,
            p(&self.vy_lo)?,
            p(&self.vy_hi)?,
            p(&self.step)?,
        ])
    }

    fn validate(&self) -> Result<(), ScanError> {
        let [xl, xh, yl, yh, step] = self.parse_all(&grid_ctx())?;
        if step <= 0 {
            return Err(ScanError::InvalidGrid("step must be positive".into()));
        }
        for (lo, hi) in [(&xl, &xh), (&yl, &yh)] {
            if !(*lo >= 0 && lo <= hi && *hi <= 1) {
                return Err(ScanError::InvalidGrid(format!(
                    "window [{lo}, {hi}] not inside [0,1]"
                )));
            }
        }
        Ok(())
    }

    /// Number of grid columns (vx) and rows (vy), endpoints included when
    /// they fall on the lattice.
    pub fn dims(&self) -> (usize, usize) {
        let ctx = grid_ctx();
        let [xl, xh, yl, yh, step] = self.parse_all(&ctx).expect("validated");
        let eps = ctx.pow10(-30);
        let count = |lo: &Real, hi: &Real| -> usize {
            let n = (Float::with_val(ctx.bits(), hi - lo) / &step + &eps).floor();
            n.to_f64() as usize + 1
        };
        (count(&xl, &xh), count(&yl, &yh))
    }

    pub fn cell_count(&self) -> usize {
        let (nx, ny) = self.dims();
        nx * ny
    }

    /// Grid point at row-major index `j * nx + i`.
    pub fn point(&self, index: usize, ctx: &Context) -> VelocityPair {
        let (nx, _) = self.dims();
        let (i, j) = (index % nx, index / nx);
        let [xl, _, yl, _, step] = self.parse_all(ctx).expect("validated");
        let vx = Float::with_val(ctx.bits(), &step * i as u64) + xl;
        let vy = Float::with_val(ctx.bits(), &step * j as u64) + yl;
        VelocityPair { vx, vy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScanOutcome {
    Ok,
    Collision,
    StepUnderflow,
}

impl ScanOutcome {
    pub fn code(self) -> &'static str {
        match self {
            ScanOutcome::Ok => "ok",
            ScanOutcome::Collision => "collision",
            ScanOutcome::StepUnderflow => "step_underflow",
        }
    }
}

impl fmt::Display for ScanOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ScanOutcome {
    type Err = ScanError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ok" => Ok(ScanOutcome::Ok),
            "collision" => Ok(ScanOutcome::Collision),
            "step_underflow" => Ok(ScanOutcome::StepUnderflow),
            other => Err(ScanError::Malformed(format!("unknown outcome '{other}'"))),
        }
    }
}

/// Result of scanning one grid point. Failed integrations carry
/// `p_min = +inf` and `t_argmin = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanCell {
    pub v: VelocityPair,
    pub p_min: Real,
    pub t_argmin: Real,
    pub outcome: ScanOutcome,
}

fn parse_field(text: &str, ctx: &Context) -> Result<Real, ScanError> {
    if text == "inf" {
        return Ok(ctx.infinity());
    }
    ctx.parse(text)
        .map_err(|e| ScanError::Malformed(format!("'{text}': {e}")))
}

impl ScanCell {
    /// `vx vy p_min t_argmin outcome`.
    pub fn to_line(&self, digits: usize) -> String {
        format!(
            "{} {} {} {} {}",
            format_trimmed(&self.v.vx, digits),
            format_trimmed(&self.v.vy, digits),
            format_decimal(&self.p_min, CELL_DIGITS),
            format_decimal(&self.t_argmin, CELL_DIGITS),
            self.outcome
        )
    }

    pub fn parse_line(line: &str, ctx: &Context) -> Result<Self, ScanError> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(ScanError::Malformed(format!(
                "expected 5 fields, got {}",
                fields.len()
            )));
        }
        Ok(Self {
            v: VelocityPair {
                vx: parse_field(fields[0], ctx)?,
                vy: parse_field(fields[1], ctx)?,
            },
            p_min: parse_field(fields[2], ctx)?,
            t_argmin: parse_field(fields[3], ctx)?,
            outcome: fields[4].parse()?,
        })
    }
}

/// A starting triplet for correction.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTriplet {
    pub vx: Real,
    pub vy: Real,
    pub t: Real,
    pub p_min: Real,
}

impl CandidateTriplet {
    /// `vx vy T p_min`.
    pub fn to_line(&self, digits: usize) -> String {
        format!(
            "{} {} {} {}",
            format_trimmed(&self.vx, digits),
            format_trimmed(&self.vy, digits),
            format_decimal(&self.t, CELL_DIGITS),
            format_decimal(&self.p_min, CELL_DIGITS),
        )
    }

    pub fn parse_line(line: &str, ctx: &Context) -> Result<Self, ScanError> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(ScanError::Malformed(format!(
                "expected 4 fields, got {}",
                fields.len()
            )));
        }
        Ok(Self {
            vx: parse_field(fields[0], ctx)?,
            vy: parse_field(fields[1], ctx)?,
            t: parse_field(fields[2], ctx)?,
            p_min: parse_field(fields[3], ctx)?,
        })
    }
}

/// Tracks the minimum of the squared proximity over `t > 1`.
struct ProximityObserver {
    reference: Vec<Real>,
    samples: usize,
    buf: Vec<Real>,
    tau: Real,
    t: Real,
    sq: Real,
    diff: Real,
    best: Option<(Real, Real)>,
}

impl ProximityObserver {
    fn new(reference: &State, samples: usize) -> Self {
        let prec = reference.precision();
        Self {
            reference: reference.u.clone(),
            samples: samples.max(1),
            buf: (0..DIM).map(|_| Float::new(prec)).collect(),
            tau: Float::new(prec),
            t: Float::new(prec),
            sq: Float::new(prec),
            diff: Float::new(prec),
            best: None,
        }
    }
}

impl Observer for ProximityObserver {
    fn observe(&mut self, step: &TaylorStep) {
        // q = 0 coincides with the previous step's endpoint (or t = 0).
        for q in 1..=self.samples {
            if q == self.samples {
                self.tau.assign(&step.h);
            } else {
                self.tau.assign(&step.h * q as u32);
                self.tau /= self.samples as u32;
            }
            self.t.assign(&step.t0 + &self.tau);
            if self.t <= EXCLUDED_UNTIL {
                continue;
            }
            step.eval_into(&self.tau, &mut self.buf);
            self.sq.assign(0);
            for (a, b) in self.buf.iter().zip(&self.reference) {
                self.diff.assign(a - b);
                self.sq += &self.diff * &self.diff;
            }
            let better = match &self.best {
                None => true,
                Some((best, _)) => self.sq < *best,
            };
            if better {
                self.best = Some((self.sq.clone(), self.t.clone()));
            }
        }
    }
}

/// Integrates `initial_state(v)` to `t0` and records the minimum return
/// proximity over `1 < t <= t0`, sampled at `samples_per_step` points per step.
pub fn scan_point(
    v: &VelocityPair,
    t0: &Real,
    cfg: &PrecisionConfig,
    samples_per_step: usize,
) -> ScanCell {
    let ctx = cfg.context();
    let start = initial_state(v, &ctx);
    let mut obs = ProximityObserver::new(&start, samples_per_step);
    let outcome = integrate(&start, t0, cfg, &mut [&mut obs]);
    let status = match outcome {
        Ok(o) => o.status,
        Err(_) => IntegrationStatus::StepUnderflow,
    };
    let v = VelocityPair {
        vx: ctx.convert(&v.vx),
        vy: ctx.convert(&v.vy),
    };
    match (status, obs.best) {
        (IntegrationStatus::ReachedEnd, Some((sq, t))) => ScanCell {
            v,
            p_min: sq.sqrt(),
            t_argmin: t,
            outcome: ScanOutcome::Ok,
        },
        (status, _) => ScanCell {
            v,
            p_min: ctx.infinity(),
            t_argmin: ctx.zero(),
            outcome: if status == IntegrationStatus::Collision {
                ScanOutcome::Collision
            } else {
                ScanOutcome::StepUnderflow
            },
        },
    }
}

/// Complete row-major grid of scanned cells (`index = j * nx + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrid {
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<ScanCell>,
}

impl ScanGrid {
    pub fn new(nx: usize, ny: usize, cells: Vec<ScanCell>) -> Result<Self, ScanError> {
        if cells.len() != nx * ny {
            return Err(ScanError::Incomplete {
                expected: nx * ny,
                got: cells.len(),
            });
        }
        Ok(Self { nx, ny, cells })
    }

    pub fn cell(&self, i: usize, j: usize) -> &ScanCell {
        &self.cells[j * self.nx + i]
    }
}

/// Scans the cells with the given row-major indices.
pub fn scan_indices(
    spec: &GridSpec,
    indices: &[usize],
    t0: &Real,
    cfg: &PrecisionConfig,
    samples_per_step: usize,
    workers: usize,
) -> Vec<ScanCell> {
    let ctx = cfg.context();
    map_ordered(indices, workers, |&idx| {
        scan_point(&spec.point(idx, &ctx), t0, cfg, samples_per_step)
    })
}

/// Scans every cell of the grid.
pub fn scan_grid(
    spec: &GridSpec,
    t0: &Real,
    cfg: &PrecisionConfig,
    samples_per_step: usize,
    workers: usize,
) -> ScanGrid {
    let (nx, ny) = spec.dims();
    let indices: Vec<usize> = (0..nx * ny).collect();
    let cells = scan_indices(spec, &indices, t0, cfg, samples_per_step, workers);
    ScanGrid { nx, ny, cells }
}

/// Strict local minima of `p_min` over the 8-neighbourhood that lie below
/// `threshold`; boundary cells compare against the neighbours they have.
pub fn find_candidates(grid: &ScanGrid, threshold: &Real) -> Vec<CandidateTriplet> {
    let mut out = Vec::new();
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let cell = grid.cell(i, j);
            if cell.outcome != ScanOutcome::Ok || cell.p_min >= *threshold {
                continue;
            }
            let mut is_min = true;
            'nb: for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= grid.nx as i64 || nj >= grid.ny as i64 {
                        continue;
                    }
                    if grid.cell(ni as usize, nj as usize).p_min <= cell.p_min {
                        is_min = false;
                        break 'nb;
                    }
                }
            }
            if is_min {
                out.push(CandidateTriplet {
                    vx: cell.v.vx.clone(),
                    vy: cell.v.vy.clone(),
                    t: cell.t_argmin.clone(),
                    p_min: cell.p_min.clone(),
                });
            }
        }
    }
    out
}

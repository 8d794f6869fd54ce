//! Shooting correction of triplets `(vx, vy, T)`.
//!
//! The residual is `F = u(T) - u(0)` and its 12×3 Jacobian comes from the
//! variational system. The damped corrector (`canm_correct`) widens the basin
//! of convergence; the classical refiner (`newton_refine`) takes full steps
//! once the iterate is close. `verify` repeats the refinement at another
//! precision and counts the digits both runs agree on.

use std::fmt;
use std::str::FromStr;

use rug::ops::Pow;
use rug::{Assign, Float};
use thiserror::Error;

use crate::dynamics::{initial_ext_state, rhs, State, DIM};
use crate::precision::{
    format_decimal, format_trimmed, log10_abs, Context, PrecisionConfig, Real,
};
use crate::scan::CandidateTriplet;
use crate::taylor::{integrate, IntegrationStatus};

/// Significant digits written for residual norms.
pub const NORM_DIGITS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrectError {
    #[error("period must be positive")]
    NonPositivePeriod,
    #[error("collision during integration")]
    Collision,
    #[error("integration step underflow")]
    StepUnderflow,
    #[error("degenerate jacobian (pivot {pivot:e} relative to scale)")]
    DegenerateJacobian { pivot: f64 },
    #[error("verification failed: {0}")]
    VerificationFailed(String),
    #[error("malformed line: {0}")]
    Malformed(String),
}

/// A point in the search space: initial velocity parameters and period.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub vx: Real,
    pub vy: Real,
    pub t: Real,
}

impl Triplet {
    pub fn new(vx: Real, vy: Real, t: Real) -> Self {
        Self { vx, vy, t }
    }

    /// The triplet rounded to the precision of `ctx`.
    pub fn at(&self, ctx: &Context) -> Self {
        Self {
            vx: ctx.convert(&self.vx),
            vy: ctx.convert(&self.vy),
            t: ctx.convert(&self.t),
        }
    }

    pub fn parse(vx: &str, vy: &str, t: &str, ctx: &Context) -> Result<Self, CorrectError> {
        let p = |s: &str| {
            ctx.parse(s)
                .map_err(|e| CorrectError::Malformed(format!("'{s}': {e}")))
        };
        Ok(Self::new(p(vx)?, p(vy)?, p(t)?))
    }
}

impl From<&CandidateTriplet> for Triplet {
    fn from(c: &CandidateTriplet) -> Self {
        Self::new(c.vx.clone(), c.vy.clone(), c.t.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub f: Vec<Real>,
    pub norm: Real,
}

impl Residual {
    pub fn from_components(f: Vec<Real>) -> Self {
        let norm = euclidean_norm(&f);
        Self { f, norm }
    }
}

/// Columns: `∂F/∂vx`, `∂F/∂vy`, `∂F/∂T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingJacobian {
    pub columns: [Vec<Real>; 3],
}

fn euclidean_norm(v: &[Real]) -> Real {
    let prec = v.first().map_or(64, |x| x.prec());
    let mut acc = Float::new(prec);
    for x in v {
        acc += x * x;
    }
    acc.sqrt()
}

/// Residual and shooting Jacobian at `triplet`, integrating the state
/// together with its sensitivities to `T`.
pub fn residual_and_jacobian(
    triplet: &Triplet,
    cfg: &PrecisionConfig,
) -> Result<(Residual, ShootingJacobian), CorrectError> {
    let ctx = cfg.context();
    let p = triplet.at(&ctx);
    if p.t <= 0 {
        return Err(CorrectError::NonPositivePeriod);
    }
    let start = initial_ext_state(&p.vx, &p.vy, &ctx);
    let out = integrate(&start, &p.t, cfg, &mut []).map_err(|_| CorrectError::StepUnderflow)?;
    match out.status {
        IntegrationStatus::ReachedEnd => {}
        IntegrationStatus::Collision => return Err(CorrectError::Collision),
        IntegrationStatus::StepUnderflow => return Err(CorrectError::StepUnderflow),
    }
    let end = out.final_state;
    let f: Vec<Real> = (0..DIM)
        .map(|i| Float::with_val(ctx.bits(), &end.w[i] - &start.w[i]))
        .collect();
    let col = |offset: usize| -> Vec<Real> {
        (0..DIM)
            .map(|i| Float::with_val(ctx.bits(), &end.w[offset + i] - &start.w[offset + i]))
            .collect()
    };
    let u_end = State {
        t: end.t.clone(),
        u: end.w[..DIM].to_vec(),
    };
    let ft = rhs(&u_end).map_err(|_| CorrectError::Collision)?;
    Ok((
        Residual::from_components(f),
        ShootingJacobian {
            columns: [col(DIM), col(2 * DIM), ft],
        },
    ))
}

/// Pivots below this power of ten times the largest diagonal entry of `JᵀJ`
/// count as rank deficiency.
fn pivot_floor_log10(digits: u32) -> i32 {
    (20 - digits as i32).min(-4)
}

/// Minimises `|JΔ + F|` through the normal equations `JᵀJ Δ = -JᵀF`.
pub fn least_squares_step(r: &Residual, j: &ShootingJacobian) -> Result<[Real; 3], CorrectError> {
    let prec = r.norm.prec();
    let mut a: Vec<Vec<Real>> = vec![vec![Float::new(prec); 3]; 3];
    let mut b: Vec<Real> = vec![Float::new(prec); 3];
    for p in 0..3 {
        for q in p..3 {
            let mut s = Float::new(prec);
            for (x, y) in j.columns[p].iter().zip(&j.columns[q]) {
                s += x * y;
            }
            a[q][p].assign(&s);
            a[p][q] = s;
        }
        for (x, f) in j.columns[p].iter().zip(&r.f) {
            b[p] -= x * f;
        }
    }
    let scale = (0..3)
        .map(|i| a[i][i].clone().abs())
        .fold(Float::new(prec), |m, x| if x > m { x } else { m });
    if scale.is_zero() {
        return Err(CorrectError::DegenerateJacobian { pivot: 0.0 });
    }
    let digits = ((f64::from(prec) - 8.0) / std::f64::consts::LOG2_10).floor() as u32;
    let floor = Float::with_val(prec, 10).pow(pivot_floor_log10(digits)) * &scale;

    // Symmetric elimination without pivoting; JᵀJ is positive semi-definite.
    for k in 0..3 {
        if a[k][k] <= floor {
            let rel = Float::with_val(53, &a[k][k] / &scale).to_f64();
            return Err(CorrectError::DegenerateJacobian { pivot: rel });
        }
        for i in k + 1..3 {
            let m = Float::with_val(prec, &a[i][k] / &a[k][k]);
            for c in k..3 {
                let t = Float::with_val(prec, &m * &a[k][c]);
                a[i][c] -= t;
            }
            let t = Float::with_val(prec, &m * &b[k]);
            b[i] -= t;
        }
    }
    let mut x: Vec<Real> = vec![Float::new(prec); 3];
    for k in (0..3).rev() {
        let mut s = b[k].clone();
        for c in k + 1..3 {
            s -= &a[k][c] * &x[c];
        }
        x[k] = s / &a[k][k];
    }
    let [x0, x1, x2]: [Real; 3] = x.try_into().expect("three unknowns");
    Ok([x0, x1, x2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorrectionStatus {
    Converged,
    Diverged,
    Collision,
    StepUnderflow,
}

impl CorrectionStatus {
    pub fn code(self) -> &'static str {
        match self {
            CorrectionStatus::Converged => "converged",
            CorrectionStatus::Diverged => "diverged",
            CorrectionStatus::Collision => "collision",
            CorrectionStatus::StepUnderflow => "step_underflow",
        }
    }
}

impl fmt::Display for CorrectionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for CorrectionStatus {
    type Err = CorrectError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "converged" => Ok(CorrectionStatus::Converged),
            "diverged" => Ok(CorrectionStatus::Diverged),
            "collision" => Ok(CorrectionStatus::Collision),
            "step_underflow" => Ok(CorrectionStatus::StepUnderflow),
            other => Err(CorrectError::Malformed(format!("unknown status '{other}'"))),
        }
    }
}

/// Why an iteration stopped without converging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    TauFloor,
    NormGrowth,
    StepUnderflow,
    DegenerateJacobian,
    Collision,
    NonPositivePeriod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionResult {
    pub status: CorrectionStatus,
    pub triplet: Triplet,
    pub final_norm: Real,
    pub iterations: usize,
    pub tau_history: Vec<f64>,
    /// Residual norm at every evaluated iterate, starting with the input.
    pub norm_history: Vec<Real>,
    pub stop_reason: Option<StopReason>,
}

impl CorrectionResult {
    pub fn converged(&self) -> bool {
        self.status == CorrectionStatus::Converged
    }

    /// `status vx vy T norm iterations`.
    pub fn to_line(&self, digits: usize) -> String {
        format!(
            "{} {} {} {} {} {}",
            self.status,
            format_trimmed(&self.triplet.vx, digits),
            format_trimmed(&self.triplet.vy, digits),
            format_trimmed(&self.triplet.t, digits),
            format_decimal(&self.final_norm, NORM_DIGITS),
            self.iterations
        )
    }
}

/// Parsed `status vx vy T norm iterations` record.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultLine {
    pub status: CorrectionStatus,
    pub triplet: Triplet,
    pub norm: Real,
    pub iterations: usize,
}

impl ResultLine {
    pub fn parse(line: &str, ctx: &Context) -> Result<Self, CorrectError> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 6 {
            return Err(CorrectError::Malformed(format!(
                "expected 6 fields, got {}",
                f.len()
            )));
        }
        let norm = if f[4] == "inf" {
            ctx.infinity()
        } else {
            ctx.parse(f[4])
                .map_err(|e| CorrectError::Malformed(e.to_string()))?
        };
        Ok(Self {
            status: f[0].parse()?,
            triplet: Triplet::parse(f[1], f[2], f[3], ctx)?,
            norm,
            iterations: f[5]
                .parse()
                .map_err(|_| CorrectError::Malformed(format!("bad iteration count '{}'", f[5])))?,
        })
    }
}

/// Controls of the damped corrector.
#[derive(Debug, Clone, PartialEq)]
pub struct CanmOptions {
    pub tau0: f64,
    pub tau_min: f64,
    pub max_iter: usize,
    /// Consecutive residual increases tolerated before giving up.
    pub growth_limit: usize,
}

impl Default for CanmOptions {
    fn default() -> Self {
        Self {
            tau0: 0.1,
            tau_min: 1e-6,
            max_iter: 100,
            growth_limit: 5,
        }
    }
}

/// Controls of the classical refiner.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineOptions {
    /// Defaults to the config's convergence tolerance.
    pub target_norm: Option<Real>,
    pub max_iter: usize,
    pub growth_limit: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            target_norm: None,
            max_iter: 50,
            growth_limit: 2,
        }
    }
}

fn failure(err: &CorrectError) -> (CorrectionStatus, StopReason) {
    match err {
        CorrectError::Collision => (CorrectionStatus::Collision, StopReason::Collision),
        CorrectError::DegenerateJacobian { .. } => {
            (CorrectionStatus::Diverged, StopReason::DegenerateJacobian)
        }
        CorrectError::NonPositivePeriod => {
            (CorrectionStatus::Diverged, StopReason::NonPositivePeriod)
        }
        _ => (CorrectionStatus::StepUnderflow, StopReason::StepUnderflow),
    }
}

/// Shared Newton loop: `tau_rule` maps `(previous tau, previous norm, new
/// norm)` to the next damping factor.
fn newton_loop(
    start: &Triplet,
    cfg: &PrecisionConfig,
    target: &Real,
    max_iter: usize,
    growth_limit: usize,
    tau0: f64,
    tau_min: f64,
    tau_rule: impl Fn(f64, &Real, &Real) -> f64,
) -> CorrectionResult {
    let ctx = cfg.context();
    let mut x = start.at(&ctx);
    let mut tau = tau0;
    let mut taus = Vec::new();
    let mut norms: Vec<Real> = Vec::new();
    let mut growth = 0;
    let mut iterations = 0;

    let finish = |status, x: Triplet, norms: Vec<Real>, taus, iterations, reason| {
        let final_norm = norms.last().cloned().unwrap_or_else(|| ctx.infinity());
        CorrectionResult {
            status,
            triplet: x,
            final_norm,
            iterations,
            tau_history: taus,
            norm_history: norms,
            stop_reason: reason,
        }
    };

    loop {
        let (r, j) = match residual_and_jacobian(&x, cfg) {
            Ok(v) => v,
            Err(e) => {
                let (status, reason) = failure(&e);
                return finish(status, x, norms, taus, iterations, Some(reason));
            }
        };
        if let Some(prev) = norms.last() {
            if r.norm > *prev {
                growth += 1;
            } else {
                growth = 0;
            }
            tau = tau_rule(tau, prev, &r.norm);
        }
        norms.push(r.norm.clone());
        if r.norm < *target {
            return finish(CorrectionStatus::Converged, x, norms, taus, iterations, None);
        }
        if growth >= growth_limit {
            return finish(
                CorrectionStatus::Diverged,
                x,
                norms,
                taus,
                iterations,
                Some(StopReason::NormGrowth),
            );
        }
        if iterations >= max_iter {
            return finish(
                CorrectionStatus::Diverged,
                x,
                norms,
                taus,
                iterations,
                Some(StopReason::MaxIterations),
            );
        }
        if tau < tau_min || !tau.is_finite() {
            return finish(
                CorrectionStatus::Diverged,
                x,
                norms,
                taus,
                iterations,
                Some(StopReason::TauFloor),
            );
        }
        let delta = match least_squares_step(&r, &j) {
            Ok(d) => d,
            Err(e) => {
                let (status, reason) = failure(&e);
                return finish(status, x, norms, taus, iterations, Some(reason));
            }
        };
        let t = ctx.real(tau);
        x.vx += Float::with_val(ctx.bits(), &delta[0] * &t);
        x.vy += Float::with_val(ctx.bits(), &delta[1] * &t);
        x.t += Float::with_val(ctx.bits(), &delta[2] * &t);
        taus.push(tau);
        iterations += 1;
        if x.t <= 0 {
            norms.push(ctx.infinity());
            return finish(
                CorrectionStatus::Diverged,
                x,
                norms,
                taus,
                iterations,
                Some(StopReason::NonPositivePeriod),
            );
        }
    }
}

/// Damped Newton iteration `v ← v + τΔ` with `τ_k = min(1, τ_{k-1} |F_{k-1}| / |F_k|)`.
pub fn canm_correct(c: &Triplet, cfg: &PrecisionConfig, opts: &CanmOptions) -> CorrectionResult {
    let target = cfg.tolerance();
    newton_loop(
        c,
        cfg,
        &target,
        opts.max_iter,
        opts.growth_limit,
        opts.tau0,
        opts.tau_min,
        |tau, prev, cur| {
            if cur.is_zero() {
                return 1.0;
            }
            let ratio = (log10_abs(prev) - log10_abs(cur)).clamp(-300.0, 300.0);
            (tau * 10f64.powf(ratio)).min(1.0)
        },
    )
}

/// Undamped Newton iteration until the residual drops below the target.
pub fn newton_refine(t: &Triplet, cfg: &PrecisionConfig, opts: &RefineOptions) -> CorrectionResult {
    let target = opts.target_norm.clone().unwrap_or_else(|| cfg.tolerance());
    newton_loop(
        t,
        cfg,
        &target,
        opts.max_iter,
        opts.growth_limit,
        1.0,
        0.0,
        |_, _, _| 1.0,
    )
}

/// Outcome of a two-precision verification.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub agreed_digits: u32,
    /// The refinement under the second configuration.
    pub check: CorrectionResult,
}

/// `floor(-log10 |a - b| / |b|)`, capped; zero reference values compare
/// absolutely.
pub fn agreed_digits_between(a: &Real, b: &Real, cap: u32) -> u32 {
    let prec = a.prec().max(b.prec());
    let diff = Float::with_val(prec, a - b).abs();
    if diff.is_zero() {
        return cap;
    }
    let rel = if b.is_zero() {
        diff
    } else {
        diff / Float::with_val(prec, b.abs_ref())
    };
    let l = -log10_abs(&rel);
    if l <= 0.0 {
        0
    } else {
        (l.floor() as u32).min(cap)
    }
}

/// Refines `t` again under `cfg_b` and counts the decimal digits on which
/// `vx`, `vy` and `T` agree with the input.
pub fn verify(
    t: &Triplet,
    cfg_a: &PrecisionConfig,
    cfg_b: &PrecisionConfig,
) -> Result<Verification, CorrectError> {
    let check = newton_refine(t, cfg_b, &RefineOptions::default());
    if !check.converged() {
        return Err(CorrectError::VerificationFailed(format!(
            "refinement under {} digits ended {}",
            cfg_b.decimal_digits, check.status
        )));
    }
    let a = t.at(&cfg_a.context());
    let cap = cfg_a.decimal_digits.min(cfg_b.decimal_digits);
    let agreed = [
        (&a.vx, &check.triplet.vx),
        (&a.vy, &check.triplet.vy),
        (&a.t, &check.triplet.t),
    ]
    .into_iter()
    .map(|(x, y)| agreed_digits_between(x, y, cap))
    .min()
    .unwrap_or(0);
    Ok(Verification {
        agreed_digits: agreed,
        check,
    })
}

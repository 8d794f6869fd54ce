//! High-order Taylor-series integrator in arbitrary precision.
//!
//! Coefficients come from automatic-differentiation recurrences on auxiliary
//! series. For every pair `i < j`:
//!
//! ```text
//! d   = r_j - r_i                      (linear in the coordinates)
//! s   = |d|^2                          (Cauchy products)
//! g   = s^(-3/2)                       n s_0 g_n = Σ_{k=1..n} ((p+1)k - n) s_k g_{n-k}
//! f   = d g                            (pair force, added to a_i, subtracted from a_j)
//! ```
//!
//! and positions/velocities follow from `c_{n+1} = d_n / (n+1)`. The
//! variational system additionally carries `q = s^(-5/2)` and, per
//! parameter, `δs = 2 d·δd`, `δg = -3/2 q δs`, `δf = δd g + d δg`.
//!
//! Step sizes are chosen from the last two coefficient norms of the base 12
//! components; the final step is shortened to land exactly on the end time.

use rug::{Assign, Float};
use thiserror::Error;

use crate::dynamics::{
    vx_index, vy_index, x_index, y_index, ExtState, State, DIM, EXT_DIM, PAIRS,
};
use crate::precision::{log10_abs, Context, PrecisionConfig, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaylorError {
    /// Bodies (one-based) closer than the collision distance.
    #[error("collision between bodies {} and {} (distance {distance:e})", .pair.0, .pair.1)]
    Collision { pair: (usize, usize), distance: f64 },
    #[error("step size {0:e} below the minimum")]
    StepUnderflow(f64),
    #[error("dense-output time outside [0, h]")]
    OutOfRange,
    #[error("integration end time precedes start time")]
    InvalidInterval,
    #[error("taylor order {0} too small")]
    OrderTooSmall(usize),
}

/// A point the integrator can advance: the 12-component state or the
/// 36-component state with sensitivities.
pub trait Phase: Clone {
    const DIM: usize;
    fn time(&self) -> &Real;
    fn components(&self) -> &[Real];
    fn from_parts(t: Real, components: Vec<Real>) -> Self;
}

impl Phase for State {
    const DIM: usize = DIM;
    fn time(&self) -> &Real {
        &self.t
    }
    fn components(&self) -> &[Real] {
        &self.u
    }
    fn from_parts(t: Real, u: Vec<Real>) -> Self {
        State { t, u }
    }
}

impl Phase for ExtState {
    const DIM: usize = EXT_DIM;
    fn time(&self) -> &Real {
        &self.t
    }
    fn components(&self) -> &[Real] {
        &self.w
    }
    fn from_parts(t: Real, w: Vec<Real>) -> Self {
        ExtState { t, w }
    }
}

/// Taylor expansion of every component around `t0`, valid on `[0, h]`.
#[derive(Debug, Clone)]
pub struct TaylorStep {
    pub t0: Real,
    pub h: Real,
    /// `coeffs[component][k]`, `k = 0..=order`.
    pub coeffs: Vec<Vec<Real>>,
}

impl TaylorStep {
    fn new(dim: usize, order: usize, prec: u32) -> Self {
        Self {
            t0: Float::new(prec),
            h: Float::new(prec),
            coeffs: (0..dim)
                .map(|_| (0..=order).map(|_| Float::new(prec)).collect())
                .collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs[0].len() - 1
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn precision(&self) -> u32 {
        self.t0.prec()
    }

    pub fn end_time(&self) -> Real {
        Float::with_val(self.precision(), &self.t0 + &self.h)
    }

    /// Horner evaluation of one component at `tau` (no range check).
    pub fn eval_component(&self, component: usize, tau: &Real) -> Real {
        let c = &self.coeffs[component];
        let mut acc = c[c.len() - 1].clone();
        for k in (0..c.len() - 1).rev() {
            acc.mul_add_mut(tau, &c[k]);
        }
        acc
    }

    /// Evaluates components `0..out.len()` at `tau` into `out`.
    pub fn eval_into(&self, tau: &Real, out: &mut [Real]) {
        for (i, slot) in out.iter_mut().enumerate() {
            let c = &self.coeffs[i];
            slot.assign(&c[c.len() - 1]);
            for k in (0..c.len() - 1).rev() {
                slot.mul_add_mut(tau, &c[k]);
            }
        }
    }

    fn check_range(&self, tau: &Real) -> Result<(), TaylorError> {
        if *tau < 0 || *tau > self.h {
            Err(TaylorError::OutOfRange)
        } else {
            Ok(())
        }
    }

    /// All components at `t0 + tau`.
    pub fn dense_eval_all(&self, tau: &Real) -> Result<Vec<Real>, TaylorError> {
        self.check_range(tau)?;
        let mut out: Vec<Real> = (0..self.dim()).map(|_| Float::new(self.precision())).collect();
        self.eval_into(tau, &mut out);
        Ok(out)
    }
}

/// Base state at `t0 + tau` from a step of either system.
pub fn dense_eval(step: &TaylorStep, tau: &Real) -> Result<State, TaylorError> {
    step.check_range(tau)?;
    let prec = step.precision();
    let mut u: Vec<Real> = (0..DIM).map(|_| Float::new(prec)).collect();
    step.eval_into(tau, &mut u);
    Ok(State {
        t: Float::with_val(prec, &step.t0 + tau),
        u,
    })
}

struct SensSeries {
    ddx: Vec<Real>,
    ddy: Vec<Real>,
    ds: Vec<Real>,
    dg: Vec<Real>,
    dfx: Vec<Real>,
    dfy: Vec<Real>,
}

pub(crate) struct PairSeries {
    dx: Vec<Real>,
    dy: Vec<Real>,
    pub(crate) s: Vec<Real>,
    /// `k * s_k`, shared by both power recurrences.
    ks: Vec<Real>,
    pub(crate) g: Vec<Real>,
    q: Vec<Real>,
    fx: Vec<Real>,
    fy: Vec<Real>,
    sens: Vec<SensSeries>,
}

fn series(order: usize, prec: u32) -> Vec<Real> {
    (0..=order).map(|_| Float::new(prec)).collect()
}

impl PairSeries {
    fn new(order: usize, prec: u32, extended: bool) -> Self {
        let sens = if extended {
            (0..2)
                .map(|_| SensSeries {
                    ddx: series(order, prec),
                    ddy: series(order, prec),
                    ds: series(order, prec),
                    dg: series(order, prec),
                    dfx: series(order, prec),
                    dfy: series(order, prec),
                })
                .collect()
        } else {
            Vec::new()
        };
        Self {
            dx: series(order, prec),
            dy: series(order, prec),
            s: series(order, prec),
            ks: series(order, prec),
            g: series(order, prec),
            q: if extended { series(order, prec) } else { Vec::new() },
            fx: series(order, prec),
            fy: series(order, prec),
            sens,
        }
    }
}

/// Multiply-accumulate. MPFR's fused form wins only at wide mantissas.
#[inline]
fn mac(acc: &mut Real, tmp: &mut Real, a: &Real, b: &Real, fused: bool) {
    if fused {
        *acc += a * b;
    } else {
        tmp.assign(a * b);
        *acc += &*tmp;
    }
}

const FUSED_MIN_BITS: u32 = 320;

#[inline]
fn cauchy(acc: &mut Real, tmp: &mut Real, a: &[Real], b: &[Real], n: usize, fused: bool) {
    acc.assign(0);
    for k in 0..=n {
        mac(acc, tmp, &a[k], &b[n - k], fused);
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn cauchy_sum(
    acc: &mut Real,
    tmp: &mut Real,
    a1: &[Real],
    b1: &[Real],
    a2: &[Real],
    b2: &[Real],
    n: usize,
    fused: bool,
) {
    acc.assign(0);
    for k in 0..=n {
        mac(acc, tmp, &a1[k], &b1[n - k], fused);
        mac(acc, tmp, &a2[k], &b2[n - k], fused);
    }
}

/// Reusable scratch space for coefficient generation.
pub(crate) struct Workspace {
    order: usize,
    extended: bool,
    pub(crate) pairs: Vec<PairSeries>,
    acc: Real,
    acc2: Real,
    tmp: Real,
    fused: bool,
    inv_s0: Vec<Real>,
    accel: Vec<Real>,
    pub(crate) min_distance: f64,
}

impl Workspace {
    pub(crate) fn new(dim: usize, order: usize, prec: u32) -> Self {
        let extended = dim == EXT_DIM;
        Self {
            order,
            extended,
            pairs: (0..3).map(|_| PairSeries::new(order, prec, extended)).collect(),
            acc: Float::new(prec),
            acc2: Float::new(prec),
            tmp: Float::new(prec),
            fused: prec > FUSED_MIN_BITS,
            inv_s0: (0..3).map(|_| Float::new(prec)).collect(),
            accel: (0..if extended { 18 } else { 6 }).map(|_| Float::new(prec)).collect(),
            min_distance: f64::INFINITY,
        }
    }

    /// Fills `step.coeffs[..][1..=order]` from the zeroth coefficients.
    pub(crate) fn compute(
        &mut self,
        step: &mut TaylorStep,
        collision_distance: f64,
    ) -> Result<(), TaylorError> {
        let order = self.order;
        let fused = self.fused;
        let c = &mut step.coeffs;
        for n in 0..order {
            for (p, &(i, j)) in PAIRS.iter().enumerate() {
                let ps = &mut self.pairs[p];
                ps.dx[n].assign(&c[x_index(j)][n] - &c[x_index(i)][n]);
                ps.dy[n].assign(&c[y_index(j)][n] - &c[y_index(i)][n]);

                // s_n, exploiting the symmetry of the self-products.
                let (acc, tmp) = (&mut self.acc, &mut self.tmp);
                acc.assign(0);
                for k in 0..n.div_ceil(2) {
                    mac(acc, tmp, &ps.dx[k], &ps.dx[n - k], fused);
                    mac(acc, tmp, &ps.dy[k], &ps.dy[n - k], fused);
                }
                *acc *= 2u32;
                if n % 2 == 0 {
                    let m = n / 2;
                    mac(acc, tmp, &ps.dx[m], &ps.dx[m], fused);
                    mac(acc, tmp, &ps.dy[m], &ps.dy[m], fused);
                }
                ps.s[n].assign(&*acc);
                ps.ks[n].assign(&ps.s[n] * n as u32);

                if n == 0 {
                    if ps.s[0].is_zero() {
                        return Err(TaylorError::Collision {
                            pair: (i + 1, j + 1),
                            distance: 0.0,
                        });
                    }
                    let dist = Float::with_val(ps.s[0].prec(), ps.s[0].sqrt_ref());
                    let d = dist.to_f64();
                    self.min_distance = self.min_distance.min(d);
                    if d < collision_distance {
                        return Err(TaylorError::Collision {
                            pair: (i + 1, j + 1),
                            distance: d,
                        });
                    }
                    self.inv_s0[p].assign(ps.s[0].recip_ref());
                    // g_0 = s_0^(-3/2) = 1 / (s_0 sqrt(s_0))
                    ps.g[0].assign(&ps.s[0] * &dist);
                    ps.g[0].recip_mut();
                    if self.extended {
                        ps.q[0].assign(&ps.g[0] * &self.inv_s0[p]);
                    }
                } else {
                    // n s_0 g_n = -Σ_{k=1..n} (k + 2n)/2 s_k g_{n-k}
                    let (a1, a2, tmp) = (&mut self.acc, &mut self.acc2, &mut self.tmp);
                    a1.assign(0);
                    a2.assign(0);
                    for k in 1..=n {
                        mac(a1, tmp, &ps.ks[k], &ps.g[n - k], fused);
                        mac(a2, tmp, &ps.s[k], &ps.g[n - k], fused);
                    }
                    *a2 *= 2 * n as u32;
                    *a1 += &*a2;
                    *a1 *= &self.inv_s0[p];
                    *a1 /= 2 * n as u32;
                    ps.g[n].assign(-&*a1);
                    if self.extended {
                        // p = -5/2: coefficient -(3k + 2n)/2
                        a1.assign(0);
                        a2.assign(0);
                        for k in 1..=n {
                            mac(a1, tmp, &ps.ks[k], &ps.q[n - k], fused);
                            mac(a2, tmp, &ps.s[k], &ps.q[n - k], fused);
                        }
                        *a1 *= 3u32;
                        *a2 *= 2 * n as u32;
                        *a1 += &*a2;
                        *a1 *= &self.inv_s0[p];
                        *a1 /= 2 * n as u32;
                        ps.q[n].assign(-&*a1);
                    }
                }

                cauchy(&mut self.acc, &mut self.tmp, &ps.dx, &ps.g, n, fused);
                ps.fx[n].assign(&self.acc);
                cauchy(&mut self.acc, &mut self.tmp, &ps.dy, &ps.g, n, fused);
                ps.fy[n].assign(&self.acc);

                if self.extended {
                    for (b, ss) in ps.sens.iter_mut().enumerate() {
                        let off = DIM * (b + 1);
                        ss.ddx[n].assign(&c[off + x_index(j)][n] - &c[off + x_index(i)][n]);
                        ss.ddy[n].assign(&c[off + y_index(j)][n] - &c[off + y_index(i)][n]);
                        cauchy_sum(&mut self.acc, &mut self.tmp, &ps.dx, &ss.ddx, &ps.dy, &ss.ddy, n, fused);
                        self.acc *= 2u32;
                        ss.ds[n].assign(&self.acc);
                        cauchy(&mut self.acc, &mut self.tmp, &ps.q, &ss.ds, n, fused);
                        self.acc *= -1.5f64;
                        ss.dg[n].assign(&self.acc);
                        cauchy_sum(&mut self.acc, &mut self.tmp, &ss.ddx, &ps.g, &ps.dx, &ss.dg, n, fused);
                        ss.dfx[n].assign(&self.acc);
                        cauchy_sum(&mut self.acc, &mut self.tmp, &ss.ddy, &ps.g, &ps.dy, &ss.dg, n, fused);
                        ss.dfy[n].assign(&self.acc);
                    }
                }
            }

            // Accelerations at order n: a_i += f_ij, a_j -= f_ij.
            for a in self.accel.iter_mut() {
                a.assign(0);
            }
            for (p, &(i, j)) in PAIRS.iter().enumerate() {
                let ps = &self.pairs[p];
                self.accel[2 * i] += &ps.fx[n];
                self.accel[2 * i + 1] += &ps.fy[n];
                self.accel[2 * j] -= &ps.fx[n];
                self.accel[2 * j + 1] -= &ps.fy[n];
                for (b, ss) in ps.sens.iter().enumerate() {
                    let o = 6 * (b + 1);
                    self.accel[o + 2 * i] += &ss.dfx[n];
                    self.accel[o + 2 * i + 1] += &ss.dfy[n];
                    self.accel[o + 2 * j] -= &ss.dfx[n];
                    self.accel[o + 2 * j + 1] -= &ss.dfy[n];
                }
            }

            let div = (n + 1) as u32;
            let blocks = if self.extended { 3 } else { 1 };
            for blk in 0..blocks {
                let off = DIM * blk;
                for body in 0..3 {
                    for (pos, vel, acc) in [
                        (x_index(body), vx_index(body), 2 * body),
                        (y_index(body), vy_index(body), 2 * body + 1),
                    ] {
                        let (lo, hi) = c.split_at_mut(off + vel);
                        lo[off + pos][n + 1].assign(&hi[0][n] / div);
                        hi[0][n + 1].assign(&self.accel[6 * blk + acc] / div);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Taylor coefficients through `order` around the given point; `h` is left
/// at zero. Only exact coincidence counts as a collision here.
pub fn taylor_coeffs<P: Phase>(
    point: &P,
    order: usize,
    ctx: &Context,
) -> Result<TaylorStep, TaylorError> {
    if order < 2 {
        return Err(TaylorError::OrderTooSmall(order));
    }
    let mut step = TaylorStep::new(P::DIM, order, ctx.bits());
    step.t0.assign(point.time());
    for (c, v) in step.coeffs.iter_mut().zip(point.components()) {
        c[0].assign(v);
    }
    let mut ws = Workspace::new(P::DIM, order, ctx.bits());
    ws.compute(&mut step, 0.0)?;
    Ok(step)
}

fn max_log10_norm(step: &TaylorStep, k: usize) -> f64 {
    step.coeffs
        .iter()
        .take(DIM)
        .map(|c| log10_abs(&c[k]))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Step length from the last two coefficient norms of the base components:
/// `safety * min((tol/|c_{N-1}|)^(1/(N-1)), (tol/|c_N|)^(1/N))`, clamped to
/// `h_max`. Works in log space so coefficient magnitudes far outside the
/// f64 range are handled.
pub fn step_size(step: &TaylorStep, cfg: &PrecisionConfig) -> Result<f64, TaylorError> {
    let n = step.order();
    let log_tol = cfg.step_tolerance_log10();
    let candidate = |k: usize| {
        let norm = max_log10_norm(step, k);
        if norm == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            (log_tol - norm) / k as f64
        }
    };
    let log_h = candidate(n - 1).min(candidate(n));
    if log_h == f64::INFINITY {
        return Ok(cfg.h_max);
    }
    let h = cfg.step_safety * 10f64.powf(log_h);
    if h >= cfg.h_max {
        Ok(cfg.h_max)
    } else if h < cfg.h_min || !h.is_finite() {
        Err(TaylorError::StepUnderflow(h))
    } else {
        Ok(h)
    }
}

/// Receives every accepted step, in time order.
pub trait Observer {
    fn observe(&mut self, step: &TaylorStep);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntegrationStatus {
    ReachedEnd,
    Collision,
    StepUnderflow,
}

impl IntegrationStatus {
    pub fn code(self) -> &'static str {
        match self {
            IntegrationStatus::ReachedEnd => "ok",
            IntegrationStatus::Collision => "collision",
            IntegrationStatus::StepUnderflow => "step_underflow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationStats {
    pub steps: usize,
    pub min_distance: f64,
}

#[derive(Debug, Clone)]
pub struct IntegrationOutcome<P> {
    pub status: IntegrationStatus,
    /// The end point, or the last accepted point when aborted.
    pub final_state: P,
    pub stats: IntegrationStats,
}

/// Advances `start` to exactly `t_end`.
///
/// Collisions and step underflow are reported in the outcome status; the
/// only error is an end time before the start time.
pub fn integrate<P: Phase>(
    start: &P,
    t_end: &Real,
    cfg: &PrecisionConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<IntegrationOutcome<P>, TaylorError> {
    let ctx = cfg.context();
    let prec = ctx.bits();
    let t_end = ctx.convert(t_end);
    if t_end < *start.time() {
        return Err(TaylorError::InvalidInterval);
    }
    let order = cfg.taylor_order;
    if order < 2 {
        return Err(TaylorError::OrderTooSmall(order));
    }
    let mut t = ctx.convert(start.time());
    let mut comps: Vec<Real> = start.components().iter().map(|v| ctx.convert(v)).collect();
    let mut ws = Workspace::new(P::DIM, order, prec);
    let mut step = TaylorStep::new(P::DIM, order, prec);
    let mut steps = 0;
    let mut status = IntegrationStatus::ReachedEnd;
    let mut remaining = Float::new(prec);

    while t < t_end {
        step.t0.assign(&t);
        for (c, v) in step.coeffs.iter_mut().zip(&comps) {
            c[0].assign(v);
        }
        if ws.compute(&mut step, cfg.collision_distance).is_err() {
            status = IntegrationStatus::Collision;
            break;
        }
        let h = match step_size(&step, cfg) {
            Ok(h) => h,
            Err(_) => {
                status = IntegrationStatus::StepUnderflow;
                break;
            }
        };
        remaining.assign(&t_end - &t);
        let last = remaining <= h;
        if last {
            step.h.assign(&remaining);
        } else {
            step.h.assign(h);
        }
        for obs in observers.iter_mut() {
            obs.observe(&step);
        }
        step.eval_into(&step.h, &mut comps);
        if last {
            t.assign(&t_end);
        } else {
            t += &step.h;
        }
        steps += 1;
    }

    Ok(IntegrationOutcome {
        status,
        final_state: P::from_parts(t, comps),
        stats: IntegrationStats {
            steps,
            min_distance: ws.min_distance,
        },
    })
}

//! Phase space of the equal-mass planar three-body problem.
//!
//! Components are always laid out as `(x, y, vx, vy)` per body, bodies 1..3,
//! giving the 12-vector `u`. The extended 36-vector appends the sensitivities
//! `∂u/∂vx` and `∂u/∂vy` in the same layout. Masses and the gravitational
//! constant are 1.

use rug::Float;
use thiserror::Error;

use crate::precision::{Context, Real};

/// Dimension of the base phase space.
pub const DIM: usize = 12;
/// Dimension of the state plus its two parameter sensitivities.
pub const EXT_DIM: usize = 36;
/// Body pairs `(i, j)` with `i < j`, zero-based.
pub const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

#[inline]
pub const fn x_index(body: usize) -> usize {
    4 * body
}
#[inline]
pub const fn y_index(body: usize) -> usize {
    4 * body + 1
}
#[inline]
pub const fn vx_index(body: usize) -> usize {
    4 * body + 2
}
#[inline]
pub const fn vy_index(body: usize) -> usize {
    4 * body + 3
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DynamicsError {
    /// Bodies `pair.0` and `pair.1` (one-based) coincide.
    #[error("collision between bodies {} and {}", .pair.0, .pair.1)]
    Collision { pair: (usize, usize) },
    #[error("expected {expected} components, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("velocity parameter {0} outside [0,1]")]
    VelocityOutOfRange(String),
}

/// Time plus the 12 phase-space components.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: Real,
    pub u: Vec<Real>,
}

/// Time plus state and sensitivity components (36 reals).
#[derive(Debug, Clone, PartialEq)]
pub struct ExtState {
    pub t: Real,
    pub w: Vec<Real>,
}

/// The two free parameters of the symmetric initial configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityPair {
    pub vx: Real,
    pub vy: Real,
}

impl VelocityPair {
    pub fn new(vx: Real, vy: Real) -> Result<Self, DynamicsError> {
        for v in [&vx, &vy] {
            if !(*v >= 0 && *v <= 1) {
                return Err(DynamicsError::VelocityOutOfRange(v.to_string()));
            }
        }
        Ok(Self { vx, vy })
    }
}

fn check_collision(u: &[Real]) -> Result<(), DynamicsError> {
    for (i, j) in PAIRS {
        if u[x_index(i)] == u[x_index(j)] && u[y_index(i)] == u[y_index(j)] {
            return Err(DynamicsError::Collision {
                pair: (i + 1, j + 1),
            });
        }
    }
    Ok(())
}

impl State {
    /// Builds a state, rejecting wrong dimensions and coincident bodies.
    pub fn new(t: Real, u: Vec<Real>) -> Result<Self, DynamicsError> {
        if u.len() != DIM {
            return Err(DynamicsError::Dimension {
                expected: DIM,
                got: u.len(),
            });
        }
        check_collision(&u)?;
        Ok(Self { t, u })
    }

    pub fn precision(&self) -> u32 {
        self.u[0].prec()
    }

    /// Mirror image under `y -> -y`.
    pub fn reflect_y(&self) -> State {
        let mut u = self.u.clone();
        for b in 0..3 {
            u[y_index(b)] = -u[y_index(b)].clone();
            u[vy_index(b)] = -u[vy_index(b)].clone();
        }
        State { t: self.t.clone(), u }
    }

    /// Same configuration with all velocities negated (time reversal).
    pub fn reverse_velocities(&self) -> State {
        let mut u = self.u.clone();
        for b in 0..3 {
            u[vx_index(b)] = -u[vx_index(b)].clone();
            u[vy_index(b)] = -u[vy_index(b)].clone();
        }
        State { t: self.t.clone(), u }
    }
}

impl ExtState {
    pub fn new(t: Real, w: Vec<Real>) -> Result<Self, DynamicsError> {
        if w.len() != EXT_DIM {
            return Err(DynamicsError::Dimension {
                expected: EXT_DIM,
                got: w.len(),
            });
        }
        check_collision(&w[..DIM])?;
        Ok(Self { t, w })
    }

    pub fn base(&self) -> State {
        State {
            t: self.t.clone(),
            u: self.w[..DIM].to_vec(),
        }
    }

    pub fn sensitivity_vx(&self) -> &[Real] {
        &self.w[DIM..2 * DIM]
    }

    pub fn sensitivity_vy(&self) -> &[Real] {
        &self.w[2 * DIM..]
    }
}

/// Collinear configuration `(-1,0), (1,0), (0,0)` with velocities
/// `(vx,vy), (vx,vy), (-2vx,-2vy)` for arbitrary parameter values.
pub fn symmetric_configuration(vx: &Real, vy: &Real, ctx: &Context) -> State {
    let vx = ctx.convert(vx);
    let vy = ctx.convert(vy);
    let u = vec![
        ctx.real(-1),
        ctx.zero(),
        vx.clone(),
        vy.clone(),
        ctx.one(),
        ctx.zero(),
        vx.clone(),
        vy.clone(),
        ctx.zero(),
        ctx.zero(),
        Float::with_val(ctx.bits(), &vx * -2i32),
        Float::with_val(ctx.bits(), &vy * -2i32),
    ];
    State { t: ctx.zero(), u }
}

pub fn initial_state(v: &VelocityPair, ctx: &Context) -> State {
    symmetric_configuration(&v.vx, &v.vy, ctx)
}

/// `∂u(0)/∂vx` and `∂u(0)/∂vy` of the symmetric configuration.
pub fn initial_sensitivities(ctx: &Context) -> (Vec<Real>, Vec<Real>) {
    let mut dvx = vec![ctx.zero(); DIM];
    let mut dvy = vec![ctx.zero(); DIM];
    for (b, scale) in [(0, 1i32), (1, 1), (2, -2)] {
        dvx[vx_index(b)] = ctx.real(scale);
        dvy[vy_index(b)] = ctx.real(scale);
    }
    (dvx, dvy)
}

/// Symmetric configuration extended with its initial sensitivities.
pub fn initial_ext_state(vx: &Real, vy: &Real, ctx: &Context) -> ExtState {
    let base = symmetric_configuration(vx, vy, ctx);
    let (dvx, dvy) = initial_sensitivities(ctx);
    let mut w = base.u;
    w.extend(dvx);
    w.extend(dvy);
    ExtState { t: base.t, w }
}

/// Pairwise `(dx, dy, 1/d^3)` with `d = r_j - r_i`.
fn pair_terms(u: &[Real], prec: u32) -> Result<Vec<(Real, Real, Real)>, DynamicsError> {
    let mut out = Vec::with_capacity(3);
    for (i, j) in PAIRS {
        let dx = Float::with_val(prec, &u[x_index(j)] - &u[x_index(i)]);
        let dy = Float::with_val(prec, &u[y_index(j)] - &u[y_index(i)]);
        let d2 = Float::with_val(prec, dx.square_ref()) + Float::with_val(prec, dy.square_ref());
        if d2.is_zero() {
            return Err(DynamicsError::Collision {
                pair: (i + 1, j + 1),
            });
        }
        let d = d2.clone().sqrt();
        let inv_d3 = (d2 * d).recip();
        out.push((dx, dy, inv_d3));
    }
    Ok(out)
}

fn rhs_slice(u: &[Real]) -> Result<Vec<Real>, DynamicsError> {
    let prec = u[0].prec();
    let terms = pair_terms(u, prec)?;
    let mut f: Vec<Real> = (0..DIM).map(|_| Float::new(prec)).collect();
    for b in 0..3 {
        f[x_index(b)].clone_from(&u[vx_index(b)]);
        f[y_index(b)].clone_from(&u[vy_index(b)]);
    }
    for (k, (i, j)) in PAIRS.into_iter().enumerate() {
        let (dx, dy, g) = &terms[k];
        let fx = Float::with_val(prec, dx * g);
        let fy = Float::with_val(prec, dy * g);
        f[vx_index(i)] += &fx;
        f[vy_index(i)] += &fy;
        f[vx_index(j)] -= &fx;
        f[vy_index(j)] -= &fy;
    }
    Ok(f)
}

/// Right-hand side of the first-order system.
pub fn rhs(s: &State) -> Result<Vec<Real>, DynamicsError> {
    rhs_slice(&s.u)
}

fn jacobian_slice(u: &[Real]) -> Result<Vec<Vec<Real>>, DynamicsError> {
    let prec = u[0].prec();
    let terms = pair_terms(u, prec)?;
    let mut jac: Vec<Vec<Real>> = (0..DIM)
        .map(|_| (0..DIM).map(|_| Float::new(prec)).collect())
        .collect();
    for b in 0..3 {
        jac[x_index(b)][vx_index(b)] = Float::with_val(prec, 1);
        jac[y_index(b)][vy_index(b)] = Float::with_val(prec, 1);
    }
    for (k, (i, j)) in PAIRS.into_iter().enumerate() {
        let (dx, dy, inv_d3) = &terms[k];
        // K = I/d^3 - 3 d d^T / d^5 is ∂a_i/∂r_j; symmetric in (i, j).
        let d2 = Float::with_val(prec, dx.square_ref()) + Float::with_val(prec, dy.square_ref());
        let inv_d5 = Float::with_val(prec, inv_d3 / &d2);
        let three_inv_d5 = inv_d5 * 3u32;
        let kxx = Float::with_val(prec, inv_d3 - Float::with_val(prec, dx * dx) * &three_inv_d5);
        let kyy = Float::with_val(prec, inv_d3 - Float::with_val(prec, dy * dy) * &three_inv_d5);
        let kxy = -(Float::with_val(prec, dx * dy) * &three_inv_d5);
        let block = [[&kxx, &kxy], [&kxy, &kyy]];
        let rows = [vx_index(i), vy_index(i)];
        let rows_j = [vx_index(j), vy_index(j)];
        let cols_i = [x_index(i), y_index(i)];
        let cols_j = [x_index(j), y_index(j)];
        for a in 0..2 {
            for c in 0..2 {
                let kv = block[a][c];
                jac[rows[a]][cols_j[c]] += kv;
                jac[rows[a]][cols_i[c]] -= kv;
                jac[rows_j[a]][cols_i[c]] += kv;
                jac[rows_j[a]][cols_j[c]] -= kv;
            }
        }
    }
    Ok(jac)
}

/// Exact Jacobian `∂f/∂u` (12×12, row-major).
pub fn rhs_jacobian(s: &State) -> Result<Vec<Vec<Real>>, DynamicsError> {
    jacobian_slice(&s.u)
}

/// Right-hand side of the state plus variational system.
pub fn extended_rhs(e: &ExtState) -> Result<Vec<Real>, DynamicsError> {
    let u = &e.w[..DIM];
    let prec = u[0].prec();
    let mut out = rhs_slice(u)?;
    let jac = jacobian_slice(u)?;
    for block in [&e.w[DIM..2 * DIM], &e.w[2 * DIM..]] {
        for row in &jac {
            let mut acc = Float::new(prec);
            for (a, b) in row.iter().zip(block) {
                if !a.is_zero() {
                    acc += a * b;
                }
            }
            out.push(acc);
        }
    }
    Ok(out)
}

/// Total energy: kinetic minus pairwise `1/d`.
pub fn energy(s: &State) -> Result<Real, DynamicsError> {
    let u = &s.u;
    let prec = u[0].prec();
    let mut e = Float::new(prec);
    for b in 0..3 {
        e += &u[vx_index(b)] * &u[vx_index(b)];
        e += &u[vy_index(b)] * &u[vy_index(b)];
    }
    e /= 2u32;
    for (i, j) in PAIRS {
        let dx = Float::with_val(prec, &u[x_index(j)] - &u[x_index(i)]);
        let dy = Float::with_val(prec, &u[y_index(j)] - &u[y_index(i)]);
        let d2 = dx.square() + dy.square();
        if d2.is_zero() {
            return Err(DynamicsError::Collision {
                pair: (i + 1, j + 1),
            });
        }
        e -= d2.sqrt().recip();
    }
    Ok(e)
}

/// `Σ (x_i vy_i − y_i vx_i)`.
pub fn angular_momentum(s: &State) -> Real {
    let u = &s.u;
    let prec = u[0].prec();
    let mut l = Float::new(prec);
    for b in 0..3 {
        l += &u[x_index(b)] * &u[vy_index(b)];
        l -= &u[y_index(b)] * &u[vx_index(b)];
    }
    l
}

/// Euclidean distance between the 12-component vectors of two states.
pub fn proximity(s: &State, reference: &State) -> Real {
    let prec = s.precision().max(reference.precision());
    let mut acc = Float::new(prec);
    for (a, b) in s.u.iter().zip(&reference.u) {
        let d = Float::with_val(prec, a - b);
        acc += d.square();
    }
    acc.sqrt()
}

/// Oriented triangle area `½ (r2−r1) × (r3−r1)`; zero exactly at syzygies.
pub fn oriented_area(u: &[Real]) -> Real {
    let prec = u[0].prec();
    let ax = Float::with_val(prec, &u[x_index(1)] - &u[x_index(0)]);
    let ay = Float::with_val(prec, &u[y_index(1)] - &u[y_index(0)]);
    let bx = Float::with_val(prec, &u[x_index(2)] - &u[x_index(0)]);
    let by = Float::with_val(prec, &u[y_index(2)] - &u[y_index(0)]);
    (ax * by - ay * bx) / 2u32
}

/// Time derivative of [`oriented_area`].
pub fn oriented_area_rate(u: &[Real]) -> Real {
    let prec = u[0].prec();
    let d = |a: usize, b: usize| Float::with_val(prec, &u[a] - &u[b]);
    let ax = d(x_index(1), x_index(0));
    let ay = d(y_index(1), y_index(0));
    let bx = d(x_index(2), x_index(0));
    let by = d(y_index(2), y_index(0));
    let vax = d(vx_index(1), vx_index(0));
    let vay = d(vy_index(1), vy_index(0));
    let vbx = d(vx_index(2), vx_index(0));
    let vby = d(vy_index(2), vy_index(0));
    let rate = vax * &by + ax * vby - vay * &bx - ay * vbx;
    rate / 2u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precision::make_context;
    use proptest::prelude::*;

    fn ctx60() -> Context {
        make_context(60).unwrap()
    }

    fn random_state(ctx: &Context, seed: &[f64; 12]) -> State {
        State::new(ctx.zero(), seed.iter().map(|&v| ctx.real(v)).collect()).unwrap()
    }

    /// Potential energy alone, for the gradient oracle.
    fn potential(u: &[Real]) -> Real {
        let s = State {
            t: Float::new(u[0].prec()),
            u: u.to_vec(),
        };
        let mut kinetic_free = s.clone();
        for b in 0..3 {
            kinetic_free.u[vx_index(b)] = Float::new(u[0].prec());
            kinetic_free.u[vy_index(b)] = Float::new(u[0].prec());
        }
        energy(&kinetic_free).unwrap()
    }

    #[test]
    fn initial_state_layout() {
        let ctx = ctx60();
        let v = VelocityPair::new(ctx.real(0.2), ctx.real(0.3)).unwrap();
        let s = initial_state(&v, &ctx);
        let expect = [-1.0, 0.0, 0.2, 0.3, 1.0, 0.0, 0.2, 0.3, 0.0, 0.0, -0.4, -0.6];
        for (a, b) in s.u.iter().zip(expect) {
            assert!((a.to_f64() - b).abs() < 1e-15);
        }
        assert_eq!(s.u[10], ctx.real(0.2) * -2i32);
        let px = s.u[2].clone() + &s.u[6] + &s.u[10];
        let py = s.u[3].clone() + &s.u[7] + &s.u[11];
        assert!(px.is_zero() && py.is_zero());
        assert!(s.t.is_zero());
        assert!(VelocityPair::new(ctx.real(1.5), ctx.zero()).is_err());
    }

    #[test]
    fn rhs_at_rest_configuration() {
        let ctx = ctx60();
        let s = symmetric_configuration(&ctx.zero(), &ctx.zero(), &ctx);
        let f = rhs(&s).unwrap();
        assert_eq!(f[vx_index(0)], 1.25);
        assert!(f[vy_index(0)].is_zero());
        assert_eq!(f[vx_index(1)], -1.25);
        assert!(f[vx_index(2)].is_zero() && f[vy_index(2)].is_zero());

        // Oracle: acceleration is minus the gradient of the potential,
        // via central differences.
        let delta = ctx.pow10(-25);
        for (coord, acc) in [(x_index(0), vx_index(0)), (y_index(0), vy_index(0))] {
            let mut up = s.u.clone();
            let mut dn = s.u.clone();
            up[coord] += &delta;
            dn[coord] -= &delta;
            let grad = (potential(&up) - potential(&dn)) / (ctx.real(2) * &delta);
            let diff = (-grad - &f[acc]).abs();
            assert!(diff < ctx.pow10(-30), "fd mismatch {diff}");
        }
    }

    #[test]
    fn rhs_rejects_collision() {
        let ctx = ctx60();
        let mut u = symmetric_configuration(&ctx.zero(), &ctx.zero(), &ctx).u;
        u[x_index(2)] = ctx.one();
        let s = State { t: ctx.zero(), u };
        assert_eq!(
            rhs(&s),
            Err(DynamicsError::Collision { pair: (2, 3) })
        );
        assert!(State::new(s.t.clone(), s.u.clone()).is_err());
        assert!(energy(&s).is_err());
        assert!(rhs_jacobian(&s).is_err());
    }

    #[test]
    fn jacobian_block_example() {
        let ctx = ctx60();
        let s = symmetric_configuration(&ctx.real(0.1), &ctx.real(0.2), &ctx);
        let jac = rhs_jacobian(&s).unwrap();
        // ∂a_1/∂r_2
        assert_eq!(jac[vx_index(0)][x_index(1)], -0.25);
        assert!(jac[vx_index(0)][y_index(1)].is_zero());
        assert!(jac[vy_index(0)][x_index(1)].is_zero());
        assert_eq!(jac[vy_index(0)][y_index(1)], 0.125);
        // ẋ1 row selects vx1.
        for (c, v) in jac[x_index(0)].iter().enumerate() {
            assert_eq!(*v, if c == vx_index(0) { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let ctx = ctx60();
        let s = random_state(
            &ctx,
            &[-0.9, 0.1, 0.3, 0.2, 1.1, -0.2, 0.1, 0.4, 0.05, 0.6, -0.4, -0.6],
        );
        let jac = rhs_jacobian(&s).unwrap();
        let delta = ctx.pow10(-30);
        for col in 0..DIM {
            let mut up = s.clone();
            let mut dn = s.clone();
            up.u[col] += &delta;
            dn.u[col] -= &delta;
            let fu = rhs(&up).unwrap();
            let fd = rhs(&dn).unwrap();
            for row in 0..DIM {
                let fdv = (fu[row].clone() - &fd[row]) / (ctx.real(2) * &delta);
                let diff = (fdv - &jac[row][col]).abs();
                assert!(diff < ctx.pow10(-28), "({row},{col}) off by {diff}");
            }
        }
        // Acceleration blocks are symmetric.
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(jac[vx_index(i)][y_index(j)], jac[vy_index(i)][x_index(j)]);
            }
        }
    }

    #[test]
    fn extended_rhs_at_start() {
        let ctx = ctx60();
        let e = initial_ext_state(&ctx.real(0.3), &ctx.real(0.5), &ctx);
        let f = extended_rhs(&e).unwrap();
        assert_eq!(f.len(), EXT_DIM);
        let base = rhs(&e.base()).unwrap();
        assert_eq!(&f[..DIM], &base[..]);
        // Position rows of the sensitivity derivative equal velocity sensitivities.
        let (dvx, _) = initial_sensitivities(&ctx);
        for b in 0..3 {
            assert_eq!(f[DIM + x_index(b)], dvx[vx_index(b)]);
            assert_eq!(f[DIM + y_index(b)], dvx[vy_index(b)]);
        }
        // Zero sensitivity blocks stay zero.
        let mut z = e.clone();
        for w in &mut z.w[DIM..] {
            *w = ctx.zero();
        }
        let fz = extended_rhs(&z).unwrap();
        assert!(fz[DIM..].iter().all(|v| v.is_zero()));
    }

    #[test]
    fn energy_and_momentum_examples() {
        let ctx = ctx60();
        let s0 = symmetric_configuration(&ctx.zero(), &ctx.zero(), &ctx);
        assert_eq!(energy(&s0).unwrap(), -2.5);
        let s1 = symmetric_configuration(&ctx.real(0.5), &ctx.real(0.5), &ctx);
        assert_eq!(energy(&s1).unwrap(), -1.0);
        assert!(angular_momentum(&s1).is_zero());

        let mut u = vec![ctx.zero(); DIM];
        u[x_index(0)] = ctx.one();
        u[vy_index(0)] = ctx.one();
        u[x_index(1)] = ctx.real(5);
        u[x_index(2)] = ctx.real(9);
        let single = State { t: ctx.zero(), u };
        assert_eq!(angular_momentum(&single), 1.0);
    }

    #[test]
    fn proximity_examples() {
        let ctx = ctx60();
        let s = symmetric_configuration(&ctx.real(0.2), &ctx.real(0.3), &ctx);
        assert!(proximity(&s, &s).is_zero());
        let mut t = s.clone();
        t.u[x_index(0)] += ctx.real(3) / 10u32;
        let p = proximity(&t, &s);
        assert!((p.clone() - ctx.real(3) / 10u32).abs() < ctx.pow10(-55));
        assert_eq!(p, proximity(&s, &t));
    }

    #[test]
    fn oriented_area_and_rate() {
        let ctx = ctx60();
        let s = symmetric_configuration(&ctx.real(0.2), &ctx.real(0.3), &ctx);
        assert!(oriented_area(&s.u).is_zero());
        // dS/dt = -3 vy at the symmetric configuration.
        let rate = oriented_area_rate(&s.u);
        assert!((rate + ctx.real(0.3) * 3u32).abs() < ctx.pow10(-50));
        assert!(oriented_area(&s.reflect_y().u).is_zero());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn momentum_and_mirror(vals in prop::array::uniform12(-1.5f64..1.5)) {
            let ctx = make_context(40).unwrap();
            let s = State { t: ctx.zero(), u: vals.iter().map(|&v| ctx.real(v)).collect() };
            prop_assume!(rhs(&s).is_ok());
            let f = rhs(&s).unwrap();
            let sx = Float::with_val(ctx.bits(), &f[vx_index(0)] + &f[vx_index(1)]) + &f[vx_index(2)];
            let sy = Float::with_val(ctx.bits(), &f[vy_index(0)] + &f[vy_index(1)]) + &f[vy_index(2)];
            let scale = f.iter().map(|v| v.to_f64().abs()).fold(1.0, f64::max);
            prop_assert!(sx.to_f64().abs() <= 1e-35 * scale);
            prop_assert!(sy.to_f64().abs() <= 1e-35 * scale);

            let m = rhs(&s.reflect_y()).unwrap();
            for b in 0..3 {
                prop_assert_eq!(&m[x_index(b)], &f[x_index(b)]);
                prop_assert_eq!(&m[vx_index(b)], &f[vx_index(b)]);
                prop_assert_eq!(&m[y_index(b)], &Float::with_val(ctx.bits(), -&f[y_index(b)]));
                prop_assert_eq!(&m[vy_index(b)], &Float::with_val(ctx.bits(), -&f[vy_index(b)]));
            }
        }

        #[test]
        fn energy_formula_on_symmetric_configuration(vx in 0.0f64..1.0, vy in 0.0f64..1.0) {
            let ctx = make_context(40).unwrap();
            let v = VelocityPair::new(ctx.real(vx), ctx.real(vy)).unwrap();
            let e = energy(&initial_state(&v, &ctx)).unwrap();
            let formula = ctx.real(-2.5) + (ctx.real(vx) * vx + ctx.real(vy) * vy) * 3u32;
            prop_assert!((e - formula).abs() < ctx.pow10(-38));
        }

        #[test]
        fn jacobian_fd_random(vals in prop::array::uniform12(-1.0f64..1.0)) {
            let ctx = make_context(40).unwrap();
            let s = State { t: ctx.zero(), u: vals.iter().map(|&v| ctx.real(v)).collect() };
            let min_d = PAIRS.iter().map(|&(i, j)| {
                let dx = vals[x_index(j)] - vals[x_index(i)];
                let dy = vals[y_index(j)] - vals[y_index(i)];
                (dx * dx + dy * dy).sqrt()
            }).fold(f64::INFINITY, f64::min);
            prop_assume!(min_d > 0.1);
            let jac = rhs_jacobian(&s).unwrap();
            let delta = ctx.pow10(-20);
            for col in [x_index(0), y_index(1), x_index(2)] {
                let mut up = s.clone();
                let mut dn = s.clone();
                up.u[col] += &delta;
                dn.u[col] -= &delta;
                let fu = rhs(&up).unwrap();
                let fd = rhs(&dn).unwrap();
                for row in 0..DIM {
                    let fdv = (fu[row].clone() - &fd[row]) / (ctx.real(2) * &delta);
                    let diff = (fdv - &jac[row][col]).abs();
                    // digits/2 = 20 agreeing digits, relative to the entry scale
                    let scale = jac[row][col].to_f64().abs().max(1.0);
                    prop_assert!(diff.to_f64() < 1e-15 * scale);
                }
            }
        }
    }
}

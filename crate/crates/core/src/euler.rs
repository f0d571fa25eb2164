//! Euler integration with a certified global error bound.

use crate::field::{FieldBounds, FloatField};
use crate::rational::{self, exp_up, from_f64, next_up, to_f64, Rational};
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EulerError {
    #[error("certified parameters underflow; use practical mode")]
    CertifiedModeInfeasible,
    #[error("trajectory left the disk at step {0}")]
    LeftDomain(usize),
    #[error("invalid parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerParams {
    #[serde(with = "rational::serde_str")]
    pub h: Rational,
    #[serde(with = "rational::serde_str")]
    pub rho: Rational,
    pub n_t: u64,
    #[serde(with = "rational::serde_str")]
    pub t: Rational,
    #[serde(with = "rational::serde_str")]
    pub eps: Rational,
}

impl EulerParams {
    pub fn h_f64(&self) -> f64 {
        to_f64(&self.h)
    }
    pub fn rho_f64(&self) -> f64 {
        to_f64(&self.rho)
    }
}

const MIN_H_LOG2: i32 = -200;
const MIN_RHO_LOG2: i32 = -50;

fn at_least_one(q: &Rational) -> Rational {
    if q < &Rational::one() {
        Rational::one()
    } else {
        q.clone()
    }
}

/// Upward-rounded `e^{T L}` as an exact rational.
fn growth(t: &Rational, l: &Rational) -> Result<Rational, EulerError> {
    let tl = next_up(to_f64(&(t * l)));
    if !tl.is_finite() || tl > 700.0 {
        return Err(EulerError::CertifiedModeInfeasible);
    }
    Ok(from_f64(exp_up(tl)))
}

/// Step size, rounding bound and step count meeting the certified bounds.
///
/// `h` is `T / n_T` with `n_T` the smallest power of two for which
/// `h ≤ eps / (4 e^{TL} M²)`; `rho` is the largest power of two not above
/// `min(eps·h / (4 e^{TL}), eps / (2 e^{TL}))`.
pub fn choose_parameters(
    bounds: &FieldBounds,
    eps: &Rational,
    t: &Rational,
) -> Result<EulerParams, EulerError> {
    if !eps.is_positive() || eps >= &Rational::one() {
        return Err(EulerError::Invalid("eps must lie in (0, 1)".into()));
    }
    if !t.is_positive() {
        return Err(EulerError::Invalid("T must be positive".into()));
    }
    let l = at_least_one(&bounds.l);
    let m = at_least_one(&bounds.m);
    let e = growth(t, &l)?;
    let four = Rational::from_integer(BigInt::from(4));
    let h_bound = eps / (&four * &e * &m * &m);
    if h_bound < rational::pow2(MIN_H_LOG2) {
        return Err(EulerError::CertifiedModeInfeasible);
    }
    let steps = (t / &h_bound).ceil();
    let mut n: u64 = 1;
    let target = steps.to_integer().to_u64().ok_or(EulerError::CertifiedModeInfeasible)?;
    while n < target {
        n = n.checked_mul(2).ok_or(EulerError::CertifiedModeInfeasible)?;
    }
    let h = t / Rational::from_integer(BigInt::from(n));
    let a = eps * &h / (&four * &e);
    let b = eps / (Rational::from_integer(BigInt::from(2)) * &e);
    let rho = rational::floor_pow2(if a < b { &a } else { &b });
    if rho < rational::pow2(MIN_RHO_LOG2) {
        return Err(EulerError::CertifiedModeInfeasible);
    }
    Ok(EulerParams {
        h,
        rho,
        n_t: n,
        t: t.clone(),
        eps: eps.clone(),
    })
}

/// `e^{tL}·gap + ((e^{tL} − 1)/L)(h M² + ρ/h)`, rounded upward.
///
/// With `L = 0` the factor `(e^{tL} − 1)/L` is replaced by its limit `t`.
pub fn global_error_bound(bounds: &FieldBounds, h: f64, rho: f64, t: f64, gap: f64) -> f64 {
    let l = if bounds.l.is_positive() {
        bounds.l_f64()
    } else {
        0.0
    };
    let m = bounds.m_f64();
    let up = next_up;
    let tl = up(t * l);
    let e = exp_up(tl);
    let factor = if l == 0.0 {
        t
    } else {
        // exp_m1 is accurate near 0 where e − 1 would cancel
        up(up(up(up(tl.exp_m1())) / l) * (1.0 + 4.0 * f64::EPSILON))
    };
    let local = up(up(h * up(m * m)) + up(rho / h));
    up(up(e * gap) + up(factor * local))
}

/// A computed trajectory with the certified bound after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub points: Vec<[f64; 2]>,
    /// Nondecreasing per-step error bounds.
    pub bound_trace: Vec<f64>,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,x,y,bound\n");
        for (k, (p, b)) in self.points.iter().zip(&self.bound_trace).enumerate() {
            s.push_str(&format!("{},{},{},{}\n", k as f64 * self.h, p[0], p[1], b));
        }
        s
    }
}

#[inline]
pub fn round_to_grid(v: f64, rho: f64) -> f64 {
    (v / rho).round() * rho
}

/// One Euler step rounded to the ρ-grid.
///
/// The unrounded update carries `h·err` plus a few ulps; that has to fit in
/// the half of ρ not spent on grid rounding.
#[inline]
pub fn certified_step(ff: &FloatField, y: [f64; 2], h: f64, rho: f64) -> Result<[f64; 2], EulerError> {
    let (v, err) = ff.eval_with_bound(y);
    let float_err = h * err + 4.0 * f64::EPSILON * (y[0].abs().max(y[1].abs()) + 1.0);
    if float_err > rho / 2.0 {
        return Err(EulerError::CertifiedModeInfeasible);
    }
    Ok([
        round_to_grid(y[0] + h * v[0], rho),
        round_to_grid(y[1] + h * v[1], rho),
    ])
}

/// Euler trajectory on the ρ-grid with certified bounds, valid while every
/// iterate stays inside the disk.
pub fn euler_trajectory(
    ff: &FloatField,
    bounds: &FieldBounds,
    params: &EulerParams,
    x0: &[Rational; 2],
) -> Result<Trajectory, EulerError> {
    let h = params.h_f64();
    let rho = params.rho_f64();
    let eps = to_f64(&params.eps);
    let mut y = [
        round_to_grid(to_f64(&x0[0]), rho),
        round_to_grid(to_f64(&x0[1]), rho),
    ];
    let n = params.n_t as usize;
    let mut points = Vec::with_capacity(n + 1);
    let mut trace = Vec::with_capacity(n + 1);
    points.push(y);
    trace.push(global_error_bound(bounds, h, rho, 0.0, rho));
    for k in 0..n {
        y = certified_step(ff, y, h, rho)?;
        if y[0].hypot(y[1]) > 1.0 + eps {
            return Err(EulerError::LeftDomain(k + 1));
        }
        points.push(y);
        trace.push(global_error_bound(bounds, h, rho, (k + 1) as f64 * h, rho));
    }
    Ok(Trajectory {
        h,
        points,
        bound_trace: trace,
    })
}

/// Plain Euler with step `h` and no rounding grid.
pub fn practical_trajectory(ff: &FloatField, h: f64, steps: usize, x0: [f64; 2]) -> Vec<[f64; 2]> {
    let mut y = x0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(y);
    for _ in 0..steps {
        let v = ff.eval(y);
        y = [y[0] + h * v[0], y[1] + h * v[1]];
        out.push(y);
    }
    out
}

/// Classical fourth-order Runge–Kutta, used as the reference integrator.
pub fn rk4(f: &dyn Fn([f64; 2]) -> [f64; 2], x0: [f64; 2], h: f64, steps: usize) -> Vec<[f64; 2]> {
    let mut y = x0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(y);
    let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
    for _ in 0..steps {
        let k1 = f(y);
        let k2 = f(add(y, k1, h / 2.0));
        let k3 = f(add(y, k2, h / 2.0));
        let k4 = f(add(y, k3, h));
        y = [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        out.push(y);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{compute_bounds, Poly, PolyVectorField};
    use crate::rational::{int, rat};

    fn unit_bounds() -> FieldBounds {
        FieldBounds {
            m: int(1),
            l: int(1),
            inward_margin: int(1),
        }
    }

    #[test]
    fn parameters_for_unit_bounds() {
        let p = choose_parameters(&unit_bounds(), &rat(1, 4), &int(1)).unwrap();
        assert_eq!(p.h, rational::pow2(-6));
        assert_eq!(p.n_t, 64);
        assert!(to_f64(&p.h) <= 0.25 / (4.0 * std::f64::consts::E));
        let rho_max = 0.25 * to_f64(&p.h) / (4.0 * std::f64::consts::E);
        assert!(to_f64(&p.rho) <= rho_max && rho_max < 3.6e-4);
        assert_eq!(p.rho, rational::pow2(-12));
        assert_eq!(&p.h * Rational::from_integer(BigInt::from(p.n_t)), p.t);
    }

    #[test]
    fn long_horizon_is_infeasible() {
        let b = FieldBounds {
            m: int(5),
            l: int(5),
            inward_margin: int(1),
        };
        assert_eq!(
            choose_parameters(&b, &rat(1, 4), &int(50)),
            Err(EulerError::CertifiedModeInfeasible)
        );
    }

    #[test]
    fn error_bound_reduces_to_growth_of_gap() {
        let b = unit_bounds();
        let v = global_error_bound(&b, 1e-300, 0.0, 1.0, 1.0);
        assert!((v - std::f64::consts::E).abs() < 1e-12);
        assert!(v >= std::f64::consts::E);
        let c = FieldBounds {
            m: int(1),
            l: int(0),
            inward_margin: int(1),
        };
        // L = 0: factor is t
        let w = global_error_bound(&c, 0.5, 0.0, 2.0, 0.0);
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn certified_contracting_trajectory() {
        let f = PolyVectorField::new(Poly::x().scale(&int(-1)), Poly::y().scale(&int(-1)));
        let b = compute_bounds(&f).unwrap();
        let p = choose_parameters(&b, &rat(1, 4), &int(1)).unwrap();
        let tr = euler_trajectory(&f.compile(), &b, &p, &[rat(1, 2), int(0)]).unwrap();
        let h = p.h_f64();
        for (k, y) in tr.points.iter().enumerate() {
            let exact = 0.5 * (-(k as f64) * h).exp();
            let err = (y[0] - exact).abs().max(y[1].abs());
            assert!(err <= tr.bound_trace[k]);
            assert!(tr.bound_trace[k] <= 0.25);
        }
        assert!(tr.bound_trace.windows(2).all(|w| w[0] <= w[1]));
        assert!(tr.to_csv().lines().count() == tr.points.len() + 1);
    }

    #[test]
    fn equilibrium_stays_put() {
        let f = PolyVectorField::new(Poly::x().scale(&int(-1)), Poly::y().scale(&int(-1)));
        let b = compute_bounds(&f).unwrap();
        let p = choose_parameters(&b, &rat(1, 8), &int(1)).unwrap();
        let tr = euler_trajectory(&f.compile(), &b, &p, &[int(0), int(0)]).unwrap();
        let lim = p.rho_f64() * p.n_t as f64;
        assert!(tr.points.iter().all(|y| y[0].abs() <= lim && y[1].abs() <= lim));
    }

    #[test]
    fn double_well_reaches_sink() {
        let f = PolyVectorField::new(
            Poly::x().scale(&int(4)).sub(&Poly::x().pow(3).scale(&int(8))),
            Poly::y().scale(&int(-1)),
        );
        let ff = f.compile();
        let h = 1e-3;
        let tr = practical_trajectory(&ff, h, 6000, [0.9, 0.1]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(tr
            .iter()
            .any(|y| (y[0] - s).abs().max(y[1].abs()) < 0.05));
        let reference = rk4(&|p| ff.eval(p), [0.9, 0.1], h / 64.0, 6000 * 64);
        let last = reference.last().unwrap();
        assert!((last[0] - s).abs().max(last[1].abs()) < 0.05);
    }
}

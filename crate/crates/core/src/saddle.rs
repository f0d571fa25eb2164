//! Saddle neighborhoods handled by the linearized flow.
//!
//! Near a saddle `x0` the field is replaced by `Df(x0)` in the eigenbasis
//! `u = Q⁻¹(x − x0)`, stable coordinate first. The box of max-norm radius
//! ε is split by the radii `1/T`, `2/T`, `3ε/4`, `ε` into regions A, B, C, D.
//! A trajectory entering the box either leaves through D at a closed-form
//! point, or comes close enough to the stable separatrix that the whole
//! precomputed exit set J is returned instead.

use crate::equilibria::{eigenvector, EquilibriumRecord, Kind};
use crate::field::{Poly, PolyVectorField};
use crate::rational::{self, from_f64, pow2, rat, round_down, round_up, to_f64, Rational};
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

/// Relative size of the nonlinear part tolerated inside a box.
pub const ETA: (i64, i64) = (1, 8);
/// Each failed validation multiplies ε by this factor.
const SHRINK: (i64, i64) = (7, 8);
const START_EPS: (i64, i64) = (1, 4);
const MIN_EPS_LOG2: i32 = -12;
/// Largest tolerated |f(x0)| at the refined saddle location.
const RESIDUAL_TOL: f64 = 1.0 / (1u64 << 40) as f64;
const COEFF_BITS: u32 = 80;
const EDGE_SEGMENTS: usize = 32;
const MAX_BISECT: u32 = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SaddleError {
    #[error("record is not a saddle")]
    NotSaddle,
    #[error("box radius {eps} needs 2/T < 3ε/4; T = {t} is too small")]
    NeedLargerT { eps: String, t: String },
    #[error("linearization could not be validated down to radius 2^{MIN_EPS_LOG2}")]
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regions {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    A,
    B,
    C,
    D,
    Outside,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JSet {
    /// Points in local (eigenbasis) coordinates.
    pub points: Vec<[f64; 2]>,
    pub tau: f64,
    /// Spacing of the grid W on the horizontal border of B.
    pub spacing: f64,
    /// Number of τ-steps each w travels before landing in the shell.
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleBox {
    pub center: [f64; 2],
    #[serde(with = "rational::serde_str")]
    pub center_exact_x: Rational,
    #[serde(with = "rational::serde_str")]
    pub center_exact_y: Rational,
    /// Columns are the stable and unstable unit eigenvectors.
    pub q: [[f64; 2]; 2],
    pub q_inv: [[f64; 2]; 2],
    pub lambda: f64,
    pub mu: f64,
    #[serde(with = "rational::serde_str")]
    pub epsilon_box: Rational,
    #[serde(with = "rational::serde_str")]
    pub t: Rational,
    pub regions: Regions,
    pub j: JSet,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transit {
    Exit { point: [f64; 2], time: f64 },
    /// The trajectory came within 2/T of the saddle; use [`SaddleBox::j_image`].
    Fallback,
}

impl SaddleBox {
    pub fn eps(&self) -> f64 {
        self.regions.d
    }

    pub fn to_local(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        mat_vec(&self.q_inv, d)
    }

    pub fn to_physical(&self, u: [f64; 2]) -> [f64; 2] {
        let d = mat_vec(&self.q, u);
        [self.center[0] + d[0], self.center[1] + d[1]]
    }

    pub fn region(&self, x: [f64; 2]) -> Region {
        let u = self.to_local(x);
        let n = u[0].abs().max(u[1].abs());
        let r = &self.regions;
        if n <= r.a {
            Region::A
        } else if n <= r.b {
            Region::B
        } else if n <= r.c {
            Region::C
        } else if n <= r.d {
            Region::D
        } else {
            Region::Outside
        }
    }

    /// Whether a simulated point should be handed to the black box.
    pub fn captures(&self, x: [f64; 2]) -> bool {
        let u = self.to_local(x);
        u[0].abs().max(u[1].abs()) <= self.regions.c
    }

    /// Level of |u₂| at which a direct transit leaves the box.
    pub fn exit_level(&self) -> f64 {
        let e = self.eps();
        0.75 * e + e / 16.0
    }

    pub fn passage_time(&self, x_star: f64, x_star_star: f64) -> f64 {
        passage_time(self.lambda, x_star, x_star_star)
    }

    /// Linear flow from `entry`; exit points are rounded to the `rho` grid.
    pub fn transit(&self, entry: [f64; 2], rho: f64) -> Transit {
        let u = self.to_local(entry);
        let level = self.exit_level();
        if u[1].abs() >= level {
            return Transit::Exit {
                point: round_point(entry, rho),
                time: 0.0,
            };
        }
        if u[1] == 0.0 {
            return Transit::Fallback;
        }
        let (l, m) = (self.lambda, self.mu);
        let t1 = (level / u[1].abs()).ln() / m;
        // ‖u(t)‖∞ is smallest where the decaying and growing parts meet
        let mut low = u[0].abs().max(u[1].abs()).min(level);
        if u[0] != 0.0 {
            let ts = (u[0].abs() / u[1].abs()).ln() / (m - l);
            if ts > 0.0 && ts < t1 {
                low = low.min(u[1].abs() * (m * ts).exp());
            }
        }
        if low <= self.regions.b {
            return Transit::Fallback;
        }
        let exit = [u[0] * (l * t1).exp(), level.copysign(u[1])];
        Transit::Exit {
            point: round_point(self.to_physical(exit), rho),
            time: t1,
        }
    }

    pub fn j_image(&self) -> Vec<[f64; 2]> {
        self.j.points.iter().map(|&u| self.to_physical(u)).collect()
    }

    /// Whether the max-norm square of radius `r` about `p` meets
    /// `x0 + Q[−s, s]²`.
    pub fn square_meets(&self, p: [f64; 2], r: f64, s: f64) -> bool {
        let c = [p[0] - self.center[0], p[1] - self.center[1]];
        let cols = [[self.q[0][0], self.q[1][0]], [self.q[0][1], self.q[1][1]]];
        let mut axes = vec![[1.0, 0.0], [0.0, 1.0]];
        for v in cols {
            axes.push([-v[1], v[0]]);
        }
        axes.iter().all(|a| {
            let centre = (a[0] * c[0] + a[1] * c[1]).abs();
            let sq = r * (a[0].abs() + a[1].abs());
            let par = s * cols.iter().map(|v| (a[0] * v[0] + a[1] * v[1]).abs()).sum::<f64>();
            centre <= (sq + par) * (1.0 + 1e-12)
        })
    }

    /// Whether the max-norm square of radius `r` about `p` meets the image of A∪B.
    pub fn square_meets_core(&self, p: [f64; 2], r: f64) -> bool {
        self.square_meets(p, r, self.regions.b)
    }

    /// Physical corners of the whole box.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let e = self.eps();
        [[-e, -e], [e, -e], [e, e], [-e, e]].map(|u| self.to_physical(u))
    }
}

/// `∫ dx/|λx|` from `x**` up to `x*`.
pub fn passage_time(lambda: f64, x_star: f64, x_star_star: f64) -> f64 {
    if x_star_star == 0.0 {
        return f64::INFINITY;
    }
    (x_star / x_star_star).ln() / lambda.abs()
}

fn round_point(p: [f64; 2], rho: f64) -> [f64; 2] {
    if rho <= 0.0 {
        return p;
    }
    p.map(|c| (c / rho).round() * rho)
}

fn mat_vec(a: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

#[derive(Clone, Debug)]
struct Iv {
    lo: Rational,
    hi: Rational,
}

impl Iv {
    fn point(q: Rational) -> Self {
        Iv { lo: q.clone(), hi: q }
    }

    fn add(&self, o: &Iv) -> Iv {
        Iv {
            lo: &self.lo + &o.lo,
            hi: &self.hi + &o.hi,
        }
    }

    fn mul(&self, o: &Iv) -> Iv {
        let ps = [&self.lo * &o.lo, &self.lo * &o.hi, &self.hi * &o.lo, &self.hi * &o.hi];
        let lo = ps.iter().min().unwrap().clone();
        let hi = ps.iter().max().unwrap().clone();
        Iv { lo, hi }
    }

    fn mag(&self) -> Rational {
        rational::max(&self.lo.abs(), &self.hi.abs())
    }

    fn mig(&self) -> Rational {
        if self.lo.is_positive() {
            self.lo.clone()
        } else if self.hi.is_negative() {
            -self.hi.clone()
        } else {
            Rational::zero()
        }
    }
}

/// Univariate restriction of a polynomial to an edge of the unit square,
/// with coefficients as dyadic enclosures.
struct EdgePoly {
    coeffs: Vec<Iv>,
}

impl EdgePoly {
    /// Restrict `p` to `(σ, s)` when `fixed_x`, else to `(s, σ)`.
    fn new(p: &Poly, fixed_x: bool, sigma: i64) -> Self {
        let d = p.degree() as usize;
        let mut acc = vec![Rational::zero(); d + 1];
        for (i, j, c) in p.terms() {
            let (fixed_pow, free_pow) = if fixed_x { (i, j) } else { (j, i) };
            let sign = if sigma < 0 && fixed_pow % 2 == 1 { -1 } else { 1 };
            acc[free_pow as usize] += c * Rational::from_integer(sign.into());
        }
        let coeffs = acc
            .iter()
            .map(|c| Iv {
                lo: round_down(c, COEFF_BITS),
                hi: round_up(c, COEFF_BITS),
            })
            .collect();
        EdgePoly { coeffs }
    }

    fn eval(&self, s: &Iv) -> Iv {
        let mut r = Iv::point(Rational::zero());
        for c in self.coeffs.iter().rev() {
            r = r.mul(s).add(c);
        }
        r
    }
}

/// Certified ‖N(d)‖∞ ≤ η‖A d‖∞ for all d with ‖d‖∞ ≤ radius, where N is
/// the nonlinear part of the field shifted to the saddle.
struct Validator {
    /// Per edge: linear part rows, and per degree ≥ 2 the two components.
    edges: Vec<(Vec<EdgePoly>, Vec<(u32, Vec<EdgePoly>)>)>,
}

impl Validator {
    fn new(shifted: &[Poly; 2]) -> Self {
        let deg = shifted[0].degree().max(shifted[1].degree());
        let mut edges = Vec::new();
        for (fixed_x, sigma) in [(true, 1), (true, -1), (false, 1), (false, -1)] {
            let lin = shifted
                .iter()
                .map(|p| EdgePoly::new(&p.homogeneous_part(1), fixed_x, sigma))
                .collect();
            let nonlin = (2..=deg)
                .map(|k| {
                    let comps = shifted
                        .iter()
                        .map(|p| EdgePoly::new(&p.homogeneous_part(k), fixed_x, sigma))
                        .collect();
                    (k, comps)
                })
                .collect();
            edges.push((lin, nonlin));
        }
        Validator { edges }
    }

    fn validate(&self, radius: &Rational) -> bool {
        let eta = rat(ETA.0, ETA.1);
        let n = EDGE_SEGMENTS as i64;
        self.edges.iter().all(|(lin, nonlin)| {
            let powers: Vec<Rational> = nonlin
                .iter()
                .map(|(k, _)| num_traits::pow(radius.clone(), (*k - 1) as usize))
                .collect();
            let check = |s: &Iv| -> bool {
                let rhs = lin
                    .iter()
                    .map(|p| p.eval(s).mig())
                    .max()
                    .unwrap_or_default()
                    * &eta;
                let lhs: Rational = nonlin
                    .iter()
                    .zip(&powers)
                    .map(|((_, comps), rp)| {
                        comps.iter().map(|p| p.eval(s).mag()).max().unwrap_or_default() * rp
                    })
                    .sum();
                lhs <= rhs
            };
            (0..n).all(|i| {
                let s = Iv {
                    lo: rat(2 * i - n, n),
                    hi: rat(2 * i + 2 - n, n),
                };
                bisect_check(&check, s, MAX_BISECT)
            })
        })
    }
}

fn bisect_check(check: &dyn Fn(&Iv) -> bool, s: Iv, depth: u32) -> bool {
    if check(&s) {
        return true;
    }
    if depth == 0 {
        return false;
    }
    let mid = (&s.lo + &s.hi) / Rational::from_integer(2.into());
    bisect_check(check, Iv { lo: s.lo, hi: mid.clone() }, depth - 1)
        && bisect_check(check, Iv { lo: mid, hi: s.hi }, depth - 1)
}

/// Eigen data and the largest validated ε for one saddle, independent of T.
#[derive(Debug, Clone)]
struct Linearization {
    cx: Rational,
    cy: Rational,
    q: [[f64; 2]; 2],
    q_inv: [[f64; 2]; 2],
    q_norm: Rational,
    lambda: f64,
    mu: f64,
}

fn linearize(field: &PolyVectorField, record: &EquilibriumRecord) -> Result<Linearization, SaddleError> {
    if record.kind != Kind::Saddle {
        return Err(SaddleError::NotSaddle);
    }
    let [cx, cy] = record.refined.center();
    let jac = field.jacobian_unchecked(&[cx.clone(), cy.clone()]);
    let a = [
        [to_f64(&jac[0][0]), to_f64(&jac[0][1])],
        [to_f64(&jac[1][0]), to_f64(&jac[1][1])],
    ];
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (lambda, mu) = (tr / 2.0 - disc, tr / 2.0 + disc);
    if !(lambda < 0.0 && mu > 0.0) {
        return Err(SaddleError::NotSaddle);
    }
    let vs = eigenvector(a, lambda);
    let vu = eigenvector(a, mu);
    let q = [[vs[0], vu[0]], [vs[1], vu[1]]];
    let qd = q[0][0] * q[1][1] - q[0][1] * q[1][0];
    let q_inv = [[q[1][1] / qd, -q[0][1] / qd], [-q[1][0] / qd, q[0][0] / qd]];
    let q_norm = (0..2)
        .map(|i| from_f64(q[i][0]).abs() + from_f64(q[i][1]).abs())
        .max()
        .unwrap();
    Ok(Linearization {
        cx,
        cy,
        q,
        q_inv,
        q_norm,
        lambda,
        mu,
    })
}

fn residual_ok(field: &PolyVectorField, lin: &Linearization) -> bool {
    let v = field.evaluate_unchecked(&[lin.cx.clone(), lin.cy.clone()]);
    v.iter().all(|c| to_f64(c).abs() <= RESIDUAL_TOL)
}

fn corners_inside(lin: &Linearization, eps: f64) -> bool {
    let c = [to_f64(&lin.cx), to_f64(&lin.cy)];
    [[-eps, -eps], [eps, -eps], [eps, eps], [-eps, eps]].iter().all(|u| {
        let d = mat_vec(&lin.q, *u);
        (c[0] + d[0]).hypot(c[1] + d[1]) < 1.0 - 1e-9
    })
}

/// Candidate radii 1/4, 7/32, ... down to 2^-12.
fn radii() -> impl Iterator<Item = Rational> {
    let shrink = rat(SHRINK.0, SHRINK.1);
    let floor = pow2(MIN_EPS_LOG2);
    std::iter::successors(Some(rat(START_EPS.0, START_EPS.1)), move |e| Some(e * &shrink))
        .take_while(move |e| *e >= floor)
}

fn largest_valid_eps(field: &PolyVectorField, lin: &Linearization) -> Result<Rational, SaddleError> {
    if !residual_ok(field, lin) {
        return Err(SaddleError::Inconclusive);
    }
    let shifted = [field.f1.shift(&lin.cx, &lin.cy), field.f2.shift(&lin.cx, &lin.cy)];
    let v = Validator::new(&shifted);
    radii()
        .find(|e| corners_inside(lin, to_f64(e)) && v.validate(&(e * &lin.q_norm)))
        .ok_or(SaddleError::Inconclusive)
}

fn assemble(lin: &Linearization, eps: Rational, t: &Rational) -> Result<SaddleBox, SaddleError> {
    let two_over_t = rat(2, 1) / t;
    if two_over_t >= &eps * rat(3, 4) {
        return Err(SaddleError::NeedLargerT {
            eps: rational::format_rational(&eps),
            t: rational::format_rational(t),
        });
    }
    let e = to_f64(&eps);
    let regions = Regions {
        a: to_f64(&(Rational::one() / t)),
        b: to_f64(&two_over_t),
        c: 0.75 * e,
        d: e,
    };
    let mut b = SaddleBox {
        center: [to_f64(&lin.cx), to_f64(&lin.cy)],
        center_exact_x: lin.cx.clone(),
        center_exact_y: lin.cy.clone(),
        q: lin.q,
        q_inv: lin.q_inv,
        lambda: lin.lambda,
        mu: lin.mu,
        epsilon_box: eps,
        t: t.clone(),
        regions,
        j: JSet {
            points: vec![],
            tau: 0.0,
            spacing: 0.0,
            steps: 0,
        },
    };
    b.j = build_j_set(&b, t);
    Ok(b)
}

pub fn build_saddle_box(
    field: &PolyVectorField,
    record: &EquilibriumRecord,
    t: &Rational,
) -> Result<SaddleBox, SaddleError> {
    let lin = linearize(field, record)?;
    let eps = largest_valid_eps(field, &lin)?;
    assemble(&lin, eps, t)
}

/// Boxes for every saddle in `records`, shrunk until pairwise disjoint.
pub fn build_saddle_boxes(
    field: &PolyVectorField,
    records: &[EquilibriumRecord],
    t: &Rational,
) -> Result<Vec<SaddleBox>, SaddleError> {
    let lins: Vec<Linearization> = records
        .iter()
        .filter(|r| r.kind == Kind::Saddle)
        .map(|r| linearize(field, r))
        .collect::<Result<_, _>>()?;
    let mut eps: Vec<Rational> = lins
        .iter()
        .map(|l| largest_valid_eps(field, l))
        .collect::<Result<_, _>>()?;
    let shrink = rat(SHRINK.0, SHRINK.1);
    loop {
        let probe: Vec<SaddleBox> = lins
            .iter()
            .zip(&eps)
            .map(|(l, e)| assemble(l, e.clone(), &rat(1 << 20, 1)))
            .collect::<Result<_, _>>()?;
        let clash = (0..probe.len())
            .flat_map(|i| (i + 1..probe.len()).map(move |j| (i, j)))
            .find(|&(i, j)| boxes_meet(&probe[i], &probe[j]));
        match clash {
            None => break,
            Some((i, j)) => {
                let k = if eps[i] >= eps[j] { i } else { j };
                eps[k] = &eps[k] * &shrink;
                if eps[k] < pow2(MIN_EPS_LOG2) {
                    return Err(SaddleError::Inconclusive);
                }
            }
        }
    }
    lins.iter()
        .zip(eps)
        .map(|(l, e)| assemble(l, e, t))
        .collect()
}

/// Separating-axis test between two box parallelograms.
fn boxes_meet(a: &SaddleBox, b: &SaddleBox) -> bool {
    let axes: Vec<[f64; 2]> = [a, b]
        .iter()
        .flat_map(|s| [[-s.q[1][0], s.q[0][0]], [-s.q[1][1], s.q[0][1]]])
        .collect();
    let project = |s: &SaddleBox, ax: [f64; 2]| {
        let vals: Vec<f64> = s.corners().iter().map(|c| c[0] * ax[0] + c[1] * ax[1]).collect();
        (
            vals.iter().cloned().fold(f64::INFINITY, f64::min),
            vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    axes.iter().all(|&ax| {
        let (a0, a1) = project(a, ax);
        let (b0, b1) = project(b, ax);
        a0 <= b1 && b0 <= a1
    })
}

/// The exit set for trajectories passing within 2/T of the saddle.
pub fn build_j_set(b: &SaddleBox, t: &Rational) -> JSet {
    let e = b.eps();
    let tt = to_f64(t);
    let yb = 2.0 / tt;
    let spacing = (e / 32.0).min(1.0 / tt);
    let m_lin = e * b.lambda.abs().max(b.mu);
    // largest power of two strictly below ε/(32M)
    let bound = e / (32.0 * m_lin);
    let mut tau = 2f64.powi(bound.log2().floor() as i32);
    if tau >= bound {
        tau /= 2.0;
    }
    let target = 0.75 * e + 3.0 * e / 32.0;
    // |u1| stays below 2/T, so only the growing coordinate decides l
    let mut steps = ((target / yb).ln() / (b.mu * tau)).ceil().max(0.0) as u64;
    while steps > 0 && yb * (b.mu * tau * (steps - 1) as f64).exp() >= target {
        steps -= 1;
    }
    while yb * (b.mu * tau * steps as f64).exp() < target {
        steps += 1;
    }
    let time = tau * steps as f64;
    let n = (2.0 * yb / spacing).ceil() as i64;
    let mut points = Vec::with_capacity(2 * (n as usize + 1));
    for sign in [-1.0, 1.0] {
        for i in 0..=n {
            let u1 = (-yb + i as f64 * spacing).min(yb);
            points.push([u1 * (b.lambda * time).exp(), sign * yb * (b.mu * time).exp()]);
        }
    }
    JSet {
        points,
        tau,
        spacing,
        steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::{classify, RBox};
    use crate::fixtures;
    use crate::rational::int;
    use proptest::prelude::*;

    fn linear_saddle() -> PolyVectorField {
        PolyVectorField::new(Poly::x().scale(&int(-1)), Poly::y())
    }

    fn record_at_origin(f: &PolyVectorField) -> EquilibriumRecord {
        classify(f, &RBox::square(&int(0), &int(0), &rat(1, 8)))
    }

    fn linear_box(eps: Rational, t: i64) -> SaddleBox {
        let f = linear_saddle();
        let lin = linearize(&f, &record_at_origin(&f)).unwrap();
        assemble(&lin, eps, &int(t)).unwrap()
    }

    #[test]
    fn linear_saddle_regions() {
        let f = linear_saddle();
        let b = build_saddle_box(&f, &record_at_origin(&f), &int(16)).unwrap();
        assert_eq!(b.epsilon_box, rat(1, 4));
        assert_eq!(b.regions, Regions { a: 1.0 / 16.0, b: 0.125, c: 0.1875, d: 0.25 });
        assert_eq!(b.q, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!((b.lambda, b.mu), (-1.0, 1.0));
    }

    #[test]
    fn double_well_eigenbasis() {
        let f = fixtures::double_well();
        let b = build_saddle_box(&f, &record_at_origin(&f), &int(16)).unwrap();
        assert_eq!((b.lambda, b.mu), (-1.0, 4.0));
        // stable axis is y, so Q swaps the coordinates
        assert_eq!(b.q, [[0.0, 1.0], [1.0, 0.0]]);
        assert!(b.epsilon_box > rat(1, 6) && b.epsilon_box <= rat(1, 4));
    }

    #[test]
    fn validation_rejects_strong_nonlinearity() {
        let f = fixtures::double_well();
        let lin = linearize(&f, &record_at_origin(&f)).unwrap();
        let shifted = [f.f1.clone(), f.f2.clone()];
        let v = Validator::new(&shifted);
        // 8R² ≤ η·4 fails beyond R = 1/4
        assert!(!v.validate(&rat(3, 10)));
        assert!(v.validate(&rat(7, 32)));
        assert!(largest_valid_eps(&f, &lin).is_ok());
    }

    #[test]
    fn small_t_rejected() {
        let f = linear_saddle();
        let r = build_saddle_box(&f, &record_at_origin(&f), &int(2));
        assert!(matches!(r, Err(SaddleError::NeedLargerT { .. })));
    }

    #[test]
    fn passage_times() {
        assert!((passage_time(-1.0, 1.0, 0.1) - 10f64.ln()).abs() < 1e-12);
        assert_eq!(passage_time(-1.0, 0.7, 0.7), 0.0);
        assert!((passage_time(-2.0, 1.0, (-2f64).exp()) - 1.0).abs() < 1e-12);
        assert_eq!(passage_time(-1.0, 1.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn j_shell() {
        let b = linear_box(rat(1, 2), 16);
        assert!(!b.j.points.is_empty());
        for p in &b.j.points {
            let n = p[0].abs().max(p[1].abs());
            assert!((0.40625..=0.53125).contains(&n), "{n}");
        }
        // the analytic first step count from y_B = 1/8
        let l = ((0.375 + 3.0 / 64.0) / 0.125f64).ln() / b.j.tau;
        assert_eq!(b.j.steps, l.ceil() as u64);
        assert!(b.j.tau < 1.0 / 32.0);
        // time bound 3ε/m with m = min(|λ|, μ)/T
        assert!(b.j.tau * b.j.steps as f64 <= 3.0 * 0.5 * 16.0);
    }

    #[test]
    fn w_grid_covers_border() {
        let b = linear_box(rat(1, 2), 16);
        let yb = 0.125;
        let mut rng = 17u64;
        for _ in 0..1000 {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let z = -yb + 2.0 * yb * ((rng >> 11) as f64 / (1u64 << 53) as f64);
            let nearest = (0..=((2.0 * yb / b.j.spacing).ceil() as i64))
                .map(|i| (-yb + i as f64 * b.j.spacing).min(yb))
                .map(|w| (w - z).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= b.j.spacing / 2.0 + 1e-15);
        }
    }

    #[test]
    fn direct_transit() {
        let b = linear_box(rat(1, 2), 16);
        match b.transit([0.3, 0.2], 0.0) {
            Transit::Exit { point, time } => {
                assert!((time - (0.40625f64 / 0.2).ln()).abs() < 1e-12);
                assert!((point[0] - 0.3 * (-time).exp()).abs() < 1e-12);
                assert!((point[0] - 0.1477).abs() < 1e-3);
                assert_eq!(point[1], 0.40625);
            }
            Transit::Fallback => panic!("expected a direct exit"),
        }
        assert_eq!(b.transit([0.3, 0.0], 0.0), Transit::Fallback);
        // already past the exit level
        match b.transit([0.1, 0.48], 1.0 / 1024.0) {
            Transit::Exit { point, time } => {
                assert_eq!(time, 0.0);
                assert!((point[1] - 0.48).abs() <= 1.0 / 2048.0);
            }
            Transit::Fallback => panic!(),
        }
    }

    #[test]
    fn core_overlap() {
        let b = linear_box(rat(1, 2), 16);
        assert!(b.square_meets_core([0.2, 0.0], 0.08));
        assert!(!b.square_meets_core([0.3, 0.3], 0.1));
    }

    #[test]
    fn separated_boxes() {
        // saddles at x = ±1/8, a source between them
        let f = PolyVectorField::new(Poly::x().sub(&Poly::x().pow(3).scale(&int(64))), Poly::y());
        let zc = crate::equilibria::zero_census(&f, 8).unwrap();
        let boxes = build_saddle_boxes(&f, &zc.records, &int(1024)).unwrap();
        assert_eq!(boxes.len(), 2);
        assert!(!boxes_meet(&boxes[0], &boxes[1]));
    }

    proptest! {
        #[test]
        fn quadrants_are_invariant(x in -0.2f64..0.2, y in -0.2f64..0.2, t in 0.0f64..3.0) {
            prop_assume!(x != 0.0 && y != 0.0);
            let u = [x * (-t).exp(), y * t.exp()];
            prop_assert_eq!(u[0].signum(), x.signum());
            prop_assert_eq!(u[1].signum(), y.signum());
        }

        #[test]
        fn exits_match_closed_form(x in -0.375f64..0.375, y in -0.375f64..0.375) {
            let b = linear_box(rat(1, 2), 16);
            let rho = 1.0 / 4096.0;
            prop_assume!(y != 0.0);
            if let Transit::Exit { point, time } = b.transit([x, y], rho) {
                let exact = if y.abs() >= b.exit_level() {
                    [x, y]
                } else {
                    [x * (-time).exp(), b.exit_level().copysign(y)]
                };
                prop_assert!((point[0] - exact[0]).abs() <= rho / 2.0 + 1e-15);
                prop_assert!((point[1] - exact[1]).abs() <= rho / 2.0 + 1e-15);
                prop_assert_eq!(b.region(exact), Region::D);
            }
        }
    }
}

//! Planar polynomial vector fields with exact rational coefficients, their
//! evaluation, and validated bounds over the closed unit disk.

use crate::rational::{self, format_rational, parse_rational, to_f64, Rational};
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::TAU;

/// Points are accepted up to this far outside the unit disk.
pub const DOMAIN_SLACK: f64 = 1.0 / (1u64 << 20) as f64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("point ({0}, {1}) lies outside the unit disk")]
    OutsideDomain(f64, f64),
    #[error("field points outward at angle {theta:.6} (f.x = {value:.3e} > 0)")]
    InwardViolation { theta: f64, value: f64 },
    #[error("inward test inconclusive within the refinement budget")]
    Inconclusive,
    #[error("invalid field description: {0}")]
    Invalid(String),
}

/// Sparse bivariate polynomial, monomial `x^i y^j` keyed by `(i, j)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Poly {
    terms: BTreeMap<(u32, u32), Rational>,
}

impl Poly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Rational) -> Self {
        Self::monomial(0, 0, c)
    }

    pub fn monomial(i: u32, j: u32, c: Rational) -> Self {
        let mut p = Self::zero();
        p.add_term(i, j, c);
        p
    }

    pub fn x() -> Self {
        Self::monomial(1, 0, Rational::one())
    }

    pub fn y() -> Self {
        Self::monomial(0, 1, Rational::one())
    }

    pub fn from_terms<I: IntoIterator<Item = (u32, u32, Rational)>>(it: I) -> Self {
        let mut p = Self::zero();
        for (i, j, c) in it {
            p.add_term(i, j, c);
        }
        p
    }

    pub fn add_term(&mut self, i: u32, j: u32, c: Rational) {
        if c.is_zero() {
            return;
        }
        let e = self.terms.entry((i, j)).or_insert_with(Rational::zero);
        *e += c;
        if e.is_zero() {
            self.terms.remove(&(i, j));
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (u32, u32, &Rational)> {
        self.terms.iter().map(|(&(i, j), c)| (i, j, c))
    }

    pub fn coefficient(&self, i: u32, j: u32) -> Rational {
        self.terms.get(&(i, j)).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; 0 for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|&(i, j)| i + j).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &Rational, y: &Rational) -> Rational {
        let d = self.degree() as usize;
        let xp = powers(x, d);
        let yp = powers(y, d);
        let mut s = Rational::zero();
        for (&(i, j), c) in &self.terms {
            s += c * &xp[i as usize] * &yp[j as usize];
        }
        s
    }

    pub fn eval_f64(&self, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|(&(i, j), c)| to_f64(c) * x.powi(i as i32) * y.powi(j as i32))
            .sum()
    }

    pub fn partial_x(&self) -> Poly {
        Poly::from_terms(
            self.terms
                .iter()
                .filter(|((i, _), _)| *i > 0)
                .map(|(&(i, j), c)| (i - 1, j, c * Rational::from_integer(BigInt::from(i)))),
        )
    }

    pub fn partial_y(&self) -> Poly {
        Poly::from_terms(
            self.terms
                .iter()
                .filter(|((_, j), _)| *j > 0)
                .map(|(&(i, j), c)| (i, j - 1, c * Rational::from_integer(BigInt::from(j)))),
        )
    }

    /// Σ |c|, a bound for |p| on the square ‖x‖∞ ≤ 1.
    pub fn abs_sum(&self) -> Rational {
        self.terms.values().map(|c| c.abs()).sum()
    }

    /// Σ |c| R^(i+j), a bound for |p| on the square ‖x‖∞ ≤ R.
    pub fn abs_sum_on(&self, r: &Rational) -> Rational {
        let d = self.degree() as usize;
        let rp = powers(r, d);
        self.terms
            .iter()
            .map(|(&(i, j), c)| c.abs() * &rp[(i + j) as usize])
            .sum()
    }

    pub fn scale(&self, k: &Rational) -> Poly {
        Poly::from_terms(self.terms.iter().map(|(&(i, j), c)| (i, j, c * k)))
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut p = self.clone();
        for (&(i, j), c) in &o.terms {
            p.add_term(i, j, c.clone());
        }
        p
    }

    pub fn sub(&self, o: &Poly) -> Poly {
        self.add(&o.scale(&-Rational::one()))
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut p = Poly::zero();
        for (&(i, j), c) in &self.terms {
            for (&(k, l), d) in &o.terms {
                p.add_term(i + k, j + l, c * d);
            }
        }
        p
    }

    pub fn pow(&self, n: u32) -> Poly {
        let mut r = Poly::constant(Rational::one());
        for _ in 0..n {
            r = r.mul(self);
        }
        r
    }

    /// Substitutes `x -> a`, `y -> b`.
    pub fn compose(&self, a: &Poly, b: &Poly) -> Poly {
        let d = self.degree();
        let ap: Vec<Poly> = (0..=d).scan(Poly::constant(Rational::one()), |s, _| {
            let cur = s.clone();
            *s = s.mul(a);
            Some(cur)
        }).collect();
        let bp: Vec<Poly> = (0..=d).scan(Poly::constant(Rational::one()), |s, _| {
            let cur = s.clone();
            *s = s.mul(b);
            Some(cur)
        }).collect();
        let mut r = Poly::zero();
        for (&(i, j), c) in &self.terms {
            r = r.add(&ap[i as usize].mul(&bp[j as usize]).scale(c));
        }
        r
    }

    /// Taylor shift: the polynomial `d -> p(x0 + d)`.
    pub fn shift(&self, x0: &Rational, y0: &Rational) -> Poly {
        let a = Poly::x().add(&Poly::constant(x0.clone()));
        let b = Poly::y().add(&Poly::constant(y0.clone()));
        self.compose(&a, &b)
    }

    /// Terms of total degree exactly `deg`.
    pub fn homogeneous_part(&self, deg: u32) -> Poly {
        Poly::from_terms(
            self.terms
                .iter()
                .filter(|((i, j), _)| i + j == deg)
                .map(|(&(i, j), c)| (i, j, c.clone())),
        )
    }
}

fn powers(x: &Rational, d: usize) -> Vec<Rational> {
    let mut v = Vec::with_capacity(d + 1);
    let mut cur = Rational::one();
    for _ in 0..=d {
        v.push(cur.clone());
        cur = &cur * x;
    }
    v
}

/// The field `f = (f1, f2)` of `x' = f(x)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FieldFile", into = "FieldFile")]
pub struct PolyVectorField {
    pub f1: Poly,
    pub f2: Poly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TermEntry {
    i: u32,
    j: u32,
    c: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FieldFile {
    degree: u32,
    f1: Vec<TermEntry>,
    f2: Vec<TermEntry>,
}

fn entries(p: &Poly) -> Vec<TermEntry> {
    p.terms()
        .map(|(i, j, c)| TermEntry {
            i,
            j,
            c: format_rational(c),
        })
        .collect()
}

fn poly_from_entries(es: &[TermEntry]) -> Result<Poly, FieldError> {
    let mut map = BTreeMap::new();
    for e in es {
        let c = parse_rational(&e.c).map_err(|err| FieldError::Invalid(err.to_string()))?;
        if map.insert((e.i, e.j), c).is_some() {
            return Err(FieldError::Invalid(format!(
                "duplicate monomial x^{} y^{}",
                e.i, e.j
            )));
        }
    }
    Ok(Poly::from_terms(map.into_iter().map(|((i, j), c)| (i, j, c))))
}

impl From<PolyVectorField> for FieldFile {
    fn from(f: PolyVectorField) -> Self {
        FieldFile {
            degree: f.degree(),
            f1: entries(&f.f1),
            f2: entries(&f.f2),
        }
    }
}

impl TryFrom<FieldFile> for PolyVectorField {
    type Error = FieldError;

    fn try_from(ff: FieldFile) -> Result<Self, FieldError> {
        let f = PolyVectorField::new(poly_from_entries(&ff.f1)?, poly_from_entries(&ff.f2)?);
        if f.degree() != ff.degree {
            return Err(FieldError::Invalid(format!(
                "declared degree {} but highest nonzero monomial has degree {}",
                ff.degree,
                f.degree()
            )));
        }
        Ok(f)
    }
}

fn check_domain(x: f64, y: f64) -> Result<(), FieldError> {
    if (x * x + y * y).sqrt() > 1.0 + DOMAIN_SLACK || !x.is_finite() || !y.is_finite() {
        Err(FieldError::OutsideDomain(x, y))
    } else {
        Ok(())
    }
}

impl PolyVectorField {
    pub fn new(f1: Poly, f2: Poly) -> Self {
        PolyVectorField { f1, f2 }
    }

    pub fn degree(&self) -> u32 {
        self.f1.degree().max(self.f2.degree())
    }

    pub fn from_json(s: &str) -> Result<Self, FieldError> {
        serde_json::from_str(s).map_err(|e| FieldError::Invalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("field serializes")
    }

    /// Exact value at a rational point.
    pub fn evaluate(&self, p: &[Rational; 2]) -> Result<[Rational; 2], FieldError> {
        check_domain(to_f64(&p[0]), to_f64(&p[1]))?;
        Ok(self.evaluate_unchecked(p))
    }

    pub fn evaluate_unchecked(&self, p: &[Rational; 2]) -> [Rational; 2] {
        [self.f1.eval(&p[0], &p[1]), self.f2.eval(&p[0], &p[1])]
    }

    /// Float value together with a bound on its rounding error (max-norm).
    pub fn evaluate_f64(&self, p: [f64; 2]) -> Result<([f64; 2], f64), FieldError> {
        check_domain(p[0], p[1])?;
        Ok(self.compile().eval_with_bound(p))
    }

    pub fn jacobian(&self, p: &[Rational; 2]) -> Result<[[Rational; 2]; 2], FieldError> {
        check_domain(to_f64(&p[0]), to_f64(&p[1]))?;
        Ok(self.jacobian_unchecked(p))
    }

    pub fn jacobian_unchecked(&self, p: &[Rational; 2]) -> [[Rational; 2]; 2] {
        let (x, y) = (&p[0], &p[1]);
        [
            [self.f1.partial_x().eval(x, y), self.f1.partial_y().eval(x, y)],
            [self.f2.partial_x().eval(x, y), self.f2.partial_y().eval(x, y)],
        ]
    }

    pub fn jacobian_f64(&self, p: [f64; 2]) -> Result<[[f64; 2]; 2], FieldError> {
        check_domain(p[0], p[1])?;
        Ok(self.compile().jacobian(p))
    }

    /// The time-reversed field `-f`.
    pub fn negated(&self) -> Self {
        let m = -Rational::one();
        PolyVectorField::new(self.f1.scale(&m), self.f2.scale(&m))
    }

    /// `g(x) = R f(R^{-1} x)` for an invertible rational matrix `R`.
    pub fn conjugate_linear(&self, r: [[Rational; 2]; 2]) -> Self {
        let det = &r[0][0] * &r[1][1] - &r[0][1] * &r[1][0];
        assert!(!det.is_zero(), "singular change of basis");
        let inv = [
            [&r[1][1] / &det, -&r[0][1] / &det],
            [-&r[1][0] / &det, &r[0][0] / &det],
        ];
        let lin = |a: &Rational, b: &Rational| {
            Poly::x().scale(a).add(&Poly::y().scale(b))
        };
        let u = lin(&inv[0][0], &inv[0][1]);
        let v = lin(&inv[1][0], &inv[1][1]);
        let g1 = self.f1.compose(&u, &v);
        let g2 = self.f2.compose(&u, &v);
        PolyVectorField::new(
            g1.scale(&r[0][0]).add(&g2.scale(&r[0][1])),
            g1.scale(&r[1][0]).add(&g2.scale(&r[1][1])),
        )
    }

    pub fn compile(&self) -> FloatField {
        FloatField::new(self)
    }
}

#[derive(Debug, Clone)]
struct FloatPoly {
    terms: Vec<(u8, u8, f64)>,
}

impl FloatPoly {
    fn new(p: &Poly) -> Self {
        FloatPoly {
            terms: p
                .terms()
                .map(|(i, j, c)| (i as u8, j as u8, to_f64(c)))
                .collect(),
        }
    }

    #[inline]
    fn eval(&self, xp: &Powers, yp: &Powers) -> f64 {
        let mut s = 0.0;
        for &(i, j, c) in &self.terms {
            // the mask keeps the indexing free of bounds checks
            s += c * xp[i as usize & (MAX_DEG - 1)] * yp[j as usize & (MAX_DEG - 1)];
        }
        s
    }

    #[inline]
    fn abs_eval(&self, xp: &Powers, yp: &Powers) -> f64 {
        let mut s = 0.0;
        for &(i, j, c) in &self.terms {
            s += (c * xp[i as usize & (MAX_DEG - 1)] * yp[j as usize & (MAX_DEG - 1)]).abs();
        }
        s
    }
}

const MAX_DEG: usize = 32;
type Powers = [f64; MAX_DEG];

/// Binary64 evaluator used by the integrators.
#[derive(Debug, Clone)]
pub struct FloatField {
    f: [FloatPoly; 2],
    df: [[FloatPoly; 2]; 2],
    deg: usize,
    gamma: f64,
}

impl FloatField {
    pub fn new(field: &PolyVectorField) -> Self {
        let deg = field.degree() as usize;
        assert!(deg < MAX_DEG, "degree {deg} exceeds the float evaluator limit");
        let f = [FloatPoly::new(&field.f1), FloatPoly::new(&field.f2)];
        let df = [
            [
                FloatPoly::new(&field.f1.partial_x()),
                FloatPoly::new(&field.f1.partial_y()),
            ],
            [
                FloatPoly::new(&field.f2.partial_x()),
                FloatPoly::new(&field.f2.partial_y()),
            ],
        ];
        let n = field.f1.len().max(field.f2.len()) as f64;
        // powers (deg mults), term product (2), coefficient rounding (1), summation (n)
        let k = 2.0 * deg as f64 + n + 4.0;
        let u = f64::EPSILON / 2.0;
        FloatField {
            f,
            df,
            deg,
            gamma: 1.01 * k * u / (1.0 - k * u),
        }
    }

    #[inline]
    fn powers(&self, p: [f64; 2]) -> (Powers, Powers) {
        let mut xp = [1.0; MAX_DEG];
        let mut yp = [1.0; MAX_DEG];
        for k in 1..=self.deg {
            xp[k] = xp[k - 1] * p[0];
            yp[k] = yp[k - 1] * p[1];
        }
        (xp, yp)
    }

    #[inline]
    pub fn eval(&self, p: [f64; 2]) -> [f64; 2] {
        let (xp, yp) = self.powers(p);
        [self.f[0].eval(&xp, &yp), self.f[1].eval(&xp, &yp)]
    }

    pub fn eval_with_bound(&self, p: [f64; 2]) -> ([f64; 2], f64) {
        let (xp, yp) = self.powers(p);
        let v = [self.f[0].eval(&xp, &yp), self.f[1].eval(&xp, &yp)];
        let a = self.f[0].abs_eval(&xp, &yp).max(self.f[1].abs_eval(&xp, &yp));
        (v, self.gamma * a + f64::MIN_POSITIVE)
    }

    #[inline]
    pub fn jacobian(&self, p: [f64; 2]) -> [[f64; 2]; 2] {
        let (xp, yp) = self.powers(p);
        [
            [self.df[0][0].eval(&xp, &yp), self.df[0][1].eval(&xp, &yp)],
            [self.df[1][0].eval(&xp, &yp), self.df[1][1].eval(&xp, &yp)],
        ]
    }

    #[inline]
    pub fn eval_and_jacobian(&self, p: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let (xp, yp) = self.powers(p);
        (
            [self.f[0].eval(&xp, &yp), self.f[1].eval(&xp, &yp)],
            [
                [self.df[0][0].eval(&xp, &yp), self.df[0][1].eval(&xp, &yp)],
                [self.df[1][0].eval(&xp, &yp), self.df[1][1].eval(&xp, &yp)],
            ],
        )
    }
}

/// Bounds used by the integrators and the inward check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldBounds {
    /// Bound on ‖f‖ and on the operator norm of Df over the disk, in any of
    /// the l1, l2 and max norms.
    #[serde(with = "crate::rational::serde_str")]
    pub m: Rational,
    /// Lipschitz constant of f over the disk.
    #[serde(with = "crate::rational::serde_str")]
    pub l: Rational,
    /// Certified lower bound on −f(x)·x over the unit circle.
    #[serde(with = "crate::rational::serde_str")]
    pub inward_margin: Rational,
}

impl FieldBounds {
    pub fn m_f64(&self) -> f64 {
        rational::next_up(to_f64(&self.m))
    }

    pub fn l_f64(&self) -> f64 {
        rational::next_up(to_f64(&self.l))
    }
}

/// `(M, L)` from absolute coefficient sums on the square of half-width `r`.
///
/// Summing both components bounds the vector in every norm we use; summing all
/// four partials bounds every induced matrix norm.
pub fn coefficient_bounds_on(field: &PolyVectorField, r: &Rational) -> (Rational, Rational) {
    let fb = field.f1.abs_sum_on(r) + field.f2.abs_sum_on(r);
    let db: Rational = [
        field.f1.partial_x(),
        field.f1.partial_y(),
        field.f2.partial_x(),
        field.f2.partial_y(),
    ]
    .iter()
    .map(|p| p.abs_sum_on(r))
    .sum();
    let m = if fb > db { fb } else { db.clone() };
    (m, db)
}

pub fn coefficient_bounds(field: &PolyVectorField) -> (Rational, Rational) {
    coefficient_bounds_on(field, &Rational::one())
}

pub const DEFAULT_INWARD_BUDGET: usize = 1 << 22;

pub fn compute_bounds(field: &PolyVectorField) -> Result<FieldBounds, FieldError> {
    compute_bounds_with_budget(field, DEFAULT_INWARD_BUDGET)
}

/// As [`compute_bounds`], with an explicit cap on circle evaluations.
pub fn compute_bounds_with_budget(
    field: &PolyVectorField,
    budget: usize,
) -> Result<FieldBounds, FieldError> {
    let (m, l) = coefficient_bounds(field);
    let margin = inward_margin(field, &m, budget)?;
    Ok(FieldBounds {
        m,
        l,
        inward_margin: margin,
    })
}

/// Validated minimum of g(θ) = −f(cos θ, sin θ)·(cos θ, sin θ).
///
/// |g'| ≤ ‖f‖ + ‖Df‖ ≤ 2M, so an interval of width w around a sample is
/// bounded below by g(mid) − M·w minus rounding slack.
fn inward_margin(field: &PolyVectorField, m: &Rational, budget: usize) -> Result<Rational, FieldError> {
    let ff = field.compile();
    let mf = rational::next_up(to_f64(m));
    let lip = 2.0 * mf * (1.0 + 1e-12);
    // cos/sin and the point's distance from the circle perturb g by about
    // |∇g|·ulp; 1e-13 relative is generous for |θ| ≤ 2π.
    let point_slack = 1e-13 * (mf + 1.0);
    let g = |t: f64| -> (f64, f64) {
        let (s, c) = t.sin_cos();
        let (v, err) = ff.eval_with_bound([c, s]);
        let val = -(v[0] * c + v[1] * s);
        (val, 2.0 * err + point_slack + val.abs() * 4.0 * f64::EPSILON)
    };
    let span = rational::next_up(TAU) + 1e-14;
    let n0 = 256usize;
    let mut work: Vec<(f64, f64)> = (0..n0)
        .map(|k| (span * k as f64 / n0 as f64, span * (k + 1) as f64 / n0 as f64))
        .collect();
    let mut evals = 0usize;
    let mut sampled_min = f64::INFINITY;
    let mut settled_min = f64::INFINITY;
    while !work.is_empty() {
        let mut leaves = Vec::with_capacity(work.len());
        for &(a, b) in &work {
            let mid = 0.5 * (a + b);
            let (v, err) = g(mid);
            evals += 1;
            if v + err < 0.0 {
                return Err(FieldError::InwardViolation {
                    theta: mid,
                    value: -v,
                });
            }
            sampled_min = sampled_min.min(v);
            let lb = v - err - lip * (b - a) * 0.5 * (1.0 + 1e-12);
            leaves.push((a, b, lb));
        }
        let tol = (1e-5 * sampled_min.abs()).max(1e-13);
        let mut next = Vec::new();
        for (a, b, lb) in leaves {
            if lb <= 0.0 || lb < sampled_min - tol {
                if evals + 2 * next.len() + 2 > budget {
                    if lb <= 0.0 {
                        return Err(FieldError::Inconclusive);
                    }
                    settled_min = settled_min.min(lb);
                    continue;
                }
                let mid = 0.5 * (a + b);
                next.push((a, mid));
                next.push((mid, b));
            } else {
                settled_min = settled_min.min(lb);
            }
        }
        work = next;
    }
    if settled_min <= 0.0 || !settled_min.is_finite() {
        return Err(FieldError::Inconclusive);
    }
    Ok(rational::from_f64(settled_min))
}

/// Checks `f(x)·x ≤ 0` at `n` equally spaced circle points (used by tests and
/// diagnostics; not a certificate).
pub fn sampled_outward_point(field: &PolyVectorField, n: usize) -> Option<f64> {
    let ff = field.compile();
    (0..n)
        .map(|k| TAU * k as f64 / n as f64)
        .find(|&t| {
            let (s, c) = t.sin_cos();
            let v = ff.eval([c, s]);
            v[0] * c + v[1] * s > 1e-12
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, rat};

    fn linear_focus() -> PolyVectorField {
        PolyVectorField::new(
            Poly::from_terms([(1, 0, int(-1)), (0, 1, int(-1))]),
            Poly::from_terms([(1, 0, int(1)), (0, 1, int(-1))]),
        )
    }

    fn circle(g: Rational) -> PolyVectorField {
        // (−y − x(r²−G), x − y(r²−G))
        let r2g = Poly::from_terms([(2, 0, int(1)), (0, 2, int(1)), (0, 0, -g)]);
        PolyVectorField::new(
            Poly::y().scale(&int(-1)).sub(&Poly::x().mul(&r2g)),
            Poly::x().sub(&Poly::y().mul(&r2g)),
        )
    }

    fn double_well() -> PolyVectorField {
        PolyVectorField::new(
            Poly::from_terms([(1, 0, int(4)), (3, 0, int(-8))]),
            Poly::from_terms([(0, 1, int(-1))]),
        )
    }

    #[test]
    fn evaluate_examples() {
        let f = linear_focus();
        assert_eq!(f.evaluate(&[int(1), int(0)]).unwrap(), [int(-1), int(1)]);
        let c = circle(rat(1, 4));
        assert_eq!(c.evaluate(&[int(0), int(0)]).unwrap(), [int(0), int(0)]);
        assert_eq!(c.evaluate(&[rat(1, 2), int(0)]).unwrap(), [int(0), rat(1, 2)]);
        assert!(matches!(
            c.evaluate(&[int(1), int(1)]),
            Err(FieldError::OutsideDomain(..))
        ));
    }

    #[test]
    fn jacobian_examples() {
        let f = linear_focus();
        assert_eq!(
            f.jacobian(&[rat(1, 3), rat(-1, 5)]).unwrap(),
            [[int(-1), int(-1)], [int(1), int(-1)]]
        );
        let dw = double_well();
        assert_eq!(
            dw.jacobian(&[int(0), int(0)]).unwrap(),
            [[int(4), int(0)], [int(0), int(-1)]]
        );
        let j = dw.jacobian_f64([0.5f64.sqrt(), 0.0]).unwrap();
        assert!((j[0][0] + 8.0).abs() < 1e-12 && j[1][1] == -1.0);
    }

    #[test]
    fn bounds_examples() {
        let contract = PolyVectorField::new(
            Poly::monomial(1, 0, int(-1)),
            Poly::monomial(0, 1, int(-1)),
        );
        let b = compute_bounds(&contract).unwrap();
        assert!(to_f64(&b.m) >= 2f64.sqrt());
        assert!((to_f64(&b.inward_margin) - 1.0).abs() < 1e-4);
        assert!(to_f64(&b.inward_margin) <= 1.0);

        let push = PolyVectorField::new(Poly::constant(int(1)), Poly::zero());
        assert!(matches!(
            compute_bounds(&push),
            Err(FieldError::InwardViolation { .. })
        ));

        let b = compute_bounds(&double_well()).unwrap();
        let m = to_f64(&b.inward_margin);
        assert!(m <= 7.0 / 32.0 && m > 7.0 / 32.0 - 1e-4, "margin {m}");
    }

    #[test]
    fn json_round_trip_is_exact() {
        let f = circle(rat(1, 3));
        let s = f.to_json();
        let g = PolyVectorField::from_json(&s).unwrap();
        assert_eq!(f, g);
        assert!(s.contains("\"c\": \"-1/3\"") || s.contains("\"c\": \"1/3\""));
    }

    #[test]
    fn json_rejects_wrong_degree() {
        let s = r#"{"degree": 2, "f1": [{"i":1,"j":0,"c":"1/1"}], "f2": []}"#;
        assert!(PolyVectorField::from_json(s).is_err());
    }

    #[test]
    fn conjugation_by_rotation_preserves_radial_structure() {
        let f = circle(rat(1, 4));
        let r = [[rat(3, 5), rat(-4, 5)], [rat(4, 5), rat(3, 5)]];
        // circle field is rotation invariant
        assert_eq!(f.conjugate_linear(r), f);
    }
}

//! Zeros of the field: exclusion, Krawczyk certification and refinement on
//! exact rational boxes, then classification by the Jacobian.

use crate::field::{Poly, PolyVectorField};
use crate::geom::{Cell, PixelSet};
use crate::rational::{self, from_f64, int, next_down, next_up, rat, to_f64, Rational};
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EquilibriumError {
    #[error("{} pixels unresolved after the subdivision budget", unresolved.len())]
    Inconclusive { unresolved: Vec<RBox> },
    #[error("k must be positive")]
    InvalidK,
}

/// Axis-aligned closed box `[x0, x1] × [y0, y1]` with rational corners.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RBox {
    #[serde(with = "rational::serde_str")]
    pub x0: Rational,
    #[serde(with = "rational::serde_str")]
    pub x1: Rational,
    #[serde(with = "rational::serde_str")]
    pub y0: Rational,
    #[serde(with = "rational::serde_str")]
    pub y1: Rational,
}

impl RBox {
    pub fn square(cx: &Rational, cy: &Rational, r: &Rational) -> Self {
        RBox {
            x0: cx - r,
            x1: cx + r,
            y0: cy - r,
            y1: cy + r,
        }
    }

    pub fn center(&self) -> [Rational; 2] {
        let two = int(2);
        [(&self.x0 + &self.x1) / &two, (&self.y0 + &self.y1) / &two]
    }

    pub fn radii(&self) -> [Rational; 2] {
        let two = int(2);
        [(&self.x1 - &self.x0) / &two, (&self.y1 - &self.y0) / &two]
    }

    pub fn width(&self) -> Rational {
        rational::max(&(&self.x1 - &self.x0), &(&self.y1 - &self.y0))
    }

    pub fn center_f64(&self) -> [f64; 2] {
        let c = self.center();
        [to_f64(&c[0]), to_f64(&c[1])]
    }

    pub fn contains_box(&self, o: &RBox) -> bool {
        self.x0 <= o.x0 && o.x1 <= self.x1 && self.y0 <= o.y0 && o.y1 <= self.y1
    }

    pub fn contains(&self, p: &[Rational; 2]) -> bool {
        self.x0 <= p[0] && p[0] <= self.x1 && self.y0 <= p[1] && p[1] <= self.y1
    }

    fn inflate(&self, k: &Rational) -> RBox {
        let r = self.radii();
        RBox {
            x0: &self.x0 - &r[0] * k,
            x1: &self.x1 + &r[0] * k,
            y0: &self.y0 - &r[1] * k,
            y1: &self.y1 + &r[1] * k,
        }
    }

    fn quarters(&self) -> [RBox; 4] {
        let c = self.center();
        [
            RBox { x0: self.x0.clone(), x1: c[0].clone(), y0: self.y0.clone(), y1: c[1].clone() },
            RBox { x0: c[0].clone(), x1: self.x1.clone(), y0: self.y0.clone(), y1: c[1].clone() },
            RBox { x0: self.x0.clone(), x1: c[0].clone(), y0: c[1].clone(), y1: self.y1.clone() },
            RBox { x0: c[0].clone(), x1: self.x1.clone(), y0: c[1].clone(), y1: self.y1.clone() },
        ]
    }

    /// Misses the closed unit disk entirely.
    fn outside_disk(&self) -> bool {
        let near = |lo: &Rational, hi: &Rational| {
            if lo.is_positive() {
                lo.clone()
            } else if hi.is_negative() {
                hi.clone()
            } else {
                Rational::zero()
            }
        };
        let nx = near(&self.x0, &self.x1);
        let ny = near(&self.y0, &self.y1);
        &nx * &nx + &ny * &ny > Rational::one()
    }
}

/// `[mid − rad, mid + rad]`.
#[derive(Debug, Clone)]
struct Enclosure {
    mid: Rational,
    rad: Rational,
}

impl Enclosure {
    fn contains_zero(&self) -> bool {
        self.mid.abs() <= self.rad
    }
}

/// Centered-form enclosure of `p` over the box with center `c`, radii `r`.
fn enclose(p: &Poly, c: &[Rational; 2], r: &[Rational; 2]) -> Enclosure {
    let s = p.shift(&c[0], &c[1]);
    let mut rad = Rational::zero();
    for (i, j, a) in s.terms() {
        if i + j > 0 {
            rad += a.abs() * pow(&r[0], i) * pow(&r[1], j);
        }
    }
    Enclosure {
        mid: s.coefficient(0, 0),
        rad,
    }
}

fn pow(x: &Rational, n: u32) -> Rational {
    let mut v = Rational::one();
    for _ in 0..n {
        v *= x;
    }
    v
}

const DYADIC_BITS: u32 = 64;

fn dyadic(q: &Rational) -> Rational {
    rational::round_down(q, DYADIC_BITS)
}

/// Precomputed partial derivatives.
struct Sys {
    f: [Poly; 2],
    df: [[Poly; 2]; 2],
}

impl Sys {
    fn new(field: &PolyVectorField) -> Self {
        Sys {
            f: [field.f1.clone(), field.f2.clone()],
            df: [
                [field.f1.partial_x(), field.f1.partial_y()],
                [field.f2.partial_x(), field.f2.partial_y()],
            ],
        }
    }

    fn excludes_zero(&self, b: &RBox) -> bool {
        let c = b.center();
        let r = b.radii();
        self.f.iter().any(|p| !enclose(p, &c, &r).contains_zero())
    }

    /// Krawczyk operator on `b`. Returns the image box when it lies in the
    /// interior of `b` (unique zero in `b`, contained in the image).
    fn krawczyk(&self, b: &RBox) -> Option<RBox> {
        self.krawczyk_image(b, true)
    }

    /// The image `K(b)`; every zero in `b` lies in it. With `strict`, `None`
    /// unless the image sits in the interior of `b`.
    fn krawczyk_image(&self, b: &RBox, strict: bool) -> Option<RBox> {
        let c = b.center();
        let r = b.radii();
        let fc = [self.f[0].eval(&c[0], &c[1]), self.f[1].eval(&c[0], &c[1])];
        let a = [
            [self.df[0][0].eval(&c[0], &c[1]), self.df[0][1].eval(&c[0], &c[1])],
            [self.df[1][0].eval(&c[0], &c[1]), self.df[1][1].eval(&c[0], &c[1])],
        ];
        let det = &a[0][0] * &a[1][1] - &a[0][1] * &a[1][0];
        if det.is_zero() {
            return None;
        }
        let y = [
            [dyadic(&(&a[1][1] / &det)), dyadic(&(-&a[0][1] / &det))],
            [dyadic(&(-&a[1][0] / &det)), dyadic(&(&a[0][0] / &det))],
        ];
        let j: Vec<Vec<Enclosure>> = self
            .df
            .iter()
            .map(|row| row.iter().map(|p| enclose(p, &c, &r)).collect())
            .collect();
        let mut out = Vec::with_capacity(2);
        for i in 0..2 {
            let m = &c[i] - (&y[i][0] * &fc[0] + &y[i][1] * &fc[1]);
            let mut spread = Rational::zero();
            for k in 0..2 {
                // (I − Y J)_{ik} = δ_ik − Σ_l Y_il J_lk
                let mid = if i == k { Rational::one() } else { Rational::zero() }
                    - (&y[i][0] * &j[0][k].mid + &y[i][1] * &j[1][k].mid);
                let rad = y[i][0].abs() * &j[0][k].rad + y[i][1].abs() * &j[1][k].rad;
                spread += (mid.abs() + rad) * &r[k];
            }
            if strict && (&m - &c[i]).abs() + &spread >= r[i] {
                return None;
            }
            out.push((&m - &spread, &m + &spread));
        }
        let (x, yy) = (out[0].clone(), out[1].clone());
        Some(RBox {
            x0: x.0,
            x1: x.1,
            y0: yy.0,
            y1: yy.1,
        })
    }

    /// Shrinks a certified box by iterating `X ← K(X) ∩ X`.
    fn refine(&self, mut b: RBox, target: &Rational) -> RBox {
        for _ in 0..200 {
            if &b.width() <= target {
                break;
            }
            let Some(k) = self.krawczyk_image(&b, false) else { break };
            let next = RBox {
                x0: rational::max(&rational::round_down(&k.x0, DYADIC_BITS), &b.x0),
                x1: rational::min(&rational::round_up(&k.x1, DYADIC_BITS), &b.x1),
                y0: rational::max(&rational::round_down(&k.y0, DYADIC_BITS), &b.y0),
                y1: rational::min(&rational::round_up(&k.y1, DYADIC_BITS), &b.y1),
            };
            if next.x0 > next.x1 || next.y0 > next.y1 {
                break;
            }
            if next.width() > b.width() * rat(9, 10) || next == b {
                b = next;
                break;
            }
            b = next;
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Sink,
    Source,
    Saddle,
    Inconclusive,
}

/// Real and imaginary parts as outward-rounded float intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: [f64; 2],
    pub im: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRecord {
    /// Isolating box: exactly one zero of f lies inside.
    #[serde(rename = "box")]
    pub bbox: RBox,
    /// Tiny refined box around the zero.
    pub refined: RBox,
    pub kind: Kind,
    pub eigenvalues: [Eigenvalue; 2],
    /// Unit eigenvectors, stable direction first (saddles only).
    pub eigenvectors: Option<[[f64; 2]; 2]>,
    /// Smallest certified |Re λ|.
    pub margin: f64,
}

impl EquilibriumRecord {
    pub fn location(&self) -> [f64; 2] {
        self.refined.center_f64()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroCensus {
    pub count: usize,
    pub records: Vec<EquilibriumRecord>,
    #[serde(with = "rational::serde_str")]
    pub eps: Rational,
    pub set: PixelSet,
    /// Deepest subdivision used; the exclusion threshold exponent is k plus this.
    pub rounds: u32,
}

pub const HYPERBOLIC_MARGIN: f64 = 1.0 / (1u64 << 30) as f64;
const MAX_DEPTH: u32 = 24;
const REFINE_BITS: i32 = 48;

struct Found {
    certified: RBox,
    refined: RBox,
}

/// Certifies every zero in the given boxes by exclusion and Krawczyk with
/// subdivision. Returns the certified zeros and the unresolved boxes.
fn isolate(sys: &Sys, start: Vec<RBox>, max_depth: u32) -> (Vec<Found>, Vec<RBox>, u32) {
    let mut found: Vec<Found> = Vec::new();
    let mut unresolved = Vec::new();
    let mut work: Vec<(RBox, u32)> = start.into_iter().map(|b| (b, 0)).collect();
    let mut deepest = 0;
    let quarter = rat(1, 4);
    let target = rational::pow2(-REFINE_BITS);
    while let Some((b, depth)) = work.pop() {
        deepest = deepest.max(depth);
        if b.outside_disk() || sys.excludes_zero(&b) {
            continue;
        }
        // a zero already certified inside a box that covers this one
        if found.iter().any(|f| f.certified.contains_box(&b)) {
            continue;
        }
        let inflated = b.inflate(&quarter);
        if sys.krawczyk(&inflated).is_some() {
            let refined = sys.refine(inflated.clone(), &target);
            if !refined.outside_disk() && !found.iter().any(|f| f.certified.contains_box(&refined)) {
                found.retain(|f| !inflated.contains_box(&f.refined));
                found.push(Found {
                    certified: inflated,
                    refined,
                });
            }
            continue;
        }
        if depth >= max_depth {
            unresolved.push(b);
            continue;
        }
        for q in b.quarters() {
            work.push((q, depth + 1));
        }
    }
    (found, unresolved, deepest)
}

/// Count, isolate and classify the zeros of `f` in the disk, starting from
/// pixels of side 1/k.
pub fn zero_census(field: &PolyVectorField, k: u32) -> Result<ZeroCensus, EquilibriumError> {
    if k == 0 {
        return Err(EquilibriumError::InvalidK);
    }
    let sys = Sys::new(field);
    let side = rat(1, k as i64);
    let half = &side / int(2);
    let n = k as i64;
    let mut pixels = Vec::new();
    for i in -n..n {
        for j in -n..n {
            let cx = &side * int(i) + &half;
            let cy = &side * int(j) + &half;
            let b = RBox::square(&cx, &cy, &half);
            if !b.outside_disk() {
                pixels.push(b);
            }
        }
    }
    let (found, unresolved, rounds) = isolate(&sys, pixels, MAX_DEPTH);
    if !unresolved.is_empty() {
        return Err(EquilibriumError::Inconclusive { unresolved });
    }
    let mut records: Vec<EquilibriumRecord> = found
        .into_iter()
        .map(|f| classify_refined(field, f.certified, f.refined))
        .collect();
    records.sort_by(|a, b| a.refined.cmp(&b.refined));
    let eps = side;
    let r = &eps / int(2);
    let set = PixelSet::new(
        records
            .iter()
            .map(|rec| {
                let c = rec.refined.center();
                Cell::square(c[0].clone(), c[1].clone(), r.clone())
            })
            .collect(),
    );
    Ok(ZeroCensus {
        count: records.len(),
        records,
        eps,
        set,
        rounds,
    })
}

/// Number of zeros in `b` certified by subdividing it `depth` times first.
pub fn count_zeros_in(field: &PolyVectorField, b: &RBox, depth: u32) -> Option<usize> {
    let sys = Sys::new(field);
    let mut boxes = vec![b.clone()];
    for _ in 0..depth {
        boxes = boxes.iter().flat_map(|x| x.quarters()).collect();
    }
    let (found, unresolved, _) = isolate(&sys, boxes, MAX_DEPTH);
    if !unresolved.is_empty() {
        return None;
    }
    Some(found.iter().filter(|f| b.contains_box(&f.refined) || intersects(b, &f.refined)).count())
}

fn intersects(a: &RBox, b: &RBox) -> bool {
    a.x0 <= b.x1 && b.x0 <= a.x1 && a.y0 <= b.y1 && b.y0 <= a.y1
}

/// Classifies the zero isolated in `record_box` (refining it first).
pub fn classify(field: &PolyVectorField, record_box: &RBox) -> EquilibriumRecord {
    let sys = Sys::new(field);
    let refined = sys.refine(record_box.clone(), &rational::pow2(-REFINE_BITS));
    classify_refined(field, record_box.clone(), refined)
}

fn classify_refined(field: &PolyVectorField, certified: RBox, refined: RBox) -> EquilibriumRecord {
    let c = refined.center();
    let r = refined.radii();
    let sys = Sys::new(field);
    let j: Vec<Vec<Enclosure>> = sys
        .df
        .iter()
        .map(|row| row.iter().map(|p| enclose(p, &c, &r)).collect())
        .collect();
    let mid = [
        [to_f64(&j[0][0].mid), to_f64(&j[0][1].mid)],
        [to_f64(&j[1][0].mid), to_f64(&j[1][1].mid)],
    ];
    let width = j
        .iter()
        .flatten()
        .map(|e| to_f64(&e.rad))
        .fold(0.0, f64::max);
    let (kind, eigenvalues, eigenvectors, margin) = classify_matrix_with_width(mid, width);
    EquilibriumRecord {
        bbox: certified,
        refined,
        kind,
        eigenvalues,
        eigenvectors,
        margin,
    }
}

/// Classification of a 2×2 matrix by certified trace/determinant signs.
pub fn classify_matrix(a: [[f64; 2]; 2]) -> (Kind, [Eigenvalue; 2], Option<[[f64; 2]; 2]>) {
    let (k, e, v, _) = classify_matrix_with_width(a, 0.0);
    (k, e, v)
}

/// As [`classify_matrix`] for every matrix within `width` (entrywise) of `a`.
fn classify_matrix_with_width(
    a: [[f64; 2]; 2],
    width: f64,
) -> (Kind, [Eigenvalue; 2], Option<[[f64; 2]; 2]>, f64) {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())) + width;
    // slack for rounding in the products below plus the matrix width
    let tr = a[0][0] + a[1][1];
    let tr_err = 2.0 * width + 4.0 * f64::EPSILON * scale;
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let det_err = 4.0 * scale * width + 2.0 * width * width + 8.0 * f64::EPSILON * scale * scale;
    let disc = tr * tr / 4.0 - det;
    let disc_err = (tr.abs() + tr_err) * tr_err / 2.0 + det_err + 8.0 * f64::EPSILON * scale * scale;

    let eig = |re: f64, re_e: f64, im: f64, im_e: f64| Eigenvalue {
        re: [next_down(re - re_e), next_up(re + re_e)],
        im: [next_down(im - im_e), next_up(im + im_e)],
    };
    let (eigenvalues, margin) = if disc >= 0.0 {
        let s = disc.sqrt();
        // sqrt is 1/2-Lipschitz in the squared quantity away from 0; near 0
        // use the square root of the error instead
        let s_err = if s > 0.0 {
            (disc_err / s).min(disc_err.sqrt()) + 2.0 * f64::EPSILON * s
        } else {
            disc_err.sqrt()
        };
        let l1 = tr / 2.0 - s;
        let l2 = tr / 2.0 + s;
        let e = tr_err / 2.0 + s_err;
        let imag = if disc - disc_err < 0.0 { (disc_err - disc).max(0.0).sqrt() } else { 0.0 };
        (
            [eig(l1, e, 0.0, imag), eig(l2, e, 0.0, imag)],
            (l1.abs() - e).min(l2.abs() - e),
        )
    } else {
        let s = (-disc).sqrt();
        let s_err = (disc_err / s.max(1e-300)).min(disc_err.sqrt()) + 2.0 * f64::EPSILON * s;
        let e = tr_err / 2.0;
        let re = tr / 2.0;
        (
            [eig(re, e, -s, s_err), eig(re, e, s, s_err)],
            re.abs() - e,
        )
    };

    let det_pos = det - det_err > 0.0;
    let det_neg = det + det_err < 0.0;
    let kind = if margin < HYPERBOLIC_MARGIN {
        Kind::Inconclusive
    } else if det_neg {
        Kind::Saddle
    } else if det_pos && tr + tr_err < 0.0 {
        Kind::Sink
    } else if det_pos && tr - tr_err > 0.0 {
        Kind::Source
    } else {
        Kind::Inconclusive
    };
    let eigenvectors = if kind == Kind::Saddle {
        let l = tr / 2.0 - disc.sqrt();
        let m = tr / 2.0 + disc.sqrt();
        Some([eigenvector(a, l), eigenvector(a, m)])
    } else {
        None
    };
    (kind, eigenvalues, eigenvectors, margin.max(0.0))
}

/// Unit eigenvector of `a` for the real eigenvalue `l`, sign-normalized so
/// the largest component is positive.
pub fn eigenvector(a: [[f64; 2]; 2], l: f64) -> [f64; 2] {
    let c1 = [a[0][1], l - a[0][0]];
    let c2 = [l - a[1][1], a[1][0]];
    let n1 = c1[0].hypot(c1[1]);
    let n2 = c2[0].hypot(c2[1]);
    let v = if n1 >= n2 && n1 > 0.0 {
        [c1[0] / n1, c1[1] / n1]
    } else if n2 > 0.0 {
        [c2[0] / n2, c2[1] / n2]
    } else {
        // a = l·I
        [1.0, 0.0]
    };
    let big = if v[0].abs() >= v[1].abs() { v[0] } else { v[1] };
    if big < 0.0 {
        [-v[0], -v[1]]
    } else {
        v
    }
}

/// Exact rational approximation of a float, convenience for callers.
pub fn rational_point(p: [f64; 2]) -> [Rational; 2] {
    [from_f64(p[0]), from_f64(p[1])]
}

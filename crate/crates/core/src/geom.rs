//! Exact grid geometry on the unit disk: δ-grids, pixel sets, max-norm
//! Hausdorff distance, connectivity and complements.
//!
//! Squares are max-norm balls, so a `Ball` cell and a `Square` cell with the
//! same center and radius are the same set; the tag is kept for output only.

use crate::rational::{self, format_rational, parse_rational, to_f64, Rational};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, VecDeque};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GeomError {
    #[error("grid spacing below 2^-40")]
    BudgetExceeded,
    #[error("operation needs a non-empty set")]
    EmptySet,
    #[error("pixel set is not aligned to a common lattice")]
    NotLattice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Ball,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    #[serde(with = "rational::serde_str")]
    pub cx: Rational,
    #[serde(with = "rational::serde_str")]
    pub cy: Rational,
    #[serde(with = "rational::serde_str")]
    pub r: Rational,
    pub shape: Shape,
}

impl Cell {
    pub fn square(cx: Rational, cy: Rational, r: Rational) -> Self {
        Cell {
            cx,
            cy,
            r,
            shape: Shape::Square,
        }
    }

    pub fn ball(cx: Rational, cy: Rational, r: Rational) -> Self {
        Cell {
            cx,
            cy,
            r,
            shape: Shape::Ball,
        }
    }

    pub fn x0(&self) -> Rational {
        &self.cx - &self.r
    }
    pub fn x1(&self) -> Rational {
        &self.cx + &self.r
    }
    pub fn y0(&self) -> Rational {
        &self.cy - &self.r
    }
    pub fn y1(&self) -> Rational {
        &self.cy + &self.r
    }

    /// Closed cell meets the closed unit disk.
    pub fn meets_disk(&self) -> bool {
        let nx = clamp_zero(&self.x0(), &self.x1());
        let ny = clamp_zero(&self.y0(), &self.y1());
        &nx * &nx + &ny * &ny <= Rational::one()
    }

    pub fn contains(&self, p: &[Rational; 2]) -> bool {
        (&p[0] - &self.cx).abs() <= self.r && (&p[1] - &self.cy).abs() <= self.r
    }

    pub fn rect_f64(&self) -> [f64; 4] {
        [
            to_f64(&self.x0()),
            to_f64(&self.x1()),
            to_f64(&self.y0()),
            to_f64(&self.y1()),
        ]
    }
}

/// The point of `[lo, hi]` nearest to 0.
fn clamp_zero(lo: &Rational, hi: &Rational) -> Rational {
    if lo.is_positive() {
        lo.clone()
    } else if hi.is_negative() {
        hi.clone()
    } else {
        Rational::zero()
    }
}

/// Finite union of closed squares meeting the unit disk.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PixelSet {
    pub cells: Vec<Cell>,
}

impl PixelSet {
    /// Sorts, deduplicates and drops cells that miss the disk.
    pub fn new(mut cells: Vec<Cell>) -> Self {
        cells.retain(|c| c.meets_disk());
        cells.sort();
        cells.dedup();
        PixelSet { cells }
    }

    pub fn empty() -> Self {
        PixelSet { cells: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn union(&self, other: &PixelSet) -> PixelSet {
        let mut c = self.cells.clone();
        c.extend(other.cells.iter().cloned());
        PixelSet::new(c)
    }

    pub fn contains_point(&self, p: &[Rational; 2]) -> bool {
        self.cells.iter().any(|c| c.contains(p))
    }

    /// Float membership with tolerance `tol` (max-norm).
    pub fn contains_f64(&self, p: [f64; 2], tol: f64) -> bool {
        self.cells.iter().any(|c| {
            let r = c.rect_f64();
            p[0] >= r[0] - tol && p[0] <= r[1] + tol && p[1] >= r[2] - tol && p[1] <= r[3] + tol
        })
    }

    /// Max-norm distance from a float point to the union.
    pub fn distance_f64(&self, p: [f64; 2]) -> f64 {
        self.cells
            .iter()
            .map(|c| {
                let r = c.rect_f64();
                let dx = (r[0] - p[0]).max(p[0] - r[1]).max(0.0);
                let dy = (r[2] - p[1]).max(p[1] - r[3]).max(0.0);
                dx.max(dy)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Every cell grown by `d` (Minkowski sum with the max-norm ball).
    pub fn inflate(&self, d: &Rational) -> PixelSet {
        PixelSet::new(
            self.cells
                .iter()
                .map(|c| Cell {
                    cx: c.cx.clone(),
                    cy: c.cy.clone(),
                    r: &c.r + d,
                    shape: c.shape,
                })
                .collect(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("pixel set serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// The δ-grid clipped to the disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub delta: Rational,
}

/// All points of (δZ)² with ‖p‖₂ ≤ 1 + δ.
pub fn grid_points(grid: &Grid) -> Result<Vec<[Rational; 2]>, GeomError> {
    let d = &grid.delta;
    if !d.is_positive() || d < &rational::pow2(-40) {
        return Err(GeomError::BudgetExceeded);
    }
    let lim = Rational::one() + d;
    let lim2 = &lim * &lim;
    let n = (&lim / d).floor().to_integer().to_i64().ok_or(GeomError::BudgetExceeded)?;
    if n > 1 << 14 {
        return Err(GeomError::BudgetExceeded);
    }
    let mut pts = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            let x = d * Rational::from_integer(BigInt::from(i));
            let y = d * Rational::from_integer(BigInt::from(j));
            if &x * &x + &y * &y <= lim2 {
                pts.push([x, y]);
            }
        }
    }
    Ok(pts)
}

// ---------------------------------------------------------------------------
// Exact rectangle algorithms on integer-scaled coordinates.

trait Coord: Integer + Signed + Clone + std::fmt::Debug {}
impl Coord for i128 {}
impl Coord for BigInt {}

#[derive(Debug, Clone)]
struct Rect<T> {
    x0: T,
    x1: T,
    y0: T,
    y1: T,
}

fn dilate<T: Coord>(r: &Rect<T>, t: &T) -> Rect<T> {
    Rect {
        x0: r.x0.clone() - t.clone(),
        x1: r.x1.clone() + t.clone(),
        y0: r.y0.clone() - t.clone(),
        y1: r.y1.clone() + t.clone(),
    }
}

fn intersects<T: Coord>(a: &Rect<T>, b: &Rect<T>) -> bool {
    a.x0 <= b.x1 && b.x0 <= a.x1 && a.y0 <= b.y1 && b.y0 <= a.y1
}

/// Whether the closed rectangle `a` lies inside the union of `bs`.
fn covered<T: Coord>(a: &Rect<T>, bs: &[Rect<T>]) -> bool {
    let rel: Vec<&Rect<T>> = bs.iter().filter(|b| intersects(a, b)).collect();
    if rel.is_empty() {
        return false;
    }
    if rel
        .iter()
        .any(|b| b.x0 <= a.x0 && a.x1 <= b.x1 && b.y0 <= a.y0 && a.y1 <= b.y1)
    {
        return true;
    }
    let mut xs: Vec<T> = vec![a.x0.clone(), a.x1.clone()];
    for b in &rel {
        for x in [&b.x0, &b.x1] {
            if x > &a.x0 && x < &a.x1 {
                xs.push(x.clone());
            }
        }
    }
    xs.sort();
    xs.dedup();
    for w in xs.windows(2) {
        // y-intervals of rectangles spanning this slab
        let mut iv: Vec<(T, T)> = rel
            .iter()
            .filter(|b| b.x0 <= w[0] && w[1] <= b.x1)
            .map(|b| (b.y0.clone(), b.y1.clone()))
            .collect();
        iv.sort();
        let mut reach = a.y0.clone();
        for (lo, hi) in iv {
            if lo > reach {
                break;
            }
            if hi > reach {
                reach = hi;
            }
            if reach >= a.y1 {
                break;
            }
        }
        if reach < a.y1 {
            return false;
        }
    }
    true
}

fn push_halfgaps<T: Coord>(edges: &[T], out: &mut Vec<T>) {
    let two = T::one() + T::one();
    for (k, a) in edges.iter().enumerate() {
        for b in &edges[k + 1..] {
            let d = (a.clone() - b.clone()).abs();
            out.push(d / two.clone());
        }
    }
}

/// sup over a ∈ ∪as of the max-norm distance to ∪bs.
///
/// The supremum is attained where three of the constraints t = ±x + c,
/// t = ±y + c, x = const, y = const meet, so it is either 0, the gap between
/// an edge of `as` and an edge of `bs`, or half the gap between two edges of
/// `bs` on the same axis. Coordinates are pre-scaled so halves are integral.
fn directed<T: Coord>(as_: &[Rect<T>], bs: &[Rect<T>]) -> T {
    let mut bx: Vec<T> = bs.iter().flat_map(|b| [b.x0.clone(), b.x1.clone()]).collect();
    let mut by: Vec<T> = bs.iter().flat_map(|b| [b.y0.clone(), b.y1.clone()]).collect();
    bx.sort();
    bx.dedup();
    by.sort();
    by.dedup();
    let mut shared = vec![T::zero()];
    push_halfgaps(&bx, &mut shared);
    push_halfgaps(&by, &mut shared);
    shared.sort();
    shared.dedup();

    let mut best = T::zero();
    for a in as_ {
        if covered(a, &bs.iter().map(|b| dilate(b, &best)).collect::<Vec<_>>()) {
            continue;
        }
        let mut cand: Vec<T> = shared.iter().filter(|t| **t > best).cloned().collect();
        for ae in [&a.x0, &a.x1] {
            for be in &bx {
                let d = (ae.clone() - be.clone()).abs();
                if d > best {
                    cand.push(d);
                }
            }
        }
        for ae in [&a.y0, &a.y1] {
            for be in &by {
                let d = (ae.clone() - be.clone()).abs();
                if d > best {
                    cand.push(d);
                }
            }
        }
        cand.sort();
        cand.dedup();
        let test = |t: &T| covered(a, &bs.iter().map(|b| dilate(b, t)).collect::<Vec<_>>());
        // smallest candidate that covers
        let (mut lo, mut hi) = (0usize, cand.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if test(&cand[mid]) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        assert!(lo < cand.len(), "hausdorff candidate set incomplete");
        best = cand[lo].clone();
    }
    best
}

/// Scale factor 2·lcm(denominators) so every candidate distance is integral.
fn scaled_rects(sets: &[&PixelSet]) -> (Rational, Vec<Vec<Rect<BigInt>>>) {
    let all = sets
        .iter()
        .flat_map(|s| s.cells.iter())
        .flat_map(|c| [c.cx.clone(), c.cy.clone(), c.r.clone()])
        .collect::<Vec<_>>();
    let den = rational::common_denominator(all.iter()) * BigInt::from(2);
    let scale = Rational::from_integer(den);
    let conv = |q: Rational| (q * &scale).to_integer();
    let rects = sets
        .iter()
        .map(|s| {
            s.cells
                .iter()
                .map(|c| Rect {
                    x0: conv(c.x0()),
                    x1: conv(c.x1()),
                    y0: conv(c.y0()),
                    y1: conv(c.y1()),
                })
                .collect()
        })
        .collect();
    (scale, rects)
}

fn narrow(rs: &[Rect<BigInt>]) -> Option<Vec<Rect<i128>>> {
    let lim = BigInt::from(1i128 << 60);
    rs.iter()
        .map(|r| {
            let f = |v: &BigInt| {
                if v.abs() < lim {
                    v.to_i128()
                } else {
                    None
                }
            };
            Some(Rect {
                x0: f(&r.x0)?,
                x1: f(&r.x1)?,
                y0: f(&r.y0)?,
                y1: f(&r.y1)?,
            })
        })
        .collect()
}

/// Directed max-norm Hausdorff distance sup_{a∈A} d(a, B).
pub fn directed_hausdorff(a: &PixelSet, b: &PixelSet) -> Result<Rational, GeomError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeomError::EmptySet);
    }
    let (scale, rs) = scaled_rects(&[a, b]);
    let v = match (narrow(&rs[0]), narrow(&rs[1])) {
        (Some(ra), Some(rb)) => BigInt::from(directed(&ra, &rb)),
        _ => directed(&rs[0], &rs[1]),
    };
    Ok(Rational::from_integer(v) / scale)
}

/// Exact Hausdorff distance (max-norm) between the unions of two pixel sets.
pub fn hausdorff(a: &PixelSet, b: &PixelSet) -> Result<Rational, GeomError> {
    let ab = directed_hausdorff(a, b)?;
    let ba = directed_hausdorff(b, a)?;
    Ok(if ab > ba { ab } else { ba })
}

/// Whether the union of `a` lies inside the union of `b`.
pub fn is_covered_by(a: &PixelSet, b: &PixelSet) -> bool {
    if a.is_empty() {
        return true;
    }
    if b.is_empty() {
        return false;
    }
    let (_, rs) = scaled_rects(&[a, b]);
    rs[0].iter().all(|r| covered(r, &rs[1]))
}

fn adjacent(a: &Cell, b: &Cell) -> bool {
    (&a.cx - &b.cx).abs() <= &a.r + &b.r && (&a.cy - &b.cy).abs() <= &a.r + &b.r
}

/// Components under "closed cells share at least one point" (corner contact
/// counts).
pub fn connected_components(s: &PixelSet) -> Vec<PixelSet> {
    let n = s.cells.len();
    if n == 0 {
        return Vec::new();
    }
    let (_, rs) = scaled_rects(&[s]);
    let rects = narrow(&rs[0]);
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    // sweep by x0 to prune pairs
    let mut order: Vec<usize> = (0..n).collect();
    match &rects {
        Some(r) => order.sort_by(|&i, &j| r[i].x0.cmp(&r[j].x0)),
        None => order.sort_by(|&i, &j| rs[0][i].x0.cmp(&rs[0][j].x0)),
    }
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            let (past, touch) = match &rects {
                Some(r) => (r[j].x0 > r[i].x1, intersects(&r[i], &r[j])),
                None => (rs[0][j].x0 > rs[0][i].x1, adjacent(&s.cells[i], &s.cells[j])),
            };
            if past {
                break;
            }
            if touch {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<Cell>> = HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(s.cells[i].clone());
    }
    let mut out: Vec<PixelSet> = groups.into_values().map(PixelSet::new).collect();
    out.sort_by(|a, b| a.cells[0].cmp(&b.cells[0]));
    out
}

/// Over-approximation of closure(D − s) by lattice squares of side
/// `2^floor(log2(resolution))`, keeping every lattice square that meets the
/// disk and is not contained in `s`.
pub fn complement_closure(s: &PixelSet, resolution: &Rational) -> PixelSet {
    assert!(resolution.is_positive(), "resolution must be positive");
    let lat = Lattice::new(rational::floor_pow2(resolution).min(Rational::one()));
    let h = lat.sf;
    // bucket s by lattice cell
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, c) in s.cells.iter().enumerate() {
        let r = c.rect_f64();
        let (i0, i1) = ((r[0] / h).floor() as i64 - 1, (r[1] / h).ceil() as i64 + 1);
        let (j0, j1) = ((r[2] / h).floor() as i64 - 1, (r[3] / h).ceil() as i64 + 1);
        if (i1 - i0) * (j1 - j0) > 1 << 20 {
            continue; // huge cells handled through the fallback list below
        }
        for i in i0..=i1 {
            for j in j0..=j1 {
                buckets.entry((i, j)).or_default().push(k);
            }
        }
    }
    let huge: Vec<usize> = s
        .cells
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let r = c.rect_f64();
            ((r[1] - r[0]) / h + 3.0) * ((r[3] - r[2]) / h + 3.0) > (1u64 << 20) as f64
        })
        .map(|(k, _)| k)
        .collect();
    let mut out = Vec::new();
    for (i, j) in lat.disk_cells() {
        let cell = lat.cell(i, j);
        let mut idx: Vec<usize> = buckets.get(&(i, j)).cloned().unwrap_or_default();
        idx.extend(huge.iter().copied());
        let inside = if idx.is_empty() {
            false
        } else {
            let local = PixelSet {
                cells: idx.iter().map(|&k| s.cells[k].clone()).collect(),
            };
            is_covered_by(
                &PixelSet {
                    cells: vec![cell.clone()],
                },
                &local,
            )
        };
        if !inside {
            out.push(cell);
        }
    }
    PixelSet::new(out)
}

// ---------------------------------------------------------------------------
// Dyadic lattices of corner-anchored squares.

/// Squares `[i s, (i+1) s] × [j s, (j+1) s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub spacing: Rational,
    pub sf: f64,
}

impl Lattice {
    pub fn new(spacing: Rational) -> Self {
        assert!(spacing.is_positive());
        let sf = to_f64(&spacing);
        Lattice { spacing, sf }
    }

    /// The lattice with half the spacing.
    pub fn refine(&self) -> Lattice {
        Lattice::new(&self.spacing / Rational::from_integer(BigInt::from(2)))
    }

    pub fn cell(&self, i: i64, j: i64) -> Cell {
        let h = &self.spacing / Rational::from_integer(BigInt::from(2));
        let s = &self.spacing;
        Cell::square(
            s * Rational::from_integer(BigInt::from(i)) + &h,
            s * Rational::from_integer(BigInt::from(j)) + &h,
            h,
        )
    }

    pub fn rect(&self, i: i64, j: i64) -> [f64; 4] {
        let s = self.sf;
        [i as f64 * s, (i + 1) as f64 * s, j as f64 * s, (j + 1) as f64 * s]
    }

    pub fn center(&self, i: i64, j: i64) -> [f64; 2] {
        [(i as f64 + 0.5) * self.sf, (j as f64 + 0.5) * self.sf]
    }

    pub fn index_of(&self, p: [f64; 2]) -> (i64, i64) {
        ((p[0] / self.sf).floor() as i64, (p[1] / self.sf).floor() as i64)
    }

    /// Half-extent `n` with every disk cell inside `[-n, n)²`.
    pub fn extent(&self) -> i64 {
        (1.0 / self.sf).ceil() as i64 + 1
    }

    pub fn meets_disk(&self, i: i64, j: i64) -> bool {
        // exact for dyadic spacing; cells are tiny so float is adequate otherwise
        let r = self.rect(i, j);
        let nx = if r[0] > 0.0 { r[0] } else if r[1] < 0.0 { r[1] } else { 0.0 };
        let ny = if r[2] > 0.0 { r[2] } else if r[3] < 0.0 { r[3] } else { 0.0 };
        nx * nx + ny * ny <= 1.0
    }

    pub fn meets_circle(&self, i: i64, j: i64) -> bool {
        let r = self.rect(i, j);
        let far = r[0].abs().max(r[1].abs()).powi(2) + r[2].abs().max(r[3].abs()).powi(2);
        self.meets_disk(i, j) && far >= 1.0
    }

    pub fn disk_cells(&self) -> Vec<(i64, i64)> {
        let n = self.extent();
        let mut v = Vec::new();
        for i in -n..n {
            for j in -n..n {
                if self.meets_disk(i, j) {
                    v.push((i, j));
                }
            }
        }
        v
    }

    /// Cells whose closed square meets the open max-norm ball B(p, r).
    pub fn cells_meeting_open_ball(&self, p: [f64; 2], r: f64) -> impl Iterator<Item = (i64, i64)> {
        let s = self.sf;
        let lo_i = ((p[0] - r) / s).floor() as i64;
        let hi_i = ((p[0] + r) / s).ceil() as i64 - 1;
        let lo_j = ((p[1] - r) / s).floor() as i64;
        let hi_j = ((p[1] + r) / s).ceil() as i64 - 1;
        (lo_i..=hi_i).flat_map(move |i| (lo_j..=hi_j).map(move |j| (i, j)))
    }
}

/// Cells whose closed square meets the closed annulus `lo ≤ ‖x‖₂ ≤ hi`
/// (float test; used to draw reference sets).
pub fn annulus_cells(lat: &Lattice, lo: f64, hi: f64) -> LatticeSet {
    let n = (hi / lat.sf).ceil() as i64 + 1;
    let mut cells = BTreeSet::new();
    for i in -n..n {
        for j in -n..n {
            let r = lat.rect(i, j);
            let cx = if r[0] > 0.0 { r[0] } else if r[1] < 0.0 { r[1] } else { 0.0 };
            let cy = if r[2] > 0.0 { r[2] } else if r[3] < 0.0 { r[3] } else { 0.0 };
            let near = cx.hypot(cy);
            let far = r[0].abs().max(r[1].abs()).hypot(r[2].abs().max(r[3].abs()));
            if near <= hi && far >= lo {
                cells.insert((i, j));
            }
        }
    }
    LatticeSet {
        lattice: lat.clone(),
        cells,
    }
}

/// A set of lattice cells.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSet {
    pub lattice: Lattice,
    pub cells: BTreeSet<(i64, i64)>,
}

pub const NEIGHBORS8: [(i64, i64); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

impl LatticeSet {
    pub fn new(lattice: Lattice) -> Self {
        LatticeSet {
            lattice,
            cells: BTreeSet::new(),
        }
    }

    pub fn from_cells<I: IntoIterator<Item = (i64, i64)>>(lattice: Lattice, it: I) -> Self {
        LatticeSet {
            lattice,
            cells: it.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, c: &(i64, i64)) -> bool {
        self.cells.contains(c)
    }

    pub fn to_pixel_set(&self) -> PixelSet {
        PixelSet::new(
            self.cells
                .iter()
                .map(|&(i, j)| self.lattice.cell(i, j))
                .collect(),
        )
    }

    /// Exact conversion of a pixel set whose squares tile onto one lattice.
    pub fn from_pixel_set(ps: &PixelSet, lattice: &Lattice) -> Result<LatticeSet, GeomError> {
        let s = &lattice.spacing;
        let mut cells = BTreeSet::new();
        for c in &ps.cells {
            let ix0 = c.x0() / s;
            let iy0 = c.y0() / s;
            let w = (&c.r * Rational::from_integer(BigInt::from(2))) / s;
            if !ix0.is_integer() || !iy0.is_integer() || !w.is_integer() {
                return Err(GeomError::NotLattice);
            }
            let (i0, j0) = (
                ix0.to_integer().to_i64().ok_or(GeomError::NotLattice)?,
                iy0.to_integer().to_i64().ok_or(GeomError::NotLattice)?,
            );
            let n = w.to_integer().to_i64().ok_or(GeomError::NotLattice)?;
            for di in 0..n {
                for dj in 0..n {
                    cells.insert((i0 + di, j0 + dj));
                }
            }
        }
        Ok(LatticeSet {
            lattice: lattice.clone(),
            cells,
        })
    }

    /// The same set on the lattice with half the spacing.
    pub fn refined(&self) -> LatticeSet {
        let mut cells = BTreeSet::new();
        for &(i, j) in &self.cells {
            for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                cells.insert((2 * i + a, 2 * j + b));
            }
        }
        LatticeSet {
            lattice: self.lattice.refine(),
            cells,
        }
    }

    /// Chebyshev dilation by `n` cells, i.e. Minkowski sum with B(0, n·s).
    pub fn dilate(&self, n: i64) -> LatticeSet {
        let mut cells = BTreeSet::new();
        for &(i, j) in &self.cells {
            for a in -n..=n {
                for b in -n..=n {
                    cells.insert((i + a, j + b));
                }
            }
        }
        LatticeSet {
            lattice: self.lattice.clone(),
            cells,
        }
    }

    pub fn components(&self) -> Vec<LatticeSet> {
        let mut seen: BTreeSet<(i64, i64)> = BTreeSet::new();
        let mut out = Vec::new();
        for &c in &self.cells {
            if seen.contains(&c) {
                continue;
            }
            let mut comp = BTreeSet::new();
            let mut q = VecDeque::from([c]);
            seen.insert(c);
            while let Some((i, j)) = q.pop_front() {
                comp.insert((i, j));
                for (a, b) in NEIGHBORS8 {
                    let n = (i + a, j + b);
                    if self.cells.contains(&n) && seen.insert(n) {
                        q.push_back(n);
                    }
                }
            }
            out.push(LatticeSet {
                lattice: self.lattice.clone(),
                cells: comp,
            });
        }
        out
    }

    pub fn intersects(&self, other: &LatticeSet) -> bool {
        debug_assert_eq!(self.lattice, other.lattice);
        let (small, big) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.cells.iter().any(|c| big.cells.contains(c))
    }

    pub fn is_subset(&self, other: &LatticeSet) -> bool {
        self.cells.iter().all(|c| other.cells.contains(c))
    }

    pub fn union_with(&mut self, other: &LatticeSet) {
        self.cells.extend(other.cells.iter().copied());
    }

    /// Whether any cell touches the unit circle.
    pub fn touches_circle(&self) -> bool {
        self.cells
            .iter()
            .any(|&(i, j)| self.lattice.meets_circle(i, j) || !self.lattice.meets_disk(i, j))
    }
}

/// Dense label grid over `[-n, n)²` lattice indices.
#[derive(Debug, Clone)]
pub struct DenseGrid<T> {
    pub n: i64,
    data: Vec<T>,
}

impl<T: Clone> DenseGrid<T> {
    pub fn new(n: i64, fill: T) -> Self {
        DenseGrid {
            n,
            data: vec![fill; (4 * n * n) as usize],
        }
    }

    #[inline]
    pub fn in_range(&self, i: i64, j: i64) -> bool {
        i >= -self.n && i < self.n && j >= -self.n && j < self.n
    }

    #[inline]
    fn idx(&self, i: i64, j: i64) -> usize {
        ((i + self.n) * 2 * self.n + (j + self.n)) as usize
    }

    #[inline]
    pub fn get(&self, i: i64, j: i64) -> Option<&T> {
        if self.in_range(i, j) {
            Some(&self.data[self.idx(i, j)])
        } else {
            None
        }
    }

    #[inline]
    pub fn set(&mut self, i: i64, j: i64, v: T) {
        if self.in_range(i, j) {
            let k = self.idx(i, j);
            self.data[k] = v;
        }
    }
}

/// Chebyshev distance (in cells) from every cell to the nearest seed, by
/// multi-source BFS over 8-neighbours; `None` where unreachable.
pub fn chebyshev_distance(n: i64, seeds: &BTreeSet<(i64, i64)>) -> DenseGrid<Option<u32>> {
    let mut g = DenseGrid::new(n, None);
    let mut q = VecDeque::new();
    for &(i, j) in seeds {
        if g.in_range(i, j) {
            g.set(i, j, Some(0));
            q.push_back((i, j));
        }
    }
    while let Some((i, j)) = q.pop_front() {
        let d = g.get(i, j).copied().flatten().unwrap_or(0);
        for (a, b) in NEIGHBORS8 {
            let (x, y) = (i + a, j + b);
            if g.in_range(x, y) && g.get(x, y).copied().flatten().is_none() {
                g.set(x, y, Some(d + 1));
                q.push_back((x, y));
            }
        }
    }
    g
}

/// Directed Hausdorff distance from lattice cells `a` to lattice cells `b`,
/// exact, using only the neighbours of each `a` cell that can matter.
pub fn lattice_directed_hausdorff(a: &LatticeSet, b: &LatticeSet) -> Result<Rational, GeomError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeomError::EmptySet);
    }
    let n = a
        .cells
        .iter()
        .chain(b.cells.iter())
        .map(|&(i, j)| i.abs().max(j.abs()) + 2)
        .max()
        .unwrap_or(2);
    let dist = chebyshev_distance(n, &b.cells);
    // In cell units (integer scaled by 2 so half-gaps are integral).
    let mut best: i128 = 0;
    for &(i, j) in &a.cells {
        let m = dist.get(i, j).copied().flatten().expect("reachable") as i64;
        if m == 0 {
            continue;
        }
        // any b cell at Chebyshev index distance ≥ m+2 is farther than the
        // nearest one from every point of this cell
        let mut local = Vec::new();
        let r = m + 2;
        for x in i - r..=i + r {
            for y in j - r..=j + r {
                if b.cells.contains(&(x, y)) {
                    local.push(Rect {
                        x0: 2 * x as i128,
                        x1: 2 * (x as i128 + 1),
                        y0: 2 * y as i128,
                        y1: 2 * (y as i128 + 1),
                    });
                }
            }
        }
        let ar = Rect {
            x0: 2 * i as i128,
            x1: 2 * (i as i128 + 1),
            y0: 2 * j as i128,
            y1: 2 * (j as i128 + 1),
        };
        if covered(&ar, &local.iter().map(|r| dilate(r, &best)).collect::<Vec<_>>()) {
            continue;
        }
        let d = directed(&[ar], &local);
        if d > best {
            best = d;
        }
    }
    // each scaled unit is half a lattice cell; directed() works on 2x-scaled
    // rects and returns values in those units
    Ok(Rational::from_integer(BigInt::from(best)) * &a.lattice.spacing
        / Rational::from_integer(BigInt::from(2)))
}

pub fn format_point(p: &[Rational; 2]) -> String {
    format!("({}, {})", format_rational(&p[0]), format_rational(&p[1]))
}

pub fn parse_point(s: &str) -> Option<[Rational; 2]> {
    let t = s.trim().trim_start_matches('(').trim_end_matches(')');
    let (a, b) = t.split_once(',')?;
    Some([parse_rational(a).ok()?, parse_rational(b).ok()?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, rat};

    fn sq(cx: Rational, cy: Rational, r: Rational) -> Cell {
        Cell::square(cx, cy, r)
    }

    #[test]
    fn grid_counts() {
        // the rule ‖p‖ ≤ 1+δ at δ=1 admits (±2,0),(0,±2) as well: 13 points
        assert_eq!(grid_points(&Grid { delta: int(1) }).unwrap().len(), 13);
        assert_eq!(grid_points(&Grid { delta: int(2) }).unwrap().len(), 9);
        assert_eq!(grid_points(&Grid { delta: rat(1, 2) }).unwrap().len(), 29);
        assert_eq!(
            grid_points(&Grid {
                delta: rational::pow2(-41)
            }),
            Err(GeomError::BudgetExceeded)
        );
    }

    #[test]
    fn hausdorff_examples() {
        let a = PixelSet::new(vec![sq(int(0), int(0), rat(1, 2))]);
        let b = PixelSet::new(vec![sq(int(1), int(0), rat(1, 2))]);
        assert_eq!(hausdorff(&a, &a).unwrap(), int(0));
        assert_eq!(hausdorff(&a, &b).unwrap(), int(1));
        assert_eq!(hausdorff(&a, &PixelSet::empty()), Err(GeomError::EmptySet));
    }

    #[test]
    fn hausdorff_gap_between_two_squares() {
        // the point (0, 0) sits midway between two squares 1/2 apart
        let a = PixelSet::new(vec![sq(int(0), int(0), rat(1, 8))]);
        let b = PixelSet::new(vec![
            sq(rat(-1, 2), int(0), rat(1, 4)),
            sq(rat(1, 2), int(0), rat(1, 4)),
        ]);
        assert_eq!(directed_hausdorff(&a, &b).unwrap(), rat(1, 4));
    }

    #[test]
    fn component_examples() {
        let two = PixelSet::new(vec![
            sq(rat(-1, 2), int(0), rat(1, 8)),
            sq(rat(1, 2), int(0), rat(1, 8)),
        ]);
        assert_eq!(connected_components(&two).len(), 2);
        let chain = PixelSet::new(
            (0..6)
                .map(|k| sq(rat(k, 8) - rat(1, 4), int(0), rat(1, 16)))
                .collect(),
        );
        assert_eq!(connected_components(&chain).len(), 1);
        let corner = PixelSet::new(vec![
            sq(int(0), int(0), rat(1, 8)),
            sq(rat(1, 4), rat(1, 4), rat(1, 8)),
        ]);
        assert_eq!(connected_components(&corner).len(), 1);
    }

    #[test]
    fn complement_of_central_square() {
        let s = PixelSet::new(vec![sq(int(0), int(0), rat(1, 4))]);
        let c = complement_closure(&s, &rat(1, 16));
        assert!(c.contains_point(&[rat(9, 10), int(0)]));
        assert!(!c.contains_point(&[int(0), int(0)]));
        let lat = Lattice::new(rat(1, 16));
        let cells = LatticeSet::from_pixel_set(&c, &lat).unwrap();
        assert!(!cells.contains(&(0, 0)));
    }

    #[test]
    fn lattice_round_trip() {
        let lat = Lattice::new(rat(1, 8));
        let ls = LatticeSet::from_cells(lat.clone(), [(0, 0), (1, 0), (-3, 2)]);
        let back = LatticeSet::from_pixel_set(&ls.to_pixel_set(), &lat).unwrap();
        assert_eq!(back, ls);
        assert_eq!(ls.components().len(), 2);
        assert_eq!(ls.refined().len(), 12);
    }

    #[test]
    fn lattice_hausdorff_matches_general() {
        let lat = Lattice::new(rat(1, 16));
        let a = LatticeSet::from_cells(lat.clone(), [(0, 0), (1, 0), (2, 0), (2, 1)]);
        let b = LatticeSet::from_cells(lat.clone(), [(5, 0), (-3, 4)]);
        let exact = directed_hausdorff(&a.to_pixel_set(), &b.to_pixel_set()).unwrap();
        assert_eq!(lattice_directed_hausdorff(&a, &b).unwrap(), exact);
    }
}

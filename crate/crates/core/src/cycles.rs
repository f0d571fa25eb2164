//! Annulus checks for candidate cycle sets and their cross-sections.
//!
//! The complement of a candidate is painted blue from the boundary circle
//! and red from equilibrium squares; what is left (`hat`) must be a thin
//! ring separating the two colours.

use crate::field::{coefficient_bounds_on, PolyVectorField};
use crate::geom::{
    lattice_directed_hausdorff, DenseGrid, GeomError, Lattice, LatticeSet, PixelSet, NEIGHBORS8,
};
use crate::rational::{from_f64, rat, to_f64, Rational};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CyclesError {
    #[error("no complement square touches the boundary circle")]
    NoBoundary,
    #[error("pixel set is not on a common lattice")]
    NotLattice,
}

impl From<GeomError> for CyclesError {
    fn from(_: GeomError) -> Self {
        CyclesError::NotLattice
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coloring {
    pub blue: LatticeSet,
    pub red: LatticeSet,
    pub hat: LatticeSet,
    /// `max(d(hat → blue), d(hat → red))`, exact in the max norm.
    pub width: Rational,
    pub verdict: bool,
}

impl Coloring {
    /// Blue, red and hat as pixel sets.
    pub fn layers(&self) -> [PixelSet; 3] {
        [
            self.blue.to_pixel_set(),
            self.red.to_pixel_set(),
            self.hat.to_pixel_set(),
        ]
    }
}

const FREE: u8 = 0;
const CAND: u8 = 1;
const BLUE: u8 = 2;
const RED: u8 = 3;
const OUT: u8 = 4;

fn flood(g: &mut DenseGrid<u8>, seeds: Vec<(i64, i64)>, colour: u8) {
    let mut q = VecDeque::new();
    for s in seeds {
        if g.get(s.0, s.1) == Some(&FREE) {
            g.set(s.0, s.1, colour);
            q.push_back(s);
        }
    }
    while let Some((i, j)) = q.pop_front() {
        for (a, b) in NEIGHBORS8 {
            let n = (i + a, j + b);
            if g.get(n.0, n.1) == Some(&FREE) {
                g.set(n.0, n.1, colour);
                q.push_back(n);
            }
        }
    }
}

/// Two-colour fill of the complement of `c`; `zero` marks equilibrium
/// squares on the same lattice. The verdict requires `2·width ≤ 1/k` and no
/// zero square left in the hat.
pub fn color_cells(c: &LatticeSet, zero: &LatticeSet, k: u32) -> Result<Coloring, CyclesError> {
    let lat = c.lattice.clone();
    let n = lat.extent();
    let mut g = DenseGrid::new(n, OUT);
    let disk = lat.disk_cells();
    for &(i, j) in &disk {
        g.set(i, j, FREE);
    }
    for &(i, j) in &c.cells {
        if g.get(i, j) == Some(&FREE) {
            g.set(i, j, CAND);
        }
    }
    let boundary: Vec<(i64, i64)> = disk
        .iter()
        .copied()
        .filter(|&(i, j)| lat.meets_circle(i, j) && g.get(i, j) == Some(&FREE))
        .collect();
    if boundary.is_empty() {
        return Err(CyclesError::NoBoundary);
    }
    flood(&mut g, boundary, BLUE);
    // every zero square not reached by blue seeds its own red region
    let seeds: Vec<(i64, i64)> = zero.cells.iter().copied().collect();
    flood(&mut g, seeds, RED);

    let collect = |want: &dyn Fn(u8) -> bool| {
        LatticeSet::from_cells(
            lat.clone(),
            disk.iter().copied().filter(|&(i, j)| want(*g.get(i, j).unwrap())),
        )
    };
    let blue = collect(&|v| v == BLUE);
    let red = collect(&|v| v == RED);
    let hat = collect(&|v| v == FREE || v == CAND);

    let mut verdict = !red.is_empty() && !hat.is_empty() && !hat.intersects(zero);
    let width = if verdict {
        let wb = lattice_directed_hausdorff(&hat, &blue)?;
        let wr = lattice_directed_hausdorff(&hat, &red)?;
        let w = if wb > wr { wb } else { wr };
        verdict = rat(2, 1) * &w <= rat(1, k as i64);
        w
    } else {
        rat(0, 1)
    };
    Ok(Coloring {
        blue,
        red,
        hat,
        width,
        verdict,
    })
}

/// As [`color_cells`] for arbitrary pixel sets: both are rasterized onto
/// the lattice of the smallest square in `c`. A lattice square counts as a
/// zero square when it overlaps `zero` with positive area.
pub fn color_component(c: &PixelSet, zero: &PixelSet, k: u32) -> Result<Coloring, CyclesError> {
    let side = c
        .cells
        .iter()
        .map(|cell| &cell.r * rat(2, 1))
        .min()
        .ok_or(CyclesError::NotLattice)?;
    let lat = Lattice::new(crate::rational::floor_pow2(&side));
    let cells = LatticeSet::from_pixel_set(c, &lat)?;
    let mut z = LatticeSet::new(lat.clone());
    for cell in &zero.cells {
        let r = cell.rect_f64();
        let (i0, j0) = lat.index_of([r[0], r[2]]);
        let (i1, j1) = lat.index_of([r[1], r[3]]);
        for i in i0..=i1 {
            for j in j0..=j1 {
                let q = lat.rect(i, j);
                if q[0] < r[1] && r[0] < q[1] && q[2] < r[3] && r[2] < q[3] {
                    z.cells.insert((i, j));
                }
            }
        }
    }
    color_cells(&cells, &z, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    #[serde(with = "point_str")]
    pub p: [Rational; 2],
    #[serde(with = "point_str")]
    pub q: [Rational; 2],
    /// Certified lower bound on the angle between f and the segment.
    pub transversality_angle: f64,
    /// Certified upper bound on max ∠(f(p), f(z)) over the segment.
    pub theta: f64,
}

impl CrossSection {
    pub fn p_f64(&self) -> [f64; 2] {
        [to_f64(&self.p[0]), to_f64(&self.p[1])]
    }

    pub fn q_f64(&self) -> [f64; 2] {
        [to_f64(&self.q[0]), to_f64(&self.q[1])]
    }

    pub fn length(&self) -> f64 {
        let (p, q) = (self.p_f64(), self.q_f64());
        (q[0] - p[0]).hypot(q[1] - p[1])
    }

    /// The point at arc length `s` from `p`.
    pub fn at(&self, s: f64) -> [f64; 2] {
        let (p, q) = (self.p_f64(), self.q_f64());
        let l = self.length();
        [p[0] + (q[0] - p[0]) * s / l, p[1] + (q[1] - p[1]) * s / l]
    }
}

mod point_str {
    use crate::rational::{format_rational, parse_rational, Rational};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &[Rational; 2], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(p.iter().map(format_rational))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[Rational; 2], D::Error> {
        let v: Vec<String> = Vec::deserialize(d)?;
        if v.len() != 2 {
            return Err(D::Error::custom("expected two coordinates"));
        }
        let p = |s: &str| parse_rational(s).map_err(|e| D::Error::custom(e.0));
        Ok([p(&v[0])?, p(&v[1])?])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SectionOutcome {
    Section(CrossSection),
    RetryNeeded,
}

fn angle(a: [f64; 2], b: [f64; 2]) -> f64 {
    let c = (a[0] * b[0] + a[1] * b[1]) / (a[0].hypot(a[1]) * b[0].hypot(b[1]));
    c.clamp(-1.0, 1.0).acos()
}

/// Entry parameter of the ray `p + t v` into a rectangle, if any.
fn ray_hit(p: [f64; 2], v: [f64; 2], r: [f64; 4]) -> Option<(f64, f64)> {
    let mut lo: f64 = 0.0;
    let mut hi = f64::INFINITY;
    for (k, (a, b)) in [(r[0], r[1]), (r[2], r[3])].into_iter().enumerate() {
        if v[k] == 0.0 {
            if p[k] < a || p[k] > b {
                return None;
            }
        } else {
            let (t0, t1) = ((a - p[k]) / v[k], (b - p[k]) / v[k]);
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Upper bound on `max ∠(f(p), f(z))` for z on the segment, from samples and
/// the Lipschitz constant `l`; `None` when f gets too small to bound.
fn theta_bound(ff: &crate::field::FloatField, p: [f64; 2], q: [f64; 2], l: f64, n: usize) -> Option<f64> {
    let fp = ff.eval(p);
    let len = (q[0] - p[0]).hypot(q[1] - p[1]);
    let half = len / (2 * n) as f64;
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        let s = i as f64 / n as f64;
        let z = [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])];
        let fz = ff.eval(z);
        let nz = fz[0].hypot(fz[1]);
        let slip = l * half * (1.0 + 1e-9);
        if slip >= nz {
            return None;
        }
        worst = worst.max(angle(fp, fz) + (slip / nz).asin() + 1e-12);
    }
    Some(worst)
}

/// Segment from a red/hat corner along the normal of f to the nearest blue
/// square.
pub fn build_cross_section(coloring: &Coloring, field: &PolyVectorField) -> SectionOutcome {
    let lat = &coloring.hat.lattice;
    let s = lat.sf;
    let ff = field.compile();
    let l = to_f64(&coefficient_bounds_on(field, &rat(5, 4)).1);
    let red_rects: Vec<[f64; 4]> = coloring.red.cells.iter().map(|&(i, j)| lat.rect(i, j)).collect();
    let blue_rects: Vec<[f64; 4]> = coloring.blue.cells.iter().map(|&(i, j)| lat.rect(i, j)).collect();

    // corners shared by a hat square and a red square
    let mut corners = std::collections::BTreeSet::new();
    for &(i, j) in &coloring.hat.cells {
        for (a, b) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let v = (i + a, j + b);
            let touching_red = [(0, 0), (-1, 0), (0, -1), (-1, -1)]
                .iter()
                .any(|&(c, d)| coloring.red.contains(&(v.0 + c, v.1 + d)));
            if touching_red {
                corners.insert(v);
            }
        }
    }
    let stride = (corners.len() / 64).max(1);
    for &(vi, vj) in corners.iter().step_by(stride) {
        let p = [vi as f64 * s, vj as f64 * s];
        let fp = ff.eval(p);
        let nf = fp[0].hypot(fp[1]);
        if nf <= 1e-9 {
            continue;
        }
        let normal = [-fp[1] / nf, fp[0] / nf];
        let p_exact = [from_f64(p[0]), from_f64(p[1])];
        for sign in [1.0, -1.0] {
            let v = [sign * normal[0], sign * normal[1]];
            // the ray must leave red immediately and never meet it again before blue
            let probe = [p[0] + v[0] * s * 1e-3, p[1] + v[1] * s * 1e-3];
            if red_rects
                .iter()
                .any(|r| probe[0] >= r[0] && probe[0] <= r[1] && probe[1] >= r[2] && probe[1] <= r[3])
            {
                continue;
            }
            let t_blue = blue_rects
                .iter()
                .filter_map(|r| ray_hit(p, v, *r))
                .map(|(t0, _)| t0)
                .fold(f64::INFINITY, f64::min);
            if !t_blue.is_finite() || t_blue <= 0.0 {
                continue;
            }
            let t_red = red_rects
                .iter()
                .filter_map(|r| ray_hit(p, v, *r))
                .filter(|&(_, t1)| t1 > 1e-12)
                .map(|(t0, _)| t0)
                .filter(|&t0| t0 > 1e-12)
                .fold(f64::INFINITY, f64::min);
            if t_red <= t_blue {
                continue;
            }
            let q = [p[0] + t_blue * v[0], p[1] + t_blue * v[1]];
            let q_exact = [from_f64(q[0]), from_f64(q[1])];
            let qf = [to_f64(&q_exact[0]), to_f64(&q_exact[1])];
            // the direction error of the rounded normal
            let v_err = angle(normal, [sign * (qf[0] - p[0]), sign * (qf[1] - p[1])]);
            if v_err >= PI / 11.0 {
                continue;
            }
            let mut n = 64;
            let mut theta = None;
            while n <= 1 << 16 {
                match theta_bound(&ff, p, qf, l, n) {
                    Some(t) if t <= PI / 10.0 => {
                        theta = Some(t);
                        break;
                    }
                    _ => n *= 4,
                }
            }
            if let Some(theta) = theta {
                return SectionOutcome::Section(CrossSection {
                    p: p_exact,
                    q: q_exact,
                    transversality_angle: PI / 2.0 - theta - v_err,
                    theta,
                });
            }
        }
    }
    SectionOutcome::RetryNeeded
}

/// Whether the segment meets the circle of radius `r` about the origin.
pub fn crosses_circle(section: &CrossSection, r: f64) -> bool {
    let (p, q) = (section.p_f64(), section.q_f64());
    let d = [q[0] - p[0], q[1] - p[1]];
    let t = (-(p[0] * d[0] + p[1] * d[1]) / (d[0] * d[0] + d[1] * d[1])).clamp(0.0, 1.0);
    let nearest = (p[0] + t * d[0]).hypot(p[1] + t * d[1]);
    nearest <= r && p[0].hypot(p[1]).max(q[0].hypot(q[1])) >= r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::geom::annulus_cells;
    use proptest::prelude::*;

    fn setup(k: u32, spacing: Rational) -> (LatticeSet, LatticeSet, Coloring) {
        let lat = Lattice::new(spacing);
        let ring = annulus_cells(&lat, 0.45, 0.55);
        let zero = LatticeSet::from_cells(lat, [(-1, -1), (-1, 0), (0, -1), (0, 0)]);
        let col = color_cells(&ring, &zero, k).unwrap();
        (ring, zero, col)
    }

    #[test]
    fn thin_annulus_passes_coarse_k() {
        let (ring, _, col) = setup(4, rat(1, 64));
        assert!(col.verdict);
        assert!(rat(2, 1) * &col.width <= rat(1, 4));
        assert!(to_f64(&col.width) >= 0.1);
        assert!(ring.is_subset(&col.hat));
    }

    #[test]
    fn thin_annulus_fails_fine_k() {
        let (_, _, col) = setup(64, rat(1, 64));
        assert!(!col.verdict);
    }

    #[test]
    fn blob_without_hole() {
        let lat = Lattice::new(rat(1, 32));
        let blob = annulus_cells(&lat, 0.0, 0.2);
        let zero = LatticeSet::from_cells(lat.clone(), [(0, 0)]);
        let col = color_cells(&blob, &zero, 4).unwrap();
        assert!(!col.verdict);
        assert!(col.red.is_empty());
    }

    #[test]
    fn covering_the_boundary_is_rejected() {
        let lat = Lattice::new(rat(1, 8));
        let all = LatticeSet::from_cells(lat.clone(), lat.disk_cells());
        let zero = LatticeSet::new(lat);
        assert_eq!(color_cells(&all, &zero, 4), Err(CyclesError::NoBoundary));
    }

    #[test]
    fn pixel_wrapper_matches_lattice() {
        let (ring, _, col) = setup(4, rat(1, 64));
        let zero_px = PixelSet::new(vec![crate::geom::Cell::square(rat(0, 1), rat(0, 1), rat(1, 64))]);
        let col2 = color_component(&ring.to_pixel_set(), &zero_px, 4).unwrap();
        assert_eq!(col2.width, col.width);
        assert_eq!(col2.hat, col.hat);
    }

    #[test]
    fn circle_section_is_radial() {
        let (_, _, col) = setup(4, rat(1, 64));
        let f = fixtures::attracting_circle(&rat(1, 4)).unwrap();
        let sec = match build_cross_section(&col, &f) {
            SectionOutcome::Section(s) => s,
            SectionOutcome::RetryNeeded => panic!("no section"),
        };
        assert!(crosses_circle(&sec, 0.5));
        assert!(sec.transversality_angle >= 3.0 * PI / 10.0);
        let (p, q) = (sec.p_f64(), sec.q_f64());
        let d = [q[0] - p[0], q[1] - p[1]];
        let radial = angle(d, p);
        assert!(radial < 0.05, "{radial}");
        // sampled transversality
        let ff = f.compile();
        for i in 0..100 {
            let z = sec.at(sec.length() * i as f64 / 99.0);
            let a = angle(ff.eval(z), d);
            let a = a.min(PI - a);
            assert!(a >= 3.0 * PI / 10.0 - 1e-6);
        }
    }

    #[test]
    fn twisting_field_needs_retry() {
        // the field turns by more than π/11 across any radial segment of the ring
        use crate::field::Poly;
        let (_, _, col) = setup(4, rat(1, 64));
        let r2 = Poly::x().pow(2).add(&Poly::y().pow(2));
        let s = r2.sub(&Poly::constant(rat(1, 4))).scale(&rat(40, 1));
        let f = PolyVectorField::new(
            Poly::y().scale(&rat(-1, 1)).add(&Poly::x().mul(&s)),
            Poly::x().add(&Poly::y().mul(&s)),
        );
        assert_eq!(build_cross_section(&col, &f), SectionOutcome::RetryNeeded);
    }

    proptest! {
        #[test]
        fn colours_partition_the_disk(lo in 0.1f64..0.6, w in 0.05f64..0.3) {
            let lat = Lattice::new(rat(1, 32));
            let ring = annulus_cells(&lat, lo, lo + w);
            let zero = LatticeSet::from_cells(lat.clone(), [(0, 0)]);
            let col = color_cells(&ring, &zero, 4).unwrap();
            prop_assert!(!col.blue.intersects(&col.red));
            prop_assert!(!col.blue.intersects(&col.hat));
            prop_assert!(!col.red.intersects(&col.hat));
            prop_assert_eq!(col.blue.len() + col.red.len() + col.hat.len(), lat.disk_cells().len());
            prop_assert!(ring.is_subset(&col.hat));
        }
    }
}

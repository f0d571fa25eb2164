//! Set-valued simulation: images of pixel sets under the flow, and the
//! invariance test built on top of it.

use crate::euler::{self, certified_step, global_error_bound, EulerError};
use crate::field::{compute_bounds, FieldBounds, FieldError, FloatField, PolyVectorField};
use crate::geom::{complement_closure, Cell, PixelSet};
use crate::rational::{self, exp_up, from_f64, next_up, to_f64, Rational};
use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvolveError {
    #[error(transparent)]
    Euler(#[from] EulerError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("more than {0} grid points")]
    BudgetExceeded(usize),
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn field(self, f: &PolyVectorField) -> PolyVectorField {
        match self {
            Direction::Forward => f.clone(),
            Direction::Backward => f.negated(),
        }
    }
}

/// Certified parameters from the error analysis, or a user-chosen step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Mode {
    Certified,
    Practical {
        /// Euler step; `None` means eps/4.
        #[serde(default)]
        h: Option<f64>,
        /// Start-point grid spacing; `None` means eps/2.
        #[serde(default)]
        grid: Option<f64>,
    },
}

impl Mode {
    pub fn practical() -> Self {
        Mode::Practical { h: None, grid: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Certified => "certified",
            Mode::Practical { .. } => "practical",
        }
    }
}

pub const MAX_GRID_POINTS: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionResult {
    pub set: PixelSet,
    #[serde(with = "rational::serde_str")]
    pub eps: Rational,
    #[serde(with = "rational::serde_str")]
    pub t: Rational,
    pub mode: String,
    /// A-posteriori bound on the distance from each output center to the
    /// true image of the nearest start point's neighbourhood.
    pub achieved_bound: f64,
    pub left_domain: usize,
}

/// Integration plan shared by both entry points.
struct Plan {
    ff: FloatField,
    h: f64,
    /// ρ-grid for certified rounding; 0 in practical mode.
    rho: f64,
    spacing: Rational,
    bound: f64,
}

fn plan(
    field: &PolyVectorField,
    bounds: &FieldBounds,
    eps: &Rational,
    horizon: &Rational,
    mode: &Mode,
) -> Result<Plan, EvolveError> {
    let ff = field.compile();
    match mode {
        Mode::Certified => {
            let quarter = eps / Rational::from_integer(BigInt::from(4));
            let p = euler::choose_parameters(bounds, &quarter, horizon)?;
            let l = rational::max(&bounds.l, &Rational::from_integer(BigInt::from(1)));
            let growth = from_f64(exp_up(next_up(to_f64(&(horizon * &l)))));
            // start points within spacing/2 of every x ∈ D; e^{LT}·spacing/2
            // ≤ eps/4 keeps the sandwich intact
            let spacing = rational::floor_pow2(&(eps / (Rational::from_integer(BigInt::from(2)) * growth)));
            Ok(Plan {
                ff,
                h: p.h_f64(),
                rho: p.rho_f64(),
                bound: to_f64(&quarter),
                spacing,
            })
        }
        Mode::Practical { h, grid } => {
            let e = to_f64(eps);
            let h = h.unwrap_or(e / 4.0);
            let spacing = match grid {
                Some(g) => from_f64(*g),
                None => eps / Rational::from_integer(BigInt::from(2)),
            };
            if !(h > 0.0) || !spacing.is_positive() {
                return Err(EvolveError::Invalid("step and grid must be positive".into()));
            }
            let gap = to_f64(&spacing) / 2.0;
            let bound = global_error_bound(bounds, h, 4.0 * f64::EPSILON, to_f64(horizon), gap);
            Ok(Plan {
                ff,
                h,
                rho: 0.0,
                spacing,
                bound,
            })
        }
    }
}

/// Grid points `(i s, j s)` within max-norm `s/2` of `d`, kept if
/// `‖p‖₂ ≤ 1 + s`.
pub fn start_points(d: &PixelSet, s: &Rational) -> Result<Vec<[f64; 2]>, EvolveError> {
    let half = s / Rational::from_integer(BigInt::from(2));
    let mut idx: BTreeSet<(i64, i64)> = BTreeSet::new();
    let to_i = |q: Rational| q.to_integer().to_i64().unwrap_or(i64::MAX);
    for c in &d.cells {
        let r = &c.r + &half;
        let i0 = to_i(((&c.cx - &r) / s).ceil());
        let i1 = to_i(((&c.cx + &r) / s).floor());
        let j0 = to_i(((&c.cy - &r) / s).ceil());
        let j1 = to_i(((&c.cy + &r) / s).floor());
        if (i1 - i0 + 1).saturating_mul(j1 - j0 + 1) > MAX_GRID_POINTS as i64 {
            return Err(EvolveError::BudgetExceeded(MAX_GRID_POINTS));
        }
        for i in i0..=i1 {
            for j in j0..=j1 {
                idx.insert((i, j));
            }
        }
        if idx.len() > MAX_GRID_POINTS {
            return Err(EvolveError::BudgetExceeded(MAX_GRID_POINTS));
        }
    }
    let sf = to_f64(s);
    let lim = 1.0 + sf;
    Ok(idx
        .into_iter()
        .map(|(i, j)| [i as f64 * sf, j as f64 * sf])
        .filter(|p| p[0].hypot(p[1]) <= lim)
        .collect())
}

/// Positions after each of the requested step counts (sorted ascending), or
/// `None` if the iterate leaves the `1 + slack` disk.
fn integrate(plan: &Plan, x0: [f64; 2], marks: &[usize], slack: f64) -> Option<Vec<[f64; 2]>> {
    let mut y = x0;
    let mut out = Vec::with_capacity(marks.len());
    let mut k = 0usize;
    for &m in marks {
        while k < m {
            y = if plan.rho > 0.0 {
                certified_step(&plan.ff, y, plan.h, plan.rho).ok()?
            } else {
                let v = plan.ff.eval(y);
                [y[0] + plan.h * v[0], y[1] + plan.h * v[1]]
            };
            k += 1;
            if y[0].hypot(y[1]) > 1.0 + slack {
                return None;
            }
        }
        out.push(y);
    }
    Some(out)
}

fn steps_for(horizon: &Rational, h: f64) -> usize {
    (to_f64(horizon) / h).ceil().max(1.0) as usize
}

/// Over-approximation of the time-`T` image of `d` by balls of radius eps/2.
pub fn time_evolution(
    field: &PolyVectorField,
    d: &PixelSet,
    eps: &Rational,
    t: &Rational,
    direction: Direction,
    mode: &Mode,
) -> Result<EvolutionResult, EvolveError> {
    check_eps_t(eps, t)?;
    let g = direction.field(field);
    let bounds = compute_bounds(field)?;
    let plan = plan(&g, &bounds, eps, t, mode)?;
    let pts = start_points(d, &plan.spacing)?;
    let n = steps_for(t, plan.h);
    let slack = to_f64(eps);
    let ends: Vec<Option<[f64; 2]>> = pts
        .par_iter()
        .map(|&p| integrate(&plan, p, &[n], slack).map(|v| v[0]))
        .collect();
    let r = eps / Rational::from_integer(BigInt::from(2));
    let left = ends.iter().filter(|e| e.is_none()).count();
    let cells = ends
        .into_iter()
        .flatten()
        .map(|y| Cell::ball(from_f64(y[0]), from_f64(y[1]), r.clone()))
        .collect();
    Ok(EvolutionResult {
        set: PixelSet::new(cells),
        eps: eps.clone(),
        t: t.clone(),
        mode: mode.name().into(),
        achieved_bound: plan.bound,
        left_domain: left,
    })
}

fn check_eps_t(eps: &Rational, t: &Rational) -> Result<(), EvolveError> {
    if !eps.is_positive() || eps >= &Rational::from_integer(BigInt::from(1)) {
        return Err(EvolveError::Invalid("eps must lie in (0, 1)".into()));
    }
    if !t.is_positive() {
        return Err(EvolveError::Invalid("T must be positive".into()));
    }
    Ok(())
}

/// Spatial hash of closed rectangles for "does this square meet any of them".
pub(crate) struct RectIndex {
    bucket: f64,
    map: HashMap<(i64, i64), Vec<[f64; 4]>>,
}

impl RectIndex {
    pub(crate) fn new(rects: &[[f64; 4]], bucket: f64) -> Self {
        let mut map: HashMap<(i64, i64), Vec<[f64; 4]>> = HashMap::new();
        for r in rects {
            let (i0, i1) = ((r[0] / bucket).floor() as i64, (r[1] / bucket).floor() as i64);
            let (j0, j1) = ((r[2] / bucket).floor() as i64, (r[3] / bucket).floor() as i64);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    map.entry((i, j)).or_default().push(*r);
                }
            }
        }
        RectIndex { bucket, map }
    }

    /// Whether the closed square of half-side `r` at `p` meets a stored
    /// rectangle (touching counts).
    pub(crate) fn meets(&self, p: [f64; 2], r: f64) -> bool {
        let b = self.bucket;
        let (i0, i1) = (((p[0] - r) / b).floor() as i64, ((p[0] + r) / b).floor() as i64);
        let (j0, j1) = (((p[1] - r) / b).floor() as i64, ((p[1] + r) / b).floor() as i64);
        for i in i0..=i1 {
            for j in j0..=j1 {
                if let Some(v) = self.map.get(&(i, j)) {
                    for q in v {
                        if p[0] - r <= q[1] && q[0] <= p[0] + r && p[1] - r <= q[3] && q[2] <= p[1] + r {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Returns true only if `φ_t(D) ⊆ D` is certified for every `t ≥ T`.
///
/// The images `D_i` at times `T + t_i` (spacing at most eps/(4M)) are
/// evolved at accuracy eps/4 and must keep clear of `A ⊕ eps/4`, where `A`
/// over-approximates the closure of the complement of `D` in the disk.
pub fn has_invariant_subset(
    field: &PolyVectorField,
    d: &PixelSet,
    eps: &Rational,
    t: &Rational,
    mode: &Mode,
) -> Result<bool, EvolveError> {
    check_eps_t(eps, t)?;
    if d.is_empty() {
        return Ok(false);
    }
    let bounds = compute_bounds(field)?;
    let four = Rational::from_integer(BigInt::from(4));
    let quarter = eps / &four;
    let eighth = &quarter / Rational::from_integer(BigInt::from(2));
    let two_t = t * Rational::from_integer(BigInt::from(2));
    let plan = plan(field, &bounds, &quarter, &two_t, mode)?;

    // sample times T + t_i as step counts
    let n_t = steps_for(t, plan.h);
    let m = to_f64(&rational::max(&bounds.m, &Rational::from_integer(BigInt::from(1))));
    let stride = ((to_f64(eps) / (4.0 * m)) / plan.h).floor().max(1.0) as usize;
    let mut marks: Vec<usize> = (0..=n_t).step_by(stride).map(|k| n_t + k).collect();
    if *marks.last().unwrap() != 2 * n_t {
        marks.push(2 * n_t);
    }

    let a = complement_closure(d, &eighth);
    let a_rects: Vec<[f64; 4]> = a.cells.iter().map(|c| c.rect_f64()).collect();
    let index = RectIndex::new(&a_rects, to_f64(&eighth).max(1e-6));
    // ball radius eps/8 plus the dilation eps/4, with float slack toward
    // reporting an intersection
    let reach = next_up(to_f64(&(&eighth + &quarter))) * (1.0 + 1e-12);

    let pts = start_points(d, &plan.spacing)?;
    let slack = to_f64(&quarter);
    let ok = pts.par_iter().all(|&p| match integrate(&plan, p, &marks, slack) {
        None => false,
        Some(ys) => {
            ys.iter().all(|&y| !index.meets(y, reach)) && d.contains_f64(ys[0], 0.0)
        }
    });
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Poly;
    use crate::fixtures;
    use crate::geom::{annulus_cells, hausdorff, Lattice};
    use crate::rational::{int, parse_rational, rat};

    fn contraction() -> PolyVectorField {
        PolyVectorField::new(Poly::x().scale(&int(-1)), Poly::y().scale(&int(-1)))
    }

    fn annulus(lo: f64, hi: f64, s: &Rational) -> PixelSet {
        annulus_cells(&Lattice::new(s.clone()), lo, hi).to_pixel_set()
    }

    #[test]
    fn contraction_halves_the_ball() {
        let d = PixelSet::new(vec![Cell::ball(int(0), int(0), rat(1, 2))]);
        let t = parse_rational("0.6931500").unwrap();
        let eps = rat(1, 8);
        for mode in [Mode::Certified, Mode::practical()] {
            let r = time_evolution(&contraction(), &d, &eps, &t, Direction::Forward, &mode).unwrap();
            assert_eq!(r.left_domain, 0);
            assert!(!r.set.is_empty());
            for c in &r.set.cells {
                assert!(to_f64(&c.cx).abs().max(to_f64(&c.cy).abs()) <= 0.25 + 0.125);
            }
        }
    }

    #[test]
    fn fixed_point_image() {
        let f = fixtures::attracting_circle(&rat(1, 4)).unwrap();
        let d = PixelSet::new(vec![Cell::ball(int(0), int(0), rat(1, 1024))]);
        let r = time_evolution(&f, &d, &rat(1, 8), &int(1), Direction::Forward, &Mode::practical()).unwrap();
        assert_eq!(r.set.len(), 1);
        assert_eq!(r.set.cells[0].cx, int(0));
    }

    #[test]
    fn nested_annulus_collapses_to_circle() {
        let f = fixtures::nested(&[rat(1, 4), rat(1, 2), rat(3, 4)]).unwrap();
        let eps = rat(1, 16);
        let d = annulus(0.45, 0.55, &rat(1, 64));
        let r = time_evolution(&f, &d, &eps, &int(20), Direction::Forward, &Mode::practical()).unwrap();
        let circle = annulus(0.5, 0.5, &rat(1, 256));
        let dh = hausdorff(&r.set, &circle).unwrap();
        assert!(to_f64(&dh) <= 3.0 / 16.0, "d_H = {}", to_f64(&dh));
    }

    #[test]
    fn invariance_examples() {
        let f = contraction();
        let ball = PixelSet::new(vec![Cell::ball(int(0), int(0), rat(1, 2))]);
        assert!(has_invariant_subset(&f, &ball, &rat(1, 8), &int(1), &Mode::practical()).unwrap());
        let ring = PixelSet::new(
            Lattice::new(rat(1, 10))
                .disk_cells()
                .into_iter()
                .filter(|&(i, j)| {
                    let c = Lattice::new(rat(1, 10)).center(i, j);
                    let n = c[0].abs().max(c[1].abs());
                    (0.4..=0.6).contains(&n)
                })
                .map(|(i, j)| Lattice::new(rat(1, 10)).cell(i, j))
                .collect(),
        );
        assert!(!has_invariant_subset(&f, &ring, &rat(1, 8), &int(1), &Mode::practical()).unwrap());
    }
}

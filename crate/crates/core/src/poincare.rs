//! First-return map on a cross-section and its derivative.
//!
//! The section is parameterized by arc length `s ∈ [0, ℓ]` from `p` to `q`.
//! Returns are found by Euler integration of the flow together with its
//! variational equation; the crossing inside a step is located on the cubic
//! Hermite interpolant of the Euler points, which keeps `P` smooth in `s`.
//! Two step sizes are combined by Richardson extrapolation.

use crate::cycles::CrossSection;
use crate::field::{FloatField, PolyVectorField};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoincareError {
    #[error("trajectory from s = {0} did not return within the time budget")]
    NoReturn(f64),
    #[error("trajectory from s = {0} left the disk")]
    LeftDisk(f64),
    #[error("|DP − 1| = {margin:e} at s = {s}: cycle not certified hyperbolic")]
    NonHyperbolic { s: f64, margin: f64 },
    #[error("requested accuracy not reached with step {0:e}")]
    Inconclusive(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSample {
    /// Section parameter of the start point.
    pub x: f64,
    /// Section parameter of the return point (may fall outside `[0, ℓ]`).
    pub px: f64,
    pub tau: f64,
    pub dpx: f64,
    /// Estimated error of `px`.
    pub error: f64,
}

impl ReturnSample {
    pub const CSV_HEADER: &'static str = "x,px,tau,dpx,error";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.x, self.px, self.tau, self.dpx, self.error)
    }
}

pub fn samples_to_csv(samples: &[ReturnSample]) -> String {
    let mut s = String::from(ReturnSample::CSV_HEADER);
    s.push('\n');
    for r in samples {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Longest simulated time for one return.
pub const MAX_RETURN_TIME: f64 = 200.0;
const FIRST_STEP_LOG2: i32 = 7;
const LAST_STEP_LOG2: i32 = 18;

/// Geometry of the section line.
#[derive(Debug, Clone, Copy)]
struct Line {
    p: [f64; 2],
    d: [f64; 2],
    n: [f64; 2],
    len: f64,
    /// Side the flow crosses towards, +1 along `n` or −1.
    sigma: f64,
}

impl Line {
    fn new(section: &CrossSection, ff: &FloatField) -> Line {
        let p = section.p_f64();
        let q = section.q_f64();
        let len = section.length();
        let d = [(q[0] - p[0]) / len, (q[1] - p[1]) / len];
        let n = [-d[1], d[0]];
        let mid = [p[0] + d[0] * len / 2.0, p[1] + d[1] * len / 2.0];
        let f = ff.eval(mid);
        let sigma = if f[0] * n[0] + f[1] * n[1] >= 0.0 { 1.0 } else { -1.0 };
        Line { p, d, n, len, sigma }
    }

    fn point(&self, s: f64) -> [f64; 2] {
        [self.p[0] + s * self.d[0], self.p[1] + s * self.d[1]]
    }

    fn side(&self, x: [f64; 2]) -> f64 {
        self.sigma * ((x[0] - self.p[0]) * self.n[0] + (x[1] - self.p[1]) * self.n[1])
    }

    fn param(&self, x: [f64; 2]) -> f64 {
        (x[0] - self.p[0]) * self.d[0] + (x[1] - self.p[1]) * self.d[1]
    }
}

type M2 = [[f64; 2]; 2];

fn mat_mul(a: &M2, b: &M2) -> M2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

struct Run {
    px: f64,
    tau: f64,
    dpx: f64,
}

fn hermite(x0: [f64; 2], m0: [f64; 2], x1: [f64; 2], m1: [f64; 2], t: f64) -> [f64; 2] {
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    [0, 1].map(|k| h00 * x0[k] + h10 * m0[k] + h01 * x1[k] + h11 * m1[k])
}

/// One Euler pass with step `h` from section parameter `s`.
fn run(ff: &FloatField, line: &Line, s: f64, h: f64) -> Result<Run, PoincareError> {
    let mut x = line.point(s);
    let mut phi: M2 = [[1.0, 0.0], [0.0, 1.0]];
    let mut t = 0.0;
    let steps = (MAX_RETURN_TIME / h).ceil() as u64;
    let (mut f, mut df) = ff.eval_and_jacobian(x);
    for _ in 0..steps {
        let xn = [x[0] + h * f[0], x[1] + h * f[1]];
        let step = [[1.0 + h * df[0][0], h * df[0][1]], [h * df[1][0], 1.0 + h * df[1][1]]];
        let phin = mat_mul(&step, &phi);
        if xn[0].hypot(xn[1]) > 1.0 + 1e-6 {
            return Err(PoincareError::LeftDisk(s));
        }
        let (fnx, dfn) = ff.eval_and_jacobian(xn);
        let (g0, g1) = (line.side(x), line.side(xn));
        // the start sits on the line (up to rounding) and moves to the
        // positive side, so only a full turn brings the trajectory back from
        // the negative side
        if t > 0.0 && g0 < 0.0 && g1 >= 0.0 {
            let m0 = [h * f[0], h * f[1]];
            let m1 = [h * fnx[0], h * fnx[1]];
            let g = |th: f64| line.side(hermite(x, m0, xn, m1, th));
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..64 {
                let mid = 0.5 * (lo + hi);
                if g(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let th = 0.5 * (lo + hi);
            let xr = hermite(x, m0, xn, m1, th);
            let fr = ff.eval(xr);
            let ph = [0, 1].map(|i| [0, 1].map(|j| phi[i][j] + th * (phin[i][j] - phi[i][j])));
            let u = line.d;
            let pu = [ph[0][0] * u[0] + ph[0][1] * u[1], ph[1][0] * u[0] + ph[1][1] * u[1]];
            let nf = line.n[0] * fr[0] + line.n[1] * fr[1];
            let dtau = -(line.n[0] * pu[0] + line.n[1] * pu[1]) / nf;
            let dx = [pu[0] + fr[0] * dtau, pu[1] + fr[1] * dtau];
            return Ok(Run {
                px: line.param(xr),
                tau: t + th * h,
                dpx: line.d[0] * dx[0] + line.d[1] * dx[1],
            });
        }
        x = xn;
        phi = phin;
        f = fnx;
        df = dfn;
        t += h;
    }
    Err(PoincareError::NoReturn(s))
}

/// Richardson combination of Euler runs with steps `2^-k`, `2^-(k+1)`,
/// `2^-(k+2)`; the error is the gap between the two extrapolants.
fn sample_at_level(ff: &FloatField, line: &Line, s: f64, k: i32) -> Result<ReturnSample, PoincareError> {
    let r: Vec<Run> = (k..k + 3)
        .map(|j| run(ff, line, s, 2f64.powi(-j)))
        .collect::<Result<_, _>>()?;
    let ex = |f: &dyn Fn(&Run) -> f64, i: usize| 2.0 * f(&r[i + 1]) - f(&r[i]);
    let px = ex(&|r| r.px, 1);
    Ok(ReturnSample {
        x: s,
        px,
        tau: ex(&|r| r.tau, 1),
        dpx: ex(&|r| r.dpx, 1),
        error: (px - ex(&|r| r.px, 0)).abs(),
    })
}

/// Coarsest step level meeting `accuracy` at the start `s`.
fn level_at(ff: &FloatField, line: &Line, s: f64, accuracy: f64, from: i32) -> Result<i32, PoincareError> {
    let mut k = from;
    loop {
        if sample_at_level(ff, line, s, k)?.error <= accuracy {
            return Ok(k);
        }
        k += 1;
        if k > LAST_STEP_LOG2 {
            return Err(PoincareError::Inconclusive(2f64.powi(-k)));
        }
    }
}

/// One step level for a whole section: the finest needed at either end
/// or the middle.
fn level_for(ff: &FloatField, line: &Line, accuracy: f64) -> Result<i32, PoincareError> {
    let mut k = FIRST_STEP_LOG2;
    for s in [0.0, line.len / 2.0, line.len] {
        k = level_at(ff, line, s, accuracy, k)?;
    }
    Ok(k)
}

/// `P(x)` with its return time and derivative, using the coarsest step
/// whose error estimate is within `accuracy`.
pub fn return_map(
    field: &PolyVectorField,
    section: &CrossSection,
    x: f64,
    accuracy: f64,
) -> Result<ReturnSample, PoincareError> {
    let ff = field.compile();
    let line = Line::new(section, &ff);
    let k = level_at(&ff, &line, x, accuracy, FIRST_STEP_LOG2)?;
    sample_at_level(&ff, &line, x, k)
}

pub fn return_derivative(
    field: &PolyVectorField,
    section: &CrossSection,
    x: f64,
    accuracy: f64,
) -> Result<f64, PoincareError> {
    return_map(field, section, x, accuracy).map(|r| r.dpx)
}

/// A sampler with the step fixed once for the whole section, so that `P`
/// is a smooth function of the parameter.
pub struct SectionMap {
    ff: FloatField,
    line: Line,
    level: i32,
}

impl SectionMap {
    pub fn new(field: &PolyVectorField, section: &CrossSection, accuracy: f64) -> Result<Self, PoincareError> {
        let ff = field.compile();
        let line = Line::new(section, &ff);
        let level = level_for(&ff, &line, accuracy)?;
        Ok(SectionMap { ff, line, level })
    }

    pub fn length(&self) -> f64 {
        self.line.len
    }

    pub fn step(&self) -> f64 {
        2f64.powi(-self.level)
    }

    pub fn sample(&self, s: f64) -> Result<ReturnSample, PoincareError> {
        sample_at_level(&self.ff, &self.line, s, self.level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    /// Isolating parameter interval.
    pub interval: [f64; 2],
    pub s: f64,
    pub multiplier: f64,
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointCount {
    pub count: usize,
    pub fixed_points: Vec<FixedPoint>,
    pub samples: Vec<ReturnSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitCount {
    pub per_component: Vec<(usize, usize)>,
    pub total: usize,
}

impl OrbitCount {
    pub fn from_counts(per_component: Vec<(usize, usize)>) -> Self {
        let total = per_component.iter().map(|c| c.1).sum();
        OrbitCount { per_component, total }
    }
}

/// Smallest |DP − 1| accepted at a fixed point.
pub const HYPERBOLIC_TOL: f64 = 1e-3;
const INITIAL_SAMPLES: usize = 32;

/// Zeros of `Q(s) = P(s) − s` on the section.
///
/// Sign changes of Q on a sample grid are bracketed and refined by
/// bisection. A subinterval without a sign change is split further while
/// Q is small relative to its slope there, so tangential double zeros are
/// not silently skipped; they end in [`PoincareError::NonHyperbolic`].
pub fn count_fixed_points(
    field: &PolyVectorField,
    section: &CrossSection,
    accuracy: f64,
) -> Result<FixedPointCount, PoincareError> {
    let map = SectionMap::new(field, section, accuracy)?;
    let len = map.length();
    let mut samples: Vec<ReturnSample> = (0..=INITIAL_SAMPLES)
        .map(|i| map.sample(len * i as f64 / INITIAL_SAMPLES as f64))
        .collect::<Result<_, _>>()?;
    let q = |r: &ReturnSample| r.px - r.x;
    let dq = |r: &ReturnSample| r.dpx - 1.0;

    // split suspicious intervals: |Q| at both ends within reach of the slopes
    let mut i = 0;
    while i + 1 < samples.len() {
        let (a, b) = (&samples[i], &samples[i + 1]);
        let w = b.x - a.x;
        let same_sign = q(a) * q(b) > 0.0;
        let reach = w * dq(a).abs().max(dq(b).abs());
        let tight = q(a).abs().min(q(b).abs()) <= reach;
        let slopes_disagree = dq(a) * dq(b) < 0.0;
        if same_sign && tight && slopes_disagree && w > len * 1e-6 {
            let mid = map.sample(0.5 * (a.x + b.x))?;
            samples.insert(i + 1, mid);
        } else {
            i += 1;
        }
    }

    let mut fixed_points = Vec::new();
    for w in samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if q(a) == 0.0 || q(a) * q(b) < 0.0 {
            let (mut lo, mut hi) = (a.clone(), b.clone());
            while hi.x - lo.x > len * 1e-9 {
                let mid = map.sample(0.5 * (lo.x + hi.x))?;
                if q(&mid) * q(&lo) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let r = if q(&lo).abs() <= q(&hi).abs() { lo.clone() } else { hi.clone() };
            let margin = dq(&r).abs();
            if margin < HYPERBOLIC_TOL {
                return Err(PoincareError::NonHyperbolic { s: r.x, margin });
            }
            fixed_points.push(FixedPoint {
                interval: [a.x, b.x],
                s: r.x,
                multiplier: r.dpx,
                period: r.tau,
            });
        } else if q(a).abs().min(q(b).abs()) < accuracy && dq(a) * dq(b) < 0.0 {
            return Err(PoincareError::NonHyperbolic {
                s: 0.5 * (a.x + b.x),
                margin: dq(a).abs().min(dq(b).abs()),
            });
        }
    }
    Ok(FixedPointCount {
        count: fixed_points.len(),
        fixed_points,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Poly;
    use crate::fixtures;
    use crate::rational::{from_f64, rat};

    fn radial(a: f64, b: f64) -> CrossSection {
        CrossSection {
            p: [from_f64(a), from_f64(0.0)],
            q: [from_f64(b), from_f64(0.0)],
            transversality_angle: std::f64::consts::FRAC_PI_2,
            theta: 0.0,
        }
    }

    /// Radius after one turn of `dr/dt = r(G − r²)`.
    fn bernoulli(g: f64, r: f64) -> f64 {
        let e = (4.0 * std::f64::consts::PI * g).exp();
        (g * r * r * e / (g + r * r * (e - 1.0))).sqrt()
    }

    #[test]
    fn circle_return() {
        let f = fixtures::attracting_circle(&rat(1, 4)).unwrap();
        let sec = radial(0.2, 0.8);
        let r = return_map(&f, &sec, 0.1, 1e-5).unwrap();
        assert!((r.px + 0.2 - bernoulli(0.25, 0.3)).abs() < 1e-5, "{}", r.px + 0.2);
        let c = return_map(&f, &sec, 0.3, 1e-6).unwrap();
        assert!((c.tau - 2.0 * std::f64::consts::PI).abs() < 1e-3);
        assert!((c.px - 0.3).abs() < 1e-6);
        assert!((c.dpx - (-std::f64::consts::PI).exp()).abs() < 1e-4, "{}", c.dpx);
    }

    #[test]
    fn rotation_is_identity() {
        let f = PolyVectorField::new(Poly::y().scale(&rat(-1, 1)), Poly::x());
        let sec = radial(0.2, 0.8);
        let r = return_map(&f, &sec, 0.25, 1e-6).unwrap();
        assert!((r.px - 0.25).abs() < 1e-5);
        assert!((r.dpx - 1.0).abs() < 1e-4);
    }

    #[test]
    fn one_cycle_counted() {
        let f = fixtures::attracting_circle(&rat(1, 4)).unwrap();
        let c = count_fixed_points(&f, &radial(0.3, 0.7), 1e-6).unwrap();
        assert_eq!(c.count, 1);
        assert!((c.fixed_points[0].s + 0.3 - 0.5).abs() < 1e-5);
        assert!(c.fixed_points[0].interval[0] <= 0.2 && c.fixed_points[0].interval[1] >= 0.2);
    }

    #[test]
    fn derivative_matches_differences() {
        let f = fixtures::attracting_circle(&rat(1, 4)).unwrap();
        let map = SectionMap::new(&f, &radial(0.2, 0.8), 1e-7).unwrap();
        for i in 0..20 {
            let x = 0.02 + 0.56 * i as f64 / 19.0;
            let h = 1e-5;
            let fd = (map.sample(x + h).unwrap().px - map.sample(x - h).unwrap().px) / (2.0 * h);
            let dp = map.sample(x).unwrap().dpx;
            assert!((dp - fd).abs() <= 1e-4, "x={x} dp={dp} fd={fd}");
        }
    }

    #[test]
    fn csv_export() {
        let s = ReturnSample { x: 0.5, px: 0.25, tau: 6.0, dpx: 0.1, error: 1e-6 };
        let csv = samples_to_csv(&[s]);
        assert!(csv.starts_with("x,px,tau,dpx,error\n0.5,0.25,6,0.1,"));
    }
}

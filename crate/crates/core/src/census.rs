//! The non-wandering set loop.
//!
//! Each round simulates the flow from the centres of an ε-lattice over the
//! disk, joins every cell to the cells met by the open ball of radius ε/2
//! around its image, and keeps the bottom strongly connected components as
//! minimal invariant candidates. Candidates that sit on an equilibrium are
//! dropped; the rest must be annuli with a cross-section. The round is
//! accepted once the rest of the disk is absorbed by the candidates in both
//! time directions. Every failure halves ε and doubles T.

use crate::cycles::{build_cross_section, color_cells, Coloring, CrossSection, SectionOutcome};
use crate::equilibria::{classify, zero_census, EquilibriumError, EquilibriumRecord, Kind};
use crate::euler::{certified_step, choose_parameters, EulerError};
use crate::evolve::Direction;
use crate::field::{compute_bounds, FieldBounds, FieldError, FloatField, PolyVectorField};
use crate::geom::{DenseGrid, Lattice, LatticeSet, PixelSet};
use crate::rational::{self, pow2, rat, to_f64, Rational};
use crate::saddle::{build_saddle_boxes, SaddleBox, SaddleError, Transit};
use petgraph::algo::kosaraju_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;
use std::time::Instant;

pub const DEFAULT_BUDGET: u32 = 12;
/// Largest RK4 step in practical mode.
const MAX_STEP: f64 = 1.0 / 16.0;
/// Exit points of the black box are put on this grid.
const EXIT_GRID: f64 = 1.0 / (1u64 << 32) as f64;
/// Nested black-box fallbacks followed before the raw J set is used.
const MAX_FALLBACK_DEPTH: u32 = 4;
const MAX_TRANSITS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CensusError {
    #[error("k must be positive")]
    InvalidK,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Equilibria(#[from] EquilibriumError),
    #[error("equilibrium near ({0:.4}, {1:.4}) is not certified hyperbolic")]
    NonHyperbolic(f64, f64),
    #[error("saddle box: {0}")]
    Saddle(SaddleError),
    #[error(transparent)]
    Euler(#[from] EulerError),
    #[error("budget of {rounds} rounds exhausted; last failed step: {last_step}")]
    Inconclusive { rounds: u32, last_step: String },
}

/// How trajectories are integrated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum CensusMode {
    /// Euler steps on the ρ-grid with parameters from the certified bound.
    Certified,
    /// Fixed-step RK4; `None` picks the step from the field and the boxes.
    Practical {
        #[serde(default)]
        h: Option<f64>,
    },
}

impl CensusMode {
    pub fn practical() -> Self {
        CensusMode::Practical { h: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CensusMode::Certified => "certified",
            CensusMode::Practical { .. } => "practical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusConfig {
    pub k: u32,
    pub budget: u32,
    pub mode: CensusMode,
}

impl CensusConfig {
    pub fn new(k: u32) -> Self {
        CensusConfig {
            k,
            budget: DEFAULT_BUDGET,
            mode: CensusMode::practical(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    ZeroBoundary,
    SaddleBoxes,
    Connected,
    ZeroOverlap,
    Boundary,
    SaddleProximity,
    Doughnut,
    CrossSection,
    AbsorptionForward,
    AbsorptionBackward,
}

impl Step {
    pub fn id(self) -> &'static str {
        match self {
            Step::ZeroBoundary => "zero_boundary",
            Step::SaddleBoxes => "saddle_boxes",
            Step::Connected => "connected",
            Step::ZeroOverlap => "zero_overlap",
            Step::Boundary => "boundary",
            Step::SaddleProximity => "saddle_proximity",
            Step::Doughnut => "doughnut",
            Step::CrossSection => "cross_section",
            Step::AbsorptionForward => "absorption_forward",
            Step::AbsorptionBackward => "absorption_backward",
        }
    }
}

/// One line of the progress log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub round: u32,
    #[serde(with = "rational::serde_str")]
    pub eps: Rational,
    #[serde(with = "rational::serde_str")]
    pub t: Rational,
    pub step: Step,
    pub pass: bool,
}

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "round={} eps={} T={} step={} outcome={}",
            self.round,
            self.eps,
            self.t,
            self.step.id(),
            if self.pass { "pass" } else { "fail" }
        )
    }
}

/// Cells of the simulation lattice forming one invariant candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub indices: Vec<(i64, i64)>,
    /// Side of the simulation cells, i.e. ε.
    #[serde(with = "rational::serde_str")]
    pub spacing: Rational,
    pub direction: Direction,
}

impl CandidateSet {
    pub fn cells(&self) -> LatticeSet {
        LatticeSet::from_cells(Lattice::new(self.spacing.clone()), self.indices.iter().copied())
    }

    /// `⋃ B(p_j, ε/2)`: the cells themselves.
    pub fn pixels(&self) -> PixelSet {
        self.cells().to_pixel_set()
    }

    /// `⋃ B(p_j, ε)` on the lattice of spacing ε/2.
    pub fn neighbourhood(&self) -> LatticeSet {
        self.cells().refined().dilate(1)
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        let lat = Lattice::new(self.spacing.clone());
        self.indices.iter().map(|&(i, j)| lat.center(i, j)).collect()
    }
}

/// A connected piece of the cycle part with its annulus check and section.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleComponent {
    /// Cells on the lattice of spacing ε/2.
    pub cells: LatticeSet,
    pub coloring: Coloring,
    pub section: CrossSection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NwApproximation {
    /// `Zero_ε(f)`.
    pub zero_part: PixelSet,
    /// The same set on the lattice of spacing ε/2.
    pub zero_cells: LatticeSet,
    /// Cycle candidates from both passes after the minimum principle.
    pub cycle_parts: Vec<CandidateSet>,
    pub components: Vec<CycleComponent>,
    pub eps: Rational,
    pub t: Rational,
    pub k: u32,
    /// Index of the accepted round.
    pub round: u32,
    pub records: Vec<EquilibriumRecord>,
    pub boxes: Vec<SaddleBox>,
    pub log: Vec<LogLine>,
}

impl NwApproximation {
    /// Assemble from a zero set and candidates without running the loop.
    pub fn from_parts(zero_cells: LatticeSet, cycle_parts: Vec<CandidateSet>, eps: Rational, t: Rational, k: u32) -> Self {
        NwApproximation {
            zero_part: zero_cells.to_pixel_set(),
            zero_cells,
            cycle_parts,
            components: Vec::new(),
            eps,
            t,
            k,
            round: 0,
            records: Vec::new(),
            boxes: Vec::new(),
            log: Vec::new(),
        }
    }

    /// `Zero_ε(f) ∪ ⋃ B(p_j, ε)` on the lattice of spacing ε/2.
    pub fn union_cells(&self) -> LatticeSet {
        let mut w = LatticeSet::new(Lattice::new(&self.eps / rat(2, 1)));
        w.union_with(&self.zero_cells);
        for c in &self.cycle_parts {
            w.union_with(&c.neighbourhood());
        }
        w
    }

    /// The cycle part `⋃ B(p_j, ε)`.
    pub fn cycle_cells(&self) -> LatticeSet {
        let mut w = LatticeSet::new(Lattice::new(&self.eps / rat(2, 1)));
        for c in &self.cycle_parts {
            w.union_with(&c.neighbourhood());
        }
        w
    }

    pub fn contains_f64(&self, p: [f64; 2]) -> bool {
        let w = self.union_cells();
        let s = w.lattice.sf;
        let tol = s * 1e-9;
        w.cells.iter().any(|&(i, j)| {
            let r = w.lattice.rect(i, j);
            p[0] >= r[0] - tol && p[0] <= r[1] + tol && p[1] >= r[2] - tol && p[1] <= r[3] + tol
        })
    }
}

/// Drop every candidate that strictly contains another one.
pub fn minimum_principle(candidates: Vec<CandidateSet>) -> Vec<CandidateSet> {
    let sets: Vec<BTreeSet<(i64, i64)>> = candidates.iter().map(|c| c.indices.iter().copied().collect()).collect();
    candidates
        .into_iter()
        .enumerate()
        .filter(|(i, _)| {
            !sets
                .iter()
                .enumerate()
                .any(|(j, s)| j != *i && s.len() < sets[*i].len() && s.is_subset(&sets[*i]))
        })
        .map(|(_, c)| c)
        .collect()
}

/// Whether some candidate comes within ε of the core `A ∪ B` of a box.
/// Returns `true` (pass) when none does.
pub fn saddle_proximity_test(candidates: &[CandidateSet], boxes: &[SaddleBox], eps: f64) -> bool {
    !candidates.iter().any(|c| {
        c.centers()
            .iter()
            .any(|&p| boxes.iter().any(|b| b.square_meets_core(p, eps)))
    })
}

// ---------------------------------------------------------------------------
// Simulation with black boxes.

enum Stepper {
    Rk4 { h: f64 },
    Certified { h: f64, rho: f64 },
}

enum TrackEnd {
    Horizon,
    Out,
    Captured,
}

/// Trajectory of one J point, stopped at the horizon, the circle or the
/// next box.
struct Track {
    path: Vec<[f64; 2]>,
    end: TrackEnd,
}

struct Flow {
    ff: FloatField,
    stepper: Stepper,
    boxes: Vec<SaddleBox>,
    /// Squared radius of a disk around each box centre holding its capture region.
    reach2: Vec<f64>,
    steps: u64,
    /// Steps billed for one pass through a box.
    unit: u64,
    tracks: Vec<OnceLock<Vec<Track>>>,
    infeasible: AtomicBool,
}

/// Images of a point: `None` marks a trajectory that left the disk.
type Landings = Vec<Option<[f64; 2]>>;

fn norm2(p: [f64; 2]) -> f64 {
    p[0] * p[0] + p[1] * p[1]
}

impl Flow {
    fn new(field: &PolyVectorField, stepper: Stepper, boxes: Vec<SaddleBox>, t: f64) -> Self {
        let h = match stepper {
            Stepper::Rk4 { h } | Stepper::Certified { h, .. } => h,
        };
        let reach2 = boxes
            .iter()
            .map(|b| {
                let c = b.regions.c;
                let r = (b.q[0][0].abs() + b.q[0][1].abs()).hypot(b.q[1][0].abs() + b.q[1][1].abs()) * c;
                r * r * (1.0 + 1e-9)
            })
            .collect();
        let n = boxes.len();
        Flow {
            ff: field.compile(),
            stepper,
            boxes,
            reach2,
            steps: (t / h).round() as u64,
            unit: (1.0 / h).round().max(1.0) as u64,
            tracks: (0..n).map(|_| OnceLock::new()).collect(),
            infeasible: AtomicBool::new(false),
        }
    }

    fn step(&self, y: [f64; 2]) -> [f64; 2] {
        match self.stepper {
            Stepper::Rk4 { h } => {
                let f = |p: [f64; 2]| self.ff.eval(p);
                let k1 = f(y);
                let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
                let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
                let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
                [
                    y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                    y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                ]
            }
            Stepper::Certified { h, rho } => match certified_step(&self.ff, y, h, rho) {
                Ok(p) => p,
                Err(_) => {
                    self.infeasible.store(true, Ordering::Relaxed);
                    y
                }
            },
        }
    }

    fn captured(&self, y: [f64; 2]) -> Option<usize> {
        self.boxes.iter().enumerate().find_map(|(i, b)| {
            let d = [y[0] - b.center[0], y[1] - b.center[1]];
            (norm2(d) <= self.reach2[i] && b.captures(y)).then_some(i)
        })
    }

    /// Follow `y` for `left` steps, appending where it ends up.
    fn trace(&self, mut y: [f64; 2], mut left: u64, depth: u32, out: &mut Landings) {
        let mut transits = 0;
        loop {
            if norm2(y) > 1.0 {
                out.push(None);
                return;
            }
            if let Some(bi) = self.captured(y) {
                transits += 1;
                if transits > MAX_TRANSITS {
                    out.push(Some(y));
                    return;
                }
                left = left.saturating_sub(self.unit);
                match self.boxes[bi].transit(y, EXIT_GRID) {
                    Transit::Exit { point, .. } => {
                        y = point;
                        continue;
                    }
                    Transit::Fallback => {
                        self.fallback(bi, left, depth, out);
                        return;
                    }
                }
            }
            if left == 0 {
                out.push(Some(y));
                return;
            }
            y = self.step(y);
            left -= 1;
        }
    }

    fn fallback(&self, bi: usize, left: u64, depth: u32, out: &mut Landings) {
        if depth >= MAX_FALLBACK_DEPTH {
            out.extend(self.boxes[bi].j_image().into_iter().map(Some));
            return;
        }
        let tracks = self.tracks[bi].get_or_init(|| {
            self.boxes[bi]
                .j_image()
                .into_iter()
                .map(|p| self.track(p))
                .collect()
        });
        for tr in tracks {
            let last = tr.path.len() as u64 - 1;
            if left <= last {
                out.push(Some(tr.path[left as usize]));
                continue;
            }
            match tr.end {
                TrackEnd::Out => out.push(None),
                TrackEnd::Captured => self.trace(tr.path[last as usize], left - last, depth + 1, out),
                TrackEnd::Horizon => out.push(Some(tr.path[last as usize])),
            }
        }
    }

    fn track(&self, mut y: [f64; 2]) -> Track {
        let mut path = vec![y];
        loop {
            if norm2(y) > 1.0 {
                return Track { path, end: TrackEnd::Out };
            }
            if self.captured(y).is_some() {
                return Track {
                    path,
                    end: TrackEnd::Captured,
                };
            }
            if path.len() as u64 > self.steps {
                return Track {
                    path,
                    end: TrackEnd::Horizon,
                };
            }
            y = self.step(y);
            path.push(y);
        }
    }

    fn image(&self, x: [f64; 2]) -> Landings {
        let mut out = Vec::with_capacity(1);
        self.trace(x, self.steps, 0, &mut out);
        out
    }
}

/// The cell transition graph of one pass.
struct Transitions {
    lattice: Lattice,
    cells: Vec<(i64, i64)>,
    index: DenseGrid<u32>,
    images: Vec<Landings>,
    targets: Vec<Vec<u32>>,
    out: Vec<bool>,
}

const NO_NODE: u32 = u32::MAX;

impl Transitions {
    fn build(flow: &Flow, lattice: Lattice) -> Self {
        let cells = lattice.disk_cells();
        let mut index = DenseGrid::new(lattice.extent(), NO_NODE);
        for (k, &(i, j)) in cells.iter().enumerate() {
            index.set(i, j, k as u32);
        }
        let images: Vec<Landings> = cells
            .par_iter()
            .map(|&(i, j)| flow.image(lattice.center(i, j)))
            .collect();
        let half = lattice.sf / 2.0;
        let (targets, out): (Vec<Vec<u32>>, Vec<bool>) = images
            .par_iter()
            .map(|ls| {
                let mut t = Vec::new();
                let mut gone = false;
                for l in ls {
                    match l {
                        None => gone = true,
                        Some(p) => {
                            for (i, j) in lattice.cells_meeting_open_ball(*p, half) {
                                if let Some(&v) = index.get(i, j) {
                                    if v != NO_NODE {
                                        t.push(v);
                                    }
                                }
                            }
                        }
                    }
                }
                t.sort_unstable();
                t.dedup();
                (t, gone)
            })
            .unzip();
        Transitions {
            lattice,
            cells,
            index,
            images,
            targets,
            out,
        }
    }

    fn node(&self, c: (i64, i64)) -> Option<u32> {
        self.index.get(c.0, c.1).copied().filter(|&v| v != NO_NODE)
    }

    /// Strongly connected components with no edge leaving them.
    fn bottom_components(&self) -> Vec<Vec<u32>> {
        let mut g: DiGraph<(), ()> = DiGraph::with_capacity(self.cells.len(), 0);
        for _ in 0..self.cells.len() {
            g.add_node(());
        }
        for (v, ts) in self.targets.iter().enumerate() {
            for &t in ts {
                g.add_edge(NodeIndex::new(v), NodeIndex::new(t as usize), ());
            }
        }
        let sccs = kosaraju_scc(&g);
        let mut comp = vec![0usize; self.cells.len()];
        for (c, s) in sccs.iter().enumerate() {
            for v in s {
                comp[v.index()] = c;
            }
        }
        let mut bottoms: Vec<Vec<u32>> = sccs
            .iter()
            .enumerate()
            .filter(|(c, s)| {
                s.iter().all(|v| {
                    let v = v.index();
                    !self.out[v] && self.targets[v].iter().all(|&t| comp[t as usize] == *c)
                })
            })
            .map(|(_, s)| {
                let mut m: Vec<u32> = s.iter().map(|v| v.index() as u32).collect();
                m.sort_unstable();
                m
            })
            .collect();
        bottoms.sort();
        bottoms
    }

    /// Whether every point outside `w` is carried into `w` or out of the
    /// disk, possibly over several passes of the graph.
    fn absorbed_into(&self, w: &LatticeSet) -> bool {
        let fine = &w.lattice;
        let mut wg = DenseGrid::new(fine.extent() + 2, false);
        for &(i, j) in &w.cells {
            wg.set(i, j, true);
        }
        let in_w = |c: (i64, i64)| wg.get(c.0, c.1).copied().unwrap_or(false);
        let n = self.cells.len();
        let covered: Vec<bool> = self
            .cells
            .iter()
            .map(|&(i, j)| (0..2).all(|a| (0..2).all(|b| in_w((2 * i + a, 2 * j + b)))))
            .collect();
        let half = self.lattice.sf / 2.0;
        let deps: Vec<Vec<u32>> = (0..n)
            .into_par_iter()
            .map(|v| {
                if covered[v] {
                    return Vec::new();
                }
                let mut d = Vec::new();
                for l in self.images[v].iter().flatten() {
                    if fine.cells_meeting_open_ball(*l, half).all(in_w) {
                        continue;
                    }
                    for c in self.lattice.cells_meeting_open_ball(*l, half) {
                        if let Some(t) = self.node(c) {
                            if !covered[t as usize] {
                                d.push(t);
                            }
                        }
                    }
                }
                d.sort_unstable();
                d.dedup();
                d
            })
            .collect();
        let mut waiting: Vec<usize> = deps.iter().map(|d| d.len()).collect();
        let mut users: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (v, d) in deps.iter().enumerate() {
            for &t in d {
                users[t as usize].push(v as u32);
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| waiting[v] == 0).collect();
        let mut done = 0;
        while let Some(v) = queue.pop_front() {
            done += 1;
            for &u in &users[v] {
                let u = u as usize;
                waiting[u] -= 1;
                if waiting[u] == 0 {
                    queue.push_back(u);
                }
            }
        }
        done == n
    }
}

// ---------------------------------------------------------------------------
// The loop.

struct Round<'a> {
    n: u32,
    eps: Rational,
    t: Rational,
    log: &'a mut Vec<LogLine>,
}

impl Round<'_> {
    fn check(&mut self, step: Step, pass: bool) -> Result<(), Step> {
        let line = LogLine {
            round: self.n,
            eps: self.eps.clone(),
            t: self.t.clone(),
            step,
            pass,
        };
        log::info!("{line}");
        self.log.push(line);
        if pass {
            Ok(())
        } else {
            Err(step)
        }
    }
}

/// Fine cells meeting the open balls `B(x_e, ε)` around the equilibria.
fn zero_cells(records: &[EquilibriumRecord], fine: &Lattice, eps: f64) -> LatticeSet {
    let mut z = LatticeSet::new(fine.clone());
    for r in records {
        let c = r.location();
        let slack = to_f64(&r.refined.width());
        z.cells.extend(fine.cells_meeting_open_ball(c, eps + slack));
    }
    z
}

fn make_stepper(mode: &CensusMode, bounds: &FieldBounds, boxes: &[&[SaddleBox]], eps: &Rational, t: &Rational) -> Result<Stepper, CensusError> {
    match mode {
        CensusMode::Certified => {
            let p = choose_parameters(bounds, &(eps / rat(2, 1)), t)?;
            Ok(Stepper::Certified {
                h: p.h_f64(),
                rho: p.rho_f64(),
            })
        }
        CensusMode::Practical { h: Some(h) } => Ok(Stepper::Rk4 { h: *h }),
        CensusMode::Practical { h: None } => {
            // within one step the local coordinates of a box move by at most
            // ε/8, well inside the margin between capture and exit levels
            let rate = boxes
                .iter()
                .flat_map(|bs| bs.iter())
                .map(|b| b.lambda.abs().max(b.mu))
                .fold(0.0, f64::max);
            let mut h = MAX_STEP;
            while rate * h > 1.0 / 8.0 || h > to_f64(t) / 8.0 {
                h /= 2.0;
            }
            Ok(Stepper::Rk4 { h })
        }
    }
}

struct Pass {
    direction: Direction,
    transitions: Transitions,
    boxes: Vec<SaddleBox>,
    cycles: Vec<CandidateSet>,
}

/// Sorts the bottom components of one pass into equilibrium blocks (dropped)
/// and cycle candidates, failing the round on any of the step 7–10 tests.
fn sift(
    round: &mut Round,
    pass: &Transitions,
    direction: Direction,
    zero_comps: &[(LatticeSet, bool)],
    boxes: &[SaddleBox],
) -> Result<Vec<CandidateSet>, Step> {
    let eps = round.eps.clone();
    let mut cycles = Vec::new();
    let bottoms = pass.bottom_components();
    let sets: Vec<LatticeSet> = bottoms
        .iter()
        .map(|b| LatticeSet::from_cells(pass.lattice.clone(), b.iter().map(|&v| pass.cells[v as usize])))
        .collect();
    round.check(Step::Connected, sets.iter().all(|s| s.components().len() == 1))?;
    let mut overlap = true;
    let mut boundary = true;
    for s in sets {
        let fine = s.refined();
        if zero_comps.iter().any(|(z, _)| fine.is_subset(&z.dilate(2))) {
            continue;
        }
        let u = fine.dilate(1);
        if zero_comps.iter().any(|(z, node)| *node && u.intersects(z)) {
            overlap = false;
        }
        if u.touches_circle() {
            boundary = false;
        }
        cycles.push(CandidateSet {
            indices: s.cells.into_iter().collect(),
            spacing: eps.clone(),
            direction,
        });
    }
    round.check(Step::ZeroOverlap, overlap)?;
    round.check(Step::Boundary, boundary)?;
    round.check(
        Step::SaddleProximity,
        saddle_proximity_test(&cycles, boxes, to_f64(&eps)),
    )?;
    Ok(cycles)
}

enum RoundOutcome {
    Accepted(Box<NwApproximation>),
    Failed(Step),
}

#[allow(clippy::too_many_arguments)]
fn run_round(
    field: &PolyVectorField,
    neg: &PolyVectorField,
    bounds: &FieldBounds,
    records: &[EquilibriumRecord],
    back_records: &[EquilibriumRecord],
    config: &CensusConfig,
    n: u32,
    log: &mut Vec<LogLine>,
) -> Result<RoundOutcome, CensusError> {
    let k = config.k;
    let eps = rat(1, 2 * k as i64) * pow2(-(n as i32));
    let t = pow2(n as i32);
    let mut round = Round {
        n,
        eps: eps.clone(),
        t: t.clone(),
        log,
    };
    let eps_f = to_f64(&eps);
    let coarse = Lattice::new(eps.clone());
    let fine = coarse.refine();

    let zero = zero_cells(records, &fine, eps_f);
    if let Err(s) = round.check(Step::ZeroBoundary, !zero.touches_circle()) {
        return Ok(RoundOutcome::Failed(s));
    }
    let zero_comps: Vec<(LatticeSet, bool)> = zero
        .components()
        .into_iter()
        .map(|c| {
            let node = records.iter().any(|r| {
                r.kind != Kind::Saddle && c.contains(&fine.index_of(r.location()))
            });
            (c, node)
        })
        .collect();

    let built = build_saddle_boxes(field, records, &t).and_then(|f| Ok((f, build_saddle_boxes(neg, back_records, &t)?)));
    let (fwd_boxes, back_boxes) = match built {
        Ok(b) => b,
        Err(SaddleError::NeedLargerT { .. }) => {
            round.check(Step::SaddleBoxes, false).ok();
            return Ok(RoundOutcome::Failed(Step::SaddleBoxes));
        }
        Err(e) => return Err(CensusError::Saddle(e)),
    };
    if !fwd_boxes.is_empty() {
        round.check(Step::SaddleBoxes, true).ok();
    }
    let stepper = |bs: &[&[SaddleBox]]| make_stepper(&config.mode, bounds, bs, &eps, &t);
    let all: [&[SaddleBox]; 2] = [&fwd_boxes, &back_boxes];
    let t_f = to_f64(&t);

    let clock = Instant::now();
    let mut passes = Vec::new();
    for (direction, f, boxes) in [
        (Direction::Forward, field, fwd_boxes.clone()),
        (Direction::Backward, neg, back_boxes.clone()),
    ] {
        let clock = Instant::now();
        let flow = Flow::new(f, stepper(&all)?, boxes.clone(), t_f);
        let transitions = Transitions::build(&flow, coarse.clone());
        log::debug!(
            "round {n} {direction:?}: {} cells simulated in {:.2?}",
            transitions.cells.len(),
            clock.elapsed()
        );
        if flow.infeasible.load(Ordering::Relaxed) {
            return Err(EulerError::CertifiedModeInfeasible.into());
        }
        match sift(&mut round, &transitions, direction, &zero_comps, &boxes) {
            Ok(cycles) => passes.push(Pass {
                direction,
                transitions,
                boxes,
                cycles,
            }),
            Err(s) => return Ok(RoundOutcome::Failed(s)),
        }
    }

    let cycle_parts = minimum_principle(passes.iter().flat_map(|p| p.cycles.clone()).collect());
    let mut cycle_cells = LatticeSet::new(fine.clone());
    for c in &cycle_parts {
        cycle_cells.union_with(&c.neighbourhood());
    }
    let mut components = Vec::new();
    for comp in cycle_cells.components() {
        let coloring = match color_cells(&comp, &zero, k) {
            Ok(c) if c.verdict => c,
            _ => {
                round.check(Step::Doughnut, false).ok();
                return Ok(RoundOutcome::Failed(Step::Doughnut));
            }
        };
        match build_cross_section(&coloring, field) {
            SectionOutcome::Section(section) => components.push(CycleComponent {
                cells: comp,
                coloring,
                section,
            }),
            SectionOutcome::RetryNeeded => {
                round.check(Step::CrossSection, false).ok();
                return Ok(RoundOutcome::Failed(Step::CrossSection));
            }
        }
    }
    if !components.is_empty() {
        round.check(Step::Doughnut, true).ok();
        round.check(Step::CrossSection, true).ok();
    }

    log::debug!("round {n}: candidates checked after {:.2?}", clock.elapsed());
    let mut w = zero.clone();
    w.union_with(&cycle_cells);
    for p in &passes {
        let step = match p.direction {
            Direction::Forward => Step::AbsorptionForward,
            Direction::Backward => Step::AbsorptionBackward,
        };
        if let Err(s) = round.check(step, p.transitions.absorbed_into(&w)) {
            return Ok(RoundOutcome::Failed(s));
        }
    }
    log::debug!("round {n}: absorption done after {:.2?}", clock.elapsed());
    let boxes = passes.into_iter().next().map(|p| p.boxes).unwrap_or_default();
    Ok(RoundOutcome::Accepted(Box::new(NwApproximation {
        zero_part: zero.to_pixel_set(),
        zero_cells: zero,
        cycle_parts,
        components,
        eps,
        t,
        k,
        round: n,
        records: records.to_vec(),
        boxes,
        log: Vec::new(),
    })))
}

/// Equilibrium records of `−f`, classified afresh from the isolating boxes.
fn reversed_records(neg: &PolyVectorField, records: &[EquilibriumRecord]) -> Vec<EquilibriumRecord> {
    records.iter().map(|r| classify(neg, &r.bbox)).collect()
}

fn hyperbolic(records: &[EquilibriumRecord]) -> Result<(), CensusError> {
    match records.iter().find(|r| r.kind == Kind::Inconclusive) {
        Some(r) => {
            let p = r.location();
            Err(CensusError::NonHyperbolic(p[0], p[1]))
        }
        None => Ok(()),
    }
}

/// Runs rounds `0..budget` until one is accepted.
pub fn compute_nw(field: &PolyVectorField, config: &CensusConfig) -> Result<NwApproximation, CensusError> {
    compute_nw_logged(field, config, &mut Vec::new())
}

/// As [`compute_nw`], appending every test outcome to `log` (also on failure).
pub fn compute_nw_logged(
    field: &PolyVectorField,
    config: &CensusConfig,
    log: &mut Vec<LogLine>,
) -> Result<NwApproximation, CensusError> {
    if config.k == 0 {
        return Err(CensusError::InvalidK);
    }
    let bounds = compute_bounds(field)?;
    let census = zero_census(field, config.k)?;
    hyperbolic(&census.records)?;
    let neg = field.negated();
    let back = reversed_records(&neg, &census.records);
    hyperbolic(&back)?;
    let mut last = None;
    for n in 0..config.budget {
        match run_round(field, &neg, &bounds, &census.records, &back, config, n, log)? {
            RoundOutcome::Accepted(mut nw) => {
                nw.log = log.clone();
                return Ok(*nw);
            }
            RoundOutcome::Failed(s) => last = Some(s),
        }
    }
    Err(CensusError::Inconclusive {
        rounds: config.budget,
        last_step: last.map(|s| s.id()).unwrap_or("none").to_string(),
    })
}

/// Simulates the part of the disk outside `nw` for time `nw.t` in the given
/// direction and checks that it is carried into `nw` or out of the disk.
pub fn absorption_test(field: &PolyVectorField, nw: &NwApproximation, direction: Direction) -> Result<bool, CensusError> {
    let f = direction.field(field);
    let records = match direction {
        Direction::Forward => nw.records.clone(),
        Direction::Backward => reversed_records(&f, &nw.records),
    };
    let boxes = match build_saddle_boxes(&f, &records, &nw.t) {
        Ok(b) => b,
        Err(SaddleError::NeedLargerT { .. }) => return Ok(false),
        Err(e) => return Err(CensusError::Saddle(e)),
    };
    let bounds = compute_bounds(field)?;
    let stepper = make_stepper(&CensusMode::practical(), &bounds, &[&boxes], &nw.eps, &nw.t)?;
    let flow = Flow::new(&f, stepper, boxes, to_f64(&nw.t));
    let transitions = Transitions::build(&flow, Lattice::new(nw.eps.clone()));
    Ok(transitions.absorbed_into(&nw.union_cells()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{attracting_circle, linear_focus};
    use crate::geom::annulus_cells;
    use proptest::prelude::*;

    fn cand(cells: &[(i64, i64)]) -> CandidateSet {
        CandidateSet {
            indices: cells.to_vec(),
            spacing: rat(1, 16),
            direction: Direction::Forward,
        }
    }

    fn ring(lat: &Lattice, lo: f64, hi: f64) -> Vec<(i64, i64)> {
        annulus_cells(lat, lo, hi).cells.into_iter().collect()
    }

    #[test]
    fn minimum_principle_keeps_smallest() {
        let small = cand(&[(0, 0)]);
        let big = cand(&[(0, 0), (0, 1)]);
        assert_eq!(minimum_principle(vec![big.clone(), small.clone()]), vec![small]);
        let other = cand(&[(3, 3), (3, 4)]);
        assert_eq!(minimum_principle(vec![big.clone(), other.clone()]), vec![big, other]);
    }

    #[test]
    fn minimum_principle_three_rings() {
        let lat = Lattice::new(rat(1, 16));
        let rings: Vec<CandidateSet> = [(0.45, 0.55), (0.65, 0.75), (0.82, 0.9)]
            .iter()
            .map(|&(a, b)| cand(&ring(&lat, a, b)))
            .collect();
        let interior = cand(&ring(&lat, 0.0, 0.92));
        let mut all = rings.clone();
        all.insert(1, interior);
        assert_eq!(minimum_principle(all), rings);
    }

    #[test]
    fn log_line_format() {
        let l = LogLine {
            round: 3,
            eps: rat(1, 128),
            t: rat(8, 1),
            step: Step::AbsorptionForward,
            pass: false,
        };
        assert_eq!(l.to_string(), "round=3 eps=1/128 T=8 step=absorption_forward outcome=fail");
    }

    #[test]
    fn proximity_without_boxes_or_candidates() {
        assert!(saddle_proximity_test(&[], &[], 0.1));
        assert!(saddle_proximity_test(&[cand(&[(0, 0)])], &[], 0.1));
    }

    #[test]
    fn proximity_detects_core_overlap() {
        let field = crate::fixtures::double_well();
        let census = zero_census(&field, 8).unwrap();
        let boxes = build_saddle_boxes(&field, &census.records, &rat(16, 1)).unwrap();
        assert_eq!(boxes.len(), 1);
        let near = cand(&[(0, 0), (1, 0)]);
        assert!(!saddle_proximity_test(&[near], &boxes, 1.0 / 16.0));
        let far = cand(&[(-12, 0)]);
        assert!(saddle_proximity_test(&[far], &boxes, 1.0 / 16.0));
    }

    fn focus_nw(t: Rational) -> NwApproximation {
        // B(0, 1/8) on the lattice of spacing 1/32
        let fine = Lattice::new(rat(1, 32));
        let zero = LatticeSet::from_cells(fine, (-4..4).flat_map(|i| (-4..4).map(move |j| (i, j))));
        let mut nw = NwApproximation::from_parts(zero, Vec::new(), rat(1, 16), t, 8);
        nw.records = zero_census(&linear_focus(), 8).unwrap().records;
        nw
    }

    #[test]
    fn focus_absorbed_after_long_time() {
        let f = linear_focus();
        assert!(absorption_test(&f, &focus_nw(rat(6, 1)), Direction::Forward).unwrap());
    }

    #[test]
    fn focus_not_absorbed_after_short_time() {
        let f = linear_focus();
        assert!(!absorption_test(&f, &focus_nw(rat(1, 10)), Direction::Forward).unwrap());
    }

    #[test]
    fn focus_has_no_cycles() {
        let nw = compute_nw(&linear_focus(), &CensusConfig::new(8)).unwrap();
        assert!(nw.cycle_parts.is_empty());
        assert!(nw.components.is_empty());
        assert!(nw.zero_part.contains_f64([0.0, 0.0], 0.0));
    }

    #[test]
    fn circle_census() {
        let f = attracting_circle(&rat(1, 4)).unwrap();
        let nw = compute_nw(&f, &CensusConfig::new(8)).unwrap();
        assert_eq!(nw.components.len(), 1);
        assert!(nw.cycle_parts.iter().all(|c| c.direction == Direction::Forward));
        // ε and T move together
        assert_eq!(nw.eps, rat(1, 16) * pow2(-(nw.round as i32)));
        assert_eq!(nw.t, pow2(nw.round as i32));
        // the circle and the origin are covered
        for i in 0..360 {
            let th = i as f64 * std::f64::consts::PI / 180.0;
            assert!(nw.contains_f64([0.5 * th.cos(), 0.5 * th.sin()]));
        }
        assert!(nw.contains_f64([0.0, 0.0]));
        assert!(!nw.union_cells().touches_circle());
        // every cycle cell is within 1/8 of the circle
        let cells = nw.cycle_cells();
        for &(i, j) in &cells.cells {
            let r = cells.lattice.rect(i, j);
            let near = {
                let nx = if r[0] > 0.0 { r[0] } else if r[1] < 0.0 { r[1] } else { 0.0 };
                let ny = if r[2] > 0.0 { r[2] } else if r[3] < 0.0 { r[3] } else { 0.0 };
                nx.hypot(ny)
            };
            let far = r[0].abs().max(r[1].abs()).hypot(r[2].abs().max(r[3].abs()));
            assert!(far - 0.5 <= 0.125 && 0.5 - near <= 0.125, "cell {i},{j}");
        }
        let log: Vec<String> = nw.log.iter().map(|l| l.to_string()).collect();
        assert!(log.last().unwrap().ends_with("step=absorption_backward outcome=pass"));
    }

    #[test]
    fn circle_without_cycle_part_is_not_absorbed() {
        let f = attracting_circle(&rat(1, 4)).unwrap();
        let mut nw = compute_nw(&f, &CensusConfig::new(8)).unwrap();
        assert!(absorption_test(&f, &nw, Direction::Forward).unwrap());
        nw.cycle_parts.clear();
        assert!(!absorption_test(&f, &nw, Direction::Forward).unwrap());
    }

    #[test]
    fn budget_exhaustion_is_inconclusive() {
        let f = attracting_circle(&rat(1, 4)).unwrap();
        let cfg = CensusConfig {
            k: 8,
            budget: 1,
            mode: CensusMode::practical(),
        };
        let mut log = Vec::new();
        match compute_nw_logged(&f, &cfg, &mut log) {
            Err(CensusError::Inconclusive { rounds: 1, last_step }) => assert_eq!(last_step, "zero_overlap"),
            other => panic!("{other:?}"),
        }
        assert!(log.iter().all(|l| l.round == 0));
    }

    #[test]
    fn certified_mode_reports_infeasible() {
        let f = attracting_circle(&rat(1, 4)).unwrap();
        let cfg = CensusConfig {
            k: 8,
            budget: 3,
            mode: CensusMode::Certified,
        };
        match compute_nw(&f, &cfg) {
            Err(CensusError::Euler(EulerError::CertifiedModeInfeasible)) | Err(CensusError::Inconclusive { .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn minimum_principle_output_is_an_antichain(
            sets in proptest::collection::vec(proptest::collection::btree_set((0i64..4, 0i64..4), 1..6), 1..6)
        ) {
            let cands: Vec<CandidateSet> = sets.iter().map(|s| cand(&s.iter().copied().collect::<Vec<_>>())).collect();
            let kept = minimum_principle(cands.clone());
            let as_set = |c: &CandidateSet| c.indices.iter().copied().collect::<BTreeSet<_>>();
            for a in &kept {
                for b in &cands {
                    let (sa, sb) = (as_set(a), as_set(b));
                    prop_assert!(!(sb.len() < sa.len() && sb.is_subset(&sa)));
                }
            }
            // every dropped set contains a kept one
            for c in &cands {
                let sc = as_set(c);
                prop_assert!(kept.iter().any(|k| as_set(k).is_subset(&sc)));
            }
        }
    }
}

//! Command-line plumbing: the census report, SVG portraits and the
//! `census` / `fixture` commands.

use crate::census::{compute_nw, CensusConfig, CensusError, CensusMode, NwApproximation, DEFAULT_BUDGET};
use crate::cycles::CrossSection;
use crate::equilibria::{EquilibriumRecord, Kind};
use crate::euler::{rk4, EulerError};
use crate::field::{FieldError, PolyVectorField};
use crate::fixtures::{by_name, ToyMachineTable};
use crate::geom::{Lattice, LatticeSet};
use crate::poincare::{count_fixed_points, FixedPoint, PoincareError};
use crate::rational::{self, parse_rational, rat, to_f64, Rational};
use crate::saddle::SaddleError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;

/// Accuracy requested from the return map when counting fixed points.
pub const RETURN_ACCURACY: f64 = 1e-7;

/// Lattice cells stored as horizontal runs `[j, i_first, i_last]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRuns {
    #[serde(with = "rational::serde_str")]
    pub spacing: Rational,
    pub runs: Vec<[i64; 3]>,
}

impl CellRuns {
    pub fn from_set(s: &LatticeSet) -> Self {
        let mut cells: Vec<(i64, i64)> = s.cells.iter().map(|&(i, j)| (j, i)).collect();
        cells.sort_unstable();
        let mut runs: Vec<[i64; 3]> = Vec::new();
        for (j, i) in cells {
            match runs.last_mut() {
                Some(r) if r[0] == j && r[2] + 1 == i => r[2] = i,
                _ => runs.push([j, i, i]),
            }
        }
        CellRuns {
            spacing: s.lattice.spacing.clone(),
            runs,
        }
    }

    pub fn to_set(&self) -> LatticeSet {
        LatticeSet::from_cells(
            Lattice::new(self.spacing.clone()),
            self.runs.iter().flat_map(|r| (r[1]..=r[2]).map(move |i| (i, r[0]))),
        )
    }

    pub fn len(&self) -> usize {
        self.runs.iter().map(|r| (r[2] - r[1] + 1) as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// `[x, y, width, height]` of each run.
    pub fn rects(&self) -> Vec<[f64; 4]> {
        let s = to_f64(&self.spacing);
        self.runs
            .iter()
            .map(|r| [r[1] as f64 * s, r[0] as f64 * s, (r[2] - r[1] + 1) as f64 * s, s])
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub sinks: usize,
    pub sources: usize,
    pub saddles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitReport {
    pub component: usize,
    pub count: usize,
    pub annulus: CellRuns,
    /// The part of the annulus left uncoloured by the flood fill.
    pub hat: CellRuns,
    #[serde(with = "rational::serde_str")]
    pub width: Rational,
    pub section: CrossSection,
    pub fixed_points: Vec<FixedPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub k: u32,
    pub mode: String,
    pub rounds_used: u32,
    #[serde(with = "rational::serde_str")]
    pub eps: Rational,
    #[serde(with = "rational::serde_str")]
    pub t: Rational,
    /// Bound on the Hausdorff distance between the output and NW(f).
    #[serde(with = "rational::serde_str")]
    pub precision: Rational,
    pub equilibrium_count: usize,
    pub kinds: KindCounts,
    pub equilibria: Vec<EquilibriumRecord>,
    pub total: usize,
    pub orbits: Vec<OrbitReport>,
    pub zero_part: CellRuns,
    pub field: PolyVectorField,
    pub log: Vec<String>,
}

impl CensusReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Census(#[from] CensusError),
    #[error("return map on component {component}: {source}")]
    Poincare { component: usize, source: PoincareError },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CommandError {
    /// 2 when the computation ran but could not decide, 1 for bad input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Census(e) => match e {
                CensusError::Inconclusive { .. }
                | CensusError::NonHyperbolic(..)
                | CensusError::Saddle(SaddleError::Inconclusive)
                | CensusError::Euler(EulerError::CertifiedModeInfeasible) => 2,
                CensusError::Field(FieldError::Inconclusive) => 2,
                _ => 1,
            },
            CommandError::Poincare { .. } => 2,
            CommandError::Input(_) | CommandError::Io(_) => 1,
        }
    }
}

fn kind_counts(records: &[EquilibriumRecord]) -> KindCounts {
    let mut c = KindCounts::default();
    for r in records {
        match r.kind {
            Kind::Sink => c.sinks += 1,
            Kind::Source => c.sources += 1,
            Kind::Saddle => c.saddles += 1,
            Kind::Inconclusive => {}
        }
    }
    c
}

/// Runs the census and counts the cycles in every annulus.
pub fn census_report(field: &PolyVectorField, config: &CensusConfig) -> Result<(CensusReport, NwApproximation), CommandError> {
    let nw = compute_nw(field, config)?;
    let mut orbits = Vec::new();
    for (i, comp) in nw.components.iter().enumerate() {
        let counted = count_fixed_points(field, &comp.section, RETURN_ACCURACY)
            .map_err(|source| CommandError::Poincare { component: i, source })?;
        orbits.push(OrbitReport {
            component: i,
            count: counted.count,
            annulus: CellRuns::from_set(&comp.cells),
            hat: CellRuns::from_set(&comp.coloring.hat),
            width: comp.coloring.width.clone(),
            section: comp.section.clone(),
            fixed_points: counted.fixed_points,
        });
    }
    // zero cells reach 3ε/2 from their equilibrium; an annulus is within
    // twice its width of every cycle inside it
    let mut precision = &nw.eps * rat(3, 2);
    for o in &orbits {
        let w = &o.width * rat(2, 1);
        if w > precision {
            precision = w;
        }
    }
    let report = CensusReport {
        k: config.k,
        mode: config.mode.name().to_string(),
        rounds_used: nw.round + 1,
        eps: nw.eps.clone(),
        t: nw.t.clone(),
        precision,
        equilibrium_count: nw.records.len(),
        kinds: kind_counts(&nw.records),
        equilibria: nw.records.clone(),
        total: orbits.iter().map(|o| o.count).sum(),
        orbits,
        zero_part: CellRuns::from_set(&nw.zero_cells),
        field: field.clone(),
        log: nw.log.iter().map(|l| l.to_string()).collect(),
    };
    Ok((report, nw))
}

// ---------------------------------------------------------------------------
// SVG.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layers {
    pub nw: bool,
    pub coloring: bool,
    pub sections: bool,
    pub trajectories: bool,
}

impl Layers {
    pub fn all() -> Self {
        Layers {
            nw: true,
            coloring: true,
            sections: true,
            trajectories: true,
        }
    }
}

fn rects_into(out: &mut String, runs: &CellRuns) {
    for r in runs.rects() {
        let _ = writeln!(
            out,
            r#"<rect x="{:.6}" y="{:.6}" width="{:.6}" height="{:.6}"/>"#,
            r[0], r[1], r[2], r[3]
        );
    }
}

/// Reference trajectories drawn in the portrait.
fn portrait_paths(field: &PolyVectorField) -> Vec<Vec<[f64; 2]>> {
    let ff = field.compile();
    let f = |p: [f64; 2]| ff.eval(p);
    let mut seeds = Vec::new();
    for i in 0..12 {
        let a = i as f64 * std::f64::consts::PI / 6.0;
        seeds.push([0.97 * a.cos(), 0.97 * a.sin()]);
        seeds.push([0.05 * a.cos(), 0.05 * a.sin()]);
    }
    seeds
        .into_iter()
        .map(|s| {
            let mut path = rk4(&f, s, 1.0 / 64.0, 1024);
            if let Some(k) = path.iter().position(|p| p[0].hypot(p[1]) > 1.0) {
                path.truncate(k);
            }
            path
        })
        .collect()
}

/// The report drawn on the unit disk; identical input gives identical output.
pub fn render_svg(report: &CensusReport, layers: Layers) -> String {
    let mut s = String::new();
    s.push_str(
        r##"<svg xmlns="http://www.w3.org/2000/svg" viewBox="-1.05 -1.05 2.1 2.1" width="800" height="800">
<g transform="scale(1,-1)">
<circle cx="0" cy="0" r="1" fill="#fafafa" stroke="#333" stroke-width="0.004"/>
"##,
    );
    if layers.coloring {
        for o in &report.orbits {
            let _ = writeln!(s, r##"<g class="hat" data-component="{}" fill="#f2c14e" fill-opacity="0.5">"##, o.component);
            rects_into(&mut s, &o.hat);
            s.push_str("</g>\n");
        }
    }
    if layers.nw {
        s.push_str(r##"<g class="zero-part" fill="#c0392b">"##);
        s.push('\n');
        rects_into(&mut s, &report.zero_part);
        s.push_str("</g>\n");
        for o in &report.orbits {
            let _ = writeln!(s, r##"<g class="cycle-part" data-component="{}" fill="#2e86c1" fill-opacity="0.7">"##, o.component);
            rects_into(&mut s, &o.annulus);
            s.push_str("</g>\n");
        }
    }
    if layers.trajectories {
        s.push_str(r##"<g class="trajectories" fill="none" stroke="#555" stroke-width="0.002">"##);
        s.push('\n');
        for path in portrait_paths(&report.field) {
            if path.len() < 2 {
                continue;
            }
            s.push_str("<polyline points=\"");
            for (i, p) in path.iter().enumerate().step_by(4) {
                if i > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{:.5},{:.5}", p[0], p[1]);
            }
            s.push_str("\"/>\n");
        }
        s.push_str("</g>\n");
    }
    if layers.sections {
        for o in &report.orbits {
            let (p, q) = (o.section.p_f64(), o.section.q_f64());
            let _ = writeln!(
                s,
                r##"<line class="section" data-component="{}" x1="{:.6}" y1="{:.6}" x2="{:.6}" y2="{:.6}" stroke="#111" stroke-width="0.006"/>"##,
                o.component, p[0], p[1], q[0], q[1]
            );
        }
    }
    s.push_str("</g>\n</svg>\n");
    s
}

// ---------------------------------------------------------------------------
// Commands.

#[derive(Debug, Parser)]
#[command(name = "orbit-census", version, about = "Count equilibria and limit cycles of planar polynomial fields on the unit disk")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Locate the non-wandering set and count the periodic orbits.
    Census(CensusArgs),
    /// Write a named test field as JSON.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Practical,
    Certified,
}

#[derive(Debug, Clone, Args)]
pub struct CensusArgs {
    /// Field description (JSON).
    #[arg(long)]
    pub field: PathBuf,
    /// Precision target: the output is within 1/k of NW(f).
    #[arg(long)]
    pub k: u32,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: u32,
    #[arg(long, value_enum, default_value_t = ModeArg::Practical)]
    pub mode: ModeArg,
    /// Report path (JSON); printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Only used by randomized tests; the census itself is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct FixtureArgs {
    /// attracting_circle, theoremA, theoremC, nested, linear_focus or double_well.
    pub name: String,
    /// Rational parameters, e.g. `1/4`.
    pub params: Vec<String>,
    /// Halting table (JSON map from machine index to step or "NEVER").
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read(path: &PathBuf) -> Result<String, CommandError> {
    std::fs::read_to_string(path).map_err(|e| CommandError::Input(format!("{}: {e}", path.display())))
}

pub fn census_command(args: &CensusArgs) -> Result<CensusReport, CommandError> {
    let field = PolyVectorField::from_json(&read(&args.field)?).map_err(|e| CommandError::Input(e.to_string()))?;
    if let Some(seed) = args.seed {
        log::debug!("seed {seed} ignored by the census");
    }
    let config = CensusConfig {
        k: args.k,
        budget: args.budget,
        mode: match args.mode {
            ModeArg::Practical => CensusMode::practical(),
            ModeArg::Certified => CensusMode::Certified,
        },
    };
    let (report, _) = census_report(&field, &config)?;
    let json = report.to_json();
    match &args.out {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    if let Some(p) = &args.svg {
        std::fs::write(p, render_svg(&report, Layers::all()))?;
    }
    Ok(report)
}

pub fn fixture_command(args: &FixtureArgs) -> Result<PolyVectorField, CommandError> {
    let params: Vec<Rational> = args
        .params
        .iter()
        .map(|p| parse_rational(p).map_err(|e| CommandError::Input(format!("{p}: {e}"))))
        .collect::<Result<_, _>>()?;
    let table: Option<ToyMachineTable> = match &args.table {
        Some(p) => Some(serde_json::from_str(&read(p)?).map_err(|e| CommandError::Input(e.to_string()))?),
        None => None,
    };
    let field = by_name(&args.name, &params, table.as_ref()).map_err(|e| CommandError::Input(e.to_string()))?;
    let json = field.to_json();
    match &args.out {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(field)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Census(a) => census_command(a).map(|r| {
            log::info!("equilibria={} orbits={} rounds={}", r.equilibrium_count, r.total, r.rounds_used);
        }),
        Command::Fixture(a) => fixture_command(a).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{attracting_circle, linear_focus};
    use proptest::prelude::*;

    fn circle_report() -> CensusReport {
        let f = attracting_circle(&rat(1, 4)).unwrap();
        census_report(&f, &CensusConfig::new(8)).unwrap().0
    }

    #[test]
    fn circle_report_counts_one_orbit() {
        let r = circle_report();
        assert_eq!(r.total, 1);
        assert_eq!(r.equilibrium_count, 1);
        assert_eq!(r.kinds.sources, 1);
        assert!(r.precision <= rat(1, 8));
        let m = r.orbits[0].fixed_points[0].multiplier;
        assert!((m - (-std::f64::consts::PI).exp()).abs() < 1e-3, "{m}");
    }

    #[test]
    fn report_round_trips() {
        let r = circle_report();
        let back = CensusReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn svg_is_deterministic_with_one_group_per_orbit() {
        let r = circle_report();
        let a = render_svg(&r, Layers::all());
        let b = render_svg(&CensusReport::from_json(&r.to_json()).unwrap(), Layers::all());
        assert_eq!(a, b);
        assert!(a.contains(r#"viewBox="-1.05 -1.05 2.1 2.1""#));
        assert_eq!(a.matches(r#"<g class="cycle-part""#).count(), 1);
        assert_eq!(a.matches(r#"<line class="section""#).count(), 1);
    }

    #[test]
    fn svg_without_cycles_has_disk_and_zero_part() {
        let (r, _) = census_report(&linear_focus(), &CensusConfig::new(8)).unwrap();
        let layers = Layers {
            nw: true,
            coloring: false,
            sections: false,
            trajectories: false,
        };
        let s = render_svg(&r, layers);
        assert!(s.contains("<circle"));
        assert!(s.contains(r#"class="zero-part""#));
        assert!(!s.contains("cycle-part"));
        assert!(!s.contains("polyline"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(
            CommandError::Census(CensusError::Inconclusive {
                rounds: 1,
                last_step: "boundary".into()
            })
            .exit_code(),
            2
        );
        assert_eq!(
            CommandError::Census(CensusError::Field(FieldError::InwardViolation { theta: 0.0, value: 1.0 })).exit_code(),
            1
        );
        assert_eq!(CommandError::Input("x".into()).exit_code(), 1);
    }

    proptest! {
        #[test]
        fn cell_runs_round_trip(cells in proptest::collection::btree_set((-20i64..20, -20i64..20), 0..200)) {
            let set = LatticeSet::from_cells(Lattice::new(rat(1, 32)), cells);
            let runs = CellRuns::from_set(&set);
            prop_assert_eq!(runs.len(), set.len());
            prop_assert_eq!(runs.to_set(), set);
        }
    }
}

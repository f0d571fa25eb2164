//! Named test fields, including the rotating families with a prescribed
//! set of circular cycles.

use crate::field::{Poly, PolyVectorField};
use crate::rational::{int, pow2, Rational};
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FixtureError {
    #[error("invalid fixture: {0}")]
    InvalidFixture(String),
    #[error("no table entry for machine {0}")]
    KeyError(u64),
}

/// When machine `k` halts on its own index, or that it never does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Halting {
    Step(u64),
    #[serde(with = "never")]
    Never,
}

mod never {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};
    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("NEVER")
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "NEVER" {
            Ok(())
        } else {
            Err(D::Error::custom("expected a step count or \"NEVER\""))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToyMachineTable {
    pub entries: BTreeMap<u64, Halting>,
}

impl ToyMachineTable {
    pub fn new<I: IntoIterator<Item = (u64, Halting)>>(it: I) -> Self {
        ToyMachineTable {
            entries: it.into_iter().collect(),
        }
    }
}

/// `G(k) = Σ_{i≥1} g(k,i)/2^{i+1}`, where `g(k,i) = 1` once the machine has
/// halted by step `i`. Halting at step `s` gives the tail sum `2^{-s}`.
pub fn g_value(table: &ToyMachineTable, k: u64) -> Result<Rational, FixtureError> {
    match table.entries.get(&k) {
        None => Err(FixtureError::KeyError(k)),
        Some(Halting::Never) => Ok(Rational::zero()),
        Some(Halting::Step(0)) => Err(FixtureError::InvalidFixture(format!(
            "machine {k}: halting step must be positive"
        ))),
        Some(Halting::Step(s)) => {
            let s = i32::try_from(*s).map_err(|_| {
                FixtureError::InvalidFixture(format!("machine {k}: halting step too large"))
            })?;
            Ok(pow2(-s))
        }
    }
}

fn r2() -> Poly {
    Poly::x().pow(2).add(&Poly::y().pow(2))
}

/// `(−y + x·R, x + y·R)`: angular speed 1 and `dr/dt = r·R(r²)`.
pub fn rotating(radial: &Poly) -> PolyVectorField {
    PolyVectorField::new(
        Poly::y().scale(&int(-1)).add(&Poly::x().mul(radial)),
        Poly::x().add(&Poly::y().mul(radial)),
    )
}

/// `∏ (r² − c_j)` as a polynomial in x, y.
fn radial_product(cs: &[Rational]) -> Poly {
    let r2 = r2();
    cs.iter().fold(Poly::constant(Rational::one()), |acc, c| {
        acc.mul(&r2.sub(&Poly::constant(c.clone())))
    })
}

fn check_unit(what: &str, c: &Rational) -> Result<(), FixtureError> {
    if !c.is_positive() || c >= &Rational::one() {
        return Err(FixtureError::InvalidFixture(format!(
            "{what} = {c} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// `(−y − x(r² − G), x − y(r² − G))`: one attracting cycle at `r = √G`.
pub fn attracting_circle(g: &Rational) -> Result<PolyVectorField, FixtureError> {
    check_unit("G", g)?;
    Ok(rotating(&radial_product(&[g.clone()]).scale(&int(-1))))
}

/// The single-parameter family time-reversed so it points inward at r = 1:
/// `(y − x(r² − G), −x − y(r² − G))`. `G = 0` is allowed (no cycle).
pub fn theorem_a(g: &Rational) -> Result<PolyVectorField, FixtureError> {
    if g.is_negative() || g >= &Rational::one() {
        return Err(FixtureError::InvalidFixture(format!(
            "G = {g} must lie in [0, 1)"
        )));
    }
    let p = rotating(&radial_product(&[g.clone()]));
    Ok(p.negated())
}

/// Radii² `s_j = Σ_{i≤j} i·G(i)` for `j = 1..k`.
pub fn theorem_c_radii(k: u64, table: &ToyMachineTable) -> Result<Vec<Rational>, FixtureError> {
    let mut s = Rational::zero();
    let mut out = Vec::new();
    for i in 1..=k {
        s += int(i as i64) * g_value(table, i)?;
        out.push(s.clone());
    }
    Ok(out)
}

/// The k-th member of the multi-cycle family, time-reversed for inwardness.
pub fn theorem_c(k: u64, table: &ToyMachineTable) -> Result<PolyVectorField, FixtureError> {
    if k == 0 {
        return Err(FixtureError::InvalidFixture("k must be positive".into()));
    }
    let radii = theorem_c_radii(k, table)?;
    if let Some(s) = radii.iter().find(|s| **s >= Rational::one()) {
        return Err(FixtureError::InvalidFixture(format!(
            "partial sum {s} puts a cycle outside the disk"
        )));
    }
    // every factor is positive at r = 1, so the original points outward
    Ok(rotating(&radial_product(&radii)).negated())
}

/// Number of distinct positive partial sums, the cycle count of
/// [`theorem_c`].
pub fn theorem_c_expected_orbits(k: u64, table: &ToyMachineTable) -> Result<usize, FixtureError> {
    let radii = theorem_c_radii(k, table)?;
    Ok(radii
        .into_iter()
        .filter(|s| s.is_positive())
        .collect::<BTreeSet<_>>()
        .len())
}

/// `(−y + x·R, x + y·R)` with `R = −∏(r² − c_j)`: cycles at `r = √c_j`.
pub fn nested(cs: &[Rational]) -> Result<PolyVectorField, FixtureError> {
    if cs.is_empty() {
        return Err(FixtureError::InvalidFixture("nested needs at least one radius".into()));
    }
    for c in cs {
        check_unit("c", c)?;
    }
    let distinct: BTreeSet<&Rational> = cs.iter().collect();
    if distinct.len() != cs.len() {
        return Err(FixtureError::InvalidFixture("radii must be distinct".into()));
    }
    Ok(rotating(&radial_product(cs).scale(&int(-1))))
}

pub fn linear_focus() -> PolyVectorField {
    PolyVectorField::new(
        Poly::x().scale(&int(-1)).sub(&Poly::y()),
        Poly::x().sub(&Poly::y()),
    )
}

pub fn double_well() -> PolyVectorField {
    PolyVectorField::new(
        Poly::x().scale(&int(4)).sub(&Poly::x().pow(3).scale(&int(8))),
        Poly::y().scale(&int(-1)),
    )
}

/// Dispatch by name, as used by the command line.
pub fn by_name(
    name: &str,
    params: &[Rational],
    table: Option<&ToyMachineTable>,
) -> Result<PolyVectorField, FixtureError> {
    let one = |what: &str| -> Result<Rational, FixtureError> {
        match params {
            [g] => Ok(g.clone()),
            _ => Err(FixtureError::InvalidFixture(format!("{what} takes one parameter"))),
        }
    };
    match name {
        "attracting_circle" | "circle" => attracting_circle(&one("attracting_circle")?),
        "theoremA" | "theorem_a" => theorem_a(&one("theoremA")?),
        "theoremC" | "theorem_c" => {
            let k = one("theoremC")?;
            if !k.is_integer() || !k.is_positive() {
                return Err(FixtureError::InvalidFixture("theoremC needs a positive integer k".into()));
            }
            let table = table.ok_or_else(|| FixtureError::InvalidFixture("theoremC needs a table".into()))?;
            let k: u64 = k
                .to_integer()
                .try_into()
                .map_err(|_| FixtureError::InvalidFixture("k too large".into()))?;
            theorem_c(k, table)
        }
        "nested" => nested(params),
        "linear_focus" => Ok(linear_focus()),
        "double_well" => Ok(double_well()),
        _ => Err(FixtureError::InvalidFixture(format!("unknown fixture {name:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::compute_bounds;
    use crate::rational::{rat, to_f64};

    fn radial_speed(f: &PolyVectorField, r: f64, th: f64) -> (f64, f64) {
        let p = [r * th.cos(), r * th.sin()];
        let v = f.compile().eval(p);
        let dr = (v[0] * p[0] + v[1] * p[1]) / r;
        let dth = (p[0] * v[1] - p[1] * v[0]) / (r * r);
        (dr, dth)
    }

    #[test]
    fn g_values() {
        let t = ToyMachineTable::new([(1, Halting::Step(1)), (2, Halting::Never), (3, Halting::Step(3))]);
        assert_eq!(g_value(&t, 1).unwrap(), rat(1, 2));
        assert_eq!(g_value(&t, 2).unwrap(), int(0));
        assert_eq!(g_value(&t, 3).unwrap(), rat(1, 8));
        assert_eq!(g_value(&t, 4), Err(FixtureError::KeyError(4)));
    }

    #[test]
    fn table_json() {
        let t: ToyMachineTable = serde_json::from_str(r#"{"1": 1, "2": "NEVER"}"#).unwrap();
        assert_eq!(t.entries[&2], Halting::Never);
        let back: ToyMachineTable = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn circle_polar_form() {
        let f = attracting_circle(&rat(1, 4)).unwrap();
        let (dr, dth) = radial_speed(&f, 0.5, 0.7);
        assert!(dr.abs() < 1e-15 && (dth - 1.0).abs() < 1e-15);
        let v = f.evaluate(&[rat(1, 2), int(0)]).unwrap();
        assert_eq!(v, [int(0), rat(1, 2)]);
        for r in [0.1, 0.3, 0.7, 0.95] {
            let (dr, _) = radial_speed(&f, r, 1.3);
            assert!((dr - r * (0.25 - r * r)).abs() < 1e-14);
        }
    }

    #[test]
    fn nested_is_inward() {
        let f = nested(&[rat(1, 4), rat(1, 2), rat(3, 4)]).unwrap();
        let (dr, _) = radial_speed(&f, 1.0, 0.2);
        assert!((dr - (-(3.0 / 4.0) * 0.5 * 0.25)).abs() < 1e-14);
        assert!(compute_bounds(&f).is_ok());
        assert!(compute_bounds(&nested(&[rat(1, 4), rat(1, 2)]).unwrap()).is_ok());
    }

    #[test]
    fn theorem_c_fixture() {
        let t = ToyMachineTable::new([(1, Halting::Step(1)), (2, Halting::Never)]);
        assert_eq!(theorem_c_expected_orbits(2, &t).unwrap(), 1);
        let f = theorem_c(2, &t).unwrap();
        assert_eq!(f.degree(), 5);
        assert!(compute_bounds(&f).is_ok());
        let bad = ToyMachineTable::new([(1, Halting::Step(1)), (2, Halting::Step(1))]);
        assert!(matches!(theorem_c(2, &bad), Err(FixtureError::InvalidFixture(_))));
    }

    #[test]
    fn theorem_a_points_inward() {
        let f = theorem_a(&rat(1, 4)).unwrap();
        let b = compute_bounds(&f).unwrap();
        assert!(to_f64(&b.inward_margin) > 0.7);
    }

    #[test]
    fn invalid_parameters() {
        assert!(attracting_circle(&int(1)).is_err());
        assert!(nested(&[rat(1, 2), rat(1, 2)]).is_err());
        assert!(by_name("nope", &[], None).is_err());
    }
}

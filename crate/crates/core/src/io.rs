//! File formats: flow and form specs (JSON), trajectory and grid CSV.
//!
//! A flow spec is `{"dim": n, "components": [[[freq], cos, sin], ...], ...]}`
//! with one term list per coordinate; a form spec is the same object with
//! `"kind": "form"`. Coefficients are JSON numbers or `"p/q"` strings.

use std::fmt::Write as _;

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{TorusFlow, Trajectory};
use crate::forms::OneForm;
use crate::embedder::ExtendedPotential;
use crate::hamiltonian::{NlwState, Potential, WellState};
use crate::trig::{Freq, TrigPoly};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Number(f64),
    Text(String),
}

impl Coefficient {
    fn value(&self) -> Result<f64> {
        match self {
            Self::Number(x) => Ok(*x),
            Self::Text(s) => crate::rational::parse(s)?
                .to_f64()
                .ok_or_else(|| Error::Format(format!("coefficient '{s}' is not representable"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecKind {
    Flow,
    Form,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SpecKind>,
    pub dim: usize,
    pub components: Vec<Vec<(Freq, Coefficient, Coefficient)>>,
}

impl FieldSpec {
    fn polys(&self) -> Result<Vec<TrigPoly>> {
        if self.components.len() != self.dim {
            return Err(Error::Format(format!(
                "field 'components': expected {} entries, found {}",
                self.dim,
                self.components.len()
            )));
        }
        let mut out = Vec::with_capacity(self.dim);
        for (i, terms) in self.components.iter().enumerate() {
            let mut parsed = Vec::with_capacity(terms.len());
            for (t, (k, c, s)) in terms.iter().enumerate() {
                if k.len() != self.dim {
                    return Err(Error::Format(format!(
                        "components[{i}][{t}]: frequency has {} entries, expected {}",
                        k.len(),
                        self.dim
                    )));
                }
                let at = |e: Error| Error::Format(format!("components[{i}][{t}]: {e}"));
                parsed.push((k.clone(), c.value().map_err(at)?, s.value().map_err(at)?));
            }
            out.push(TrigPoly::from_terms(self.dim, &parsed));
        }
        Ok(out)
    }

    fn from_polys(kind: Option<SpecKind>, polys: &[TrigPoly]) -> Self {
        let dim = polys.first().map_or(0, |p| p.dim());
        let components = polys
            .iter()
            .map(|p| {
                p.to_terms()
                    .into_iter()
                    .map(|(k, c, s)| (k, Coefficient::Number(c), Coefficient::Number(s)))
                    .collect()
            })
            .collect();
        Self { kind, dim, components }
    }
}

fn parse_spec(text: &str, want: SpecKind) -> Result<FieldSpec> {
    let spec: FieldSpec = serde_json::from_str(text)?;
    let kind = spec.kind.unwrap_or(SpecKind::Flow);
    if kind != want {
        return Err(Error::Format(format!("field 'kind': expected {want:?}, found {kind:?}").to_lowercase()));
    }
    Ok(spec)
}

pub fn parse_flow(text: &str) -> Result<TorusFlow> {
    TorusFlow::new(parse_spec(text, SpecKind::Flow)?.polys()?)
}

pub fn parse_form(text: &str) -> Result<OneForm> {
    OneForm::new(parse_spec(text, SpecKind::Form)?.polys()?)
}

pub fn flow_to_json(flow: &TorusFlow) -> String {
    serde_json::to_string_pretty(&FieldSpec::from_polys(None, flow.components())).expect("spec serializes")
}

pub fn form_to_json(form: &OneForm) -> String {
    serde_json::to_string_pretty(&FieldSpec::from_polys(Some(SpecKind::Form), form.components())).expect("spec serializes")
}

pub fn read_flow(path: &std::path::Path) -> Result<TorusFlow> {
    parse_flow(&std::fs::read_to_string(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn read_form(path: &std::path::Path) -> Result<OneForm> {
    parse_form(&std::fs::read_to_string(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn parse_potential(text: &str) -> Result<Potential> {
    let v: Potential = serde_json::from_str(text)?;
    v.validate()?;
    Ok(v)
}

pub fn read_potential(path: &std::path::Path) -> Result<Potential> {
    parse_potential(&std::fs::read_to_string(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// `t,x1,...,xn`.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.points.first().map_or(0, Vec::len);
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    for (t, x) in traj.times.iter().zip(&traj.points) {
        let _ = write!(out, "{t:e}");
        for v in x {
            let _ = write!(out, ",{v:e}");
        }
        out.push('\n');
    }
    out
}

/// `t,q1,...,qm,p1,...,pm,H`.
pub fn well_csv(traj: &Trajectory<WellState>, energy: impl Fn(&WellState) -> f64) -> String {
    let m = traj.points.first().map_or(0, |s| s.q.len());
    let mut out = String::from("t");
    for i in 1..=m {
        let _ = write!(out, ",q{i}");
    }
    for i in 1..=m {
        let _ = write!(out, ",p{i}");
    }
    out.push_str(",H\n");
    for (t, s) in traj.times.iter().zip(&traj.points) {
        let _ = write!(out, "{t:e}");
        for v in s.q.iter().chain(&s.p) {
            let _ = write!(out, ",{v:e}");
        }
        let _ = writeln!(out, ",{:e}", energy(s));
    }
    out
}

/// Grid dump `t,j,x,q1..qm,p1..pm`, one row per recorded time and grid point.
pub fn nlw_csv(traj: &Trajectory<NlwState>) -> String {
    let m = traj.points.first().map_or(0, |s| s.m);
    let mut out = String::from("t,j,x");
    for i in 1..=m {
        let _ = write!(out, ",q{i}");
    }
    for i in 1..=m {
        let _ = write!(out, ",p{i}");
    }
    out.push('\n');
    for (t, s) in traj.times.iter().zip(&traj.points) {
        for j in 0..s.n {
            let _ = write!(out, "{t:e},{j},{:e}", j as f64 / s.n as f64);
            for v in s.q[j].iter().chain(&s.p[j]) {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
    }
    out
}

/// Reads the first time slice of a grid dump written by [`nlw_csv`].
pub fn parse_nlw_csv(text: &str) -> Result<NlwState> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Format("empty grid file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 5 || cols[..3] != ["t", "j", "x"] || !(cols.len() - 3).is_multiple_of(2) {
        return Err(Error::Format(format!("line 1: expected header t,j,x,q1..qm,p1..pm, found '{header}'")));
    }
    let m = (cols.len() - 3) / 2;
    let (mut q, mut p) = (Vec::new(), Vec::new());
    let mut t0 = None;
    for (i, line) in lines {
        let at = |msg: String| Error::Format(format!("line {}: {msg}", i + 1));
        let vals = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| at(format!("bad number '{}'", f.trim()))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != cols.len() {
            return Err(at(format!("expected {} fields, found {}", cols.len(), vals.len())));
        }
        if *t0.get_or_insert(vals[0]) != vals[0] {
            break;
        }
        if vals[1] != q.len() as f64 {
            return Err(at(format!("grid index {} out of order", vals[1])));
        }
        q.push(vals[3..3 + m].to_vec());
        p.push(vals[3 + m..].to_vec());
    }
    NlwState::new(q, p)
}

/// Warm-start table of an extended potential: `y1..yn,z1..zm`.
pub fn samples_csv(pot: &ExtendedPotential) -> String {
    let mut out = String::new();
    let cols: Vec<String> =
        (1..=pot.base_dim).map(|i| format!("y{i}")).chain((1..=pot.dim).map(|i| format!("z{i}"))).collect();
    out.push_str(&cols.join(","));
    out.push('\n');
    for (y, z) in &pot.samples {
        let row: Vec<String> = y.iter().chain(z).map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_round_trip() {
        let flow = TorusFlow::bryant();
        let back = parse_flow(&flow_to_json(&flow)).unwrap();
        assert_eq!(back.components(), flow.components());
    }

    #[test]
    fn rational_coefficients() {
        let f = parse_flow(r#"{"dim":1,"components":[[[[0],"1/2",0]]]}"#).unwrap();
        assert_eq!(f.eval_field(&[0.3]).unwrap(), vec![0.5]);
    }

    #[test]
    fn form_tag_is_checked() {
        let text = form_to_json(&OneForm::constant(&[1.0, 0.0]));
        assert!(parse_form(&text).is_ok());
        let err = parse_flow(&text).unwrap_err().to_string();
        assert!(err.contains("expected flow"), "{err}");
    }

    #[test]
    fn nlw_grid_round_trip() {
        let s = NlwState::sample(4, |x| vec![x, -x], |x| vec![2.0 * x, 0.5]).unwrap();
        let traj = Trajectory { times: vec![0.0, 1.0], points: vec![s.clone(), s.clone()], step_size: 1.0, method: "test" };
        assert_eq!(parse_nlw_csv(&nlw_csv(&traj)).unwrap(), s);
        let err = parse_nlw_csv("t,j,x,q1,p1\n0,0,0,1\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn harmonic_potential_spec() {
        let v = parse_potential(r#"{"kind":"polynomial","dim":1,"terms":[{"coeff":0.5,"powers":[2]}]}"#).unwrap();
        assert!(crate::hamiltonian::PotentialField::value(&v, &[2.0]) == 2.0);
        assert!(parse_potential(r#"{"kind":"polynomial","dim":2,"terms":[{"coeff":1,"powers":[2]}]}"#).is_err());
    }

    #[test]
    fn diagnostics_name_the_field() {
        let err = parse_flow(r#"{"dim":2,"components":[[[[1],1,0]],[]]}"#).unwrap_err().to_string();
        assert!(err.contains("components[0][0]"), "{err}");
        let err = parse_flow("{\"dim\":2,\n\"components\": 3}").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}

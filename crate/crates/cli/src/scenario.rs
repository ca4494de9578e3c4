//! Scenario files.
//!
//! Accepted beyond the canonical form:
//!
//! * matrices as `"sigma_x" | "sigma_y" | "sigma_z"` (qubits only), `"identity"`,
//!   `"zero"`, or a nested real array `[[...], ...]`; `im` may be omitted;
//! * projector lists as `"sigma_x" | "sigma_y" | "sigma_z"` (eigenbases, qubits
//!   only), `"computational"`, `"none"`; single projectors as bare matrices
//!   (labelled by position);
//! * kets as `"0" | "1" | "+" | "-" | "+i" | "-i"` (qubits only), `{"basis": k}`,
//!   or `{"re": [...]}`;
//! * `cost` as one object for every stage or an array with one per stage.
//!
//! `hbar` (default 1) divides every Hamiltonian term on load.

use std::path::Path;

use qfb_core::dynamics::{
    ControlVector, ControlledHamiltonian, CostSchedule, CostSpec, InitialState, Scenario, StageSpec,
    DEFAULT_SUBSTEPS,
};
use qfb_core::qcore::{pauli, ComplexMatrix, DensityOperator, HermitianOperator, Ket, Projector, Tolerances, C64};
use serde_json::{Map, Value};

use crate::CliError;

type Res<T> = std::result::Result<T, CliError>;

const TOP_FIELDS: &[&str] = &[
    "dim", "hbar", "hamiltonian", "stages", "cost", "terminal", "initial", "tolerances",
];

pub fn load_scenario(path: &Path) -> Res<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage("io", format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::domain("json", format!("{}: {e}", path.display()), None))?;
    parse_scenario(&value)
}

/// Canonical JSON text of a scenario.
pub fn canonical_json(scenario: &Scenario) -> String {
    serde_json::to_string_pretty(scenario).expect("scenario serializes")
}

fn schema(location: &str, message: impl Into<String>) -> CliError {
    CliError::domain("schema", message, Some(location.to_string()))
}

fn at(location: &str) -> impl Fn(qfb_core::Error) -> CliError + '_ {
    move |e| CliError::from_core(e, location)
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, location: &str) -> Res<&'a Value> {
    obj.get(key)
        .ok_or_else(|| schema(location, format!("missing field \"{key}\"")))
}

fn object<'a>(v: &'a Value, location: &str) -> Res<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| schema(location, "expected an object"))
}

fn array<'a>(v: &'a Value, location: &str) -> Res<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| schema(location, "expected an array"))
}

fn number(v: &Value, location: &str) -> Res<f64> {
    v.as_f64().ok_or_else(|| schema(location, "expected a number"))
}

fn count(v: &Value, location: &str) -> Res<usize> {
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| schema(location, "expected a nonnegative integer"))
}

fn numbers(v: &Value, location: &str) -> Res<Vec<f64>> {
    array(v, location)?
        .iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{location}/{i}")))
        .collect()
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str], location: &str) -> Res<()> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(schema(
            &join(location, k),
            format!("unknown field \"{k}\""),
        )),
        None => Ok(()),
    }
}

fn join(parent: &str, child: &str) -> String {
    if parent.is_empty() {
        child.to_string()
    } else {
        format!("{parent}/{child}")
    }
}

pub fn parse_scenario(v: &Value) -> Res<Scenario> {
    let top = object(v, "")?;
    reject_unknown(top, TOP_FIELDS, "")?;
    let tolerances: Tolerances = match top.get("tolerances") {
        Some(t) => serde_json::from_value(t.clone())
            .map_err(|e| schema("tolerances", e.to_string()))?,
        None => Tolerances::default(),
    };
    let hbar = match top.get("hbar") {
        Some(h) => number(h, "hbar")?,
        None => 1.0,
    };
    if !(hbar.is_finite() && hbar > 0.0) {
        return Err(schema("hbar", "hbar must be positive"));
    }
    let dim = count(field(top, "dim", "")?, "dim")?;
    if dim == 0 {
        return Err(schema("dim", "dimension must be positive"));
    }
    let t = &tolerances;

    let ham = object(field(top, "hamiltonian", "")?, "hamiltonian")?;
    reject_unknown(ham, &["h0", "controls"], "hamiltonian")?;
    let h0 = match ham.get("h0") {
        Some(h) => hermitian(h, dim, "hamiltonian/h0", t)?,
        None => HermitianOperator::zeros(dim),
    };
    let controls = match ham.get("controls") {
        Some(c) => array(c, "hamiltonian/controls")?
            .iter()
            .enumerate()
            .map(|(i, h)| hermitian(h, dim, &format!("hamiltonian/controls/{i}"), t))
            .collect::<Res<Vec<_>>>()?,
        None => Vec::new(),
    };
    let rescale = |h: HermitianOperator| -> Res<HermitianOperator> {
        if hbar == 1.0 {
            return Ok(h);
        }
        HermitianOperator::linear_combination(&[(1.0 / hbar, &h)], dim).map_err(at("hbar"))
    };
    let h0 = rescale(h0)?;
    let controls = controls.into_iter().map(rescale).collect::<Res<Vec<_>>>()?;
    let m = controls.len();
    let hamiltonian = ControlledHamiltonian::new(h0, controls).map_err(at("hamiltonian"))?;

    let stages = array(field(top, "stages", "")?, "stages")?
        .iter()
        .enumerate()
        .map(|(k, s)| stage(s, dim, m, &format!("stages/{k}"), t))
        .collect::<Res<Vec<_>>>()?;

    let cost = match top.get("cost") {
        None => CostSchedule::Uniform(CostSpec::zero(dim)),
        Some(Value::Array(items)) => CostSchedule::PerStage(
            items
                .iter()
                .enumerate()
                .map(|(k, c)| cost_spec(c, dim, &format!("cost/{k}"), t))
                .collect::<Res<_>>()?,
        ),
        Some(c) => CostSchedule::Uniform(cost_spec(c, dim, "cost", t)?),
    };

    let terminal = match top.get("terminal") {
        Some(q) => hermitian(q, dim, "terminal", t)?,
        None => HermitianOperator::zeros(dim),
    };
    let initial = initial_state(field(top, "initial", "")?, dim, t)?;

    Scenario::new(hamiltonian, stages, cost, terminal, initial, tolerances).map_err(|e| {
        let loc = e.location().map(str::to_string);
        CliError::from_core(e, loc.as_deref().unwrap_or(""))
    })
}

fn stage(v: &Value, dim: usize, m: usize, location: &str, t: &Tolerances) -> Res<StageSpec> {
    let obj = object(v, location)?;
    reject_unknown(obj, &["duration", "projectors", "control_grid", "substeps"], location)?;
    let duration = number(field(obj, "duration", location)?, &join(location, "duration"))?;
    let substeps = match obj.get("substeps") {
        Some(s) => count(s, &join(location, "substeps"))?,
        None => DEFAULT_SUBSTEPS,
    };
    let ploc = join(location, "projectors");
    let projectors = projectors(field(obj, "projectors", location)?, dim, &ploc, t)?;
    let gloc = join(location, "control_grid");
    let grid = match obj.get("control_grid") {
        Some(g) => array(g, &gloc)?
            .iter()
            .enumerate()
            .map(|(j, u)| {
                let loc = format!("{gloc}/{j}");
                let values = match u {
                    Value::Number(_) => vec![number(u, &loc)?],
                    _ => numbers(u, &loc)?,
                };
                if values.len() != m {
                    return Err(schema(
                        &loc,
                        format!("control has {} entries, Hamiltonian has {m} control channels", values.len()),
                    ));
                }
                ControlVector::new(values).map_err(at(&loc))
            })
            .collect::<Res<Vec<_>>>()?,
        None if m == 0 => vec![ControlVector::empty()],
        None => return Err(schema(location, "missing field \"control_grid\"")),
    };
    StageSpec::new(duration, projectors, grid, substeps, t).map_err(|e| CliError::from_core(e.under(location), location))
}

fn projectors(v: &Value, dim: usize, location: &str, t: &Tolerances) -> Res<Vec<Projector>> {
    if let Some(name) = v.as_str() {
        let kets: Vec<(String, Ket)> = match name {
            "none" => {
                return Ok(vec![Projector::new(ComplexMatrix::identity(dim), "none", t).map_err(at(location))?]);
            }
            "computational" | "sigma_z" if name == "computational" || dim == 2 => (0..dim)
                .map(|k| (k.to_string(), Ket::basis(dim, k).expect("k < dim")))
                .collect(),
            "sigma_x" if dim == 2 => vec![("+".into(), named_ket("+")), ("-".into(), named_ket("-"))],
            "sigma_y" if dim == 2 => vec![("+i".into(), named_ket("+i")), ("-i".into(), named_ket("-i"))],
            "sigma_x" | "sigma_y" | "sigma_z" => {
                return Err(schema(location, format!("\"{name}\" needs a 2-dimensional scenario")));
            }
            _ => return Err(schema(location, format!("unknown measurement shorthand \"{name}\""))),
        };
        return Ok(kets.iter().map(|(l, k)| Projector::onto(k, l.clone())).collect());
    }
    array(v, location)?
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let loc = format!("{location}/{i}");
            let (label, mv, mloc) = match p.as_object() {
                Some(o) if o.contains_key("label") || o.contains_key("matrix") => {
                    reject_unknown(o, &["label", "matrix"], &loc)?;
                    let label = match o.get("label") {
                        Some(Value::String(s)) => s.clone(),
                        Some(_) => return Err(schema(&join(&loc, "label"), "expected a string")),
                        None => i.to_string(),
                    };
                    (label, field(o, "matrix", &loc)?, join(&loc, "matrix"))
                }
                _ => (i.to_string(), p, loc.clone()),
            };
            let m = matrix(mv, dim, &mloc)?;
            Projector::new(m, label, t).map_err(at(&mloc))
        })
        .collect()
}

fn cost_spec(v: &Value, dim: usize, location: &str, t: &Tolerances) -> Res<CostSpec> {
    let obj = object(v, location)?;
    reject_unknown(obj, &["s0", "linear", "quad_penalty"], location)?;
    let s0 = match obj.get("s0") {
        Some(s) => hermitian(s, dim, &join(location, "s0"), t)?,
        None => HermitianOperator::zeros(dim),
    };
    let lloc = join(location, "linear");
    let linear = match obj.get("linear") {
        Some(l) => array(l, &lloc)?
            .iter()
            .enumerate()
            .map(|(i, h)| hermitian(h, dim, &format!("{lloc}/{i}"), t))
            .collect::<Res<Vec<_>>>()?,
        None => Vec::new(),
    };
    let quad = match obj.get("quad_penalty") {
        Some(q) => numbers(q, &join(location, "quad_penalty"))?,
        None => Vec::new(),
    };
    CostSpec::new(s0, linear, quad).map_err(at(location))
}

fn initial_state(v: &Value, dim: usize, t: &Tolerances) -> Res<InitialState> {
    if v.is_string() || v.get("basis").is_some() {
        return Ok(InitialState::Ket(ket(v, dim, "initial", t)?));
    }
    let obj = object(v, "initial")?;
    match (obj.get("ket"), obj.get("density")) {
        (Some(k), None) if obj.len() == 1 => Ok(InitialState::Ket(ket(k, dim, "initial/ket", t)?)),
        (None, Some(r)) if obj.len() == 1 => {
            let m = matrix(r, dim, "initial/density")?;
            Ok(InitialState::Density(DensityOperator::new(m, t).map_err(at("initial/density"))?))
        }
        _ => Err(schema("initial", "expected exactly one of \"ket\" or \"density\"")),
    }
}

fn named_ket(name: &str) -> Ket {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (a, b) = match name {
        "0" => (C64::new(1.0, 0.0), C64::new(0.0, 0.0)),
        "1" => (C64::new(0.0, 0.0), C64::new(1.0, 0.0)),
        "+" => (C64::new(h, 0.0), C64::new(h, 0.0)),
        "-" => (C64::new(h, 0.0), C64::new(-h, 0.0)),
        "+i" => (C64::new(h, 0.0), C64::new(0.0, h)),
        "-i" => (C64::new(h, 0.0), C64::new(0.0, -h)),
        _ => unreachable!("checked by caller"),
    };
    Ket::new(vec![a, b], &Tolerances::default()).expect("unit norm")
}

fn ket(v: &Value, dim: usize, location: &str, t: &Tolerances) -> Res<Ket> {
    if let Some(name) = v.as_str() {
        return match name {
            "0" | "1" | "+" | "-" | "+i" | "-i" if dim == 2 => Ok(named_ket(name)),
            "0" | "1" | "+" | "-" | "+i" | "-i" => {
                Err(schema(location, format!("\"{name}\" needs a 2-dimensional scenario")))
            }
            _ => Err(schema(location, format!("unknown ket shorthand \"{name}\""))),
        };
    }
    let obj = object(v, location)?;
    if let Some(b) = obj.get("basis") {
        reject_unknown(obj, &["basis"], location)?;
        let k = count(b, &join(location, "basis"))?;
        return Ket::basis(dim, k).map_err(at(&join(location, "basis")));
    }
    reject_unknown(obj, &["re", "im"], location)?;
    let re = numbers(field(obj, "re", location)?, &join(location, "re"))?;
    let im = match obj.get("im") {
        Some(i) => numbers(i, &join(location, "im"))?,
        None => vec![0.0; re.len()],
    };
    if re.len() != dim || im.len() != dim {
        return Err(CliError::domain(
            "dimension",
            format!("ket has {} real and {} imaginary entries, scenario dimension is {dim}", re.len(), im.len()),
            Some(location.to_string()),
        ));
    }
    let amps = re.iter().zip(&im).map(|(&a, &b)| C64::new(a, b)).collect();
    Ket::new(amps, t).map_err(at(location))
}

fn hermitian(v: &Value, dim: usize, location: &str, t: &Tolerances) -> Res<HermitianOperator> {
    HermitianOperator::new(matrix(v, dim, location)?, t).map_err(at(location))
}

/// Square `dim x dim` matrix in any accepted notation.
fn matrix(v: &Value, dim: usize, location: &str) -> Res<ComplexMatrix> {
    let m = match v {
        Value::String(name) => match name.as_str() {
            "identity" => ComplexMatrix::identity(dim),
            "zero" => ComplexMatrix::zeros(dim, dim),
            "sigma_x" | "sigma_y" | "sigma_z" if dim != 2 => {
                return Err(schema(location, format!("\"{name}\" needs a 2-dimensional scenario")));
            }
            "sigma_x" => pauli::x(),
            "sigma_y" => pauli::y(),
            "sigma_z" => pauli::z(),
            _ => return Err(schema(location, format!("unknown matrix shorthand \"{name}\""))),
        },
        Value::Array(rows) => {
            let mut re = Vec::new();
            for (i, row) in rows.iter().enumerate() {
                let r = numbers(row, &format!("{location}/{i}"))?;
                if r.len() != rows.len() {
                    return Err(schema(&format!("{location}/{i}"), "rows must have one entry per row"));
                }
                re.extend(r);
            }
            ComplexMatrix::from_real(rows.len(), rows.len(), &re).map_err(at(location))?
        }
        Value::Object(obj) => {
            reject_unknown(obj, &["rows", "cols", "re", "im"], location)?;
            let rows = count(field(obj, "rows", location)?, &join(location, "rows"))?;
            let cols = count(field(obj, "cols", location)?, &join(location, "cols"))?;
            let re = numbers(field(obj, "re", location)?, &join(location, "re"))?;
            let im = match obj.get("im") {
                Some(i) => numbers(i, &join(location, "im"))?,
                None => vec![0.0; re.len()],
            };
            ComplexMatrix::from_re_im(rows, cols, &re, &im).map_err(at(location))?
        }
        _ => return Err(schema(location, "expected a matrix object, nested array or shorthand name")),
    };
    if m.rows() != dim || m.cols() != dim {
        return Err(CliError::domain(
            "dimension",
            format!("matrix is {}x{}, scenario dimension is {dim}", m.rows(), m.cols()),
            Some(location.to_string()),
        ));
    }
    Ok(m)
}

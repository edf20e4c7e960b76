//! Python bindings. Rationals cross the boundary as `"p/q"` strings and
//! transcripts and reports as JSON text.

use modchooser::chooser::ChooserParams;
use modchooser::gamblers::{gambler_by_name, GAMBLER_NAMES};
use modchooser::game::{run_game as core_run_game, GameOptions};
use modchooser::measure::{measure_modulo_given_restriction, MeasureEngine};
use modchooser::model::{pos, ModuloSet, PositionSet, Restriction};
use modchooser::rational::{format_rational, parse_rational, Rational};
use modchooser::strategy::{check_conservative, with_savings, BettingStrategy};
use modchooser::verify::{run_suite as core_run_suite, Suite};
use modchooser::{BitString, ClopenExpr};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rational(s: &str) -> PyResult<Rational> {
    parse_rational(s).map_err(err)
}

fn restriction(pairs: Vec<(u64, bool)>) -> PyResult<Restriction> {
    let mut r = Restriction::empty();
    for (p, b) in pairs {
        if p == 0 {
            return Err(err("positions are 1-based"));
        }
        r = r.with(pos(p), b).map_err(err)?;
    }
    Ok(r)
}

fn positions(ps: Vec<u64>) -> PyResult<PositionSet> {
    if ps.contains(&0) {
        return Err(err("positions are 1-based"));
    }
    Ok(ps.into_iter().map(pos).collect())
}

/// Chooser parameters.
#[pyclass(name = "Params", module = "modchooser_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyParams(ChooserParams);

#[pymethods]
impl PyParams {
    #[staticmethod]
    fn from_k(k: u32) -> Self {
        PyParams(ChooserParams::from_k(k))
    }

    #[staticmethod]
    fn desk(m: u64, n: usize, phi: u64, ell: u64) -> PyResult<Self> {
        let p = ChooserParams::desk(m, n, phi, ell);
        p.validate().map_err(err)?;
        Ok(PyParams(p))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let p: ChooserParams = serde_json::from_str(text).map_err(err)?;
        p.validate().map_err(err)?;
        Ok(PyParams(p))
    }

    #[getter]
    fn m(&self) -> String {
        self.0.m.to_string()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    #[getter]
    fn phi(&self) -> String {
        self.0.phi.to_string()
    }

    #[getter]
    fn ell(&self) -> String {
        self.0.ell.to_string()
    }

    fn h(&self, i: usize) -> PyResult<String> {
        if i == 0 {
            return Err(err("h is 1-based"));
        }
        Ok(self.0.h(i).to_string())
    }

    fn residue_threshold(&self) -> String {
        format_rational(&self.0.residue_threshold())
    }

    fn total_measure_budget(&self) -> String {
        format_rational(&self.0.total_measure_budget())
    }

    fn validate(&self) -> PyResult<String> {
        let v = self.0.validate().map_err(err)?;
        serde_json::to_string(&v).map_err(err)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("params serialize")
    }

    fn __repr__(&self) -> String {
        format!(
            "Params(m={}, n={}, phi={}, ell_bits={})",
            self.0.m,
            self.0.n,
            self.0.phi,
            self.0.ell.bits()
        )
    }
}

/// Betting strategy; `define_bet` returns a new object.
#[pyclass(
    name = "Strategy",
    module = "modchooser_py",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
struct PyStrategy(BettingStrategy);

#[pymethods]
impl PyStrategy {
    #[new]
    fn new() -> Self {
        PyStrategy(BettingStrategy::initial())
    }

    fn define_bet(&self, leaf: &str, position: u64, mass0: &str, mass1: &str) -> PyResult<Self> {
        let path: BitString = leaf.parse().map_err(err)?;
        if position == 0 {
            return Err(err("positions are 1-based"));
        }
        let b = self
            .0
            .define_bet(&path, pos(position), rational(mass0)?, rational(mass1)?)
            .map_err(err)?;
        Ok(PyStrategy(b))
    }

    fn capital(&self, path: &str) -> PyResult<String> {
        let path: BitString = path.parse().map_err(err)?;
        self.0
            .capital(&path)
            .map(|c| format_rational(&c))
            .map_err(err)
    }

    /// `(path, mass, capital)` for every leaf.
    fn leaves(&self) -> Vec<(String, String, String)> {
        self.0
            .leaves()
            .into_iter()
            .map(|l| {
                (
                    l.path.to_string(),
                    format_rational(&l.mass),
                    format_rational(&l.capital()),
                )
            })
            .collect()
    }

    fn with_savings(&self) -> Self {
        PyStrategy(with_savings(&self.0))
    }

    fn is_conservative(&self) -> bool {
        check_conservative(&self.0)
    }

    fn node_count(&self) -> usize {
        self.0.node_count()
    }
}

/// `λ` of the cylinder of `[(position, bit), ...]`.
#[pyfunction]
fn measure_restriction(pairs: Vec<(u64, bool)>) -> PyResult<String> {
    Ok(format_rational(&restriction(pairs)?.measure()))
}

/// `λ(Mod(positions, m, o) | r)`.
#[pyfunction]
#[pyo3(signature = (positions_, m, o, given = Vec::new()))]
fn measure_modulo(
    positions_: Vec<u64>,
    m: u64,
    o: u64,
    given: Vec<(u64, bool)>,
) -> PyResult<String> {
    let set = ModuloSet::new(positions(positions_)?, m, o).map_err(err)?;
    Ok(format_rational(&measure_modulo_given_restriction(
        &set,
        &restriction(given)?,
    )))
}

/// Measure of a set expression given as JSON.
#[pyfunction]
fn measure_expr(json: &str) -> PyResult<String> {
    let e: ClopenExpr = serde_json::from_str(json).map_err(err)?;
    Ok(format_rational(&MeasureEngine::new().measure_expr(&e)))
}

#[pyfunction]
fn gamblers() -> Vec<&'static str> {
    GAMBLER_NAMES.to_vec()
}

/// Plays one game and returns the transcript JSON.
#[pyfunction]
#[pyo3(signature = (params, gambler = "null", seed = 0, horizon = 10_000, check_kl_eta = false, enforce_conservative = false))]
fn run_game(
    py: Python<'_>,
    params: &PyParams,
    gambler: &str,
    seed: u64,
    horizon: u64,
    check_kl_eta: bool,
    enforce_conservative: bool,
) -> PyResult<String> {
    if !GAMBLER_NAMES.contains(&gambler) {
        return Err(err(format!("unknown gambler `{gambler}`")));
    }
    let name = gambler.to_string();
    let options = GameOptions {
        horizon,
        check_kl_eta,
        enforce_conservative,
        ..GameOptions::default()
    };
    let p = params.0.clone();
    let t = py
        .detach(move || {
            let mut g = gambler_by_name(&name, seed).expect("name checked");
            core_run_game(&p, g.as_mut(), &options)
        })
        .map_err(err)?;
    Ok(t.to_json())
}

/// Runs a property suite and returns its JSON report.
#[pyfunction]
#[pyo3(signature = (suite, cases = 100, seed = 0))]
fn run_suite(py: Python<'_>, suite: &str, cases: u64, seed: u64) -> PyResult<String> {
    let s: Suite = suite.parse().map_err(err)?;
    let report = py.detach(move || core_run_suite(s, cases, seed));
    serde_json::to_string(&report).map_err(err)
}

#[pymodule]
fn modchooser_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyStrategy>()?;
    m.add_function(wrap_pyfunction!(measure_restriction, m)?)?;
    m.add_function(wrap_pyfunction!(measure_modulo, m)?)?;
    m.add_function(wrap_pyfunction!(measure_expr, m)?)?;
    m.add_function(wrap_pyfunction!(gamblers, m)?)?;
    m.add_function(wrap_pyfunction!(run_game, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}

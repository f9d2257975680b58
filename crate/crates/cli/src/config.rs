//! TOML run configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use gwpd::methods::require_frozen_width;
use gwpd::potentials::Polynomial;
use gwpd::reference::GridSpec;
use gwpd::{
    BaseScheme, Composition, ExpectationEngine, GaussianHagedorn, GaussianHeller, Method, MethodId, MethodSpec,
    PhysicalSetup, PotentialModel, SchemeSpec,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub setup: SetupBlock,
    pub potential: PotentialBlock,
    pub method: MethodBlock,
    pub scheme: SchemeBlock,
    pub initial: InitialBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub checks: ChecksBlock,
    #[serde(default)]
    pub grid: GridBlock,
}

/// A number broadcast to every entry, or explicit values.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Values {
    Scalar(f64),
    List(Vec<f64>),
}

/// A number times the identity, a diagonal, or a full matrix given by rows.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixValue {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupBlock {
    pub dim: usize,
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "unit_mass")]
    pub mass: MatrixValue,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub c: f64,
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialBlock {
    Harmonic {
        hessian: Option<MatrixValue>,
        omega: Option<Values>,
        center: Option<Values>,
    },
    Morse {
        depth: Values,
        stiffness: Values,
        #[serde(default = "zero_values")]
        equilibrium: Values,
    },
    QuarticDoubleWell {
        barrier: f64,
        half_width: f64,
    },
    Polynomial {
        terms: Vec<Term>,
    },
    Table {
        x: Option<Vec<f64>>,
        v: Option<Vec<f64>>,
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodBlock {
    pub id: String,
    pub q_ref: Option<Values>,
    pub quadrature_order: Option<usize>,
    #[serde(default)]
    pub quadrature_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    Heller,
    Hagedorn,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeBlock {
    pub base: String,
    #[serde(default = "two")]
    pub order: u32,
    #[serde(default = "triple_jump")]
    pub composition: String,
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "heller")]
    pub parametrization: Parametrization,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    pub q: Values,
    pub p: Values,
    pub re_a: Option<MatrixValue>,
    pub im_a: Option<MatrixValue>,
    /// [Re γ, Im γ].
    pub gamma: Option<[f64; 2]>,
    pub big_q_re: Option<MatrixValue>,
    pub big_q_im: Option<MatrixValue>,
    pub big_p_re: Option<MatrixValue>,
    pub big_p_im: Option<MatrixValue>,
    pub s: Option<f64>,
    #[serde(default = "yes")]
    pub normalize: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "one_usize")]
    pub save_every: usize,
    #[serde(default)]
    pub reversibility: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { directory: default_directory(), save_every: 1, reversibility: false }
    }
}

/// Optional drift bounds reported in summary.json.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksBlock {
    pub max_norm_drift: Option<f64>,
    pub max_e_drift: Option<f64>,
    pub max_e_eff_drift: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub points: Option<Vec<usize>>,
    /// Per-dimension [lo, hi]; defaults to the center ± 8 standard deviations.
    pub bounds: Option<Vec<[f64; 2]>>,
    pub substeps: Option<usize>,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn two() -> u32 {
    2
}
fn yes() -> bool {
    true
}
fn unit_mass() -> MatrixValue {
    MatrixValue::Scalar(1.0)
}
fn zero_values() -> Values {
    Values::Scalar(0.0)
}
fn triple_jump() -> String {
    "triple_jump".into()
}
fn heller() -> Parametrization {
    Parametrization::Heller
}
fn default_directory() -> PathBuf {
    PathBuf::from("gwpd-out")
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::config(msg.into())
}

impl Values {
    pub fn to_vector(&self, dim: usize, what: &str) -> Result<DVector<f64>, Failure> {
        match self {
            Values::Scalar(x) => Ok(DVector::from_element(dim, *x)),
            Values::List(v) if v.len() == dim => Ok(DVector::from_column_slice(v)),
            Values::List(v) => Err(config_error(format!("{what}: expected {dim} values, got {}", v.len()))),
        }
    }
}

impl MatrixValue {
    pub fn to_matrix(&self, dim: usize, what: &str) -> Result<DMatrix<f64>, Failure> {
        match self {
            MatrixValue::Scalar(x) => Ok(DMatrix::from_diagonal_element(dim, dim, *x)),
            MatrixValue::Diagonal(d) if d.len() == dim => Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d))),
            MatrixValue::Diagonal(d) => Err(config_error(format!("{what}: expected {dim} diagonal entries, got {}", d.len()))),
            MatrixValue::Rows(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(config_error(format!("{what}: expected a {dim}x{dim} matrix")));
                }
                Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
            }
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        // Table files are resolved relative to the config file.
        if let PotentialBlock::Table { file: Some(f), .. } = &mut cfg.potential {
            if f.is_relative() {
                if let Some(dir) = path.parent() {
                    *f = dir.join(&*f);
                }
            }
        }
        Ok(cfg)
    }

    pub fn physical_setup(&self) -> Result<PhysicalSetup, Failure> {
        let d = self.setup.dim;
        if d == 0 {
            return Err(config_error("setup.dim must be at least 1"));
        }
        let mass = self.setup.mass.to_matrix(d, "setup.mass")?;
        Ok(PhysicalSetup::new(self.setup.hbar, mass)?)
    }

    pub fn potential(&self, setup: &PhysicalSetup) -> Result<PotentialModel, Failure> {
        let d = setup.dim();
        let model = match &self.potential {
            PotentialBlock::Harmonic { hessian, omega, center } => {
                let center = match center {
                    Some(c) => c.to_vector(d, "potential.center")?,
                    None => DVector::zeros(d),
                };
                let hessian = match (hessian, omega) {
                    (Some(h), None) => h.to_matrix(d, "potential.hessian")?,
                    (None, Some(w)) => {
                        let w = w.to_vector(d, "potential.omega")?;
                        let m = setup.mass();
                        if (0..d).any(|i| (0..d).any(|j| i != j && m[(i, j)] != 0.0)) {
                            return Err(config_error("potential.omega needs a diagonal mass; give potential.hessian"));
                        }
                        DMatrix::from_fn(d, d, |i, j| if i == j { m[(i, i)] * w[i] * w[i] } else { 0.0 })
                    }
                    _ => return Err(config_error("harmonic potential needs exactly one of `hessian` or `omega`")),
                };
                PotentialModel::harmonic(hessian, center)?
            }
            PotentialBlock::Morse { depth, stiffness, equilibrium } => PotentialModel::morse(
                depth.to_vector(d, "potential.depth")?,
                stiffness.to_vector(d, "potential.stiffness")?,
                equilibrium.to_vector(d, "potential.equilibrium")?,
            )?,
            PotentialBlock::QuarticDoubleWell { barrier, half_width } => {
                PotentialModel::quartic_double_well(d, *barrier, *half_width)?
            }
            PotentialBlock::Polynomial { terms } => {
                let owned: Vec<(f64, &[u32])> = terms.iter().map(|t| (t.c, t.powers.as_slice())).collect();
                PotentialModel::polynomial(Polynomial::from_terms(d, &owned)?)
            }
            PotentialBlock::Table { x, v, file } => {
                let (x, v) = match (x, v, file) {
                    (Some(x), Some(v), None) => (x.clone(), v.clone()),
                    (None, None, Some(path)) => read_table(path)?,
                    _ => return Err(config_error("table potential needs either `x` and `v`, or `file`")),
                };
                if d != 1 {
                    return Err(config_error("table potentials are one-dimensional"));
                }
                PotentialModel::user_table(x, v)?
            }
        };
        if model.dim() != d {
            return Err(config_error(format!("potential has dimension {}, setup.dim is {d}", model.dim())));
        }
        Ok(model)
    }

    pub fn method_id(&self) -> Result<MethodId, Failure> {
        Ok(self.method.id.parse::<MethodId>()?)
    }

    pub fn engine(&self) -> Result<ExpectationEngine, Failure> {
        let engine = match self.method.quadrature_order {
            Some(n) => ExpectationEngine::new(n)?,
            None => ExpectationEngine::default(),
        };
        Ok(if self.method.quadrature_only { engine.quadrature_only() } else { engine })
    }

    pub fn method(&self, setup: &PhysicalSetup, q0: &DVector<f64>) -> Result<Method, Failure> {
        let id = self.method_id()?;
        let spec = match &self.method.q_ref {
            Some(q) => MethodSpec::with_reference(id, q.to_vector(setup.dim(), "method.q_ref")?),
            None => MethodSpec::new(id),
        };
        let model = self.potential(setup)?;
        Ok(Method::new(spec, model, setup.clone(), self.engine()?, q0)?)
    }

    pub fn scheme_with(&self, dt: f64, steps: usize) -> Result<SchemeSpec, Failure> {
        let base: BaseScheme = self.scheme.base.parse()?;
        let composition: Composition = self.scheme.composition.parse()?;
        Ok(SchemeSpec::new(base, self.scheme.order, composition, dt, steps)?)
    }

    pub fn scheme(&self) -> Result<SchemeSpec, Failure> {
        self.scheme_with(self.scheme.dt, self.scheme.steps)
    }

    pub fn final_time(&self) -> f64 {
        self.scheme.dt * self.scheme.steps as f64
    }

    pub fn has_hagedorn_block(&self) -> bool {
        let i = &self.initial;
        i.big_q_re.is_some() || i.big_q_im.is_some() || i.big_p_re.is_some() || i.big_p_im.is_some() || i.s.is_some()
    }

    fn has_heller_block(&self) -> bool {
        let i = &self.initial;
        i.re_a.is_some() || i.im_a.is_some() || i.gamma.is_some()
    }

    /// Initial state in Heller form, validated against the method's constraints.
    pub fn initial_heller(&self, setup: &PhysicalSetup) -> Result<GaussianHeller, Failure> {
        let d = setup.dim();
        let state = if self.has_hagedorn_block() {
            self.initial_hagedorn(setup)?.to_heller(setup)?
        } else {
            let i = &self.initial;
            let q = i.q.to_vector(d, "initial.q")?;
            let p = i.p.to_vector(d, "initial.p")?;
            let re = match &i.re_a {
                Some(m) => m.to_matrix(d, "initial.re_a")?,
                None => DMatrix::zeros(d, d),
            };
            let im = i.im_a.as_ref().ok_or_else(|| config_error("initial.im_a is required"))?.to_matrix(d, "initial.im_a")?;
            let gamma = i.gamma.map_or(Complex64::new(0.0, 0.0), |g| Complex64::new(g[0], g[1]));
            let state = GaussianHeller::from_parts(q, p, &re, &im, gamma)?;
            if i.normalize || i.gamma.is_none() {
                state.normalized(setup)?
            } else {
                state
            }
        };
        if self.method_id()?.is_frozen() {
            require_frozen_width(&state)?;
        }
        Ok(state)
    }

    /// Initial state in Hagedorn form: given directly, or converted from the Heller block.
    pub fn initial_hagedorn(&self, setup: &PhysicalSetup) -> Result<GaussianHagedorn, Failure> {
        let d = setup.dim();
        if !self.has_hagedorn_block() {
            return Ok(GaussianHagedorn::from_heller(&self.initial_heller(setup)?, setup)?);
        }
        if self.scheme.parametrization != Parametrization::Hagedorn {
            return Err(config_error("initial Q/P/S given but scheme.parametrization is not `hagedorn`"));
        }
        if self.has_heller_block() {
            return Err(config_error("initial state mixes Heller (re_a, im_a, gamma) and Hagedorn (Q, P, S) keys"));
        }
        let i = &self.initial;
        let cmat = |re: &Option<MatrixValue>, im: &Option<MatrixValue>, name: &str| -> Result<_, Failure> {
            let re = re.as_ref().map_or(Ok(DMatrix::zeros(d, d)), |m| m.to_matrix(d, &format!("initial.{name}_re")))?;
            let im = im.as_ref().map_or(Ok(DMatrix::zeros(d, d)), |m| m.to_matrix(d, &format!("initial.{name}_im")))?;
            Ok(DMatrix::from_fn(d, d, |r, c| Complex64::new(re[(r, c)], im[(r, c)])))
        };
        let state = GaussianHagedorn::new(
            i.q.to_vector(d, "initial.q")?,
            i.p.to_vector(d, "initial.p")?,
            cmat(&i.big_q_re, &i.big_q_im, "big_q")?,
            cmat(&i.big_p_re, &i.big_p_im, "big_p")?,
            i.s.unwrap_or(0.0),
        )?;
        if self.method_id()?.is_frozen() {
            require_frozen_width(&state.to_heller(setup)?)?;
        }
        Ok(state)
    }

    pub fn save_every(&self) -> Result<usize, Failure> {
        if self.output.save_every == 0 {
            return Err(config_error("output.save_every must be at least 1"));
        }
        Ok(self.output.save_every)
    }

    /// Grid for `compare-grid`; `auto_bounds` apply when none are configured.
    pub fn grid_spec(&self, auto_bounds: Vec<(f64, f64)>, dt: f64, steps: usize) -> Result<GridSpec, Failure> {
        let d = auto_bounds.len();
        let default_points = if d == 1 { 512 } else { 256 };
        let points = match &self.grid.points {
            Some(p) if p.len() == 1 => vec![p[0]; d],
            Some(p) if p.len() == d => p.clone(),
            Some(_) => return Err(config_error("grid.points needs one entry or one per dimension")),
            None => vec![default_points; d],
        };
        let bounds = match &self.grid.bounds {
            Some(b) if b.len() == d => b.iter().map(|x| (x[0], x[1])).collect(),
            Some(_) => return Err(config_error("grid.bounds needs one [lo, hi] pair per dimension")),
            None => auto_bounds,
        };
        Ok(GridSpec::new(bounds, points, dt, steps)?)
    }

    pub fn grid_substeps(&self) -> Result<usize, Failure> {
        match self.grid.substeps {
            Some(0) => Err(config_error("grid.substeps must be at least 1")),
            Some(n) => Ok(n),
            None => Ok(1),
        }
    }
}

/// Two numeric columns (x, V) separated by commas or whitespace; `#` starts a comment.
fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read potential table {}: {e}", path.display())))?;
    let mut x = Vec::new();
    let mut v = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let parsed: Vec<f64> = fields.iter().filter_map(|f| f.parse().ok()).collect();
        if fields.len() != 2 || parsed.len() != 2 {
            return Err(config_error(format!("{}:{}: expected two numbers", path.display(), n + 1)));
        }
        x.push(parsed[0]);
        v.push(parsed[1]);
    }
    Ok((x, v))
}

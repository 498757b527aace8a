//! θ-periodic LQ problem data.
//!
//! Every coefficient is a [`CoefficientSpec`]: a constant matrix, a truncated
//! Fourier series whose frequencies are integer multiples of `2π/θ`, or a
//! registered closed-form builtin. Tracking signals use the same mechanism
//! with column shapes `n×1` and `m×1`.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Names accepted by [`builtin_problem`].
pub const BUILTIN_PROBLEMS: [&str; 3] = ["paper-2d", "scalar-a0", "scalar-c3"];

#[derive(Clone, Debug, PartialEq)]
pub struct FourierTerm {
    /// Integer multiple of the base frequency `2π/θ`.
    pub freq: i64,
    pub cos: DMatrix<f64>,
    pub sin: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierSeries {
    pub constant: DMatrix<f64>,
    pub terms: Vec<FourierTerm>,
}

/// A registered closed-form coefficient.
#[derive(Clone, Copy)]
pub struct Builtin {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub eval: fn(f64) -> DMatrix<f64>,
}

impl fmt::Debug for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Builtin({}, {}x{})", self.name, self.rows, self.cols)
    }
}

impl PartialEq for Builtin {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

fn paper_2d_a(t: f64) -> DMatrix<f64> {
    let (s, c) = t.sin_cos();
    DMatrix::from_row_slice(2, 2, &[s, c * c, (-s).exp(), -1.0 + c])
}

fn paper_2d_yd(t: f64) -> DMatrix<f64> {
    let (s, c) = t.sin_cos();
    DMatrix::from_column_slice(2, 1, &[s, c])
}

const BUILTIN_COEFFICIENTS: [Builtin; 2] = [
    Builtin {
        name: "paper-2d-A",
        rows: 2,
        cols: 2,
        eval: paper_2d_a,
    },
    Builtin {
        name: "sin-cos",
        rows: 2,
        cols: 1,
        eval: paper_2d_yd,
    },
];

pub fn lookup_builtin(name: &str) -> Result<Builtin> {
    BUILTIN_COEFFICIENTS
        .iter()
        .find(|b| b.name == name)
        .copied()
        .ok_or_else(|| Error::Config(format!("unknown builtin coefficient '{name}'")))
}

#[derive(Clone, Debug, PartialEq)]
pub enum CoefficientSpec {
    Constant(DMatrix<f64>),
    Fourier(FourierSeries),
    Builtin(Builtin),
}

impl CoefficientSpec {
    pub fn constant(m: DMatrix<f64>) -> Self {
        CoefficientSpec::Constant(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        CoefficientSpec::Constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        CoefficientSpec::Constant(DMatrix::identity(n, n))
    }

    pub fn scalar(v: f64) -> Self {
        CoefficientSpec::Constant(DMatrix::from_element(1, 1, v))
    }

    pub fn builtin(name: &str) -> Result<Self> {
        lookup_builtin(name).map(CoefficientSpec::Builtin)
    }

    /// Builds a Fourier spec. Frequencies are multiples of `2π/θ` and must be
    /// integers so that the series is θ-periodic by construction.
    pub fn fourier(constant: DMatrix<f64>, terms: Vec<(f64, DMatrix<f64>, DMatrix<f64>)>) -> Result<Self> {
        let shape = constant.shape();
        let mut out = Vec::with_capacity(terms.len());
        for (freq, cos, sin) in terms {
            if !freq.is_finite() || freq.fract() != 0.0 {
                return Err(Error::Config(format!(
                    "Fourier frequency {freq} is not an integer multiple of 2π/θ"
                )));
            }
            if cos.shape() != shape || sin.shape() != shape {
                return Err(Error::Config(format!(
                    "Fourier term shapes {:?}/{:?} differ from constant term {:?}",
                    cos.shape(),
                    sin.shape(),
                    shape
                )));
            }
            out.push(FourierTerm {
                freq: freq as i64,
                cos,
                sin,
            });
        }
        Ok(CoefficientSpec::Fourier(FourierSeries {
            constant,
            terms: out,
        }))
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            CoefficientSpec::Constant(m) => m.shape(),
            CoefficientSpec::Fourier(f) => f.constant.shape(),
            CoefficientSpec::Builtin(b) => (b.rows, b.cols),
        }
    }

    pub fn eval(&self, t: f64, theta: f64) -> DMatrix<f64> {
        match self {
            CoefficientSpec::Constant(m) => m.clone(),
            CoefficientSpec::Fourier(f) => {
                let omega = 2.0 * PI / theta;
                let mut out = f.constant.clone();
                for term in &f.terms {
                    let (s, c) = (term.freq as f64 * omega * t).sin_cos();
                    out += &term.cos * c + &term.sin * s;
                }
                out
            }
            CoefficientSpec::Builtin(b) => (b.eval)(t),
        }
    }
}

/// All coefficients at one instant, plus the derived products used everywhere.
#[derive(Clone, Debug)]
pub struct CoefficientSample {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub y_d: DMatrix<f64>,
    pub u_d: DMatrix<f64>,
    pub q_inv: DMatrix<f64>,
    /// `B Q⁻¹ Bᵀ`
    pub w: DMatrix<f64>,
    /// `Cᵀ C`
    pub ctc: DMatrix<f64>,
}

impl CoefficientSample {
    /// Coefficient matrix of the coupled state/adjoint system.
    pub fn hamiltonian(&self) -> DMatrix<f64> {
        linalg::block2(&self.a, &self.w, &self.ctc, &-self.a.transpose())
    }
}

#[derive(Clone, Debug)]
pub struct PeriodicProblem {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub theta: f64,
    pub a: CoefficientSpec,
    pub b: CoefficientSpec,
    pub c: CoefficientSpec,
    pub q: CoefficientSpec,
    pub y_d: CoefficientSpec,
    pub u_d: CoefficientSpec,
}

impl PeriodicProblem {
    /// Checks `θ > 0` and declared shapes; Q definiteness and periodicity are
    /// left to [`PeriodicProblem::validate`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        theta: f64,
        a: CoefficientSpec,
        b: CoefficientSpec,
        c: CoefficientSpec,
        q: CoefficientSpec,
        y_d: CoefficientSpec,
        u_d: CoefficientSpec,
    ) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::Config(format!("period must be positive, got {theta}")));
        }
        let (n, n2) = a.shape();
        let (bn, m) = b.shape();
        let (k, cn) = c.shape();
        let expect = [
            ("A", a.shape(), (n, n)),
            ("A", (n2, n2), (n, n)),
            ("B", (bn, m), (n, m)),
            ("C", (k, cn), (k, n)),
            ("Q", q.shape(), (m, m)),
            ("y_d", y_d.shape(), (n, 1)),
            ("u_d", u_d.shape(), (m, 1)),
        ];
        for (label, got, want) in expect {
            if got != want {
                return Err(Error::Config(format!(
                    "{label} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        if n == 0 || m == 0 || k == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        Ok(PeriodicProblem {
            name: name.into(),
            n,
            m,
            k,
            theta,
            a,
            b,
            c,
            q,
            y_d,
            u_d,
        })
    }

    pub fn eval(&self, t: f64) -> CoefficientSample {
        let a = self.a.eval(t, self.theta);
        let b = self.b.eval(t, self.theta);
        let c = self.c.eval(t, self.theta);
        let q = self.q.eval(t, self.theta);
        let q_inv = match q.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => q.clone().try_inverse().unwrap_or_else(|| {
                DMatrix::from_element(self.m, self.m, f64::NAN)
            }),
        };
        let w = &b * &q_inv * b.transpose();
        let ctc = c.transpose() * &c;
        CoefficientSample {
            a,
            b,
            c,
            q,
            y_d: self.y_d.eval(t, self.theta),
            u_d: self.u_d.eval(t, self.theta),
            q_inv,
            w,
            ctc,
        }
    }

    fn specs(&self) -> [(&'static str, &CoefficientSpec); 6] {
        [
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("Q", &self.q),
            ("y_d", &self.y_d),
            ("u_d", &self.u_d),
        ]
    }

    pub fn validate(&self) -> ValidationReport {
        self.validate_with(256)
    }

    pub fn validate_with(&self, points_per_period: usize) -> ValidationReport {
        let mut violations = Vec::new();
        let points = points_per_period.max(1);
        let mut min_q_eig = f64::INFINITY;
        let mut max_q_asym: f64 = 0.0;
        for i in 0..points {
            let t = self.theta * i as f64 / points as f64;
            let q = self.q.eval(t, self.theta);
            max_q_asym = max_q_asym.max(linalg::asymmetry(&q));
            min_q_eig = min_q_eig.min(linalg::min_sym_eigenvalue(&q));
            for (label, spec) in self.specs() {
                let v = spec.eval(t, self.theta);
                if v.shape() != spec.shape() {
                    violations.push(format!("{label} changes shape at t = {t}"));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    violations.push(format!("{label} is not finite at t = {t}"));
                }
            }
        }
        if max_q_asym > 1e-12 {
            violations.push(format!("Q not symmetric (asymmetry {max_q_asym:.3e})"));
        }
        if !(min_q_eig > 1e-12) {
            violations.push(format!(
                "Q not positive definite (min eigenvalue {min_q_eig:.3e})"
            ));
        }
        let mut max_gap: f64 = 0.0;
        for (label, spec) in self.specs() {
            let gap = (spec.eval(self.theta, self.theta) - spec.eval(0.0, self.theta)).amax();
            max_gap = max_gap.max(gap);
            if gap > 1e-12 {
                violations.push(format!("{label} is not θ-periodic (gap {gap:.3e})"));
            }
        }
        violations.dedup();
        ValidationReport {
            violations,
            min_q_eigenvalue: min_q_eig,
            max_periodicity_gap: max_gap,
            points_checked: points,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: ProblemJson = serde_json::from_str(s)?;
        raw.into_problem()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut p = Self::from_json_str(&text)?;
        if p.name.is_empty() {
            p.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        Ok(p)
    }

    /// Resolves a builtin name first, then a file path.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if BUILTIN_PROBLEMS.contains(&name_or_path) && !Path::new(name_or_path).exists() {
            return builtin_problem(name_or_path);
        }
        Self::from_file(Path::new(name_or_path))
    }

    pub fn to_json(&self) -> ProblemJson {
        ProblemJson {
            name: Some(self.name.clone()),
            theta: self.theta,
            n: self.n,
            m: self.m,
            k: self.k,
            a: SpecJson::from(&self.a),
            b: SpecJson::from(&self.b),
            c: SpecJson::from(&self.c),
            q: SpecJson::from(&self.q),
            y_d: SpecJson::from(&self.y_d),
            u_d: SpecJson::from(&self.u_d),
        }
    }

    /// Copy of the problem with both tracking signals set to zero.
    pub fn without_tracking(&self) -> Self {
        let mut p = self.clone();
        p.y_d = CoefficientSpec::zeros(self.n, 1);
        p.u_d = CoefficientSpec::zeros(self.m, 1);
        p.name = format!("{}-untracked", self.name);
        p
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub min_q_eigenvalue: f64,
    pub max_periodicity_gap: f64,
    pub points_checked: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn builtin_problem(name: &str) -> Result<PeriodicProblem> {
    let theta = 2.0 * PI;
    match name {
        "paper-2d" => PeriodicProblem::new(
            name,
            theta,
            CoefficientSpec::builtin("paper-2d-A")?,
            CoefficientSpec::identity(2),
            CoefficientSpec::identity(2),
            CoefficientSpec::identity(2),
            CoefficientSpec::fourier(
                DMatrix::zeros(2, 1),
                vec![(1.0, linalg::column(&[0.0, 1.0]), linalg::column(&[1.0, 0.0]))],
            )?,
            CoefficientSpec::zeros(2, 1),
        ),
        "scalar-a0" => PeriodicProblem::new(
            name,
            theta,
            CoefficientSpec::scalar(0.0),
            CoefficientSpec::scalar(1.0),
            CoefficientSpec::scalar(1.0),
            CoefficientSpec::scalar(1.0),
            CoefficientSpec::scalar(1.0),
            CoefficientSpec::scalar(0.0),
        ),
        "scalar-c3" => PeriodicProblem::new(
            name,
            theta,
            CoefficientSpec::scalar(1.0),
            CoefficientSpec::scalar(1.0),
            CoefficientSpec::scalar(3f64.sqrt()),
            CoefficientSpec::scalar(1.0),
            CoefficientSpec::scalar(0.0),
            CoefficientSpec::scalar(0.0),
        ),
        other => Err(Error::Config(format!(
            "unknown builtin problem '{other}' (known: {})",
            BUILTIN_PROBLEMS.join(", ")
        ))),
    }
}

// ---------------------------------------------------------------------------
// JSON file format

/// Row-major matrix, or a flat list read as a column vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixJson {
    Rows(Vec<Vec<f64>>),
    Column(Vec<f64>),
}

impl MatrixJson {
    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self {
            MatrixJson::Column(v) => {
                if v.is_empty() {
                    return Err(Error::Config("empty matrix".into()));
                }
                Ok(linalg::column(v))
            }
            MatrixJson::Rows(rows) => {
                let r = rows.len();
                let c = rows.first().map(|x| x.len()).unwrap_or(0);
                if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
                    return Err(Error::Config("ragged or empty matrix".into()));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Ok(DMatrix::from_row_slice(r, c, &flat))
            }
        }
    }

    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixJson::Rows(
            m.row_iter()
                .map(|row| row.iter().copied().collect())
                .collect(),
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FourierTermJson {
    pub freq: f64,
    pub cos: MatrixJson,
    pub sin: MatrixJson,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FourierJson {
    #[serde(rename = "const")]
    pub constant: MatrixJson,
    #[serde(default)]
    pub terms: Vec<FourierTermJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SpecJson {
    Constant(MatrixJson),
    Fourier(FourierJson),
    Builtin(String),
}

impl SpecJson {
    pub fn to_spec(&self) -> Result<CoefficientSpec> {
        match self {
            SpecJson::Constant(m) => Ok(CoefficientSpec::Constant(m.to_matrix()?)),
            SpecJson::Builtin(name) => CoefficientSpec::builtin(name),
            SpecJson::Fourier(f) => {
                let terms = f
                    .terms
                    .iter()
                    .map(|t| Ok((t.freq, t.cos.to_matrix()?, t.sin.to_matrix()?)))
                    .collect::<Result<Vec<_>>>()?;
                CoefficientSpec::fourier(f.constant.to_matrix()?, terms)
            }
        }
    }
}

impl From<&CoefficientSpec> for SpecJson {
    fn from(spec: &CoefficientSpec) -> Self {
        match spec {
            CoefficientSpec::Constant(m) => SpecJson::Constant(MatrixJson::from_matrix(m)),
            CoefficientSpec::Builtin(b) => SpecJson::Builtin(b.name.to_string()),
            CoefficientSpec::Fourier(f) => SpecJson::Fourier(FourierJson {
                constant: MatrixJson::from_matrix(&f.constant),
                terms: f
                    .terms
                    .iter()
                    .map(|t| FourierTermJson {
                        freq: t.freq as f64,
                        cos: MatrixJson::from_matrix(&t.cos),
                        sin: MatrixJson::from_matrix(&t.sin),
                    })
                    .collect(),
            }),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub theta: f64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    #[serde(rename = "A")]
    pub a: SpecJson,
    #[serde(rename = "B")]
    pub b: SpecJson,
    #[serde(rename = "C")]
    pub c: SpecJson,
    #[serde(rename = "Q")]
    pub q: SpecJson,
    pub y_d: SpecJson,
    pub u_d: SpecJson,
}

impl ProblemJson {
    pub fn into_problem(self) -> Result<PeriodicProblem> {
        let p = PeriodicProblem::new(
            self.name.unwrap_or_default(),
            self.theta,
            self.a.to_spec()?,
            self.b.to_spec()?,
            self.c.to_spec()?,
            self.q.to_spec()?,
            self.y_d.to_spec()?,
            self.u_d.to_spec()?,
        )?;
        if (p.n, p.m, p.k) != (self.n, self.m, self.k) {
            return Err(Error::Config(format!(
                "declared dimensions (n, m, k) = ({}, {}, {}) do not match coefficients ({}, {}, {})",
                self.n, self.m, self.k, p.n, p.m, p.k
            )));
        }
        Ok(p)
    }
}

//! Energy densities on m×n matrices, their recession functions and the
//! sphere-compactification split `v/(1+|s|^p) = c + v00(s) + v01(s/|s|)·|s|^p/(1+|s|^p)`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::rng;

pub type ScalarFn = Arc<dyn Fn(&Matrix) -> f64 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&Matrix) -> Matrix + Send + Sync>;

/// Family identifier of an integrand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Affine,
    PowerNorm,
    DoubleWell,
    Determinant,
    CofactorContraction,
    Custom,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Affine => "affine",
            Family::PowerNorm => "power-norm",
            Family::DoubleWell => "double-well",
            Family::Determinant => "determinant",
            Family::CofactorContraction => "cofactor-contraction",
            Family::Custom => "custom",
        }
    }
}

#[derive(Clone)]
pub struct CustomFns {
    pub eval: ScalarFn,
    pub grad: Option<MatrixFn>,
    pub recession: Option<ScalarFn>,
}

#[derive(Clone)]
enum Kind {
    /// L : s + c
    Affine { linear: Matrix, constant: f64 },
    /// scale · |s|^p
    PowerNorm { scale: f64 },
    /// min(|s − A|², |s − B|²)
    DoubleWell { a: Matrix, b: Matrix },
    /// (|s|² − 1)², growth exponent 4
    QuarticWell,
    Determinant,
    /// a · (Cof s) ρ
    Cofactor { a: [f64; 3], rho: [f64; 3] },
    Combination(Vec<(f64, Integrand)>),
    Custom(CustomFns),
}

/// An energy density v: R^{m×n} → R with p-growth.
#[derive(Clone)]
pub struct Integrand {
    m: usize,
    n: usize,
    p: f64,
    growth_const: f64,
    name: String,
    kind: Kind,
}

impl fmt::Debug for Integrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Integrand")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("n", &self.n)
            .field("p", &self.p)
            .field("growth_const", &self.growth_const)
            .finish()
    }
}

fn check_dims(m: usize, n: usize) -> Result<()> {
    if !(1..=3).contains(&m) || !(1..=3).contains(&n) {
        return invalid(format!("matrix dimensions {m}x{n} outside 1..=3"));
    }
    Ok(())
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return invalid(format!("growth exponent must exceed 1 (got {p})"));
    }
    Ok(())
}

fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

impl Integrand {
    pub fn affine(linear: Matrix, constant: f64, p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(Integrand {
            m: linear.rows(),
            n: linear.cols(),
            p,
            growth_const: (linear.norm() + constant.abs()).max(1e-12),
            name: "affine".into(),
            kind: Kind::Affine { linear, constant },
        })
    }

    /// The constant function `value`, seen as an element with p-growth.
    pub fn constant(m: usize, n: usize, p: f64, value: f64) -> Result<Self> {
        check_dims(m, n)?;
        let mut v = Integrand::affine(Matrix::zeros(m, n), value, p)?;
        v.name = format!("const({value})");
        Ok(v)
    }

    /// The coordinate function s ↦ s_{ij}.
    pub fn coordinate(m: usize, n: usize, p: f64, i: usize, j: usize) -> Result<Self> {
        check_dims(m, n)?;
        if i >= m || j >= n {
            return invalid(format!("coordinate ({i},{j}) outside {m}x{n}"));
        }
        let mut l = Matrix::zeros(m, n);
        l.set(i, j, 1.0);
        let mut v = Integrand::affine(l, 0.0, p)?;
        v.name = format!("s[{i},{j}]");
        Ok(v)
    }

    pub fn power_norm(m: usize, n: usize, p: f64, scale: f64) -> Result<Self> {
        check_dims(m, n)?;
        check_p(p)?;
        let name = if scale == 1.0 {
            format!("|s|^{p}")
        } else {
            format!("{scale}*|s|^{p}")
        };
        Ok(Integrand {
            m,
            n,
            p,
            growth_const: scale.abs().max(1e-12),
            name,
            kind: Kind::PowerNorm { scale },
        })
    }

    /// min(|s − A|², |s − B|²); A and B must be rank-one connected.
    pub fn double_well(a: Matrix, b: Matrix) -> Result<Self> {
        if !a.same_shape(&b) {
            return invalid("double-well wells have different shapes");
        }
        if !(b - a).is_rank_one(1e-10) {
            return invalid("double-well wells must be rank-one connected");
        }
        let r2 = a.norm_sq().min(b.norm_sq());
        Ok(Integrand {
            m: a.rows(),
            n: a.cols(),
            p: 2.0,
            growth_const: 2.0 * r2.max(1.0),
            name: "double-well".into(),
            kind: Kind::DoubleWell { a, b },
        })
    }

    /// (|s|² − 1)² with growth exponent 4.
    pub fn quartic_well(m: usize, n: usize) -> Result<Self> {
        check_dims(m, n)?;
        Ok(Integrand {
            m,
            n,
            p: 4.0,
            growth_const: 1.0,
            name: "quartic-well".into(),
            kind: Kind::QuarticWell,
        })
    }

    /// det s on n×n matrices (n = 2 or 3), positively n-homogeneous.
    pub fn determinant(n: usize) -> Result<Self> {
        if !(2..=3).contains(&n) {
            return invalid(format!("determinant integrand needs n in 2..=3 (got {n})"));
        }
        Ok(Integrand {
            m: n,
            n,
            p: n as f64,
            growth_const: if n == 2 { 0.5 } else { 0.2 },
            name: format!("det{n}"),
            kind: Kind::Determinant,
        })
    }

    /// a · (Cof s) ρ on 3×3 matrices, positively 2-homogeneous.
    pub fn cofactor_contraction(a: [f64; 3], rho: [f64; 3]) -> Result<Self> {
        let na = crate::linalg::norm(&a);
        let nr = crate::linalg::norm(&rho);
        Ok(Integrand {
            m: 3,
            n: 3,
            p: 2.0,
            growth_const: (na * nr).max(1e-12),
            name: "cofactor-contraction".into(),
            kind: Kind::Cofactor { a, rho },
        })
    }

    /// Σ c_i v_i; all terms must share m, n. The growth exponent is the largest term exponent.
    pub fn combination(terms: Vec<(f64, Integrand)>) -> Result<Self> {
        let Some((_, first)) = terms.first() else {
            return invalid("empty combination");
        };
        let (m, n) = (first.m, first.n);
        if terms.iter().any(|(_, v)| v.m != m || v.n != n) {
            return invalid("combination terms have different matrix shapes");
        }
        let p = terms.iter().map(|(_, v)| v.p).fold(f64::MIN, f64::max);
        let growth_const = terms
            .iter()
            .map(|(c, v)| c.abs() * v.growth_const * if v.p < p { 2.0 } else { 1.0 })
            .sum::<f64>()
            .max(1e-12);
        let name = terms
            .iter()
            .map(|(c, v)| format!("{c}*{}", v.name))
            .collect::<Vec<_>>()
            .join(" + ");
        Ok(Integrand {
            m,
            n,
            p,
            growth_const,
            name,
            kind: Kind::Combination(terms),
        })
    }

    /// 1 + |s|^p, the weight of the DiPerna–Majda pairing.
    pub fn mass(m: usize, n: usize, p: f64) -> Result<Self> {
        let mut v = Integrand::combination(vec![
            (1.0, Integrand::constant(m, n, p, 1.0)?),
            (1.0, Integrand::power_norm(m, n, p, 1.0)?),
        ])?;
        v.name = format!("1+|s|^{p}");
        Ok(v)
    }

    pub fn custom(
        name: impl Into<String>,
        m: usize,
        n: usize,
        p: f64,
        growth_const: f64,
        fns: CustomFns,
    ) -> Result<Self> {
        check_dims(m, n)?;
        check_p(p)?;
        if !(growth_const > 0.0) {
            return invalid("growth constant must be positive");
        }
        Ok(Integrand {
            m,
            n,
            p,
            growth_const,
            name: name.into(),
            kind: Kind::Custom(fns),
        })
    }

    pub fn negated(&self) -> Integrand {
        let mut v = Integrand::combination(vec![(-1.0, self.clone())]).expect("non-empty");
        v.name = format!("-({})", self.name);
        v
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn growth_const(&self) -> f64 {
        self.growth_const
    }
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn family(&self) -> Family {
        match &self.kind {
            Kind::Affine { .. } => Family::Affine,
            Kind::PowerNorm { .. } => Family::PowerNorm,
            Kind::DoubleWell { .. } => Family::DoubleWell,
            Kind::Determinant => Family::Determinant,
            Kind::Cofactor { .. } => Family::CofactorContraction,
            Kind::QuarticWell | Kind::Combination(_) | Kind::Custom(_) => Family::Custom,
        }
    }

    pub fn eval(&self, s: &Matrix) -> f64 {
        match &self.kind {
            Kind::Affine { linear, constant } => linear.dot(s) + constant,
            Kind::PowerNorm { scale } => scale * s.norm().powf(self.p),
            Kind::DoubleWell { a, b } => (*s - *a).norm_sq().min((*s - *b).norm_sq()),
            Kind::QuarticWell => {
                let t = s.norm_sq() - 1.0;
                t * t
            }
            Kind::Determinant => s.det(),
            Kind::Cofactor { a, rho } => {
                let c = s.cofactor();
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        acc += a[i] * c.get(i, j) * rho[j];
                    }
                }
                acc
            }
            Kind::Combination(terms) => terms.iter().map(|(c, v)| c * v.eval(s)).sum(),
            Kind::Custom(f) => (f.eval)(s),
        }
    }

    /// Analytic derivative ∂v/∂s, when the family provides one.
    pub fn grad(&self, s: &Matrix) -> Option<Matrix> {
        Some(match &self.kind {
            Kind::Affine { linear, .. } => *linear,
            Kind::PowerNorm { scale } => {
                let r = s.norm();
                if r == 0.0 {
                    Matrix::zeros(self.m, self.n)
                } else {
                    s.scale(scale * self.p * r.powf(self.p - 2.0))
                }
            }
            Kind::DoubleWell { a, b } => {
                let da = *s - *a;
                let db = *s - *b;
                if da.norm_sq() <= db.norm_sq() {
                    da.scale(2.0)
                } else {
                    db.scale(2.0)
                }
            }
            Kind::QuarticWell => s.scale(4.0 * (s.norm_sq() - 1.0)),
            Kind::Determinant => s.cofactor(),
            Kind::Cofactor { a, rho } => {
                // ∂/∂s_kl Σ a_i Cof(s)_ij ρ_j = Σ a_i ρ_j ε_ikq ε_jls s_qs
                let mut g = Matrix::zeros(3, 3);
                for k in 0..3 {
                    for l in 0..3 {
                        let mut acc = 0.0;
                        for i in 0..3 {
                            for j in 0..3 {
                                let w = a[i] * rho[j];
                                if w == 0.0 {
                                    continue;
                                }
                                for q in 0..3 {
                                    let e1 = levi_civita(i, k, q);
                                    if e1 == 0.0 {
                                        continue;
                                    }
                                    for r in 0..3 {
                                        let e2 = levi_civita(j, l, r);
                                        if e2 != 0.0 {
                                            acc += w * e1 * e2 * s.get(q, r);
                                        }
                                    }
                                }
                            }
                        }
                        g.set(k, l, acc);
                    }
                }
                g
            }
            Kind::Combination(terms) => {
                let mut g = Matrix::zeros(self.m, self.n);
                for (c, v) in terms {
                    g += v.grad(s)?.scale(*c);
                }
                g
            }
            Kind::Custom(f) => (f.grad.as_ref()?)(s),
        })
    }

    pub fn has_grad(&self) -> bool {
        match &self.kind {
            Kind::Custom(f) => f.grad.is_some(),
            Kind::Combination(terms) => terms.iter().all(|(_, v)| v.has_grad()),
            _ => true,
        }
    }

    /// Gradient, falling back to central differences with step 10⁻⁶·(1+|s|).
    pub fn grad_or_fd(&self, s: &Matrix) -> Matrix {
        if let Some(g) = self.grad(s) {
            return g;
        }
        let h = 1e-6 * (1.0 + s.norm());
        let mut g = Matrix::zeros(self.m, self.n);
        for i in 0..self.m {
            for j in 0..self.n {
                let mut sp = *s;
                let mut sm = *s;
                sp.set(i, j, s.get(i, j) + h);
                sm.set(i, j, s.get(i, j) - h);
                g.set(i, j, (self.eval(&sp) - self.eval(&sm)) / (2.0 * h));
            }
        }
        g
    }

    /// Analytic recession function v_∞, when known.
    pub fn recession(&self, s: &Matrix) -> Option<f64> {
        match &self.kind {
            Kind::Affine { .. } => Some(0.0),
            Kind::PowerNorm { .. } | Kind::Determinant | Kind::Cofactor { .. } => Some(self.eval(s)),
            Kind::DoubleWell { .. } => Some(s.norm_sq()),
            Kind::QuarticWell => Some(s.norm_sq() * s.norm_sq()),
            Kind::Combination(terms) => {
                let mut acc = 0.0;
                for (c, v) in terms {
                    // lower-growth terms are o(|s|^p)
                    if v.p < self.p {
                        continue;
                    }
                    acc += c * v.recession(s)?;
                }
                Some(acc)
            }
            Kind::Custom(f) => f.recession.as_ref().map(|r| r(s)),
        }
    }

    pub fn has_recession(&self) -> bool {
        match &self.kind {
            Kind::Custom(f) => f.recession.is_some(),
            Kind::Combination(terms) => terms
                .iter()
                .filter(|(_, v)| v.p >= self.p)
                .all(|(_, v)| v.has_recession()),
            _ => true,
        }
    }

    /// True when v coincides with its own recession function.
    pub fn is_homogeneous(&self) -> bool {
        match &self.kind {
            Kind::PowerNorm { .. } | Kind::Determinant | Kind::Cofactor { .. } => true,
            Kind::Affine { linear, constant } => linear.max_abs() == 0.0 && *constant == 0.0,
            Kind::Combination(terms) => terms
                .iter()
                .all(|(c, v)| *c == 0.0 || (v.p == self.p && v.is_homogeneous())),
            // a custom recession closure that is the eval closure itself
            Kind::Custom(f) => f.recession.as_ref().is_some_and(|r| Arc::ptr_eq(r, &f.eval)),
            _ => false,
        }
    }

    /// The recession function as an integrand of its own.
    pub fn recession_integrand(&self) -> Result<Integrand> {
        if self.is_homogeneous() {
            return Ok(self.clone());
        }
        if !self.has_recession() {
            return Err(Error::NotHomogeneous(self.name.clone()));
        }
        let name = format!("rec({})", self.name);
        let rec = match &self.kind {
            Kind::Affine { .. } => Integrand::power_norm(self.m, self.n, self.p, 0.0)?,
            Kind::DoubleWell { .. } => Integrand::power_norm(self.m, self.n, 2.0, 1.0)?,
            Kind::QuarticWell => Integrand::power_norm(self.m, self.n, 4.0, 1.0)?,
            Kind::Combination(terms) => {
                let mut parts = Vec::new();
                for (c, v) in terms.iter().filter(|(_, v)| v.p >= self.p) {
                    parts.push((*c, v.recession_integrand()?));
                }
                Integrand::combination(parts)?
            }
            _ => {
                let this = self.clone();
                let eval: ScalarFn = Arc::new(move |s: &Matrix| this.recession(s).unwrap_or(f64::NAN));
                Integrand {
                    m: self.m,
                    n: self.n,
                    p: self.p,
                    growth_const: self.growth_const,
                    name: name.clone(),
                    kind: Kind::Custom(CustomFns {
                        eval: eval.clone(),
                        grad: None,
                        recession: Some(eval),
                    }),
                }
            }
        };
        Ok(rec.with_name(name))
    }

    pub fn zero_matrix(&self) -> Matrix {
        Matrix::zeros(self.m, self.n)
    }

    /// Catalog entry as JSON; custom closures serialize by name only.
    pub fn to_json(&self) -> Value {
        match &self.kind {
            Kind::Affine { linear, constant } => json!({
                "tag": "affine", "linear": linear, "constant": constant, "p": self.p
            }),
            Kind::PowerNorm { scale } => json!({
                "tag": "power-norm", "m": self.m, "n": self.n, "p": self.p, "scale": scale
            }),
            Kind::DoubleWell { a, b } => json!({"tag": "double-well", "a": a, "b": b}),
            Kind::QuarticWell => json!({"tag": "quartic-well", "m": self.m, "n": self.n}),
            Kind::Determinant => json!({"tag": "determinant", "n": self.n}),
            Kind::Cofactor { a, rho } => json!({"tag": "cofactor-contraction", "a": a, "rho": rho}),
            Kind::Combination(terms) => json!({
                "tag": "combination",
                "terms": terms.iter().map(|(c, v)| json!([c, v.to_json()])).collect::<Vec<_>>()
            }),
            Kind::Custom(_) => json!({"tag": "custom", "name": self.name}),
        }
    }

    /// Builds an integrand from a catalog tag plus JSON parameters.
    ///
    /// Accepts either a bare tag string (`"det2"`, `"power-norm"`, ...) or an object
    /// `{"tag": ..., ...}`.
    pub fn from_json(value: &Value) -> Result<Self> {
        if let Some(tag) = value.as_str() {
            return Integrand::from_json(&json!({ "tag": tag }));
        }
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidInput("integrand must be a tag or an object".into()))?;
        let tag = obj
            .get("tag")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::InvalidInput("integrand object lacks `tag`".into()))?;
        let get_usize = |key: &str, default: usize| -> usize {
            obj.get(key).and_then(Value::as_u64).map(|x| x as usize).unwrap_or(default)
        };
        let get_f64 = |key: &str, default: f64| -> f64 {
            obj.get(key).and_then(Value::as_f64).unwrap_or(default)
        };
        let get_vec3 = |key: &str, default: [f64; 3]| -> Result<[f64; 3]> {
            match obj.get(key) {
                None => Ok(default),
                Some(v) => {
                    let xs: Vec<f64> = serde_json::from_value(v.clone())?;
                    if xs.len() != 3 {
                        return invalid(format!("`{key}` must have 3 entries"));
                    }
                    Ok([xs[0], xs[1], xs[2]])
                }
            }
        };
        let get_matrix = |key: &str| -> Result<Matrix> {
            let v = obj
                .get(key)
                .ok_or_else(|| Error::InvalidInput(format!("missing matrix `{key}`")))?;
            Ok(serde_json::from_value(v.clone())?)
        };
        match tag {
            "affine" => Integrand::affine(get_matrix("linear")?, get_f64("constant", 0.0), get_f64("p", 2.0)),
            "constant" => Integrand::constant(get_usize("m", 2), get_usize("n", 2), get_f64("p", 2.0), get_f64("value", 1.0)),
            "coordinate" => Integrand::coordinate(
                get_usize("m", 2),
                get_usize("n", 2),
                get_f64("p", 2.0),
                get_usize("i", 0),
                get_usize("j", 0),
            ),
            "power-norm" => {
                let n = get_usize("n", 2);
                Integrand::power_norm(get_usize("m", n), n, get_f64("p", 2.0), get_f64("scale", 1.0))
            }
            "mass" => {
                let n = get_usize("n", 2);
                Integrand::mass(get_usize("m", n), n, get_f64("p", 2.0))
            }
            "double-well" => {
                if obj.contains_key("a") {
                    Integrand::double_well(get_matrix("a")?, get_matrix("b")?)
                } else {
                    // default wells ±e1⊗e1 in 2×2
                    let a = Matrix::outer(&[1.0, 0.0], &[1.0, 0.0]);
                    Integrand::double_well(-a, a)
                }
            }
            "quartic-well" => Integrand::quartic_well(get_usize("m", 1), get_usize("n", 1)),
            "determinant" => Integrand::determinant(get_usize("n", 2)),
            "det2" => Integrand::determinant(2),
            "det3" => Integrand::determinant(3),
            "cofactor-contraction" | "cofactor" => {
                Integrand::cofactor_contraction(get_vec3("a", [1.0, 0.0, 0.0])?, get_vec3("rho", [0.0, 0.0, 1.0])?)
            }
            "combination" => {
                let terms = obj
                    .get("terms")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::InvalidInput("combination needs `terms`".into()))?;
                let mut out = Vec::new();
                for t in terms {
                    let pair = t
                        .as_array()
                        .filter(|a| a.len() == 2)
                        .ok_or_else(|| Error::InvalidInput("combination term must be [coef, integrand]".into()))?;
                    let c = pair[0]
                        .as_f64()
                        .ok_or_else(|| Error::InvalidInput("combination coefficient must be a number".into()))?;
                    out.push((c, Integrand::from_json(&pair[1])?));
                }
                Integrand::combination(out)
            }
            "negated" => Ok(Integrand::from_json(
                obj.get("of").ok_or_else(|| Error::InvalidInput("`negated` needs `of`".into()))?,
            )?
            .negated()),
            other => invalid(format!("unknown integrand tag `{other}`")),
        }
    }
}

/// Draws a matrix with i.i.d. standard normal entries.
pub fn random_matrix<R: Rng>(rng: &mut R, m: usize, n: usize) -> Matrix {
    let mut s = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            s.set(i, j, rng.sample(StandardNormal));
        }
    }
    s
}

/// Draws a uniformly distributed unit-norm matrix.
pub fn random_unit_matrix<R: Rng>(rng: &mut R, m: usize, n: usize) -> Matrix {
    loop {
        let s = random_matrix(rng, m, n);
        let r = s.norm();
        if r > 1e-8 {
            return s.scale(1.0 / r);
        }
    }
}

/// Result of extrapolating v(R·s)/R^p over increasing radii.
#[derive(Clone, Debug, serde::Serialize)]
pub struct RecessionEstimate {
    pub value: f64,
    pub error: f64,
    pub samples: Vec<f64>,
}

pub const DEFAULT_RECESSION_RADII: [f64; 3] = [1e2, 1e3, 1e4];
const RECESSION_CAUCHY_TOL: f64 = 1e-4;

/// Estimates v_∞(s) for a unit direction s from the values v(R·s)/R^p.
///
/// One Richardson step assuming a 1/R error term; fails when the last
/// increment exceeds 10⁻⁴·(1 + |value|).
pub fn recession_estimate(v: &Integrand, s: &Matrix, radii: &[f64]) -> Result<RecessionEstimate> {
    if radii.len() < 2 {
        return invalid("need at least two radii");
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("radii must be strictly increasing");
    }
    if *radii.last().unwrap() < 1e3 {
        return invalid("largest radius must be at least 1e3");
    }
    if (s.norm() - 1.0).abs() > 1e-9 {
        return invalid("direction must have unit norm");
    }
    let samples: Vec<f64> = radii
        .iter()
        .map(|&r| v.eval(&s.scale(r)) / r.powf(v.p))
        .collect();
    let k = samples.len();
    let last = samples[k - 1];
    let inc = last - samples[k - 2];
    let increments: Vec<f64> = samples.windows(2).map(|w| w[1] - w[0]).collect();
    if !last.is_finite() || inc.abs() > RECESSION_CAUCHY_TOL * (1.0 + last.abs()) {
        return Err(Error::RecessionDivergent {
            direction: s.to_row_major(),
            increments,
        });
    }
    let ratio = radii[k - 1] / radii[k - 2];
    let correction = inc / (ratio - 1.0);
    Ok(RecessionEstimate {
        value: last + correction,
        error: correction.abs().max(f64::EPSILON * (1.0 + last.abs())),
        samples,
    })
}

/// Sphere-compactification split of v with the canonical choice c = 0.
#[derive(Clone, Debug)]
pub struct SphereDecomposition {
    integrand: Integrand,
}

impl SphereDecomposition {
    pub fn integrand(&self) -> &Integrand {
        &self.integrand
    }

    /// The constant part; always 0 here, its content lives in v01.
    pub fn c(&self) -> f64 {
        0.0
    }

    /// v01 on the unit sphere: the recession function restricted to |θ| = 1.
    pub fn v01(&self, theta: &Matrix) -> f64 {
        if let Some(r) = self.integrand.recession(theta) {
            return r;
        }
        recession_estimate(&self.integrand, theta, &DEFAULT_RECESSION_RADII)
            .map(|e| e.value)
            .unwrap_or(f64::NAN)
    }

    /// v_S(s) = (c + v01)(s/|s|).
    pub fn v_s(&self, s: &Matrix) -> f64 {
        let r = s.norm();
        if r == 0.0 {
            return 0.0;
        }
        self.c() + self.v01(&s.scale(1.0 / r))
    }

    /// v0 = v/(1+|s|^p).
    pub fn v0(&self, s: &Matrix) -> f64 {
        self.integrand.eval(s) / (1.0 + s.norm().powf(self.integrand.p))
    }

    /// The part vanishing at infinity.
    pub fn v00(&self, s: &Matrix) -> f64 {
        let r = s.norm();
        let w = r.powf(self.integrand.p);
        if r == 0.0 {
            return self.v0(s) - self.c();
        }
        self.v0(s) - self.c() - self.v01(&s.scale(1.0 / r)) * w / (1.0 + w)
    }

    /// Recession function rebuilt from the split, v_S(s/|s|)·|s|^p.
    pub fn v_inf(&self, s: &Matrix) -> f64 {
        self.v_s(s) * s.norm().powf(self.integrand.p)
    }

    /// max |v0 − (c + v00 + v01·w/(1+w))| / max(1,|v0|) over the samples.
    pub fn reconstruction_residual(&self, samples: &[Matrix]) -> f64 {
        samples
            .iter()
            .map(|s| {
                let r = s.norm();
                let w = r.powf(self.integrand.p);
                let rebuilt = if r == 0.0 {
                    self.c() + self.v00(s)
                } else {
                    self.c() + self.v00(s) + self.v01(&s.scale(1.0 / r)) * w / (1.0 + w)
                };
                let v0 = self.v0(s);
                (v0 - rebuilt).abs() / v0.abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }
}

/// Splits v over the sphere compactification; rejects v without a recession.
pub fn sphere_split(v: &Integrand) -> Result<SphereDecomposition> {
    if v.recession(&v.zero_matrix()).is_none() {
        let mut rng = rng::stream(0x5eed, 0);
        for _ in 0..32 {
            let dir = random_unit_matrix(&mut rng, v.m, v.n);
            recession_estimate(v, &dir, &DEFAULT_RECESSION_RADII)?;
        }
    }
    Ok(SphereDecomposition {
        integrand: v.clone(),
    })
}

/// Sampled lower bound on the constant α of
/// |v(s₁)−v(s₂)| ≤ α(1+|s₁|^{p−1}+|s₂|^{p−1})|s₁−s₂|.
pub fn p_lipschitz_constant(v: &Integrand, sample_count: usize, seed: u64) -> f64 {
    let mut rng = rng::stream(seed, 0);
    let mut best: f64 = 0.0;
    for _ in 0..sample_count {
        let r1: f64 = 10.0 * rng.gen::<f64>();
        let s1 = random_unit_matrix(&mut rng, v.m, v.n).scale(r1);
        // mix far pairs with near pairs
        let s2 = if rng.gen_bool(0.5) {
            let r2: f64 = 10.0 * rng.gen::<f64>();
            random_unit_matrix(&mut rng, v.m, v.n).scale(r2)
        } else {
            let eps: f64 = 10f64.powf(-3.0 * rng.gen::<f64>());
            s1 + random_unit_matrix(&mut rng, v.m, v.n).scale(eps)
        };
        let d = (s1 - s2).norm();
        if d == 0.0 {
            continue;
        }
        let weight = (1.0 + s1.norm().powf(v.p - 1.0) + s2.norm().powf(v.p - 1.0)) * d;
        best = best.max((v.eval(&s1) - v.eval(&s2)).abs() / weight);
    }
    best
}

/// max |v| over sampled unit matrices and the coordinate axes.
pub fn sphere_sup(v: &Integrand, sample_count: usize, seed: u64) -> f64 {
    let mut rng = rng::stream(seed, 1);
    let mut best: f64 = 0.0;
    for i in 0..v.m {
        for j in 0..v.n {
            let mut e = v.zero_matrix();
            e.set(i, j, 1.0);
            best = best.max(v.eval(&e).abs());
        }
    }
    for _ in 0..sample_count {
        best = best.max(v.eval(&random_unit_matrix(&mut rng, v.m, v.n)).abs());
    }
    best
}

//! DiPerna–Majda measures (σ, ν̂) estimated through a finite test dictionary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domains::{self, DomainMesh};
use crate::error::{invalid, Error, Result};
use crate::integrands::Integrand;
use crate::linalg::{self, Matrix, Point};
use crate::par;
use crate::relaxation::{self, Classification, SolverOptions};
use crate::sequences::{CellLaw, SequenceSpec};

/// Continuous weight on the closure of Ω.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpatialFn {
    Constant { value: f64 },
    Coordinate { index: usize },
    /// (1 + cos(π|x − c|/r))/2 inside B(c, r), zero outside.
    CosineCap { center: Vec<f64>, radius: f64 },
}

impl SpatialFn {
    pub fn eval(&self, x: &Point) -> f64 {
        match self {
            SpatialFn::Constant { value } => *value,
            SpatialFn::Coordinate { index } => x[*index],
            SpatialFn::CosineCap { center, radius } => {
                let d = linalg::norm(&linalg::sub(x, &linalg::point(center))[..center.len()]);
                if d >= *radius {
                    0.0
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * d / radius).cos())
                }
            }
        }
    }

    pub fn sup_abs(&self) -> f64 {
        match self {
            SpatialFn::Constant { value } => value.abs(),
            SpatialFn::Coordinate { .. } => 1.0,
            SpatialFn::CosineCap { .. } => 1.0,
        }
    }

    pub fn name(&self) -> String {
        match self {
            SpatialFn::Constant { value } => format!("{value}"),
            SpatialFn::Coordinate { index } => format!("x{index}"),
            SpatialFn::CosineCap { center, radius } => format!("cap({center:?},{radius})"),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            SpatialFn::Coordinate { index } if *index >= n => invalid("coordinate index out of range"),
            SpatialFn::CosineCap { center, radius } if center.len() != n || !(*radius > 0.0) => {
                invalid("cosine cap needs an n-dimensional center and a positive radius")
            }
            _ => Ok(()),
        }
    }
}

/// Spatial weights g and integrand tests v. Entry g = 1 always comes first;
/// the tests always start with v = 1, v = 1 + |s|^p and the coordinates s_ij,
/// followed by the caller's tests.
#[derive(Clone, Debug)]
pub struct TestDictionary {
    m: usize,
    n: usize,
    p: f64,
    spatial: Vec<SpatialFn>,
    tests: Vec<Integrand>,
}

#[derive(Serialize, Deserialize)]
struct DictionaryFile {
    m: usize,
    n: usize,
    p: f64,
    #[serde(default)]
    spatial: Vec<SpatialFn>,
    #[serde(default)]
    tests: Vec<serde_json::Value>,
}

impl TestDictionary {
    pub fn new(m: usize, n: usize, p: f64, spatial: Vec<SpatialFn>, tests: Vec<Integrand>) -> Result<Self> {
        let mut all_spatial = vec![SpatialFn::Constant { value: 1.0 }];
        for g in spatial {
            g.validate(n)?;
            if g != all_spatial[0] {
                all_spatial.push(g);
            }
        }
        let mut all_tests = vec![
            Integrand::constant(m, n, p, 1.0)?.with_name("1"),
            Integrand::mass(m, n, p)?,
        ];
        for i in 0..m {
            for j in 0..n {
                all_tests.push(Integrand::coordinate(m, n, p, i, j)?);
            }
        }
        for v in tests {
            if v.m() != m || v.n() != n {
                return invalid(format!("test `{}` has the wrong matrix shape", v.name()));
            }
            if v.p() > p {
                return invalid(format!("test `{}` grows faster than |s|^{p}", v.name()));
            }
            all_tests.push(v);
        }
        Ok(TestDictionary {
            m,
            n,
            p,
            spatial: all_spatial,
            tests: all_tests,
        })
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
    pub fn spatial(&self) -> &[SpatialFn] {
        &self.spatial
    }
    pub fn tests(&self) -> &[Integrand] {
        &self.tests
    }
    pub fn unit_index(&self) -> usize {
        0
    }
    pub fn mass_index(&self) -> usize {
        1
    }
    pub fn coordinate_index(&self, i: usize, j: usize) -> usize {
        2 + i * self.n + j
    }
    /// Index of the first caller-supplied test.
    pub fn user_start(&self) -> usize {
        2 + self.m * self.n
    }

    pub fn to_json(&self) -> serde_json::Value {
        let file = DictionaryFile {
            m: self.m,
            n: self.n,
            p: self.p,
            spatial: self.spatial[1..].to_vec(),
            tests: self.tests[self.user_start()..].iter().map(|v| v.to_json()).collect(),
        };
        serde_json::to_value(file).expect("dictionary serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let file: DictionaryFile = serde_json::from_value(value.clone())?;
        let tests = file.tests.iter().map(Integrand::from_json).collect::<Result<Vec<_>>>()?;
        TestDictionary::new(file.m, file.n, file.p, file.spatial, tests)
    }

    /// p-homogeneous part of each test, the zero function for tests of lower growth.
    fn recessions(&self) -> Vec<Option<Integrand>> {
        self.tests
            .iter()
            .map(|v| {
                if v.p() < self.p {
                    Integrand::power_norm(self.m, self.n, self.p, 0.0).ok()
                } else {
                    v.recession_integrand().ok()
                }
            })
            .collect()
    }
}

impl Serialize for TestDictionary {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TestDictionary {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        TestDictionary::from_json(&value).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtrapolationMethod {
    Aitken,
    LastValue,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrapolated {
    pub limit: f64,
    /// Magnitude of the last increment.
    pub error: f64,
    /// False when the increments fail to decrease.
    pub cauchy: bool,
    pub method: ExtrapolationMethod,
}

/// Aitken Δ² on the last three values when the tail is geometric, the last
/// value otherwise.
pub fn extrapolate(values: &[f64]) -> Extrapolated {
    let n = values.len();
    let last = values.last().copied().unwrap_or(0.0);
    if n < 2 {
        return Extrapolated {
            limit: last,
            error: 0.0,
            cauchy: true,
            method: ExtrapolationMethod::LastValue,
        };
    }
    let d: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let d2 = d[d.len() - 1];
    let floor = 1e-13 * (1.0 + last.abs());
    if d.len() < 2 {
        return Extrapolated {
            limit: last,
            error: d2.abs(),
            cauchy: true,
            method: ExtrapolationMethod::LastValue,
        };
    }
    let d1 = d[d.len() - 2];
    let cauchy = d2.abs() <= d1.abs() + floor;
    let ratio = |a: f64, b: f64| if a.abs() > floor { b / a } else { f64::NAN };
    let r = ratio(d1, d2);
    let geometric_before = d.len() < 3 || {
        let r0 = ratio(d[d.len() - 3], d1);
        r0 > 0.0 && r0 < 1.0
    };
    if d2.abs() > floor && r > 0.0 && r < 1.0 && geometric_before {
        Extrapolated {
            limit: last + d2 * r / (1.0 - r),
            error: d2.abs(),
            cauchy,
            method: ExtrapolationMethod::Aitken,
        }
    } else {
        Extrapolated {
            limit: last,
            error: d2.abs(),
            cauchy,
            method: ExtrapolationMethod::LastValue,
        }
    }
}

/// Ladder of ∫ g·v(∇u_k) for one (g, v) pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Pairing {
    pub g: usize,
    pub v: usize,
    pub values: Vec<f64>,
    pub value_at_max: f64,
    pub limit: Extrapolated,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Atom {
    pub x0: Vec<f64>,
    /// Concentrated mass lim ∫_{B(x0, r_k)} |∇u_k|^p.
    pub mass: f64,
    pub mass_error: f64,
    pub boundary: bool,
    pub normal: Option<Vec<f64>>,
    /// Localization radius r_k = k^{-1/2} at the largest k.
    pub radius: f64,
    /// ν̂ on the sphere at infinity, tested on each dictionary v; the mass test gives 1.
    pub sphere_moments: Vec<f64>,
    pub sphere_errors: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DpmEstimate {
    pub dictionary: TestDictionary,
    pub k_ladder: Vec<u64>,
    pub pairings: Vec<Pairing>,
    pub cell_volumes: Vec<f64>,
    /// Gradient of the weak limit per cell.
    pub weak_limit: Vec<Matrix>,
    pub sigma_ac_density: Vec<f64>,
    /// ∫ v/(1+|s|^p) dν̂_x per cell and test.
    pub young_moments: Vec<Vec<f64>>,
    /// Cells inside an atom ball at the largest k; their Young measure is δ at the weak limit.
    pub masked: Vec<bool>,
    pub atoms: Vec<Atom>,
    /// Pairings whose increments failed to decrease.
    pub non_cauchy: Vec<String>,
}

impl DpmEstimate {
    pub fn pairing(&self, g: usize, v: usize) -> Option<&Pairing> {
        self.pairings.iter().find(|pr| pr.g == g && pr.v == v)
    }

    pub fn total_volume(&self) -> f64 {
        self.cell_volumes.iter().sum()
    }
}

fn atom_radius(k: u64) -> f64 {
    1.0 / (k as f64).sqrt()
}

fn law_means(law: &CellLaw, tests: &[Integrand]) -> Vec<f64> {
    tests.iter().map(|v| law.mean(|s| v.eval(s))).collect()
}

/// Estimates the pairings ∫ g·v(∇u_k) over the k ladder, the atoms at the
/// sequence's concentration points, and the per-cell density and Young moments.
pub fn estimate_pairings(seq: &SequenceSpec, mesh: &DomainMesh, dict: &TestDictionary, k_ladder: &[u64]) -> Result<DpmEstimate> {
    if k_ladder.is_empty() || k_ladder.windows(2).any(|w| w[1] <= w[0]) || k_ladder[0] == 0 {
        return invalid("k ladder must be a nonempty increasing list of positive integers");
    }
    if seq.m() != dict.m() || seq.n() != dict.n() || mesh.dim() != dict.n() {
        return invalid("sequence, dictionary and mesh dimensions differ");
    }
    for &k in k_ladder {
        seq.check_resolution(mesh, k)?;
    }
    let nc = mesh.cell_count();
    let quad = domains::quadrature(mesh.dim(), 2)?;
    let ghat: Vec<Vec<f64>> = par::map_indexed(nc, |c| {
        dict.spatial()
            .iter()
            .map(|g| quad.iter().map(|(w, b)| w * g.eval(&mesh.point_at(c, b))).sum())
            .collect()
    });
    let centroids: Vec<Point> = par::map_indexed(nc, |c| mesh.centroid(c));
    let sites = seq.atom_sites(mesh);
    let recessions = dict.recessions();
    let tests = dict.tests();
    let (ng, nv) = (dict.spatial().len(), tests.len());
    let in_ball = |c: usize, x0: &[f64], r: f64| linalg::norm(&linalg::sub(&centroids[c], &linalg::point(x0))[..mesh.dim()]) < r;

    let mut pair_values = vec![vec![Vec::with_capacity(k_ladder.len()); nv]; ng];
    let mut atom_values = vec![vec![Vec::with_capacity(k_ladder.len()); nv]; sites.len()];
    let mut last_means = Vec::new();
    for &k in k_ladder {
        let laws = seq.cell_laws(mesh, k)?;
        let means: Vec<Vec<f64>> = par::map_indexed(nc, |c| law_means(&laws[c], tests));
        for g in 0..ng {
            for v in 0..nv {
                let total: f64 = (0..nc).map(|c| mesh.volumes()[c] * ghat[c][g] * means[c][v]).sum();
                pair_values[g][v].push(total);
            }
        }
        let r = atom_radius(k);
        for (a, site) in sites.iter().enumerate() {
            let cells: Vec<usize> = (0..nc).filter(|&c| in_ball(c, &site.x0, r)).collect();
            for v in 0..nv {
                let total: f64 = match &recessions[v] {
                    Some(rec) => cells
                        .iter()
                        .map(|&c| mesh.volumes()[c] * laws[c].mean(|s| rec.eval(s)))
                        .sum(),
                    None => f64::NAN,
                };
                atom_values[a][v].push(total);
            }
        }
        last_means = means;
    }

    let mut non_cauchy = Vec::new();
    let mut pairings = Vec::with_capacity(ng * nv);
    for g in 0..ng {
        for v in 0..nv {
            let values = std::mem::take(&mut pair_values[g][v]);
            let limit = extrapolate(&values);
            if !limit.cauchy {
                non_cauchy.push(format!("pairing({}, {})", dict.spatial()[g].name(), tests[v].name()));
            }
            pairings.push(Pairing {
                g,
                v,
                value_at_max: *values.last().unwrap(),
                values,
                limit,
            });
        }
    }

    let k_max = *k_ladder.last().unwrap();
    let r_max = atom_radius(k_max);
    let mut atoms = Vec::with_capacity(sites.len());
    for (a, site) in sites.iter().enumerate() {
        let mass = extrapolate(&atom_values[a][dict.mass_index()]);
        if !mass.cauchy {
            non_cauchy.push(format!("atom {a} mass"));
        }
        let mut moments = Vec::with_capacity(nv);
        let mut errors = Vec::with_capacity(nv);
        for v in 0..nv {
            let vals = &atom_values[a][v];
            if vals.iter().any(|x| x.is_nan()) || mass.limit.abs() <= 1e-14 {
                moments.push(0.0);
                errors.push(if vals.iter().any(|x| x.is_nan()) { f64::INFINITY } else { 0.0 });
                continue;
            }
            let e = extrapolate(vals);
            moments.push(e.limit / mass.limit);
            errors.push(e.error / mass.limit.abs() + (e.limit / mass.limit).abs() * mass.error / mass.limit.abs());
        }
        moments[dict.mass_index()] = if mass.limit.abs() > 1e-14 { 1.0 } else { 0.0 };
        atoms.push(Atom {
            x0: site.x0.clone(),
            mass: mass.limit,
            mass_error: mass.error,
            boundary: site.boundary,
            normal: site.normal.clone(),
            radius: r_max,
            sphere_moments: moments,
            sphere_errors: errors,
        });
    }

    let weak_limit = seq.weak_limit(mesh)?;
    let masked: Vec<bool> = (0..nc).map(|c| sites.iter().any(|s| in_ball(c, &s.x0, r_max))).collect();
    let p = dict.p();
    let mut sigma = Vec::with_capacity(nc);
    let mut young = Vec::with_capacity(nc);
    for c in 0..nc {
        if masked[c] {
            let s = weak_limit[c];
            let d = 1.0 + s.norm().powf(p);
            sigma.push(d);
            young.push(tests.iter().map(|v| v.eval(&s) / d).collect());
        } else {
            let d = last_means[c][dict.mass_index()];
            sigma.push(d);
            young.push(last_means[c].iter().map(|x| x / d).collect());
        }
    }

    Ok(DpmEstimate {
        dictionary: dict.clone(),
        k_ladder: k_ladder.to_vec(),
        pairings,
        cell_volumes: mesh.volumes().to_vec(),
        weak_limit,
        sigma_ac_density: sigma,
        young_moments: young,
        masked,
        atoms,
        non_cauchy,
    })
}

/// Young moments (per cell) and sphere moments (per atom).
pub fn split_oscillation_concentration(est: &DpmEstimate) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    (
        est.young_moments.clone(),
        est.atoms.iter().map(|a| a.sphere_moments.clone()).collect(),
    )
}

/// Cell centroids with the largest densities of (1+|∇u_k|^p), as a blind cross-check of atom sites.
pub fn blind_atom_candidates(mesh: &DomainMesh, laws: &[CellLaw], p: f64, count: usize) -> Vec<(Point, f64)> {
    let mut dens: Vec<(usize, f64)> = laws
        .iter()
        .enumerate()
        .map(|(c, l)| (c, l.mean(|s| 1.0 + s.norm().powf(p))))
        .collect();
    dens.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    dens.into_iter().take(count).map(|(c, d)| (mesh.centroid(c), d)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub location: String,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub passed: bool,
    pub tolerance: f64,
    /// Largest deviation found, signed so that the check asks for worst ≤ tolerance.
    pub worst: f64,
    pub violations: Vec<Violation>,
    #[serde(default)]
    pub notices: Vec<String>,
}

impl ConditionCheck {
    fn new(name: &str, tolerance: f64) -> Self {
        ConditionCheck {
            name: name.into(),
            passed: true,
            tolerance,
            worst: 0.0,
            violations: Vec::new(),
            notices: Vec::new(),
        }
    }

    /// Records a deviation that must not exceed the tolerance.
    fn record(&mut self, location: impl FnOnce() -> String, deviation: f64) {
        if deviation > self.worst || deviation.is_nan() {
            self.worst = deviation;
        }
        if !(deviation <= self.tolerance) {
            self.passed = false;
            if self.violations.len() < 32 {
                self.violations.push(Violation {
                    location: location(),
                    value: deviation,
                });
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DpmReport {
    pub passed: bool,
    pub checks: Vec<ConditionCheck>,
}

/// Positivity, density formula, normalization and mass bookkeeping.
pub fn validate_dpm(est: &DpmEstimate, tol: f64) -> DpmReport {
    let dict = &est.dictionary;
    let (unit, mass) = (dict.unit_index(), dict.mass_index());

    let mut positivity = ConditionCheck::new("positivity", tol);
    for (c, d) in est.sigma_ac_density.iter().enumerate() {
        positivity.record(|| format!("cell {c}"), -d);
    }
    for (a, atom) in est.atoms.iter().enumerate() {
        positivity.record(|| format!("atom {a} at {:?}", atom.x0), -atom.mass);
    }

    let mut density = ConditionCheck::new("density", tol);
    for (c, (d, y)) in est.sigma_ac_density.iter().zip(&est.young_moments).enumerate() {
        let rebuilt = 1.0 / y[unit];
        density.record(|| format!("cell {c}"), (rebuilt - d).abs() / d.abs().max(1e-300));
    }

    let mut normalization = ConditionCheck::new("normalization", tol);
    for (c, y) in est.young_moments.iter().enumerate() {
        normalization.record(|| format!("cell {c}"), (y[mass] - 1.0).abs());
    }
    for (a, atom) in est.atoms.iter().enumerate() {
        if atom.mass > tol {
            normalization.record(|| format!("atom {a} at {:?}", atom.x0), (atom.sphere_moments[mass] - 1.0).abs());
        }
    }

    let mut bookkeeping = ConditionCheck::new("mass-bookkeeping", tol);
    if let Some(pr) = est.pairing(0, mass) {
        let ac: f64 = est.sigma_ac_density.iter().zip(&est.cell_volumes).map(|(d, v)| d * v).sum();
        let atoms: f64 = est.atoms.iter().map(|a| a.mass).sum();
        let bars = pr.limit.error + est.atoms.iter().map(|a| a.mass_error).sum::<f64>();
        let gap = (pr.limit.limit - ac - atoms).abs();
        bookkeeping.record(|| "total mass".into(), (gap - bars).max(0.0) / pr.limit.limit.abs().max(1.0));
    }

    let checks = vec![positivity, density, normalization, bookkeeping];
    DpmReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

/// Mesh size and solver settings for the envelope computations behind the checks.
#[derive(Clone, Debug)]
pub struct RelaxSettings {
    pub h: f64,
    pub solver: SolverOptions,
}

impl Default for RelaxSettings {
    fn default() -> Self {
        RelaxSettings {
            h: 0.2,
            solver: SolverOptions {
                multistart: 8,
                ..SolverOptions::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConditionTolerances {
    pub barycenter: f64,
    pub jensen: f64,
    pub atoms: f64,
}

impl Default for ConditionTolerances {
    fn default() -> Self {
        ConditionTolerances {
            barycenter: 1e-3,
            jensen: 1e-3,
            atoms: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NecessaryConditionsReport {
    pub barycenter_residual: Vec<f64>,
    /// Per cell, per dictionary test.
    pub jensen_margin: Vec<Vec<f64>>,
    /// Per interior atom, per test; None where the test was skipped.
    pub interior_nonneg_margin: Vec<Vec<Option<f64>>>,
    pub boundary_nonneg_margin: Vec<Vec<Option<f64>>>,
    pub checks: Vec<ConditionCheck>,
    pub passed: bool,
}

fn matrix_key(s: &Matrix) -> Vec<u64> {
    s.to_row_major().iter().map(|x| x.to_bits()).collect()
}

/// The first-moment, Jensen, interior and boundary conditions of the characterization.
pub fn check_necessary_conditions(
    est: &DpmEstimate,
    relax: &RelaxSettings,
    tol: &ConditionTolerances,
) -> Result<NecessaryConditionsReport> {
    let dict = &est.dictionary;
    let (m, n) = (dict.m(), dict.n());
    let tests = dict.tests();
    let nc = est.cell_volumes.len();
    if est.young_moments.len() != nc || est.weak_limit.len() != nc {
        return invalid("estimate tables have inconsistent lengths");
    }

    let mut bary = ConditionCheck::new("barycenter", tol.barycenter);
    let barycenter_residual: Vec<f64> = (0..nc)
        .map(|c| {
            let d = est.sigma_ac_density[c];
            let mut first = Matrix::zeros(m, n);
            for i in 0..m {
                for j in 0..n {
                    first.set(i, j, d * est.young_moments[c][dict.coordinate_index(i, j)]);
                }
            }
            (est.weak_limit[c] - first).norm()
        })
        .collect();
    for (c, r) in barycenter_residual.iter().enumerate() {
        bary.record(|| format!("cell {c}"), *r);
    }

    let ball = domains::build_ball(n, relax.h)?;
    let mut distinct: Vec<Matrix> = Vec::new();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let cell_slot: Vec<usize> = est
        .weak_limit
        .iter()
        .map(|s| {
            *index.entry(matrix_key(s)).or_insert_with(|| {
                distinct.push(*s);
                distinct.len() - 1
            })
        })
        .collect();
    let mut envelope = vec![vec![0.0; tests.len()]; distinct.len()];
    for (slot, s) in distinct.iter().enumerate() {
        for (t, v) in tests.iter().enumerate() {
            envelope[slot][t] = relaxation::quasiconvex_envelope(v, s, &ball, &relax.solver)?.value;
        }
    }
    let mut jensen = ConditionCheck::new("jensen", tol.jensen);
    let jensen_margin: Vec<Vec<f64>> = (0..nc)
        .map(|c| {
            let d = est.sigma_ac_density[c];
            (0..tests.len())
                .map(|t| d * est.young_moments[c][t] - envelope[cell_slot[c]][t])
                .collect()
        })
        .collect();
    for (c, row) in jensen_margin.iter().enumerate() {
        for (t, mg) in row.iter().enumerate() {
            jensen.record(|| format!("cell {c}, {}", tests[t].name()), -mg);
        }
    }

    let recessions = dict.recessions();
    let mut interior = ConditionCheck::new("interior-atoms", tol.atoms);
    let mut boundary = ConditionCheck::new("boundary-atoms", tol.atoms);
    let mut interior_nonneg_margin = Vec::new();
    let mut boundary_nonneg_margin = Vec::new();
    let zero = Matrix::zeros(m, n);
    let mut interior_class: Vec<Option<Classification>> = vec![None; tests.len()];
    let mut boundary_class: HashMap<Vec<u64>, Vec<Classification>> = HashMap::new();
    for (a, atom) in est.atoms.iter().enumerate() {
        let mut row = Vec::with_capacity(tests.len());
        if atom.boundary {
            let rho = atom
                .normal
                .clone()
                .ok_or_else(|| Error::InvalidInput(format!("boundary atom {a} has no normal")))?;
            let key: Vec<u64> = rho.iter().map(|x| x.to_bits()).collect();
            if !boundary_class.contains_key(&key) {
                let half = domains::build_half_ball(&rho, relax.h)?;
                let mut cls = Vec::with_capacity(tests.len());
                for rec in &recessions {
                    cls.push(match rec {
                        Some(r) => relaxation::boundary_quasiconvexification(r, &rho, &half, &relax.solver)?.classification,
                        None => Classification::Inconclusive,
                    });
                }
                boundary_class.insert(key.clone(), cls);
            }
            let cls = &boundary_class[&key];
            for t in 0..tests.len() {
                if cls[t] == Classification::Zero {
                    let mg = atom.sphere_moments[t];
                    boundary.record(|| format!("atom {a}, {}", tests[t].name()), -mg);
                    row.push(Some(mg));
                } else {
                    if cls[t] == Classification::Inconclusive {
                        boundary
                            .notices
                            .push(format!("atom {a}: skipped `{}`, boundary classification inconclusive", tests[t].name()));
                    }
                    row.push(None);
                }
            }
            boundary_nonneg_margin.push(row);
        } else {
            for t in 0..tests.len() {
                if interior_class[t].is_none() {
                    interior_class[t] = Some(match &recessions[t] {
                        Some(r) => {
                            let res = relaxation::quasiconvex_envelope(r, &zero, &ball, &relax.solver)?;
                            if res.value >= -res.eps_cls {
                                Classification::Finite
                            } else if res.value <= -10.0 * res.eps_cls {
                                Classification::MinusInfinity
                            } else {
                                Classification::Inconclusive
                            }
                        }
                        None => Classification::Inconclusive,
                    });
                }
                match interior_class[t] {
                    Some(Classification::Finite) => {
                        let mg = atom.sphere_moments[t];
                        interior.record(|| format!("atom {a}, {}", tests[t].name()), -mg);
                        row.push(Some(mg));
                    }
                    Some(Classification::Inconclusive) => {
                        interior
                            .notices
                            .push(format!("atom {a}: skipped `{}`, envelope classification inconclusive", tests[t].name()));
                        row.push(None);
                    }
                    _ => row.push(None),
                }
            }
            interior_nonneg_margin.push(row);
        }
    }

    let checks = vec![bary, jensen, interior, boundary];
    Ok(NecessaryConditionsReport {
        barycenter_residual,
        jensen_margin,
        interior_nonneg_margin,
        boundary_nonneg_margin,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailVerdict {
    Equiintegrable,
    Concentrating,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailReport {
    pub k_ladder: Vec<u64>,
    pub thresholds: Vec<f64>,
    /// T(K, k) = ∫_{h ≥ K} h, indexed [K][k].
    pub tails: Vec<Vec<f64>>,
    /// sup over the k ladder, per K.
    pub sup_tail: Vec<f64>,
    pub max_value: f64,
    /// ∫ h at the largest k.
    pub total: f64,
    pub tolerance: f64,
    pub verdict: TailVerdict,
    /// lim ∫_{B(x0, r_k)} h at each atom site.
    pub atom_moments: Vec<f64>,
    /// Concentration co-occurs with a nonzero atom moment, and equiintegrability with none.
    pub consistent_with_atoms: bool,
}

/// Tails of a nonnegative integrand along the sequence.
pub fn equiintegrability_diagnostic(
    seq: &SequenceSpec,
    mesh: &DomainMesh,
    h: &Integrand,
    k_ladder: &[u64],
    thresholds: &[f64],
    tol: f64,
) -> Result<TailReport> {
    if k_ladder.is_empty() || thresholds.is_empty() {
        return invalid("k and K ladders must be nonempty");
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("thresholds must increase");
    }
    let sites = seq.atom_sites(mesh);
    let centroids: Vec<Point> = par::map_indexed(mesh.cell_count(), |c| mesh.centroid(c));
    let mut tails = vec![Vec::with_capacity(k_ladder.len()); thresholds.len()];
    let mut atom_values = vec![Vec::with_capacity(k_ladder.len()); sites.len()];
    let mut max_value = 0.0f64;
    let mut total = 0.0;
    for &k in k_ladder {
        let laws = seq.cell_laws(mesh, k)?;
        let mut samples: Vec<(f64, f64)> = Vec::new();
        for (law, vol) in laws.iter().zip(mesh.volumes()) {
            for (w, s) in &law.atoms {
                let val = h.eval(s);
                if val < -1e-12 * (1.0 + s.norm_sq()) {
                    return Err(Error::NegativeIntegrand { value: val });
                }
                if *w > 0.0 {
                    samples.push((val.max(0.0), w * vol));
                }
            }
        }
        max_value = samples.iter().fold(max_value, |a, s| a.max(s.0));
        for (t, &kk) in thresholds.iter().enumerate() {
            tails[t].push(samples.iter().filter(|s| s.0 >= kk).fold(0.0, |a, s| a + s.0 * s.1));
        }
        total = samples.iter().fold(0.0, |a, s| a + s.0 * s.1);
        let r = atom_radius(k);
        for (a, site) in sites.iter().enumerate() {
            let x0 = linalg::point(&site.x0);
            let v: f64 = (0..mesh.cell_count())
                .filter(|&c| linalg::norm(&linalg::sub(&centroids[c], &x0)[..mesh.dim()]) < r)
                .map(|c| mesh.volumes()[c] * laws[c].mean(|s| h.eval(s)))
                .sum();
            atom_values[a].push(v);
        }
    }
    let sup_tail: Vec<f64> = tails.iter().map(|row| row.iter().cloned().fold(0.0, f64::max)).collect();
    let verdict = if *sup_tail.last().unwrap() <= tol {
        TailVerdict::Equiintegrable
    } else {
        TailVerdict::Concentrating
    };
    let atom_moments: Vec<f64> = atom_values.iter().map(|v| extrapolate(v).limit).collect();
    let any_atom = atom_moments.iter().any(|x| *x > tol);
    Ok(TailReport {
        k_ladder: k_ladder.to_vec(),
        thresholds: thresholds.to_vec(),
        tails,
        sup_tail,
        max_value,
        total,
        tolerance: tol,
        consistent_with_atoms: (verdict == TailVerdict::Concentrating) == any_atom,
        verdict,
        atom_moments,
    })
}

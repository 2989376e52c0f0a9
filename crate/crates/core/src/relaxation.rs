//! Quasiconvex envelopes and boundary quasiconvexifications by direct
//! minimization over P1 fields, and the {0, −∞} classification.
//!
//! Every reported value is an upper bound at the mesh resolution: the
//! discrete test space is a subset of W^{1,p}, so refinement can only lower it.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domains::{Constraint, DisplacementField, DomainMesh, Label, Shape};
use crate::error::{invalid, Error, Result};
use crate::integrands::{self, Integrand};
use crate::linalg::{self, Matrix, Point};
use crate::{par, rng};

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Total number of starts, including the zero field.
    pub multistart: usize,
    pub max_iter: usize,
    /// Converged once the accepted nodal step falls below this.
    pub step_tol: f64,
    pub seed: u64,
    /// Extra starting fields tried right after the zero field.
    pub warm_starts: Vec<DisplacementField>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            multistart: 16,
            max_iter: 500,
            step_tol: 1e-10,
            seed: 0,
            warm_starts: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Finite,
    Zero,
    MinusInfinity,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingCheck {
    pub lambda: f64,
    pub ratio: f64,
    pub expected: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evidence {
    pub witness: DisplacementField,
    pub energy: f64,
    pub exponent: f64,
    pub scaling: Vec<ScalingCheck>,
    pub scaling_ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub start: String,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelaxationResult {
    /// Normalized energy |Ω|⁻¹∫v(s₀+∇u) of the best run.
    pub value: f64,
    pub minimizer: DisplacementField,
    /// Energies of the best run, one per iteration.
    pub trace: Vec<f64>,
    pub classification: Classification,
    pub evidence: Option<Evidence>,
    pub converged: bool,
    pub eps_cls: f64,
    pub runs: Vec<RunSummary>,
}

/// Discrete energy |Ω|⁻¹(∫_Ω v(s₀+∇u) − ∫_Γ q·u) over P1 fields.
pub struct Energy<'a> {
    mesh: &'a DomainMesh,
    v: &'a Integrand,
    s0: Matrix,
    q: Option<Point>,
    pinned: Vec<bool>,
    volume: f64,
    /// Γ faces with their measure, for the boundary linear term.
    gamma_faces: Vec<(Vec<usize>, f64)>,
}

impl<'a> Energy<'a> {
    pub fn new(mesh: &'a DomainMesh, v: &'a Integrand, s0: Matrix, constraint: Constraint, q: Option<Point>) -> Result<Self> {
        if v.n() != mesh.dim() {
            return invalid(format!("integrand acts on {}x{} matrices but the mesh is {}-dimensional", v.m(), v.n(), mesh.dim()));
        }
        if s0.rows() != v.m() || s0.cols() != v.n() {
            return invalid("base matrix shape does not match the integrand");
        }
        let gamma_faces = if q.is_some() {
            mesh.faces()
                .iter()
                .filter(|f| f.label == Label::FreeGamma)
                .map(|f| (f.vertices.clone(), mesh.face_measure(f)))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Energy {
            mesh,
            v,
            s0,
            q,
            pinned: mesh.pin_mask(constraint),
            volume: mesh.total_volume(),
            gamma_faces,
        })
    }

    pub fn m(&self) -> usize {
        self.v.m()
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn zero_field(&self) -> DisplacementField {
        DisplacementField {
            m: self.m(),
            values: vec![0.0; self.m() * self.mesh.vertex_count()],
            pinned: self.pinned.clone(),
        }
    }

    fn field(&self, values: Vec<f64>) -> DisplacementField {
        let mut u = DisplacementField {
            m: self.m(),
            values,
            pinned: self.pinned.clone(),
        };
        u.apply_mask();
        u
    }

    fn boundary_term(&self, u: &[f64]) -> f64 {
        let Some(q) = self.q else { return 0.0 };
        let m = self.m();
        let mut acc = 0.0;
        for (verts, meas) in &self.gamma_faces {
            let k = verts.len() as f64;
            for &a in verts {
                for i in 0..m {
                    acc += meas / k * q[i] * u[a * m + i];
                }
            }
        }
        acc
    }

    fn cell_gradient(&self, u: &[f64], c: usize) -> Matrix {
        let m = self.m();
        let n = self.mesh.dim();
        let mut g = self.s0;
        for (a, &vtx) in self.mesh.cell(c).iter().enumerate() {
            let grad = self.mesh.bary_grads(c)[a];
            for i in 0..m {
                let val = u[vtx * m + i];
                if val != 0.0 {
                    for j in 0..n {
                        g.set(i, j, g.get(i, j) + val * grad[j]);
                    }
                }
            }
        }
        g
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        self.energy_and_magnitude(u).0
    }

    /// Energy together with |Ω|⁻¹(∫|v(s₀+∇u)| + ∫_Γ|q·u|), the size of its rounding error.
    pub fn energy_and_magnitude(&self, u: &[f64]) -> (f64, f64) {
        let per_cell = par::map_indexed(self.mesh.cell_count(), |c| self.v.eval(&self.cell_gradient(u, c)));
        let abs: Vec<f64> = per_cell.iter().map(|x| x.abs()).collect();
        let b = self.boundary_term(u);
        (
            (self.mesh.integrate_cells(&per_cell) - b) / self.volume,
            (self.mesh.integrate_cells(&abs) + b.abs()) / self.volume,
        )
    }

    pub fn energy_of(&self, u: &DisplacementField) -> f64 {
        self.energy(&u.values)
    }

    /// Energy and its gradient with respect to the free nodal values.
    pub fn energy_grad(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let m = self.m();
        let n = self.mesh.dim();
        let per_cell = par::map_indexed(self.mesh.cell_count(), |c| {
            let s = self.cell_gradient(u, c);
            (self.v.eval(&s), self.v.grad_or_fd(&s))
        });
        let vols = self.mesh.volumes();
        let mut e = 0.0;
        let mut g = vec![0.0; u.len()];
        for (c, (val, dv)) in per_cell.iter().enumerate() {
            e += vols[c] * val;
            for (a, &vtx) in self.mesh.cell(c).iter().enumerate() {
                let grad = self.mesh.bary_grads(c)[a];
                for i in 0..m {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += dv.get(i, j) * grad[j];
                    }
                    g[vtx * m + i] += vols[c] * acc;
                }
            }
        }
        if let Some(q) = self.q {
            for (verts, meas) in &self.gamma_faces {
                let k = verts.len() as f64;
                for &a in verts {
                    for i in 0..m {
                        g[a * m + i] -= meas / k * q[i];
                    }
                }
            }
        }
        e -= self.boundary_term(u);
        for (a, &p) in self.pinned.iter().enumerate() {
            if p {
                for i in 0..m {
                    g[a * m + i] = 0.0;
                }
            }
        }
        let inv = 1.0 / self.volume;
        g.iter_mut().for_each(|x| *x *= inv);
        (e * inv, g)
    }
}

pub struct DescentOutcome {
    pub field: DisplacementField,
    pub energy: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Polak–Ribière (PR+) conjugate gradients with Armijo backtracking.
///
/// Stops early, counted as converged, once the energy drops below `stop_below`.
pub fn descend(energy: &Energy, start: &DisplacementField, opts: &SolverOptions, stop_below: f64) -> DescentOutcome {
    let mut u = start.values.clone();
    let (mut e, mut g) = energy.energy_grad(&u);
    let mut mag = energy.energy_and_magnitude(&u).1;
    let mut trace = vec![e];
    let mut d: Vec<f64> = g.iter().map(|x| -x).collect();
    let mut alpha = energy.mesh.h() / max_abs(&d).max(1e-300);
    let mut converged = false;
    let mut iterations = 0;
    let mut flat = 0;
    while iterations < opts.max_iter {
        if !e.is_finite() {
            break;
        }
        if e < stop_below {
            converged = true;
            break;
        }
        let gnorm = max_abs(&g);
        if gnorm == 0.0 {
            converged = true;
            break;
        }
        let mut slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            d = g.iter().map(|x| -x).collect();
            slope = -g.iter().map(|x| x * x).sum::<f64>();
        }
        let dmax = max_abs(&d);
        let mut accepted = None;
        let mut trial = alpha;
        for _ in 0..60 {
            let cand: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + trial * b).collect();
            let (ec, mc) = energy.energy_and_magnitude(&cand);
            // decreases below the rounding level are not progress
            let noise = 1e-13 * (mag + mc);
            if ec <= e + 1e-4 * trial * slope && ec < e - noise {
                accepted = Some((cand, ec, mc));
                break;
            }
            trial *= 0.5;
        }
        iterations += 1;
        let Some((cand, ec, mc)) = accepted else {
            converged = trial * dmax < opts.step_tol;
            break;
        };
        let step = trial * dmax;
        let decrease = e - ec;
        u = cand;
        mag = mc;
        let (e_new, g_new) = energy.energy_grad(&u);
        e = e_new.min(ec);
        trace.push(e);
        let num: f64 = g_new.iter().zip(&g).map(|(a, b)| a * (a - b)).sum();
        let den: f64 = g.iter().map(|x| x * x).sum();
        let beta = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
        d = g_new.iter().zip(&d).map(|(gn, dd)| -gn + beta * dd).collect();
        g = g_new;
        alpha = 2.0 * trial;
        if step < opts.step_tol {
            converged = true;
            break;
        }
        flat = if decrease <= 1e-15 * (1.0 + e.abs()) { flat + 1 } else { 0 };
        if flat >= 5 {
            converged = true;
            break;
        }
    }
    // the trace is non-increasing by construction; keep it so under rounding
    for i in 1..trace.len() {
        if trace[i] > trace[i - 1] {
            trace[i] = trace[i - 1];
        }
    }
    DescentOutcome {
        field: energy.field(u),
        energy: *trace.last().unwrap(),
        trace,
        iterations,
        converged,
    }
}

/// Laminate-type start: u = c·b·w(e·x), w a sawtooth with slope 1−λ on a
/// fraction λ of each period and −λ on the rest.
fn laminate_start(mesh: &DomainMesh, m: usize, b: &[f64], e: &[f64], lambda: f64, amplitude: f64) -> impl Fn(&Point) -> Vec<f64> {
    let period = (8.0 * mesh.h()).min(1.0);
    let (b, e) = (b.to_vec(), e.to_vec());
    move |x: &Point| {
        let t = linalg::dot(&e, &x[..e.len()]) / period;
        let f = t - t.floor();
        let w = if f < lambda { (1.0 - lambda) * f } else { lambda * (1.0 - f) };
        (0..m).map(|i| amplitude * period * w * b[i]).collect()
    }
}

fn random_unit<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let r = linalg::norm(&v);
        if r > 1e-8 {
            return v.iter().map(|x| x / r).collect();
        }
    }
}

/// The deterministic list of start fields; `rho` selects bump starts free on Γ.
fn start_field(energy: &Energy, index: usize, opts: &SolverOptions, rho: Option<&[f64]>) -> (String, DisplacementField) {
    let mesh = energy.mesh;
    let m = energy.m();
    let n = mesh.dim();
    if index == 0 {
        return ("zero".into(), energy.zero_field());
    }
    let warm = opts.warm_starts.len();
    if index <= warm {
        let mut u = opts.warm_starts[index - 1].clone();
        u.pinned = energy.pinned.clone();
        u.apply_mask();
        return (format!("warm-{}", index - 1), u);
    }
    let k = index - 1 - warm;
    let mut rng = rng::stream(opts.seed, index as u64);
    let grid = [0.5, 0.25, 0.75, 0.125, 0.875, 0.375, 0.625];
    let bumps = 2;
    let laminates = 2 * grid.len();
    let values = |f: &dyn Fn(&Point) -> Vec<f64>| {
        let mut vals = Vec::with_capacity(m * mesh.vertex_count());
        for x in mesh.vertices() {
            vals.extend(f(x));
        }
        energy.field(vals)
    };
    if k < bumps {
        let sign = if k == 0 { 1.0 } else { -1.0 };
        let b = random_unit(&mut rng, m);
        let r = rho.map(|r| r.to_vec()).unwrap_or_else(|| random_unit(&mut rng, n));
        // b ⊗ ρ affine part times a cutoff vanishing on the sphere
        let f = move |x: &Point| {
            let r2 = linalg::dot(&x[..n], &x[..n]);
            let cut = (1.0 - r2).max(0.0);
            let lin = 1.0 + linalg::dot(&r, &x[..n]);
            (0..m).map(|i| sign * b[i] * lin * cut).collect()
        };
        return (format!("bump{}", if sign > 0.0 { "+" } else { "-" }), values(&f));
    }
    if k < bumps + laminates {
        let j = k - bumps;
        let lambda = grid[j / 2];
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let b = random_unit(&mut rng, m);
        let e = random_unit(&mut rng, n);
        let f = laminate_start(mesh, m, &b, &e, lambda, sign);
        return (format!("laminate(lambda={lambda},{})", if sign > 0.0 { "+" } else { "-" }), values(&f));
    }
    let h = mesh.h();
    let vals: Vec<f64> = (0..m * mesh.vertex_count())
        .map(|_| h * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ("random".into(), energy.field(vals))
}

struct MultiRun {
    best: usize,
    outcomes: Vec<(String, DescentOutcome)>,
}

fn run_multistart(energy: &Energy, opts: &SolverOptions, rho: Option<&[f64]>, stop_below: f64) -> MultiRun {
    let count = opts.multistart.max(1) + opts.warm_starts.len();
    let outcomes = par::map_indexed(count, |i| {
        let (name, start) = start_field(energy, i, opts, rho);
        (name, descend(energy, &start, opts, stop_below))
    });
    let mut best = 0;
    for (i, (_, o)) in outcomes.iter().enumerate() {
        if o.energy < outcomes[best].1.energy {
            best = i;
        }
    }
    MultiRun { best, outcomes }
}

fn summaries(run: &MultiRun) -> Vec<RunSummary> {
    run.outcomes
        .iter()
        .map(|(name, o)| RunSummary {
            start: name.clone(),
            energy: o.energy,
            iterations: o.iterations,
            converged: o.converged,
        })
        .collect()
}

/// ε_cls = 10⁻⁶·max(1, sup |v| over a unit-sphere sample).
pub fn eps_cls(v: &Integrand) -> f64 {
    1e-6 * integrands::sphere_sup(v, 256, 0).max(1.0)
}

/// Qv(s₀) ≈ min over starts of |Ω|⁻¹∫v(s₀+∇φ), φ = 0 on every boundary vertex.
pub fn quasiconvex_envelope(v: &Integrand, s0: &Matrix, mesh: &DomainMesh, opts: &SolverOptions) -> Result<RelaxationResult> {
    if mesh.faces().iter().any(|f| f.label != Label::Dirichlet) && !matches!(mesh.shape(), Shape::HalfBall { .. } | Shape::HalfCube) {
        return invalid("envelope problem needs a fully dirichlet boundary");
    }
    let energy = Energy::new(mesh, v, *s0, Constraint::Dirichlet, None)?;
    let eps = eps_cls(v);
    // Qv(0) of a homogeneous integrand is 0 or −∞, like the boundary envelope.
    let dichotomy = v.is_homogeneous() && s0.norm() == 0.0;
    let stop = if dichotomy { -10.0 * eps } else { f64::NEG_INFINITY };
    let run = run_multistart(&energy, opts, None, stop);
    let (classification, evidence) = if dichotomy {
        classify(&energy, &run, v.p(), eps)
    } else {
        (Classification::Finite, None)
    };
    let (_, best) = &run.outcomes[run.best];
    Ok(RelaxationResult {
        value: best.energy,
        minimizer: best.field.clone(),
        trace: best.trace.clone(),
        classification,
        evidence,
        converged: best.converged,
        eps_cls: eps,
        runs: summaries(&run),
    })
}

fn classify(energy: &Energy, run: &MultiRun, p: f64, eps: f64) -> (Classification, Option<Evidence>) {
    let (_, best) = &run.outcomes[run.best];
    if best.energy <= -10.0 * eps {
        let (scaling, ok) = scaling_probe(energy, &best.field, p);
        let ev = Evidence {
            witness: best.field.clone(),
            energy: best.energy,
            exponent: p,
            scaling,
            scaling_ok: ok,
        };
        (if ok { Classification::MinusInfinity } else { Classification::Inconclusive }, Some(ev))
    } else if run.outcomes.iter().all(|(_, o)| o.energy >= -eps) {
        (Classification::Zero, None)
    } else {
        (Classification::Inconclusive, None)
    }
}

fn check_half_ball(mesh: &DomainMesh, rho: &[f64]) -> Result<()> {
    let r = linalg::norm(rho);
    if (r - 1.0).abs() > 1e-12 {
        return Err(Error::NonUnitNormal(r));
    }
    match mesh.shape().rho(mesh.dim()) {
        Some(mr) if mr.len() == rho.len() && mr.iter().zip(rho).all(|(a, b)| (a - b).abs() <= 1e-12) => Ok(()),
        _ => invalid("mesh is not a half-ball with the given normal"),
    }
}

/// Checks energy(λu) = λ^p·energy(u) at λ ∈ {2, 4}.
pub fn scaling_probe(energy: &Energy, u: &DisplacementField, p: f64) -> (Vec<ScalingCheck>, bool) {
    let base = energy.energy_of(u);
    let checks: Vec<ScalingCheck> = [2.0f64, 4.0]
        .iter()
        .map(|&lambda| {
            let ratio = energy.energy_of(&u.scaled(lambda)) / base;
            let expected = lambda.powf(p);
            ScalingCheck {
                lambda,
                ratio,
                expected,
                rel_error: (ratio - expected).abs() / expected,
            }
        })
        .collect();
    let ok = base != 0.0 && checks.iter().all(|c| c.rel_error <= 1e-8);
    (checks, ok)
}

/// Q_{b,ρ}v(0) over fields vanishing on ∂Ω_ρ∖Γ_ρ, with the {0, −∞} verdict.
pub fn boundary_quasiconvexification(v: &Integrand, rho: &[f64], mesh: &DomainMesh, opts: &SolverOptions) -> Result<RelaxationResult> {
    if !v.is_homogeneous() {
        return Err(Error::NotHomogeneous(v.name().to_string()));
    }
    check_half_ball(mesh, rho)?;
    let eps = eps_cls(v);
    let energy = Energy::new(mesh, v, v.zero_matrix(), Constraint::GammaFree, None)?;
    let run = run_multistart(&energy, opts, Some(rho), -10.0 * eps);
    let (classification, evidence) = classify(&energy, &run, v.p(), eps);
    let (_, best) = &run.outcomes[run.best];
    Ok(RelaxationResult {
        value: best.energy,
        minimizer: best.field.clone(),
        trace: best.trace.clone(),
        classification,
        evidence,
        converged: best.converged,
        eps_cls: eps,
        runs: summaries(&run),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub falsified: bool,
    /// q = (∂v/∂s)(s₀)ρ.
    pub q: Vec<f64>,
    /// Smallest normalized defect |Ω|⁻¹(∫v(s₀+∇u) − ∫_Γ q·u) − v(s₀) found.
    pub min_defect: f64,
    pub witness: Option<DisplacementField>,
    pub fields_checked: usize,
    pub eps_cls: f64,
    pub note: String,
}

/// Searches for a violation of ∫_Γ q·u + v(s₀)|Ω| ≤ ∫ v(s₀+∇u).
pub fn qcb_test(v: &Integrand, s0: &Matrix, rho: &[f64], mesh: &DomainMesh, trials: usize, opts: &SolverOptions) -> Result<Verdict> {
    check_half_ball(mesh, rho)?;
    let dv = v.grad(s0).ok_or_else(|| Error::MissingGradient(v.name().to_string()))?;
    let q = dv.apply(rho);
    let eps = eps_cls(v);
    let energy = Energy::new(mesh, v, *s0, Constraint::GammaFree, Some(q))?;
    let v0 = v.eval(s0);
    let mut best = (0.0, None::<DisplacementField>);
    let mut checked = 0;
    let mut consider = |u: &DisplacementField, e: f64, checked: &mut usize| {
        *checked += 1;
        let defect = e - v0;
        if defect < best.0 {
            best = (defect, Some(u.clone()));
        }
    };
    let mut rng = rng::stream(opts.seed, u64::MAX);
    for t in 0..trials {
        let amp = 10f64.powf(rng.gen_range(-2.0..1.0));
        let vals: Vec<f64> = (0..energy.m() * mesh.vertex_count())
            .map(|_| amp * mesh.h() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let u = energy.field(vals);
        let e = energy.energy_of(&u);
        consider(&u, e, &mut checked);
        let _ = t;
    }
    let run = run_multistart(&energy, opts, Some(rho), v0 - 10.0 * eps);
    for (_, o) in &run.outcomes {
        consider(&o.field, o.energy, &mut checked);
    }
    let falsified = best.0 < -eps;
    Ok(Verdict {
        falsified,
        q: q[..v.m()].to_vec(),
        min_defect: best.0,
        witness: if falsified { best.1 } else { None },
        fields_checked: checked,
        eps_cls: eps,
        note: if falsified {
            "violation found".into()
        } else {
            "unfalsified by the fields tried; not a proof".into()
        },
    })
}

//! Integral functionals I(u) = ∫ g v(∇u) along gradient sequences.

use serde::{Deserialize, Serialize};

use crate::domains::{self, DomainMesh};
use crate::error::{invalid, Error, Result};
use crate::integrands::Integrand;
use crate::linalg::{self, Matrix, Point};
use crate::measures::{extrapolate, DpmEstimate, Extrapolated, RelaxSettings, SpatialFn};
use crate::par;
use crate::relaxation::{self, Classification};
use crate::sequences::{CellLaw, Profile, SequenceSpec};

#[derive(Clone, Debug)]
pub struct Functional {
    pub g: SpatialFn,
    pub v: Integrand,
}

impl Functional {
    pub fn new(g: SpatialFn, v: Integrand) -> Self {
        Functional { g, v }
    }

    /// g ≥ 0 at vertices and centroids, g > 10⁻⁹ at boundary vertices.
    pub fn validate_on(&self, mesh: &DomainMesh) -> Result<()> {
        for (i, x) in mesh.vertices().iter().enumerate() {
            let g = self.g.eval(x);
            if g < 0.0 || (mesh.on_boundary(i) && g <= 1e-9) {
                return invalid(format!("weight g = {g:e} at vertex {i} violates g ≥ 0, g > 0 on the boundary"));
            }
        }
        for c in 0..mesh.cell_count() {
            if self.g.eval(&mesh.centroid(c)) < 0.0 {
                return invalid(format!("weight g is negative in cell {c}"));
            }
        }
        Ok(())
    }
}

/// ∫ g over each cell, by degree-2 quadrature.
fn weight_integrals(mesh: &DomainMesh, g: &SpatialFn) -> Result<Vec<f64>> {
    let quad = domains::quadrature(mesh.dim(), 2)?;
    Ok(par::map_indexed(mesh.cell_count(), |c| {
        mesh.volumes()[c] * quad.iter().map(|(w, b)| w * g.eval(&mesh.point_at(c, b))).sum::<f64>()
    }))
}

/// ∫ g·v(∇u) for cellwise constant gradients.
pub fn evaluate_functional(f: &Functional, mesh: &DomainMesh, gradients: &[Matrix]) -> Result<f64> {
    if gradients.len() != mesh.cell_count() {
        return invalid("field does not conform to the mesh");
    }
    let gw = weight_integrals(mesh, &f.g)?;
    Ok(gradients.iter().zip(&gw).map(|(s, w)| w * f.v.eval(s)).sum())
}

/// ∫ g·v(∇u_k) for per-cell gradient laws.
pub fn evaluate_on_laws(f: &Functional, mesh: &DomainMesh, laws: &[CellLaw]) -> Result<f64> {
    if laws.len() != mesh.cell_count() {
        return invalid("laws do not conform to the mesh");
    }
    let gw = weight_integrals(mesh, &f.g)?;
    Ok(laws.iter().zip(&gw).map(|(l, w)| w * l.mean(|s| f.v.eval(s))).sum())
}

/// Profile used by the boundary probe.
#[derive(Clone, Debug)]
pub enum ProbeProfile {
    Given(Profile),
    /// The negative-energy field found by the boundary relaxation at the point, mirrored across Γ.
    RelaxationWitness,
}

#[derive(Clone, Debug)]
pub struct WlscOptions {
    pub relax: RelaxSettings,
    pub k_ladder: Vec<u64>,
    /// Core fraction for grading the mesh toward each point; None uses the mesh as given.
    pub grading: Option<f64>,
    pub tolerance: f64,
    /// Mesh size of the half-ball quadrature for the blow-up oracle.
    pub oracle_h: f64,
}

impl Default for WlscOptions {
    fn default() -> Self {
        WlscOptions {
            relax: RelaxSettings::default(),
            k_ladder: vec![1, 2, 4, 8, 16],
            grading: Some(0.15),
            tolerance: 1e-3,
            oracle_h: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryScan {
    pub x0: Vec<f64>,
    pub rho: Vec<f64>,
    pub classification: Classification,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SequenceGap {
    pub x0: Vec<f64>,
    pub profile: String,
    pub k_ladder: Vec<u64>,
    /// I(u_k) − I(0).
    pub gaps: Vec<f64>,
    pub limit: Extrapolated,
    pub liminf: f64,
    /// g(x0)·∫_{B ∩ {ρ·y < 0}} v_∞(∇u).
    pub oracle: f64,
    /// False when the increments change sign more than once.
    pub monotone: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WlscOutcome {
    ConsistentWithWlsc,
    WlscViolated,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WlscVerdict {
    pub boundary_scan: Vec<BoundaryScan>,
    pub liminf_gap: Vec<SequenceGap>,
    pub verdict: WlscOutcome,
    /// Index into liminf_gap of the sequence that violates the lower bound.
    pub witness: Option<usize>,
    pub tolerance: f64,
    pub notices: Vec<String>,
}

fn sign_changes(values: &[f64]) -> usize {
    let d: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).filter(|x| *x != 0.0).collect();
    d.windows(2).filter(|w| w[0].signum() != w[1].signum()).count()
}

/// Boundary concentration probe of weak lower semicontinuity.
pub fn wlsc_probe(
    f: &Functional,
    mesh: &DomainMesh,
    points: &[Point],
    profiles: &[ProbeProfile],
    opts: &WlscOptions,
) -> Result<WlscVerdict> {
    let n = mesh.dim();
    if f.v.n() != n {
        return invalid("integrand and mesh dimensions differ");
    }
    f.validate_on(mesh)?;
    let v_inf = f.v.recession_integrand()?;
    let zero = f.v.zero_matrix();
    let mut scans = Vec::new();
    let mut gaps = Vec::new();
    let mut notices = Vec::new();
    for x0 in points {
        if !mesh.is_boundary_point(x0, 1e-9) {
            return invalid(format!("point {:?} is not on the boundary", &x0[..n]));
        }
        let rho: Vec<f64> = mesh.outer_normal(x0)[..n].to_vec();
        let half = domains::build_half_ball(&rho, opts.relax.h)?;
        let rel = relaxation::boundary_quasiconvexification(&v_inf, &rho, &half, &opts.relax.solver)?;
        scans.push(BoundaryScan {
            x0: x0[..n].to_vec(),
            rho: rho.clone(),
            classification: rel.classification,
            value: rel.value,
        });
        if rel.classification == Classification::Inconclusive {
            notices.push(format!("{:?}: boundary classification inconclusive", &x0[..n]));
        }
        let local = match opts.grading {
            Some(u1) => mesh.graded(x0, u1)?,
            None => mesh.clone(),
        };
        let base = evaluate_functional(f, &local, &vec![zero; local.cell_count()])?;
        let g0 = f.g.eval(x0);
        for (pi, probe) in profiles.iter().enumerate() {
            let (profile, name, oracle) = match probe {
                ProbeProfile::Given(p) => {
                    let oracle = g0 * p.half_ball_integral(&v_inf, &rho, opts.oracle_h)?;
                    (p.clone(), format!("profile {pi}"), oracle)
                }
                ProbeProfile::RelaxationWitness => {
                    let Some(ev) = &rel.evidence else {
                        notices.push(format!("{:?}: no relaxation witness to replay", &x0[..n]));
                        continue;
                    };
                    let grads = domains::cell_gradients(&half, &ev.witness);
                    let norm: f64 = grads.iter().zip(half.volumes()).map(|(s, v)| v * s.norm().powf(f.v.p())).sum();
                    let scale = norm.powf(-1.0 / f.v.p());
                    let oracle: f64 = g0 * grads
                        .iter()
                        .zip(half.volumes())
                        .map(|(s, v)| v * v_inf.eval(&s.scale(scale)))
                        .sum::<f64>();
                    let p = Profile::mesh_field(half.clone(), ev.witness.scaled(scale), Some(rho.clone()))?;
                    (p, "relaxation witness".to_string(), oracle)
                }
            };
            let seq = SequenceSpec::Concentration {
                profile,
                x0: x0[..n].to_vec(),
                p: f.v.p(),
            };
            let ladder: Vec<u64> = opts
                .k_ladder
                .iter()
                .copied()
                .filter(|&k| seq.check_resolution(&local, k).is_ok())
                .collect();
            if ladder.is_empty() {
                notices.push(format!("{:?}, {name}: no k on the ladder is resolved", &x0[..n]));
                continue;
            }
            let mut values = Vec::with_capacity(ladder.len());
            for &k in &ladder {
                let grads = seq.materialize(&local, k)?;
                values.push(evaluate_functional(f, &local, &grads)? - base);
            }
            let limit = extrapolate(&values);
            let tail = &values[values.len() / 2..];
            let liminf = tail.iter().cloned().fold(limit.limit, f64::min);
            gaps.push(SequenceGap {
                x0: x0[..n].to_vec(),
                profile: name,
                k_ladder: ladder,
                monotone: sign_changes(&values) <= 1,
                gaps: values,
                limit,
                liminf,
                oracle,
            });
        }
    }
    let witness = gaps
        .iter()
        .enumerate()
        .filter(|(_, g)| g.liminf < -opts.tolerance)
        .min_by(|a, b| a.1.liminf.partial_cmp(&b.1.liminf).unwrap())
        .map(|(i, _)| i);
    let verdict = if witness.is_some() {
        WlscOutcome::WlscViolated
    } else if !gaps.is_empty() && scans.iter().all(|s| s.classification == Classification::Zero) {
        WlscOutcome::ConsistentWithWlsc
    } else {
        WlscOutcome::Inconclusive
    };
    Ok(WlscVerdict {
        boundary_scan: scans,
        liminf_gap: gaps,
        verdict,
        witness,
        tolerance: opts.tolerance,
        notices,
    })
}

/// Boundary points that carry estimated atom mass above tol.
pub fn atom_weighted_points(est: &DpmEstimate, tol: f64) -> Vec<Point> {
    est.atoms
        .iter()
        .filter(|a| a.boundary && a.mass > tol)
        .map(|a| linalg::point(&a.x0))
        .collect()
}

/// Extension ρ(x) of the outer normal into Ω.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RhoField {
    /// ρ(x) = x, the outer normal on the unit sphere.
    Position,
    Constant { rho: Vec<f64> },
}

impl RhoField {
    pub fn eval(&self, x: &Point) -> Point {
        match self {
            RhoField::Position => *x,
            RhoField::Constant { rho } => linalg::point(rho),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CofEntry {
    pub g: String,
    /// ∫ g·h(·, ∇u_k) per k.
    pub values: Vec<f64>,
    pub limit: Extrapolated,
    /// ∫ g·h(·, ∇u) at the weak limit.
    pub weak_value: f64,
    pub gaps: Vec<f64>,
    pub final_gap: f64,
    /// sup|g|·|a|·sup|ρ|·max_k ∫|∇u_k|².
    pub scale: f64,
    pub decreasing: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CofReport {
    pub a: Vec<f64>,
    pub rho: RhoField,
    pub k_ladder: Vec<u64>,
    pub entries: Vec<CofEntry>,
}

/// Compares ∫ g·a·[Cof ∇u_k]ρ along the sequence with its value at the weak limit.
pub fn cofactor_weak_continuity_check(
    a: [f64; 3],
    rho: &RhoField,
    seq: &SequenceSpec,
    mesh: &DomainMesh,
    g_list: &[SpatialFn],
    k_ladder: &[u64],
) -> Result<CofReport> {
    if mesh.dim() != 3 || seq.m() != 3 || seq.n() != 3 {
        return invalid("cofactor check needs n = m = 3");
    }
    if k_ladder.is_empty() {
        return invalid("k ladder must be nonempty");
    }
    for (i, x) in mesh.vertices().iter().enumerate() {
        if mesh.on_boundary(i) {
            let d = linalg::norm(&linalg::sub(&rho.eval(x), &mesh.outer_normal(x)));
            if d > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "rho differs from the outer normal by {d:e} at boundary vertex {i}"
                )));
            }
        }
    }
    let quad = domains::quadrature(3, 3)?;
    // ∫_cell g(x) ρ(x) dx
    let moments: Vec<Vec<Point>> = g_list
        .iter()
        .map(|g| {
            par::map_indexed(mesh.cell_count(), |c| {
                let mut acc = [0.0; 3];
                for (w, b) in &quad {
                    let x = mesh.point_at(c, b);
                    let r = rho.eval(&x);
                    let gx = g.eval(&x);
                    for i in 0..3 {
                        acc[i] += w * gx * r[i];
                    }
                }
                acc.map(|v| v * mesh.volumes()[c])
            })
        })
        .collect();
    let h_of = |s: &Matrix, mom: &Point| linalg::dot(&a, &s.cofactor().apply(mom));
    let sup_rho = mesh
        .vertices()
        .iter()
        .map(|x| linalg::norm(&rho.eval(x)))
        .fold(0.0, f64::max);
    let a_norm = linalg::norm(&a);

    let mut values = vec![Vec::with_capacity(k_ladder.len()); g_list.len()];
    let mut energy_max = 0.0f64;
    for &k in k_ladder {
        let laws = seq.cell_laws(mesh, k)?;
        let energy: f64 = laws.iter().zip(mesh.volumes()).map(|(l, v)| v * l.mean(|s| s.norm_sq())).sum();
        energy_max = energy_max.max(energy);
        for (gi, mom) in moments.iter().enumerate() {
            let total: f64 = laws
                .iter()
                .zip(mom)
                .map(|(l, m)| l.mean(|s| h_of(s, m)))
                .sum();
            values[gi].push(total);
        }
    }
    let weak = seq.weak_limit(mesh)?;
    let entries = g_list
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let weak_value: f64 = weak.iter().zip(&moments[gi]).map(|(s, m)| h_of(s, m)).sum();
            let vals = std::mem::take(&mut values[gi]);
            let gaps: Vec<f64> = vals.iter().map(|x| (x - weak_value).abs()).collect();
            CofEntry {
                g: g.name(),
                limit: extrapolate(&vals),
                weak_value,
                final_gap: *gaps.last().unwrap(),
                decreasing: gaps.windows(2).all(|w| w[1] < w[0]),
                scale: g.sup_abs() * a_norm * sup_rho * energy_max,
                gaps,
                values: vals,
            }
        })
        .collect();
    Ok(CofReport {
        a: a.to_vec(),
        rho: rho.clone(),
        k_ladder: k_ladder.to_vec(),
        entries,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingReport {
    pub k_ladder: Vec<u64>,
    /// ∫_Ω v(∇u_k) per k.
    pub values: Vec<f64>,
    /// ∫_{B ∩ {ρ·y < 0}} v(∇u).
    pub oracle: f64,
    /// |value − oracle|, relative to |oracle| when it is not tiny.
    pub residuals: Vec<f64>,
    pub relative: bool,
}

/// Compares ∫_Ω v(∇u_k) with the blow-up integral of the profile over the half-ball.
/// The mesh must be a half-ball with x0 on its flat face, so the blow-up is exact.
pub fn scaling_identity_check(
    profile: &Profile,
    v: &Integrand,
    mesh: &DomainMesh,
    x0: &Point,
    k_ladder: &[u64],
    oracle_h: f64,
) -> Result<ScalingReport> {
    let n = mesh.dim();
    if (v.p() - n as f64).abs() > 1e-12 {
        return invalid("scaling identity needs p = n");
    }
    if !v.is_homogeneous() {
        return Err(Error::NotHomogeneous(v.name().to_string()));
    }
    let Some(rho) = mesh.shape().rho(n) else {
        return invalid("scaling identity needs a half-ball mesh");
    };
    if linalg::dot(&rho, &x0[..n]).abs() > 1e-12 {
        return invalid("x0 must lie on the flat face");
    }
    let oracle = profile.half_ball_integral(v, &rho, oracle_h)?;
    let seq = SequenceSpec::Concentration {
        profile: profile.clone(),
        x0: x0[..n].to_vec(),
        p: v.p(),
    };
    let mut values = Vec::with_capacity(k_ladder.len());
    for &k in k_ladder {
        let grads = seq.materialize(mesh, k)?;
        values.push(grads.iter().zip(mesh.volumes()).map(|(s, w)| w * v.eval(s)).sum());
    }
    let relative = oracle.abs() > 1e-9;
    let residuals = values
        .iter()
        .map(|x: &f64| {
            let d = (x - oracle).abs();
            if relative {
                d / oracle.abs()
            } else {
                d
            }
        })
        .collect();
    Ok(ScalingReport {
        k_ladder: k_ladder.to_vec(),
        values,
        oracle,
        residuals,
        relative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{Constraint, DisplacementField};

    #[test]
    fn zero_field_gives_zero() {
        let mesh = domains::build_ball(2, 0.25).unwrap();
        let f = Functional::new(SpatialFn::Constant { value: 1.0 }, Integrand::determinant(2).unwrap());
        let grads = vec![Matrix::zeros(2, 2); mesh.cell_count()];
        assert_eq!(evaluate_functional(&f, &mesh, &grads).unwrap(), 0.0);
    }

    #[test]
    fn laminate_energy_is_the_volume() {
        let mesh = domains::build_ball(2, 0.1).unwrap();
        let a = Matrix::outer(&[1.0, 0.0], &[1.0, 0.0]);
        let seq = SequenceSpec::Laminate {
            a,
            b: -a,
            lambda: 0.5,
            direction: vec![1.0, 0.0],
            base: None,
        };
        let f = Functional::new(SpatialFn::Constant { value: 1.0 }, Integrand::power_norm(2, 2, 2.0, 1.0).unwrap());
        let laws = seq.cell_laws(&mesh, 8).unwrap();
        let val = evaluate_on_laws(&f, &mesh, &laws).unwrap();
        assert!((val - mesh.total_volume()).abs() / mesh.total_volume() < 1e-3);
    }

    #[test]
    fn determinant_of_zero_trace_field_integrates_to_zero() {
        let mesh = domains::build_ball(2, 0.1).unwrap();
        let u = DisplacementField::from_fn(&mesh, 2, Constraint::Dirichlet, |x| {
            vec![(3.0 * x[1]).sin() * (1.0 - x[0] * x[0]), x[0] * x[1] + x[0].powi(3)]
        });
        let grads = domains::cell_gradients(&mesh, &u);
        let f = Functional::new(SpatialFn::Constant { value: 1.0 }, Integrand::determinant(2).unwrap());
        let val = evaluate_functional(&f, &mesh, &grads).unwrap();
        let energy: f64 = grads.iter().zip(mesh.volumes()).map(|(s, v)| v * s.norm_sq()).sum();
        assert!(val.abs() <= 1e-12 * energy.max(1.0), "{val}");
    }

    #[test]
    fn functional_rejects_vanishing_boundary_weight() {
        let mesh = domains::build_ball(2, 0.25).unwrap();
        let f = Functional::new(SpatialFn::Coordinate { index: 0 }, Integrand::power_norm(2, 2, 2.0, 1.0).unwrap());
        assert!(f.validate_on(&mesh).is_err());
    }

    #[test]
    fn cofactor_of_laminate_is_weakly_continuous() {
        let mesh = domains::build_ball(3, 0.25).unwrap();
        let e = [0.0, 0.6, 0.8];
        let a = Matrix::outer(&[1.0, 0.5, 0.0], &e);
        let base = Matrix::from_row_major(3, 3, &[0.3, 0.1, 0.0, 0.0, 0.2, 0.4, 0.1, 0.0, 0.5]).unwrap();
        let seq = SequenceSpec::Laminate {
            a,
            b: -a,
            lambda: 0.4,
            direction: e.to_vec(),
            base: Some(base),
        };
        let rep = cofactor_weak_continuity_check(
            [1.0, 0.0, 0.0],
            &RhoField::Position,
            &seq,
            &mesh,
            &[SpatialFn::Constant { value: 1.0 }],
            &[64, 256],
        )
        .unwrap();
        let entry = &rep.entries[0];
        assert!(entry.final_gap <= 1e-3 * entry.scale, "{entry:?}");
    }

    #[test]
    fn scaling_identity_at_k_one() {
        let mesh = domains::build_half_ball(&[0.0, -1.0], 1.0 / 32.0).unwrap();
        let profile = Profile::radial_bump(&[1.0, 1.0], 2).unwrap();
        let v = Integrand::power_norm(2, 2, 2.0, 1.0).unwrap();
        let rep = scaling_identity_check(&profile, &v, &mesh, &[0.0; 3], &[1], 1.0 / 32.0).unwrap();
        let oracle = std::f64::consts::PI * 2.0 / 3.0;
        assert!((rep.oracle - oracle).abs() / oracle < 0.01);
        assert!(rep.residuals[0] < 0.01);
    }
}

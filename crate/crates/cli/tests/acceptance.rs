//! Acceptance criteria C1–C9, one PASS/FAIL line each.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use qcb_core::domains::{self, DisplacementField, DomainMesh, Label};
use qcb_core::linalg::{self, Point};
use qcb_core::measures::{
    self, ConditionTolerances, DpmEstimate, RelaxSettings, SpatialFn, TailVerdict, TestDictionary,
};
use qcb_core::relaxation::{self, Classification, SolverOptions};
use qcb_core::semicontinuity::{self, Functional, ProbeProfile, RhoField, WlscOptions, WlscOutcome};
use qcb_core::sequences::{Profile, SequenceSpec};
use qcb_core::{Integrand, Matrix};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

fn main() {
    let criteria: Vec<(&str, fn(&mut Shared) -> Outcome)> = vec![
        ("C1 convexification oracle", c1),
        ("C2 cofactor boundary quasiconvexity", c2),
        ("C3 determinant boundary failure", c3),
        ("C4 scaling identity", c4),
        ("C5 necessary conditions", c5),
        ("C6 cofactor weak continuity", c6),
        ("C7 equiintegrability dichotomy", c7),
        ("C8 DPM validator", c8),
        ("C9 determinism", c9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match f(&mut shared) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "{} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

/// Estimates produced by C5 and C7 and validated again by C8.
#[derive(Default)]
struct Shared {
    estimates: Vec<(&'static str, DpmEstimate)>,
}

fn flag(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

/// Lower convex hull of (s, v(s)) on the grid, evaluated at s0.
fn convex_hull_oracle(v: impl Fn(f64) -> f64, s0: f64) -> f64 {
    let pts: Vec<(f64, f64)> = (0..=6000).map(|i| -3.0 + i as f64 * 1e-3).map(|s| (s, v(s))).collect();
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let i = hull.iter().position(|q| q.0 >= s0).unwrap();
    if i == 0 {
        return hull[0].1;
    }
    let (a, b) = (hull[i - 1], hull[i]);
    a.1 + (b.1 - a.1) * (s0 - a.0) / (b.0 - a.0)
}

fn c1(_: &mut Shared) -> Outcome {
    let v = Integrand::quartic_well(1, 1)?;
    let mesh = domains::build_ball(1, 0.05)?;
    let opts = SolverOptions {
        multistart: 16,
        ..SolverOptions::default()
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for s0 in [0.0, 0.5, 2.0] {
        let r = relaxation::quasiconvex_envelope(&v, &Matrix::from_row_major(1, 1, &[s0]).unwrap(), &mesh, &opts)?;
        let oracle = convex_hull_oracle(|s| (s * s - 1.0).powi(2), s0);
        let err = (r.value - oracle).abs();
        pass &= err <= 5e-3;
        parts.push(format!("s0={s0}: Qv={:.5} hull={:.5} |err|={err:.1e}", r.value, oracle));
    }
    Ok((pass, format!("{} (tol 5e-3)", parts.join("; "))))
}

fn c2(_: &mut Shared) -> Outcome {
    let v = Integrand::cofactor_contraction([1.0, 0.0, 0.0], [0.0, 0.0, 1.0])?;
    let rho = [0.0, 0.0, 1.0];
    let mesh = domains::build_half_ball(&rho, 0.15)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in [0u64, 1, 2] {
        let opts = SolverOptions {
            multistart: 32,
            seed,
            ..SolverOptions::default()
        };
        let r = relaxation::boundary_quasiconvexification(&v, &rho, &mesh, &opts)?;
        let floor = -1e-6 * (r.eps_cls / 1e-6);
        let lowest = r.runs.iter().map(|x| x.energy).fold(f64::INFINITY, f64::min);
        let ok = r.classification == Classification::Zero && lowest >= floor;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: {:?}, {} runs, lowest {lowest:.2e} >= {floor:.1e} {}",
            r.classification,
            r.runs.len(),
            flag(ok)
        ));
    }
    Ok((pass, format!("{} cells; {}", mesh.cell_count(), parts.join("; "))))
}

/// ∫_Ω det ∇u as the boundary flux ∮ u1 ∂_τ u2, exact for P1 fields in 2D.
fn det_boundary_flux(mesh: &DomainMesh, u: &DisplacementField) -> f64 {
    let x = mesh.vertices();
    let val = |v: usize, i: usize| u.values[v * 2 + i];
    let mut total = 0.0;
    for face in mesh.faces() {
        let (mut a, mut b) = (face.vertices[0], face.vertices[1]);
        let mid: Point = [(x[a][0] + x[b][0]) / 2.0, (x[a][1] + x[b][1]) / 2.0, 0.0];
        let nu = mesh.outer_normal(&mid);
        let tau = [-nu[1], nu[0]];
        if (x[b][0] - x[a][0]) * tau[0] + (x[b][1] - x[a][1]) * tau[1] < 0.0 {
            std::mem::swap(&mut a, &mut b);
        }
        total += 0.5 * (val(a, 0) + val(b, 0)) * (val(b, 1) - val(a, 1));
    }
    total
}

fn c3(_: &mut Shared) -> Outcome {
    let v = Integrand::determinant(2)?;
    let rho = [0.0, 1.0];
    let half = domains::build_half_ball(&rho, 0.1)?;
    let r = relaxation::boundary_quasiconvexification(&v, &rho, &half, &SolverOptions::default())?;
    let Some(ev) = &r.evidence else {
        return Ok((false, format!("classification {:?} without a witness", r.classification)));
    };
    let worst_scaling = ev.scaling.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    let flux = det_boundary_flux(&half, &ev.witness) / half.total_volume();
    let replay_err = (flux - ev.energy).abs() / ev.energy.abs();
    let class_ok = r.classification == Classification::MinusInfinity
        && ev.energy <= -1e-3
        && worst_scaling <= 1e-8
        && replay_err <= 1e-9;
    let labels = half.faces().iter().filter(|f| f.label == Label::FreeGamma).count();

    let disk = domains::build_ball(2, 1.0 / 32.0)?;
    let s = 0.5f64.sqrt();
    let points = [linalg::point(&[0.0, -1.0]), linalg::point(&[s, s])];
    let f = Functional::new(SpatialFn::Constant { value: 1.0 }, v.clone());
    let opts = WlscOptions {
        k_ladder: vec![1, 2, 4, 8, 16, 32],
        ..WlscOptions::default()
    };
    let verdict = semicontinuity::wlsc_probe(&f, &disk, &points, &[ProbeProfile::RelaxationWitness], &opts)?;
    let wlsc_ok = verdict.verdict == WlscOutcome::WlscViolated;
    let gap = verdict.witness.map(|i| &verdict.liminf_gap[i]);
    Ok((
        class_ok && wlsc_ok,
        format!(
            "{:?}, witness energy {:.4} (<= -1e-3), scaling rel err {worst_scaling:.1e} (<= 1e-8), boundary-flux replay {flux:.4} over {labels} free faces (rel err {replay_err:.1e}); wlsc {:?}, liminf gap {:.4} vs blow-up oracle {:.4}",
            r.classification,
            ev.energy,
            verdict.verdict,
            gap.map_or(f64::NAN, |g| g.liminf),
            gap.map_or(f64::NAN, |g| g.oracle),
        ),
    ))
}

fn c4(_: &mut Shared) -> Outcome {
    let mesh = domains::build_half_ball(&[0.0, 1.0], 1.0 / 96.0)?.graded(&[0.0; 3], 0.15)?;
    let b = [1.0, 0.5];
    let profile = Profile::radial_bump(&b, 2)?;
    let v = Integrand::power_norm(2, 2, 2.0, 1.0)?;
    let report = semicontinuity::scaling_identity_check(&profile, &v, &mesh, &[0.0; 3], &[64], 0.05)?;
    let closed_form = std::f64::consts::PI * (b[0] * b[0] + b[1] * b[1]) / 3.0;
    let res = report.residuals[0];
    Ok((
        res <= 0.02,
        format!(
            "k=64: integral {:.5}, half-ball quadrature {:.5} (closed form {closed_form:.5}), relative residual {res:.2e} (<= 2e-2)",
            report.values[0], report.oracle
        ),
    ))
}

fn laminate() -> SequenceSpec {
    let a = Matrix::outer(&[1.0, 0.0], &[0.0, 1.0]);
    SequenceSpec::Laminate {
        a,
        b: -a,
        lambda: 0.5,
        direction: vec![0.0, 1.0],
        base: None,
    }
}

fn affine_bump_3d() -> Result<Profile, qcb_core::Error> {
    let m = Matrix::from_row_major(3, 3, &[0.2, 1.0, -0.4, 0.7, -0.3, 0.5, -0.6, 0.1, 0.9]).unwrap();
    Profile::affine_bump(m, &[0.3, -0.2, 0.5], 2)
}

fn boundary_half_ball() -> Result<DomainMesh, qcb_core::Error> {
    domains::build_half_ball(&[0.0, 0.0, 1.0], 1.0 / 24.0)?.graded(&[0.0; 3], 0.3)
}

fn c5(shared: &mut Shared) -> Outcome {
    let a = Matrix::outer(&[1.0, 0.0], &[0.0, 1.0]);
    let sq = Integrand::power_norm(2, 2, 2.0, 1.0)?;
    let det = Integrand::determinant(2)?;
    let tests = vec![
        sq.clone(),
        Integrand::double_well(a.scale(2.0), a.scale(-2.0))?,
        det.clone(),
        det.negated(),
        Integrand::combination(vec![(1.0, sq), (1.0, det)])?,
    ];
    let dict = TestDictionary::new(2, 2, 2.0, vec![], tests)?;
    let mesh = domains::build_ball(2, 0.1)?;
    let ladder: Vec<u64> = (10..=15).map(|e| 1u64 << e).collect();
    let est = measures::estimate_pairings(&laminate(), &mesh, &dict, &ladder)?;
    let nc = measures::check_necessary_conditions(&est, &RelaxSettings::default(), &ConditionTolerances::default())?;
    let bary = nc.barycenter_residual.iter().cloned().fold(0.0, f64::max);
    let jensen = nc.jensen_margin.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let lam_ok = nc.passed && bary <= 1e-3 && jensen >= -1e-3;
    shared.estimates.push(("laminate", est));

    let mesh = boundary_half_ball()?;
    let seq = SequenceSpec::Concentration {
        profile: affine_bump_3d()?,
        x0: vec![0.0; 3],
        p: 2.0,
    };
    let h = Integrand::cofactor_contraction([1.0, 0.0, 0.0], [0.0, 0.0, 1.0])?;
    let dict = TestDictionary::new(3, 3, 2.0, vec![], vec![h.clone(), h.negated()])?;
    let ladder = seq.resolvable_ladder(&mesh, 1, 8);
    let est = measures::estimate_pairings(&seq, &mesh, &dict, &ladder)?;
    let relax = RelaxSettings {
        h: 0.3,
        solver: SolverOptions {
            multistart: 4,
            ..SolverOptions::default()
        },
    };
    let nc = measures::check_necessary_conditions(&est, &relax, &ConditionTolerances::default())?;
    let user = dict.user_start();
    let margins: Vec<f64> = nc
        .boundary_nonneg_margin
        .iter()
        .flat_map(|row| row[user..].iter().flatten().cloned())
        .collect();
    let bd_ok = nc.passed && margins.len() == 2 && margins.iter().all(|m| *m >= -1e-6);
    let worst = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    let atoms = est.atoms.len();
    shared.estimates.push(("boundary concentration", est));
    Ok((
        lam_ok && bd_ok,
        format!(
            "laminate: barycenter {bary:.1e} (<= 1e-3), min Jensen margin {jensen:.1e} (>= -1e-3) {}; boundary n=3, ladder {ladder:?}, {atoms} atom, {} cofactor margins, min {worst:.1e} (>= -1e-6) {}",
            flag(lam_ok),
            margins.len(),
            flag(bd_ok)
        ),
    ))
}

fn c6(_: &mut Shared) -> Outcome {
    let mesh = domains::build_ball(3, 1.0 / 18.0)?.graded(&[0.0, 0.0, 1.0], 0.18)?;
    let seq = SequenceSpec::Concentration {
        profile: affine_bump_3d()?,
        x0: vec![0.0, 0.0, 1.0],
        p: 2.0,
    };
    let g_list = [
        SpatialFn::Constant { value: 1.0 },
        SpatialFn::CosineCap {
            center: vec![0.0, 0.0, 1.0],
            radius: 0.2,
        },
    ];
    let report = semicontinuity::cofactor_weak_continuity_check(
        [1.0, 0.0, 0.0],
        &RhoField::Position,
        &seq,
        &mesh,
        &g_list,
        &[4, 8, 16, 32],
    )?;
    let mut pass = true;
    let mut parts = Vec::new();
    for e in &report.entries {
        let decreasing = e.gaps.windows(2).all(|w| w[1] < w[0]);
        let ok = decreasing && e.final_gap <= 1e-2 * e.scale;
        pass &= ok;
        let rel: Vec<String> = e.gaps.iter().map(|g| format!("{:.1e}", g / e.scale)).collect();
        parts.push(format!("g={}: gap/scale [{}] {}", e.g, rel.join(", "), flag(ok)));
    }
    Ok((pass, format!("{} (decreasing, final <= 1e-2)", parts.join("; "))))
}

fn c7(shared: &mut Shared) -> Outcome {
    let sq = Integrand::power_norm(2, 2, 2.0, 1.0)?;
    let b = [1.0, 0.5];
    let energy = std::f64::consts::PI * (b[0] * b[0] + b[1] * b[1]) / 3.0;
    let mesh = domains::build_half_ball(&[0.0, 1.0], 1.0 / 96.0)?.graded(&[0.0; 3], 0.15)?;
    let conc = SequenceSpec::Concentration {
        profile: Profile::radial_bump(&b, 2)?,
        x0: vec![0.0, 0.0],
        p: 2.0,
    };
    let ladder = [4, 16, 64];
    let tails = measures::equiintegrability_diagnostic(&conc, &mesh, &sq, &ladder, &[1.0, 4.0, 16.0], 1e-3)?;
    let last: Vec<f64> = tails.tails.iter().map(|row| *row.last().unwrap()).collect();
    let conc_ok = tails.verdict == TailVerdict::Concentrating && last.iter().all(|t| *t >= 0.9 * energy);
    let dict = TestDictionary::new(2, 2, 2.0, vec![], vec![])?;
    shared
        .estimates
        .push(("half-disk concentration", measures::estimate_pairings(&conc, &mesh, &dict, &ladder)?));

    let disk = domains::build_ball(2, 0.1)?;
    let lam = measures::equiintegrability_diagnostic(&laminate(), &disk, &sq, &[256, 1024, 4096], &[0.5, 2.0, 8.0], 1e-3)?;
    let above: Vec<f64> = lam
        .thresholds
        .iter()
        .zip(&lam.sup_tail)
        .filter(|(k, _)| **k > lam.max_value)
        .map(|(_, t)| *t)
        .collect();
    let lam_ok = lam.verdict == TailVerdict::Equiintegrable && !above.is_empty() && above.iter().all(|t| *t == 0.0);

    let cof_mesh = boundary_half_ball()?;
    let rank_one = SequenceSpec::Concentration {
        profile: Profile::radial_bump(&[1.0, -0.5, 0.25], 3)?,
        x0: vec![0.0; 3],
        p: 2.0,
    };
    let h = Integrand::cofactor_contraction([1.0, 0.0, 0.0], [0.0, 0.0, 1.0])?;
    let cof_ladder = rank_one.resolvable_ladder(&cof_mesh, 1, 8);
    let cof = measures::equiintegrability_diagnostic(&rank_one, &cof_mesh, &h, &cof_ladder, &[0.5, 2.0], 1e-3)?;
    let cof_ok = cof.verdict == TailVerdict::Equiintegrable;
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    Ok((
        conc_ok && lam_ok && cof_ok,
        format!(
            "concentration: T(K={{1,4,16}}, k=64) = [{}] vs 0.9*{energy:.4}, {:?} {}; laminate: max |grad|^2 = {}, tails above it [{}], {:?} {}; cofactor rank-one: sup tail {:.1e}, {:?} {}",
            fmt(&last),
            tails.verdict,
            flag(conc_ok),
            lam.max_value,
            fmt(&above),
            lam.verdict,
            flag(lam_ok),
            cof.sup_tail.last().unwrap(),
            cof.verdict,
            flag(cof_ok)
        ),
    ))
}

fn c8(shared: &mut Shared) -> Outcome {
    if shared.estimates.is_empty() {
        return Ok((false, "needs the estimates of C5 and C7 (run them first)".into()));
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, est) in &shared.estimates {
        let report = measures::validate_dpm(est, 1e-3);
        pass &= report.passed;
        let worst: Vec<String> = report.checks.iter().map(|c| format!("{} {:.0e}", c.name, c.worst)).collect();
        parts.push(format!("{name}: {} ({})", flag(report.passed), worst.join(", ")));
    }
    let Some((_, est)) = shared.estimates.iter().find(|(_, e)| !e.atoms.is_empty()) else {
        return Ok((false, "no estimate with an atom to corrupt".into()));
    };
    let mut bad = est.clone();
    bad.atoms[0].mass = -0.25;
    let report = measures::validate_dpm(&bad, 1e-3);
    let pos = &report.checks[0];
    let caught = !report.passed
        && pos.name == "positivity"
        && !pos.passed
        && pos.violations.first().is_some_and(|v| v.location.starts_with("atom 0") && (v.value - 0.25).abs() < 1e-12);
    let witness = pos.violations.first().map(|v| format!("{} ({})", v.location, v.value));
    Ok((
        pass && caught,
        format!(
            "{}; corrupted atom mass -0.25 rejected: {} witness {}",
            parts.join("; "),
            flag(caught),
            witness.unwrap_or_default()
        ),
    ))
}

fn experiments_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments")
}

fn c9(_: &mut Shared) -> Outcome {
    let mut manifests: Vec<PathBuf> = Vec::new();
    for dir in std::fs::read_dir(experiments_dir())? {
        for f in std::fs::read_dir(dir?.path())? {
            let p = f?.path();
            if p.to_string_lossy().ends_with(".manifest.json") {
                manifests.push(p);
            }
        }
    }
    manifests.sort();
    let scratch = std::env::temp_dir().join(format!("qcb-acceptance-{}", std::process::id()));
    let mut pass = !manifests.is_empty();
    let mut csvs = 0;
    for m in &manifests {
        let mut runs = Vec::new();
        for round in 0..2 {
            let out = scratch.join(format!("{round}"));
            let status = Command::new(env!("CARGO_BIN_EXE_qcb-lab"))
                .arg("repro")
                .arg(m)
                .arg("--out-dir")
                .arg(&out)
                .output()?;
            pass &= status.status.success();
            runs.push(out);
        }
        for f in std::fs::read_dir(&runs[0])? {
            let p = f?.path();
            if p.extension().is_some_and(|e| e == "csv") {
                let other = runs[1].join(p.file_name().unwrap());
                pass &= std::fs::read(&p)? == std::fs::read(&other)?;
                csvs += 1;
            }
        }
        for r in &runs {
            std::fs::remove_dir_all(r)?;
        }
    }
    let _ = std::fs::remove_dir_all(&scratch);
    Ok((
        pass,
        format!("{} shipped manifests hash-equal to their records, {csvs} CSVs byte-identical across two runs", manifests.len()),
    ))
}

use anyhow::{bail, Result};
use clap::Args;
use qcb_core::linalg;
use qcb_core::measures::{RelaxSettings, SpatialFn};
use qcb_core::relaxation::SolverOptions;
use qcb_core::semicontinuity::{self, Functional, ProbeProfile, WlscOptions};
use qcb_core::sequences::{k_ladder, Profile};
use qcb_core::Integrand;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Command, Outcome};
use crate::inputs::Ctx;
use crate::output::{num, sibling, write_csv, write_json};

/// Boundary concentration probe of weak lower semicontinuity of I(u) = ∫ g·v(∇u).
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct WlscArgs {
    /// JSON with `g` (spatial weight) and `v` (integrand).
    #[arg(long)]
    pub functional: String,
    /// JSON array of boundary points.
    #[arg(long)]
    pub points: String,
    /// JSON array of profiles; the string "relaxation-witness" replays the boundary witness.
    #[arg(long)]
    pub profiles: String,
    #[arg(long, default_value = "ball:h=0.03125")]
    pub mesh: String,
    #[arg(long, default_value_t = 1)]
    pub kmin: u64,
    #[arg(long, default_value_t = 32)]
    pub kmax: u64,
    /// Core fraction of the grading toward each point; 0 keeps the mesh as given.
    #[arg(long, default_value_t = 0.15)]
    pub grading: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.05)]
    pub oracle_h: f64,
    #[arg(long, default_value_t = 0.2)]
    pub relax_h: f64,
    #[arg(long, default_value_t = 8)]
    pub multistart: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "verdict.json")]
    pub out: String,
}

#[derive(Deserialize)]
struct FunctionalFile {
    #[serde(default = "unit_weight")]
    g: SpatialFn,
    v: Value,
}

fn unit_weight() -> SpatialFn {
    SpatialFn::Constant { value: 1.0 }
}

fn probe_profile(v: &Value) -> Result<ProbeProfile> {
    match v.as_str() {
        Some("relaxation-witness") => Ok(ProbeProfile::RelaxationWitness),
        Some(other) => bail!("unknown profile `{other}`"),
        None => {
            let p: Profile = serde_json::from_value(v.clone())?;
            p.validate()?;
            Ok(ProbeProfile::Given(p))
        }
    }
}

impl Command for WlscArgs {
    const NAME: &'static str = "wlsc";

    fn out(&self) -> &str {
        &self.out
    }

    fn set_out(&mut self, out: String) {
        self.out = out;
    }

    fn input_slots(&mut self) -> Vec<&mut String> {
        vec![&mut self.functional, &mut self.points, &mut self.profiles, &mut self.mesh]
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }

    fn run(&self, ctx: &Ctx) -> Result<Outcome> {
        let file: FunctionalFile = serde_json::from_value(ctx.value(&self.functional)?)?;
        let f = Functional::new(file.g, Integrand::from_json(&file.v)?);
        let mesh = ctx.mesh(&self.mesh, f.v.n())?;
        let points: Vec<Vec<f64>> = serde_json::from_value(ctx.value(&self.points)?)?;
        if points.iter().any(|x| x.len() != mesh.dim()) {
            bail!("points must have {} coordinates", mesh.dim());
        }
        let points: Vec<_> = points.iter().map(|x| linalg::point(x)).collect();
        let profiles = match ctx.value(&self.profiles)? {
            Value::Array(items) => items.iter().map(probe_profile).collect::<Result<Vec<_>>>()?,
            one => vec![probe_profile(&one)?],
        };
        let opts = WlscOptions {
            relax: RelaxSettings {
                h: self.relax_h,
                solver: SolverOptions {
                    multistart: self.multistart,
                    seed: self.seed,
                    ..SolverOptions::default()
                },
            },
            k_ladder: k_ladder(self.kmin, self.kmax),
            grading: (self.grading > 0.0).then_some(self.grading),
            tolerance: self.tol,
            oracle_h: self.oracle_h,
        };
        let verdict = semicontinuity::wlsc_probe(&f, &mesh, &points, &profiles, &opts)?;
        let coords = |x: &[f64]| x.iter().map(|c| num(*c)).collect::<Vec<_>>().join(" ");

        let mut rows = Vec::new();
        for (i, g) in verdict.liminf_gap.iter().enumerate() {
            for (k, gap) in g.k_ladder.iter().zip(&g.gaps) {
                rows.push(vec![i.to_string(), coords(&g.x0), g.profile.clone(), k.to_string(), num(*gap)]);
            }
        }
        let out = ctx.path(&self.out);
        let gaps = sibling(&out, "gaps", "csv");
        write_csv(&gaps, &["sequence", "x0", "profile", "k", "gap"], &rows)?;
        let rows: Vec<Vec<String>> = verdict
            .boundary_scan
            .iter()
            .map(|s| {
                let class = serde_json::to_value(s.classification).ok();
                vec![
                    coords(&s.x0),
                    coords(&s.rho),
                    class.and_then(|c| c.as_str().map(String::from)).unwrap_or_default(),
                    num(s.value),
                ]
            })
            .collect();
        let scan = sibling(&out, "scan", "csv");
        write_csv(&scan, &["x0", "rho", "classification", "value"], &rows)?;
        write_json(&out, &verdict)?;
        Ok(Outcome::done(vec![out, gaps, scan]))
    }
}

use std::path::Path;

use anyhow::Result;
use clap::Args;
use qcb_core::relaxation::{self, RelaxationResult, SolverOptions};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Command, Outcome};
use crate::inputs::{self, Ctx};
use crate::output::{num, sibling, write_csv, write_json};

/// Envelope Qv(s0) on a ball, or the boundary envelope at 0 on a half-ball when --rho is given.
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct RelaxArgs {
    /// Integrand tag, inline JSON or JSON file.
    #[arg(long)]
    pub integrand: String,
    /// `zero`, nested rows, or a matrix JSON file.
    #[arg(long, default_value = "zero")]
    pub s0: String,
    /// Mesh JSON file or spec such as `ball:h=0.2`.
    #[arg(long)]
    pub mesh: Option<String>,
    /// Unit normal; switches to the boundary problem.
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long, default_value_t = 16)]
    pub multistart: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value = "result.json")]
    pub out: String,
}

#[derive(Serialize)]
struct RelaxFile<'a> {
    problem: &'static str,
    integrand: Value,
    s0: Value,
    rho: Option<Vec<f64>>,
    mesh_h: f64,
    cells: usize,
    note: String,
    #[serde(flatten)]
    result: &'a RelaxationResult,
}

impl Command for RelaxArgs {
    const NAME: &'static str = "relax";

    fn resolve(&mut self, _ctx: &Ctx) -> Result<()> {
        if self.mesh.is_none() {
            self.mesh = Some(match &self.rho {
                Some(rho) => format!("half-ball:h=0.2,rho=[{rho}]"),
                None => "ball:h=0.2".into(),
            });
        }
        Ok(())
    }

    fn out(&self) -> &str {
        &self.out
    }

    fn set_out(&mut self, out: String) {
        self.out = out;
    }

    fn input_slots(&mut self) -> Vec<&mut String> {
        let mut slots = vec![&mut self.integrand, &mut self.s0];
        slots.extend(self.mesh.as_mut());
        slots
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }

    fn run(&self, ctx: &Ctx) -> Result<Outcome> {
        let v = ctx.integrand(&self.integrand)?;
        let mesh = ctx.mesh(self.mesh.as_deref().unwrap_or("ball:h=0.2"), v.n())?;
        let opts = SolverOptions {
            multistart: self.multistart,
            max_iter: self.max_iter,
            seed: self.seed,
            ..SolverOptions::default()
        };
        let s0 = ctx.matrix(&self.s0, v.m(), v.n())?;
        let rho = self.rho.as_deref().map(inputs::vector).transpose()?;
        let result = match &rho {
            Some(rho) => relaxation::boundary_quasiconvexification(&v, rho, &mesh, &opts)?,
            None => relaxation::quasiconvex_envelope(&v, &s0, &mesh, &opts)?,
        };
        let out = ctx.path(&self.out);
        let file = RelaxFile {
            problem: if rho.is_some() { "boundary" } else { "envelope" },
            integrand: v.to_json(),
            s0: serde_json::to_value(s0)?,
            rho,
            mesh_h: mesh.h(),
            cells: mesh.cell_count(),
            note: format!("upper bound at resolution h = {}", mesh.h()),
            result: &result,
        };
        write_json(&out, &file)?;
        let outputs = vec![out.clone(), trace_csv(&out, &result.trace)?, runs_csv(&out, &result)?];
        Ok(Outcome {
            outputs,
            nonconverged: !result.converged,
        })
    }
}

pub fn trace_csv(out: &Path, trace: &[f64]) -> Result<std::path::PathBuf> {
    let path = sibling(out, "trace", "csv");
    let rows: Vec<Vec<String>> = trace.iter().enumerate().map(|(i, e)| vec![i.to_string(), num(*e)]).collect();
    write_csv(&path, &["iteration", "energy"], &rows)?;
    Ok(path)
}

pub fn runs_csv(out: &Path, result: &RelaxationResult) -> Result<std::path::PathBuf> {
    let path = sibling(out, "runs", "csv");
    let rows: Vec<Vec<String>> = result
        .runs
        .iter()
        .map(|r| vec![r.start.clone(), num(r.energy), r.iterations.to_string(), r.converged.to_string()])
        .collect();
    write_csv(&path, &["start", "energy", "iterations", "converged"], &rows)?;
    Ok(path)
}

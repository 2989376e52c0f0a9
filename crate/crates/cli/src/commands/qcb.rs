use anyhow::Result;
use clap::Args;
use qcb_core::relaxation::{self, Classification, RelaxationResult, SolverOptions, Verdict};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::relax::{runs_csv, trace_csv};
use super::{Command, Outcome};
use crate::inputs::{self, Ctx};
use crate::output::write_json;

/// Boundary classification of the recession at 0 and the quasiconvexity-at-the-boundary test at s0.
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct QcbArgs {
    #[arg(long)]
    pub integrand: String,
    /// Unit normal, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub rho: String,
    #[arg(long, default_value = "zero")]
    pub s0: String,
    /// Half-ball mesh size, used when --mesh is absent.
    #[arg(long, default_value_t = 0.2)]
    pub h: f64,
    #[arg(long)]
    pub mesh: Option<String>,
    /// Random admissible fields tried before the descent minimizers.
    #[arg(long, default_value_t = 32)]
    pub trials: usize,
    #[arg(long, default_value_t = 16)]
    pub multistart: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value = "qcb.json")]
    pub out: String,
}

#[derive(Serialize)]
struct QcbFile<'a> {
    integrand: Value,
    rho: Vec<f64>,
    s0: Value,
    /// Whether the boundary envelope was computed for the recession of v.
    recession_used: bool,
    classification: Classification,
    boundary: &'a RelaxationResult,
    verdict: Verdict,
}

impl Command for QcbArgs {
    const NAME: &'static str = "qcb";

    fn resolve(&mut self, _ctx: &Ctx) -> Result<()> {
        if self.mesh.is_none() {
            self.mesh = Some(format!("half-ball:h={},rho=[{}]", self.h, self.rho));
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
        let rho = inputs::vector(&self.rho)?;
        let spec = self.mesh.clone().unwrap_or_else(|| format!("half-ball:h={},rho=[{}]", self.h, self.rho));
        let mesh = ctx.mesh(&spec, v.n())?;
        let s0 = ctx.matrix(&self.s0, v.m(), v.n())?;
        let opts = SolverOptions {
            multistart: self.multistart,
            max_iter: self.max_iter,
            seed: self.seed,
            ..SolverOptions::default()
        };
        let recession_used = !v.is_homogeneous();
        let vh = if recession_used { v.recession_integrand()? } else { v.clone() };
        let boundary = relaxation::boundary_quasiconvexification(&vh, &rho, &mesh, &opts)?;
        let verdict = relaxation::qcb_test(&v, &s0, &rho, &mesh, self.trials, &opts)?;
        let out = ctx.path(&self.out);
        write_json(
            &out,
            &QcbFile {
                integrand: v.to_json(),
                rho,
                s0: serde_json::to_value(s0)?,
                recession_used,
                classification: boundary.classification,
                boundary: &boundary,
                verdict,
            },
        )?;
        let outputs = vec![out.clone(), trace_csv(&out, &boundary.trace)?, runs_csv(&out, &boundary)?];
        Ok(Outcome {
            outputs,
            nonconverged: boundary.classification == Classification::Inconclusive && !boundary.converged,
        })
    }
}

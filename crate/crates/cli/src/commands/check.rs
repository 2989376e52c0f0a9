use anyhow::Result;
use clap::{Args, ValueEnum};
use qcb_core::measures::{
    self, ConditionCheck, ConditionTolerances, DpmEstimate, DpmReport, NecessaryConditionsReport, RelaxSettings,
};
use qcb_core::relaxation::SolverOptions;
use serde::{Deserialize, Serialize};

use super::{Command, Outcome};
use crate::inputs::Ctx;
use crate::output::{num, sibling, write_csv, write_json};

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditions {
    All,
    /// Positivity, density, normalization and mass bookkeeping.
    Characterization,
    /// Barycenter, Jensen and the atom conditions.
    Necessary,
}

/// Validates an estimated measure.
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct CheckArgs {
    #[arg(long)]
    pub dpm: String,
    #[arg(long, value_enum, default_value_t = Conditions::All)]
    pub conditions: Conditions,
    /// Tolerance of the characterization, barycenter and Jensen checks.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub atom_tol: f64,
    /// Mesh size for the envelope computations at atoms.
    #[arg(long, default_value_t = 0.2)]
    pub relax_h: f64,
    #[arg(long, default_value_t = 8)]
    pub multistart: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "report.json")]
    pub out: String,
}

#[derive(Serialize)]
struct ReportFile {
    passed: bool,
    characterization: Option<DpmReport>,
    necessary: Option<NecessaryConditionsReport>,
}

impl Command for CheckArgs {
    const NAME: &'static str = "check";

    fn out(&self) -> &str {
        &self.out
    }

    fn set_out(&mut self, out: String) {
        self.out = out;
    }

    fn input_slots(&mut self) -> Vec<&mut String> {
        vec![&mut self.dpm]
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }

    fn run(&self, ctx: &Ctx) -> Result<Outcome> {
        let est: DpmEstimate = serde_json::from_value(ctx.read_json(&self.dpm)?)?;
        let want = |c: Conditions| self.conditions == Conditions::All || self.conditions == c;
        let characterization = want(Conditions::Characterization).then(|| measures::validate_dpm(&est, self.tol));
        let necessary = if want(Conditions::Necessary) {
            let relax = RelaxSettings {
                h: self.relax_h,
                solver: SolverOptions {
                    multistart: self.multistart,
                    seed: self.seed,
                    ..SolverOptions::default()
                },
            };
            let tol = ConditionTolerances {
                barycenter: self.tol,
                jensen: self.tol,
                atoms: self.atom_tol,
            };
            Some(measures::check_necessary_conditions(&est, &relax, &tol)?)
        } else {
            None
        };
        let passed = characterization.as_ref().map_or(true, |r| r.passed) && necessary.as_ref().map_or(true, |r| r.passed);
        let mut checks: Vec<(&str, &ConditionCheck)> = Vec::new();
        if let Some(r) = &characterization {
            checks.extend(r.checks.iter().map(|c| ("characterization", c)));
        }
        if let Some(r) = &necessary {
            checks.extend(r.checks.iter().map(|c| ("necessary", c)));
        }
        let summary: Vec<Vec<String>> = checks
            .iter()
            .map(|(group, c)| {
                vec![
                    group.to_string(),
                    c.name.clone(),
                    c.passed.to_string(),
                    num(c.tolerance),
                    num(c.worst),
                    c.violations.len().to_string(),
                ]
            })
            .collect();
        let violations: Vec<Vec<String>> = checks
            .iter()
            .flat_map(|(group, c)| {
                c.violations
                    .iter()
                    .map(move |w| vec![group.to_string(), c.name.clone(), w.location.clone(), num(w.value)])
            })
            .collect();

        let out = ctx.path(&self.out);
        write_json(
            &out,
            &ReportFile {
                passed,
                characterization,
                necessary,
            },
        )?;
        let checks_csv = sibling(&out, "checks", "csv");
        write_csv(&checks_csv, &["group", "check", "passed", "tolerance", "worst", "violations"], &summary)?;
        let violations_csv = sibling(&out, "violations", "csv");
        write_csv(&violations_csv, &["group", "check", "location", "value"], &violations)?;
        eprintln!("{}", if passed { "all conditions pass" } else { "some conditions FAIL" });
        Ok(Outcome::done(vec![out, checks_csv, violations_csv]))
    }
}

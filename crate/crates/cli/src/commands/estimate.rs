use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use qcb_core::measures::{self, DpmEstimate, ExtrapolationMethod, TestDictionary};
use serde::{Deserialize, Serialize};

use super::generate::load_sequence;
use super::{Command, Outcome};
use crate::inputs::Ctx;
use crate::output::{num, sibling, write_csv, write_json};

/// Estimates the DiPerna–Majda measure generated by a sequence.
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub spec: String,
    /// TestDictionary JSON file.
    #[arg(long)]
    pub dict: String,
    #[arg(long, default_value_t = 1)]
    pub kmin: u64,
    #[arg(long, default_value_t = 64)]
    pub kmax: u64,
    #[arg(long, default_value = "ball:h=0.1")]
    pub mesh: String,
    #[arg(long, default_value = "dpm.json")]
    pub out: String,
}

impl Command for EstimateArgs {
    const NAME: &'static str = "estimate";

    fn out(&self) -> &str {
        &self.out
    }

    fn set_out(&mut self, out: String) {
        self.out = out;
    }

    fn input_slots(&mut self) -> Vec<&mut String> {
        vec![&mut self.spec, &mut self.dict, &mut self.mesh]
    }

    fn run(&self, ctx: &Ctx) -> Result<Outcome> {
        let seq = load_sequence(ctx, &self.spec)?;
        let dict = TestDictionary::from_json(&ctx.value(&self.dict)?)?;
        let mesh = ctx.mesh(&self.mesh, seq.n())?;
        let ladder = seq.resolvable_ladder(&mesh, self.kmin, self.kmax);
        if ladder.is_empty() {
            bail!("no k in [{}, {}] is resolved by the mesh", self.kmin, self.kmax);
        }
        let dropped = qcb_core::sequences::k_ladder(self.kmin, self.kmax).len() - ladder.len();
        if dropped > 0 {
            eprintln!("note: {dropped} unresolved k dropped, ladder {ladder:?}");
        }
        let est = measures::estimate_pairings(&seq, &mesh, &dict, &ladder)?;
        let out = ctx.path(&self.out);
        write_json(&out, &est)?;
        let mut outputs = vec![out.clone()];
        outputs.extend(estimate_tables(&out, &est)?);
        Ok(Outcome::done(outputs))
    }
}

pub fn estimate_tables(out: &Path, est: &DpmEstimate) -> Result<Vec<PathBuf>> {
    let dict = &est.dictionary;
    let g_name = |g: usize| dict.spatial()[g].name();
    let v_name = |v: usize| dict.tests()[v].name().to_string();

    let mut rows = Vec::new();
    for pr in &est.pairings {
        for (k, value) in est.k_ladder.iter().zip(&pr.values) {
            rows.push(vec![g_name(pr.g), v_name(pr.v), k.to_string(), num(*value)]);
        }
    }
    let pairings = sibling(out, "pairings", "csv");
    write_csv(&pairings, &["g", "v", "k", "value"], &rows)?;

    let rows: Vec<Vec<String>> = est
        .pairings
        .iter()
        .map(|pr| {
            vec![
                g_name(pr.g),
                v_name(pr.v),
                num(pr.limit.limit),
                num(pr.limit.error),
                method_name(pr.limit.method),
                pr.limit.cauchy.to_string(),
            ]
        })
        .collect();
    let limits = sibling(out, "limits", "csv");
    write_csv(&limits, &["g", "v", "limit", "error", "method", "cauchy"], &rows)?;

    let mut header = vec!["cell".to_string(), "volume".into(), "density".into(), "masked".into()];
    header.extend((0..dict.tests().len()).map(|v| format!("moment:{}", v_name(v))));
    let rows: Vec<Vec<String>> = (0..est.cell_volumes.len())
        .map(|c| {
            let mut row = vec![
                c.to_string(),
                num(est.cell_volumes[c]),
                num(est.sigma_ac_density[c]),
                est.masked[c].to_string(),
            ];
            row.extend(est.young_moments[c].iter().map(|x| num(*x)));
            row
        })
        .collect();
    let cells = sibling(out, "cells", "csv");
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&cells, &header, &rows)?;

    let rows: Vec<Vec<String>> = est
        .atoms
        .iter()
        .map(|a| {
            vec![
                a.x0.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" "),
                num(a.mass),
                num(a.mass_error),
                a.boundary.to_string(),
                num(a.radius),
            ]
        })
        .collect();
    let atoms = sibling(out, "atoms", "csv");
    write_csv(&atoms, &["x0", "mass", "mass_error", "boundary", "radius"], &rows)?;
    Ok(vec![pairings, limits, cells, atoms])
}

fn method_name(m: ExtrapolationMethod) -> String {
    serde_json::to_value(m)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

use anyhow::Result;
use clap::Args;
use qcb_core::domains::DisplacementField;
use qcb_core::sequences::SequenceSpec;
use serde::{Deserialize, Serialize};

use super::{Command, Outcome};
use crate::inputs::Ctx;
use crate::output::{num, sibling, write_csv, write_json};

/// Materializes u_k of a sequence on a mesh.
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// SequenceSpec JSON file.
    #[arg(long)]
    pub spec: String,
    #[arg(long, default_value_t = 64)]
    pub k: u64,
    #[arg(long, default_value = "ball:h=0.1")]
    pub mesh: String,
    #[arg(long, default_value = "field.json")]
    pub out: String,
}

#[derive(Serialize)]
struct FieldFile<'a> {
    k: u64,
    mesh: &'a str,
    h: f64,
    vertex_count: usize,
    cell_count: usize,
    field: DisplacementField,
}

pub fn load_sequence(ctx: &Ctx, arg: &str) -> Result<SequenceSpec> {
    let seq: SequenceSpec = serde_json::from_value(ctx.value(arg)?)?;
    seq.validate()?;
    Ok(seq)
}

impl Command for GenerateArgs {
    const NAME: &'static str = "generate";

    fn out(&self) -> &str {
        &self.out
    }

    fn set_out(&mut self, out: String) {
        self.out = out;
    }

    fn input_slots(&mut self) -> Vec<&mut String> {
        vec![&mut self.spec, &mut self.mesh]
    }

    fn run(&self, ctx: &Ctx) -> Result<Outcome> {
        let seq = load_sequence(ctx, &self.spec)?;
        let mesh = ctx.mesh(&self.mesh, seq.n())?;
        let field = seq.materialize_field(&mesh, self.k)?;
        let grads = seq.materialize(&mesh, self.k)?;
        let out = ctx.path(&self.out);
        write_json(
            &out,
            &FieldFile {
                k: self.k,
                mesh: &self.mesh,
                h: mesh.h(),
                vertex_count: mesh.vertex_count(),
                cell_count: mesh.cell_count(),
                field,
            },
        )?;
        let (m, n) = (seq.m(), seq.n());
        let mut header = vec!["cell".to_string(), "volume".to_string()];
        for i in 0..m {
            for j in 0..n {
                header.push(format!("s{}{}", i + 1, j + 1));
            }
        }
        let volumes = mesh.volumes();
        let rows: Vec<Vec<String>> = grads
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let mut row = vec![c.to_string(), num(volumes[c])];
                row.extend(s.to_row_major().into_iter().map(num));
                row
            })
            .collect();
        let cells = sibling(&out, "cells", "csv");
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&cells, &header, &rows)?;
        Ok(Outcome::done(vec![out, cells]))
    }
}

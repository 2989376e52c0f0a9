use anyhow::{bail, Result};
use clap::Args;
use qcb_core::measures::SpatialFn;
use qcb_core::semicontinuity::{self, RhoField};
use qcb_core::sequences::k_ladder;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::generate::load_sequence;
use super::{Command, Outcome};
use crate::inputs::{self, Ctx};
use crate::output::{num, sibling, write_csv, write_json};

/// Weak continuity of u ↦ ∫ g·a·[Cof ∇u]ρ along a sequence in three dimensions.
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct CofArgs {
    #[arg(long)]
    pub seq: String,
    #[arg(long, default_value = "1,0,0", allow_hyphen_values = true)]
    pub a: String,
    /// `position` for ρ(x) = x, or a constant unit vector.
    #[arg(long, default_value = "position", allow_hyphen_values = true)]
    pub rho: String,
    /// JSON array of spatial weights.
    #[arg(long, default_value = r#"[{"kind":"constant","value":1}]"#)]
    pub g: String,
    #[arg(long, default_value = "ball:h=0.05555555555555555,center=[0,0,1],core=0.18")]
    pub mesh: String,
    #[arg(long, default_value_t = 4)]
    pub kmin: u64,
    #[arg(long, default_value_t = 32)]
    pub kmax: u64,
    #[arg(long, default_value = "report.csv")]
    pub out: String,
}

impl Command for CofArgs {
    const NAME: &'static str = "cof-check";

    fn out(&self) -> &str {
        &self.out
    }

    fn set_out(&mut self, out: String) {
        self.out = out;
    }

    fn input_slots(&mut self) -> Vec<&mut String> {
        vec![&mut self.seq, &mut self.g, &mut self.mesh]
    }

    fn run(&self, ctx: &Ctx) -> Result<Outcome> {
        let seq = load_sequence(ctx, &self.seq)?;
        let a = inputs::vector(&self.a)?;
        let [a0, a1, a2] = a[..] else {
            bail!("--a needs three entries");
        };
        let rho = match self.rho.as_str() {
            "position" => RhoField::Position,
            other => RhoField::Constant {
                rho: inputs::vector(other)?,
            },
        };
        let g_list: Vec<SpatialFn> = match ctx.value(&self.g)? {
            Value::Array(items) => items.into_iter().map(serde_json::from_value).collect::<Result<_, _>>()?,
            one => vec![serde_json::from_value(one)?],
        };
        let mesh = ctx.mesh(&self.mesh, 3)?;
        let ladder = k_ladder(self.kmin, self.kmax);
        let report = semicontinuity::cofactor_weak_continuity_check([a0, a1, a2], &rho, &seq, &mesh, &g_list, &ladder)?;

        let mut rows = Vec::new();
        for e in &report.entries {
            for (i, k) in report.k_ladder.iter().enumerate() {
                rows.push(vec![
                    e.g.clone(),
                    k.to_string(),
                    num(e.values[i]),
                    num(e.weak_value),
                    num(e.gaps[i]),
                    num(e.scale),
                ]);
            }
        }
        let out = ctx.path(&self.out);
        write_csv(&out, &["g", "k", "value", "weak_value", "gap", "scale"], &rows)?;
        let full = sibling(&out, "full", "json");
        write_json(&full, &report)?;
        Ok(Outcome::done(vec![out, full]))
    }
}

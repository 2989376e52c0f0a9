use std::path::PathBuf;

use anyhow::Result;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::inputs::Ctx;

pub mod check;
pub mod cof;
pub mod estimate;
pub mod generate;
pub mod qcb;
pub mod relax;
pub mod wlsc;

pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub nonconverged: bool,
}

impl Outcome {
    pub fn done(outputs: Vec<PathBuf>) -> Self {
        Outcome {
            outputs,
            nonconverged: false,
        }
    }
}

/// A subcommand whose arguments double as its recorded config.
pub trait Command: Serialize + DeserializeOwned + Clone {
    const NAME: &'static str;

    /// Fills defaults that depend on other arguments.
    fn resolve(&mut self, _ctx: &Ctx) -> Result<()> {
        Ok(())
    }

    fn out(&self) -> &str;
    fn set_out(&mut self, out: String);

    /// Arguments that may name input files.
    fn input_slots(&mut self) -> Vec<&mut String>;

    fn seed(&self) -> Option<u64> {
        None
    }

    fn run(&self, ctx: &Ctx) -> Result<Outcome>;
}

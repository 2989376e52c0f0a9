//! Resolution of command-line values that may be inline JSON, bare tags or file paths.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qcb_core::domains::{self, DomainMesh};
use qcb_core::{Integrand, Matrix};
use serde_json::{json, Map, Value};

/// Paths in a config are resolved against this directory.
#[derive(Clone, Debug)]
pub struct Ctx {
    pub base: PathBuf,
}

impl Ctx {
    pub fn path(&self, p: &str) -> PathBuf {
        self.base.join(p)
    }

    pub fn is_file(&self, arg: &str) -> bool {
        !arg.is_empty() && self.path(arg).is_file()
    }

    pub fn read_json(&self, p: &str) -> Result<Value> {
        let path = self.path(p);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// A file's JSON, inline JSON, or the argument as a JSON string.
    pub fn value(&self, arg: &str) -> Result<Value> {
        if self.is_file(arg) {
            return self.read_json(arg);
        }
        match serde_json::from_str::<Value>(arg) {
            Ok(v) => Ok(v),
            Err(_) => Ok(Value::String(arg.to_string())),
        }
    }

    pub fn integrand(&self, arg: &str) -> Result<Integrand> {
        Ok(Integrand::from_json(&self.value(arg)?)?)
    }

    /// `zero`, a matrix object, or nested rows.
    pub fn matrix(&self, arg: &str, m: usize, n: usize) -> Result<Matrix> {
        if arg == "zero" {
            return Ok(Matrix::zeros(m, n));
        }
        let s = matrix_from_value(&self.value(arg)?)?;
        if s.rows() != m || s.cols() != n {
            bail!("matrix is {}x{}, expected {m}x{n}", s.rows(), s.cols());
        }
        Ok(s)
    }

    pub fn mesh(&self, arg: &str, dim: usize) -> Result<DomainMesh> {
        let spec = if self.is_file(arg) {
            let v = self.read_json(arg)?;
            if v.get("kind").is_none() {
                return Ok(DomainMesh::from_json(&v)?);
            }
            v
        } else {
            mesh_spec(arg)?
        };
        let mut spec = spec;
        if spec.get("dim").is_none() {
            spec["dim"] = json!(dim);
        }
        Ok(domains::build_from_spec(&spec)?)
    }
}

pub fn matrix_from_value(v: &Value) -> Result<Matrix> {
    if v.get("rows").is_some() {
        return Ok(serde_json::from_value(v.clone())?);
    }
    if let Some(x) = v.as_f64() {
        return Ok(Matrix::from_row_major(1, 1, &[x]).expect("1x1"));
    }
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone()).context("matrix must be {rows, cols, data} or nested rows")?;
    let cols = rows.first().map_or(0, Vec::len);
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    match Matrix::from_row_major(rows.len(), cols, &data) {
        Some(s) if rows.iter().all(|r| r.len() == cols) => Ok(s),
        _ => bail!("matrix rows have unequal lengths"),
    }
}

/// `kind[:key=value,...]` with JSON values, e.g. `half-ball:h=0.1,rho=[0,0,1]`.
/// The keys `center` and `core` describe the grading.
pub fn mesh_spec(arg: &str) -> Result<Value> {
    let (kind, rest) = arg.split_once(':').unwrap_or((arg, ""));
    let mut spec = Map::new();
    spec.insert("kind".into(), json!(kind));
    let mut grading = Map::new();
    for item in split_top_level(rest) {
        let (key, raw) = item
            .split_once('=')
            .with_context(|| format!("mesh parameter `{item}` is not key=value"))?;
        let value: Value = serde_json::from_str(raw).with_context(|| format!("mesh parameter `{key}` has a bad value"))?;
        match key {
            "center" | "core" => {
                grading.insert(key.into(), value);
            }
            "h" | "dim" | "rho" | "radius" => {
                spec.insert(key.into(), value);
            }
            other => bail!("unknown mesh parameter `{other}`"),
        }
    }
    if !grading.is_empty() {
        spec.insert("grading".into(), Value::Object(grading));
    }
    Ok(Value::Object(spec))
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, ch) in s.char_indices() {
        match ch {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if start < s.len() {
        out.push(&s[start..]);
    }
    out.into_iter().filter(|x| !x.is_empty()).collect()
}

/// Comma-separated reals.
pub fn vector(arg: &str) -> Result<Vec<f64>> {
    arg.split(',')
        .map(|x| x.trim().parse::<f64>().with_context(|| format!("`{x}` is not a number")))
        .collect()
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

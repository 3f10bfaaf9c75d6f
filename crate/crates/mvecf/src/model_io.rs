//! Plain-text factor model dump.
//!
//! ```text
//! mvecf-model <version>
//! <m> <n> <l>
//! <m lines: user embeddings, l values each>
//! <n lines: item embeddings, l values each>
//! ```
//!
//! Values are written in Rust's shortest round-trip form, so a load after
//! a save reproduces the model bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use mvecf_core::FactorModel;
use nalgebra::DMatrix;

use crate::error::{CliError, Result, StageExt};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "mvecf-model";

pub fn to_string(model: &FactorModel) -> String {
    let mut s = String::new();
    writeln!(s, "{MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(s, "{} {} {}", model.n_users(), model.n_items(), model.latent_dim()).unwrap();
    for m in [model.users(), model.items()] {
        for r in 0..m.nrows() {
            let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
    }
    s
}

pub fn from_str(text: &str, origin: &Path) -> Result<FactorModel> {
    let bad = |line: usize, msg: &str| CliError::format(origin, format!("line {line}: {msg}"));
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));

    let (ln, header) = lines.next().ok_or_else(|| bad(1, "empty model file"))?;
    match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        [MAGIC, v] if *v == FORMAT_VERSION.to_string() => {}
        [MAGIC, v] => return Err(bad(ln, &format!("unsupported format version {v}"))),
        _ => return Err(bad(ln, "not a model dump")),
    }
    let (ln, dims) = lines.next().ok_or_else(|| bad(2, "missing dimensions"))?;
    let dims: Vec<usize> = dims
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(ln, "invalid dimension")))
        .collect::<Result<_>>()?;
    let [m, n, l] = dims[..] else {
        return Err(bad(ln, "expected `m n l`"));
    };

    let mut next_line = 3;
    let mut read = |rows: usize| -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(rows, l);
        for r in 0..rows {
            let (ln, line) = lines.next().ok_or_else(|| bad(next_line, "truncated model file"))?;
            next_line = ln + 1;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| match t.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(bad(ln, &format!("invalid number `{t}`"))),
                })
                .collect::<Result<_>>()?;
            if vals.len() != l {
                return Err(bad(ln, &format!("expected {l} values, found {}", vals.len())));
            }
            for (c, v) in vals.into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        Ok(out)
    };
    let users = read(m)?;
    let items = read(n)?;
    if let Some((ln, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(bad(ln, "trailing data"));
    }
    FactorModel::new(users, items).stage("load")
}

pub fn save(path: &Path, model: &FactorModel) -> Result<()> {
    std::fs::write(path, to_string(model)).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<FactorModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    from_str(&text, path)
}

//! Model files: TOML with a `[partition]` section, `[dynamics]` holding `a_i_l`
//! blocks (1-based, row-major, missing blocks are zero), and one
//! `[subsystem.i]` table per subsystem with `c`, `q`, `r`, `p0`.
//!
//! Weights may be given as a scalar, meaning that multiple of the identity.

use std::path::Path;

use nalgebra::DMatrix;
use toml::{Table, Value};

use super::PartitionedLinearModel;
use crate::error::{Error, Result};

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

pub(crate) fn get<'a>(t: &'a Table, section: &str, key: &str) -> Result<&'a Value> {
    t.get(key).ok_or_else(|| Error::config(section, key, "missing"))
}

pub(crate) fn table<'a>(t: &'a Table, section: &str, key: &str) -> Result<&'a Table> {
    get(t, section, key)?
        .as_table()
        .ok_or_else(|| Error::config(section, key, "expected a table"))
}

pub(crate) fn dims(t: &Table, section: &str, key: &str) -> Result<Vec<usize>> {
    let arr = get(t, section, key)?
        .as_array()
        .ok_or_else(|| Error::config(section, key, "expected an array of integers"))?;
    arr.iter()
        .map(|v| match v {
            Value::Integer(i) if *i >= 0 => Ok(*i as usize),
            _ => Err(Error::config(section, key, "entries must be nonnegative integers")),
        })
        .collect()
}

pub(crate) fn numbers(v: &Value, section: &str, key: &str) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::config(section, key, "expected an array of numbers"))?;
    arr.iter()
        .map(|x| number(x).ok_or_else(|| Error::config(section, key, "entries must be numbers")))
        .collect()
}

/// Row-major matrix; a bare number `s` means `s·I` when the shape is square.
pub(crate) fn matrix(v: &Value, rows: usize, cols: usize, section: &str, key: &str) -> Result<DMatrix<f64>> {
    if let Some(s) = number(v) {
        if rows != cols {
            return Err(Error::config(section, key, format!("scalar shorthand needs a square block, got {rows}x{cols}")));
        }
        return Ok(DMatrix::identity(rows, cols) * s);
    }
    let vals = numbers(v, section, key)?;
    if vals.len() != rows * cols {
        return Err(Error::config(
            section,
            key,
            format!("expected {} entries for a {rows}x{cols} block, got {}", rows * cols, vals.len()),
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

fn flat(m: &DMatrix<f64>) -> Value {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(Value::Float(m[(r, c)]));
        }
    }
    Value::Array(out)
}

/// Parse a linear model from TOML text.
pub fn parse_linear_model(text: &str) -> Result<PartitionedLinearModel> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<root>", "<syntax>", e.message().to_string()))?;
    let part = table(&root, "<root>", "partition")?;
    let sd = dims(part, "partition", "state_dims")?;
    let od = dims(part, "partition", "output_dims")?;
    let n = sd.len();
    if od.len() != n {
        return Err(Error::config("partition", "output_dims", format!("expected {n} entries")));
    }
    if n == 0 {
        return Err(Error::config("partition", "state_dims", "no subsystems"));
    }

    let empty = Table::new();
    let dynamics = match root.get("dynamics") {
        Some(v) => v.as_table().ok_or_else(|| Error::config("<root>", "dynamics", "expected a table"))?,
        None => &empty,
    };
    let mut a_blocks: Vec<Vec<DMatrix<f64>>> =
        (0..n).map(|i| (0..n).map(|l| DMatrix::zeros(sd[i], sd[l])).collect()).collect();
    for (key, v) in dynamics {
        let parts: Vec<&str> = key.split('_').collect();
        let idx = match parts.as_slice() {
            ["a", i, l] => i.parse::<usize>().ok().zip(l.parse::<usize>().ok()),
            _ => None,
        };
        let (i, l) = idx
            .filter(|&(i, l)| (1..=n).contains(&i) && (1..=n).contains(&l))
            .ok_or_else(|| Error::config("dynamics", key, format!("expected a_<i>_<l> with indices in 1..={n}")))?;
        a_blocks[i - 1][l - 1] = matrix(v, sd[i - 1], sd[l - 1], "dynamics", key)?;
    }

    let subs = table(&root, "<root>", "subsystem")?;
    let mut c = Vec::new();
    let mut q = Vec::new();
    let mut r = Vec::new();
    let mut p0 = Vec::new();
    for i in 0..n {
        let name = (i + 1).to_string();
        let section = format!("subsystem.{name}");
        let t = table(subs, "subsystem", &name)?;
        c.push(matrix(get(t, &section, "c")?, od[i], sd[i], &section, "c")?);
        q.push(matrix(get(t, &section, "q")?, sd[i], sd[i], &section, "q")?);
        r.push(matrix(get(t, &section, "r")?, od[i], od[i], &section, "r")?);
        p0.push(matrix(get(t, &section, "p0")?, sd[i], sd[i], &section, "p0")?);
    }
    PartitionedLinearModel::new(sd, od, a_blocks, c, q, r, p0).map_err(|e| match e {
        Error::Model(m) | Error::Dimension(m) => Error::config("subsystem", "<weights>", m),
        other => other,
    })
}

pub fn load_linear_model(path: &Path) -> Result<PartitionedLinearModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", &path.display().to_string(), e.to_string()))?;
    parse_linear_model(&text)
}

/// Serialize with every block written out in full.
pub fn linear_model_to_toml(model: &PartitionedLinearModel) -> String {
    let p = model.partition();
    let n = p.n();
    let mut root = Table::new();
    let mut part = Table::new();
    let ints = |d: &[usize]| Value::Array(d.iter().map(|&x| Value::Integer(x as i64)).collect());
    part.insert("state_dims".into(), ints(p.state_dims()));
    part.insert("output_dims".into(), ints(p.output_dims()));
    root.insert("partition".into(), Value::Table(part));
    let mut dynamics = Table::new();
    for i in 0..n {
        for l in 0..n {
            let b = model.a_block(i, l);
            if i == l || b.iter().any(|&v| v != 0.0) {
                dynamics.insert(format!("a_{}_{}", i + 1, l + 1), flat(b));
            }
        }
    }
    root.insert("dynamics".into(), Value::Table(dynamics));
    let mut subs = Table::new();
    for i in 0..n {
        let mut t = Table::new();
        t.insert("c".into(), flat(model.c_block(i)));
        t.insert("q".into(), flat(model.q(i)));
        t.insert("r".into(), flat(model.r_block(i)));
        t.insert("p0".into(), flat(model.p0(i)));
        subs.insert((i + 1).to_string(), Value::Table(t));
    }
    root.insert("subsystem".into(), Value::Table(subs));
    toml::to_string(&root).expect("model tables always serialize")
}

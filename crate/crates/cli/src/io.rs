//! File loading, output sinks and the input-error classification behind
//! exit code 2.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use mtb_core::{Error, Mechanism};
use serde::Serialize;

/// Bad flags, unreadable files and unmet preconditions.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

pub fn is_input_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        if cause.is::<InputError>()
            || cause.is::<io::Error>()
            || cause.is::<serde_json::Error>()
            || cause.is::<csv::Error>()
        {
            return true;
        }
        matches!(
            cause.downcast_ref::<Error>(),
            Some(
                Error::InvalidMechanism(_)
                    | Error::InvalidParameter(_)
                    | Error::DimensionMismatch { .. }
                    | Error::NegativeCoordinate { .. }
                    | Error::IndexOutOfRange { .. }
                    | Error::NegativeTime(_)
                    | Error::NotSupercritical { .. }
                    | Error::Reducible
                    | Error::BoundUnavailable
                    | Error::OutsideUnitCube(_)
                    | Error::Json(_)
            )
        )
    })
}

pub fn load_mechanism(path: &Path) -> Result<Mechanism> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Mechanism::from_json_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Buffered writer to `path`, or to stdout.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// `given`, or `fill` repeated `ell` times when the flag was omitted.
pub fn vector_or(given: &[f64], ell: usize, fill: f64, what: &str) -> Result<Vec<f64>> {
    if given.is_empty() {
        return Ok(vec![fill; ell]);
    }
    if given.len() != ell {
        return Err(input_error(format!(
            "--{what} has {} entries, the mechanism has {ell} types",
            given.len()
        )));
    }
    Ok(given.to_vec())
}

pub fn positive(what: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(input_error(format!("--{what} must be positive, got {x}")))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

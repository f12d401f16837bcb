//! Text formats: measure, coupling, curve and option-chain CSVs.
//!
//! All floating-point output uses 17 significant digits, enough for an
//! exact `f64` round trip; combined with deterministic solvers this makes
//! repeated runs byte-identical.

use std::fmt::Write as _;

use thiserror::Error;

use crate::measure::DiscreteMeasure;
use crate::mot::{Coupling2, Coupling3, MotError};
use crate::perturb::BoundCurve;
use crate::scalar::Scalar;
use crate::Config;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError {
        line,
        message: message.into(),
    }
}

/// 17-significant-digit decimal form of a scalar.
pub fn fmt_scalar<S: Scalar>(v: &S) -> String {
    format!("{:.16e}", v.to_f64())
}

fn parse_field(s: &str, line: usize, what: &str) -> Result<f64, FormatError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| err(line, format!("cannot parse {what} from {s:?}")))
}

fn split_line<'a>(
    line: &'a str,
    lineno: usize,
    fields: usize,
) -> Result<Vec<&'a str>, FormatError> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() != fields {
        return Err(err(
            lineno,
            format!("expected {fields} fields, got {}", parts.len()),
        ));
    }
    Ok(parts)
}

// ---------------------------------------------------------------------------
// Measures: `position,weight`
// ---------------------------------------------------------------------------

pub fn write_measure_csv<S: Scalar>(measure: &DiscreteMeasure<S>) -> String {
    let mut out = String::from("position,weight\n");
    for (x, w) in measure.iter() {
        let _ = writeln!(out, "{},{}", fmt_scalar(x), fmt_scalar(w));
    }
    out
}

pub fn parse_measure_csv<S: Scalar>(
    text: &str,
    cfg: &Config,
) -> Result<DiscreteMeasure<S>, FormatError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "position,weight" => {}
        Some((_, header)) => {
            return Err(err(1, format!("expected header position,weight, got {header:?}")))
        }
        None => return Err(err(1, "empty file")),
    }
    let mut pairs = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parts = split_line(line, lineno, 2)?;
        let x = parse_field(parts[0], lineno, "position")?;
        let w = parse_field(parts[1], lineno, "weight")?;
        pairs.push((S::from_f64(x), S::from_f64(w)));
    }
    DiscreteMeasure::new(pairs, cfg).map_err(|e| err(0, e.to_string()))
}

// ---------------------------------------------------------------------------
// Couplings: `x,y,mass` and `x,y,z,mass`, sorted lexicographically
// ---------------------------------------------------------------------------

pub fn write_coupling2_csv<S: Scalar>(c: &Coupling2<S>) -> String {
    let mut out = String::from("x,y,mass\n");
    for (&(i, j), v) in c.iter() {
        let _ = writeln!(
            out,
            "{},{},{}",
            fmt_scalar(&c.x_atoms()[i]),
            fmt_scalar(&c.y_atoms()[j]),
            fmt_scalar(v)
        );
    }
    out
}

pub fn write_coupling3_csv<S: Scalar>(c: &Coupling3<S>) -> String {
    let mut out = String::from("x,y,z,mass\n");
    for (&(i, j, k), v) in c.iter() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_scalar(&c.x_atoms()[i]),
            fmt_scalar(&c.y_atoms()[j]),
            fmt_scalar(&c.z_atoms()[k]),
            fmt_scalar(v)
        );
    }
    out
}

/// A coupling CSV with either 2 or 3 coordinate columns.
#[derive(Debug, Clone)]
pub enum ParsedCoupling<S> {
    Two(Coupling2<S>),
    Three(Coupling3<S>),
}

pub fn parse_coupling_csv<S: Scalar>(text: &str) -> Result<ParsedCoupling<S>, FormatError> {
    let mut lines = text.lines().enumerate();
    let arity = match lines.next() {
        Some((_, h)) if h.trim() == "x,y,mass" => 2,
        Some((_, h)) if h.trim() == "x,y,z,mass" => 3,
        Some((_, h)) => {
            return Err(err(
                1,
                format!("expected header x,y,mass or x,y,z,mass, got {h:?}"),
            ))
        }
        None => return Err(err(1, "empty file")),
    };
    let mut triples = Vec::new();
    let mut quads = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parts = split_line(line, lineno, arity + 1)?;
        let mut vals = Vec::with_capacity(parts.len());
        for (p, what) in parts.iter().zip(["x", "y", "z", "mass"]) {
            vals.push(parse_field(p, lineno, what)?);
        }
        if arity == 2 {
            triples.push((
                S::from_f64(vals[0]),
                S::from_f64(vals[1]),
                S::from_f64(vals[2]),
            ));
        } else {
            quads.push((
                S::from_f64(vals[0]),
                S::from_f64(vals[1]),
                S::from_f64(vals[2]),
                S::from_f64(vals[3]),
            ));
        }
    }
    let map_err = |e: MotError| err(0, e.to_string());
    if arity == 2 {
        Ok(ParsedCoupling::Two(
            Coupling2::from_position_entries(triples).map_err(map_err)?,
        ))
    } else {
        Ok(ParsedCoupling::Three(
            Coupling3::from_position_entries(quads).map_err(map_err)?,
        ))
    }
}

// ---------------------------------------------------------------------------
// Option chains: `strike,call_price`
// ---------------------------------------------------------------------------

pub fn parse_chain_csv(text: &str) -> Result<Vec<(f64, f64)>, FormatError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "strike,call_price" => {}
        Some((_, header)) => {
            return Err(err(
                1,
                format!("expected header strike,call_price, got {header:?}"),
            ))
        }
        None => return Err(err(1, "empty file")),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parts = split_line(line, lineno, 2)?;
        rows.push((
            parse_field(parts[0], lineno, "strike")?,
            parse_field(parts[1], lineno, "call_price")?,
        ));
    }
    if rows.is_empty() {
        return Err(err(2, "chain has no rows"));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Bound curves
// ---------------------------------------------------------------------------

/// Combined curve CSV `epsilon,P_lower,Q_lower,P_upper,Q_upper` with one
/// optional `model_p{p}` column per tree exponent. Failed grid points print
/// as empty fields.
pub fn write_curve_csv<S: Scalar>(
    lower: &BoundCurve<S>,
    upper: &BoundCurve<S>,
    model: &[(u32, Vec<S>)],
) -> Result<String, MotError> {
    if lower.eps_grid.len() != upper.eps_grid.len()
        || lower
            .eps_grid
            .iter()
            .zip(&upper.eps_grid)
            .any(|(a, b)| a != b)
    {
        return Err(MotError::Invalid {
            context: "lower and upper curves use different grids".into(),
        });
    }
    for (p, vals) in model {
        if vals.len() != lower.eps_grid.len() {
            return Err(MotError::Invalid {
                context: format!("model column p = {p} has the wrong length"),
            });
        }
    }
    let mut header = String::from("epsilon,P_lower,Q_lower,P_upper,Q_upper");
    for (p, _) in model {
        let _ = write!(header, ",model_p{p}");
    }
    let mut out = header;
    out.push('\n');
    for (idx, eps) in lower.eps_grid.iter().enumerate() {
        let opt = |v: &Option<S>| v.as_ref().map(|v| fmt_scalar(v)).unwrap_or_default();
        let _ = write!(
            out,
            "{},{},{},{},{}",
            fmt_scalar(eps),
            opt(&lower.values[idx]),
            fmt_scalar(&lower.q_values[idx]),
            opt(&upper.values[idx]),
            fmt_scalar(&upper.q_values[idx]),
        );
        for (_, vals) in model {
            let _ = write!(out, ",{}", fmt_scalar(&vals[idx]));
        }
        out.push('\n');
    }
    Ok(out)
}

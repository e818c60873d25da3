//! Number formatting shared by every CSV writer.
//!
//! Floats are written with 17 significant digits so that text round-trips
//! reproduce the binary value exactly. Divergent values use the token `inf`.

use crate::error::{Error, Result};

pub const INF_TOKEN: &str = "inf";

pub fn fmt_f64(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        INF_TOKEN.to_string()
    } else if v.is_infinite() {
        format!("-{INF_TOKEN}")
    } else {
        format!("{v:.16e}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn parse_f64(s: &str) -> Result<f64> {
    match s.trim() {
        INF_TOKEN => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t.parse::<f64>().map_err(|e| Error::Table(format!("bad number `{t}`: {e}"))),
    }
}

pub fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

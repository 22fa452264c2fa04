//! Plain-text selection file.
//!
//! ```text
//! version=1
//! P=32
//! Q=16
//! C=8
//! sample_count=64
//! order=5,17,2,9,30,11,0,21
//! rho
//! 0.41,0.12,...      (P rows of Q comma-separated values)
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{ChannelSelection, CorrelationMatrix};
use crate::error::{Error, Result};

const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionFile {
    pub stats: CorrelationMatrix,
    pub selection: ChannelSelection,
}

impl SelectionFile {
    pub fn to_text(&self) -> String {
        let s = &self.stats;
        let mut out = String::new();
        let _ = writeln!(out, "version={VERSION}");
        let _ = writeln!(out, "P={}", s.outputs());
        let _ = writeln!(out, "Q={}", s.inputs());
        let _ = writeln!(out, "C={}", self.selection.len());
        let _ = writeln!(out, "sample_count={}", s.sample_count());
        let order: Vec<String> = self.selection.order().iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "order={}", order.join(","));
        out.push_str("rho\n");
        for p in 0..s.outputs() {
            // `{}` on f64 is the shortest representation that round-trips.
            let row: Vec<String> = s.row(p).iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut fields = HashMap::new();
        for line in lines.by_ref() {
            if line == "rho" {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("selection file: bad line {line:?}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&String> {
            fields
                .get(k)
                .ok_or_else(|| Error::format(format!("selection file: missing field {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::format(format!("selection file: field {k} is not a count")))
        };
        let version = num("version")?;
        if version != VERSION as usize {
            return Err(Error::format(format!("unsupported selection file version {version}")));
        }
        let (p, q, c, samples) = (num("P")?, num("Q")?, num("C")?, num("sample_count")?);
        let order = get("order")?
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format("selection file: bad order list"))?;
        if order.len() != c {
            return Err(Error::format("selection file: order length differs from C"));
        }
        let mut rho = Vec::with_capacity(p * q);
        for line in lines {
            let before = rho.len();
            for tok in line.split(',') {
                rho.push(
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::format(format!("selection file: bad value {tok:?}")))?,
                );
            }
            if rho.len() - before != q {
                return Err(Error::format("selection file: rho row does not have Q values"));
            }
        }
        if rho.len() != p * q {
            return Err(Error::format("selection file: rho does not have P rows"));
        }
        Ok(Self {
            stats: CorrelationMatrix::new(p, q, rho, samples)?,
            selection: ChannelSelection::new(order, p)?,
        })
    }
}

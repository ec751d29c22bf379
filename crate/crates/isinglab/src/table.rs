//! Tables of ±1 configurations (snapshot samples), with optional row weights.
//!
//! A [`SampleTable`] is the common container for equilibrium-style data:
//! rows are configurations, columns are spins. Weighted tables let exact
//! distributions be fed to sample-based methods as "infinite data".
//!
//! File format: one header line of JSON (`{"n": .., "L": .., "meta": {..}}`)
//! followed by one `+-+...` string per row.

use crate::error::{Error, Result};
use crate::spins;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    l: usize,
    rows: Vec<i8>,
    weights: Option<Vec<f64>>,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl SampleTable {
    pub fn new(l: usize, rows: Vec<i8>) -> Result<Self> {
        if l == 0 {
            return Err(Error::Parameter("table must have at least one spin".into()));
        }
        if rows.len() % l != 0 {
            return Err(Error::Parameter(format!(
                "row data length {} is not a multiple of L={l}",
                rows.len()
            )));
        }
        spins::validate_config(&rows)?;
        Ok(Self {
            l,
            rows,
            weights: None,
            meta: serde_json::Map::new(),
        })
    }

    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Parameter("table needs at least one row".into()));
        }
        let l = rows[0].len();
        if rows.iter().any(|r| r.len() != l) {
            return Err(Error::Parameter("rows have inconsistent lengths".into()));
        }
        Self::new(l, rows.concat())
    }

    /// Attach one nonnegative weight per row (they need not sum to 1).
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_rows() {
            return Err(Error::Parameter(format!(
                "{} weights for {} rows",
                weights.len(),
                self.n_rows()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter("weights must be finite and >= 0".into()));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Parameter("total weight must be positive".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len() / self.l
    }

    pub fn row(&self, r: usize) -> &[i8] {
        &self.rows[r * self.l..(r + 1) * self.l]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[i8]> {
        self.rows.chunks_exact(self.l)
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Weight of row `r` (1 for unweighted tables).
    pub fn weight(&self, r: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[r])
    }

    pub fn total_weight(&self) -> f64 {
        self.weights
            .as_ref()
            .map_or(self.n_rows() as f64, |w| w.iter().sum())
    }

    /// Concatenate several tables with the same number of spins.
    pub fn concat(tables: &[&SampleTable]) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::Parameter("nothing to concatenate".into()));
        }
        let l = tables[0].l;
        if tables.iter().any(|t| t.l != l) {
            return Err(Error::Parameter(
                "cannot concatenate tables with different spin counts".into(),
            ));
        }
        let mut rows = Vec::new();
        let weighted = tables.iter().any(|t| t.weights.is_some());
        let mut weights = Vec::new();
        for t in tables {
            rows.extend_from_slice(&t.rows);
            if weighted {
                for r in 0..t.n_rows() {
                    weights.push(t.weight(r));
                }
            }
        }
        let table = Self::new(l, rows)?;
        if weighted {
            table.with_weights(weights)
        } else {
            Ok(table)
        }
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::new();
        let header = serde_json::json!({
            "n": self.n_rows(),
            "L": self.l,
            "weighted": self.weights.is_some(),
            "meta": self.meta,
        });
        out.push_str(&serde_json::to_string(&header)?);
        out.push('\n');
        for r in 0..self.n_rows() {
            out.push_str(&spins::config_to_string(self.row(r)));
            if let Some(w) = &self.weights {
                out.push(' ');
                out.push_str(&format!("{:.16e}", w[r]));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header: serde_json::Value = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::Format("empty table file".into()))?,
        )?;
        let l = header["L"]
            .as_u64()
            .ok_or_else(|| Error::Format("table header missing L".into()))? as usize;
        let n = header["n"]
            .as_u64()
            .ok_or_else(|| Error::Format("table header missing n".into()))? as usize;
        let weighted = header["weighted"].as_bool().unwrap_or(false);
        let mut rows = Vec::with_capacity(n * l);
        let mut weights = Vec::new();
        for (idx, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let cfg = parts
                .next()
                .ok_or_else(|| Error::Format(format!("row {idx}: empty line")))?;
            let parsed = spins::config_from_string(cfg)?;
            if parsed.len() != l {
                return Err(Error::Format(format!(
                    "row {idx}: {} spins, header says {l}",
                    parsed.len()
                )));
            }
            rows.extend(parsed);
            if weighted {
                let w: f64 = parts
                    .next()
                    .ok_or_else(|| Error::Format(format!("row {idx}: missing weight")))?
                    .parse()
                    .map_err(|e| Error::Format(format!("row {idx}: bad weight: {e}")))?;
                weights.push(w);
            }
        }
        if rows.len() / l != n {
            return Err(Error::Format(format!(
                "table header says {n} rows, file has {}",
                rows.len() / l
            )));
        }
        let mut table = Self::new(l, rows)?;
        if weighted {
            table = table.with_weights(weights)?;
        }
        if let Some(meta) = header["meta"].as_object() {
            table.meta = meta.clone();
        }
        Ok(table)
    }
}

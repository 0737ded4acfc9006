//! Append-only training log: one JSON object per line, one line per step.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::Result;

#[derive(Default)]
pub struct TrainingLog {
    out: Option<BufWriter<File>>,
    records: Vec<Value>,
}

impl TrainingLog {
    /// In-memory log.
    pub fn memory() -> Self {
        Self::default()
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { out: Some(BufWriter::new(f)), records: Vec::new() })
    }

    /// Adds one record tagged with `stage` and `step`.
    pub fn record<T: Serialize>(&mut self, stage: &str, step: usize, fields: &T) -> Result<()> {
        let mut v = serde_json::to_value(fields)?;
        if let Value::Object(m) = &mut v {
            m.insert("stage".into(), stage.into());
            m.insert("step".into(), step.into());
        }
        if let Some(out) = &mut self.out {
            serde_json::to_writer(&mut *out, &v)?;
            out.write_all(b"\n")?;
        }
        self.records.push(v);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(out) = &mut self.out {
            out.flush()?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[Value] {
        &self.records
    }

    /// Values of a numeric field over the records of one stage.
    pub fn series(&self, stage: &str, field: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r["stage"] == stage)
            .filter_map(|r| r[field].as_f64())
            .collect()
    }
}

impl Drop for TrainingLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

//! JSON-lines metrics records.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::StepMetrics;

/// One line of the metrics stream.
///
/// Non-finite values are written as `null` and read back as NaN; they only
/// occur in a record with `diverged` set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    #[serde(with = "nullable_f64")]
    pub l_r: f64,
    #[serde(with = "nullable_f64")]
    pub commitment: f64,
    #[serde(with = "nullable_f64")]
    pub total_loss: f64,
    #[serde(with = "nullable_f64")]
    pub usage_perplexity: f64,
    pub dead_codes: usize,
    pub mode: String,
    pub seed: u64,
    /// Milliseconds since the run started. Left null unless wall time
    /// logging is on, so that streams stay byte-reproducible.
    pub wall_ms: Option<u64>,
    #[serde(default)]
    pub diverged: bool,
}

impl MetricsRecord {
    pub fn from_step(m: &StepMetrics, mode: &str, seed: u64, wall_ms: Option<u64>) -> Self {
        Self {
            step: m.step,
            l_r: m.l_r,
            commitment: m.commitment,
            total_loss: m.total_loss,
            usage_perplexity: m.usage_perplexity,
            dead_codes: m.dead_codes,
            mode: mode.to_string(),
            seed,
            wall_ms,
            diverged: false,
        }
    }

    /// Marker written when training stops on a non-finite value.
    pub fn diverged(step: u64, mode: &str, seed: u64, wall_ms: Option<u64>) -> Self {
        Self {
            step,
            l_r: f64::NAN,
            commitment: f64::NAN,
            total_loss: f64::NAN,
            usage_perplexity: f64::NAN,
            dead_codes: 0,
            mode: mode.to_string(),
            seed,
            wall_ms,
            diverged: true,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_r,
            self.commitment,
            self.total_loss,
            self.usage_perplexity,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics record serializes")
    }

    pub fn from_json(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::format(format!("bad metrics line: {e}")))
    }
}

/// Appends records one line at a time.
pub struct MetricsWriter<W: Write> {
    out: W,
    last_step: Option<u64>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            last_step: None,
        }
    }

    /// Writes `rec`; steps must not decrease.
    pub fn write(&mut self, rec: &MetricsRecord) -> Result<()> {
        if let Some(prev) = self.last_step {
            if rec.step < prev {
                return Err(Error::invalid(format!(
                    "metrics step {} after {prev}",
                    rec.step
                )));
            }
        }
        self.last_step = Some(rec.step);
        writeln!(self.out, "{}", rec.to_json())?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(MetricsRecord::from_json(&line)?);
    }
    Ok(out)
}

mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

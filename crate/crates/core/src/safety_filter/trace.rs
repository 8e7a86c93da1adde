use std::io::Write;

use super::{FilterError, FilterResult};

/// One row of the per-step filter trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub h: Vec<f64>,
    pub b: Vec<f64>,
    pub xi: Vec<f64>,
    pub certificate: &'static str,
    pub intervention_norm: f64,
}

impl TraceRecord {
    pub fn from_result(step: u64, result: &FilterResult) -> Self {
        Self {
            step,
            h: result.rows.iter().map(|r| r.h).collect(),
            b: result.rows.iter().map(|r| r.b).collect(),
            xi: result.xi.clone(),
            certificate: result.certificate.as_str(),
            intervention_norm: result.intervention_norm,
        }
    }
}

/// CSV writer with columns `step, h_<j>…, b_<j>…, xi_<j>…, certificate,
/// intervention_norm` for barriers `j`.
pub struct FilterTrace<W: Write> {
    writer: csv::Writer<W>,
    barriers: usize,
}

impl<W: Write> FilterTrace<W> {
    /// Writes `preamble` lines verbatim (e.g. `# ...` comments), then the
    /// header.
    pub fn new(mut inner: W, barrier_labels: &[String], preamble: &[String]) -> Result<Self, FilterError> {
        for line in preamble {
            writeln!(inner, "{line}")?;
        }
        let mut writer = csv::Writer::from_writer(inner);
        let mut header = vec!["step".to_string()];
        for prefix in ["h", "b", "xi"] {
            header.extend((0..barrier_labels.len()).map(|j| format!("{prefix}_{j}")));
        }
        header.push("certificate".into());
        header.push("intervention_norm".into());
        writer.write_record(&header)?;
        Ok(Self { writer, barriers: barrier_labels.len() })
    }

    pub fn write(&mut self, record: &TraceRecord) -> Result<(), FilterError> {
        if record.h.len() != self.barriers || record.b.len() != self.barriers || record.xi.len() != self.barriers {
            return Err(FilterError::Dimension(format!("trace row does not have {} barriers", self.barriers)));
        }
        let mut fields = vec![record.step.to_string()];
        fields.extend(record.h.iter().chain(&record.b).chain(&record.xi).map(|v| v.to_string()));
        fields.push(record.certificate.to_string());
        fields.push(record.intervention_norm.to_string());
        self.writer.write_record(&fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, FilterError> {
        self.writer.flush()?;
        self.writer.into_inner().map_err(|e| FilterError::Io(e.into_error()))
    }
}

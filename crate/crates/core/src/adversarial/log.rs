use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Which network a logged step updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    #[serde(rename = "D")]
    Discriminator,
    #[serde(rename = "F")]
    Extractor,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Discriminator => "D",
            StepKind::Extractor => "F",
        }
    }
}

/// One optimizer step. Loss columns that do not apply to the step are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Combined iteration (k discriminator steps plus one extractor step).
    pub iteration: usize,
    pub epoch: usize,
    pub phase: StepKind,
    pub l_emb: Option<f64>,
    pub l_reg: Option<f64>,
    pub l_atl: Option<f64>,
    pub l_cam: Option<f64>,
    pub l_acn: Option<f64>,
    pub lr_f: f64,
    pub lr_d: Option<f64>,
}

/// Angle statistics of the mined triplets at one extractor step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub step: usize,
    pub loss: f64,
    pub mean_theta_ap: f64,
    pub mean_theta_an: f64,
    pub active_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Free-form lines written as `#` comments above the CSV header.
    pub notes: Vec<String>,
    pub records: Vec<LogRecord>,
    pub diagnostics: Vec<DiagnosticRecord>,
}

fn cell(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        let _ = write!(out, "{v:?}");
    }
}

impl TrainLog {
    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    /// Checks that phases follow `(D × k, F)` repeated, or `F` alone when
    /// `k` is zero.
    pub fn follows_alternation(&self, k: usize) -> bool {
        let mut d_run = 0;
        for r in &self.records {
            match r.phase {
                StepKind::Discriminator => d_run += 1,
                StepKind::Extractor => {
                    if d_run != k {
                        return false;
                    }
                    d_run = 0;
                }
            }
        }
        d_run == 0
    }

    pub fn count(&self, phase: StepKind) -> usize {
        self.records.iter().filter(|r| r.phase == phase).count()
    }

    pub fn last(&self, phase: StepKind) -> Option<&LogRecord> {
        self.records.iter().rev().find(|r| r.phase == phase)
    }

    /// CSV with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        out.push_str("iteration,epoch,phase,l_emb,l_reg,l_atl,l_cam,l_acn,lr_f,lr_d\n");
        for r in &self.records {
            let _ = write!(out, "{},{},{}", r.iteration, r.epoch, r.phase.as_str());
            for v in [
                r.l_emb,
                r.l_reg,
                r.l_atl,
                r.l_cam,
                r.l_acn,
                Some(r.lr_f),
                r.lr_d,
            ] {
                cell(&mut out, v);
            }
            out.push('\n');
        }
        out
    }

    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from("step,loss,mean_theta_ap,mean_theta_an,active_fraction\n");
        for d in &self.diagnostics {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?}",
                d.step, d.loss, d.mean_theta_ap, d.mean_theta_an, d.active_fraction
            );
        }
        out
    }
}

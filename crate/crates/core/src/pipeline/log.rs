use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::io;

pub const LOG_HEADER: &str = "epoch,total_loss,kl,pixel,gram,val_accuracy,seconds";

/// One completed epoch. Fields that do not apply to a phase are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub total_loss: f64,
    pub kl: Option<f64>,
    pub pixel: Option<f64>,
    pub gram: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

fn field(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl TrainingLog {
    /// CSV text. Wall time varies between runs, so the `seconds` column is
    /// left empty unless `with_seconds` is set.
    pub fn to_csv(&self, with_seconds: bool) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.total_loss,
                field(r.kl),
                field(r.pixel),
                field(r.gram),
                field(r.val_accuracy),
                if with_seconds { format!("{:.3}", r.seconds) } else { String::new() }
            );
        }
        out
    }

    pub fn write(&self, path: &Path, with_seconds: bool) -> Result<()> {
        io::write(path, self.to_csv(with_seconds).as_bytes())
    }
}

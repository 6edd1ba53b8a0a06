//! Training metrics stream: CSV with fixed columns
//! (epoch, step, loss, val_metric, lr, grad_norm).

use std::io::Write;
use std::path::Path;

pub const HEADER: &str = "epoch,step,loss,val_metric,lr,grad_norm";

#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub val_metric: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

pub struct MetricsWriter {
    file: std::fs::File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{HEADER}")?;
        Ok(MetricsWriter { file })
    }

    pub fn write(&mut self, row: &MetricsRow) -> std::io::Result<()> {
        // `{}` prints the shortest round-trip decimal, so identical runs
        // produce byte-identical files.
        writeln!(
            self.file,
            "{},{},{},{},{},{}",
            row.epoch, row.step, row.loss, row.val_metric, row.lr, row.grad_norm
        )
    }
}

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::ParamLayout;

/// One meta-step of the gradient audit.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditRow {
    pub step: usize,
    pub meta_norm: f64,
    pub oracle_norm: Option<f64>,
    pub rel_error: Option<f64>,
    /// Meta-gradient norm per parameter group, in layout order.
    pub group_norms: Vec<f64>,
}

impl AuditRow {
    pub fn new(step: usize, meta: &Tensor, oracle: Option<&Tensor>, layout: &ParamLayout) -> Self {
        AuditRow {
            step,
            meta_norm: meta.norm(),
            oracle_norm: oracle.map(Tensor::norm),
            rel_error: oracle.map(|o| meta.rel_error(o)),
            group_norms: layout
                .group_norms(meta)
                .into_iter()
                .map(|(_, n)| n)
                .collect(),
        }
    }
}

/// CSV dump of meta-gradient norms (and oracle agreement, when computed)
/// per meta-step.
pub struct GradientAudit {
    path: PathBuf,
    out: BufWriter<File>,
}

impl GradientAudit {
    pub fn create(path: impl AsRef<Path>, layout: &ParamLayout) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let mut header = String::from("step,meta_norm,oracle_norm,rel_error");
        for g in layout.groups() {
            header.push_str(&format!(",{g}_norm"));
        }
        writeln!(out, "{header}").map_err(|e| Error::io(&path, e))?;
        Ok(GradientAudit { path, out })
    }

    pub fn write(&mut self, row: &AuditRow) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let mut line = format!(
            "{},{:e},{},{}",
            row.step,
            row.meta_norm,
            opt(row.oracle_norm),
            opt(row.rel_error)
        );
        for n in &row.group_norms {
            line.push_str(&format!(",{n:e}"));
        }
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

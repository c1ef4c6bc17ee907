use std::path::Path;

use super::{EvalAccess, LabeledExample, NoisyExample};
use crate::error::{Error, Result};

/// Read `f0,…,f{d−1},label` rows; columns after `label` are ignored.
/// Returns `(dim, examples)`.
pub fn read_labeled_csv(path: impl AsRef<Path>) -> Result<(usize, Vec<LabeledExample>)> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let dim = headers.iter().position(|h| h == "label").unwrap_or(0);
    let expected: Vec<String> = (0..dim)
        .map(|i| format!("f{i}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    if dim == 0
        || headers
            .iter()
            .take(dim + 1)
            .ne(expected.iter().map(String::as_str))
    {
        return Err(Error::format(
            path,
            format!("expected header {}", expected.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| Error::format(path, format!("row {}: bad {what}", row + 1));
        let x = (0..dim)
            .map(|i| rec[i].trim().parse::<f64>().map_err(|_| bad("feature")))
            .collect::<Result<Vec<_>>>()?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(bad("feature"));
        }
        let y = rec[dim].trim().parse::<usize>().map_err(|_| bad("label"))?;
        out.push(LabeledExample { x, y });
    }
    Ok((dim, out))
}

/// Write `f0,…,f{d−1},label,noisy_label,true_label`, where `label` is the
/// observed label so the file can be read back as a training set.
pub fn write_noisy_csv(
    path: impl AsRef<Path>,
    examples: &[NoisyExample],
    access: &EvalAccess,
) -> Result<()> {
    let path = path.as_ref();
    let dim = examples.first().map(|e| e.x.len()).unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    header.extend(["label", "noisy_label", "true_label"].map(String::from));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for e in examples {
        let mut rec: Vec<String> = e.x.iter().map(|v| format!("{v}")).collect();
        rec.push(e.observed.to_string());
        rec.push(e.observed.to_string());
        rec.push(e.true_label(access).to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

//! CSV export: `sample_id,person_id,camera_id,split,x0,..,x{d-1}`.

use std::fmt::Write as _;

use super::{LabeledDataset, Split};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Serializes the dataset with shortest round-trip float formatting, so the
/// output is byte-identical for identical datasets.
pub fn write_manifest(dataset: &LabeledDataset) -> String {
    let mut out = String::from("sample_id,person_id,camera_id,split");
    for j in 0..dataset.input_dim() {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for i in 0..dataset.len() {
        let _ = write!(
            out,
            "{i},{},{},{}",
            dataset.person_ids[i],
            dataset.camera_ids[i],
            dataset.splits[i].as_str()
        );
        for v in dataset.inputs.row(i) {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn read_manifest(text: &str) -> Result<LabeledDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Consistency("empty manifest".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 || cols[..4] != ["sample_id", "person_id", "camera_id", "split"] {
        return Err(Error::Consistency(format!(
            "unexpected manifest header: {header}"
        )));
    }
    let dim = cols.len() - 4;
    let (mut data, mut pids, mut cams, mut splits) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (line_no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Consistency(format!("manifest line {}: {what}", line_no + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(bad(&format!(
                "expected {} fields, got {}",
                cols.len(),
                fields.len()
            )));
        }
        pids.push(
            fields[1]
                .parse::<usize>()
                .map_err(|_| bad("bad person_id"))?,
        );
        cams.push(
            fields[2]
                .parse::<usize>()
                .map_err(|_| bad("bad camera_id"))?,
        );
        splits.push(Split::parse(fields[3]).ok_or_else(|| bad("bad split tag"))?);
        for f in &fields[4..] {
            data.push(f.parse::<f64>().map_err(|_| bad("bad value"))?);
        }
    }
    let n = pids.len();
    LabeledDataset::new(Tensor::matrix(n, dim, data)?, pids, cams, splits, None)
}

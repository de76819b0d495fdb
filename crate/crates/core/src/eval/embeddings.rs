use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::losses::FeatureBatch;

/// CSV `person_id,camera_id,f1,..,fd` with 12 fixed decimals.
pub fn format_embeddings(batch: &FeatureBatch) -> String {
    let mut out = String::from("person_id,camera_id");
    for j in 1..=batch.dim() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for i in 0..batch.len() {
        let _ = write!(out, "{},{}", batch.person_ids[i], batch.camera_ids[i]);
        for v in batch.features.row(i) {
            let _ = write!(out, ",{v:.12}");
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings(batch: &FeatureBatch, path: &Path) -> Result<()> {
    std::fs::write(path, format_embeddings(batch))?;
    Ok(())
}

pub fn parse_embeddings(text: &str) -> Result<FeatureBatch> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Consistency("empty embedding file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[..2] != ["person_id", "camera_id"] {
        return Err(Error::Consistency(format!(
            "unexpected embedding header: {header}"
        )));
    }
    let dim = cols.len() - 2;
    let (mut data, mut pids, mut cams) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let bad = || Error::Consistency(format!("embedding row {} is malformed", n + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(bad());
        }
        pids.push(fields[0].parse().map_err(|_| bad())?);
        cams.push(fields[1].parse().map_err(|_| bad())?);
        for f in &fields[2..] {
            data.push(f.parse::<f64>().map_err(|_| bad())?);
        }
    }
    FeatureBatch::new(Tensor::matrix(pids.len(), dim, data)?, pids, cams)
}

/// How tightly classes cluster by angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularSpread {
    /// Mean angle between a sample and its class centroid direction.
    pub within_class_mean_deviation: f64,
    /// Mean angle between the centroid directions of distinct classes.
    pub between_centroid_mean_separation: f64,
    pub num_classes: usize,
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 1e-12).then(|| v.iter().map(|x| x / n).collect())
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x * y)
        .sum::<f64>()
        .clamp(-1.0, 1.0)
        .acos()
}

/// Centroid of a class = normalized mean of its unit-normalized samples.
pub fn angular_spread(batch: &FeatureBatch) -> Result<AngularSpread> {
    let mut classes: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for i in 0..batch.len() {
        let u = unit(batch.features.row(i))
            .ok_or_else(|| Error::Degenerate(format!("embedding row {i} has zero norm")))?;
        classes.entry(batch.person_ids[i]).or_default().push(u);
    }
    if classes.len() < 2 {
        return Err(Error::Usage(
            "angular spread needs at least 2 classes".into(),
        ));
    }
    let d = batch.dim();
    let mut centroids = Vec::with_capacity(classes.len());
    let (mut within, mut count) = (0.0, 0usize);
    for members in classes.values() {
        let mut mean = vec![0.0; d];
        for m in members {
            for (a, b) in mean.iter_mut().zip(m) {
                *a += b;
            }
        }
        let c =
            unit(&mean).ok_or_else(|| Error::Degenerate("class centroid has zero norm".into()))?;
        for m in members {
            within += angle(m, &c);
            count += 1;
        }
        centroids.push(c);
    }
    let (mut between, mut pairs) = (0.0, 0usize);
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            between += angle(&centroids[i], &centroids[j]);
            pairs += 1;
        }
    }
    Ok(AngularSpread {
        within_class_mean_deviation: within / count as f64,
        between_centroid_mean_separation: between / pairs as f64,
        num_classes: centroids.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn round_trip_to_fixed_precision() {
        let b = FeatureBatch::new(
            Tensor::from_rows(&[[0.123456789012345, -3.5], [1e-3, 2.0 / 3.0]]).unwrap(),
            vec![4, 5],
            vec![0, 1],
        )
        .unwrap();
        let text = format_embeddings(&b);
        assert!(text.starts_with("person_id,camera_id,f1,f2\n"));
        let back = parse_embeddings(&text).unwrap();
        assert_eq!(back.person_ids, b.person_ids);
        for (x, y) in back.features.data().iter().zip(b.features.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_set_is_header_only() {
        let b = FeatureBatch::new(Tensor::zeros(&[0, 3]), vec![], vec![]).unwrap();
        assert_eq!(format_embeddings(&b), "person_id,camera_id,f1,f2,f3\n");
        assert!(parse_embeddings(&format_embeddings(&b)).unwrap().is_empty());
    }

    #[test]
    fn spread_of_orthogonal_tight_clusters() {
        let b = FeatureBatch::new(
            Tensor::from_rows(&[[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [0.0, 3.0]]).unwrap(),
            vec![0, 0, 1, 1],
            vec![0; 4],
        )
        .unwrap();
        let s = angular_spread(&b).unwrap();
        assert!(s.within_class_mean_deviation.abs() < 1e-12);
        assert!((s.between_centroid_mean_separation - FRAC_PI_2).abs() < 1e-12);
    }
}

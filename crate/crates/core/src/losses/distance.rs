use serde::{Deserialize, Serialize};

use crate::autodiff::{matmul_raw, norm, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Distance used for mining and retrieval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Angular,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Angular => "angular",
        })
    }
}

fn check_nonzero_rows(x: &Tensor) -> Result<()> {
    for i in 0..x.rows() {
        let n = norm(x.row(i));
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Degenerate(format!(
                "feature row {i} has norm {n}; angles are undefined"
            )));
        }
    }
    Ok(())
}

/// `B×B` Euclidean distance matrix on the tape.
pub fn pairwise_euclidean(tape: &mut Tape, x: Var) -> Result<Var> {
    let b = tape.value(x).rows();
    if b < 2 {
        return Err(Error::BatchComposition(format!(
            "pairwise distances need at least 2 rows, got {b}"
        )));
    }
    tape.pairwise_euclidean(x)
}

/// Divides every row by its Euclidean norm. Zero rows are rejected.
pub fn normalize_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    check_nonzero_rows(tape.value(x))?;
    let n = tape.l2norm_rows(x)?;
    tape.div_rows(x, n)
}

/// `B×B` matrix of cosine similarities.
pub fn cosine_matrix(tape: &mut Tape, x: Var) -> Result<Var> {
    let u = normalize_rows(tape, x)?;
    let ut = tape.transpose(u)?;
    tape.matmul(u, ut)
}

/// `B×B` matrix of angles `arccos(clamp(cos, eps - 1, 1 - eps))`.
///
/// The diagonal is about `sqrt(2 * eps)` rather than zero because of the
/// clamp.
pub fn pairwise_angular(tape: &mut Tape, x: Var, eps: f64) -> Result<Var> {
    let b = tape.value(x).rows();
    if b < 2 {
        return Err(Error::BatchComposition(format!(
            "pairwise distances need at least 2 rows, got {b}"
        )));
    }
    let c = cosine_matrix(tape, x)?;
    let c = tape.clamp(c, eps - 1.0, 1.0 - eps)?;
    tape.arccos(c)
}

fn clamped_angle(cos: f64, eps: f64) -> f64 {
    cos.max(eps - 1.0).min(1.0 - eps).acos()
}

/// Distances between every row of `a` and every row of `b`, without a tape.
pub fn cross_distances(a: &Tensor, b: &Tensor, metric: Metric, eps: f64) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(Error::Dimension {
            op: "cross_distances",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (n, m, d) = (a.rows(), b.rows(), a.cols());
    match metric {
        Metric::Euclidean => {
            let mut out = Vec::with_capacity(n * m);
            for i in 0..n {
                let ai = a.row(i);
                for j in 0..m {
                    let s: f64 = ai
                        .iter()
                        .zip(b.row(j))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    out.push(s.sqrt());
                }
            }
            Tensor::matrix(n, m, out)
        }
        Metric::Angular => {
            check_nonzero_rows(a)?;
            check_nonzero_rows(b)?;
            let unit = |t: &Tensor| {
                let mut v = t.data().to_vec();
                for chunk in v.chunks_mut(d.max(1)) {
                    let n = norm(chunk);
                    chunk.iter_mut().for_each(|x| *x /= n);
                }
                v
            };
            let ua = unit(a);
            let ubt = {
                let ub = unit(b);
                let mut t = vec![0.0; ub.len()];
                for j in 0..m {
                    for k in 0..d {
                        t[k * m + j] = ub[j * d + k];
                    }
                }
                t
            };
            let cos = matmul_raw(&ua, &ubt, n, d, m);
            Tensor::matrix(
                n,
                m,
                cos.into_iter().map(|c| clamped_angle(c, eps)).collect(),
            )
        }
    }
}

/// Self-distance matrix without a tape.
pub fn distance_matrix(x: &Tensor, metric: Metric, eps: f64) -> Result<Tensor> {
    cross_distances(x, x, metric, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn euclidean_hand_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap());
        let d = pairwise_euclidean(&mut tape, x).unwrap();
        assert!((tape.value(d).get2(0, 1) - 2.2360680).abs() < 1e-7);
        assert_eq!(tape.value(d).get2(0, 0), 0.0);
    }

    #[test]
    fn angular_hand_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 0.0]]).unwrap());
        let d = pairwise_angular(&mut tape, x, 1e-7).unwrap();
        let v = tape.value(d);
        assert!((v.get2(0, 1) - FRAC_PI_4).abs() < 1e-12);
        assert!((v.get2(0, 2) - 4.4721e-4).abs() < 1e-8);
        assert!((v.get2(1, 1) - 4.4721e-4).abs() < 1e-8);
    }

    #[test]
    fn angular_rejects_zero_row() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap());
        let err = pairwise_angular(&mut tape, x, 1e-7).unwrap_err();
        assert!(
            matches!(err, Error::Degenerate(ref m) if m.contains("row 1")),
            "{err}"
        );
    }

    #[test]
    fn tape_and_plain_distances_agree() {
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..3).map(|j| ((i * 3 + j) as f64).sin() + 0.1).collect())
            .collect();
        let t = Tensor::from_rows(&rows).unwrap();
        for metric in [Metric::Euclidean, Metric::Angular] {
            let mut tape = Tape::new();
            let x = tape.constant(t.clone());
            let d = match metric {
                Metric::Euclidean => pairwise_euclidean(&mut tape, x).unwrap(),
                Metric::Angular => pairwise_angular(&mut tape, x, 1e-7).unwrap(),
            };
            let plain = distance_matrix(&t, metric, 1e-7).unwrap();
            for (a, b) in tape.value(d).data().iter().zip(plain.data()) {
                assert!((a - b).abs() < 1e-9, "{metric}: {a} vs {b}");
            }
        }
    }
}

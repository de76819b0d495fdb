//! The finite-difference suite must notice a wrong arccos derivative.

use angleforge::autodiff::{Tape, Tensor, Var};
use angleforge::gradsuite::{check_case, GradSample, LossCase, SuiteConfig};
use angleforge::losses::{cosine_matrix, LossConfig, Metric};
use angleforge::Result;

/// The angular hinge rebuilt with an arccos node whose backward pass is
/// scaled by `factor`.
fn angular_with_arccos(
    tape: &mut Tape,
    x: Var,
    s: &GradSample,
    c: &LossConfig,
    factor: f64,
) -> Result<Var> {
    let b = s.features.rows();
    let cos = cosine_matrix(tape, x)?;
    let cos = tape.clamp(cos, c.epsilon - 1.0, 1.0 - c.epsilon)?;
    let value = tape.value(cos).map(f64::acos);
    let theta = tape.custom(
        vec![cos],
        value,
        Box::new(move |ins, _, g| {
            let d: Vec<f64> = ins[0]
                .data()
                .iter()
                .zip(g.data())
                .map(|(x, g)| -factor * g / (1.0 - x * x).sqrt())
                .collect();
            vec![Tensor::new(ins[0].shape().to_vec(), d).unwrap()]
        }),
    );
    let tap = tape.gather(theta, s.triplets.positive_pairs(b))?;
    let tan = tape.gather(theta, s.triplets.negative_pairs(b))?;
    let diff = tape.sub(tap, tan)?;
    let shifted = tape.shift(diff, c.angular_margin);
    let hinge = tape.relu(shifted);
    tape.mean(hinge)
}

fn case(name: &'static str, loss: angleforge::gradsuite::LossFn) -> LossCase {
    let reference = angleforge::gradsuite::standard_cases()
        .into_iter()
        .find(|c| c.name == "L_emb")
        .unwrap();
    LossCase {
        name,
        mining: Metric::Angular,
        loss,
        kink: reference.kink,
    }
}

#[test]
fn faithful_rebuild_passes() {
    let c = case("L_emb rebuilt", |t, x, s, c| {
        angular_with_arccos(t, x, s, c, 1.0)
    });
    let r = check_case(&c, &SuiteConfig::default()).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn corrupted_arccos_is_detected() {
    let corrupted: [(f64, angleforge::gradsuite::LossFn); 3] = [
        (1.01, |t, x, s, c| angular_with_arccos(t, x, s, c, 1.01)),
        (0.9, |t, x, s, c| angular_with_arccos(t, x, s, c, 0.9)),
        (-1.0, |t, x, s, c| angular_with_arccos(t, x, s, c, -1.0)),
    ];
    for (factor, loss) in corrupted {
        let r = check_case(&case("L_emb corrupted", loss), &SuiteConfig::default()).unwrap();
        assert!(!r.passed, "factor {factor} slipped through: {r:?}");
        assert!(r.max_error > 1e-3, "{r:?}");
    }
}

use super::camera::{camera_loss, CameraDiscriminator};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::losses::{
    mine_and_score, normalize_rows, random_mine, score, AngleDiagnostics, EmbeddingLoss,
    FeatureBatch, LossConfig, Mining,
};
use crate::nn::{collect_grads, Adam, MlpExtractor, Phase};
use crate::rng::Rng;

/// One discriminator update on detached features. The features are
/// unit-normalized before entering the discriminator. Returns `L_cam` as
/// computed before the update.
pub fn d_step(
    batch: &FeatureBatch,
    disc: &mut CameraDiscriminator,
    opt: &mut Adam,
    smoothing: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.features.clone());
    let x = normalize_rows(&mut tape, x)?;
    let logits = disc.forward(&mut tape, x, &mut Phase::Train(rng), true)?;
    let loss = camera_loss(&mut tape, logits, &batch.camera_ids, smoothing)?;
    tape.backward(loss)?;
    let value = tape.value(loss).item();
    let mut params = disc.parameters_mut();
    collect_grads(&tape, &mut params);
    opt.step(&mut params)?;
    Ok(value)
}

/// What the extractor optimizes in one step.
#[derive(Clone, Debug, PartialEq)]
pub struct FStepSettings {
    pub kind: EmbeddingLoss,
    pub loss: LossConfig,
    pub mining: Mining,
}

/// Loss values seen by one extractor step (before the update).
#[derive(Clone, Debug, PartialEq)]
pub struct FStepReport {
    pub l_emb: f64,
    pub l_reg: Option<f64>,
    /// Embedding loss including the regularizer when present.
    pub l_atl: f64,
    pub l_cam: Option<f64>,
    /// `l_atl - w2 * l_cam`, or `l_atl` without a discriminator.
    pub l_acn: f64,
    pub diagnostics: AngleDiagnostics,
}

/// One extractor update on raw inputs.
///
/// Mines triplets, backpropagates the embedding loss, then, when
/// a discriminator is given, backpropagates `-w2 * L_cam` through it in
/// evaluation mode. The discriminator is only read.
pub fn f_step(
    batch: &FeatureBatch,
    extractor: &mut MlpExtractor,
    disc: Option<&CameraDiscriminator>,
    settings: &FStepSettings,
    opt: &mut Adam,
    rng: &mut Rng,
) -> Result<FStepReport> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.features.clone());
    let feats = extractor.forward(&mut tape, x, &mut Phase::Train(rng), true)?;
    let parts = match settings.mining {
        Mining::BatchHard => {
            mine_and_score(
                &mut tape,
                feats,
                &batch.person_ids,
                settings.kind,
                &settings.loss,
            )?
            .1
        }
        Mining::Random => {
            let triplets = random_mine(&batch.person_ids, rng)?;
            score(&mut tape, feats, &triplets, settings.kind, &settings.loss)?
        }
    };
    tape.backward(parts.total)?;
    let l_emb = tape.value(parts.emb).item();
    let l_reg = parts.reg.map(|r| tape.value(r).item());
    let l_atl = tape.value(parts.total).item();

    let mut l_cam = None;
    let mut l_acn = l_atl;
    if let Some(d) = disc {
        let w2 = settings.loss.cam_weight;
        let normed = normalize_rows(&mut tape, feats)?;
        let logits = d.forward(&mut tape, normed, &mut Phase::Eval, false)?;
        let cam = camera_loss(
            &mut tape,
            logits,
            &batch.camera_ids,
            settings.loss.smoothing,
        )?;
        let adv = tape.scale(cam, -w2);
        tape.backward(adv)?;
        let c = tape.value(cam).item();
        l_cam = Some(c);
        l_acn = super::acn_objective(l_atl, c, w2);
    }
    if !l_acn.is_finite() {
        return Err(Error::NonFinite {
            iteration: 0,
            last_good: None,
        });
    }
    let mut params = extractor.parameters_mut();
    collect_grads(&tape, &mut params);
    opt.step(&mut params)?;
    Ok(FStepReport {
        l_emb,
        l_reg,
        l_atl,
        l_cam,
        l_acn,
        diagnostics: parts.diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversarial::camera_loss;
    use crate::autodiff::Tensor;
    use crate::nn::{checksum, AdamConfig};
    use crate::rng::seeded;
    use rand::Rng as _;

    fn setup(seed: u64) -> (FeatureBatch, MlpExtractor, CameraDiscriminator) {
        let mut rng = seeded(seed, 99);
        let ids: Vec<usize> = (0..4).flat_map(|i| [i; 4]).collect();
        let cams: Vec<usize> = (0..16).map(|i| i % 3).collect();
        let x: Vec<f64> = (0..16 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = FeatureBatch::new(Tensor::matrix(16, 6, x).unwrap(), ids, cams).unwrap();
        let f = MlpExtractor::new(&[6, 8, 5], 0.0, &mut rng).unwrap();
        let d = CameraDiscriminator::new(5, 16, 3, 0.0, false, &mut rng).unwrap();
        (batch, f, d)
    }

    fn settings(w2: f64) -> FStepSettings {
        let mut loss = LossConfig::angular();
        loss.cam_weight = w2;
        FStepSettings {
            kind: EmbeddingLoss::Angular,
            loss,
            mining: Mining::BatchHard,
        }
    }

    fn cam_loss_of(f: &MlpExtractor, d: &CameraDiscriminator, b: &FeatureBatch) -> f64 {
        let mut tape = Tape::new();
        let x = tape.constant(f.embed(&b.features).unwrap());
        let x = normalize_rows(&mut tape, x).unwrap();
        let y = d.forward(&mut tape, x, &mut Phase::Eval, false).unwrap();
        let l = camera_loss(&mut tape, y, &b.camera_ids, 0.1).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn zero_weight_matches_plain_step() {
        let (b, f0, d) = setup(1);
        let mut fa = f0.clone();
        let mut fb = f0.clone();
        let mut oa = Adam::new(AdamConfig::new(1e-2, 5e-4), &fa.parameters()).unwrap();
        let mut ob = Adam::new(AdamConfig::new(1e-2, 5e-4), &fb.parameters()).unwrap();
        let ra = f_step(
            &b,
            &mut fa,
            Some(&d),
            &settings(0.0),
            &mut oa,
            &mut seeded(3, 0),
        )
        .unwrap();
        let rb = f_step(
            &b,
            &mut fb,
            None,
            &settings(0.0),
            &mut ob,
            &mut seeded(3, 0),
        )
        .unwrap();
        assert_eq!(ra.l_atl, rb.l_atl);
        for (pa, pb) in fa.parameters().iter().zip(fb.parameters()) {
            for (x, y) in pa.value.data().iter().zip(pb.value.data()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn f_step_leaves_discriminator_untouched_and_raises_its_loss() {
        let (b, mut f, d) = setup(2);
        let before = checksum(d.parameters());
        let l0 = cam_loss_of(&f, &d, &b);
        let mut opt = Adam::new(AdamConfig::new(1e-2, 0.0), &f.parameters()).unwrap();
        for _ in 0..5 {
            f_step(
                &b,
                &mut f,
                Some(&d),
                &settings(100.0),
                &mut opt,
                &mut seeded(4, 0),
            )
            .unwrap();
        }
        assert_eq!(checksum(d.parameters()), before);
        assert!(cam_loss_of(&f, &d, &b) > l0);
    }

    #[test]
    fn d_step_leaves_extractor_untouched_and_lowers_loss() {
        let (b, f, mut d) = setup(3);
        let feats = FeatureBatch::new(
            f.embed(&b.features).unwrap(),
            b.person_ids.clone(),
            b.camera_ids.clone(),
        )
        .unwrap();
        let before = checksum(f.parameters());
        let l0 = cam_loss_of(&f, &d, &b);
        let mut opt = Adam::new(AdamConfig::new(1e-2, 0.0), &d.parameters()).unwrap();
        for _ in 0..20 {
            d_step(&feats, &mut d, &mut opt, 0.1, &mut seeded(5, 0)).unwrap();
        }
        assert_eq!(checksum(f.parameters()), before);
        assert!(cam_loss_of(&f, &d, &b) < l0);
    }

    #[test]
    fn acn_gradient_is_linear_in_its_parts() {
        let (b, f, d) = setup(4);
        let w2 = 0.37;
        let cfg = settings(w2);
        let grad = |with_atl: bool, with_cam: bool| -> Tensor {
            let mut tape = Tape::new();
            let x = tape.variable(f.embed(&b.features).unwrap());
            let (_, parts) =
                mine_and_score(&mut tape, x, &b.person_ids, cfg.kind, &cfg.loss).unwrap();
            let normed = normalize_rows(&mut tape, x).unwrap();
            let logits = d
                .forward(&mut tape, normed, &mut Phase::Eval, false)
                .unwrap();
            let cam = camera_loss(&mut tape, logits, &b.camera_ids, 0.1).unwrap();
            let adv = tape.scale(cam, -w2);
            let total = match (with_atl, with_cam) {
                (true, true) => tape.add(parts.total, adv).unwrap(),
                (true, false) => parts.total,
                _ => adv,
            };
            tape.backward(total).unwrap();
            tape.grad_or_zeros(x)
        };
        let (all, atl, cam) = (grad(true, true), grad(true, false), grad(false, true));
        for ((a, b), c) in all.data().iter().zip(atl.data()).zip(cam.data()) {
            assert!((a - (b + c)).abs() < 1e-10);
        }
    }
}

//! Property tests over the public API.

use angleforge::adversarial::{camera_loss, smoothed_targets};
use angleforge::autodiff::{Tape, Tensor};
use angleforge::data::{
    encode_idx_images, encode_idx_labels, flip_horizontal, parse_idx_images, parse_idx_labels,
    read_idx, read_manifest, write_manifest, IdxImages, LabeledDataset, Split,
};
use angleforge::eval::{
    average_precision, evaluate, format_embeddings, parse_embeddings, Protocol,
};
use angleforge::losses::{
    atl_emb, batch_hard_mine, distance_matrix, pk_sample, FeatureBatch, Metric,
};
use angleforge::nn::{checkpoint, LrSchedule, Parameter};
use angleforge::rng::seeded;
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = seeded(seed, 7);
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    )
    .unwrap()
}

fn pk_labels(p: usize, k: usize) -> Vec<usize> {
    (0..p * k).map(|i| i / k).collect()
}

fn row_order(d: &Tensor, i: usize) -> Vec<usize> {
    let row = d.row(i);
    let mut o: Vec<usize> = (0..row.len()).filter(|&j| j != i).collect();
    o.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    o
}

fn normalized(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    let c = x.cols();
    for r in y.data_mut().chunks_mut(c) {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= n);
    }
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mined_triplets_are_valid_and_extreme(p in 2usize..6, k in 2usize..5, dim in 1usize..6, seed: u64) {
        let x = gaussian(p * k, dim, seed);
        let ids = pk_labels(p, k);
        for metric in [Metric::Euclidean, Metric::Angular] {
            let d = distance_matrix(&x, metric, 1e-7).unwrap();
            let t = batch_hard_mine(&d, &ids).unwrap();
            prop_assert_eq!(t.len(), p * k);
            for tr in t.iter() {
                prop_assert_eq!(ids[tr.anchor], ids[tr.positive]);
                prop_assert_ne!(tr.anchor, tr.positive);
                prop_assert_ne!(ids[tr.anchor], ids[tr.negative]);
                let row = d.row(tr.anchor);
                for j in 0..p * k {
                    if j != tr.anchor && ids[j] == ids[tr.anchor] {
                        prop_assert!(row[j] <= row[tr.positive]);
                    } else if ids[j] != ids[tr.anchor] {
                        prop_assert!(row[j] >= row[tr.negative]);
                    }
                }
            }
        }
    }

    #[test]
    fn normalized_euclidean_orders_like_angles(n in 3usize..16, dim in 2usize..8, seed: u64) {
        let x = gaussian(n, dim, seed);
        let de = distance_matrix(&normalized(&x), Metric::Euclidean, 1e-7).unwrap();
        let da = distance_matrix(&x, Metric::Angular, 1e-7).unwrap();
        for i in 0..n {
            prop_assert_eq!(row_order(&de, i), row_order(&da, i));
        }
    }

    #[test]
    fn angular_loss_ignores_row_scale(p in 2usize..5, k in 2usize..4, seed: u64, scales in prop::collection::vec(0.01f64..100.0, 20)) {
        let x = gaussian(p * k, 4, seed);
        let ids = pk_labels(p, k);
        let t = batch_hard_mine(&distance_matrix(&x, Metric::Angular, 1e-7).unwrap(), &ids).unwrap();
        let mut y = x.clone();
        for (r, s) in y.data_mut().chunks_mut(4).zip(&scales) {
            r.iter_mut().for_each(|v| *v *= s);
        }
        let value = |m: &Tensor| {
            let mut tape = Tape::new();
            let v = tape.variable(m.clone());
            let l = atl_emb(&mut tape, v, &t, 0.08, 1e-7).unwrap().loss;
            tape.value(l).item()
        };
        prop_assert!((value(&x) - value(&y)).abs() <= 1e-12);
    }

    #[test]
    fn average_precision_bounds(flags in prop::collection::vec(any::<bool>(), 1..40)) {
        match average_precision(&flags) {
            Ok(ap) => {
                prop_assert!(ap > 0.0 && ap <= 1.0);
                let first = flags.iter().position(|&f| f).unwrap();
                prop_assert_eq!(ap == 1.0, flags.iter().skip(first).take_while(|&&f| f).count() == flags.iter().filter(|&&f| f).count() && first == 0);
            }
            Err(_) => prop_assert!(!flags.contains(&true)),
        }
    }

    #[test]
    fn cmc_is_monotone_and_bounded(ids in 2usize..6, per in 2usize..5, seed: u64) {
        let n = ids * per;
        let x = gaussian(2 * n, 3, seed);
        let pids: Vec<usize> = (0..n).map(|i| i % ids).collect();
        let q = FeatureBatch::new(x.select_rows(&(0..n).collect::<Vec<_>>()), pids.clone(), vec![0; n]).unwrap();
        let g = FeatureBatch::new(x.select_rows(&(n..2 * n).collect::<Vec<_>>()), pids, vec![1; n]).unwrap();
        for metric in [Metric::Euclidean, Metric::Angular] {
            let r = evaluate(&q, &g, metric, Protocol::default()).unwrap();
            prop_assert!(r.map >= 0.0 && r.map <= 1.0);
            prop_assert!(r.cmc.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(r.cmc.iter().all(|&c| (0.0..=1.0).contains(&c)));
            prop_assert_eq!(*r.cmc.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn camera_loss_is_shift_invariant(b in 1usize..6, n in 2usize..5, shift in -50.0f64..50.0, alpha in 0.0f64..0.9, seed: u64) {
        let logits = gaussian(b, n, seed);
        let cams: Vec<usize> = (0..b).map(|i| i % n).collect();
        let value = |m: Tensor| {
            let mut tape = Tape::new();
            let v = tape.constant(m);
            let l = camera_loss(&mut tape, v, &cams, alpha).unwrap();
            tape.value(l).item()
        };
        prop_assert!((value(logits.clone()) - value(logits.map(|v| v + shift))).abs() < 1e-9);
    }

    #[test]
    fn smoothed_targets_are_distributions(b in 1usize..8, n in 2usize..6, alpha in 0.0f64..0.99) {
        let cams: Vec<usize> = (0..b).map(|i| (i * 7) % n).collect();
        let t = smoothed_targets(&cams, n, alpha).unwrap();
        for (i, row) in t.data().chunks(n).enumerate() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let hot = row[cams[i]];
            prop_assert!(row.iter().enumerate().all(|(j, &v)| j == cams[i] || v <= hot));
        }
    }

    #[test]
    fn pk_sample_composition(p in 1usize..6, k in 1usize..6, per in 1usize..8, extra in 0usize..4, seed: u64) {
        let labels: Vec<usize> = (0..(p + extra) * per).map(|i| i / per).collect();
        let idx = pk_sample(&labels, p, k, &mut seeded(seed, 0)).unwrap();
        prop_assert_eq!(idx.len(), p * k);
        let mut counts = std::collections::BTreeMap::new();
        for &i in &idx {
            *counts.entry(labels[i]).or_insert(0usize) += 1;
        }
        prop_assert_eq!(counts.len(), p);
        prop_assert!(counts.values().all(|&c| c == k));
        if per >= k {
            let mut u = idx.clone();
            u.sort();
            u.dedup();
            prop_assert_eq!(u.len(), idx.len());
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>(), 1..30), cols in 1usize..4) {
        let rows = values.len() / cols;
        prop_assume!(rows > 0);
        let m = Tensor::matrix(rows, cols, values[..rows * cols].to_vec()).unwrap();
        let params = vec![Parameter::new("w", m.clone()), Parameter::new("b", Tensor::vector(values.clone()))];
        let back = checkpoint::decode(&checkpoint::encode(&params)).unwrap();
        prop_assert_eq!(back.len(), 2);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back[0].1), bits(&m));
        prop_assert_eq!(back[0].1.shape(), m.shape());
        prop_assert_eq!(bits(&back[1].1), bits(&Tensor::vector(values)));
    }

    #[test]
    fn checkpoint_truncation_is_an_error(cut in 0usize..200) {
        let params = vec![Parameter::new("w", Tensor::matrix(3, 4, vec![0.5; 12]).unwrap())];
        let bytes = checkpoint::encode(&params);
        prop_assume!(cut < bytes.len());
        prop_assert!(checkpoint::decode(&bytes[..cut]).is_err());
    }

    #[test]
    fn idx_round_trip(count in 1usize..6, rows in 1usize..5, cols in 1usize..5, seed: u64) {
        let mut rng = seeded(seed, 1);
        let pixels: Vec<u8> = (0..count * rows * cols).map(|_| rng.random()).collect();
        let labels: Vec<u8> = (0..count).map(|_| rng.random_range(0..10)).collect();
        let img = IdxImages { count, rows, cols, pixels };
        let bytes = encode_idx_images(&img);
        let parsed = parse_idx_images(&bytes).unwrap();
        prop_assert_eq!(&parsed, &img);
        let lab = parse_idx_labels(&encode_idx_labels(&labels)).unwrap();
        let ds = read_idx(&parsed, &lab).unwrap();
        prop_assert!(ds.inputs.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(encode_idx_images(&ds.to_idx_images().unwrap()), bytes);
    }

    #[test]
    fn flip_is_an_involution(w in 1usize..6, h in 1usize..6, seed: u64) {
        let x = gaussian(1, w * h, seed);
        let once = flip_horizontal(x.data(), w, h).unwrap();
        prop_assert_eq!(flip_horizontal(&once, w, h).unwrap(), x.data().to_vec());
    }

    #[test]
    fn manifest_round_trip(n in 1usize..10, dim in 1usize..4, seed: u64) {
        let x = gaussian(n, dim, seed);
        let splits = [Split::Train, Split::Query, Split::Gallery, Split::Test];
        let ds = LabeledDataset::new(
            x,
            (0..n).map(|i| i % 3).collect(),
            (0..n).map(|i| i % 2).collect(),
            (0..n).map(|i| splits[i % 4]).collect(),
            None,
        )
        .unwrap();
        prop_assert_eq!(read_manifest(&write_manifest(&ds)).unwrap(), ds);
    }

    #[test]
    fn embeddings_round_trip(n in 0usize..8, dim in 1usize..5, seed: u64) {
        let x = gaussian(n, dim, seed);
        let b = FeatureBatch::new(x, (0..n).collect(), vec![0; n]).unwrap();
        let text = format_embeddings(&b);
        if n == 0 {
            prop_assert_eq!(text.lines().count(), 1);
        } else {
            let back = parse_embeddings(&text).unwrap();
            prop_assert_eq!(&back.person_ids, &b.person_ids);
            for (a, c) in back.features.data().iter().zip(b.features.data()) {
                prop_assert!((a - c).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn lr_schedule_is_monotone(base in 1e-6f64..1.0, m1 in 1usize..50, gap in 1usize..50, epoch in 0usize..200) {
        let s = LrSchedule::new(base, vec![m1, m1 + gap], 0.1).unwrap();
        prop_assert!(s.lr_at(epoch + 1) <= s.lr_at(epoch));
        prop_assert!(s.lr_at(epoch) <= base);
    }
}

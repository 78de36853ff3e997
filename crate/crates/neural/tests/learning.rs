use instenc_neural::learning::*;
use instenc_neural::synthetic::{image_task, ImageTaskSpec};
use instenc_neural::{ImageEncoderSpec, PatchEncoderSpec};
use instenc_tensor::{seeded_init, Init, Tensor};
use proptest::prelude::*;

/// Sets of 3 rows in 4 dims whose mean is pushed to ±1 by the label.
fn separable(n: usize, seed: u64) -> LabeledSets {
    let noise = seeded_init(&[n * 3, 4], Init::Gaussian { mean: 0.0, std: 0.3 }, seed).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let data: Vec<f64> = noise
        .data()
        .chunks(4)
        .enumerate()
        .flat_map(|(r, row)| {
            let sign = if labels[r / 3] == 1 { 1.0 } else { -1.0 };
            row.iter().map(move |x| x + sign).collect::<Vec<_>>()
        })
        .collect();
    LabeledSets::new(Tensor::new(vec![n * 3, 4], data).unwrap(), 3, labels).unwrap()
}

#[test]
fn separable_sets_are_learned() {
    for kind in [ClassifierKind::SetPoolMlp, ClassifierKind::Logistic, ClassifierKind::Attention] {
        let model = train_classifier(&separable(200, 1), None, &ClassifierSpec::new(kind, 3)).unwrap();
        let test = separable(100, 2);
        assert!(model.accuracy(&test).unwrap() >= 0.95, "{kind:?}");
        assert!(evaluate_auc(&model, &test).unwrap() > 0.99, "{kind:?}");
    }
}

/// Noise sets with labels from an unrelated draw.
fn unrelated(n: usize, seed: u64) -> LabeledSets {
    let rows = seeded_init(&[n * 3, 4], Init::Gaussian { mean: 0.0, std: 1.0 }, seed).unwrap();
    let coin = seeded_init(&[n], Init::Uniform { low: 0.0, high: 1.0 }, seed + 1000).unwrap();
    LabeledSets::new(rows, 3, coin.data().iter().map(|&u| usize::from(u < 0.5)).collect()).unwrap()
}

#[test]
fn unrelated_labels_give_chance_auc() {
    let model = train_classifier(&unrelated(200, 4), None, &ClassifierSpec::new(ClassifierKind::SetPoolMlp, 0)).unwrap();
    let auc = evaluate_auc(&model, &unrelated(400, 5)).unwrap();
    assert!((auc - 0.5).abs() < 0.1, "{auc}");
}

#[test]
fn training_is_deterministic() {
    let spec = ClassifierSpec::new(ClassifierKind::Attention, 7);
    let a = train_classifier(&separable(60, 1), None, &spec).unwrap();
    let b = train_classifier(&separable(60, 1), None, &spec).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_class_auc_is_an_error() {
    assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
}

fn owners(n: usize) -> Vec<OwnerImages> {
    let a = image_task(&ImageTaskSpec::new(8, n, 11));
    let b = image_task(&ImageTaskSpec {
        brightness_shift: 0.1,
        ..ImageTaskSpec::new(8, n, 12)
    });
    vec![
        OwnerImages {
            images: a.images,
            labels: a.labels,
        },
        OwnerImages {
            images: b.images,
            labels: b.labels,
        },
    ]
}

#[test]
fn clear_setting_with_an_empty_owner_is_the_single_owner_run() {
    let mut o = owners(120);
    o[1] = OwnerImages {
        images: Tensor::zeros(&[0, 1, 8, 8]),
        labels: vec![],
    };
    let encoding = Encoding::Encoder {
        spec: ImageEncoderSpec::Patch(PatchEncoderSpec::desk(2, 8, 8, 0)),
    };
    let cls = ClassifierSpec {
        epochs: 5,
        ..ClassifierSpec::new(ClassifierKind::SetPoolMlp, 0)
    };
    let single = run_setting(Setting::SingleOwner, &o[..1], &encoding, &cls, SplitPreset::Standard, 3).unwrap();
    let clear = run_setting(Setting::CombinedClear, &o, &encoding, &cls, SplitPreset::Standard, 3).unwrap();
    assert_eq!(single.per_owner_auc[0], clear.per_owner_auc[0]);
    assert_eq!(clear.per_owner_auc[1], None);
    assert!(run_setting(Setting::CombinedRandomized, &o[..1], &encoding, &cls, SplitPreset::Standard, 3).is_err());
}

#[test]
fn randomized_setting_gives_each_owner_its_own_encoder() {
    let o = owners(60);
    let encoding = Encoding::Encoder {
        spec: ImageEncoderSpec::Patch(PatchEncoderSpec::desk(2, 8, 8, 0)),
    };
    let cls = ClassifierSpec {
        epochs: 1,
        ..ClassifierSpec::new(ClassifierKind::Logistic, 0)
    };
    let r = run_setting(Setting::CombinedRandomized, &o, &encoding, &cls, SplitPreset::Standard, 1).unwrap();
    let c = run_setting(Setting::CombinedClear, &o, &encoding, &cls, SplitPreset::Standard, 1).unwrap();
    assert_ne!(r.encoder_seeds[0], r.encoder_seeds[1]);
    assert_eq!(c.encoder_seeds[0], c.encoder_seeds[1]);
    assert_eq!(r.split, [0.6, 0.2, 0.2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn permuting_set_elements_leaves_scores_bit_identical(seed in 0u64..1000, perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle()) {
        let rows = seeded_init(&[4 * 5, 3], Init::Gaussian { mean: 0.0, std: 1.0 }, seed).unwrap();
        let labels = vec![0, 1, 0, 1];
        let data = LabeledSets::new(rows.clone(), 5, labels).unwrap();
        for kind in [ClassifierKind::SetPoolMlp, ClassifierKind::Logistic, ClassifierKind::Attention] {
            let spec = ClassifierSpec { epochs: 0, ..ClassifierSpec::new(kind, seed) };
            let model = train_classifier(&data, None, &spec).unwrap();
            let order: Vec<usize> = (0..4).flat_map(|s| perm.iter().map(move |p| s * 5 + p)).collect();
            let a = model.scores(&rows, 5).unwrap();
            let b = model.scores(&rows.select_rows(&order), 5).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

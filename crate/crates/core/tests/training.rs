use relkd::harness::{
    evaluate, generate_dataset, prepare, train, train_prepared, DatasetConfig, InstanceMode,
    TeacherSource, TrainConfig,
};

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

#[test]
fn relational_losses_settle_over_first_five_epochs() {
    let mut stable = 0;
    for seed in 0..5u64 {
        let ds = generate_dataset(&DatasetConfig {
            seed,
            ..DatasetConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            seed,
            epochs: 5,
            ..TrainConfig::default()
        };
        let h = train(&cfg, &ds).unwrap().history;
        let pair: Vec<f64> = h.iter().map(|e| e.pair).collect();
        let trip: Vec<f64> = h.iter().map(|e| e.triplet).collect();
        println!("seed {seed}: pair {pair:.5?} triplet {trip:.5?}");
        if non_increasing(&pair) && non_increasing(&trip) {
            stable += 1;
        }
    }
    assert!(stable >= 4, "{stable}/5 runs non-increasing");
}

#[test]
fn same_identity_teacher_views_share_labels() {
    let ds = generate_dataset(&DatasetConfig {
        num_identities: 5,
        samples_per_identity: 10,
        seed: 2,
        ..DatasetConfig::default()
    })
    .unwrap();
    let own = prepare(&ds, &TrainConfig::default()).unwrap();
    let ar = prepare(
        &ds,
        &TrainConfig {
            teacher_source: TeacherSource::SameIdentity,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(own.centroids, ar.centroids);
    let mut swapped = 0;
    for &i in &ds.train {
        let row = ar.teacher_features.row(i);
        let source = (0..ds.samples.len())
            .find(|&j| own.teacher_features.row(j) == row)
            .expect("teacher view is some sample's feature");
        assert_eq!(ds.samples[source].label, ds.samples[i].label);
        if source != i {
            swapped += 1;
        }
    }
    assert_eq!(swapped, ds.train.len());
}

#[test]
fn soft_and_hard_report_equal_instance_losses() {
    let ds = generate_dataset(&DatasetConfig {
        num_identities: 8,
        samples_per_identity: 12,
        seed: 5,
        ..DatasetConfig::default()
    })
    .unwrap();
    let soft = TrainConfig {
        epochs: 4,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let hard = TrainConfig {
        mode: InstanceMode::Hard,
        ..soft.clone()
    };
    let p = prepare(&ds, &soft).unwrap();
    let a = train_prepared(&soft, &p).unwrap();
    let b = train_prepared(&hard, &p).unwrap();
    for (x, y) in a.history.iter().zip(&b.history) {
        assert!((x.instance - y.instance).abs() <= 1e-12 * x.instance.max(1.0));
    }
    let ea = evaluate(&a.model, &p, &soft).unwrap();
    let eb = evaluate(&b.model, &p, &hard).unwrap();
    assert_eq!(ea.accuracy, eb.accuracy);
    assert!((ea.loss.total - eb.loss.total).abs() <= 1e-12 * ea.loss.total);
}

#[test]
fn training_improves_verification_over_initialization() {
    let ds = generate_dataset(&DatasetConfig {
        num_identities: 8,
        samples_per_identity: 14,
        seed: 9,
        ..DatasetConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 12,
        batch_size: 32,
        lr_step: 8,
        ..TrainConfig::default()
    };
    let p = prepare(&ds, &cfg).unwrap();
    let out = train_prepared(&cfg, &p).unwrap();
    let before = evaluate(&out.initial, &p, &cfg).unwrap();
    let after = evaluate(&out.model, &p, &cfg).unwrap();
    assert!(after.loss.total < before.loss.total);
    assert!(out.history.last().unwrap().total < out.history[0].total);
}

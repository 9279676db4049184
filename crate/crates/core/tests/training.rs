//! Training behaviour on synthetic data.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use segqual::datagen::{derive_seed, generate, perturb, SyntheticConfig, TrainingTuple};
use segqual::regressor::{train, Architecture, BackboneSpec, EpochStats, RegressorState, TrainConfig};

const SIDE: usize = 48;

fn data(n_images: usize, seed: u64) -> Vec<TrainingTuple> {
    generate(&SyntheticConfig {
        n_images,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
    .tuples
}

/// Ten epochs on the default synthetic set.
fn trained() -> &'static (RegressorState, Vec<EpochStats>) {
    static MODEL: OnceLock<(RegressorState, Vec<EpochStats>)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let config = TrainConfig {
            lr: 1e-3,
            epochs: 10,
            seed: 1,
            ..TrainConfig::default()
        };
        train(&data(150, 1), None, Architecture::small_cnn(1, SIDE), &config, |_| {}).unwrap()
    })
}

#[test]
fn loss_falls_over_ten_epochs() {
    let (_, history) = trained();
    assert_eq!(history.len(), 10);
    assert!(history[0].train_loss > history[9].train_loss, "{history:?}");
}

#[test]
fn exact_masks_outscore_heavy_perturbations() {
    let (model, _) = trained();
    let held = data(200, 99);
    let mut wins = 0;
    let mut pairs = 0;
    for (i, t) in held.iter().filter(|t| t.segmenter_id == "good").enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(5, &[i as u64]));
        let bad = perturb(&t.gt_mask, &mut rng, 1.0).unwrap();
        let exact = model.predict(&t.image, &t.gt_mask, &t.prompt).unwrap()[0];
        let worse = model.predict(&t.image, &bad, &t.prompt).unwrap()[0];
        wins += usize::from(exact > worse);
        pairs += 1;
    }
    assert_eq!(pairs, 200);
    assert!(wins >= 180, "exact mask ranked higher in {wins}/200 pairs");
}

#[test]
fn constant_targets_are_learned() {
    let mut tuples = data(40, 3);
    for t in &mut tuples {
        t.q_dice = 0.7;
    }
    let arch = Architecture {
        backbone: BackboneSpec::Conv { widths: vec![4, 8] },
        heads: 1,
        input_side: 16,
    };
    let config = TrainConfig {
        lr: 1e-2,
        epochs: 15,
        seed: 2,
        ..TrainConfig::default()
    };
    let (model, _) = train(&tuples, None, arch, &config, |_| {}).unwrap();
    let preds = model.predict_tuples(&tuples).unwrap();
    let mean = preds.iter().map(|p| p[0]).sum::<f64>() / preds.len() as f64;
    assert!((mean - 0.7).abs() < 0.02, "mean prediction {mean}");
}

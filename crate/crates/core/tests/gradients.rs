mod common;

use common::*;
use metatst::config::Ablation;
use metatst::encoder::AggregationStrategy;
use metatst::model::ModelBatch;
use metatst::MetaTst;

fn check(config: metatst::ModelConfig, words: bool, exo: usize) {
    let mut rng = seeded(17);
    let samples: Vec<_> = (0..2).map(|_| random_sample(&mut rng, "g", 24, exo, 4)).collect();
    let meta = if config.ablation.drop_meta {
        Vec::new()
    } else {
        (0..2)
            .map(|_| if words { random_words(&mut rng, 8) } else { random_native(&mut rng, 8) })
            .collect()
    };
    let refs: Vec<_> = samples.iter().collect();
    let batch = ModelBatch::from_samples(&refs, meta).unwrap();
    let mut model = MetaTst::new(&config, 3).unwrap();
    let pairs = gradient_pairs(&mut model, &batch, 1e-6);
    let worst = pairs
        .iter()
        .map(|(n, i, a, f)| (relative_error(*a, *f, GRAD_FLOOR), n, i, a, f))
        .max_by(|x, y| x.0.total_cmp(&y.0))
        .unwrap();
    assert!(worst.0 < 1e-4, "worst {worst:?}");
}

#[test]
fn average_pooling_model() {
    check(tiny_config(), false, 1);
}

#[test]
fn router_model() {
    let cfg = metatst::ModelConfig {
        aggregation: AggregationStrategy::router(3),
        ..tiny_config()
    };
    check(cfg, true, 2);
}

#[test]
fn ablated_models() {
    for ab in [
        Ablation { drop_endo: true, ..Ablation::none() },
        Ablation { drop_exo: true, ..Ablation::none() },
        Ablation { drop_meta: true, ..Ablation::none() },
    ] {
        check(metatst::ModelConfig { ablation: ab, ..tiny_config() }, false, 2);
    }
}

#[test]
fn two_layers() {
    check(metatst::ModelConfig { e_layers: 2, ..tiny_config() }, false, 3);
}

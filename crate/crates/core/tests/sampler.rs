use metatst::train::mixed_batch_sampler;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_sample_once_per_epoch(
        sizes in prop::collection::vec(0usize..60, 1..5),
        batch in 1usize..17,
        seed in any::<u64>(),
        epoch in 0usize..1000,
    ) {
        let batches = mixed_batch_sampler(&sizes, batch, seed, epoch).unwrap();
        let mut seen: Vec<Vec<u8>> = sizes.iter().map(|&n| vec![0; n]).collect();
        for b in &batches {
            prop_assert!(!b.indices.is_empty() && b.indices.len() <= batch);
            for &i in &b.indices {
                seen[b.dataset][i] += 1;
            }
        }
        prop_assert!(seen.iter().flatten().all(|&c| c == 1));
        let expected: usize = sizes.iter().map(|n| n.div_ceil(batch)).sum();
        prop_assert_eq!(batches.len(), expected);
        prop_assert_eq!(mixed_batch_sampler(&sizes, batch, seed, epoch).unwrap(), batches);
    }

    #[test]
    fn epochs_reshuffle(seed in any::<u64>()) {
        let a = mixed_batch_sampler(&[40, 40], 4, seed, 1).unwrap();
        let b = mixed_batch_sampler(&[40, 40], 4, seed, 2).unwrap();
        prop_assert_ne!(a, b);
    }
}

#[test]
fn small_datasets_are_not_starved() {
    // The smaller dataset's batches are spread over the epoch rather than
    // all landing at the end.
    let batches = mixed_batch_sampler(&[800, 80], 8, 11, 0).unwrap();
    let positions: Vec<usize> = batches.iter().enumerate().filter(|(_, b)| b.dataset == 1).map(|(i, _)| i).collect();
    assert_eq!(positions.len(), 10);
    assert!(positions[0] < batches.len() / 2);
}

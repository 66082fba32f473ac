mod common;

use common::{brute_force_features, brute_force_pooled, close, varied_block};
use fragnet::features::{
    cooccurrence, global_features, global_features_with, kolmogorov_proxy, shannon_entropy, Compressor, FeatureVector,
    FEATURE_COUNT,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BLOCKS_PER_SIZE: usize = 1000;

#[test]
fn global_features_match_brute_force() {
    for (size, seed) in [(512, 1), (4096, 2)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for n in 0..BLOCKS_PER_SIZE {
            let block = varied_block(&mut rng, size);
            let got = global_features(&block).unwrap().to_array();
            let want = brute_force_features(&block);
            for k in 0..FEATURE_COUNT {
                assert!(
                    close(got[k], want[k], 1e-9),
                    "block {n} of size {size}: {} = {} but brute force gives {}",
                    FeatureVector::NAMES[k],
                    got[k],
                    want[k]
                );
            }
        }
    }
}

#[test]
fn pooled_cooccurrence_matches_brute_force() {
    for (size, seed) in [(512, 3), (4096, 4)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let block = varied_block(&mut rng, size);
            let m = cooccurrence(&block).unwrap();
            assert_eq!(m.pooled_values(), brute_force_pooled(&block).as_slice());
            assert_eq!(m.total(), size as u64 - 1);
        }
    }
}

#[test]
fn compression_proxy_regression() {
    assert!(kolmogorov_proxy(&[0u8; 4096], Compressor::Deflate) > 0.9);
    assert!(kolmogorov_proxy(&[0u8; 4096], Compressor::Bwt) > 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let random: Vec<u8> = (0..4096).map(|_| rand::Rng::gen(&mut rng)).collect();
    assert!(kolmogorov_proxy(&random, Compressor::Deflate) <= 0.0);
    assert!(kolmogorov_proxy(&random, Compressor::Bwt) <= 0.0);
}

#[test]
fn known_blocks() {
    let f = global_features(&[7u8; 512]).unwrap();
    assert_eq!(f.shannon_entropy, 0.0);
    assert_eq!(f.std_dev, 0.0);
    assert_eq!(f.longest_streak, 512.0);
    assert_eq!(f.low_ascii_freq, 1.0);
    let ramp: Vec<u8> = (0..=255).collect();
    let f = global_features(&ramp).unwrap();
    assert!((f.shannon_entropy - 8.0).abs() < 1e-12);
    assert_eq!(f.geometric_mean, 0.0);
    assert_eq!(f.hamming_weight, 0.5);
    assert!(global_features(&[]).is_err());
    assert!(cooccurrence(&[1]).is_err());
}

fn block_strategy() -> impl Strategy<Value = Vec<u8>> {
    prop_oneof![
        proptest::collection::vec(any::<u8>(), 2..600),
        proptest::collection::vec(0u8..4, 2..600),
    ]
}

proptest! {
    #[test]
    fn entropy_is_order_free(block in block_strategy()) {
        let mut rev = block.clone();
        rev.reverse();
        prop_assert!((shannon_entropy(&block) - shannon_entropy(&rev)).abs() < 1e-12);
        let h = shannon_entropy(&block);
        prop_assert!((0.0..=8.0).contains(&h));
    }

    #[test]
    fn histogram_statistics_survive_doubling(block in block_strategy()) {
        let a = global_features(&block).unwrap().to_array();
        let doubled = [block.as_slice(), block.as_slice()].concat();
        let b = global_features(&doubled).unwrap().to_array();
        // Everything but the compression proxy and the streak is a function of
        // byte proportions alone.
        for k in 1..FEATURE_COUNT {
            if FeatureVector::NAMES[k] == "longest_streak" {
                continue;
            }
            prop_assert!(close(a[k], b[k], 1e-9), "{}: {} vs {}", FeatureVector::NAMES[k], a[k], b[k]);
        }
    }

    #[test]
    fn ascii_bands_partition_bytes(block in block_strategy()) {
        let f = global_features(&block).unwrap();
        let total = f.low_ascii_freq + f.med_ascii_freq + f.high_ascii_freq;
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&f.hamming_weight));
        prop_assert!(f.longest_streak >= 1.0 && f.longest_streak <= block.len() as f64);
        prop_assert!(f.harmonic_mean <= f.geometric_mean + 1e-9);
        prop_assert!(f.geometric_mean <= f.arithmetic_mean + 1e-9);
    }

    #[test]
    fn proxy_is_bounded(block in block_strategy()) {
        for c in [Compressor::Deflate, Compressor::Bwt] {
            let f = global_features_with(&block, c).unwrap();
            prop_assert!((-1.0..=1.0).contains(&f.kolmogorov_proxy));
        }
    }

    #[test]
    fn cooccurrence_counts_every_pair(block in block_strategy()) {
        let m = cooccurrence(&block).unwrap();
        prop_assert_eq!(m.total(), block.len() as u64 - 1);
        let pooled: f64 = m.pooled_values().iter().sum();
        prop_assert!((pooled * 4.0 - (block.len() - 1) as f64).abs() < 1e-9);
    }
}

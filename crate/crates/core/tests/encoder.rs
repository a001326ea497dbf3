//! The threshold encoder against a direct transcription of the reference
//! pseudocode.

mod common;

use common::{listing_encode, random_image};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikeplace::encode::{encode_pixels, ThresholdEncoderConfig};

#[test]
fn thousand_images_match_the_transcription() {
    let cfg = ThresholdEncoderConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..1000 {
        let img = random_image(&mut rng);
        let got = encode_pixels(&img, &cfg).unwrap();
        assert_eq!(got.steps, 840);
        assert_eq!(got.to_dense(), listing_encode(&img, 80, 56), "image {i}");
    }
}

#[test]
fn blank_image_only_fires_zero_threshold_and_marker() {
    let m = encode_pixels(&[0; 784], &ThresholdEncoderConfig::default()).unwrap();
    let counts = m.neuron_counts();
    // 0 <= 0 both rises and falls at every step
    assert_eq!(counts[0], 784);
    assert_eq!(counts[1], 784);
    assert_eq!(counts[79], 56);
    assert_eq!(counts.iter().sum::<u64>(), 784 * 2 + 56);
}

proptest! {
    #[test]
    fn arbitrary_images_match(img in proptest::collection::vec(any::<u8>(), 784)) {
        let got = encode_pixels(&img, &ThresholdEncoderConfig::default()).unwrap();
        prop_assert_eq!(got.to_dense(), listing_encode(&img, 80, 56));
    }
}

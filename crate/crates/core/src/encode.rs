//! Spike encoders for pixel sequences and word sequences.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Result};
use crate::raster::SpikeMatrix;

pub const MNIST_PIXELS: usize = 784;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScheme {
    /// Threshold k drives neuron 2k on rising and 2k+1 on falling crossings.
    Paired,
    /// One neuron per threshold: even thresholds respond to rising values,
    /// odd ones to falling values; the last neuron is the end marker.
    Interleaved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEncoderConfig {
    pub num_input_neurons: u32,
    pub num_thresholds: u32,
    pub tail_steps: u32,
    pub end_marker_neuron: u32,
    pub scheme: ThresholdScheme,
}

impl Default for ThresholdEncoderConfig {
    fn default() -> Self {
        Self::paired(80)
    }
}

impl ThresholdEncoderConfig {
    pub fn paired(neurons: u32) -> Self {
        Self {
            num_input_neurons: neurons,
            num_thresholds: neurons / 2,
            tail_steps: 56,
            end_marker_neuron: neurons.saturating_sub(1),
            scheme: ThresholdScheme::Paired,
        }
    }

    pub fn interleaved(neurons: u32) -> Self {
        Self {
            num_input_neurons: neurons,
            num_thresholds: neurons.saturating_sub(1),
            tail_steps: 56,
            end_marker_neuron: neurons.saturating_sub(1),
            scheme: ThresholdScheme::Interleaved,
        }
    }

    pub fn thresholds(&self) -> Vec<f64> {
        let n = self.num_thresholds;
        let top = match self.scheme {
            ThresholdScheme::Paired => 255.0,
            ThresholdScheme::Interleaved => 256.0,
        };
        if n == 1 {
            return vec![0.0];
        }
        (0..n).map(|k| k as f64 * top / (n - 1) as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_thresholds == 0 {
            return Err(invalid_param("encoder needs at least one threshold"));
        }
        let needed = match self.scheme {
            ThresholdScheme::Paired => 2 * self.num_thresholds,
            ThresholdScheme::Interleaved => self.num_thresholds + 1,
        };
        if needed != self.num_input_neurons {
            return Err(invalid_param(format!(
                "{} thresholds need {needed} input neurons, config has {}",
                self.num_thresholds, self.num_input_neurons
            )));
        }
        if self.end_marker_neuron >= self.num_input_neurons {
            return Err(invalid_param("end marker neuron out of range"));
        }
        Ok(())
    }

    pub fn total_steps(&self, pixels: usize) -> u32 {
        pixels as u32 + self.tail_steps
    }
}

/// Threshold-crossing encoding of a pixel sequence followed by the end
/// marker. Step t compares pixel t-1 (0 before the first pixel) with pixel t.
pub fn encode_pixels(pixels: &[u8], config: &ThresholdEncoderConfig) -> Result<SpikeMatrix> {
    if pixels.len() != MNIST_PIXELS {
        return Err(invalid_input(format!("expected {MNIST_PIXELS} pixels, got {}", pixels.len())));
    }
    encode_sequence(pixels, config)
}

/// [`encode_pixels`] for sequences of any length.
pub fn encode_sequence(pixels: &[u8], config: &ThresholdEncoderConfig) -> Result<SpikeMatrix> {
    config.validate()?;
    let thresholds = config.thresholds();
    let mut m = SpikeMatrix::new(config.num_input_neurons, config.total_steps(pixels.len()));
    let mut current = 0.0;
    for (t, &p) in pixels.iter().enumerate() {
        let next = p as f64;
        for (k, &thr) in thresholds.iter().enumerate() {
            let k = k as u32;
            let rising = current <= thr && next >= thr;
            let falling = current >= thr && next <= thr;
            match config.scheme {
                ThresholdScheme::Paired => {
                    if rising {
                        m.set(2 * k, t as u32);
                    }
                    if falling {
                        m.set(2 * k + 1, t as u32);
                    }
                }
                ThresholdScheme::Interleaved => {
                    if (k.is_multiple_of(2) && rising) || (k % 2 == 1 && falling) {
                        m.set(k, t as u32);
                    }
                }
            }
        }
        current = next;
    }
    for t in pixels.len() as u32..m.steps {
        m.set(config.end_marker_neuron, t);
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordOrder {
    /// First word in the last window.
    Reverse,
    /// Words in reading order, last word in the last window.
    Forward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordEncoderConfig {
    pub t_word: u32,
    pub n_words: u32,
    pub vocab: u32,
    pub order: WordOrder,
}

impl WordEncoderConfig {
    pub fn new(vocab: u32) -> Self {
        Self { t_word: 10, n_words: 11, vocab, order: WordOrder::Reverse }
    }

    pub fn steps(&self) -> u32 {
        self.t_word * self.n_words
    }
}

/// One-hot word windows packed against the final step.
pub fn encode_sentence(word_ids: &[u32], config: &WordEncoderConfig) -> Result<SpikeMatrix> {
    let n = word_ids.len() as u32;
    if n == 0 || n > config.n_words {
        return Err(invalid_input(format!("sentence has {n} words, allowed 1..={}", config.n_words)));
    }
    if let Some(&bad) = word_ids.iter().find(|&&w| w >= config.vocab) {
        return Err(invalid_input(format!("word id {bad} outside vocabulary of {}", config.vocab)));
    }
    let total = config.steps();
    let mut m = SpikeMatrix::new(config.vocab, total);
    for (k, &w) in word_ids.iter().enumerate() {
        let k = k as u32;
        // windows counted back from the end: slot 0 ends at the final step
        let slot = match config.order {
            WordOrder::Reverse => k,
            WordOrder::Forward => n - 1 - k,
        };
        let end = total - slot * config.t_word;
        for t in end - config.t_word..end {
            m.set(w, t);
        }
    }
    Ok(m)
}

/// Last `t_inp` steps of an LSNN raster, zero-padded to `t_sim` steps.
pub fn extract_embedding(lsnn: &SpikeMatrix, t_inp: u32, t_sim: u32) -> Result<SpikeMatrix> {
    if lsnn.steps < t_inp {
        return Err(invalid_input(format!("raster of {} steps is shorter than T_inp = {t_inp}", lsnn.steps)));
    }
    if t_inp > t_sim {
        return Err(invalid_param("T_inp must not exceed T_sim"));
    }
    lsnn.window(lsnn.steps - t_inp, t_inp, t_sim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk4() -> ThresholdEncoderConfig {
        ThresholdEncoderConfig::paired(8)
    }

    #[test]
    fn desk_thresholds() {
        assert_eq!(desk4().thresholds(), vec![0.0, 85.0, 170.0, 255.0]);
        let t = ThresholdEncoderConfig::default().thresholds();
        assert_eq!(t.len(), 40);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert_eq!((t[0], t[39]), (0.0, 255.0));
    }

    #[test]
    fn rising_crossing_example() {
        let m = encode_sequence(&[50, 200], &desk4()).unwrap();
        // step 0 compares the implicit leading 0 with 50
        assert_eq!(m.at(0), &[0]);
        assert_eq!(m.at(1), &[2, 4]);
    }

    #[test]
    fn constant_off_threshold_image_only_marks_end() {
        let m = encode_pixels(&[0u8; 784], &ThresholdEncoderConfig::default()).unwrap();
        // 0 sits exactly on threshold 0 so the literal rule double-fires there
        assert_eq!(m.at(5), &[0, 1]);
        let m = encode_sequence(&[100, 100, 100], &desk4()).unwrap();
        assert_eq!(m.at(1).len() + m.at(2).len(), 0);
        assert_eq!(m.steps, 3 + 56);
        assert_eq!(m.at(3), &[7]);
    }

    #[test]
    fn sample_is_840_steps() {
        let pixels: Vec<u8> = (0..784).map(|i| (i * 37 % 256) as u8).collect();
        let m = encode_pixels(&pixels, &ThresholdEncoderConfig::default()).unwrap();
        assert_eq!(m.steps, 840);
        assert!(encode_pixels(&pixels[..783], &ThresholdEncoderConfig::default()).is_err());
        let alt = encode_pixels(&pixels, &ThresholdEncoderConfig::interleaved(80)).unwrap();
        assert_eq!(alt.steps, 840);
        assert!((784..840).all(|t| alt.at(t) == [79]));
    }

    #[test]
    fn interleaved_scheme_directions() {
        let cfg = ThresholdEncoderConfig::interleaved(80);
        let thr = cfg.thresholds();
        assert_eq!(thr.len(), 79);
        let m = encode_sequence(&[0, 255, 0], &cfg).unwrap();
        assert!(m.at(1).iter().all(|n| n % 2 == 0));
        assert!(m.at(2).iter().all(|n| n % 2 == 1));
    }

    #[test]
    fn single_word_last_window() {
        let cfg = WordEncoderConfig::new(10);
        let m = encode_sentence(&[7], &cfg).unwrap();
        assert_eq!(m.count(), 10);
        assert!((100..110).all(|t| m.at(t) == [7]));
    }

    #[test]
    fn word_orders() {
        let cfg = WordEncoderConfig::new(10);
        let m = encode_sentence(&[1, 2], &cfg).unwrap();
        assert_eq!(m.at(109), &[1]);
        assert_eq!(m.at(95), &[2]);
        assert!(m.at(89).is_empty());
        let fwd = WordEncoderConfig { order: WordOrder::Forward, ..cfg.clone() };
        let m = encode_sentence(&[1, 2], &fwd).unwrap();
        assert_eq!(m.at(109), &[2]);
        assert_eq!(m.at(95), &[1]);
        let full: Vec<u32> = (0..11).map(|i| i % 10).collect();
        let m = encode_sentence(&full, &cfg).unwrap();
        assert!((0..110).all(|t| m.at(t).len() == 1));
        assert!(encode_sentence(&[0; 12], &cfg).is_err());
        assert!(encode_sentence(&[], &cfg).is_err());
        assert!(encode_sentence(&[10], &cfg).is_err());
    }

    #[test]
    fn embedding_extraction() {
        let mut r = SpikeMatrix::new(200, 110);
        r.set(5, 109);
        r.set(6, 90);
        let e = extract_embedding(&r, 14, 37).unwrap();
        assert_eq!((e.neurons, e.steps), (200, 37));
        assert!(e.get(5, 13));
        assert_eq!(e.count(), 1);
        assert!((14..37).all(|t| e.at(t).is_empty()));
        assert_eq!(extract_embedding(&SpikeMatrix::new(200, 110), 14, 37).unwrap().count(), 0);
        assert!(extract_embedding(&SpikeMatrix::new(3, 10), 14, 37).is_err());
    }
}

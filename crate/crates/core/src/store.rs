//! Synthetic sample store: the preloaded inputs queries index into.

use rand::RngCore;

use crate::rng::{fnv1a64, mix64, SplitMix64};

/// Distinct salt so the store content stream differs from the schedule stream
/// for the same run seed.
const STORE_SALT: u64 = 0x5354_4f52_4553_414d;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleStore {
    samples: Vec<Vec<u8>>,
}

impl SampleStore {
    /// Deterministic pseudo-random samples; sample `i` depends only on
    /// `(seed, i, sample_bytes)`.
    pub fn synthetic(seed: u64, store_size: usize, sample_bytes: usize) -> Self {
        let samples = (0..store_size)
            .map(|i| {
                let mut rng = SplitMix64::new(mix64(seed ^ STORE_SALT).wrapping_add(i as u64));
                let mut buf = vec![0u8; sample_bytes];
                rng.fill_bytes(&mut buf);
                buf
            })
            .collect();
        Self { samples }
    }

    pub fn from_samples(samples: Vec<Vec<u8>>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&[u8]> {
        self.samples.get(index).map(Vec::as_slice)
    }

    /// Concatenated bytes of the given samples, i.e. what an echo SUT returns
    /// for a query over `indices`.
    pub fn concat(&self, indices: &[usize]) -> Option<Vec<u8>> {
        let mut out = Vec::new();
        for &i in indices {
            out.extend_from_slice(self.get(i)?);
        }
        Some(out)
    }

    pub fn digest(&self, index: usize) -> Option<u64> {
        self.get(index).map(fnv1a64)
    }
}

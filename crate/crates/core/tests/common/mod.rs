#![allow(dead_code)]

pub mod gradcheck;

use std::path::Path;

use rse_core::data::{build_pair_dataset, write_synthetic_fixtures, ImagePair, CALIBRATED_SIGMA};

/// Generator seed of the committed fixture set.
pub const FIXTURE_SEED: u64 = 20240611;
pub const FIXTURE_COUNT: usize = 200;
pub const FIXTURE_SIZE: usize = 64;
pub const TRAIN_COUNT: usize = 160;

/// Writes the fixture PNGs into `dir` and returns (train, held-out).
pub fn fixture(dir: &Path) -> (Vec<ImagePair>, Vec<ImagePair>) {
    write_synthetic_fixtures(dir, FIXTURE_COUNT, FIXTURE_SIZE, FIXTURE_SEED).unwrap();
    let mut pairs = build_pair_dataset(dir, CALIBRATED_SIGMA, FIXTURE_SEED).unwrap();
    let held = pairs.split_off(TRAIN_COUNT);
    (pairs, held)
}

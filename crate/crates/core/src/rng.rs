//! Seed derivation for independent, order-free RNG streams.
//!
//! Every random decision in a run is drawn from a stream keyed by
//! `(master seed, purpose, index)`, so adding a device or changing the worker
//! count never perturbs the streams of existing devices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes. Values are part of the reproducibility contract; never renumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Corpus = 1,
    TestSplit = 2,
    Partition = 3,
    DeviceInit = 4,
    DeviceTraining = 5,
    GlobalInit = 6,
    SeedUpload = 7,
    Oversample = 8,
    Generator = 9,
    Augment = 10,
    ReferenceDevice = 11,
    Repeat = 12,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ (stream as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(b ^ index.wrapping_mul(0xA076_1D64_78BD_642F))
}

pub fn stream_rng(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}

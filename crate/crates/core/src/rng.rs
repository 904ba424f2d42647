use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes for which independent random streams are derived from one seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub(crate) enum StreamTag {
    Sampling = 1,
    GateNoise = 2,
    Calibration = 3,
}

/// Independent ChaCha stream keyed by `(seed, tag, a, b)`.
///
/// The stream id packs the tag into the top byte, `a` into the next 28 bits
/// and `b` into the low 28 bits, so streams for distinct keys never overlap.
pub(crate) fn substream(seed: u64, tag: StreamTag, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = (1u64 << 28) - 1;
    rng.set_stream(((tag as u64) << 56) | ((a & mask) << 28) | (b & mask));
    rng
}

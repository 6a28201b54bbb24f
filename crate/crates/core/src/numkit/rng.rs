use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{DenseMatrix, NumError, Real};

/// Identifies an independent pseudo-random stream.
///
/// The generator behind a stream is ChaCha8 keyed by `seed` with `stream_id`
/// selecting the ChaCha stream, so draws are a pure function of
/// `(seed, stream_id, position)` and never depend on which other streams were
/// consumed first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Child stream keyed by an integer tag (client index, repetition, ...).
    pub fn substream(&self, tag: u64) -> Self {
        Self { seed: self.seed, stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))) }
    }

    /// Child stream keyed by a purpose name.
    pub fn named(&self, name: &str) -> Self {
        self.substream(fnv1a(name.as_bytes()))
    }

    /// Fresh generator positioned at the start of the stream.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Fills a `rows x cols` matrix with i.i.d. uniform draws on `[lo, hi]`.
/// The result depends only on `stream`.
pub fn rng_draw_uniform<T: Real>(stream: RngStream, lo: T, hi: T, rows: usize, cols: usize) -> Result<DenseMatrix<T>, NumError> {
    if !(lo < hi) {
        return Err(NumError::InvalidArgument(format!("uniform bounds need lo < hi, got [{lo}, {hi}]")));
    }
    let mut rng = stream.generator();
    let span = hi - lo;
    let values = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.random();
            (lo + T::lit(u) * span).min(hi)
        })
        .collect();
    DenseMatrix::from_vec(rows, cols, values)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

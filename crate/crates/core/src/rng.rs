use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named ChaCha streams derived from one seed. Separate streams keep, for
/// example, VAT's random start directions from shifting the batch order.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const BATCHES: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const VAT: u64 = 3;
    pub const DATA: u64 = 4;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

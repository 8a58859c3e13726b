//! Seeded random streams. Each consumer draws from its own ChaCha stream so
//! that adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    SyntheticData,
    TrainTestSplit,
    Partition,
    ModelInit,
    ClientSpeeds,
    /// Mini-batch sampling for one client.
    Client(usize),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::SyntheticData => 1,
            Stream::TrainTestSplit => 2,
            Stream::Partition => 3,
            Stream::ModelInit => 4,
            Stream::ClientSpeeds => 5,
            Stream::Client(i) => 1_000 + i as u64,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

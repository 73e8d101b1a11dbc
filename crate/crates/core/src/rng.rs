//! Seeded randomness. Every job draws from ChaCha8 seeded by the run seed,
//! with the job index selecting an independent stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn job_rng(seed: u64, job: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(job);
    rng
}

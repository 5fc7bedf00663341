//! Fixtures shared by the benchmarks.

use divbeam_core::seqmodel::{train_fusion, FusionConfig};
use divbeam_core::synth::random_parallel_corpus;
use divbeam_core::{FusionModel, Sequence};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A fusion model over `vocab` tokens and `n_sources` held-out sources.
pub fn fusion_fixture(vocab: usize, n_sources: usize) -> (FusionModel, Vec<Sequence>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (v, pairs) = random_parallel_corpus(&mut rng, vocab, 2000 + n_sources, 4..=12, 0.7);
    let (train, held) = pairs.split_at(2000);
    let model = train_fusion(train, &v, &v, FusionConfig::default()).expect("fixture trains");
    (model, held.iter().map(|(s, _)| s.clone()).collect())
}

/// Random token sequences for the metric benchmarks.
pub fn token_lines(n: usize, vocab: u32, len: usize, seed: u64) -> Vec<Vec<u32>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..len).map(|_| rng.gen_range(0..vocab)).collect())
        .collect()
}

//! Data-parallel execution over particles.
//!
//! The sampler only ever hands an executor independent items plus a closure
//! that reads shared state, so any schedule gives the same result.

/// Applies a closure to every item of a slice, possibly concurrently.
pub trait ParticleExecutor: Sync {
    fn for_each<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync;
}

/// Runs items in order on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl ParticleExecutor for Sequential {
    fn for_each<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync,
    {
        for (i, item) in items.iter_mut().enumerate() {
            f(i, item);
        }
    }
}

/// Mixes a master seed with stream coordinates into a generator seed.
pub fn stream_seed(seed: u64, coords: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

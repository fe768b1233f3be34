use bridgefit_core::exec::ParticleExecutor;
use rayon::prelude::*;

use crate::error::CliError;

/// Runs particle work on a dedicated rayon pool.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    pub fn new(workers: usize) -> Result<Self, CliError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
        Ok(Self { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl ParticleExecutor for RayonExecutor {
    fn for_each<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync,
    {
        self.pool.install(|| items.par_iter_mut().enumerate().for_each(|(i, item)| f(i, item)));
    }
}

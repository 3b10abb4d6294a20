use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::InputKey;

const SCHEDULE_STREAM: u64 = u64::MAX - 1;

/// How round inputs are drawn. `universe` bounds the key space; `None`
/// draws full 64-bit keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleSpec {
    Iid {
        #[serde(default)]
        universe: Option<u64>,
    },
    /// Each drawn input is held for `block_size` consecutive rounds.
    Block {
        block_size: u64,
        #[serde(default)]
        universe: Option<u64>,
    },
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self::Iid { universe: None }
    }
}

impl ScheduleSpec {
    pub fn block_size(&self) -> u64 {
        match *self {
            Self::Iid { .. } => 1,
            Self::Block { block_size, .. } => block_size,
        }
    }

    pub fn universe(&self) -> Option<u64> {
        match *self {
            Self::Iid { universe } | Self::Block { universe, .. } => universe,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size() == 0 {
            return Err(Error::Config("block_size must be at least 1".into()));
        }
        if self.universe() == Some(0) {
            return Err(Error::Config("input universe must be non-empty".into()));
        }
        Ok(())
    }

    /// Input stream of `total` rounds for a run seeded with `seed`.
    pub fn stream(&self, seed: u64, total: u64) -> Result<InputSchedule<ChaCha8Rng>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SCHEDULE_STREAM);
        block_schedule(self.universe(), self.block_size(), total, rng)
    }
}

/// Streaming input sequence: one draw per block, repeated `block_size` times.
#[derive(Debug, Clone)]
pub struct InputSchedule<R> {
    rng: R,
    universe: Option<u64>,
    block_size: u64,
    remaining: u64,
    left_in_block: u64,
    current: InputKey,
}

impl<R: Rng> Iterator for InputSchedule<R> {
    type Item = InputKey;

    fn next(&mut self) -> Option<InputKey> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        if self.left_in_block == 0 {
            self.current = InputKey(match self.universe {
                Some(u) => self.rng.random_range(0..u),
                None => self.rng.random(),
            });
            self.left_in_block = self.block_size;
        }
        self.left_in_block -= 1;
        Some(self.current)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = usize::try_from(self.remaining).unwrap_or(usize::MAX);
        (n, Some(n))
    }
}

pub fn block_schedule<R: Rng>(universe: Option<u64>, block_size: u64, total: u64, rng: R) -> Result<InputSchedule<R>> {
    ScheduleSpec::Block { block_size, universe }.validate()?;
    Ok(InputSchedule { rng, universe, block_size, remaining: total, left_in_block: 0, current: InputKey(0) })
}

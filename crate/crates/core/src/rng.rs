//! Named, independently seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the scenario seed and selected
//! by a fixed stream number, so draws on one stream never shift another and the
//! sequences are identical across platforms.

use std::fmt;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StreamId {
    Mobility,
    Traffic,
    AisMutation,
    Link,
}

impl StreamId {
    fn index(self) -> u64 {
        match self {
            StreamId::Mobility => 1,
            StreamId::Traffic => 2,
            StreamId::AisMutation => 3,
            StreamId::Link => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StreamId::Mobility => "mobility",
            StreamId::Traffic => "traffic",
            StreamId::AisMutation => "ais-mutation",
            StreamId::Link => "link",
        }
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RngError {
    #[error("empty integer range {start}..{end}")]
    EmptyRange { start: u64, end: u64 },
    #[error("invalid gaussian parameters mean={mean} sd={sd}")]
    BadGaussian { mean: f64, sd: f64 },
}

#[derive(Clone, Debug)]
pub struct RngStream {
    id: StreamId,
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id.index());
        RngStream { id, seed, rng }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform_between(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    pub fn uniform_int(&mut self, range: Range<u64>) -> Result<u64, RngError> {
        if range.is_empty() {
            return Err(RngError::EmptyRange {
                start: range.start,
                end: range.end,
            });
        }
        Ok(self.rng.random_range(range))
    }

    pub fn gaussian(&mut self, mean: f64, sd: f64) -> Result<f64, RngError> {
        if !(sd >= 0.0 && sd.is_finite() && mean.is_finite()) {
            return Err(RngError::BadGaussian { mean, sd });
        }
        if sd == 0.0 {
            return Ok(mean);
        }
        let normal = Normal::new(mean, sd).map_err(|_| RngError::BadGaussian { mean, sd })?;
        Ok(normal.sample(&mut self.rng))
    }

    /// Bernoulli trial with probability `p` (clamped to `[0, 1]`).
    pub fn chance(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        self.uniform() < p
    }
}

/// The four streams a simulation world draws from.
#[derive(Clone, Debug)]
pub struct RngStreams {
    pub mobility: RngStream,
    pub traffic: RngStream,
    pub ais_mutation: RngStream,
    pub link: RngStream,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams {
            mobility: RngStream::new(seed, StreamId::Mobility),
            traffic: RngStream::new(seed, StreamId::Traffic),
            ais_mutation: RngStream::new(seed, StreamId::AisMutation),
            link: RngStream::new(seed, StreamId::Link),
        }
    }
}

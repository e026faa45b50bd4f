//! Named random substreams.
//!
//! Every random draw in the pipeline comes from a ChaCha8 generator keyed by
//! the run seed and a [`Substream`] tag, with the ChaCha stream id selecting
//! an independent sequence per work item (episode, sweep point, ...). Work
//! items therefore draw the same numbers regardless of how they are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    Dataset,
    Split,
    Train,
    Eval,
    Resample,
}

impl Substream {
    fn tag(self) -> u64 {
        match self {
            Substream::Dataset => 0x6461_7461_7365_7400,
            Substream::Split => 0x7370_6c69_7400_0000,
            Substream::Train => 0x7472_6169_6e00_0000,
            Substream::Eval => 0x6576_616c_0000_0000,
            Substream::Resample => 0x7265_7361_6d70_6c65,
        }
    }
}

/// Generator for work item `index` of the given substream.
pub fn stream_rng(seed: u64, substream: Substream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ substream.tag());
    rng.set_stream(index);
    rng
}

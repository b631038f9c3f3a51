//! Seed streams. Every random stage derives its own generator from the run
//! seed so that, for example, changing the number of training steps never
//! shifts which prior draws evaluation sees.

pub const TRAIN: u64 = 1;
pub const SAMPLE: u64 = 2;
pub const EVAL_REF: u64 = 3;
pub const EVAL_GEN: u64 = 4;

/// Decorrelates streams by xoring the seed with multiples of the golden-ratio
/// increment used in splitmix-style generators. Stream 0 is the seed itself
/// (reserved for parameter init).
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream)
}

//! Self-checks shipped with the library: the downsized finite-difference
//! gradient check and the invariant self-test suite.

pub mod gradcheck;
pub mod selftest;

pub use gradcheck::{downsized_pan_gradcheck, DownsizedPan, PanGradCheck};
pub use selftest::{run_selftest, SelftestOutcome};

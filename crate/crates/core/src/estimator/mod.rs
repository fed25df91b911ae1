//! One monocular VIO: a fixed-lag factor graph over a sliding window of
//! frames, solved by Levenberg-Marquardt, with Schur-complement
//! marginalization of the oldest frame.

mod state;

pub use state::FrameState;

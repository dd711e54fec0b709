//! Distributed framebuffer: asynchronous tile routing and compositing over a
//! pluggable transport, the rendering drivers built on it, and the benchmark
//! harness.

pub mod csvout;
pub mod error;
pub mod framebuffer;
pub mod harness;
pub mod messaging;
pub mod ppm;
pub mod render;
pub mod scene;
pub mod transport;

pub use error::{DfbError, Result};
pub use framebuffer::{DisplayImage, DistributedFrameBuffer, FinalRoute, FrameStats};
pub use messaging::{CompressionPolicy, GatherResult, Messenger, ObjectId};
pub use transport::{Envelope, RankId, Transport};

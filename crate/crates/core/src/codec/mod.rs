//! End-to-end pair compression and the bitstream container.

pub mod backend;
pub mod bitstream;
pub mod pipeline;

pub use backend::CoderBackend;
pub use bitstream::{FcnrBitstream, Header, Plane};
pub use pipeline::{Codec, DecodedLatents, Encoded, ImagePair, Simulation, SimulationMode};

//! Network specifications, presets, built networks and checkpoints.

pub mod checkpoint;
pub mod network;
pub mod presets;
pub mod spec;

pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, Checkpoint, Manifest};
pub use network::{AttentionTap, BnUpdate, ForwardOut, Mode, Network};
pub use spec::{InputKind, LayerOp, LayerSpec, NetworkSpec, TransitionKind};

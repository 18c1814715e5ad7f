//! Hierarchical memory: local step entries, global room/target
//! annotations, the encoder contract and the dense-vector library.

mod encoder;
mod entry;
mod store;

pub use encoder::{tokenize, Encoder, MockEncoder, MockMode, VOCABULARY};
pub use entry::{
    build_local_entry, DetectionNote, GlobalMemoryEntry, LocalMemoryEntry, MemoryPayload, ObjectCaption, RecordKind,
    SceneCaption, StateNote,
};
pub use store::{norm, MemoryStore, VectorRecord, MANIFEST_FILE, VECTOR_FILE};

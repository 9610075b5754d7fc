//! Versioned single-file archives of cached backbone features.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SVC1" | format version u32 | manifest length u64 | manifest JSON
//! | zero padding to a 64-byte boundary
//! | payloads, each starting 64-byte aligned (offsets relative to here)
//! | crc32 of every preceding byte, u32
//! ```

mod archive;
mod manifest;
mod prompt;
mod validate;

pub use archive::{read_archive, write_archive, AccessRecord, CacheReader, ReadMode, Tensor};
pub use manifest::{CacheManifest, Dtype, TensorEntry};
pub use prompt::{shuffle_prompt_fields, PromptDoc, PROMPT_FIELDS};
pub use validate::{validate, Check, ValidationReport};

pub const MAGIC: &[u8; 4] = b"SVC1";
pub const FORMAT_VERSION: u32 = 1;
pub const ALIGN: u64 = 64;
/// Magic, version and manifest length.
pub const PREAMBLE_LEN: u64 = 16;
pub const TRAILER_LEN: u64 = 4;

pub(crate) fn align_up(x: u64) -> u64 {
    x.div_ceil(ALIGN) * ALIGN
}

//! On-disk formats: binary tensor files and JSON run configuration.

mod config;
mod tensor_file;

pub use config::{AblationConfig, RunConfig, SweepConfig, DEFAULT_METRIC_RANK_REL_TOL};
pub use tensor_file::{
    decode_tensor, encode_tensor, read_tensor, write_tensor, DType, FormatError, MAGIC, VERSION,
};

pub(crate) use tensor_file::write_atomic;

/// Serializes `value` as pretty JSON and writes it atomically.
pub fn write_json<T: serde::Serialize>(
    path: impl AsRef<std::path::Path>,
    value: &T,
) -> crate::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path.as_ref(), &bytes)
}

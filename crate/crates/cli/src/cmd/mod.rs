pub mod bench;
pub mod cache;
pub mod decode;
pub mod label;
pub mod metrics;
pub mod simulate;
pub mod train;

use std::io::Write;
use std::path::Path;

use crate::error::CliResult;

/// Writes to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)?;
        }
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn json_line<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("record serializes") + "\n"
}

pub fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

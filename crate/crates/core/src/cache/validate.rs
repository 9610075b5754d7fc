use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::archive::{check_layout, decode, parse_header};
use super::{FORMAT_VERSION, TRAILER_LEN};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }
}

/// Runs every integrity check it can reach. Failures are report entries;
/// checks that depend on an unreadable header are skipped.
pub fn validate(path: &Path, expected_version_hash: Option<&str>) -> ValidationReport {
    let mut report = ValidationReport { checks: Vec::new() };
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            report.push("readable", false, e.to_string());
            return report;
        }
    };
    report.push("readable", true, format!("{} bytes", bytes.len()));

    let parsed = match parse_header(&bytes, path) {
        Ok(p) => {
            report.push("magic", true, "");
            report.push("manifest", true, "");
            p
        }
        Err(crate::Error::NotACache(_)) => {
            report.push("magic", false, "missing SVC1 magic");
            return report;
        }
        Err(e) => {
            report.push("magic", true, "");
            report.push("manifest", false, e.to_string());
            if bytes.len() as u64 >= TRAILER_LEN {
                archive_crc(&bytes, &mut report);
            }
            return report;
        }
    };
    report.push(
        "format_version",
        parsed.format_version == FORMAT_VERSION,
        format!("found {}, reader supports {FORMAT_VERSION}", parsed.format_version),
    );
    archive_crc(&bytes, &mut report);

    let m = &parsed.manifest;
    match check_layout(m, parsed.payload_start, bytes.len() as u64) {
        Ok(()) => report.push("layout", true, ""),
        Err(detail) => {
            report.push("layout", false, detail);
            return report;
        }
    }

    for e in &m.tensors {
        let start = (parsed.payload_start + e.offset) as usize;
        let payload = &bytes[start..start + e.length as usize];
        let crc = crc32fast::hash(payload);
        report.push(format!("crc32:{}", e.name), crc == e.crc32, format!("stored {:08x}, computed {crc:08x}", e.crc32));
        let bad = decode(payload, e.dtype).iter().filter(|v| !v.is_finite()).count();
        report.push(format!("finite:{}", e.name), bad == 0, format!("{bad} non-finite values"));
    }

    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    report.push("timestamp", m.timestamp <= now, format!("archive {} vs now {now}", m.timestamp));

    if let Some(want) = expected_version_hash {
        report.push("version_hash", m.version_hash == want, format!("archive `{}`, expected `{want}`", m.version_hash));
    }
    report
}

fn archive_crc(bytes: &[u8], report: &mut ValidationReport) {
    let body = &bytes[..bytes.len() - TRAILER_LEN as usize];
    let stored = u32::from_le_bytes(bytes[bytes.len() - TRAILER_LEN as usize..].try_into().unwrap());
    let crc = crc32fast::hash(body);
    report.push("archive_crc32", crc == stored, format!("stored {stored:08x}, computed {crc:08x}"));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{write_archive, CacheManifest, Dtype, TensorEntry};
    use crate::numerics::Matrix;
    use std::collections::BTreeMap;

    fn write(dir: &Path, values: Vec<f64>, dtype: Dtype) -> std::path::PathBuf {
        let path = dir.join("v.svc");
        let n = values.len();
        let mut set = BTreeMap::new();
        set.insert("x".to_string(), Matrix::from_vec(1, n, values).unwrap());
        let m = CacheManifest {
            version_hash: "abc".into(),
            timestamp: 1_700_000_000,
            tensors: vec![TensorEntry::new("x", vec![n], dtype)],
            ..Default::default()
        };
        write_archive(&m, &set, &path).unwrap();
        path
    }

    #[test]
    fn pristine_passes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), vec![1.0, 2.0, 3.0], Dtype::F32);
        let r = validate(&p, Some("abc"));
        assert!(r.passed(), "{r:?}");
        assert!(!validate(&p, Some("zzz")).passed());
    }

    #[test]
    fn flipped_payload_bit_fails_tensor_crc() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), vec![1.0, 2.0, 3.0], Dtype::F64);
        let mut b = std::fs::read(&p).unwrap();
        let n = b.len();
        b[n - 4 - 3] ^= 0x10;
        std::fs::write(&p, &b).unwrap();
        let r = validate(&p, None);
        let failed: Vec<&str> = r.failures().map(|c| c.name.as_str()).collect();
        assert!(failed.contains(&"crc32:x") && failed.contains(&"archive_crc32"), "{failed:?}");
    }

    #[test]
    fn nan_payload_fails_scan() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), vec![1.0, f64::NAN], Dtype::F32);
        let r = validate(&p, None);
        let failed: Vec<&str> = r.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["finite:x"]);
    }

    #[test]
    fn garbage_is_reported_not_raised() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g");
        std::fs::write(&p, b"hello").unwrap();
        assert!(!validate(&p, None).passed());
        assert!(!validate(&dir.path().join("missing"), None).passed());
    }
}

//! The okt-v1 kernel file format.
//!
//! A single compact JSON document followed by a newline:
//!
//! ```text
//! {"format":"okt-v1","shape":[c_out,c_in_per_group,k_h,k_w],"groups":g,
//!  "dtype":"f64","order":"row-major","data":[...]}
//! ```
//!
//! Numbers are written in shortest round-trip form, so reading a file and
//! writing it again reproduces it byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::KernelTensor;

pub const FORMAT: &str = "okt-v1";
pub const ORDER: &str = "row-major";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F64,
    /// Export only: values are rounded to single precision on write.
    F32,
}

#[derive(Serialize)]
struct OktOut<'a, T: Serialize> {
    format: &'a str,
    shape: [usize; 4],
    groups: usize,
    dtype: Dtype,
    order: &'a str,
    data: T,
}

#[derive(Deserialize)]
struct OktIn {
    format: String,
    shape: [usize; 4],
    groups: usize,
    dtype: Dtype,
    order: String,
    data: Vec<f64>,
}

/// Serialize a kernel as an okt-v1 document (with trailing newline).
pub fn kernel_to_string(k: &KernelTensor, dtype: Dtype) -> Result<String> {
    let mut s = match dtype {
        Dtype::F64 => serde_json::to_string(&OktOut {
            format: FORMAT,
            shape: k.shape(),
            groups: k.groups(),
            dtype,
            order: ORDER,
            data: k.as_slice(),
        })?,
        Dtype::F32 => serde_json::to_string(&OktOut {
            format: FORMAT,
            shape: k.shape(),
            groups: k.groups(),
            dtype,
            order: ORDER,
            data: k.as_slice().iter().map(|&v| v as f32).collect::<Vec<f32>>(),
        })?,
    };
    s.push('\n');
    Ok(s)
}

/// Parse an okt-v1 document. Unknown formats and orders are rejected.
pub fn kernel_from_str(text: &str) -> Result<KernelTensor> {
    let raw: OktIn = serde_json::from_str(text)?;
    if raw.format != FORMAT {
        return Err(Error::Format(format!(
            "unknown kernel format {:?}, expected {FORMAT:?}",
            raw.format
        )));
    }
    if raw.order != ORDER {
        return Err(Error::Format(format!(
            "unsupported element order {:?}",
            raw.order
        )));
    }
    let mut data = raw.data;
    if raw.dtype == Dtype::F32 {
        // The decimal text is the shortest form of an f32, not of an f64.
        data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    KernelTensor::new(raw.shape, raw.groups, data)
}

pub fn write_kernel(path: &Path, k: &KernelTensor, dtype: Dtype) -> Result<()> {
    fs::write(path, kernel_to_string(k, dtype)?)?;
    Ok(())
}

pub fn read_kernel(path: &Path) -> Result<KernelTensor> {
    kernel_from_str(&fs::read_to_string(path)?)
}

/// `<path>.meta.json`, where a kernel's build metadata is stored.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let k = KernelTensor::random([3, 2, 2, 3], 8)
            .with_groups(1)
            .unwrap();
        let text = kernel_to_string(&k, Dtype::F64).unwrap();
        assert!(text.ends_with("}\n"));
        let back = kernel_from_str(&text).unwrap();
        assert_eq!(back, k);
        assert_eq!(kernel_to_string(&back, Dtype::F64).unwrap(), text);
    }

    #[test]
    fn header_fields() {
        let k = KernelTensor::new([2, 1, 1, 1], 2, vec![1.0, 1.0]).unwrap();
        let text = kernel_to_string(&k, Dtype::F64).unwrap();
        assert_eq!(
            text,
            "{\"format\":\"okt-v1\",\"shape\":[2,1,1,1],\"groups\":2,\"dtype\":\"f64\",\
             \"order\":\"row-major\",\"data\":[1.0,1.0]}\n"
        );
    }

    #[test]
    fn f32_export_rounds() {
        let k = KernelTensor::new([1, 1, 1, 1], 1, vec![0.1]).unwrap();
        let text = kernel_to_string(&k, Dtype::F32).unwrap();
        assert!(text.contains("\"dtype\":\"f32\""));
        assert!(text.contains("[0.1]"));
        assert_eq!(kernel_from_str(&text).unwrap().as_slice()[0], 0.1f32 as f64);
    }

    #[test]
    fn rejects_unknown_format_and_bad_data() {
        let bad = r#"{"format":"okt-v2","shape":[1,1,1,1],"groups":1,"dtype":"f64","order":"row-major","data":[1.0]}"#;
        assert!(matches!(kernel_from_str(bad), Err(Error::Format(_))));
        let short = r#"{"format":"okt-v1","shape":[1,1,1,2],"groups":1,"dtype":"f64","order":"row-major","data":[1.0]}"#;
        assert!(kernel_from_str(short).is_err());
        let order = r#"{"format":"okt-v1","shape":[1,1,1,1],"groups":1,"dtype":"f64","order":"col-major","data":[1.0]}"#;
        assert!(kernel_from_str(order).is_err());
        assert!(kernel_from_str("not json").is_err());
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(
            sidecar_path(Path::new("/tmp/k.okt")),
            PathBuf::from("/tmp/k.okt.meta.json")
        );
    }
}

//! safetensors layout:
//!
//! ```text
//! [u64 LE header length][JSON header][tensor payload]
//! ```
//!
//! The header maps each tensor name to `{dtype, shape, data_offsets}`, with
//! offsets relative to the start of the payload. An optional `__metadata__`
//! entry holds string pairs. Headers written here are padded with spaces to
//! a multiple of 8 bytes and list tensors in name order; payload regions
//! follow the same order with no gaps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Dtype, Tensor};
use crate::error::{Error, Result};

const METADATA_KEY: &str = "__metadata__";
const MAX_HEADER_LEN: u64 = 100 * 1024 * 1024;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

type Decoded = (BTreeMap<String, Tensor>, Option<BTreeMap<String, String>>);

#[derive(Serialize)]
#[serde(untagged)]
enum HeaderValue<'a> {
    Metadata(&'a BTreeMap<String, String>),
    Tensor(TensorEntry),
}

pub fn encode_container(
    tensors: &BTreeMap<String, Tensor>,
    metadata: Option<&BTreeMap<String, String>>,
) -> Result<Vec<u8>> {
    let mut header: BTreeMap<&str, HeaderValue> = BTreeMap::new();
    if let Some(meta) = metadata {
        header.insert(METADATA_KEY, HeaderValue::Metadata(meta));
    }
    let mut offset = 0usize;
    for (name, tensor) in tensors {
        let end = offset + tensor.data().len();
        let entry = TensorEntry {
            dtype: tensor.dtype().as_str().to_string(),
            shape: tensor.shape().to_vec(),
            data_offsets: [offset, end],
        };
        header.insert(name, HeaderValue::Tensor(entry));
        offset = end;
    }

    let mut header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let padded = header_bytes.len().div_ceil(8) * 8;
    header_bytes.resize(padded, b' ');

    let mut out = Vec::with_capacity(8 + header_bytes.len() + offset);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for tensor in tensors.values() {
        out.extend_from_slice(tensor.data());
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<Decoded> {
    if bytes.len() < 8 {
        return Err(Error::MalformedHeader("file shorter than the length prefix".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    if header_len > MAX_HEADER_LEN {
        return Err(Error::MalformedHeader(format!("header length {header_len} is implausible")));
    }
    let header_end = 8 + header_len as usize;
    if header_end > bytes.len() {
        return Err(Error::MalformedHeader(format!(
            "header claims {header_len} bytes but the file has {}",
            bytes.len() - 8
        )));
    }
    let header: Map<String, Value> = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let payload = &bytes[header_end..];

    let mut metadata = None;
    let mut entries = Vec::with_capacity(header.len());
    for (name, value) in header {
        if name == METADATA_KEY {
            let meta: BTreeMap<String, String> = serde_json::from_value(value)
                .map_err(|e| Error::MalformedHeader(format!("{METADATA_KEY}: {e}")))?;
            metadata = Some(meta);
            continue;
        }
        let entry: TensorEntry = serde_json::from_value(value)
            .map_err(|e| Error::MalformedHeader(format!("`{name}`: {e}")))?;
        let dtype = Dtype::parse(&entry.dtype)?;
        let [start, end] = entry.data_offsets;
        if end < start {
            return Err(Error::MalformedHeader(format!("`{name}` has reversed offsets")));
        }
        let expected = entry
            .shape
            .iter()
            .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::MalformedHeader(format!("`{name}` shape overflows")))?;
        if end - start != expected {
            return Err(Error::MalformedHeader(format!(
                "`{name}` spans {} bytes but {} {:?} needs {expected}",
                end - start,
                dtype,
                entry.shape
            )));
        }
        if end > payload.len() {
            return Err(Error::TruncatedData { name, end, available: payload.len() });
        }
        entries.push((name, dtype, entry.shape, start, end));
    }

    // regions must tile the payload exactly
    entries.sort_by_key(|e| (e.3, e.4));
    let mut cursor = 0usize;
    let mut previous: Option<&str> = None;
    for (name, _, _, start, end) in &entries {
        if *start < cursor {
            return Err(Error::OffsetOverlap {
                first: previous.unwrap_or_default().to_string(),
                second: name.clone(),
            });
        }
        if *start > cursor {
            return Err(Error::MalformedHeader(format!(
                "gap before `{name}` (bytes {cursor}..{start} unused)"
            )));
        }
        cursor = *end;
        previous = Some(name);
    }
    if cursor != payload.len() {
        return Err(Error::MalformedHeader(format!(
            "{} trailing payload bytes not owned by any tensor",
            payload.len() - cursor
        )));
    }

    let mut tensors = BTreeMap::new();
    for (name, dtype, shape, start, end) in entries {
        let tensor = Tensor::new(dtype, shape, payload[start..end].to_vec())?;
        tensors.insert(name, tensor);
    }
    Ok((tensors, metadata))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_file(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut out = (header.len() as u64).to_le_bytes().to_vec();
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn minimal_single_tensor() {
        let header = r#"{"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}}"#;
        let payload: Vec<u8> = [1.0f32, 2.0, 3.0, 4.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let (tensors, meta) = decode_container(&raw_file(header, &payload)).unwrap();
        assert!(meta.is_none());
        let w = &tensors["w"];
        assert_eq!(w.shape(), &[2, 2]);
        assert_eq!(w.to_f64(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn offsets_past_end_are_truncated() {
        let header = r#"{"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}}"#;
        let err = decode_container(&raw_file(header, &[0u8; 12])).unwrap_err();
        assert!(matches!(err, Error::TruncatedData { end: 16, available: 12, .. }), "{err}");
    }

    #[test]
    fn overlapping_regions() {
        let header = r#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}}"#;
        let err = decode_container(&raw_file(header, &[0u8; 12])).unwrap_err();
        assert!(matches!(err, Error::OffsetOverlap { .. }), "{err}");
    }

    #[test]
    fn unsupported_dtype() {
        let header = r#"{"a":{"dtype":"I32","shape":[2],"data_offsets":[0,8]}}"#;
        let err = decode_container(&raw_file(header, &[0u8; 8])).unwrap_err();
        assert!(matches!(err, Error::UnsupportedDtype(ref d) if d == "I32"));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_container(&[1, 2, 3]), Err(Error::MalformedHeader(_))));
        assert!(matches!(
            decode_container(&raw_file("{not json", &[])),
            Err(Error::MalformedHeader(_))
        ));
        let mut huge = 1_000u64.to_le_bytes().to_vec();
        huge.extend_from_slice(b"{}");
        assert!(matches!(decode_container(&huge), Err(Error::MalformedHeader(_))));
        // declared byte span disagrees with shape
        let header = r#"{"a":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}}"#;
        assert!(matches!(
            decode_container(&raw_file(header, &[0u8; 8])),
            Err(Error::MalformedHeader(_))
        ));
        // trailing bytes
        let header = r#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}}"#;
        assert!(matches!(
            decode_container(&raw_file(header, &[0u8; 10])),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn encoded_layout() {
        let mut tensors = BTreeMap::new();
        tensors.insert("b".to_string(), Tensor::from_f64(Dtype::F16, vec![2], &[1.0, 2.0]).unwrap());
        tensors.insert("a".to_string(), Tensor::from_f64(Dtype::F64, vec![1], &[3.0]).unwrap());
        let bytes = encode_container(&tensors, None).unwrap();
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        assert_eq!(header_len % 8, 0);
        let header = std::str::from_utf8(&bytes[8..8 + header_len]).unwrap();
        assert!(header.starts_with(
            r#"{"a":{"dtype":"F64","shape":[1],"data_offsets":[0,8]},"b":{"dtype":"F16","shape":[2],"data_offsets":[8,12]}}"#
        ));
        assert_eq!(bytes.len(), 8 + header_len + 12);
        let (back, _) = decode_container(&bytes).unwrap();
        assert_eq!(back, tensors);
    }

    #[test]
    fn metadata_round_trips() {
        let mut meta = BTreeMap::new();
        meta.insert("format".to_string(), "pt".to_string());
        let tensors = BTreeMap::new();
        let bytes = encode_container(&tensors, Some(&meta)).unwrap();
        let (back, back_meta) = decode_container(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back_meta, Some(meta));
    }
}

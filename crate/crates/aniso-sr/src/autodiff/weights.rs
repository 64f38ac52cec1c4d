//! Named parameter/buffer collections and their on-disk format.
//!
//! Files carry a line-oriented ASCII header (names, kinds, shapes, byte
//! offsets, architecture fingerprint, CRC32 of the payload) followed by the
//! raw little-endian f32 payload, so round-trips are bit-exact and files
//! stay debuggable with a hex dump.

use std::path::Path;

use crate::error::{Error, Result};

use super::tensor::Tensor;

const FILE_HEADER: &str = "ANISO-SR-WEIGHTS v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// Trainable parameter; loads with `requires_grad` set.
    Param,
    /// Non-trainable state (batch-norm running statistics).
    Buffer,
}

impl WeightKind {
    fn as_str(&self) -> &'static str {
        match self {
            WeightKind::Param => "param",
            WeightKind::Buffer => "buffer",
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeightEntry {
    pub name: String,
    pub kind: WeightKind,
    pub tensor: Tensor,
}

/// Ordered, uniquely named collection of parameters and buffers plus an
/// architecture fingerprint that must match on load.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    entries: Vec<WeightEntry>,
    fingerprint: String,
}

impl ModelWeights {
    pub fn new(fingerprint: impl Into<String>) -> ModelWeights {
        ModelWeights {
            entries: Vec::new(),
            fingerprint: fingerprint.into(),
        }
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Append an entry; names must be unique and whitespace-free.
    pub fn push(&mut self, name: impl Into<String>, kind: WeightKind, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Contract(format!(
                "weight name {name:?} must be non-empty without whitespace"
            )));
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Contract(format!("duplicate weight name {name:?}")));
        }
        let tensor = match kind {
            WeightKind::Param => tensor.with_requires_grad(true),
            WeightKind::Buffer => tensor.with_requires_grad(false),
        };
        self.entries.push(WeightEntry { name, kind, tensor });
        Ok(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[WeightEntry] {
        &self.entries
    }

    pub fn entry(&self, idx: usize) -> &WeightEntry {
        &self.entries[idx]
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut WeightEntry {
        &mut self.entries[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&WeightEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.kind == WeightKind::Param)
            .map(|e| e.tensor.numel())
            .collect()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries
            .iter_mut()
            .filter(|e| e.kind == WeightKind::Param)
            .map(|e| &mut e.tensor)
    }

    /// Indices of param entries, in order.
    pub fn param_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == WeightKind::Param)
            .map(|(i, _)| i)
            .collect()
    }

    /// Mutable access to two distinct entries' tensors at once.
    pub fn tensors_pair_mut(&mut self, i: usize, j: usize) -> (&mut Tensor, &mut Tensor) {
        assert_ne!(i, j, "pair access needs distinct entries");
        if i < j {
            let (left, right) = self.entries.split_at_mut(j);
            (&mut left[i].tensor, &mut right[0].tensor)
        } else {
            let (left, right) = self.entries.split_at_mut(i);
            (&mut right[0].tensor, &mut left[j].tensor)
        }
    }
}

/// IEEE CRC-32 (reflected polynomial 0xEDB88320).
pub(crate) fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, t) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { (c >> 1) ^ 0xEDB8_8320 } else { c >> 1 };
        }
        *t = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = (crc >> 8) ^ table[((crc ^ b as u32) & 0xFF) as usize];
    }
    !crc
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    let mut payload: Vec<u8> = Vec::new();
    let mut lines = String::new();
    for e in weights.entries() {
        let offset = payload.len();
        for &v in e.tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let shape = e
            .tensor
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        lines.push_str(&format!(
            "entry: {} {} {} {}\n",
            e.name,
            e.kind.as_str(),
            shape,
            offset
        ));
    }
    let header = format!(
        "{FILE_HEADER}\nfingerprint: {}\ntensors: {}\npayload_bytes: {}\npayload_crc32: {:08x}\n{lines}END-HEADER\n",
        weights.fingerprint(),
        weights.entries().len(),
        payload.len(),
        crc32(&payload),
    );
    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(&payload);
    crate::io::write_atomic(path, &bytes)
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = b"END-HEADER\n";
    let header_end = find_subslice(&bytes, marker)
        .ok_or_else(|| Error::format(path, "missing END-HEADER marker"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::format(path, "header is not valid UTF-8"))?;
    let payload = &bytes[header_end + marker.len()..];

    let mut lines = header.lines();
    let first = lines.next().unwrap_or_default();
    if first != FILE_HEADER {
        return Err(Error::format(
            path,
            format!("first line {first:?}, expected {FILE_HEADER:?}"),
        ));
    }

    let mut fingerprint: Option<String> = None;
    let mut tensor_count: Option<usize> = None;
    let mut payload_bytes: Option<usize> = None;
    let mut payload_crc: Option<u32> = None;
    let mut entries: Vec<(String, WeightKind, Vec<usize>, usize)> = Vec::new();

    for line in lines {
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::format(path, format!("header line {line:?} lacks a key")))?;
        let value = value.trim();
        match key {
            "fingerprint" => fingerprint = Some(value.to_string()),
            "tensors" => {
                tensor_count = Some(value.parse().map_err(|_| {
                    Error::format(path, format!("tensors count {value:?} unparsable"))
                })?)
            }
            "payload_bytes" => {
                payload_bytes = Some(value.parse().map_err(|_| {
                    Error::format(path, format!("payload_bytes {value:?} unparsable"))
                })?)
            }
            "payload_crc32" => {
                payload_crc = Some(u32::from_str_radix(value, 16).map_err(|_| {
                    Error::format(path, format!("payload_crc32 {value:?} unparsable"))
                })?)
            }
            "entry" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 4 {
                    return Err(Error::format(
                        path,
                        format!("entry line needs 4 fields, got {line:?}"),
                    ));
                }
                let kind = match parts[1] {
                    "param" => WeightKind::Param,
                    "buffer" => WeightKind::Buffer,
                    other => {
                        return Err(Error::format(path, format!("unknown entry kind {other:?}")))
                    }
                };
                let shape: Vec<usize> = parts[2]
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::format(path, format!("shape {:?} unparsable", parts[2])))?;
                let offset: usize = parts[3]
                    .parse()
                    .map_err(|_| Error::format(path, format!("offset {:?} unparsable", parts[3])))?;
                entries.push((parts[0].to_string(), kind, shape, offset));
            }
            other => return Err(Error::format(path, format!("unknown header key {other:?}"))),
        }
    }

    let fingerprint = fingerprint.ok_or_else(|| Error::format(path, "missing fingerprint"))?;
    let tensor_count = tensor_count.ok_or_else(|| Error::format(path, "missing tensors count"))?;
    let payload_bytes =
        payload_bytes.ok_or_else(|| Error::format(path, "missing payload_bytes"))?;
    let payload_crc = payload_crc.ok_or_else(|| Error::format(path, "missing payload_crc32"))?;

    if entries.len() != tensor_count {
        return Err(Error::format(
            path,
            format!("header declares {tensor_count} tensors, lists {}", entries.len()),
        ));
    }
    if payload.len() != payload_bytes {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header declares {payload_bytes}", payload.len()),
        ));
    }
    let actual_crc = crc32(payload);
    if actual_crc != payload_crc {
        return Err(Error::Checksum(format!(
            "{}: payload crc32 {actual_crc:08x} does not match declared {payload_crc:08x}",
            path.display()
        )));
    }

    let mut weights = ModelWeights::new(fingerprint);
    for (name, kind, shape, offset) in entries {
        let numel: usize = shape.iter().product();
        let end = offset + numel * 4;
        if end > payload.len() {
            return Err(Error::format(
                path,
                format!("entry {name:?} spans bytes {offset}..{end} beyond the payload"),
            ));
        }
        let data: Vec<f32> = payload[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        weights.push(name, kind, Tensor::new(shape, data)?)?;
    }
    Ok(weights)
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|w| w == needle)
}

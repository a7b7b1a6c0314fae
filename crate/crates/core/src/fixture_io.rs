//! Binary tensor files and JSON keypoint documents.
//!
//! Tensor layout, all little-endian:
//!
//! ```text
//! offset 0   magic  "HRT1"
//! offset 4   dtype  u8, 0 = f32
//! offset 5   rank   u8
//! offset 6   dims   rank x u32
//! then       data   product(dims) x f32, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::PoseSet;
use crate::error::{Error, Result};
use crate::scaling::JOINT_COUNT;
use crate::tensor::Tensor;
use crate::training::PersonKeypoints;

pub const TENSOR_MAGIC: &[u8; 4] = b"HRT1";
pub const DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 6;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let dims = t.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * dims.len() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(DTYPE_F32);
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a tensor file. Ranks below 4 are padded with leading 1s.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let fail = |offset: usize, reason: String| Error::Format {
        offset: offset as u64,
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len())));
    }
    if &bytes[..4] != TENSOR_MAGIC {
        return Err(fail(0, format!("bad magic {:?}, expected \"HRT1\"", String::from_utf8_lossy(&bytes[..4]))));
    }
    if bytes[4] != DTYPE_F32 {
        return Err(fail(4, format!("unsupported dtype code {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    if rank == 0 || rank > 4 {
        return Err(fail(5, format!("rank {rank} outside 1..=4")));
    }
    let dims_end = HEADER_LEN + 4 * rank;
    if bytes.len() < dims_end {
        return Err(fail(bytes.len(), format!("dims need {} bytes, file has {}", dims_end, bytes.len())));
    }
    let mut dims = [1usize; 4];
    for i in 0..rank {
        let at = HEADER_LEN + 4 * i;
        let d = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        if d == 0 {
            return Err(fail(at, "zero-sized dimension".into()));
        }
        dims[4 - rank + i] = d;
    }
    let count: usize = dims.iter().product();
    let payload = &bytes[dims_end..];
    if payload.len() != 4 * count {
        return Err(fail(
            dims_end,
            format!("payload expected {} bytes for dims {dims:?}, found {}", 4 * count, payload.len()),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(dims, data)
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPoint {
    pub x: f32,
    pub y: f32,
    #[serde(default = "visible_default")]
    pub visible: bool,
}

fn visible_default() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    /// Square image side in pixels.
    pub image_size: usize,
    /// Per person, exactly 17 entries; `null` for unannotated joints.
    pub persons: Vec<Vec<Option<AnnotatedPoint>>>,
}

impl AnnotationDoc {
    pub fn from_keypoints(image_size: usize, persons: &[PersonKeypoints]) -> Self {
        AnnotationDoc {
            image_size,
            persons: persons
                .iter()
                .map(|p| p.iter().map(|k| k.map(|(x, y)| AnnotatedPoint { x, y, visible: true })).collect())
                .collect(),
        }
    }

    /// Visible keypoints per person; hidden ones become `None`.
    pub fn keypoints(&self) -> Result<Vec<PersonKeypoints>> {
        let bound = self.image_size as f32;
        self.persons
            .iter()
            .enumerate()
            .map(|(p, joints)| {
                if joints.len() != JOINT_COUNT {
                    return Err(Error::Domain(format!(
                        "person {p} has {} joints, expected {JOINT_COUNT}",
                        joints.len()
                    )));
                }
                let mut out = [None; JOINT_COUNT];
                for (j, k) in joints.iter().enumerate() {
                    let Some(k) = k.filter(|k| k.visible) else { continue };
                    if !(k.x >= 0.0 && k.x < bound && k.y >= 0.0 && k.y < bound) {
                        return Err(Error::KeypointOutOfBounds {
                            person: p,
                            joint: j,
                            x: k.x,
                            y: k.y,
                            bound: self.image_size,
                        });
                    }
                    out[j] = Some((k.x, k.y));
                }
                Ok(out)
            })
            .collect()
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        reason: e.to_string(),
    })
}

pub fn parse_annotations(text: &str) -> Result<AnnotationDoc> {
    let doc: AnnotationDoc = parse_json(text)?;
    doc.keypoints()?;
    Ok(doc)
}

/// Reads an annotation document and returns its visible keypoints.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<PersonKeypoints>> {
    parse_annotations(&fs::read_to_string(path)?)?.keypoints()
}

pub fn write_annotations(doc: &AnnotationDoc, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(doc).expect("plain data serializes") + "\n")?;
    Ok(())
}

pub fn poses_to_string(poses: &PoseSet) -> String {
    serde_json::to_string_pretty(poses).expect("plain data serializes") + "\n"
}

pub fn parse_poses(text: &str) -> Result<PoseSet> {
    parse_json(text)
}

pub fn write_poses(poses: &PoseSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, poses_to_string(poses))?;
    Ok(())
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<PoseSet> {
    parse_poses(&fs::read_to_string(path)?)
}

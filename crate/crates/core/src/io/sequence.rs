use std::io::{BufRead, Write};
use std::ops::Range;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{check_header, FORMAT_VERSION};
use crate::body::Camera;
use crate::energy::GroundPlane;
use crate::error::{Error, Result};
use crate::fpp::KeypointFrame2D;
use crate::pipelines::{ObservationFrame, SequenceInput};
use crate::pressure::DenseContact;

pub const SEQUENCE_FORMAT: &str = "contactcap-sequence";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    subject: String,
    frame_rate: f64,
    image_size: [f64; 2],
    camera: Camera,
    floor: GroundPlane,
    standing_segment: Range<usize>,
    frames: usize,
    has_contact: bool,
}

/// Location of a frame's depth points in the binary section.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CloudBlock {
    /// Byte offset from the start of the binary section.
    offset: u64,
    points: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    frame: usize,
    timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera: Option<Camera>,
    keypoints: KeypointFrame2D,
    cloud: CloudBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contact: Option<DenseContact>,
}

const POINT_BYTES: u64 = 24;

/// Writes the header line, one JSON line per frame and then the depth
/// clouds as little-endian `f64` triples. A frame's camera is written only
/// when it differs from the first frame's.
pub fn write_sequence<W: Write>(seq: &SequenceInput, mut out: W) -> Result<()> {
    seq.validate()?;
    let camera = seq.frames[0].cam;
    let header = Header {
        format: SEQUENCE_FORMAT.into(),
        version: FORMAT_VERSION,
        subject: seq.subject.clone(),
        frame_rate: seq.frame_rate,
        image_size: seq.image_size,
        camera,
        floor: seq.floor,
        standing_segment: seq.standing_segment.clone(),
        frames: seq.len(),
        has_contact: seq.pressure.is_some(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut offset = 0;
    for (i, f) in seq.frames.iter().enumerate() {
        let record = FrameRecord {
            frame: i,
            timestamp: f.timestamp,
            camera: (f.cam != camera).then_some(f.cam),
            keypoints: f.keypoints.clone(),
            cloud: CloudBlock {
                offset,
                points: f.depth_cloud.len(),
            },
            contact: seq.pressure.as_ref().map(|p| p[i].clone()),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
        offset += POINT_BYTES * f.depth_cloud.len() as u64;
    }
    for f in &seq.frames {
        for p in &f.depth_cloud {
            for c in p.iter() {
                out.write_f64::<LittleEndian>(*c)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_sequence<R: BufRead>(mut input: R) -> Result<SequenceInput> {
    let bad = |m: String| Error::format(SEQUENCE_FORMAT, m);
    let mut line = String::new();
    let mut next_line = |input: &mut R| -> Result<String> {
        line.clear();
        if input.read_line(&mut line)? == 0 || !line.ends_with('\n') {
            return Err(Error::format(SEQUENCE_FORMAT, "truncated record section"));
        }
        Ok(line.clone())
    };
    let header: Header = serde_json::from_str(&next_line(&mut input)?)
        .map_err(|e| bad(format!("header: {e}")))?;
    check_header(&header.format, header.version, SEQUENCE_FORMAT)?;
    let mut records = Vec::with_capacity(header.frames.min(1 << 20));
    for i in 0..header.frames {
        let r: FrameRecord = serde_json::from_str(&next_line(&mut input)?)
            .map_err(|e| bad(format!("frame {i}: {e}")))?;
        if r.frame != i {
            return Err(bad(format!("frame {i} is labelled {}", r.frame)));
        }
        if r.contact.is_some() != header.has_contact {
            return Err(bad(format!("frame {i}: contact presence disagrees with the header")));
        }
        records.push(r);
    }
    let mut offset = 0;
    let mut frames = Vec::with_capacity(records.len());
    let mut contact = Vec::new();
    for r in records {
        if r.cloud.offset != offset {
            return Err(bad(format!(
                "frame {}: cloud offset {} where {offset} was expected",
                r.frame, r.cloud.offset
            )));
        }
        let mut flat = vec![0.0; 3 * r.cloud.points];
        input
            .read_f64_into::<LittleEndian>(&mut flat)
            .map_err(|_| bad(format!("frame {}: truncated cloud block", r.frame)))?;
        offset += POINT_BYTES * r.cloud.points as u64;
        frames.push(ObservationFrame {
            keypoints: r.keypoints,
            depth_cloud: flat
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
            cam: r.camera.unwrap_or(header.camera),
            timestamp: r.timestamp,
        });
        contact.extend(r.contact);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after the cloud blocks".into()));
    }
    let seq = SequenceInput {
        subject: header.subject,
        frame_rate: header.frame_rate,
        image_size: header.image_size,
        floor: header.floor,
        frames,
        pressure: header.has_contact.then_some(contact),
        standing_segment: header.standing_segment,
    };
    seq.validate()?;
    Ok(seq)
}

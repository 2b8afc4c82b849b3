use std::io::{BufRead, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{read_jsonl, write_jsonl, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::pressure::{PressureFrame, SENSORS_PER_INSOLE};

const FORMAT: &str = "contactcap-pressure";
pub const PRESSURE_MAGIC: &[u8; 8] = b"CCPRESS\0";

pub fn write_pressure_jsonl<W: Write>(frames: &[PressureFrame], out: W) -> Result<()> {
    for f in frames {
        f.validate()?;
    }
    write_jsonl(out, FORMAT, frames)
}

pub fn read_pressure_jsonl<R: BufRead>(input: R) -> Result<Vec<PressureFrame>> {
    let frames: Vec<PressureFrame> = read_jsonl(input, FORMAT)?;
    for f in &frames {
        f.validate()?;
    }
    Ok(frames)
}

/// Layout: magic, `u32` version, `u32` sensors per insole, `u64` frame
/// count, then per frame the timestamp, the left and the right insole as
/// little-endian `f64`.
pub fn write_pressure_binary<W: Write>(frames: &[PressureFrame], mut out: W) -> Result<()> {
    out.write_all(PRESSURE_MAGIC)?;
    out.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    out.write_u32::<LittleEndian>(SENSORS_PER_INSOLE as u32)?;
    out.write_u64::<LittleEndian>(frames.len() as u64)?;
    for f in frames {
        f.validate()?;
        out.write_f64::<LittleEndian>(f.timestamp)?;
        for v in f.left.iter().chain(&f.right) {
            out.write_f64::<LittleEndian>(*v)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_pressure_binary<R: Read>(mut input: R) -> Result<Vec<PressureFrame>> {
    let bad = |m: &str| Error::format(FORMAT, m);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != PRESSURE_MAGIC {
        return Err(bad("not a binary pressure file"));
    }
    let version = input.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let sensors = input.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    if sensors != SENSORS_PER_INSOLE {
        return Err(bad(&format!("{sensors} sensors per insole, expected {SENSORS_PER_INSOLE}")));
    }
    let n = input.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    let mut frames = Vec::with_capacity((n as usize).min(1 << 16));
    for i in 0..n {
        let mut values = vec![0.0; 1 + 2 * SENSORS_PER_INSOLE];
        input
            .read_f64_into::<LittleEndian>(&mut values)
            .map_err(|_| bad(&format!("truncated frame {i}")))?;
        let frame = PressureFrame {
            timestamp: values[0],
            left: values[1..1 + SENSORS_PER_INSOLE].to_vec(),
            right: values[1 + SENSORS_PER_INSOLE..].to_vec(),
        };
        frame.validate()?;
        frames.push(frame);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(frames)
}

/// Reads either encoding, telling them apart by the binary magic.
pub fn read_pressure<R: BufRead>(mut input: R) -> Result<Vec<PressureFrame>> {
    if input.fill_buf()?.starts_with(&PRESSURE_MAGIC[..4]) {
        read_pressure_binary(input)
    } else {
        read_pressure_jsonl(input)
    }
}

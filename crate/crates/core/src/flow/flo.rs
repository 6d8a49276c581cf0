//! Middlebury `.flo` files: the 4-byte tag `PIEH` (the float 202021.25),
//! `i32` width, `i32` height, then row-major interleaved `(dx, dy)` `f32`
//! pairs, all little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{FlowField, FlowProvenance};
use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

/// Largest side accepted when reading, guards against garbage headers.
const MAX_SIDE: i32 = 1 << 16;

static FILES_READ: AtomicU64 = AtomicU64::new(0);

/// Number of `.flo` files this process has opened for reading.
pub fn flo_files_read() -> u64 {
    FILES_READ.load(Ordering::Relaxed)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    out.write_f32::<LittleEndian>(FLO_MAGIC).map_err(io)?;
    out.write_i32::<LittleEndian>(flow.width() as i32)
        .map_err(io)?;
    out.write_i32::<LittleEndian>(flow.height() as i32)
        .map_err(io)?;
    for (u, v) in flow.dx().iter().zip(flow.dy()) {
        out.write_f32::<LittleEndian>(*u).map_err(io)?;
        out.write_f32::<LittleEndian>(*v).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a `.flo` file, tagging it with the given frame indices.
pub fn read_flo(
    path: &Path,
    target: usize,
    source: usize,
    provenance: FlowProvenance,
) -> Result<FlowField> {
    FILES_READ.fetch_add(1, Ordering::Relaxed);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let short = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, "truncated flow file")
        } else {
            Error::io(path, e)
        }
    };
    let magic = input.read_f32::<LittleEndian>().map_err(short)?;
    if magic != FLO_MAGIC {
        return Err(Error::format(path, format!("bad tag {magic}")));
    }
    let width = input.read_i32::<LittleEndian>().map_err(short)?;
    let height = input.read_i32::<LittleEndian>().map_err(short)?;
    if !(1..=MAX_SIDE).contains(&width) || !(1..=MAX_SIDE).contains(&height) {
        return Err(Error::format(
            path,
            format!("implausible size {width}×{height}"),
        ));
    }
    let n = width as usize * height as usize;
    let mut dx = Vec::with_capacity(n);
    let mut dy = Vec::with_capacity(n);
    for _ in 0..n {
        dx.push(input.read_f32::<LittleEndian>().map_err(short)?);
        dy.push(input.read_f32::<LittleEndian>().map_err(short)?);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after flow data"));
    }
    FlowField::new(
        height as usize,
        width as usize,
        dx,
        dy,
        target,
        source,
        provenance,
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

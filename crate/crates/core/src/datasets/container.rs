//! Little-endian window container:
//!
//! ```text
//! "ARCD"  version u32  n_imu u32  n_classes u32
//! n_classes × (name length u16, UTF-8 name)
//! window count u64
//! per window: subject u16, label u16, n_imu·6·128 × f32
//! ```

use std::path::Path;

use super::{ImuWindow, WindowSet};
use crate::encoder::{CHANNELS_PER_IMU, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"ARCD";
pub const CONTAINER_VERSION: u32 = 1;

pub fn encode_windows(set: &WindowSet) -> Result<Vec<u8>> {
    set.validate()?;
    let per = set.n_imu * CHANNELS_PER_IMU * WINDOW_LEN;
    let mut out = Vec::with_capacity(64 + set.windows.len() * (4 + 4 * per));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.n_imu as u32).to_le_bytes());
    out.extend_from_slice(&(set.class_names.len() as u32).to_le_bytes());
    for name in &set.class_names {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("class name {name:?} too long")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    out.extend_from_slice(&(set.windows.len() as u64).to_le_bytes());
    for w in &set.windows {
        let label = u16::try_from(w.label).map_err(|_| Error::Format(format!("label {} does not fit u16", w.label)))?;
        out.extend_from_slice(&w.subject.to_le_bytes());
        out.extend_from_slice(&label.to_le_bytes());
        for v in w.data.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("container truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

pub fn decode_windows(bytes: &[u8]) -> Result<WindowSet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a window container (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let n_imu = r.u32()? as usize;
    let n_classes = r.u32()? as usize;
    let mut class_names = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Format(format!("class name is not UTF-8: {e}")))?;
        class_names.push(name.to_string());
    }
    let count = r.u64()?;
    let per = n_imu * CHANNELS_PER_IMU * WINDOW_LEN;
    let remaining = (bytes.len() - r.pos) as u64;
    if count.checked_mul(4 + 4 * per as u64) != Some(remaining) {
        return Err(Error::Format(format!("{count} windows do not match {remaining} payload bytes")));
    }
    let mut windows = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let subject = r.u16()?;
        let label = r.u16()? as usize;
        let data = r.take(4 * per)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        windows.push(ImuWindow { data: Tensor::from_vec(&[n_imu, CHANNELS_PER_IMU, WINDOW_LEN], data)?, label, subject });
    }
    let set = WindowSet { n_imu, class_names, windows };
    set.validate()?;
    Ok(set)
}

pub fn write_windows(path: &Path, set: &WindowSet) -> Result<()> {
    std::fs::write(path, encode_windows(set)?)?;
    Ok(())
}

pub fn read_windows(path: &Path) -> Result<WindowSet> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_windows(&bytes)
}

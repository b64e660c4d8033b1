//! Binary point-set files.
//!
//! Layout, all little-endian: magic `JZPT`, format version (u32), dims
//! (u32), count (u64), flags (u32), then an optional box-length block of
//! dims f64 (flag bit 2), positions as count x dims f64 row-major, an
//! optional mass block of count f64 (bit 0) and an optional velocity
//! block of count x dims f64 (bit 1). Decoding is strict: unknown flag
//! bits, truncated or oversized payloads, non-finite values, and
//! non-positive box lengths are all rejected — the decoder is the only
//! part of the crate that consumes untrusted bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::points::PointSet;

pub const MAGIC: [u8; 4] = *b"JZPT";
pub const VERSION: u32 = 1;

const FLAG_MASSES: u32 = 1;
const FLAG_VELOCITIES: u32 = 1 << 1;
const FLAG_PERIODIC: u32 = 1 << 2;
const KNOWN_FLAGS: u32 = FLAG_MASSES | FLAG_VELOCITIES | FLAG_PERIODIC;

/// A decoded file: the points and, for periodic snapshots, the box edge
/// lengths per dimension.
#[derive(Debug, Clone)]
pub struct FileData {
    pub points: PointSet,
    pub box_lengths: Option<Vec<f64>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Cursor<'a> {
    rest: &'a [u8],
    off: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.rest.len() < n {
            return Err(bad(format!(
                "truncated at byte {}: need {n} more, have {}",
                self.off,
                self.rest.len()
            )));
        }
        let (head, tail) = self.rest.split_at(n);
        self.rest = tail;
        self.off += n;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| bad("length overflow"))?)?;
        let out: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite {what} value at entry {i}")));
        }
        Ok(out)
    }
}

/// Decode a complete file image.
pub fn decode(bytes: &[u8]) -> Result<FileData> {
    let mut cur = Cursor {
        rest: bytes,
        off: 0,
    };
    if cur.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let dims = cur.u32()? as usize;
    if dims == 0 {
        return Err(bad("zero dimensions"));
    }
    let count64 = cur.u64()?;
    if count64 > u32::MAX as u64 {
        return Err(bad(format!("count {count64} exceeds the point limit")));
    }
    let count = count64 as usize;
    let flags = cur.u32()?;
    if flags & !KNOWN_FLAGS != 0 {
        return Err(bad(format!("unknown flag bits {:#x}", flags & !KNOWN_FLAGS)));
    }
    let box_lengths = if flags & FLAG_PERIODIC != 0 {
        let lens = cur.f64_vec(dims, "box length")?;
        if let Some(i) = lens.iter().position(|&l| l <= 0.0) {
            return Err(bad(format!("non-positive box length in dimension {i}")));
        }
        Some(lens)
    } else {
        None
    };
    let n_coords = count
        .checked_mul(dims)
        .ok_or_else(|| bad("count x dims overflows"))?;
    let coords = cur.f64_vec(n_coords, "position")?;
    let mut points = PointSet::new(dims, coords)?;
    if flags & FLAG_MASSES != 0 {
        points = points.with_masses(cur.f64_vec(count, "mass")?)?;
    }
    if flags & FLAG_VELOCITIES != 0 {
        points = points.with_velocities(cur.f64_vec(n_coords, "velocity")?)?;
    }
    if !cur.rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", cur.rest.len())));
    }
    Ok(FileData {
        points,
        box_lengths,
    })
}

/// Encode points (and an optional periodic box) to a file image.
pub fn encode(points: &PointSet, box_lengths: Option<&[f64]>) -> Result<Vec<u8>> {
    let dims = points.dim();
    if let Some(lens) = box_lengths {
        if lens.len() != dims {
            return Err(Error::LengthMismatch {
                what: "box lengths",
                got: lens.len(),
                expected: dims,
            });
        }
        if let Some(i) = lens.iter().position(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::BadPeriod {
                dim: i,
                value: lens[i],
            });
        }
    }
    let mut flags = 0u32;
    if points.masses().is_some() {
        flags |= FLAG_MASSES;
    }
    if points.velocities().is_some() {
        flags |= FLAG_VELOCITIES;
    }
    if box_lengths.is_some() {
        flags |= FLAG_PERIODIC;
    }
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims as u32).to_le_bytes());
    out.extend_from_slice(&(points.len() as u64).to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    let push_all = |out: &mut Vec<u8>, vals: &[f64]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    if let Some(lens) = box_lengths {
        push_all(&mut out, lens);
    }
    push_all(&mut out, points.coords());
    if let Some(m) = points.masses() {
        push_all(&mut out, m);
    }
    if let Some(v) = points.velocities() {
        push_all(&mut out, v);
    }
    Ok(out)
}

pub fn read_file(path: impl AsRef<Path>) -> Result<FileData> {
    decode(&std::fs::read(path)?)
}

pub fn write_file(
    path: impl AsRef<Path>,
    points: &PointSet,
    box_lengths: Option<&[f64]>,
) -> Result<()> {
    Ok(std::fs::write(path, encode(points, box_lengths)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PointSet {
        PointSet::new(2, vec![0.25, 1.5, 3.0, 4.75, 9.5, 0.125])
            .unwrap()
            .with_masses(vec![1.0, 2.5, 0.5])
            .unwrap()
            .with_velocities(vec![0.1, -0.2, 0.3, -0.4, 0.5, -0.6])
            .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let img = encode(&p, Some(&[10.0, 12.5])).unwrap();
        let back = decode(&img).unwrap();
        assert_eq!(back.points.coords(), p.coords());
        assert_eq!(back.points.masses(), p.masses());
        assert_eq!(back.points.velocities(), p.velocities());
        assert_eq!(back.box_lengths.as_deref(), Some(&[10.0, 12.5][..]));
        assert_eq!(encode(&back.points, back.box_lengths.as_deref()).unwrap(), img);
    }

    #[test]
    fn positions_only_round_trip() {
        let p = PointSet::new(3, vec![1.0, 2.0, 3.0]).unwrap();
        let img = encode(&p, None).unwrap();
        let back = decode(&img).unwrap();
        assert_eq!(back.points.coords(), p.coords());
        assert!(back.points.masses().is_none());
        assert!(back.box_lengths.is_none());
    }

    #[test]
    fn empty_set_round_trips() {
        let p = PointSet::new(4, Vec::new()).unwrap();
        let back = decode(&encode(&p, None).unwrap()).unwrap();
        assert_eq!(back.points.len(), 0);
        assert_eq!(back.points.dim(), 4);
    }

    #[test]
    fn rejects_malformed_images() {
        let good = encode(&sample(), Some(&[10.0, 12.5])).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode(&bad_magic).is_err());

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(decode(&bad_version).is_err());

        let mut unknown_flag = good.clone();
        unknown_flag[20] |= 0x80;
        assert!(decode(&unknown_flag).is_err());

        assert!(decode(&good[..good.len() - 1]).is_err());
        assert!(decode(&[]).is_err());

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(decode(&trailing).is_err());

        let mut nan_pos = good.clone();
        // First position starts after the 24-byte header and two box lengths.
        nan_pos[40..48].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode(&nan_pos).is_err());

        let mut zero_dims = good.clone();
        zero_dims[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(decode(&zero_dims).is_err());

        let mut huge_count = good.clone();
        huge_count[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&huge_count).is_err());

        let mut bad_box = good;
        bad_box[24..32].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(decode(&bad_box).is_err());
    }

    #[test]
    fn encode_validates_box() {
        let p = PointSet::new(2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            encode(&p, Some(&[1.0])),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            encode(&p, Some(&[1.0, 0.0])),
            Err(Error::BadPeriod { .. })
        ));
    }

    #[test]
    fn file_io_round_trip() {
        let dir = std::env::temp_dir().join("ztree-pointfile-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pts.jzpt");
        let p = sample();
        write_file(&path, &p, None).unwrap();
        let back = read_file(&path).unwrap();
        assert_eq!(back.points.coords(), p.coords());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

//! Minimal zip container support for array archives.
//!
//! Reading understands stored and deflate members plus zip64 size and offset
//! records (numpy writes zip64 extras for every member). Writing always
//! produces stored members with a fixed timestamp so output bytes depend only
//! on the member names and contents.

use std::io::Read;

use flate2::read::DeflateDecoder;

use crate::error::{Error, Result};

const LOCAL_SIG: u32 = 0x0403_4b50;
const CENTRAL_SIG: u32 = 0x0201_4b50;
const EOCD_SIG: u32 = 0x0605_4b50;
const ZIP64_EOCD_SIG: u32 = 0x0606_4b50;
const ZIP64_LOCATOR_SIG: u32 = 0x0706_4b50;

/// 1980-01-01 00:00:00 in MS-DOS format.
const DOS_DATE: u16 = (1 << 5) | 1;
const DOS_TIME: u16 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZipMember {
    pub name: String,
    pub data: Vec<u8>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::MalformedArchive(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn at(bytes: &'a [u8], pos: usize) -> Self {
        Cursor { bytes, pos }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad("unexpected end of archive"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut w = [0u8; 8];
        w.copy_from_slice(b);
        Ok(u64::from_le_bytes(w))
    }
}

fn to_usize(v: u64) -> Result<usize> {
    usize::try_from(v).map_err(|_| bad("size does not fit in memory"))
}

fn find_eocd(bytes: &[u8]) -> Result<usize> {
    if bytes.len() < 22 {
        return Err(bad("too short for a zip archive"));
    }
    let lowest = bytes.len().saturating_sub(22 + u16::MAX as usize);
    (lowest..=bytes.len() - 22)
        .rev()
        .find(|&p| bytes[p..p + 4] == EOCD_SIG.to_le_bytes())
        .ok_or_else(|| bad("end of central directory not found"))
}

/// Reads every member of a zip archive held in memory.
pub fn read_members(bytes: &[u8]) -> Result<Vec<ZipMember>> {
    let eocd = find_eocd(bytes)?;
    let mut c = Cursor::at(bytes, eocd + 4);
    let _disk = c.u16()?;
    let _cd_disk = c.u16()?;
    let _entries_here = c.u16()?;
    let mut entries = u64::from(c.u16()?);
    let mut cd_size = u64::from(c.u32()?);
    let mut cd_offset = u64::from(c.u32()?);

    if entries == 0xFFFF || cd_size == 0xFFFF_FFFF || cd_offset == 0xFFFF_FFFF {
        let loc = eocd
            .checked_sub(20)
            .ok_or_else(|| bad("zip64 locator missing"))?;
        let mut l = Cursor::at(bytes, loc);
        if l.u32()? != ZIP64_LOCATOR_SIG {
            return Err(bad("zip64 locator missing"));
        }
        let _disk = l.u32()?;
        let record = to_usize(l.u64()?)?;
        let mut r = Cursor::at(bytes, record);
        if r.u32()? != ZIP64_EOCD_SIG {
            return Err(bad("zip64 end of central directory missing"));
        }
        let _size = r.u64()?;
        r.take(4 + 8)?;
        let _entries_here = r.u64()?;
        entries = r.u64()?;
        cd_size = r.u64()?;
        cd_offset = r.u64()?;
    }

    let cd_start = to_usize(cd_offset)?;
    let cd_end = cd_start
        .checked_add(to_usize(cd_size)?)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("central directory out of bounds"))?;
    // each record is at least 46 bytes
    if entries > (cd_end - cd_start) as u64 / 46 {
        return Err(bad("entry count exceeds central directory size"));
    }

    let mut c = Cursor::at(&bytes[..cd_end], cd_start);
    let mut members = Vec::with_capacity(entries as usize);
    for _ in 0..entries {
        if c.u32()? != CENTRAL_SIG {
            return Err(bad("bad central directory signature"));
        }
        let _made_by = c.u16()?;
        let _needed = c.u16()?;
        let flags = c.u16()?;
        let method = c.u16()?;
        let _time = c.u16()?;
        let _date = c.u16()?;
        let crc = c.u32()?;
        let mut csize = u64::from(c.u32()?);
        let mut usize_ = u64::from(c.u32()?);
        let name_len = c.u16()? as usize;
        let extra_len = c.u16()? as usize;
        let comment_len = c.u16()? as usize;
        c.take(2 + 2 + 4)?;
        let mut local_offset = u64::from(c.u32()?);
        let name = String::from_utf8_lossy(c.take(name_len)?).into_owned();
        let extra = c.take(extra_len)?;
        c.take(comment_len)?;

        if flags & 1 != 0 {
            return Err(bad(format!("member {name:?} is encrypted")));
        }
        apply_zip64_extra(extra, &mut usize_, &mut csize, &mut local_offset)?;

        let mut l = Cursor::at(bytes, to_usize(local_offset)?);
        if l.u32()? != LOCAL_SIG {
            return Err(bad(format!("bad local header for {name:?}")));
        }
        l.take(22)?;
        let lname = l.u16()? as usize;
        let lextra = l.u16()? as usize;
        l.take(lname + lextra)?;
        let raw = l.take(to_usize(csize)?)?;
        let expected = to_usize(usize_)?;

        let data = match method {
            0 => {
                if raw.len() != expected {
                    return Err(bad(format!("stored member {name:?} size mismatch")));
                }
                raw.to_vec()
            }
            8 => {
                let mut out = Vec::with_capacity(expected.min(raw.len().saturating_mul(16)));
                DeflateDecoder::new(raw)
                    .take(expected as u64 + 1)
                    .read_to_end(&mut out)
                    .map_err(|e| bad(format!("inflate {name:?}: {e}")))?;
                if out.len() != expected {
                    return Err(bad(format!("deflated member {name:?} size mismatch")));
                }
                out
            }
            m => return Err(bad(format!("member {name:?} uses unsupported method {m}"))),
        };
        if crc32fast::hash(&data) != crc {
            return Err(bad(format!("CRC mismatch in {name:?}")));
        }
        members.push(ZipMember { name, data });
    }
    Ok(members)
}

fn apply_zip64_extra(
    extra: &[u8],
    usize_: &mut u64,
    csize: &mut u64,
    offset: &mut u64,
) -> Result<()> {
    let mut c = Cursor::at(extra, 0);
    while c.pos + 4 <= extra.len() {
        let id = c.u16()?;
        let len = c.u16()? as usize;
        let body = c.take(len)?;
        if id != 0x0001 {
            continue;
        }
        let mut b = Cursor::at(body, 0);
        if *usize_ == 0xFFFF_FFFF {
            *usize_ = b.u64()?;
        }
        if *csize == 0xFFFF_FFFF {
            *csize = b.u64()?;
        }
        if *offset == 0xFFFF_FFFF {
            *offset = b.u64()?;
        }
    }
    Ok(())
}

/// Serializes members as a zip archive of stored entries.
pub fn write_members(members: &[ZipMember]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut central = Vec::new();
    for m in members {
        let size = u32::try_from(m.data.len())
            .ok()
            .filter(|&s| s != u32::MAX)
            .ok_or_else(|| bad(format!("member {:?} too large for a stored entry", m.name)))?;
        let offset = u32::try_from(out.len()).map_err(|_| bad("archive too large"))?;
        let name_len =
            u16::try_from(m.name.len()).map_err(|_| bad("member name too long"))?;
        let crc = crc32fast::hash(&m.data);

        out.extend_from_slice(&LOCAL_SIG.to_le_bytes());
        out.extend_from_slice(&20u16.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&DOS_TIME.to_le_bytes());
        out.extend_from_slice(&DOS_DATE.to_le_bytes());
        out.extend_from_slice(&crc.to_le_bytes());
        out.extend_from_slice(&size.to_le_bytes());
        out.extend_from_slice(&size.to_le_bytes());
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(m.name.as_bytes());
        out.extend_from_slice(&m.data);

        central.extend_from_slice(&CENTRAL_SIG.to_le_bytes());
        central.extend_from_slice(&20u16.to_le_bytes());
        central.extend_from_slice(&20u16.to_le_bytes());
        central.extend_from_slice(&0u16.to_le_bytes());
        central.extend_from_slice(&0u16.to_le_bytes());
        central.extend_from_slice(&DOS_TIME.to_le_bytes());
        central.extend_from_slice(&DOS_DATE.to_le_bytes());
        central.extend_from_slice(&crc.to_le_bytes());
        central.extend_from_slice(&size.to_le_bytes());
        central.extend_from_slice(&size.to_le_bytes());
        central.extend_from_slice(&name_len.to_le_bytes());
        central.extend_from_slice(&0u16.to_le_bytes());
        central.extend_from_slice(&0u16.to_le_bytes());
        central.extend_from_slice(&0u16.to_le_bytes());
        central.extend_from_slice(&0u16.to_le_bytes());
        central.extend_from_slice(&0u32.to_le_bytes());
        central.extend_from_slice(&offset.to_le_bytes());
        central.extend_from_slice(m.name.as_bytes());
    }
    let cd_offset = u32::try_from(out.len()).map_err(|_| bad("archive too large"))?;
    let cd_size = u32::try_from(central.len()).map_err(|_| bad("archive too large"))?;
    let count = u16::try_from(members.len()).map_err(|_| bad("too many members"))?;
    out.extend_from_slice(&central);
    out.extend_from_slice(&EOCD_SIG.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&cd_size.to_le_bytes());
    out.extend_from_slice(&cd_offset.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::DeflateEncoder;
    use flate2::Compression;
    use std::io::Write;

    fn members() -> Vec<ZipMember> {
        vec![
            ZipMember {
                name: "a.npy".into(),
                data: b"hello".to_vec(),
            },
            ZipMember {
                name: "b.npy".into(),
                data: vec![],
            },
        ]
    }

    #[test]
    fn stored_round_trip_is_deterministic() {
        let a = write_members(&members()).unwrap();
        let b = write_members(&members()).unwrap();
        assert_eq!(a, b);
        assert_eq!(read_members(&a).unwrap(), members());
    }

    #[test]
    fn corrupt_crc_is_rejected() {
        let mut bytes = write_members(&members()).unwrap();
        // first payload byte
        bytes[30 + 5] ^= 0xff;
        assert!(matches!(read_members(&bytes), Err(Error::MalformedArchive(_))));
    }

    /// Builds a single deflated member with zip64 extras in both headers,
    /// the way numpy's savez_compressed lays them out.
    fn deflated_zip64(name: &str, data: &[u8]) -> Vec<u8> {
        let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
        enc.write_all(data).unwrap();
        let comp = enc.finish().unwrap();
        let crc = crc32fast::hash(data);
        let mut extra = Vec::new();
        extra.extend_from_slice(&1u16.to_le_bytes());
        extra.extend_from_slice(&16u16.to_le_bytes());
        extra.extend_from_slice(&(data.len() as u64).to_le_bytes());
        extra.extend_from_slice(&(comp.len() as u64).to_le_bytes());

        let mut out = Vec::new();
        out.extend_from_slice(&LOCAL_SIG.to_le_bytes());
        out.extend_from_slice(&45u16.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&8u16.to_le_bytes());
        out.extend_from_slice(&[0; 4]);
        out.extend_from_slice(&crc.to_le_bytes());
        out.extend_from_slice(&u32::MAX.to_le_bytes());
        out.extend_from_slice(&u32::MAX.to_le_bytes());
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(&(extra.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&extra);
        out.extend_from_slice(&comp);

        let cd_offset = out.len() as u32;
        let mut cd = Vec::new();
        cd.extend_from_slice(&CENTRAL_SIG.to_le_bytes());
        cd.extend_from_slice(&45u16.to_le_bytes());
        cd.extend_from_slice(&45u16.to_le_bytes());
        cd.extend_from_slice(&0u16.to_le_bytes());
        cd.extend_from_slice(&8u16.to_le_bytes());
        cd.extend_from_slice(&[0; 4]);
        cd.extend_from_slice(&crc.to_le_bytes());
        cd.extend_from_slice(&u32::MAX.to_le_bytes());
        cd.extend_from_slice(&u32::MAX.to_le_bytes());
        cd.extend_from_slice(&(name.len() as u16).to_le_bytes());
        cd.extend_from_slice(&(extra.len() as u16).to_le_bytes());
        cd.extend_from_slice(&[0; 10]);
        cd.extend_from_slice(&0u32.to_le_bytes());
        cd.extend_from_slice(name.as_bytes());
        cd.extend_from_slice(&extra);
        out.extend_from_slice(&cd);
        out.extend_from_slice(&EOCD_SIG.to_le_bytes());
        out.extend_from_slice(&[0; 4]);
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&(cd.len() as u32).to_le_bytes());
        out.extend_from_slice(&cd_offset.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out
    }

    #[test]
    fn reads_deflated_zip64_members() {
        let data: Vec<u8> = (0..5000u32).map(|i| (i % 7) as u8).collect();
        let bytes = deflated_zip64("X_train.npy", &data);
        let got = read_members(&bytes).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].name, "X_train.npy");
        assert_eq!(got[0].data, data);
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(read_members(b"").is_err());
        assert!(read_members(&[0u8; 100]).is_err());
    }
}

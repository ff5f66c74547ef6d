//! Framing shared by the binary model files: 4-byte magic, u32 version,
//! u64 header length, JSON header, then raw little-endian sections.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub offset: u64,
    pub len: u64,
}

/// Lays out sections back to back and hands out their positions.
#[derive(Default)]
pub struct SectionWriter {
    data: Vec<u8>,
}

impl SectionWriter {
    pub fn push(&mut self, bytes: &[u8]) -> Section {
        let s = Section {
            offset: self.data.len() as u64,
            len: bytes.len() as u64,
        };
        self.data.extend_from_slice(bytes);
        s
    }

    pub fn finish(self, magic: &[u8; 4], version: u32, header: &impl Serialize) -> Result<Vec<u8>> {
        let h = serde_json::to_vec(header)?;
        let mut out = Vec::with_capacity(16 + h.len() + self.data.len());
        out.extend_from_slice(magic);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(h.len() as u64).to_le_bytes());
        out.extend_from_slice(&h);
        out.extend_from_slice(&self.data);
        Ok(out)
    }
}

pub struct Container<'a> {
    pub version: u32,
    pub header: &'a [u8],
    pub data: &'a [u8],
}

pub fn parse<'a>(bytes: &'a [u8], magic: &[u8; 4], path: &Path) -> Result<Container<'a>> {
    if bytes.len() < 16 || &bytes[..4] != magic {
        return Err(Error::format(path, format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let end = 16u64
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| Error::format(path, "header length exceeds file size"))? as usize;
    Ok(Container {
        version,
        header: &bytes[16..end],
        data: &bytes[end..],
    })
}

impl Container<'_> {
    pub fn section(&self, s: Section, path: &Path, what: &str) -> Result<&[u8]> {
        let end = s
            .offset
            .checked_add(s.len)
            .filter(|&e| e <= self.data.len() as u64)
            .ok_or_else(|| Error::format(path, format!("{what} section lies outside the file")))?;
        Ok(&self.data[s.offset as usize..end as usize])
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn i32s_to_bytes(v: &[i32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn i64s_to_bytes(v: &[i64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn u16s_to_bytes(v: &[u16]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn u32s_to_bytes(v: &[u32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn u64s_to_bytes(v: &[u64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn chunks<const N: usize>(b: &[u8], path: &Path, what: &str) -> Result<Vec<[u8; N]>> {
    if !b.len().is_multiple_of(N) {
        return Err(Error::format(path, format!("{what} section length {} is not a multiple of {N}", b.len())));
    }
    Ok(b.chunks_exact(N).map(|c| c.try_into().unwrap()).collect())
}

pub fn bytes_to_i32s(b: &[u8], path: &Path, what: &str) -> Result<Vec<i32>> {
    Ok(chunks::<4>(b, path, what)?.into_iter().map(i32::from_le_bytes).collect())
}

pub fn bytes_to_i64s(b: &[u8], path: &Path, what: &str) -> Result<Vec<i64>> {
    Ok(chunks::<8>(b, path, what)?.into_iter().map(i64::from_le_bytes).collect())
}

pub fn bytes_to_u16s(b: &[u8], path: &Path, what: &str) -> Result<Vec<u16>> {
    Ok(chunks::<2>(b, path, what)?.into_iter().map(u16::from_le_bytes).collect())
}

pub fn bytes_to_u32s(b: &[u8], path: &Path, what: &str) -> Result<Vec<u32>> {
    Ok(chunks::<4>(b, path, what)?.into_iter().map(u32::from_le_bytes).collect())
}

pub fn bytes_to_u64s(b: &[u8], path: &Path, what: &str) -> Result<Vec<u64>> {
    Ok(chunks::<8>(b, path, what)?.into_iter().map(u64::from_le_bytes).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let mut w = SectionWriter::default();
        let a = w.push(&[1, 2, 3]);
        let b = w.push(&[9]);
        let bytes = w.finish(b"TEST", 7, &(a, b)).unwrap();
        let p = Path::new("x");
        let c = parse(&bytes, b"TEST", p).unwrap();
        assert_eq!(c.version, 7);
        let (a2, b2): (Section, Section) = serde_json::from_slice(c.header).unwrap();
        assert_eq!(c.section(a2, p, "a").unwrap(), &[1, 2, 3]);
        assert_eq!(c.section(b2, p, "b").unwrap(), &[9]);
        assert!(parse(&bytes, b"NOPE", p).is_err());
        assert!(c.section(Section { offset: 3, len: 2 }, p, "c").is_err());
    }
}

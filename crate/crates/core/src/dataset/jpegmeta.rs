//! Header-level JPEG inspection: marker walking, quantization-table based
//! quality estimation, frame dimensions, and the EXIF `Software` tag.

use crate::error::{Error, Result};

/// Annex K luminance table in natural (row-major) order.
pub const ANNEX_K_LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Zig-zag position `i` holds natural index `ZIGZAG[i]`.
const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

const SOI: u8 = 0xD8;
const EOI: u8 = 0xD9;
const SOS: u8 = 0xDA;
const DQT: u8 = 0xDB;
const APP1: u8 = 0xE1;

/// Quality-to-scale mapping: `5000 / q` below 50, `200 - 2q` otherwise.
pub fn quality_scale(quality: u8) -> u32 {
    let q = quality.clamp(1, 100) as u32;
    if q < 50 {
        5000 / q
    } else {
        200 - 2 * q
    }
}

/// Annex K table scaled for `quality`, entries clamped to `[1, 255]`.
pub fn scaled_table(base: &[u16; 64], quality: u8) -> [u16; 64] {
    let scale = quality_scale(quality);
    base.map(|v| ((v as u32 * scale + 50) / 100).clamp(1, 255) as u16)
}

/// A marker segment: marker byte and payload (without the length field).
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    pub marker: u8,
    pub payload: &'a [u8],
}

/// Walks header segments up to (not including) the first scan.
pub fn segments(bytes: &[u8]) -> Result<Vec<Segment<'_>>> {
    if bytes.len() < 4 || bytes[0] != 0xFF || bytes[1] != SOI {
        return Err(Error::NotAJpeg);
    }
    let mut out = Vec::new();
    let mut pos = 2;
    loop {
        // fill bytes before a marker are legal
        while pos < bytes.len() && bytes[pos] == 0xFF && bytes.get(pos + 1) == Some(&0xFF) {
            pos += 1;
        }
        if pos + 1 >= bytes.len() || bytes[pos] != 0xFF {
            return Err(Error::Format("truncated JPEG header".into()));
        }
        let marker = bytes[pos + 1];
        pos += 2;
        if marker == EOI || marker == SOS {
            break;
        }
        if (0xD0..=0xD7).contains(&marker) || marker == 0x01 {
            continue;
        }
        if pos + 2 > bytes.len() {
            return Err(Error::Format("truncated segment length".into()));
        }
        let len = u16::from_be_bytes([bytes[pos], bytes[pos + 1]]) as usize;
        if len < 2 || pos + len > bytes.len() {
            return Err(Error::Format(format!("bad length {len} for marker {marker:#04x}")));
        }
        out.push(Segment {
            marker,
            payload: &bytes[pos + 2..pos + len],
        });
        pos += len;
    }
    Ok(out)
}

/// Quantization tables by destination id, in natural order.
pub fn quant_tables(bytes: &[u8]) -> Result<[Option<[u16; 64]>; 4]> {
    let mut tables = [None; 4];
    for seg in segments(bytes)?.iter().filter(|s| s.marker == DQT) {
        let mut p = seg.payload;
        while !p.is_empty() {
            let precision = p[0] >> 4;
            let id = (p[0] & 0x0F) as usize;
            let entry = if precision == 0 { 1 } else { 2 };
            if id > 3 || p.len() < 1 + 64 * entry {
                return Err(Error::Format("malformed DQT segment".into()));
            }
            let mut table = [0u16; 64];
            for (i, &natural) in ZIGZAG.iter().enumerate() {
                table[natural] = if entry == 1 {
                    p[1 + i] as u16
                } else {
                    u16::from_be_bytes([p[1 + 2 * i], p[2 + 2 * i]])
                };
            }
            tables[id] = Some(table);
            p = &p[1 + 64 * entry..];
        }
    }
    Ok(tables)
}

/// Estimates the encoder quality as the `q` whose scaled Annex K luminance
/// table is closest in L1 to the file's table 0. Ties go to the higher `q`.
pub fn estimate_jpeg_quality(bytes: &[u8]) -> Result<u8> {
    let luma = quant_tables(bytes)?[0].ok_or(Error::MissingTables)?;
    let mut best = (u32::MAX, 0u8);
    for q in (1..=100u8).rev() {
        let dist: u32 = scaled_table(&ANNEX_K_LUMA, q)
            .iter()
            .zip(&luma)
            .map(|(&a, &b)| (a as i32 - b as i32).unsigned_abs())
            .sum();
        if dist < best.0 {
            best = (dist, q);
        }
    }
    Ok(best.1)
}

/// `(width, height)` from the first start-of-frame segment.
pub fn frame_dimensions(bytes: &[u8]) -> Result<(u32, u32)> {
    let sof = segments(bytes)?
        .into_iter()
        .find(|s| matches!(s.marker, 0xC0..=0xC3 | 0xC5..=0xC7 | 0xC9..=0xCB | 0xCD..=0xCF))
        .ok_or_else(|| Error::Format("no start-of-frame segment".into()))?;
    let p = sof.payload;
    if p.len() < 5 {
        return Err(Error::Format("short SOF segment".into()));
    }
    let h = u16::from_be_bytes([p[1], p[2]]) as u32;
    let w = u16::from_be_bytes([p[3], p[4]]) as u32;
    Ok((w, h))
}

const EXIF_HEADER: &[u8] = b"Exif\0\0";
const TAG_SOFTWARE: u16 = 0x0131;

/// Reads the IFD0 `Software` ASCII tag from an EXIF APP1 segment, if any.
pub fn read_exif_software(bytes: &[u8]) -> Result<Option<String>> {
    for seg in segments(bytes)?.iter().filter(|s| s.marker == APP1) {
        if let Some(tiff) = seg.payload.strip_prefix(EXIF_HEADER) {
            if let Some(s) = tiff_software(tiff) {
                return Ok(Some(s));
            }
        }
    }
    Ok(None)
}

fn tiff_software(tiff: &[u8]) -> Option<String> {
    let le = match tiff.get(..2)? {
        b"II" => true,
        b"MM" => false,
        _ => return None,
    };
    let u16_at = |o: usize| -> Option<u16> {
        let b = tiff.get(o..o + 2)?;
        Some(if le {
            u16::from_le_bytes([b[0], b[1]])
        } else {
            u16::from_be_bytes([b[0], b[1]])
        })
    };
    let u32_at = |o: usize| -> Option<u32> {
        let b: [u8; 4] = tiff.get(o..o + 4)?.try_into().ok()?;
        Some(if le {
            u32::from_le_bytes(b)
        } else {
            u32::from_be_bytes(b)
        })
    };
    if u16_at(2)? != 42 {
        return None;
    }
    let ifd = u32_at(4)? as usize;
    let count = u16_at(ifd)? as usize;
    for i in 0..count {
        let entry = ifd + 2 + 12 * i;
        if u16_at(entry)? != TAG_SOFTWARE {
            continue;
        }
        // type 2 = ASCII
        if u16_at(entry + 2)? != 2 {
            return None;
        }
        let n = u32_at(entry + 4)? as usize;
        let raw = if n <= 4 {
            tiff.get(entry + 8..entry + 8 + n)?
        } else {
            let off = u32_at(entry + 8)? as usize;
            tiff.get(off..off.checked_add(n)?)?
        };
        let text = raw.split(|&b| b == 0).next().unwrap_or_default();
        return Some(String::from_utf8_lossy(text).into_owned());
    }
    None
}

/// Minimal little-endian EXIF APP1 payload carrying only a `Software` tag.
/// Used to build test corpora.
pub fn exif_software_payload(software: &str) -> Vec<u8> {
    let mut text = software.as_bytes().to_vec();
    text.push(0);
    let mut tiff = Vec::new();
    tiff.extend_from_slice(b"II");
    tiff.extend_from_slice(&42u16.to_le_bytes());
    tiff.extend_from_slice(&8u32.to_le_bytes());
    tiff.extend_from_slice(&1u16.to_le_bytes());
    tiff.extend_from_slice(&TAG_SOFTWARE.to_le_bytes());
    tiff.extend_from_slice(&2u16.to_le_bytes());
    tiff.extend_from_slice(&(text.len() as u32).to_le_bytes());
    let data_offset = 8 + 2 + 12 + 4;
    if text.len() <= 4 {
        let mut inline = [0u8; 4];
        inline[..text.len()].copy_from_slice(&text);
        tiff.extend_from_slice(&inline);
    } else {
        tiff.extend_from_slice(&(data_offset as u32).to_le_bytes());
    }
    tiff.extend_from_slice(&0u32.to_le_bytes());
    if text.len() > 4 {
        tiff.extend_from_slice(&text);
    }
    let mut payload = EXIF_HEADER.to_vec();
    payload.extend_from_slice(&tiff);
    payload
}

use std::path::Path;

use depthfuse_core::image::{DepthMap, RgbImage};

use super::{read_bytes, write_bytes, FormatError, FormatResult};

/// Depth rasters store `round(meters · 256)`; 0 means no measurement.
pub const DEPTH_SCALE: f64 = 256.0;

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2], path: &Path) -> FormatResult<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(FormatError::malformed(path, 0, format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    let names = ["width", "height", "maxval"];
    for (field, name) in fields.iter_mut().zip(names) {
        // Whitespace and comments may precede every header token.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let token = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = token
            .parse()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| FormatError::malformed(path, start, format!("invalid {name}")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(FormatError::malformed(path, pos, "expected whitespace after header"));
    }
    let [width, height, maxval] = fields;
    if maxval > 65535 {
        return Err(FormatError::malformed(path, pos, format!("maxval {maxval} exceeds 65535")));
    }
    Ok(Header { width: width as usize, height: height as usize, maxval, data_offset: pos + 1 })
}

fn samples(bytes: &[u8], header: &Header, channels: usize, path: &Path) -> FormatResult<Vec<u32>> {
    let wide = header.maxval > 255;
    let n = header.width * header.height * channels;
    let need = n * if wide { 2 } else { 1 };
    let data = &bytes[header.data_offset..];
    if data.len() < need {
        return Err(FormatError::malformed(
            path,
            bytes.len(),
            format!("truncated raster: {} of {need} data bytes", data.len()),
        ));
    }
    let values: Vec<u32> = if wide {
        data[..need].chunks_exact(2).map(|c| u32::from(u16::from_be_bytes([c[0], c[1]]))).collect()
    } else {
        data[..need].iter().map(|&b| u32::from(b)).collect()
    };
    if let Some(i) = values.iter().position(|&v| v > header.maxval) {
        let offset = header.data_offset + i * if wide { 2 } else { 1 };
        return Err(FormatError::malformed(path, offset, format!("sample exceeds maxval {}", header.maxval)));
    }
    Ok(values)
}

/// Binary PPM with maxval 255; channel values are `round(x · 255)`.
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> FormatResult<RgbImage> {
    let header = parse_header(bytes, b"P6", path)?;
    let scale = header.maxval as f32;
    let data = samples(bytes, &header, 3, path)?.into_iter().map(|v| v as f32 / scale).collect();
    RgbImage::from_vec(header.width, header.height, data).map_err(|e| FormatError::malformed(path, 0, e.to_string()))
}

/// Binary 16-bit PGM, big-endian, meters · 256. Depths beyond the 16-bit
/// range saturate; negative or non-finite depths are stored as 0.
pub fn encode_pgm_depth(depth: &DepthMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
    for &d in &depth.data {
        let v = if d.is_finite() && d > 0.0 { (d * DEPTH_SCALE).round().min(65535.0) as u16 } else { 0 };
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn decode_pgm_depth(bytes: &[u8], path: &Path) -> FormatResult<DepthMap> {
    let header = parse_header(bytes, b"P5", path)?;
    let data = samples(bytes, &header, 1, path)?.into_iter().map(|v| f64::from(v) / DEPTH_SCALE).collect();
    DepthMap::from_vec(header.width, header.height, data).map_err(|e| FormatError::malformed(path, 0, e.to_string()))
}

pub fn read_ppm(path: &Path) -> FormatResult<RgbImage> {
    decode_ppm(&read_bytes(path)?, path)
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> FormatResult<()> {
    write_bytes(path, &encode_ppm(img))
}

pub fn read_pgm_depth(path: &Path) -> FormatResult<DepthMap> {
    decode_pgm_depth(&read_bytes(path)?, path)
}

pub fn write_pgm_depth(path: &Path, depth: &DepthMap) -> FormatResult<()> {
    write_bytes(path, &encode_pgm_depth(depth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("t.pgm")
    }

    #[test]
    fn five_meters_is_1280() {
        let d = DepthMap::from_vec(2, 1, vec![5.0, 0.0]).unwrap();
        let bytes = encode_pgm_depth(&d);
        let body = &bytes[bytes.len() - 4..];
        assert_eq!(u16::from_be_bytes([body[0], body[1]]), 1280);
        assert_eq!(decode_pgm_depth(&bytes, p()).unwrap(), d);
    }

    #[test]
    fn header_comments_and_8bit() {
        let mut bytes = b"P5 # depth\n2 1\n# c\n255\n".to_vec();
        bytes.extend([0, 128]);
        let d = decode_pgm_depth(&bytes, p()).unwrap();
        assert_eq!(d.data, vec![0.0, 0.5]);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        let err = |b: &[u8]| match decode_pgm_depth(b, p()) {
            Err(FormatError::Malformed { offset, .. }) => offset,
            other => panic!("{other:?}"),
        };
        assert_eq!(err(b"P6\n1 1\n255\n\0"), 0);
        assert_eq!(err(b"P5\nx 1\n255\n\0"), 3);
        assert_eq!(err(b"P5\n1 0\n255\n\0"), 5);
        assert_eq!(err(b"P5\n2 1\n65535\n\0\0"), 15);
        let msg = decode_pgm_depth(b"P5\n-1", p()).unwrap_err().to_string();
        assert!(msg.starts_with("t.pgm: byte 3:"), "{msg}");
    }

    #[test]
    fn ppm_round_trip() {
        let data: Vec<f32> = (0..12).map(|k| (k * 20) as f32 / 255.0).collect();
        let img = RgbImage::from_vec(2, 2, data).unwrap();
        assert_eq!(decode_ppm(&encode_ppm(&img), p()).unwrap(), img);
    }
}

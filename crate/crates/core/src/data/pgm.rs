//! Binary PGM (P5) reader/writer for 8-bit grayscale images.

use super::DataError;
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Write `data` (row-major, `height * width` bytes) as a binary P5 file.
pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<(), DataError> {
    assert_eq!(data.len(), width * height, "pgm payload length mismatch");
    let mut buf = Vec::with_capacity(data.len() + 32);
    write!(buf, "P5\n{width} {height}\n255\n").expect("write to Vec cannot fail");
    buf.extend_from_slice(data);
    fs::write(path, buf).map_err(|source| DataError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a binary P5 file, returning `(width, height, pixels)`.
///
/// Accepts arbitrary whitespace and `#` comments in the header, as the format
/// permits, but requires maxval ≤ 255 (single-byte samples).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let fail = |reason: &str| DataError::PgmFormat {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(fail("missing P5 magic"));
    }

    // Scan header tokens (width, height, maxval) past whitespace/comments.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comment lines.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(fail("truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(fail("expected decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are utf8");
        *field = text.parse().map_err(|_| fail("header field overflow"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(fail("zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(fail("maxval must be in 1..=255"));
    }

    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(fail("missing raster separator")),
    }
    let expected = width * height;
    let raster = &bytes[pos..];
    if raster.len() != expected {
        return Err(fail(&format!(
            "raster has {} bytes, expected {expected}",
            raster.len()
        )));
    }
    Ok((width, height, raster.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let data: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        write_pgm(&path, 4, 3, &data).unwrap();
        let (w, h, back) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, data);
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# made by hand\n2 2\n# maxval next\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        std::fs::write(&path, bytes).unwrap();
        let (w, h, data) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(data, vec![1, 2, 3, 4]);
    }

    #[test]
    fn truncated_raster_is_an_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        std::fs::write(&path, b"P5\n4 4\n255\n\x00\x01").unwrap();
        let err = read_pgm(&path).unwrap_err();
        assert!(err.to_string().contains("raster has 2 bytes"));
    }

    #[test]
    fn wrong_magic_is_an_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        std::fs::write(&path, b"P6\n1 1\n255\n\x00").unwrap();
        assert!(matches!(
            read_pgm(&path),
            Err(DataError::PgmFormat { .. })
        ));
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_pgm(Path::new("/nonexistent/x.pgm")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.pgm"));
    }
}

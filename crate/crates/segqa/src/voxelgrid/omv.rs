//! OMV container: a small ASCII-header + raw-payload format for
//! multi-channel voxel volumes, bit-exact on round trips.
//!
//! Layout:
//! ```text
//! OMV1 nx ny nz C
//! spacing sx sy sz
//! channels name1,name2,...
//! encoding u8            (or u8soft)
//! <blank line>
//! <nx*ny*nz*C payload bytes, channel-major, x-fastest within channel>
//! ```
//!
//! `u8` stores raw byte values (masks use 0/1; label maps may use small
//! integers). `u8soft` stores probabilities quantized to 0..=255.

use super::{MultiChannelVolume, Spacing};
use crate::error::{Error, Result};
use std::fs;
use std::io::Write as _;
use std::path::Path;

const MAGIC: &str = "OMV1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    /// Raw byte values stored verbatim.
    U8,
    /// Probabilities in [0,1] scaled to 0..=255.
    U8Soft,
}

impl Encoding {
    fn as_str(self) -> &'static str {
        match self {
            Encoding::U8 => "u8",
            Encoding::U8Soft => "u8soft",
        }
    }
}

/// Picks the encoding for a volume: raw `u8` when every value is an integer
/// in [0,255], quantized `u8soft` otherwise.
fn auto_encoding(vol: &MultiChannelVolume) -> Encoding {
    let integral = vol
        .values()
        .iter()
        .all(|&v| v >= 0.0 && v <= 255.0 && v.fract() == 0.0);
    if integral {
        Encoding::U8
    } else {
        Encoding::U8Soft
    }
}

/// Writes a volume to `path`. The encoding is chosen by [`auto_encoding`];
/// volumes whose values sit on the 1/255 grid round-trip bit-exactly.
pub fn write_omv(vol: &MultiChannelVolume, path: &Path) -> Result<()> {
    for name in vol.channel_names() {
        if name.is_empty() || name.contains(',') || name.contains('\n') || name.contains(' ') {
            return Err(Error::InvalidArgument(format!(
                "channel name {name:?} must be nonempty and free of spaces, commas and newlines"
            )));
        }
    }
    let (nx, ny, nz) = vol.dims();
    let s = vol.spacing();
    let encoding = auto_encoding(vol);

    let mut header = String::new();
    header.push_str(&format!("{MAGIC} {nx} {ny} {nz} {}\n", vol.channel_count()));
    header.push_str(&format!("spacing {} {} {}\n", s.sx, s.sy, s.sz));
    header.push_str(&format!("channels {}\n", vol.channel_names().join(",")));
    header.push_str(&format!("encoding {}\n", encoding.as_str()));
    header.push('\n');

    let payload: Vec<u8> = match encoding {
        Encoding::U8 => vol.values().iter().map(|&v| v as u8).collect(),
        Encoding::U8Soft => vol
            .values()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
    };

    let mut file = fs::File::create(path)?;
    file.write_all(header.as_bytes())?;
    file.write_all(&payload)?;
    Ok(())
}

/// Reads a volume from `path`, validating magic, header shape and payload
/// length.
pub fn read_omv(path: &Path) -> Result<MultiChannelVolume> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;

    // Header is everything up to the first blank line ("\n\n" pair).
    let split = find_blank_line(&bytes).ok_or_else(|| {
        Error::MalformedHeader(format!("{}: no blank line terminating header", path.display()))
    })?;
    let header = std::str::from_utf8(&bytes[..split + 1])
        .map_err(|_| Error::MalformedHeader(format!("{}: header is not ASCII", path.display())))?;
    let payload = &bytes[split + 2..];

    let mut lines = header.lines();
    let line1 = lines.next().unwrap_or("");
    let mut parts = line1.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::MagicMismatch {
            path: path.to_path_buf(),
            expected: MAGIC.to_string(),
        });
    }
    let dims_and_c: Vec<usize> = parts
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::MalformedHeader(format!("bad dimension token {t:?}")))
        })
        .collect::<Result<_>>()?;
    let [nx, ny, nz, c] = dims_and_c[..] else {
        return Err(Error::MalformedHeader(format!(
            "expected `{MAGIC} nx ny nz C`, got {line1:?}"
        )));
    };

    let spacing_line = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("missing spacing line".into()))?;
    let spacing = parse_spacing(spacing_line)?;

    let channels_line = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("missing channels line".into()))?;
    let channels = parse_channels(channels_line, c)?;

    let encoding_line = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("missing encoding line".into()))?;
    let encoding = match encoding_line.strip_prefix("encoding ") {
        Some("u8") => Encoding::U8,
        Some("u8soft") => Encoding::U8Soft,
        _ => {
            return Err(Error::MalformedHeader(format!(
                "bad encoding line {encoding_line:?}"
            )))
        }
    };

    let expected = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::DimensionOverflow(format!("({nx},{ny},{nz}) x{c}")))?;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            got: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::SchemaMismatch(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            payload.len() - expected
        )));
    }

    let mut vol = MultiChannelVolume::zeros(channels, (nx, ny, nz), spacing)?;
    match encoding {
        Encoding::U8 => {
            for (dst, &b) in vol.values_mut().iter_mut().zip(payload) {
                *dst = b as f32;
            }
        }
        Encoding::U8Soft => {
            for (dst, &b) in vol.values_mut().iter_mut().zip(payload) {
                *dst = b as f32 / 255.0;
            }
        }
    }
    Ok(vol)
}

fn find_blank_line(bytes: &[u8]) -> Option<usize> {
    bytes.windows(2).position(|w| w == b"\n\n")
}

fn parse_spacing(line: &str) -> Result<Spacing> {
    let rest = line
        .strip_prefix("spacing ")
        .ok_or_else(|| Error::MalformedHeader(format!("bad spacing line {line:?}")))?;
    let vals: Vec<f64> = rest
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::MalformedHeader(format!("bad spacing token {t:?}")))
        })
        .collect::<Result<_>>()?;
    let [sx, sy, sz] = vals[..] else {
        return Err(Error::MalformedHeader(format!(
            "expected 3 spacing values, got {line:?}"
        )));
    };
    Spacing::new(sx, sy, sz)
}

fn parse_channels(line: &str, expected: usize) -> Result<Vec<String>> {
    let rest = line
        .strip_prefix("channels ")
        .ok_or_else(|| Error::MalformedHeader(format!("bad channels line {line:?}")))?;
    let names: Vec<String> = rest.split(',').map(str::to_string).collect();
    if names.len() != expected || names.iter().any(String::is_empty) {
        return Err(Error::MalformedHeader(format!(
            "expected {expected} channel names, got {line:?}"
        )));
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxelgrid::VoxelMask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_volume() -> MultiChannelVolume {
        let s = Spacing::new(1.5, 1.0, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a = VoxelMask::zeros((5, 4, 3), s).unwrap();
        for v in a.data_mut() {
            *v = u8::from(rng.gen_bool(0.5));
        }
        let mut b = VoxelMask::zeros((5, 4, 3), s).unwrap();
        for v in b.data_mut() {
            *v = u8::from(rng.gen_bool(0.2));
        }
        MultiChannelVolume::from_masks(&[("left".into(), &a), ("right".into(), &b)]).unwrap()
    }

    #[test]
    fn roundtrip_binary_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.omv");
        let vol = sample_volume();
        write_omv(&vol, &path).unwrap();
        let back = read_omv(&path).unwrap();
        assert_eq!(back, vol);
        // a second write of the re-read volume produces identical bytes
        let path2 = dir.path().join("v2.omv");
        write_omv(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn roundtrip_soft_on_grid_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("soft.omv");
        let s = Spacing::isotropic(1.0).unwrap();
        let mut vol = MultiChannelVolume::zeros(vec!["p".into()], (4, 4, 16), s).unwrap();
        for (i, v) in vol.values_mut().iter_mut().enumerate() {
            *v = (i % 256) as f32 / 255.0;
        }
        write_omv(&vol, &path).unwrap();
        assert_eq!(read_omv(&path).unwrap(), vol);
    }

    #[test]
    fn soft_quantization_grid_is_stable() {
        for k in 0u16..=255 {
            let v = k as f32 / 255.0;
            assert_eq!((v * 255.0).round() as u16, k);
        }
    }

    #[test]
    fn label_volume_uses_raw_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.omv");
        let s = Spacing::isotropic(1.0).unwrap();
        let mut vol =
            MultiChannelVolume::zeros(vec!["explain:bladder".into()], (3, 3, 3), s).unwrap();
        for (i, v) in vol.values_mut().iter_mut().enumerate() {
            *v = (i % 4) as f32;
        }
        write_omv(&vol, &path).unwrap();
        assert_eq!(read_omv(&path).unwrap(), vol);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.omv");
        std::fs::write(&path, b"XXX1 2 2 2 1\nspacing 1 1 1\nchannels a\nencoding u8\n\n01234567")
            .unwrap();
        assert!(matches!(
            read_omv(&path),
            Err(Error::MagicMismatch { .. })
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.omv");
        std::fs::write(&path, b"OMV1 2 2 2 1\nspacing 1 1 1\nchannels a\nencoding u8\n\n0123")
            .unwrap();
        assert!(matches!(
            read_omv(&path),
            Err(Error::TruncatedPayload { expected: 8, got: 4, .. })
        ));
    }

    #[test]
    fn oversized_header_dims_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("huge.omv");
        let huge = usize::MAX;
        std::fs::write(
            &path,
            format!("OMV1 {huge} {huge} 2 1\nspacing 1 1 1\nchannels a\nencoding u8\n\n"),
        )
        .unwrap();
        assert!(matches!(
            read_omv(&path),
            Err(Error::DimensionOverflow(_))
        ));
    }

    #[test]
    fn missing_file_is_distinct() {
        assert!(matches!(
            read_omv(Path::new("/nonexistent/x.omv")),
            Err(Error::MissingFile(_))
        ));
    }
}

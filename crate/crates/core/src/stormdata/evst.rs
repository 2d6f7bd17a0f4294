//! `EVST1 <n_events> <T> <H> <W> <max_value>\n` followed by little-endian
//! `u16` intensities, event-major, then frame, then row-major.

use std::path::Path;

use super::{DataError, FrameSequence, Result};
use crate::Tensor;

const MAGIC: &str = "EVST1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawHeader {
    pub n_events: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub max_value: u16,
}

impl RawHeader {
    fn line(&self) -> String {
        format!(
            "{MAGIC} {} {} {} {} {}\n",
            self.n_events, self.frames, self.height, self.width, self.max_value
        )
    }

    fn values(&self) -> Option<usize> {
        self.n_events
            .checked_mul(self.frames)?
            .checked_mul(self.height)?
            .checked_mul(self.width)
    }
}

fn format_err(offset: usize, detail: impl Into<String>) -> DataError {
    DataError::Format {
        offset,
        detail: detail.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<(RawHeader, usize)> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err(bytes.len(), "header line is not terminated"))?;
    let line = std::str::from_utf8(&bytes[..end]).map_err(|e| format_err(e.valid_up_to(), "header is not UTF-8"))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    for tok in line.split(' ') {
        fields.push((pos, tok));
        pos += tok.len() + 1;
    }
    if fields.len() != 6 {
        return Err(format_err(0, format!("expected 6 header fields, found {}", fields.len())));
    }
    if fields[0].1 != MAGIC {
        return Err(format_err(0, format!("bad magic `{}`", fields[0].1)));
    }
    let num = |i: usize, name: &str| -> Result<usize> {
        let (off, tok) = fields[i];
        match tok.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(format_err(off, format!("{name} must be a positive integer, got `{tok}`"))),
        }
    };
    let max = num(5, "max_value")?;
    let max_value = u16::try_from(max).map_err(|_| format_err(fields[5].0, "max_value exceeds 65535"))?;
    Ok((
        RawHeader {
            n_events: num(1, "n_events")?,
            frames: num(2, "T")?,
            height: num(3, "H")?,
            width: num(4, "W")?,
            max_value,
        },
        end + 1,
    ))
}

/// Parses an in-memory `EVST1` file, rescaling by the declared maximum.
pub fn ingest_bytes(bytes: &[u8], step_minutes: f64) -> Result<(RawHeader, Vec<FrameSequence>)> {
    let (h, body) = parse_header(bytes)?;
    let n = h.values().ok_or_else(|| format_err(0, "declared extents overflow"))?;
    let expected = n
        .checked_mul(2)
        .and_then(|b| b.checked_add(body))
        .ok_or_else(|| format_err(0, "declared extents overflow"))?;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, "trailing bytes after payload"));
    }
    let max = f64::from(h.max_value);
    let per_event = h.frames * h.height * h.width;
    let mut events = Vec::with_capacity(h.n_events);
    for e in 0..h.n_events {
        let mut data = Vec::with_capacity(per_event);
        for k in 0..per_event {
            let offset = body + 2 * (e * per_event + k);
            let v = u16::from_le_bytes([bytes[offset], bytes[offset + 1]]);
            if v > h.max_value {
                return Err(DataError::OutOfRange {
                    offset,
                    value: v,
                    max: h.max_value,
                });
            }
            data.push(f64::from(v) / max);
        }
        let frames = Tensor::new(vec![h.frames, h.height, h.width], data).expect("extents checked");
        events.push(FrameSequence { frames, step_minutes });
    }
    Ok((h, events))
}

pub fn ingest(path: &Path, step_minutes: f64) -> Result<(RawHeader, Vec<FrameSequence>)> {
    ingest_bytes(&std::fs::read(path)?, step_minutes)
}

/// Quantizes normalized sequences to `round(v · max_value)`.
pub fn export_bytes(events: &[FrameSequence], max_value: u16) -> Result<Vec<u8>> {
    let first = events
        .first()
        .ok_or_else(|| DataError::Config("cannot export an empty dataset".into()))?;
    if max_value == 0 {
        return Err(DataError::Config("max_value must be positive".into()));
    }
    let shape = first.frames.shape().to_vec();
    let header = RawHeader {
        n_events: events.len(),
        frames: shape[0],
        height: shape[1],
        width: shape[2],
        max_value,
    };
    let mut out = header.line().into_bytes();
    let max = f64::from(max_value);
    for ev in events {
        if ev.frames.shape() != shape.as_slice() {
            return Err(DataError::Config(format!(
                "events must share extents: {:?} vs {:?}",
                ev.frames.shape(),
                shape
            )));
        }
        for &v in ev.frames.data() {
            if !(0.0..=1.0).contains(&v) {
                return Err(DataError::Normalization(v));
            }
            out.extend_from_slice(&((v * max).round() as u16).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn export(path: &Path, events: &[FrameSequence], max_value: u16) -> Result<()> {
    crate::harness::io::write_atomic(path, &export_bytes(events, max_value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(header: &str, values: &[u16]) -> Vec<u8> {
        let mut b = header.as_bytes().to_vec();
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn rescales_endpoints() {
        let b = file("EVST1 1 1 1 3 255\n", &[0, 128, 255]);
        let (_, ev) = ingest_bytes(&b, 5.0).unwrap();
        assert_eq!(ev[0].frames.data(), &[0.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn errors_carry_offsets() {
        let b = file("EVST1 1 1 1 3 255\n", &[0, 256, 1]);
        match ingest_bytes(&b, 5.0) {
            Err(DataError::OutOfRange { offset, value, .. }) => {
                assert_eq!((offset, value), (20, 256));
            }
            other => panic!("{other:?}"),
        }
        let b = file("EVST1 1 1 1 3 255\n", &[0, 1]);
        assert!(matches!(ingest_bytes(&b, 5.0), Err(DataError::Format { offset: 22, .. })));
        let b = file("EVST1 1 x 1 3 255\n", &[]);
        assert!(matches!(ingest_bytes(&b, 5.0), Err(DataError::Format { offset: 8, .. })));
        let b = file("EVST2 1 1 1 3 255\n", &[0, 0, 0]);
        assert!(matches!(ingest_bytes(&b, 5.0), Err(DataError::Format { offset: 0, .. })));
        let b = file("EVST1 1 1 1 1 255\n", &[0, 0]);
        assert!(matches!(ingest_bytes(&b, 5.0), Err(DataError::Format { offset: 20, .. })));
    }
}

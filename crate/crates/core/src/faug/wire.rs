//! Binary wire form of a seed upload.
//!
//! Little-endian throughout:
//!
//! ```text
//! u32 device_id
//! u32 sample_count
//! sample_count x { u16 label, u32 feature_count, feature_count x f32 }
//! ```
//!
//! Only the device id and the samples travel; which labels are targets and
//! which are redundant never leaves the device.

use super::{FaugError, SeedUpload};
use crate::nn::Sample;

pub fn encode_upload(upload: &SeedUpload) -> Result<Vec<u8>, FaugError> {
    let mut out = Vec::new();
    out.extend(
        u32::try_from(upload.device_id)
            .map_err(|_| wire("device id exceeds u32"))?
            .to_le_bytes(),
    );
    out.extend(
        u32::try_from(upload.samples.len())
            .map_err(|_| wire("too many samples"))?
            .to_le_bytes(),
    );
    for s in &upload.samples {
        let label = u16::try_from(s.label).map_err(|_| wire("label exceeds u16"))?;
        out.extend(label.to_le_bytes());
        out.extend((s.features.len() as u32).to_le_bytes());
        for &v in &s.features {
            out.extend((v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn wire(msg: &str) -> FaugError {
    FaugError::Wire(msg.to_string())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], FaugError> {
        if self.buf.len() < N {
            return Err(wire("truncated upload"));
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("length checked"))
    }
}

pub fn decode_upload(bytes: &[u8]) -> Result<SeedUpload, FaugError> {
    let mut r = Reader { buf: bytes };
    let device_id = u32::from_le_bytes(r.take()?) as usize;
    let count = u32::from_le_bytes(r.take()?) as usize;
    let mut samples = Vec::with_capacity(count.min(bytes.len() / 6));
    for _ in 0..count {
        let label = u16::from_le_bytes(r.take()?) as usize;
        let len = u32::from_le_bytes(r.take()?) as usize;
        if r.buf.len() < len * 4 {
            return Err(wire("truncated features"));
        }
        let features = (0..len)
            .map(|_| r.take().map(|b| f32::from_le_bytes(b) as f64))
            .collect::<Result<_, _>>()?;
        samples.push(Sample::new(features, label));
    }
    if !r.buf.is_empty() {
        return Err(wire("trailing bytes after upload"));
    }
    Ok(SeedUpload { device_id, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_exact() {
        let up = SeedUpload {
            device_id: 3,
            samples: vec![Sample::new(vec![0.5, 1.0], 7)],
        };
        let bytes = encode_upload(&up).unwrap();
        let mut expected = vec![3, 0, 0, 0, 1, 0, 0, 0, 7, 0, 2, 0, 0, 0];
        expected.extend(0.5f32.to_le_bytes());
        expected.extend(1.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn malformed_input_rejected() {
        let up = SeedUpload {
            device_id: 1,
            samples: vec![Sample::new(vec![0.25; 3], 2)],
        };
        let bytes = encode_upload(&up).unwrap();
        assert!(decode_upload(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_upload(&extra).is_err());
        let big = SeedUpload {
            device_id: 0,
            samples: vec![Sample::new(vec![], 70_000)],
        };
        assert!(encode_upload(&big).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_preserves_f32_view(
            device_id in 0usize..1000,
            raw in proptest::collection::vec((0usize..10, proptest::collection::vec(0.0f64..=1.0, 0..6)), 0..8),
        ) {
            let up = SeedUpload {
                device_id,
                samples: raw.into_iter().map(|(l, f)| Sample::new(f, l)).collect(),
            };
            let back = decode_upload(&encode_upload(&up).unwrap()).unwrap();
            prop_assert_eq!(back.device_id, up.device_id);
            prop_assert_eq!(back.samples.len(), up.samples.len());
            for (a, b) in back.samples.iter().zip(&up.samples) {
                prop_assert_eq!(a.label, b.label);
                let expect: Vec<f64> = b.features.iter().map(|&v| v as f32 as f64).collect();
                prop_assert_eq!(&a.features, &expect);
            }
        }
    }
}

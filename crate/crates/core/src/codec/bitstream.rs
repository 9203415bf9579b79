//! The `.fcnr` container.
//!
//! Little-endian throughout:
//!
//! ```text
//! offset size
//!      0    4  magic "FCNR"
//!      4    2  u16 format version (1)
//!      6    4  u32 height      (original, before padding)
//!     10    4  u32 width
//!     14    4  u32 pad_h       (rows added at the bottom)
//!     18    4  u32 pad_w       (columns added at the right)
//!     22   24  3 x f64 left  view (t, theta, phi), normalized
//!     46   24  3 x f64 right view (t, theta, phi), normalized
//!     70    8  u64 model fingerprint
//!     78   32  4 x (i32 v_min, i32 v_max) symbol bounds of z_l, z_r, y_l, y_r
//!    110       4 x (u32 length + bytes) substreams z_l, z_r, y_l, y_r
//!  end-4    4  u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Only the substream bytes count as payload for rate accounting.

use crate::entropy::SymbolBounds;
use crate::error::{FcnrError, Result};
use crate::networks::VisParams;

pub const MAGIC: &[u8; 4] = b"FCNR";
pub const VERSION: u16 = 1;
const FIXED_HEADER: usize = 110;

/// Substream order inside the container, which is also the decode order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Plane {
    HyperLeft = 0,
    HyperRight = 1,
    LatentLeft = 2,
    LatentRight = 3,
}

impl Plane {
    pub const ORDER: [Plane; 4] = [Plane::HyperLeft, Plane::HyperRight, Plane::LatentLeft, Plane::LatentRight];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Plane::HyperLeft => "z_l",
            Plane::HyperRight => "z_r",
            Plane::LatentLeft => "y_l",
            Plane::LatentRight => "y_r",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub height: u32,
    pub width: u32,
    pub pad_h: u32,
    pub pad_w: u32,
    pub vis: [VisParams; 2],
    pub fingerprint: u64,
    pub bounds: [SymbolBounds; 4],
}

impl Header {
    pub fn padded_dims(&self) -> (usize, usize) {
        (
            (self.height + self.pad_h) as usize,
            (self.width + self.pad_w) as usize,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcnrBitstream {
    pub header: Header,
    pub streams: [Vec<u8>; 4],
}

impl FcnrBitstream {
    pub fn payload_bytes(&self) -> usize {
        self.streams.iter().map(Vec::len).sum()
    }

    pub fn payload_bits(&self) -> u64 {
        8 * self.payload_bytes() as u64
    }

    /// Payload bits per pixel over both images at their original size.
    pub fn bpp(&self) -> f64 {
        let pixels = 2 * self.header.height as u64 * self.header.width as u64;
        self.payload_bits() as f64 / pixels as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(FIXED_HEADER + self.payload_bytes() + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [h.height, h.width, h.pad_h, h.pad_w] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for vp in &h.vis {
            for v in [vp.t, vp.theta, vp.phi_view] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&h.fingerprint.to_le_bytes());
        for b in &h.bounds {
            out.extend_from_slice(&b.min.to_le_bytes());
            out.extend_from_slice(&b.max.to_le_bytes());
        }
        for s in &self.streams {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn parse(data: &[u8]) -> Result<Self> {
        let corrupt = |msg: String| FcnrError::Corrupt(msg);
        if data.len() < FIXED_HEADER + 4 * 4 + 4 {
            return Err(corrupt(format!("{} bytes is shorter than any valid stream", data.len())));
        }
        if &data[..4] != MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let (body, tail) = data.split_at(data.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch".into()));
        }
        let mut pos = 4;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = body
                .get(pos..pos + n)
                .ok_or_else(|| corrupt(format!("truncated at byte {pos}")))?;
            pos += n;
            Ok(s)
        };
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let mut u32s = [0u32; 4];
        for v in &mut u32s {
            *v = u32::from_le_bytes(take(4)?.try_into().unwrap());
        }
        let mut vis = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut f = [0f64; 3];
            for v in &mut f {
                *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
            }
            vis.push(VisParams::new(f[0], f[1], f[2]).map_err(|e| corrupt(e.to_string()))?);
        }
        let fingerprint = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut bounds = Vec::with_capacity(4);
        for _ in 0..4 {
            let min = i32::from_le_bytes(take(4)?.try_into().unwrap());
            let max = i32::from_le_bytes(take(4)?.try_into().unwrap());
            bounds.push(SymbolBounds::new(min, max).map_err(|e| corrupt(e.to_string()))?);
        }
        let mut streams: [Vec<u8>; 4] = Default::default();
        for (i, s) in streams.iter_mut().enumerate() {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            *s = take(len)
                .map_err(|_| corrupt(format!("substream {} truncated", Plane::ORDER[i].name())))?
                .to_vec();
        }
        if pos != body.len() {
            return Err(corrupt(format!("{} trailing bytes", body.len() - pos)));
        }
        let [height, width, pad_h, pad_w] = u32s;
        if height == 0 || width == 0 {
            return Err(corrupt("zero image dimension".into()));
        }
        Ok(FcnrBitstream {
            header: Header {
                height,
                width,
                pad_h,
                pad_w,
                vis: [vis[0], vis[1]],
                fingerprint,
                bounds: [bounds[0], bounds[1], bounds[2], bounds[3]],
            },
            streams,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> FcnrBitstream {
        FcnrBitstream {
            header: Header {
                height: 100,
                width: 128,
                pad_h: 28,
                pad_w: 0,
                vis: [
                    VisParams::new(0.2, 0.5, 0.125).unwrap(),
                    VisParams::new(0.2, 0.5, 0.375).unwrap(),
                ],
                fingerprint: 0xdead_beef_0123_4567,
                bounds: [
                    SymbolBounds::new(-3, 2).unwrap(),
                    SymbolBounds::new(0, 0).unwrap(),
                    SymbolBounds::new(-40, 17).unwrap(),
                    SymbolBounds::new(-1, 1).unwrap(),
                ],
            },
            streams: [vec![1, 2, 3], vec![], vec![9; 40], vec![7, 7]],
        }
    }

    #[test]
    fn round_trip_and_layout() {
        let bs = sample();
        let bytes = bs.to_bytes();
        assert_eq!(bytes.len(), FIXED_HEADER + 16 + 45 + 4);
        assert_eq!(FcnrBitstream::parse(&bytes).unwrap(), bs);
        assert_eq!(bs.payload_bits(), 45 * 8);
        assert!((bs.bpp() - 360.0 / 25600.0).abs() < 1e-15);
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 50, bytes.len() - 5, bytes.len() - 1] {
            assert!(matches!(FcnrBitstream::parse(&bytes[..cut]), Err(FcnrError::Corrupt(_))));
        }
        let mut flipped = bytes.clone();
        flipped[FIXED_HEADER + 6] ^= 0x10;
        assert!(matches!(FcnrBitstream::parse(&flipped), Err(FcnrError::Corrupt(_))));
    }

    proptest! {
        #[test]
        fn arbitrary_streams_round_trip(
            streams in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..64), 4),
            h in 1u32..4096,
            fp in any::<u64>(),
        ) {
            let mut bs = sample();
            bs.header.height = h;
            bs.header.fingerprint = fp;
            bs.streams = [streams[0].clone(), streams[1].clone(), streams[2].clone(), streams[3].clone()];
            prop_assert_eq!(FcnrBitstream::parse(&bs.to_bytes()).unwrap(), bs);
        }
    }
}

//! Tickets and their binary container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TLTK"
//! 4       2     format version (1)
//! 6       1     kind: 0 = mask only, 1 = ticket (mask + initialization)
//! 7       1     reserved, 0
//! 8       8     seed (u64)
//! 16      4     W = number of layer widths (u32, at least 2)
//! 20      4W    widths, input first (u32 each; input must be 1)
//! ..            one bitmap per weight layer: rows*cols bits, row-major,
//!               bit k in byte k/8 at position k%8 (LSB first), zero padded
//!               to a whole byte
//! ..            kind 1 only: P (u64) then P IEEE-754 f64 initial values in
//!               canonical parameter order
//! end-8   8     FNV-1a 64 checksum of every preceding byte
//! ```

use thiserror::Error;

use crate::hnn::{ArchSpec, NetworkParams};
use crate::pruner::Mask;
use crate::scalar::Scalar;
use crate::seed::fnv1a;

pub const MAGIC: [u8; 4] = *b"TLTK";
pub const FORMAT_VERSION: u16 = 1;
const KIND_MASK: u8 = 0;
const KIND_TICKET: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TicketError {
    #[error("mask does not conform to the initialization's architecture")]
    Shape,
    #[error("not a ticket container (bad magic)")]
    Magic,
    #[error("unsupported container version {0}")]
    Version(u16),
    #[error("unknown container kind {0}")]
    Kind(u8),
    #[error("container is truncated")]
    Truncated,
    #[error("checksum mismatch")]
    Checksum,
    #[error("invalid architecture in container: {0}")]
    Arch(String),
    #[error("container holds a mask, not a ticket")]
    MaskOnly,
    #[error("{0} trailing bytes after the container")]
    Trailing(usize),
}

/// A winning-ticket candidate: which weights survive and where training
/// starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct Ticket<T> {
    mask: Mask,
    init: NetworkParams<T>,
}

impl<T: Scalar> Ticket<T> {
    /// `init` is reduced to its initialization; trained values are dropped.
    pub fn new(mask: Mask, init: NetworkParams<T>) -> Result<Self, TicketError> {
        if !mask.conforms(init.arch()) {
            return Err(TicketError::Shape);
        }
        Ok(Self {
            mask,
            init: init.rewound(),
        })
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn init(&self) -> &NetworkParams<T> {
        &self.init
    }

    pub fn arch(&self) -> &ArchSpec {
        self.init.arch()
    }

    pub fn seed(&self) -> u64 {
        self.init.seed()
    }

    pub fn density(&self) -> f64 {
        self.mask.density()
    }

    pub fn into_parts(self) -> (Mask, NetworkParams<T>) {
        (self.mask, self.init)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header(KIND_TICKET, self.seed(), &self.arch().widths());
        push_bitmaps(&mut out, &self.mask);
        let init = self.init.init_values();
        out.extend_from_slice(&(init.len() as u64).to_le_bytes());
        for v in init {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        seal(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TicketError> {
        let mut r = Reader::open(bytes)?;
        let (kind, seed, arch) = r.header()?;
        let mask = r.bitmaps(&arch)?;
        if kind != KIND_TICKET {
            return Err(TicketError::MaskOnly);
        }
        let n = r.u64()? as usize;
        let mut init = Vec::with_capacity(n.min(bytes.len() / 8));
        for _ in 0..n {
            init.push(T::lit(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"))));
        }
        r.finish()?;
        let params = NetworkParams::from_init(&arch, init, seed).map_err(|e| TicketError::Arch(e.to_string()))?;
        Self::new(mask, params)
    }
}

/// Serialize a bare mask (kind 0).
pub fn mask_to_bytes(mask: &Mask, seed: u64) -> Vec<u8> {
    let shapes = mask.shapes();
    let mut widths = vec![shapes.first().map_or(1, |s| s.0)];
    widths.extend(shapes.iter().map(|s| s.1));
    let mut out = header(KIND_MASK, seed, &widths);
    push_bitmaps(&mut out, mask);
    seal(out)
}

/// Read a mask from either container kind, with the recorded seed.
pub fn mask_from_bytes(bytes: &[u8]) -> Result<(Mask, u64), TicketError> {
    let mut r = Reader::open(bytes)?;
    let (kind, seed, arch) = r.header()?;
    let mask = r.bitmaps(&arch)?;
    if kind == KIND_TICKET {
        let n = r.u64()? as usize;
        r.take(n.checked_mul(8).ok_or(TicketError::Truncated)?)?;
    }
    r.finish()?;
    Ok((mask, seed))
}

fn header(kind: u8, seed: u64, widths: &[usize]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind);
    out.push(0);
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for &w in widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out
}

fn push_bitmaps(out: &mut Vec<u8>, mask: &Mask) {
    for l in 0..mask.layer_count() {
        let bits = mask.layer(l);
        let mut bytes = vec![0u8; bits.len().div_ceil(8)];
        for (k, &b) in bits.iter().enumerate() {
            if b {
                bytes[k / 8] |= 1 << (k % 8);
            }
        }
        out.extend_from_slice(&bytes);
    }
}

fn seal(mut out: Vec<u8>) -> Vec<u8> {
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(bytes: &'a [u8]) -> Result<Self, TicketError> {
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(TicketError::Magic);
        }
        if bytes.len() < 28 {
            return Err(TicketError::Truncated);
        }
        let (body, sum) = bytes.split_at(bytes.len() - 8);
        if fnv1a(body) != u64::from_le_bytes(sum.try_into().expect("8 bytes")) {
            return Err(TicketError::Checksum);
        }
        Ok(Self { body, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TicketError> {
        let end = self.pos.checked_add(n).ok_or(TicketError::Truncated)?;
        let s = self.body.get(self.pos..end).ok_or(TicketError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TicketError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TicketError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self) -> Result<(u8, u64, ArchSpec), TicketError> {
        let version = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes"));
        if version != FORMAT_VERSION {
            return Err(TicketError::Version(version));
        }
        let kind = self.take(2)?[0];
        if kind != KIND_MASK && kind != KIND_TICKET {
            return Err(TicketError::Kind(kind));
        }
        let seed = self.u64()?;
        let count = self.u32()? as usize;
        if count < 2 || count > self.body.len() {
            return Err(TicketError::Arch(format!("{count} widths")));
        }
        let widths = (0..count).map(|_| self.u32().map(|w| w as usize)).collect::<Result<Vec<_>, _>>()?;
        if widths[0] != ArchSpec::INPUT_DIM {
            return Err(TicketError::Arch(format!("input width {}", widths[0])));
        }
        let arch = ArchSpec::new(widths[1..count - 1].to_vec(), widths[count - 1])
            .map_err(|e| TicketError::Arch(e.to_string()))?;
        Ok((kind, seed, arch))
    }

    fn bitmaps(&mut self, arch: &ArchSpec) -> Result<Mask, TicketError> {
        let shapes = arch.layer_shapes();
        let mut layers = Vec::with_capacity(shapes.len());
        for &(r, c) in &shapes {
            let n = r.checked_mul(c).ok_or(TicketError::Truncated)?;
            let bytes = self.take(n.div_ceil(8))?;
            layers.push((0..n).map(|k| bytes[k / 8] >> (k % 8) & 1 == 1).collect());
        }
        Ok(Mask::from_layers(shapes, layers).expect("shapes match"))
    }

    fn finish(&self) -> Result<(), TicketError> {
        match self.body.len() - self.pos {
            0 => Ok(()),
            n => Err(TicketError::Trailing(n)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Ticket<f64> {
        let arch = ArchSpec::new(vec![3, 5], 2).unwrap();
        let mut mask = Mask::full(&arch);
        mask.set(1, 2, 4, false);
        mask.set(0, 0, 1, false);
        Ticket::new(mask, NetworkParams::init(&arch, 77)).unwrap()
    }

    #[test]
    fn ticket_round_trip_is_exact() {
        let t = sample();
        let back = Ticket::<f64>::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.seed(), 77);
    }

    #[test]
    fn mask_container_round_trip() {
        let t = sample();
        let bytes = mask_to_bytes(t.mask(), 5);
        assert_eq!(mask_from_bytes(&bytes).unwrap(), (t.mask().clone(), 5));
        assert_eq!(mask_from_bytes(&t.to_bytes()).unwrap().0, *t.mask());
        assert_eq!(Ticket::<f64>::from_bytes(&bytes), Err(TicketError::MaskOnly));
    }

    #[test]
    fn header_bytes_are_stable() {
        let arch = ArchSpec::new(vec![3], 1).unwrap();
        let mut mask = Mask::zeros(&arch);
        mask.set(0, 0, 0, true);
        mask.set(0, 0, 2, true);
        let bytes = mask_to_bytes(&mask, 0x0102);
        let expected_prefix: Vec<u8> = [
            &b"TLTK"[..],
            &[1, 0, 0, 0],
            &[0x02, 0x01, 0, 0, 0, 0, 0, 0],
            &[3, 0, 0, 0],
            &[1, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0],
            &[0b0000_0101],
            &[0],
        ]
        .concat();
        assert_eq!(&bytes[..bytes.len() - 8], &expected_prefix[..]);
        let sum = fnv1a(&expected_prefix).to_le_bytes();
        assert_eq!(&bytes[bytes.len() - 8..], &sum);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert_eq!(Ticket::<f64>::from_bytes(&bytes), Err(TicketError::Checksum));
        assert_eq!(Ticket::<f64>::from_bytes(b"nope"), Err(TicketError::Magic));
        assert_eq!(Ticket::<f64>::from_bytes(&bytes[..10]), Err(TicketError::Truncated));
    }

    #[test]
    fn rejects_mismatched_mask() {
        let arch = ArchSpec::new(vec![3], 1).unwrap();
        let other = ArchSpec::new(vec![4], 1).unwrap();
        assert_eq!(
            Ticket::new(Mask::full(&other), NetworkParams::<f64>::init(&arch, 1)),
            Err(TicketError::Shape)
        );
    }
}

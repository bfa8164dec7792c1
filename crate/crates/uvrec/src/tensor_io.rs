//! Raw tensor dumps: magic `VVTT`, little-endian `u32` rank, `u32` dims,
//! then the `f64` payload in row-major order. A file may hold several
//! records back to back.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use uvrec_core::numerics::Tensor;

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"VVTT";

pub fn encode(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes every record in `bytes`; `origin` names the source in errors.
pub fn decode_all(bytes: &[u8], origin: &Path) -> Result<Vec<Tensor>> {
    let mut cursor = bytes;
    let mut out = Vec::new();
    while !cursor.is_empty() {
        out.push(decode_one(&mut cursor, origin)?);
    }
    Ok(out)
}

fn take<'a>(cursor: &mut &'a [u8], len: usize, origin: &Path) -> Result<&'a [u8]> {
    if cursor.len() < len {
        return Err(Error::format(origin, "truncated tensor record"));
    }
    let (head, rest) = cursor.split_at(len);
    *cursor = rest;
    Ok(head)
}

fn read_u32(cursor: &mut &[u8], origin: &Path) -> Result<usize> {
    let b = take(cursor, 4, origin)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
}

fn decode_one(cursor: &mut &[u8], origin: &Path) -> Result<Tensor> {
    if take(cursor, 4, origin)? != MAGIC {
        return Err(Error::format(origin, "bad tensor magic"));
    }
    let rank = read_u32(cursor, origin)?;
    let shape = (0..rank).map(|_| read_u32(cursor, origin)).collect::<Result<Vec<_>>>()?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .filter(|c| c.checked_mul(8).is_some_and(|b| b <= cursor.len()))
        .ok_or_else(|| Error::format(origin, "tensor payload shorter than its shape"))?;
    let payload = take(cursor, 8 * count, origin)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Tensor::new(&shape, data)?)
}

pub fn save(path: &Path, tensors: &[&Tensor]) -> Result<()> {
    let mut bytes = Vec::new();
    for t in tensors {
        encode(t, &mut bytes);
    }
    let mut f = fs::File::create(path).at(path)?;
    f.write_all(&bytes).at(path)
}

pub fn load(path: &Path) -> Result<Vec<Tensor>> {
    let mut bytes = Vec::new();
    fs::File::open(path).at(path)?.read_to_end(&mut bytes).at(path)?;
    decode_all(&bytes, path)
}

/// Loads a file that must hold exactly one tensor.
pub fn load_one(path: &Path) -> Result<Tensor> {
    let mut all = load(path)?;
    if all.len() != 1 {
        return Err(Error::format(path, format!("expected one tensor, found {}", all.len())));
    }
    Ok(all.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2, 1], vec![1.0, -2.5]).unwrap();
        let mut b = Vec::new();
        encode(&t, &mut b);
        assert_eq!(&b[..4], b"VVTT");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..24], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 32);
    }

    #[test]
    fn corrupt_input_is_a_format_error() {
        let p = Path::new("mem");
        assert!(matches!(decode_all(b"XXXX", p), Err(Error::Format { .. })));
        let t = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut b = Vec::new();
        encode(&t, &mut b);
        b.pop();
        assert!(matches!(decode_all(&b, p), Err(Error::Format { .. })));
        // A huge declared shape must not allocate or overflow.
        let mut h = b"VVTT".to_vec();
        h.extend_from_slice(&2u32.to_le_bytes());
        h.extend_from_slice(&u32::MAX.to_le_bytes());
        h.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_all(&h, p), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in prop::collection::vec(1usize..5, 0..4),
            seed in any::<u64>(),
        ) {
            let len: usize = dims.iter().product();
            let data: Vec<f64> = (0..len)
                .map(|i| f64::from_bits(seed.rotate_left(i as u32) ^ (i as u64) << 52))
                .collect();
            let t = Tensor::new(&dims, data).unwrap();
            let mut b = Vec::new();
            encode(&t, &mut b);
            encode(&t, &mut b);
            let back = decode_all(&b, Path::new("mem")).unwrap();
            prop_assert_eq!(back.len(), 2);
            for r in back {
                prop_assert_eq!(r.shape(), t.shape());
                let same = r.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                prop_assert!(same);
            }
        }
    }
}

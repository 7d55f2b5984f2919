//! Portable binary tensor files and the plain-text index that groups them.
//!
//! Layout of a `.tnsr` file, all integers little-endian:
//!
//! ```text
//! "TNSR" | 0x01 | rank: u32 | rank × extent: u32 | product(extents) × f32
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u8 = 0x01;
pub const INDEX_FILE: &str = "index.txt";

pub fn encode<S: Scalar>(t: &Tensor<S>) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
        if bytes.len() < n {
            return Err(Error::Format("truncated tensor file".into()));
        }
        let (head, rest) = bytes.split_at(n);
        *bytes = rest;
        Ok(head)
    }
    fn u32_le(bytes: &mut &[u8]) -> Result<u32> {
        let b = take(bytes, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    let mut cur = bytes;
    if take(&mut cur, 4)? != MAGIC {
        return Err(Error::Format("bad magic, expected TNSR".into()));
    }
    let version = take(&mut cur, 1)?[0];
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version:#04x}")));
    }
    let rank = u32_le(&mut cur)? as usize;
    let dims = (0..rank)
        .map(|_| u32_le(&mut cur).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let count: usize = dims.iter().product();
    if cur.len() != count * 4 {
        return Err(Error::Format(format!(
            "payload is {} bytes, dims {dims:?} need {}",
            cur.len(),
            count * 4
        )));
    }
    let data = cur.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Tensor::new(dims, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_tensor<S: Scalar>(path: impl AsRef<Path>, t: &Tensor<S>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(t)).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Write one file per named tensor plus `index.txt` mapping `name=file`.
pub fn save_named<S: Scalar>(dir: impl AsRef<Path>, tensors: &[(String, &Tensor<S>)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::new();
    for (name, t) in tensors {
        if name.contains('=') || name.contains('\n') || name.contains('/') {
            return Err(Error::invalid(format!("tensor name {name:?} not allowed")));
        }
        let file = format!("{name}.tnsr");
        write_tensor(dir.join(&file), t)?;
        index.push_str(&format!("{name}={file}\n"));
    }
    let path = dir.join(INDEX_FILE);
    fs::write(&path, index).map_err(|e| Error::io(path, e))
}

/// Read every tensor listed in `index.txt`, preserving index order.
pub fn load_named(dir: impl AsRef<Path>) -> Result<Vec<(String, Tensor<f32>)>> {
    let dir = dir.as_ref();
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, file) = line.split_once('=').ok_or_else(|| Error::Parse {
            what: "tensor index",
            line: lineno + 1,
            msg: format!("expected name=file, got {line:?}"),
        })?;
        out.push((name.to_string(), read_tensor(dir.join(file))?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::<f32>::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let bytes = encode(&t);
        let mut expected = b"TNSR".to_vec();
        expected.push(1);
        expected.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_corrupt_input() {
        let t = Tensor::<f32>::full(vec![3], 1.0).unwrap();
        let mut bytes = encode(&t);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
        let mut bytes = encode(&t);
        bytes[4] = 2;
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn named_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::<f32>::full(vec![2, 2], 0.5).unwrap();
        let b = Tensor::<f32>::full(vec![3], -1.0).unwrap();
        save_named(dir.path(), &[("a.kernel".into(), &a), ("b".into(), &b)]).unwrap();
        let back = load_named(dir.path()).unwrap();
        assert_eq!(back[0], ("a.kernel".to_string(), a));
        assert_eq!(back[1], ("b".to_string(), b));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(dims in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| ((i as u64 ^ seed) % 1000) as f32 * 0.37 - 100.0).collect();
            let t = Tensor::new(dims, data).unwrap();
            prop_assert_eq!(decode(&encode(&t)).unwrap(), t);
        }
    }
}

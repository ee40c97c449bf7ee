//! Binary container for named parameter tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"DSEP"
//! version u32            currently 1
//! count   u64            number of entries
//! entry*  name_len u64, name utf-8 bytes,
//!         rank u64, dims u64 × rank,
//!         values f64 × Πdims (row-major)
//! ```
//!
//! Entries keep their written order, so saving the same parameters twice
//! produces byte-identical files.

use std::io::{self, Read, Write};

use super::Tensor;

const MAGIC: &[u8; 4] = b"DSEP";
const VERSION: u32 = 1;

/// Error while reading or writing a parameter container.
#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected \"DSEP\", got {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0} (this build reads version {VERSION})")]
    BadVersion(u32),
    #[error("entry {index}: {problem}")]
    Corrupt { index: usize, problem: String },
}

/// Serialize named tensors in the given order.
pub fn save_params<W: Write>(
    w: &mut W,
    params: &[(String, Tensor)],
) -> Result<(), StoreError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, tensor) in params {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.shape().len() as u64).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Deserialize a container written by [`save_params`].
pub fn load_params<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>, StoreError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(StoreError::BadMagic(magic));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(StoreError::BadVersion(version));
    }
    let count = read_u64(r)? as usize;
    let mut params = Vec::with_capacity(count);
    for index in 0..count {
        let name_len = read_u64(r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|e| StoreError::Corrupt {
            index,
            problem: format!("name is not utf-8: {e}"),
        })?;
        let rank = read_u64(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| StoreError::Corrupt {
            index,
            problem: e.to_string(),
        })?;
        params.push((name, tensor));
    }
    Ok(params)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, StoreError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, StoreError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("w_in".to_string(), Tensor::from_rows(&[vec![1.0, -2.5], vec![0.0, 3.25]]).unwrap()),
            ("bias".to_string(), Tensor::row(&[0.125, -0.75, 9.0])),
        ]
    }

    #[test]
    fn round_trip_preserves_names_shapes_values() {
        let params = sample();
        let mut buf = Vec::new();
        save_params(&mut buf, &params).unwrap();
        let loaded = load_params(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded.len(), params.len());
        for ((n1, t1), (n2, t2)) in params.iter().zip(&loaded) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            for (a, b) in t1.data().iter().zip(t2.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let params = sample();
        let mut buf1 = Vec::new();
        let mut buf2 = Vec::new();
        save_params(&mut buf1, &params).unwrap();
        save_params(&mut buf2, &params).unwrap();
        assert_eq!(buf1, buf2);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut buf = Vec::new();
        save_params(&mut buf, &sample()).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            load_params(&mut buf.as_slice()),
            Err(StoreError::BadMagic(_))
        ));
    }

    #[test]
    fn truncated_file_is_an_io_error() {
        let mut buf = Vec::new();
        save_params(&mut buf, &sample()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            load_params(&mut buf.as_slice()),
            Err(StoreError::Io(_))
        ));
    }
}

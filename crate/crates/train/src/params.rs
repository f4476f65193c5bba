//! Named parameter tensors and the checkpoint file format.
//!
//! A checkpoint is little-endian throughout:
//!
//! ```text
//! magic   b"DMCK"
//! version u32 (= 1)
//! count   u32
//! count × { name_len u32, name (UTF-8), rows u64, cols u64 }   // manifest
//! count × rows·cols f64, row-major, in manifest order          // data
//! ```

use std::io::{Read, Write};

use deltamem_core::Matrix;

use crate::error::{TrainError, TrainResult};

const MAGIC: &[u8; 4] = b"DMCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor; names must be unique.
    pub fn push(&mut self, name: impl Into<String>, value: Matrix<f64>) -> TrainResult<usize> {
        let name = name.into();
        if self.index(&name).is_some() {
            return Err(TrainError::Config(format!("duplicate parameter {name}")));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<f64>> {
        self.index(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix<f64>> {
        self.index(name).map(move |i| &mut self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix<f64>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.values.iter().map(|m| m.rows() * m.cols()).sum()
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> TrainResult<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(
            &u32::try_from(self.len())
                .map_err(|_| ckpt("too many tensors"))?
                .to_le_bytes(),
        )?;
        for (name, m) in self.iter() {
            let bytes = name.as_bytes();
            out.write_all(
                &u32::try_from(bytes.len())
                    .map_err(|_| ckpt("name too long"))?
                    .to_le_bytes(),
            )?;
            out.write_all(bytes)?;
            out.write_all(&(m.rows() as u64).to_le_bytes())?;
            out.write_all(&(m.cols() as u64).to_le_bytes())?;
        }
        for m in &self.values {
            for x in m.data() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> TrainResult<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ckpt("bad magic"));
        }
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(ckpt(&format!("unsupported version {version}")));
        }
        let count = read_u32(&mut input)? as usize;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(&mut input)? as usize;
            let mut name = vec![0u8; len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| ckpt("name is not UTF-8"))?;
            let rows = read_u64(&mut input)?;
            let cols = read_u64(&mut input)?;
            let rows = usize::try_from(rows).map_err(|_| ckpt("shape overflow"))?;
            let cols = usize::try_from(cols).map_err(|_| ckpt("shape overflow"))?;
            manifest.push((name, rows, cols));
        }
        let mut set = ParamSet::new();
        let mut buf = [0u8; 8];
        for (name, rows, cols) in manifest {
            let n = rows.checked_mul(cols).ok_or_else(|| ckpt("shape overflow"))?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                input.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            set.push(name, Matrix::from_vec(rows, cols, data)?)?;
        }
        if input.read(&mut buf)? != 0 {
            return Err(ckpt("trailing bytes"));
        }
        Ok(set)
    }

    /// Copies every tensor of `other` whose name exists here; returns how many.
    pub fn load_matching(&mut self, other: &ParamSet) -> TrainResult<usize> {
        let mut n = 0;
        for (name, m) in other.iter() {
            if let Some(dst) = self.get_mut(name) {
                if dst.shape() != m.shape() {
                    return Err(ckpt(&format!(
                        "shape mismatch for {name}: {:?} vs {:?}",
                        dst.shape(),
                        m.shape()
                    )));
                }
                *dst = m.clone();
                n += 1;
            }
        }
        Ok(n)
    }
}

fn ckpt(msg: &str) -> TrainError {
    TrainError::Checkpoint(msg.to_string())
}

fn read_u32<R: Read>(r: &mut R) -> TrainResult<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> TrainResult<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

//! Dense row-major tensors and the `VCDT` on-disk format.

use std::io::{Read, Write};

use crate::{Result, VcdError};

/// Dense real-valued array with shape metadata. Values are `f64` in memory;
/// the `VCDT` file format stores them as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(VcdError::Shape("zero-sized dimension".into()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(VcdError::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(VcdError::Shape("non-finite element".into()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn constant(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Unbiased sample variance over all elements.
    pub fn variance(&self) -> f64 {
        let n = self.data.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.data.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
    }

    /// Elementwise map; the result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    /// Elementwise combine with a same-shape tensor.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(VcdError::Shape(format!(
                "tensor shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    /// Serializes as `VCDT`: magic, u8 version, u32 LE ndim, ndim u32 LE dims,
    /// then the values as f32 LE.
    pub fn write_vcdt(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"VCDT")?;
        w.write_all(&[1u8])?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &x in &self.data {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_vcdt(r: &mut impl Read) -> Result<Tensor> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| VcdError::TensorFormat("file too short for magic".into()))?;
        if &magic != b"VCDT" {
            return Err(VcdError::TensorFormat(format!(
                "bad magic {:?}, expected \"VCDT\"",
                magic
            )));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)
            .map_err(|_| VcdError::TensorFormat("missing version byte".into()))?;
        if version[0] != 1 {
            return Err(VcdError::TensorFormat(format!(
                "unsupported version {}",
                version[0]
            )));
        }
        let ndim = read_u32(r)? as usize;
        if ndim == 0 || ndim > 32 {
            return Err(VcdError::TensorFormat(format!("implausible ndim {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = read_u32(r)? as usize;
            if d == 0 {
                return Err(VcdError::TensorFormat("zero dimension".into()));
            }
            shape.push(d);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| VcdError::TensorFormat("truncated value payload".into()))?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(VcdError::TensorFormat("trailing bytes after payload".into()));
        }
        Tensor::new(shape, data)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| VcdError::TensorFormat("truncated header".into()))?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 2], vec![1.0, 2.0]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn vcdt_round_trip() {
        let t = Tensor::new(vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, 4.0, -0.125]).unwrap();
        let mut buf = Vec::new();
        t.write_vcdt(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"VCDT");
        assert_eq!(buf[4], 1);
        let back = Tensor::read_vcdt(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn vcdt_rejects_garbage() {
        let bad = b"NOPE\x01\x01\x00\x00\x00";
        assert!(matches!(
            Tensor::read_vcdt(&mut bad.as_slice()),
            Err(VcdError::TensorFormat(_))
        ));
        let mut truncated = Vec::new();
        Tensor::vector(vec![1.0, 2.0])
            .unwrap()
            .write_vcdt(&mut truncated)
            .unwrap();
        truncated.pop();
        assert!(Tensor::read_vcdt(&mut truncated.as_slice()).is_err());
    }
}

use std::io::Write;

use crate::error::{Error, Result};

/// Binary foreground mask; 1 = foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub width: usize,
    pub height: usize,
    pub frame: u64,
    data: Vec<u8>,
}

impl ForegroundMask {
    pub fn zeros(width: usize, height: usize, frame: u64) -> Self {
        ForegroundMask {
            width,
            height,
            frame,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, frame: u64, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dims(width * height, data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(ForegroundMask {
            width,
            height,
            frame,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn same_shape(&self, other: &ForegroundMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Binary PGM (P5), foreground as 255.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| v * 255).collect();
        out.write_all(&bytes)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_layout() {
        let m = ForegroundMask::from_vec(3, 2, 0, vec![1, 0, 0, 0, 1, 1]).unwrap();
        let mut buf = Vec::new();
        m.write_pgm(&mut buf).unwrap();
        assert_eq!(&buf[..11], b"P5\n3 2\n255\n");
        assert_eq!(&buf[11..], &[255, 0, 0, 0, 255, 255]);
        assert!(ForegroundMask::from_vec(2, 2, 0, vec![0, 2, 0, 0]).is_err());
    }
}

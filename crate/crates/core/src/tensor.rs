//! Dense rank-1/2 tensors and the numeric kernels used by the forward and
//! backward passes, with selectable element precision and accumulation
//! precision for the GEMM reduction.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fp16::quantize_f32;

/// Element precision of a tensor: native single precision or emulated
/// binary16 (every stored element is its own quantization).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp32,
    Fp16,
}

/// Precision of the running GEMM reduction sum. With `Fp16` the sum is
/// re-quantized after every addition (swamping included); with `Fp32` the
/// sum stays in single precision and is quantized once at the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccumMode {
    Fp16,
    Fp32,
}

/// Dense row-major tensor of rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    precision: Precision,
}

/// Population statistics of a tensor, always computed in double precision
/// regardless of element precision: the loss-scale bound must not itself
/// underflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorStats {
    pub mean: f64,
    pub var: f64,
    pub max_abs: f64,
}

impl Tensor {
    /// Builds a tensor from row-major data, quantizing if `precision` is
    /// fp16 so the storage invariant holds.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>, precision: Precision) -> Result<Tensor> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(CoreError::ShapeMismatch(format!(
                "rank must be 1 or 2, got {}",
                shape.len()
            )));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(CoreError::ShapeMismatch("zero extent".into()));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        let mut t = Tensor {
            shape,
            data,
            precision: Precision::Fp32,
        };
        if precision == Precision::Fp16 {
            t = t.quantized();
        }
        Ok(t)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>, precision: Precision) -> Result<Tensor> {
        Tensor::from_vec(vec![rows, cols], data, precision)
    }

    pub fn vector(data: Vec<f32>, precision: Precision) -> Result<Tensor> {
        let n = data.len();
        Tensor::from_vec(vec![n], data, precision)
    }

    pub fn zeros(shape: Vec<usize>, precision: Precision) -> Result<Tensor> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; n], precision)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(CoreError::ShapeMismatch(format!(
                "expected rank 2, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let (_, c) = (self.shape[0], self.shape[1]);
        &self.data[i * c..(i + 1) * c]
    }

    /// Copy with every element quantized to binary16 and the precision tag
    /// set to fp16.
    pub fn quantized(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| quantize_f32(x)).collect(),
            precision: Precision::Fp16,
        }
    }

    /// Same values, retagged as fp32 (always valid: every binary16 value is
    /// a single-precision value).
    pub fn as_fp32(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            precision: Precision::Fp32,
        }
    }

    /// Elementwise multiplication by a scalar, quantized under the tensor's
    /// own precision. Power-of-two factors are exact.
    pub fn scaled(&self, factor: f64) -> Tensor {
        let f = factor as f32;
        let data = match self.precision {
            Precision::Fp32 => self.data.iter().map(|&x| x * f).collect(),
            Precision::Fp16 => self.data.iter().map(|&x| quantize_f32(x * f)).collect(),
        };
        Tensor {
            shape: self.shape.clone(),
            data,
            precision: self.precision,
        }
    }

    pub fn transposed(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut data = vec![0f32; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data,
            precision: self.precision,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .fold(0f64, |acc, &x| acc.max((x as f64).abs()))
    }

    pub fn any_nonfinite(&self) -> bool {
        self.data.iter().any(|x| !x.is_finite())
    }
}

/// Matrix product `C[i,t] = sum_j A[i,j] * B[j,t]` with a strictly
/// ascending-`j` reduction per output element.
///
/// Under fp16 precision every product is quantized; with fp16 accumulation
/// the running sum is re-quantized after each addition, with fp32
/// accumulation it is kept in single precision and quantized once at the
/// end. `accum` is ignored under fp32 precision.
pub fn matmul(a: &Tensor, b: &Tensor, precision: Precision, accum: AccumMode) -> Result<Tensor> {
    let (m, ka) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if ka != kb {
        return Err(CoreError::ShapeMismatch(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    debug_assert!(precision == Precision::Fp32 || a.precision == Precision::Fp16);
    debug_assert!(precision == Precision::Fp32 || b.precision == Precision::Fp16);

    let mut out = vec![0f32; m * n];
    let run = |i: usize, orow: &mut [f32]| {
        let arow = &a.data[i * ka..(i + 1) * ka];
        match (precision, accum) {
            (Precision::Fp32, _) => {
                for (j, &aij) in arow.iter().enumerate() {
                    let brow = &b.data[j * n..(j + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += aij * bv;
                    }
                }
            }
            (Precision::Fp16, AccumMode::Fp32) => {
                for (j, &aij) in arow.iter().enumerate() {
                    let brow = &b.data[j * n..(j + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += quantize_f32(aij * bv);
                    }
                }
                for o in orow.iter_mut() {
                    *o = quantize_f32(*o);
                }
            }
            (Precision::Fp16, AccumMode::Fp16) => {
                for (j, &aij) in arow.iter().enumerate() {
                    let brow = &b.data[j * n..(j + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o = quantize_f32(*o + quantize_f32(aij * bv));
                    }
                }
            }
        }
    };
    // Parallelism only over independent output rows; each element's
    // reduction order is unaffected.
    if m * ka * n >= (1 << 15) {
        out.par_chunks_mut(n).enumerate().for_each(|(i, orow)| run(i, orow));
    } else {
        for (i, orow) in out.chunks_mut(n).enumerate() {
            run(i, orow);
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
        precision,
    })
}

/// Elementwise `max(x, 0)`.
pub fn relu(x: &Tensor) -> Tensor {
    let data = x
        .data
        .iter()
        .map(|&v| if v > 0.0 { v } else { 0.0 })
        .collect();
    Tensor {
        shape: x.shape.clone(),
        data,
        precision: x.precision,
    }
}

/// Gradient of [`relu`]: `delta` masked by `x > 0`. The gradient at exactly
/// zero is zero.
pub fn relu_backward(x: &Tensor, delta: &Tensor) -> Result<Tensor> {
    if x.shape != delta.shape {
        return Err(CoreError::ShapeMismatch(format!(
            "relu_backward shapes {:?} vs {:?}",
            x.shape, delta.shape
        )));
    }
    let data = x
        .data
        .iter()
        .zip(&delta.data)
        .map(|(&xv, &dv)| if xv > 0.0 { dv } else { 0.0 })
        .collect();
    Ok(Tensor {
        shape: delta.shape.clone(),
        data,
        precision: delta.precision,
    })
}

/// Elementwise sum quantized under `precision`.
pub fn elementwise_add(a: &Tensor, b: &Tensor, precision: Precision) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(CoreError::ShapeMismatch(format!(
            "elementwise_add shapes {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let data = match precision {
        Precision::Fp32 => a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
        Precision::Fp16 => a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| quantize_f32(x + y))
            .collect(),
    };
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
        precision,
    })
}

/// Population mean, population variance (denominator N), and maximum
/// absolute value, accumulated in double precision.
pub fn stats(t: &Tensor) -> Result<TensorStats> {
    if t.is_empty() {
        return Err(CoreError::EmptyTensor);
    }
    let n = t.data.len() as f64;
    let mut sum = 0f64;
    for &x in &t.data {
        sum += x as f64;
    }
    let mean = sum / n;
    let mut ss = 0f64;
    let mut max_abs = 0f64;
    for &x in &t.data {
        let d = x as f64 - mean;
        ss += d * d;
        max_abs = max_abs.max((x as f64).abs());
    }
    Ok(TensorStats {
        mean,
        var: ss / n,
        max_abs,
    })
}

/// He-style initializer: i.i.d. zero-mean normals with std sqrt(2/fan_in),
/// deterministic for a given generator state.
pub fn he_init<R: Rng>(fan_in: usize, shape: Vec<usize>, rng: &mut R) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(CoreError::Domain("he_init requires fan_in >= 1".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (z * std) as f32
        })
        .collect();
    Tensor::from_vec(shape, data, Precision::Fp32)
}

const ADAG_MAGIC: &[u8; 4] = b"ADAG";

/// Writes the tensor in the gradient-dump format: magic "ADAG", u32-LE
/// rank, the extents, then the row-major f32-LE payload.
pub fn write_adag<W: Write>(t: &Tensor, w: &mut W) -> std::io::Result<()> {
    w.write_all(ADAG_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in &t.shape {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for &v in &t.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a tensor dump written by [`write_adag`]. The result is tagged
/// fp32.
pub fn read_adag<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CoreError::BadDump("truncated before magic".into()))?;
    if &magic != ADAG_MAGIC {
        return Err(CoreError::BadDump(format!(
            "bad magic {:02x?}, expected \"ADAG\"",
            magic
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)
        .map_err(|_| CoreError::BadDump("truncated rank".into()))?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    if rank == 0 || rank > 2 {
        return Err(CoreError::BadDump(format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut u32buf)
            .map_err(|_| CoreError::BadDump("truncated extents".into()))?;
        shape.push(u32::from_le_bytes(u32buf) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut u32buf)
            .map_err(|_| CoreError::BadDump("truncated payload".into()))?;
        data.push(f32::from_le_bytes(u32buf));
    }
    Tensor::from_vec(shape, data, Precision::Fp32)
}

//! MXFP4- and NVFP4-style reference quantizers (E2M1 elements).
//!
//! MXFP4 uses a power-of-two block scale with the exponent chosen so the block
//! maximum lands near 6. The NVFP4-style variant uses an E4M3 block scale on top
//! of a per-tensor real scale `tensor_amax / (6 * 448)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quant::floor_log2;
use crate::tensor::Tensor;

/// E2M1 magnitudes by 3-bit code.
pub const E2M1_VALUES: [f64; 8] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];
pub const E2M1_MAX: f64 = 6.0;
pub const E4M3_MAX: f64 = 448.0;
/// E8M0 exponent range.
const MX_EXP_MIN: i32 = -127;
const MX_EXP_MAX: i32 = 127;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fp4Scheme {
    Mxfp4,
    Nvfp4,
}

impl std::str::FromStr for Fp4Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mxfp4" => Ok(Fp4Scheme::Mxfp4),
            "nvfp4" => Ok(Fp4Scheme::Nvfp4),
            _ => Err(Error::invalid(format!(
                "unknown scheme {s:?} (mxfp4|nvfp4)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fp4Scale {
    /// Block scale `2^exponent`.
    Pow2(i32),
    /// E4M3 block scale code times a per-tensor scale.
    Fp8 { code: u8, tensor_scale: f64 },
}

impl Fp4Scale {
    pub fn value(&self) -> f64 {
        match *self {
            Fp4Scale::Pow2(e) => 2f64.powi(e),
            Fp4Scale::Fp8 { code, tensor_scale } => e4m3_decode(code) * tensor_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fp4Block {
    pub scale: Fp4Scale,
    /// Nibbles: sign in bit 3, E2M1 code below.
    pub codes: Vec<u8>,
}

impl Fp4Block {
    pub fn scheme(&self) -> Fp4Scheme {
        match self.scale {
            Fp4Scale::Pow2(_) => Fp4Scheme::Mxfp4,
            Fp4Scale::Fp8 { .. } => Fp4Scheme::Nvfp4,
        }
    }

    pub fn dequantize(&self) -> Vec<f32> {
        let s = self.scale.value();
        self.codes
            .iter()
            .map(|&n| {
                let m = E2M1_VALUES[(n & 7) as usize] * s;
                (if n & 8 != 0 { -m } else { m }) as f32
            })
            .collect()
    }
}

/// Nearest E2M1 code for a non-negative magnitude; ties go to the even code,
/// values past 6 saturate.
pub fn e2m1_code(x: f64) -> u8 {
    nearest_even(&E2M1_VALUES, x.min(E2M1_MAX))
}

fn nearest_even(table: &[f64], x: f64) -> u8 {
    // table is ascending
    let hi = table.partition_point(|&v| v < x);
    if hi == 0 {
        return 0;
    }
    if hi == table.len() {
        return (table.len() - 1) as u8;
    }
    let lo = hi - 1;
    let (dl, dh) = (x - table[lo], table[hi] - x);
    let pick = if dl < dh {
        lo
    } else if dh < dl {
        hi
    } else if lo % 2 == 0 {
        lo
    } else {
        hi
    };
    pick as u8
}

/// Positive finite E4M3 values indexed by 7-bit code (code 127 is NaN and
/// excluded).
fn e4m3_table() -> &'static [f64; 127] {
    static TABLE: std::sync::OnceLock<[f64; 127]> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|c| e4m3_decode(c as u8)))
}

pub fn e4m3_decode(code: u8) -> f64 {
    let e = i32::from((code >> 3) & 0xf);
    let m = f64::from(code & 7);
    if e == 0 {
        m / 8.0 * 2f64.powi(-6)
    } else {
        (1.0 + m / 8.0) * 2f64.powi(e - 7)
    }
}

/// Round-to-nearest-even E4M3 encoding of a non-negative value, saturating at 448.
pub fn e4m3_encode(x: f64) -> u8 {
    nearest_even(e4m3_table(), x.min(E4M3_MAX))
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::invalid(format!("non-finite value at {i}"))),
        None => Ok(()),
    }
}

fn amax(values: &[f32]) -> f64 {
    values.iter().fold(0f64, |a, &v| a.max(f64::from(v.abs())))
}

fn encode_elements(values: &[f32], scale: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| {
            let c = if scale > 0.0 {
                e2m1_code(f64::from(v).abs() / scale)
            } else {
                0
            };
            if v < 0.0 && c != 0 {
                c | 8
            } else {
                c
            }
        })
        .collect()
}

pub fn quantize_mxfp4(values: &[f32]) -> Result<Fp4Block> {
    check_finite(values)?;
    let a = amax(values);
    let e = if a > 0.0 {
        (floor_log2(a) - 2).clamp(MX_EXP_MIN, MX_EXP_MAX)
    } else {
        MX_EXP_MIN
    };
    let scale = Fp4Scale::Pow2(e);
    let codes = if a > 0.0 {
        encode_elements(values, scale.value())
    } else {
        vec![0; values.len()]
    };
    Ok(Fp4Block { scale, codes })
}

pub fn nvfp4_tensor_scale(tensor_amax: f64) -> f64 {
    tensor_amax / (E2M1_MAX * E4M3_MAX)
}

pub fn quantize_nvfp4(values: &[f32], tensor_amax: f64) -> Result<Fp4Block> {
    check_finite(values)?;
    if !(tensor_amax.is_finite() && tensor_amax >= 0.0) {
        return Err(Error::invalid(format!("invalid tensor amax {tensor_amax}")));
    }
    let a = amax(values);
    if a > tensor_amax {
        return Err(Error::invalid(format!(
            "block amax {a} exceeds tensor amax {tensor_amax}"
        )));
    }
    let ts = nvfp4_tensor_scale(tensor_amax);
    let code = if ts > 0.0 {
        e4m3_encode(a / (E2M1_MAX * ts))
    } else {
        0
    };
    let scale = Fp4Scale::Fp8 {
        code,
        tensor_scale: ts,
    };
    Ok(Fp4Block {
        scale,
        codes: encode_elements(values, scale.value()),
    })
}

pub fn dequantize_fp4(block: &Fp4Block) -> Vec<f32> {
    block.dequantize()
}

/// Fake-quantizes `tensor` row-wise in blocks of `block_size` (partial blocks
/// are quantized as-is) and returns the reconstruction.
pub fn fake_quantize(tensor: &Tensor, block_size: usize, scheme: Fp4Scheme) -> Result<Tensor> {
    if block_size == 0 {
        return Err(Error::invalid("block size must be positive"));
    }
    check_finite(tensor.data())?;
    let row_len = tensor.row_len();
    let tensor_amax = amax(tensor.data());
    let mut out = tensor.clone();
    if row_len == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(row_len)
        .try_for_each(|row| -> Result<()> {
            for chunk in row.chunks_mut(block_size) {
                let q = match scheme {
                    Fp4Scheme::Mxfp4 => quantize_mxfp4(chunk)?,
                    Fp4Scheme::Nvfp4 => quantize_nvfp4(chunk, tensor_amax)?,
                };
                chunk.copy_from_slice(&q.dequantize());
            }
            Ok(())
        })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e2m1_rounding() {
        assert_eq!(e2m1_code(0.25), 0); // tie -> even code 0
        assert_eq!(e2m1_code(0.75), 2); // tie between codes 1 and 2
        assert_eq!(e2m1_code(2.5), 4);
        assert_eq!(e2m1_code(3.5), 6);
        assert_eq!(e2m1_code(5.0), 6);
        assert_eq!(e2m1_code(5.1), 7);
        assert_eq!(e2m1_code(100.0), 7);
    }

    #[test]
    fn e4m3_table_shape() {
        assert_eq!(e4m3_decode(0x7e), 448.0);
        assert_eq!(e4m3_decode(1), 2f64.powi(-9));
        assert_eq!(e4m3_decode(0x38), 1.0);
        for c in 0..127u8 {
            assert_eq!(e4m3_encode(e4m3_decode(c)), c);
        }
        assert_eq!(e4m3_encode(1e9), 0x7e);
    }

    #[test]
    fn mxfp4_representable_is_exact() {
        for e in -6..6 {
            let s = 2f32.powi(e);
            let v: Vec<f32> = [6.0, -3.0, 0.5, 0.0, 4.0, -1.5]
                .iter()
                .map(|x| x * s)
                .collect();
            let b = quantize_mxfp4(&v).unwrap();
            assert_eq!(b.scale, Fp4Scale::Pow2(e));
            assert_eq!(b.dequantize(), v);
        }
    }

    #[test]
    fn zero_blocks() {
        let z = vec![0.0f32; 16];
        assert_eq!(quantize_mxfp4(&z).unwrap().dequantize(), z);
        assert_eq!(quantize_nvfp4(&z, 0.0).unwrap().dequantize(), z);
        assert_eq!(quantize_nvfp4(&z, 5.0).unwrap().dequantize(), z);
    }

    #[test]
    fn nvfp4_representable_is_exact() {
        // tensor amax 6*448 makes the tensor scale 1; block amax 6 -> block scale 1
        let v = [6.0f32, -4.0, 0.5, 1.5, 0.0, -3.0, 2.0, 1.0];
        let b = quantize_nvfp4(&v, 6.0 * 448.0).unwrap();
        assert_eq!(
            b.scale,
            Fp4Scale::Fp8 {
                code: 0x38,
                tensor_scale: 1.0
            }
        );
        assert_eq!(b.dequantize(), v);
        assert_eq!(b.scheme(), Fp4Scheme::Nvfp4);
    }

    #[test]
    fn errors() {
        assert!(quantize_mxfp4(&[f32::NAN]).is_err());
        assert!(quantize_nvfp4(&[2.0], 1.0).is_err());
        assert!(quantize_nvfp4(&[1.0], f64::NAN).is_err());
        assert!("fp8".parse::<Fp4Scheme>().is_err());
    }

    #[test]
    fn fake_quantize_is_idempotent() {
        let data: Vec<f32> = (0..96)
            .map(|i| ((i * 37 % 101) as f32 - 50.0) * 0.13)
            .collect();
        let t = Tensor::new(vec![3, 32], data).unwrap();
        for scheme in [Fp4Scheme::Mxfp4, Fp4Scheme::Nvfp4] {
            let once = fake_quantize(&t, 16, scheme).unwrap();
            if scheme == Fp4Scheme::Mxfp4 {
                assert_eq!(fake_quantize(&once, 16, scheme).unwrap(), once);
            }
            assert_eq!(once.shape(), t.shape());
        }
    }
}

//! Two's-complement fixed-point words as used by the inference pipeline.
//!
//! Activations, inputs and biases are 27-bit Q10.17 words, weights are 18-bit
//! Q6.12 words, and the DSP multiplier produces a 45-bit Q16.29 product from
//! which a Q10.17 slice is kept. All conversions truncate (floor on the raw
//! integer). Integer widths are parameters of [`QFormat`] so narrower
//! activation formats can be studied.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signed fixed-point layout: `int_bits` (including sign) + `frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QFormat {
    pub int_bits: u32,
    pub frac_bits: u32,
}

impl QFormat {
    pub const Q10_17: QFormat = QFormat::new(10, 17);
    pub const Q6_12: QFormat = QFormat::new(6, 12);
    pub const Q16_29: QFormat = QFormat::new(16, 29);

    pub const fn new(int_bits: u32, frac_bits: u32) -> QFormat {
        QFormat { int_bits, frac_bits }
    }

    pub const fn width(self) -> u32 {
        self.int_bits + self.frac_bits
    }

    pub const fn min_raw(self) -> i64 {
        -(1i64 << (self.width() - 1))
    }

    pub const fn max_raw(self) -> i64 {
        (1i64 << (self.width() - 1)) - 1
    }

    pub const fn one(self) -> i64 {
        1i64 << self.frac_bits
    }

    pub fn contains(self, raw: i64) -> bool {
        (self.min_raw()..=self.max_raw()).contains(&raw)
    }

    /// Clamp to the representable range; the flag reports whether clamping happened.
    pub fn saturate(self, raw: i64) -> (i64, bool) {
        if raw > self.max_raw() {
            (self.max_raw(), true)
        } else if raw < self.min_raw() {
            (self.min_raw(), true)
        } else {
            (raw, false)
        }
    }

    /// `floor(x * 2^frac)`, rejecting values outside the format.
    pub fn encode(self, x: f64) -> Result<i64> {
        let scaled = (x * self.one() as f64).floor();
        if !scaled.is_finite() || scaled < self.min_raw() as f64 || scaled > self.max_raw() as f64 {
            return Err(Error::range(
                format!("Q{}.{} value", self.int_bits, self.frac_bits),
                x,
                self.decode(self.min_raw()),
                self.decode(self.max_raw()),
            ));
        }
        Ok(scaled as i64)
    }

    pub fn decode(self, raw: i64) -> f64 {
        raw as f64 / self.one() as f64
    }

    pub fn hex_digits(self) -> usize {
        self.width().div_ceil(4) as usize
    }

    fn mask(self) -> u64 {
        (1u64 << self.width()) - 1
    }

    /// Zero-padded hex of the raw two's-complement pattern.
    pub fn to_hex(self, raw: i64) -> String {
        format!("{:0width$x}", (raw as u64) & self.mask(), width = self.hex_digits())
    }

    /// Inverse of [`QFormat::to_hex`]; requires exactly `hex_digits` digits.
    pub fn from_hex(self, s: &str) -> std::result::Result<i64, String> {
        if s.len() != self.hex_digits() {
            return Err(format!("expected {} hex digits, found {:?}", self.hex_digits(), s));
        }
        let bits = u64::from_str_radix(s, 16).map_err(|_| format!("invalid hex word {s:?}"))?;
        if bits > self.mask() {
            return Err(format!("hex word {s:?} exceeds {} bits", self.width()));
        }
        let shift = 64 - self.width();
        Ok(((bits << shift) as i64) >> shift)
    }

    /// Binary pattern, most significant bit first.
    pub fn to_bits(self, raw: i64) -> String {
        format!("{:0width$b}", (raw as u64) & self.mask(), width = self.width() as usize)
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.int_bits, self.frac_bits)
    }
}

macro_rules! qword {
    ($(#[$doc:meta])* $name:ident, $repr:ty, $fmt:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name($repr);

        impl $name {
            pub const FORMAT: QFormat = $fmt;
            pub const MIN: $name = $name(Self::FORMAT.min_raw() as $repr);
            pub const MAX: $name = $name(Self::FORMAT.max_raw() as $repr);

            pub fn from_raw(raw: i64) -> Result<$name> {
                if Self::FORMAT.contains(raw) {
                    Ok($name(raw as $repr))
                } else {
                    Err(Error::range(
                        concat!(stringify!($name), " raw"),
                        raw as f64,
                        Self::FORMAT.min_raw() as f64,
                        Self::FORMAT.max_raw() as f64,
                    ))
                }
            }

            pub fn raw(self) -> i64 {
                self.0 as i64
            }

            pub fn encode(x: f64) -> Result<$name> {
                Ok($name(Self::FORMAT.encode(x)? as $repr))
            }

            pub fn decode(self) -> f64 {
                Self::FORMAT.decode(self.raw())
            }

            pub fn to_hex(self) -> String {
                Self::FORMAT.to_hex(self.raw())
            }

            pub fn to_bits(self) -> String {
                Self::FORMAT.to_bits(self.raw())
            }
        }
    };
}

qword!(
    /// 27-bit activation/input/bias word, value = raw / 2^17.
    Q10_17, i32, QFormat::Q10_17
);
qword!(
    /// 18-bit weight word, value = raw / 2^12.
    Q6_12, i32, QFormat::Q6_12
);
qword!(
    /// 45-bit DSP product word, value = raw / 2^29.
    Q16_29, i64, QFormat::Q16_29
);

pub fn encode_q10_17(x: f64) -> Result<Q10_17> {
    Q10_17::encode(x)
}

pub fn decode_q10_17(w: Q10_17) -> f64 {
    w.decode()
}

pub fn encode_q6_12(x: f64) -> Result<Q6_12> {
    Q6_12::encode(x)
}

pub fn decode_q6_12(w: Q6_12) -> f64 {
    w.decode()
}

/// Exact 18x27 -> 45-bit product.
pub fn mul_dsp(w: Q6_12, x: Q10_17) -> Q16_29 {
    Q16_29(w.raw() * x.raw())
}

/// Keeps product bits [40:12] as a word in `act`, i.e. drops the low
/// `weight_frac` fraction bits (floor) and saturates the integer part.
pub fn slice_product(product: i64, weight_frac: u32, act: QFormat) -> (i64, bool) {
    act.saturate(product >> weight_frac)
}

/// Integer bits [9:0] and fraction bits [28:12] of the product, saturating
/// when the discarded integer bits are not a sign extension.
pub fn slice_27(p: Q16_29) -> (Q10_17, bool) {
    let (raw, overflow) = slice_product(p.raw(), QFormat::Q6_12.frac_bits, QFormat::Q10_17);
    (Q10_17(raw as i32), overflow)
}

/// Unbounded raw result of `((value - mu + 2^n) << frac) >> (n + 1)`.
pub fn scale_shift_raw(value: i64, n: u32, mu: i64, frac_bits: u32) -> Result<i64> {
    if n == 0 || n > 61 {
        return Err(Error::Config(format!("scale_shift needs 1 <= n <= 61, got {n}")));
    }
    if frac_bits > 62 {
        return Err(Error::Config(format!("scale_shift fraction width {frac_bits} too large")));
    }
    let tmp = value
        .checked_sub(mu)
        .and_then(|v| v.checked_add(1i64 << n))
        .ok_or(Error::Overflow("scale_shift offset"))?;
    let shifted = tmp
        .checked_mul(1i64 << frac_bits)
        .ok_or(Error::Overflow("scale_shift left shift"))?;
    Ok(shifted >> (n + 1))
}

/// Shift-only normalization of an integer accumulate into Q10.17.
pub fn scale_shift(value: i64, n: u32, mu: i64) -> Result<Q10_17> {
    Q10_17::from_raw(scale_shift_raw(value, n, mu, QFormat::Q10_17.frac_bits)?)
}

/// Intermediates of the staged normalization that first keeps 14 extra bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagedScale {
    pub offset: i64,
    pub widened: i64,
    pub divided: i64,
    pub raw: i64,
}

/// `((value - mu + 2^n) << 14) >> (n + 1)`, then `(x << 17) >> 14`.
pub fn scale_shift_staged(value: i64, n: u32, mu: i64) -> Result<StagedScale> {
    if n == 0 || n > 61 {
        return Err(Error::Config(format!("scale_shift needs 1 <= n <= 61, got {n}")));
    }
    let offset = value
        .checked_sub(mu)
        .and_then(|v| v.checked_add(1i64 << n))
        .ok_or(Error::Overflow("scale_shift offset"))?;
    let widened = offset.checked_mul(1 << 14).ok_or(Error::Overflow("staged widen"))?;
    let divided = widened >> (n + 1);
    let raw = divided.checked_mul(1 << 17).ok_or(Error::Overflow("staged rescale"))? >> 14;
    Ok(StagedScale {
        offset,
        widened,
        divided,
        raw,
    })
}

pub fn relu_q(x: Q10_17) -> Q10_17 {
    Q10_17(x.0.max(0))
}

/// Sigmoid lookup table addressed by comparisons against bin boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigmoidLut {
    pub format: QFormat,
    pub input_lo: i64,
    pub input_hi: i64,
    pub entries: Vec<i64>,
    /// Raw bin boundaries; bin `k` is `(thresholds[k-1], thresholds[k]]`.
    pub thresholds: Vec<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LutConfig {
    pub size: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for LutConfig {
    fn default() -> Self {
        LutConfig {
            size: 256,
            lo: -8.0,
            hi: 8.0,
        }
    }
}

impl SigmoidLut {
    pub fn build(cfg: &LutConfig) -> Result<SigmoidLut> {
        SigmoidLut::build_in(cfg, QFormat::Q10_17)
    }

    pub fn build_in(cfg: &LutConfig, format: QFormat) -> Result<SigmoidLut> {
        if cfg.size < 2 {
            return Err(Error::Config(format!("sigmoid table needs at least 2 entries, got {}", cfg.size)));
        }
        if !(cfg.lo < cfg.hi) {
            return Err(Error::Config(format!("sigmoid table bounds {} >= {}", cfg.lo, cfg.hi)));
        }
        let width = (cfg.hi - cfg.lo) / cfg.size as f64;
        let entries = (0..cfg.size)
            .map(|k| format.encode(crate::fnn::sigmoid(cfg.lo + (k as f64 + 0.5) * width)))
            .collect::<Result<Vec<_>>>()?;
        let thresholds = (1..cfg.size)
            .map(|k| format.encode(cfg.lo + k as f64 * width))
            .collect::<Result<Vec<_>>>()?;
        Ok(SigmoidLut {
            format,
            input_lo: format.encode(cfg.lo)?,
            input_hi: format.encode(cfg.hi)?,
            entries,
            thresholds,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Table address of a raw input: the number of boundaries strictly below it.
    pub fn address(&self, x: i64) -> usize {
        let x = x.clamp(self.input_lo, self.input_hi);
        self.thresholds.partition_point(|&b| b < x)
    }

    pub fn eval_raw(&self, x: i64) -> i64 {
        self.entries[self.address(x)]
    }

    pub fn eval(&self, x: Q10_17) -> Q10_17 {
        Q10_17(self.eval_raw(x.raw()) as i32)
    }
}

pub fn sigmoid_lut_build(size: usize, lo: f64, hi: f64) -> Result<SigmoidLut> {
    SigmoidLut::build(&LutConfig { size, lo, hi })
}

pub fn sigmoid_lut_eval(lut: &SigmoidLut, x: Q10_17) -> Q10_17 {
    lut.eval(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encodes_worked_example() {
        let w = encode_q10_17(0.5454).unwrap();
        assert_eq!(w.raw(), 71486);
        assert_eq!(w.to_bits(), "000000000010001011100111110");
        assert_eq!(&w.to_bits()[10..], "10001011100111110");
        assert_eq!(w.to_hex(), "001173e");
    }

    #[test]
    fn encode_edges() {
        assert_eq!(encode_q10_17(0.0).unwrap().raw(), 0);
        let m1 = encode_q10_17(-1.0).unwrap();
        assert_eq!(m1.raw(), -131072);
        assert_eq!(m1.decode(), -1.0);
        assert_eq!(encode_q10_17(-1e-9).unwrap().raw(), -1);
        assert!(encode_q10_17(512.0).is_err());
        assert!(encode_q10_17(f64::NAN).is_err());
        assert!(encode_q6_12(32.0).is_err());
        assert!(encode_q6_12(40.0).is_err());
        assert_eq!(encode_q6_12(-32.0).unwrap().raw(), -(1 << 17));
        assert_eq!(Q10_17::MAX.raw(), (1 << 26) - 1);
    }

    #[test]
    fn hex_roundtrip_negative() {
        let f = QFormat::Q10_17;
        assert_eq!(f.to_hex(-1), "7ffffff");
        assert_eq!(f.from_hex("7ffffff").unwrap(), -1);
        assert_eq!(QFormat::Q6_12.to_hex(-4096), "3f000");
        assert!(f.from_hex("8000000").is_err());
        assert!(f.from_hex("00000g0").is_err());
        assert!(f.from_hex("000000").is_err());
    }

    #[test]
    fn identity_multiply() {
        let p = mul_dsp(Q6_12::encode(1.0).unwrap(), Q10_17::encode(0.5).unwrap());
        assert_eq!(Q16_29::FORMAT.decode(p.raw()), 0.5);
        let (s, ovf) = slice_27(p);
        assert_eq!((s.raw(), ovf), (65536, false));
    }

    #[test]
    fn saturating_slice() {
        let p = mul_dsp(Q6_12::encode(31.0).unwrap(), Q10_17::encode(511.0).unwrap());
        assert_eq!(Q16_29::FORMAT.decode(p.raw()), 15841.0);
        let (s, ovf) = slice_27(p);
        assert!(ovf);
        assert_eq!(s.raw(), (1 << 26) - 1);
        let (n, ovf) = slice_27(mul_dsp(Q6_12::encode(-31.0).unwrap(), Q10_17::encode(511.0).unwrap()));
        assert!(ovf);
        assert_eq!(n, Q10_17::MIN);
    }

    #[test]
    fn normalization_worked_examples() {
        assert_eq!(scale_shift(48, 22, 0).unwrap().raw(), 65536);
        assert_eq!(scale_shift(48, 22, 0).unwrap().decode(), 0.5);
        let st = scale_shift_staged(48, 22, 0).unwrap();
        assert_eq!(st.offset, 4_194_352);
        assert_eq!(st.widened, 68_720_263_168);
        assert_eq!(st.divided, 8192);
        assert_eq!(st.raw, 65536);
        assert_eq!(scale_shift(1000 - (1 << 22), 22, 1000).unwrap().raw(), 0);
        assert!(matches!(scale_shift(i64::MAX - 5, 22, -10), Err(Error::Overflow(_))));
        assert!(scale_shift(1 << 40, 22, 0).is_err());
        assert!(scale_shift(0, 0, 0).is_err());
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu_q(Q10_17::from_raw(-1).unwrap()).raw(), 0);
        assert_eq!(relu_q(Q10_17::from_raw(0).unwrap()).raw(), 0);
        assert_eq!(relu_q(Q10_17::from_raw(71486).unwrap()).raw(), 71486);
    }

    #[test]
    fn lut_clamps_and_centers() {
        let lut = sigmoid_lut_build(256, -8.0, 8.0).unwrap();
        let lo = lut.eval(Q10_17::encode(-100.0).unwrap()).decode();
        assert_eq!(lo, lut.eval(Q10_17::encode(-8.0).unwrap()).decode());
        assert!((lo - 0.000335).abs() < 2e-5, "{lo}");
        let mid = lut.eval(Q10_17::encode(0.0).unwrap()).decode();
        let step = crate::fnn::sigmoid(1.0 / 32.0) - crate::fnn::sigmoid(-1.0 / 32.0);
        assert!((mid - 0.5).abs() <= step);
        // Zero sits on a boundary and belongs to the lower bin.
        assert!(mid < 0.5);
        assert!(lut.eval(Q10_17::from_raw(1).unwrap()).decode() > 0.5);
        assert!(sigmoid_lut_build(1, -8.0, 8.0).is_err());
        assert!(sigmoid_lut_build(16, 1.0, 1.0).is_err());
    }

    #[test]
    fn lut_error_bound() {
        let lut = sigmoid_lut_build(256, -8.0, 8.0).unwrap();
        let mut worst = 0.0f64;
        for k in 0..1000 {
            let x = -8.0 + 16.0 * (k as f64 + 0.37) / 1000.0;
            let got = lut.eval(Q10_17::encode(x).unwrap()).decode();
            worst = worst.max((got - crate::fnn::sigmoid(x)).abs());
        }
        // Half a bin times the steepest slope of the sigmoid, plus one LSB.
        let bound = 16.0 / 256.0 / 2.0 * 0.25 + 1.0 / 131072.0;
        assert!(worst <= bound, "{worst}");
        assert!(worst > 0.005);
    }

    proptest! {
        #[test]
        fn roundtrip_within_one_lsb(x in 0.0f64..511.0) {
            let back = encode_q10_17(x).unwrap().decode();
            prop_assert!(back <= x && back > x - 1.0 / 131072.0);
        }

        #[test]
        fn roundtrip_exact_on_grid(raw in Q10_17::MIN.raw()..=Q10_17::MAX.raw()) {
            let x = QFormat::Q10_17.decode(raw);
            prop_assert_eq!(encode_q10_17(x).unwrap().raw(), raw);
            prop_assert_eq!(QFormat::Q10_17.from_hex(&QFormat::Q10_17.to_hex(raw)).unwrap(), raw);
        }

        #[test]
        fn product_truncation_bound(w in Q6_12::MIN.raw()..=Q6_12::MAX.raw(), x in Q10_17::MIN.raw()..=Q10_17::MAX.raw()) {
            let (w, x) = (Q6_12::from_raw(w).unwrap(), Q10_17::from_raw(x).unwrap());
            let (s, ovf) = slice_27(mul_dsp(w, x));
            let exact = w.decode() * x.decode();
            if !ovf {
                let err = exact - s.decode();
                prop_assert!((0.0..1.0 / 131072.0).contains(&err));
                prop_assert!(err <= 1.0 / 4096.0 + 1.0 / 131072.0);
                prop_assert_eq!(s.raw(), (exact * 131072.0).floor() as i64);
            } else {
                prop_assert!(exact.abs() >= 511.0);
            }
        }

        #[test]
        fn scale_shift_tracks_float_scaler(n in 1u32..40, mu in -1_000_000i64..1_000_000, frac in -1.0f64..=1.0) {
            let value = mu + (frac * (1i64 << n) as f64) as i64;
            let got = scale_shift(value, n, mu).unwrap().raw();
            let float = (value - mu) as f64 / 2f64.powi(n as i32 + 1) + 0.5;
            let reference = (float * 131072.0).floor() as i64;
            prop_assert!((got - reference).abs() <= 1);
        }

        #[test]
        fn lut_is_monotone(a in -(1i64 << 26)..(1i64 << 26), b in -(1i64 << 26)..(1i64 << 26)) {
            let lut = sigmoid_lut_build(256, -8.0, 8.0).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(lut.eval_raw(lo) <= lut.eval_raw(hi));
        }
    }
}

//! Shared utilities: deterministic text formatting for reals, CRC-32
//! checksums, and stable per-stage seed derivation.

use std::sync::OnceLock;

/// Format a real number with up to 9 significant digits, trimming
/// trailing zeros, switching to exponent notation outside `1e-4..1e9`.
/// Matches C's `printf("%.9g", x)` for finite inputs.
pub fn fmt_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }

    let mag = x.abs();
    // "d.ddddddddEe±x" with exactly one leading digit; Rust renormalizes
    // the mantissa when rounding carries over (9.99..9e5 -> 1.00000000e6).
    let sci = format!("{:.8e}", mag);
    let (mant, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent digits");
    let digits: Vec<u8> = mant.bytes().filter(|b| *b != b'.').collect();
    debug_assert_eq!(digits.len(), 9);
    let digits = String::from_utf8(digits).expect("ascii digits");

    let body = if (-4..9).contains(&exp) {
        if exp >= 0 {
            let split = exp as usize + 1;
            let int_part = &digits[..split];
            let frac = digits[split..].trim_end_matches('0');
            if frac.is_empty() {
                int_part.to_string()
            } else {
                format!("{int_part}.{frac}")
            }
        } else {
            let padded = format!("{}{}", "0".repeat((-exp - 1) as usize), digits);
            format!("0.{}", padded.trim_end_matches('0'))
        }
    } else {
        let frac = digits[1..].trim_end_matches('0');
        if frac.is_empty() {
            format!("{}e{:+03}", &digits[..1], exp)
        } else {
            format!("{}.{}e{:+03}", &digits[..1], frac, exp)
        }
    };
    if x < 0.0 {
        format!("-{body}")
    } else {
        body
    }
}

fn crc32_table() -> &'static [u32; 256] {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *slot = c;
        }
        table
    })
}

/// Streaming CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
#[derive(Debug, Clone)]
pub struct Crc32 {
    state: u32,
}

impl Crc32 {
    pub fn new() -> Self {
        Self { state: 0xFFFF_FFFF }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        let table = crc32_table();
        for &b in bytes {
            self.state = table[((self.state ^ b as u32) & 0xFF) as usize] ^ (self.state >> 8);
        }
    }

    pub fn finish(&self) -> u32 {
        self.state ^ 0xFFFF_FFFF
    }
}

impl Default for Crc32 {
    fn default() -> Self {
        Self::new()
    }
}

/// One-shot CRC-32 of a byte slice.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut c = Crc32::new();
    c.update(bytes);
    c.finish()
}

/// Derive a per-stage seed from a base seed and a stage name, so that
/// independent pipeline stages consume independent random streams.
pub fn derive_seed(base: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, then mixed with the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in stage.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_integers_print_without_point() {
        assert_eq!(fmt_g9(0.0), "0");
        assert_eq!(fmt_g9(-0.0), "0");
        assert_eq!(fmt_g9(1.0), "1");
        assert_eq!(fmt_g9(10.0), "10");
        assert_eq!(fmt_g9(-42.0), "-42");
        assert_eq!(fmt_g9(123456789.0), "123456789");
    }

    #[test]
    fn g9_trims_trailing_zeros() {
        assert_eq!(fmt_g9(0.5), "0.5");
        assert_eq!(fmt_g9(0.15), "0.15");
        assert_eq!(fmt_g9(0.30000000000000004), "0.3");
        assert_eq!(fmt_g9(2.25), "2.25");
        assert_eq!(fmt_g9(0.15000000000000002), "0.15");
    }

    #[test]
    fn g9_rounds_to_nine_significant_digits() {
        assert_eq!(fmt_g9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_g9(2.0 / 3.0), "0.666666667");
        assert_eq!(fmt_g9(1234.56789012), "1234.56789");
    }

    #[test]
    fn g9_switches_to_exponent_notation() {
        assert_eq!(fmt_g9(1e9), "1e+09");
        assert_eq!(fmt_g9(1.5e10), "1.5e+10");
        assert_eq!(fmt_g9(1e-4), "0.0001");
        assert_eq!(fmt_g9(9.9e-5), "9.9e-05");
        assert_eq!(fmt_g9(-3.2e-12), "-3.2e-12");
    }

    #[test]
    fn g9_mantissa_carry_renormalizes() {
        // Rounds up into the next decade.
        assert_eq!(fmt_g9(999999999.6), "1e+09");
    }

    #[test]
    fn crc32_check_vector() {
        // Standard check value for the IEEE polynomial.
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn crc32_streaming_matches_one_shot() {
        let data = b"the quick brown fox jumps over the lazy dog";
        let mut c = Crc32::new();
        c.update(&data[..10]);
        c.update(&data[10..]);
        assert_eq!(c.finish(), crc32(data));
    }

    #[test]
    fn derived_seeds_differ_by_stage() {
        let a = derive_seed(42, "downsample");
        let b = derive_seed(42, "folds");
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, "downsample"));
        assert_ne!(a, derive_seed(43, "downsample"));
    }
}

//! Correctly rounded conversion of integer ratios to `f64`.

/// `num / den` rounded to nearest, ties to even.
///
/// Panics if `den == 0`.
pub fn ratio_to_f64(num: u128, den: u128) -> f64 {
    assert!(den != 0, "ratio_to_f64: zero denominator");
    if num == 0 {
        return 0.0;
    }
    const KEEP: u32 = 55; // 53 significand bits plus two rounding bits

    let mut m = num / den;
    let mut rem = num % den;
    let mut exp: i32 = 0;
    let mut sticky = false;

    let bits = |x: u128| 128 - x.leading_zeros();
    if bits(m) > KEEP {
        let shift = bits(m) - KEEP;
        sticky = m & ((1u128 << shift) - 1) != 0;
        m >>= shift;
        exp += shift as i32;
    } else {
        while bits(m) < KEEP {
            // rem < den, so compare against den - rem instead of doubling.
            let bit = rem >= den - rem;
            rem = if bit { rem - (den - rem) } else { rem * 2 };
            m = (m << 1) | bit as u128;
            exp -= 1;
        }
    }
    sticky |= rem != 0;

    let low = m & 3;
    let mut mant = m >> 2;
    exp += 2;
    let round_up = low > 2 || (low == 2 && (sticky || mant & 1 == 1));
    if round_up {
        mant += 1;
    }
    mant as f64 * 2f64.powi(exp)
}

/// `num / den` for a signed numerator.
pub fn signed_ratio_to_f64(num: i128, den: u128) -> f64 {
    let magnitude = ratio_to_f64(num.unsigned_abs(), den);
    if num < 0 {
        -magnitude
    } else {
        magnitude
    }
}

//! Majority voting and single-error-correcting Hamming codes.

use std::fmt;

use crate::error::{Error, Result};

/// Bitwise majority of three copies of a word.
pub fn tmr_vote(a: u32, b: u32, c: u32) -> u32 {
    (a & b) | (a & c) | (b & c)
}

/// Smallest `r` with `r + d <= 2^r - 1`.
pub fn required_parity_bits(d: usize) -> usize {
    let mut r = 1;
    while r < usize::BITS as usize - 1 && r + d > (1usize << r) - 1 {
        r += 1;
    }
    r
}

/// 1-indexed codeword positions that carry data, in data order.
fn data_positions(d: usize) -> impl Iterator<Item = usize> {
    (1usize..).filter(|p| !p.is_power_of_two()).take(d)
}

/// Codeword position (1-indexed) of data bit `k` (0-indexed).
pub fn data_position(k: usize) -> usize {
    // Each power of two below the position shifts it by one.
    let mut p = k + 1;
    let mut r = 0;
    while (1usize << r) <= p {
        p += 1;
        r += 1;
    }
    p
}

/// A Hamming codeword with parity at positions 1, 2, 4, 8, ...
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HammingCodeword {
    data_bits: usize,
    /// `bits[i]` is codeword position `i + 1`.
    bits: Vec<bool>,
}

impl HammingCodeword {
    pub fn data_bits(&self) -> usize {
        self.data_bits
    }

    pub fn parity_bits(&self) -> usize {
        self.bits.len() - self.data_bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Bit at 1-indexed `position`.
    pub fn get(&self, position: usize) -> Option<bool> {
        position.checked_sub(1).and_then(|i| self.bits.get(i).copied())
    }

    /// Inverts the bit at 1-indexed `position`.
    pub fn flip(&mut self, position: usize) -> Result<()> {
        match position.checked_sub(1).and_then(|i| self.bits.get_mut(i)) {
            Some(b) => {
                *b = !*b;
                Ok(())
            }
            None => Err(Error::Shape(format!(
                "codeword position {position} outside 1..={}",
                self.bits.len()
            ))),
        }
    }

    /// XOR of the positions of all set bits; 0 for a valid codeword.
    pub fn syndrome(&self) -> usize {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .fold(0, |s, (i, _)| s ^ (i + 1))
    }

    /// Rebuilds a codeword from raw bits (position 1 first).
    pub fn from_bits(data_bits: usize, bits: Vec<bool>) -> Result<Self> {
        let expected = data_bits + required_parity_bits(data_bits);
        if data_bits == 0 || bits.len() != expected {
            return Err(Error::Shape(format!(
                "{data_bits} data bits need a {expected}-bit codeword, got {}",
                bits.len()
            )));
        }
        Ok(HammingCodeword { data_bits, bits })
    }
}

impl fmt::Display for HammingCodeword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.bits.iter().try_for_each(|b| f.write_str(if *b { "1" } else { "0" }))
    }
}

/// Encodes `data` (first bit goes to position 3, the first data slot).
pub fn hamming_encode(data: &[bool]) -> Result<HammingCodeword> {
    let d = data.len();
    if d == 0 {
        return Err(Error::Shape("cannot encode zero data bits".into()));
    }
    let r = required_parity_bits(d);
    let mut bits = vec![false; d + r];
    for (p, &b) in data_positions(d).zip(data) {
        bits[p - 1] = b;
    }
    let mut cw = HammingCodeword { data_bits: d, bits };
    let s = cw.syndrome();
    for k in 0..r {
        if s & (1 << k) != 0 {
            cw.bits[(1 << k) - 1] = true;
        }
    }
    Ok(cw)
}

/// Result of decoding one codeword.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub data: Vec<bool>,
    /// 1-indexed position that was corrected, if any.
    pub corrected: Option<usize>,
}

/// Corrects at most one flipped bit and extracts the data.
///
/// A syndrome pointing past the end of the codeword can only come from a
/// multi-bit error; the data is then returned as stored with no correction.
/// Double errors inside the codeword are miscorrected silently.
pub fn hamming_decode(codeword: &HammingCodeword) -> Decoded {
    let mut bits = codeword.bits.clone();
    let s = codeword.syndrome();
    let corrected = (s != 0 && s <= bits.len()).then(|| {
        bits[s - 1] = !bits[s - 1];
        s
    });
    let data = data_positions(codeword.data_bits).map(|p| bits[p - 1]).collect();
    Decoded { data, corrected }
}

/// Bits of `word`, least significant first.
pub fn word_to_bits(word: u32) -> Vec<bool> {
    (0..32).map(|i| word >> i & 1 == 1).collect()
}

/// Inverse of [`word_to_bits`].
pub fn bits_to_word(bits: &[bool]) -> u32 {
    bits.iter().take(32).enumerate().fold(0, |w, (i, b)| w | (*b as u32) << i)
}

/// Parses a string of `0`/`1` characters.
pub fn parse_bits(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::Shape(format!("`{c}` is not a bit"))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vote_examples() {
        assert_eq!(tmr_vote(0x3F80_0000, 0x3F80_0000, 0xBF80_0000), 0x3F80_0000);
        assert_eq!(tmr_vote(7, 7, 0), 7);
        assert_eq!(tmr_vote(0b1100, 0b1010, 0b0110), 0b1110);
    }

    proptest! {
        #[test]
        fn vote_matches_per_bit_majority(a: u32, b: u32, c: u32) {
            let mut naive = 0u32;
            for i in 0..32 {
                let ones = (a >> i & 1) + (b >> i & 1) + (c >> i & 1);
                if ones >= 2 {
                    naive |= 1 << i;
                }
            }
            prop_assert_eq!(tmr_vote(a, b, c), naive);
            prop_assert_eq!(tmr_vote(a, a, b), a);
            prop_assert_eq!(tmr_vote(b, a, a), a);
        }

        #[test]
        fn vote_masks_any_single_flip(w: u32, bit in 0u32..32, copy in 0usize..3) {
            let mut copies = [w; 3];
            copies[copy] ^= 1 << bit;
            prop_assert_eq!(tmr_vote(copies[0], copies[1], copies[2]), w);
        }

        #[test]
        fn sec_corrects_every_position(w: u32) {
            let data = word_to_bits(w);
            let cw = hamming_encode(&data).unwrap();
            prop_assert_eq!(cw.syndrome(), 0);
            prop_assert_eq!(hamming_decode(&cw), Decoded { data: data.clone(), corrected: None });
            for pos in 1..=cw.len() {
                let mut bad = cw.clone();
                bad.flip(pos).unwrap();
                let out = hamming_decode(&bad);
                prop_assert_eq!(out.corrected, Some(pos));
                prop_assert_eq!(bits_to_word(&out.data), w);
            }
        }
    }

    #[test]
    fn parity_bit_counts() {
        assert_eq!(required_parity_bits(1), 2);
        assert_eq!(required_parity_bits(4), 3);
        assert_eq!(required_parity_bits(32), 6);
        assert_eq!(required_parity_bits(100), 7);
        let mut prev = 0;
        for d in 1..5000 {
            let r = required_parity_bits(d);
            assert!(r + d < (1 << r) && r - 1 + d > (1 << (r - 1)) - 1);
            assert!(r >= prev);
            prev = r;
        }
        for k in 2..20 {
            assert_eq!(required_parity_bits((1 << k) - 1 - k), k);
        }
    }

    #[test]
    fn classic_seven_four() {
        let cw = hamming_encode(&parse_bits("1011").unwrap()).unwrap();
        assert_eq!(cw.to_string(), "0110011");
        assert_eq!(cw.parity_bits(), 3);
    }

    #[test]
    fn zero_data_zero_codeword() {
        for d in [1, 4, 11, 32, 100] {
            let cw = hamming_encode(&vec![false; d]).unwrap();
            assert!(cw.bits().iter().all(|b| !b));
        }
        assert!(hamming_encode(&[]).is_err());
    }

    #[test]
    fn parity_corruption_leaves_data() {
        let data = parse_bits("1101001").unwrap();
        let cw = hamming_encode(&data).unwrap();
        for k in 0..cw.parity_bits() {
            let mut bad = cw.clone();
            bad.flip(1 << k).unwrap();
            assert_eq!(hamming_decode(&bad), Decoded { data: data.clone(), corrected: Some(1 << k) });
        }
    }

    #[test]
    fn data_positions_skip_powers_of_two() {
        let listed: Vec<usize> = data_positions(10).collect();
        assert_eq!(listed, vec![3, 5, 6, 7, 9, 10, 11, 12, 13, 14]);
        for (k, p) in listed.iter().enumerate() {
            assert_eq!(data_position(k), *p);
        }
        assert_eq!(data_position(26), 33);
    }

    #[test]
    fn from_bits_checks_length() {
        assert!(HammingCodeword::from_bits(4, vec![false; 7]).is_ok());
        assert!(HammingCodeword::from_bits(4, vec![false; 8]).is_err());
        let mut cw = hamming_encode(&[true]).unwrap();
        assert!(cw.flip(0).is_err());
        assert!(cw.flip(4).is_err());
    }
}

//! Word-level protection codes: even parity and a (72,64) SEC-DED Hamming code.
//!
//! SEC-DED codeword layout (bit `p` of the `u128` holds codeword position `p`):
//!
//! | position                 | contents                                  |
//! |--------------------------|-------------------------------------------|
//! | 0                        | overall parity over positions 1..=71      |
//! | 1, 2, 4, 8, 16, 32, 64   | Hamming check bits c0..c6                 |
//! | remaining 64 of 3..=71   | data bits d0..d63, ascending              |
//!
//! Check bit `cj` covers every position whose index has bit `j` set, so the
//! syndrome of a single flipped position is that position's index.

use serde::{Deserialize, Serialize};

pub mod selftest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtectionTechnique {
    None,
    #[serde(alias = "parity-per-word")]
    Parity,
    #[serde(alias = "secded-72-64")]
    Secded,
}

impl ProtectionTechnique {
    pub const ALL: [ProtectionTechnique; 3] = [
        ProtectionTechnique::None,
        ProtectionTechnique::Parity,
        ProtectionTechnique::Secded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtectionTechnique::None => "none",
            ProtectionTechnique::Parity => "parity",
            ProtectionTechnique::Secded => "secded",
        }
    }
}

impl std::fmt::Display for ProtectionTechnique {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeResult {
    Clean(u64),
    /// `bit_index` is the repaired codeword position.
    Corrected { word: u64, bit_index: u8 },
    DetectedUncorrectable,
    /// Decoder returned data that differs from what was written. Only
    /// [`judge`] produces this, since a decoder cannot know it was fooled.
    Silent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectionOutcome {
    MaskedByHw,
    DetectedOnly,
    Undetected,
}

pub fn parity_encode(word: u64) -> (u64, bool) {
    (word, word.count_ones() & 1 == 1)
}

pub fn parity_check(word: u64, parity: bool) -> DecodeResult {
    if (word.count_ones() & 1 == 1) == parity {
        DecodeResult::Clean(word)
    } else {
        DecodeResult::DetectedUncorrectable
    }
}

pub const CODEWORD_BITS: u8 = 72;

/// 72-bit SEC-DED codeword; the top 56 bits of the `u128` are always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Codeword(pub u128);

impl Codeword {
    pub fn flip(self, position: u8) -> Codeword {
        debug_assert!(position < CODEWORD_BITS);
        Codeword(self.0 ^ (1u128 << position))
    }
}

impl std::ops::BitXor for Codeword {
    type Output = Codeword;
    fn bitxor(self, rhs: Codeword) -> Codeword {
        Codeword(self.0 ^ rhs.0)
    }
}

/// Codeword position of each data bit.
pub const DATA_POSITIONS: [u8; 64] = data_positions();

const fn data_positions() -> [u8; 64] {
    let mut out = [0u8; 64];
    let mut pos = 1u8;
    let mut i = 0;
    while i < 64 {
        if !pos.is_power_of_two() {
            out[i] = pos;
            i += 1;
        }
        pos += 1;
    }
    out
}

fn scatter(word: u64) -> u128 {
    let mut cw = 0u128;
    let mut w = word;
    while w != 0 {
        let i = w.trailing_zeros() as usize;
        cw |= 1u128 << DATA_POSITIONS[i];
        w &= w - 1;
    }
    cw
}

fn gather(cw: u128) -> u64 {
    DATA_POSITIONS
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &p)| acc | ((((cw >> p) & 1) as u64) << i))
}

/// XOR of the indices of all set positions in 1..=71.
fn syndrome(cw: u128) -> u8 {
    let mut bits = cw & !1u128;
    let mut s = 0u8;
    while bits != 0 {
        s ^= bits.trailing_zeros() as u8;
        bits &= bits - 1;
    }
    s
}

pub fn secded_encode(word: u64) -> Codeword {
    let mut cw = scatter(word);
    let s = syndrome(cw);
    for j in 0..7 {
        if s & (1 << j) != 0 {
            cw |= 1u128 << (1u8 << j);
        }
    }
    if cw.count_ones() & 1 == 1 {
        cw |= 1;
    }
    Codeword(cw)
}

pub fn secded_decode(codeword: Codeword) -> DecodeResult {
    let cw = codeword.0 & ((1u128 << CODEWORD_BITS) - 1);
    let s = syndrome(cw);
    let odd = cw.count_ones() & 1 == 1;
    match (s, odd) {
        (0, false) => DecodeResult::Clean(gather(cw)),
        (pos, true) if pos < CODEWORD_BITS => DecodeResult::Corrected {
            word: gather(cw ^ (1u128 << pos)),
            bit_index: pos,
        },
        _ => DecodeResult::DetectedUncorrectable,
    }
}

/// Compares a decoder's verdict against ground truth, turning wrong data into `Silent`.
pub fn judge(original: u64, result: DecodeResult) -> DecodeResult {
    match result {
        DecodeResult::Clean(w) | DecodeResult::Corrected { word: w, .. } if w != original => {
            DecodeResult::Silent
        }
        other => other,
    }
}

/// Models encode-at-write / decode-at-read for a word corrupted in DRAM.
/// Only data bits are corrupted here; check bits are assumed intact.
pub fn apply_protection(
    technique: ProtectionTechnique,
    pre_error_word: u64,
    post_error_word: u64,
) -> ProtectionOutcome {
    if pre_error_word == post_error_word {
        return ProtectionOutcome::MaskedByHw;
    }
    match technique {
        ProtectionTechnique::None => ProtectionOutcome::Undetected,
        ProtectionTechnique::Parity => {
            let (_, p) = parity_encode(pre_error_word);
            match judge(pre_error_word, parity_check(post_error_word, p)) {
                DecodeResult::DetectedUncorrectable => ProtectionOutcome::DetectedOnly,
                _ => ProtectionOutcome::Undetected,
            }
        }
        ProtectionTechnique::Secded => {
            let flips = scatter(pre_error_word ^ post_error_word);
            let stored = Codeword(secded_encode(pre_error_word).0 ^ flips);
            match judge(pre_error_word, secded_decode(stored)) {
                DecodeResult::Clean(_) | DecodeResult::Corrected { .. } => {
                    ProtectionOutcome::MaskedByHw
                }
                DecodeResult::DetectedUncorrectable => ProtectionOutcome::DetectedOnly,
                DecodeResult::Silent => ProtectionOutcome::Undetected,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn words(n: usize, seed: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = vec![0, u64::MAX, 1, 1 << 63, 0xAAAA_AAAA_AAAA_AAAA];
        v.extend((0..n).map(|_| rng.random::<u64>()));
        v
    }

    #[test]
    fn layout_table() {
        assert_eq!(DATA_POSITIONS[0], 3);
        assert_eq!(DATA_POSITIONS[1], 5);
        assert_eq!(DATA_POSITIONS[63], 71);
        assert!(DATA_POSITIONS.iter().all(|p| !p.is_power_of_two()));
    }

    #[test]
    fn zero_word() {
        assert_eq!(parity_encode(0), (0, false));
        assert_eq!(parity_check(0, false), DecodeResult::Clean(0));
        assert_eq!(secded_encode(0), Codeword(0));
        assert_eq!(secded_decode(Codeword(0)), DecodeResult::Clean(0));
    }

    #[test]
    fn parity_detects_every_single_flip() {
        for w in words(1000, 1) {
            let (w, p) = parity_encode(w);
            for bit in 0..64 {
                assert_eq!(parity_check(w ^ (1 << bit), p), DecodeResult::DetectedUncorrectable);
            }
            // the 65th position: the parity bit itself
            assert_eq!(parity_check(w, !p), DecodeResult::DetectedUncorrectable);
        }
    }

    #[test]
    fn parity_is_blind_to_double_flips() {
        for w in words(100, 2) {
            let (w, p) = parity_encode(w);
            for a in 0..64 {
                for b in (a + 1)..64 {
                    let bad = w ^ (1 << a) ^ (1 << b);
                    assert_eq!(parity_check(bad, p), DecodeResult::Clean(bad));
                    assert_eq!(judge(w, parity_check(bad, p)), DecodeResult::Silent);
                }
            }
        }
    }

    #[test]
    fn parity_detects_exactly_odd_weights_up_to_three() {
        for w in words(20, 3) {
            let (w, p) = parity_encode(w);
            for a in 0..64 {
                for b in (a + 1)..64 {
                    for c in (b + 1)..64 {
                        let bad = w ^ (1 << a) ^ (1 << b) ^ (1 << c);
                        assert_eq!(parity_check(bad, p), DecodeResult::DetectedUncorrectable);
                    }
                }
            }
        }
    }

    #[test]
    fn secded_corrects_every_single_flip() {
        for w in words(1000, 4) {
            let cw = secded_encode(w);
            for pos in 0..CODEWORD_BITS {
                match secded_decode(cw.flip(pos)) {
                    DecodeResult::Corrected { word, bit_index } => {
                        assert_eq!(word, w);
                        assert_eq!(bit_index, pos);
                    }
                    other => panic!("word {w:#x} pos {pos}: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn secded_detects_every_double_flip() {
        for w in words(100, 5) {
            let cw = secded_encode(w);
            let mut pairs = 0;
            for a in 0..CODEWORD_BITS {
                for b in (a + 1)..CODEWORD_BITS {
                    assert_eq!(
                        secded_decode(cw.flip(a).flip(b)),
                        DecodeResult::DetectedUncorrectable
                    );
                    pairs += 1;
                }
            }
            assert_eq!(pairs, 2556);
        }
    }

    #[test]
    fn triple_flips_can_be_silent() {
        let w = 0x1234_5678_9abc_def0;
        let cw = secded_encode(w);
        let silent = (0..CODEWORD_BITS)
            .flat_map(|a| ((a + 1)..CODEWORD_BITS).map(move |b| (a, b)))
            .flat_map(|(a, b)| ((b + 1)..CODEWORD_BITS).map(move |c| (a, b, c)))
            .filter(|&(a, b, c)| judge(w, secded_decode(cw.flip(a).flip(b).flip(c))) == DecodeResult::Silent)
            .count();
        assert!(silent > 0);
    }

    #[test]
    fn apply_protection_examples() {
        let w = 0xdead_beef_0bad_f00d;
        let one = w ^ (1 << 17);
        let two = one ^ (1 << 40);
        assert_eq!(apply_protection(ProtectionTechnique::Secded, w, one), ProtectionOutcome::MaskedByHw);
        assert_eq!(apply_protection(ProtectionTechnique::Parity, w, one), ProtectionOutcome::DetectedOnly);
        assert_eq!(apply_protection(ProtectionTechnique::None, w, one), ProtectionOutcome::Undetected);
        assert_eq!(apply_protection(ProtectionTechnique::Secded, w, two), ProtectionOutcome::DetectedOnly);
        assert_eq!(apply_protection(ProtectionTechnique::Parity, w, two), ProtectionOutcome::Undetected);
        assert_eq!(apply_protection(ProtectionTechnique::None, w, w), ProtectionOutcome::MaskedByHw);
    }

    #[test]
    fn round_trip_many_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1_000_000 {
            let w: u64 = rng.random();
            assert_eq!(secded_decode(secded_encode(w)), DecodeResult::Clean(w));
        }
        for w in [0, u64::MAX, 1, 1 << 63, 0x8000_0000, 0xffff_ffff] {
            assert_eq!(secded_decode(secded_encode(w)), DecodeResult::Clean(w));
        }
    }

    #[test]
    fn technique_names_parse() {
        for t in ProtectionTechnique::ALL {
            let json = format!("\"{t}\"");
            assert_eq!(serde_json::from_str::<ProtectionTechnique>(&json).unwrap(), t);
        }
        assert_eq!(
            serde_json::from_str::<ProtectionTechnique>("\"secded-72-64\"").unwrap(),
            ProtectionTechnique::Secded
        );
    }

    proptest! {
        #[test]
        fn code_is_linear(a in any::<u64>(), b in any::<u64>()) {
            prop_assert_eq!(secded_encode(a ^ b), secded_encode(a) ^ secded_encode(b));
        }

        #[test]
        fn encode_decode_identity(w in any::<u64>()) {
            prop_assert_eq!(secded_decode(secded_encode(w)), DecodeResult::Clean(w));
            let cw = secded_encode(w);
            prop_assert!(cw.0 >> CODEWORD_BITS == 0);
        }
    }
}

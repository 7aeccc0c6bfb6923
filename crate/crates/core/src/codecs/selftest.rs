//! Exhaustive conformance suites for the word codecs.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    judge, parity_check, parity_encode, secded_decode, secded_encode, Codeword, DecodeResult,
    CODEWORD_BITS,
};

/// A SEC-DED implementation under test.
pub trait SecdedCodec {
    fn name(&self) -> &str;
    fn encode(&self, word: u64) -> Codeword;
    fn decode(&self, codeword: Codeword) -> DecodeResult;
}

pub struct Hamming7264;

impl SecdedCodec for Hamming7264 {
    fn name(&self) -> &str {
        "hamming-72-64"
    }
    fn encode(&self, word: u64) -> Codeword {
        secded_encode(word)
    }
    fn decode(&self, codeword: Codeword) -> DecodeResult {
        secded_decode(codeword)
    }
}

/// Deliberately broken decoder: repairs the neighbouring position of the one
/// the syndrome names. Exists so the self-test can prove it catches bugs.
pub struct MiscorrectingDecoder;

impl SecdedCodec for MiscorrectingDecoder {
    fn name(&self) -> &str {
        "miscorrecting-fixture"
    }
    fn encode(&self, word: u64) -> Codeword {
        secded_encode(word)
    }
    fn decode(&self, codeword: Codeword) -> DecodeResult {
        match secded_decode(codeword) {
            DecodeResult::Corrected { bit_index, .. } => {
                let wrong = (bit_index ^ 1).min(CODEWORD_BITS - 1);
                let repaired = codeword.flip(bit_index).flip(wrong);
                match secded_decode(repaired) {
                    DecodeResult::Corrected { word, .. } | DecodeResult::Clean(word) => {
                        DecodeResult::Corrected { word: word ^ 1, bit_index: wrong }
                    }
                    other => other,
                }
            }
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelfTestConfig {
    pub single_flip_words: usize,
    pub double_flip_words: usize,
    pub seed: u64,
}

impl Default for SelfTestConfig {
    fn default() -> Self {
        SelfTestConfig {
            single_flip_words: 1000,
            double_flip_words: 100,
            seed: 0x5ecded,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: u64,
    pub failures: u64,
    pub first_failure: Option<String>,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        SuiteResult {
            name,
            cases: 0,
            failures: 0,
            first_failure: None,
        }
    }

    fn check(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(describe());
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfTestReport {
    pub codec: String,
    pub suites: Vec<SuiteResult>,
    pub elapsed_ms: u128,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.failures == 0)
    }

    pub fn render(&self) -> String {
        let mut out = format!("codec self-test ({})\n", self.codec);
        for s in &self.suites {
            let _ = writeln!(
                out,
                "  {:<4} {:<34} {:>9} cases {:>6} failures",
                if s.failures == 0 { "PASS" } else { "FAIL" },
                s.name,
                s.cases,
                s.failures
            );
            if let Some(f) = &s.first_failure {
                let _ = writeln!(out, "       first failure: {f}");
            }
        }
        let _ = writeln!(
            out,
            "  {} in {} ms",
            if self.passed() { "conformant" } else { "NOT conformant" },
            self.elapsed_ms
        );
        out
    }
}

fn sample_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut v = vec![0, u64::MAX];
    v.extend((0..n.saturating_sub(2)).map(|_| rng.random::<u64>()));
    v.truncate(n.max(2));
    v
}

pub fn run_selftest(codec: &dyn SecdedCodec, cfg: &SelfTestConfig) -> SelfTestReport {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let singles = sample_words(cfg.single_flip_words, &mut rng);
    let doubles = sample_words(cfg.double_flip_words, &mut rng);

    let mut round = SuiteResult::new("secded round trip");
    let mut single = SuiteResult::new("secded single flips corrected");
    for &w in &singles {
        let cw = codec.encode(w);
        round.check(codec.decode(cw) == DecodeResult::Clean(w), || {
            format!("word {w:#018x} not clean")
        });
        for pos in 0..CODEWORD_BITS {
            let got = codec.decode(cw.flip(pos));
            single.check(
                matches!(got, DecodeResult::Corrected { word, bit_index } if word == w && bit_index == pos),
                || format!("word {w:#018x} flip {pos}: {got:?}"),
            );
        }
    }

    let mut double = SuiteResult::new("secded double flips detected");
    for &w in &doubles {
        let cw = codec.encode(w);
        for a in 0..CODEWORD_BITS {
            for b in (a + 1)..CODEWORD_BITS {
                let got = judge(w, codec.decode(cw.flip(a).flip(b)));
                double.check(got == DecodeResult::DetectedUncorrectable, || {
                    format!("word {w:#018x} flips {a},{b}: {got:?}")
                });
            }
        }
    }

    let mut linear = SuiteResult::new("secded linearity");
    for pair in singles.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        linear.check(codec.encode(a ^ b) == codec.encode(a) ^ codec.encode(b), || {
            format!("encode({a:#x} ^ {b:#x})")
        });
    }

    let mut parity_single = SuiteResult::new("parity single flips detected");
    let mut parity_double = SuiteResult::new("parity double flips undetected");
    for &w in &doubles {
        let (w, p) = parity_encode(w);
        for bit in 0..64 {
            parity_single.check(
                parity_check(w ^ (1 << bit), p) == DecodeResult::DetectedUncorrectable,
                || format!("word {w:#018x} bit {bit}"),
            );
            for b2 in (bit + 1)..64 {
                let bad = w ^ (1 << bit) ^ (1 << b2);
                parity_double.check(parity_check(bad, p) == DecodeResult::Clean(bad), || {
                    format!("word {w:#018x} bits {bit},{b2}")
                });
            }
        }
        parity_single.check(parity_check(w, !p) == DecodeResult::DetectedUncorrectable, || {
            format!("word {w:#018x} parity bit")
        });
    }

    SelfTestReport {
        codec: codec.name().to_string(),
        suites: vec![round, single, double, linear, parity_single, parity_double],
        elapsed_ms: started.elapsed().as_millis(),
    }
}

use anyhow::Result;
use clap::Subcommand;
use hrmlab_core::codecs::selftest::{run_selftest, Hamming7264, MiscorrectingDecoder, SecdedCodec, SelfTestConfig};

#[derive(Subcommand)]
pub enum CodecCmd {
    /// Exhaustive single- and double-flip suites; exits 1 on any failure.
    Selftest(SelftestArgs),
}

#[derive(clap::Args)]
pub struct SelftestArgs {
    /// Words for the exhaustive single-flip suite.
    #[arg(long, default_value_t = 1000)]
    words: usize,
    /// Words for the exhaustive double-flip suite.
    #[arg(long, default_value_t = 100)]
    double_words: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: bool,
    /// Test a decoder with a planted bug instead of the real one.
    #[arg(long, hide = true)]
    buggy_decoder: bool,
}

pub fn run(cmd: CodecCmd) -> Result<u8> {
    let CodecCmd::Selftest(a) = cmd;
    let cfg = SelfTestConfig {
        single_flip_words: a.words,
        double_flip_words: a.double_words,
        seed: a.seed.unwrap_or(SelfTestConfig::default().seed),
    };
    let codec: &dyn SecdedCodec = if a.buggy_decoder { &MiscorrectingDecoder } else { &Hamming7264 };
    let report = run_selftest(codec, &cfg);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.render());
    }
    Ok(if report.passed() { 0 } else { 1 })
}

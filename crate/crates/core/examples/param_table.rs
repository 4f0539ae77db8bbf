//! Parameter counts for every mode and input representation.
//!
//! ```bash
//! cargo run --example param_table
//! cargo run --example param_table -- 50 40 32
//! ```
//! Optional positional arguments: number of programs, character dictionary
//! size, word-vector dimension.

use session_intent::cli::{cmd_params, write_params_table};
use session_intent::models::ModelConfig;

fn main() -> anyhow::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let mut cfg = ModelConfig::default();
    if let Some(&n) = args.first() {
        cfg.num_programs = n;
    }
    if let Some(&c) = args.get(1) {
        cfg.char_dict_size = c;
    }
    if let Some(&w) = args.get(2) {
        cfg.word_dim = w;
    }
    // building each model checks the closed form against the real tensors
    let rows = cmd_params(&cfg, true)?;
    println!(
        "|programs| = {}, char dict = {}, word dim = {}, lstm = {}, fc = {}",
        cfg.num_programs, cfg.char_dict_size, cfg.word_dim, cfg.lstm_size, cfg.fc_hidden
    );
    write_params_table(std::io::stdout().lock(), &rows)?;
    Ok(())
}

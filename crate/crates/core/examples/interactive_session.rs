//! Query-by-query prediction inside one session, as a voice remote would see it.
//! Feeds a scripted session through the read-eval loop; pass `-` to type
//! queries on stdin instead.
//!
//! ```bash
//! cargo run --release --example interactive_session
//! ```

use std::io::Cursor;

use session_intent::checkpoint;
use session_intent::cli::{cmd_gen, cmd_prepare, cmd_train, run_interactive, Predictor};
use session_intent::config::TrainSettings;
use session_intent::dataset::load_prepared;
use session_intent::models::ContextMode;
use session_intent::pipeline::{PrepareParams, SplitName};
use session_intent::synthgen::GenConfig;

fn main() -> anyhow::Result<()> {
    let work = tempfile::tempdir()?;
    let (raw, data, ck) = (work.path().join("raw"), work.path().join("data"), work.path().join("ck"));
    cmd_gen(
        &GenConfig {
            n_programs: 10,
            n_devices: 30,
            n_sessions: 1_500,
            ambiguity_rate: 0.4,
            seed: 4,
            ..GenConfig::default()
        },
        &raw,
    )?;
    cmd_prepare(
        &raw,
        &data,
        &PrepareParams {
            min_sessions: 20,
            ..PrepareParams::default()
        },
    )?;
    let mut settings = TrainSettings::default();
    settings.model.mode = ContextMode::ContextFull;
    settings.model.lstm_size = 24;
    settings.model.fc_hidden = 24;
    settings.model.word_dim = 16;
    settings.train.lr0 = 1e-2;
    settings.train.max_epochs = 10;
    cmd_train(&data, &settings, None, &ck)?;

    let predictor = Predictor::new(checkpoint::load(&ck)?, 3)?;
    if std::env::args().nth(1).as_deref() == Some("-") {
        return Ok(run_interactive(predictor, std::io::stdin().lock(), std::io::stdout().lock())?);
    }
    // replay the longest multi-query test session, then a reset and its last query alone
    let prepared = load_prepared(&data)?;
    let session = prepared
        .split(SplitName::MultiTest)
        .into_iter()
        .max_by_key(|s| s.queries.len())
        .ok_or_else(|| anyhow::anyhow!("no multi-query test session"))?;
    println!("true program: {}", session.label);
    let mut script: Vec<&str> = session.texts();
    let last = *script.last().expect("nonempty session");
    script.extend(["reset", last]);
    run_interactive(predictor, Cursor::new(script.join("\n")), std::io::stdout().lock())?;
    Ok(())
}

//! Generate, prepare, train a basic model and evaluate it on the test splits.
//!
//! ```bash
//! cargo run --release --example train_and_evaluate
//! ```

use session_intent::cli::{cmd_eval, cmd_gen, cmd_prepare, cmd_train};
use session_intent::config::TrainSettings;
use session_intent::eval::DEFAULT_THRESHOLDS;
use session_intent::models::ContextMode;
use session_intent::pipeline::PrepareParams;
use session_intent::synthgen::GenConfig;

fn main() -> anyhow::Result<()> {
    let work = tempfile::tempdir()?;
    let (raw, data, ck) = (work.path().join("raw"), work.path().join("data"), work.path().join("ck"));

    cmd_gen(
        &GenConfig {
            n_programs: 12,
            n_devices: 30,
            n_sessions: 1_500,
            embedding_dim: 16,
            seed: 5,
            ..GenConfig::default()
        },
        &raw,
    )?;
    let prep = cmd_prepare(
        &raw,
        &data,
        &PrepareParams {
            min_sessions: 20,
            ..PrepareParams::default()
        },
    )?;
    println!("{} sessions over {} programs", prep.in_vocab, prep.programs);

    let mut settings = TrainSettings::default();
    settings.model.mode = ContextMode::Basic;
    settings.model.lstm_size = 24;
    settings.model.fc_hidden = 24;
    settings.train.lr0 = 1e-2;
    settings.train.max_epochs = 8;
    let outcome = cmd_train(&data, &settings, None, &ck)?;
    for e in &outcome.report.epochs {
        println!("epoch {:>2}  dev loss {:.4}  dev P@1 {:.4}", e.epoch, e.dev_loss, e.dev_p1);
    }
    println!("selected epoch {}", outcome.report.best_epoch);

    for split in ["single_test", "multi_test"] {
        let r = cmd_eval(&data, split, Some(&ck), None, &DEFAULT_THRESHOLDS, None)?;
        println!("\n{split}");
        r.write_text(std::io::stdout().lock())?;
    }
    Ok(())
}

//! Basic vs constrained context model on sessions whose last query is
//! ambiguous, with a paired significance test.
//!
//! ```bash
//! cargo run --release --example context_vs_basic
//! ```

use std::collections::BTreeSet;

use session_intent::baselines::shared_title_programs;
use session_intent::checkpoint;
use session_intent::cli::{cmd_gen, cmd_prepare, cmd_train, predict_split};
use session_intent::config::TrainSettings;
use session_intent::dataset::load_prepared;
use session_intent::eval::{per_item_scores, randomization_test, ItemMetric, SessionPrediction};
use session_intent::models::ContextMode;
use session_intent::pipeline::PrepareParams;
use session_intent::synthgen::GenConfig;

fn final_p1(preds: &[SessionPrediction]) -> f64 {
    let hits = preds.iter().filter(|p| p.correct_at(p.len() - 1)).count();
    hits as f64 / preds.len().max(1) as f64
}

fn main() -> anyhow::Result<()> {
    let work = tempfile::tempdir()?;
    let (raw, data) = (work.path().join("raw"), work.path().join("data"));
    cmd_gen(
        &GenConfig {
            n_programs: 12,
            n_devices: 40,
            n_sessions: 2_500,
            ambiguity_rate: 0.5,
            embedding_dim: 16,
            seed: 9,
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
    let prepared = load_prepared(&data)?;
    let shared = shared_title_programs(&prepared.catalog);
    let ambiguous: BTreeSet<usize> = shared.iter().filter_map(|p| prepared.vocab.index_of(p)).collect();

    let mut settings = TrainSettings::default();
    settings.model.lstm_size = 24;
    settings.model.fc_hidden = 24;
    settings.train.lr0 = 1e-2;
    settings.train.max_epochs = 12;
    settings.train.pretrain_epochs = 6;

    let mut runs = Vec::new();
    for mode in [ContextMode::Basic, ContextMode::ContextConstrained] {
        settings.model.mode = mode;
        let dir = work.path().join(mode.as_str());
        let t = cmd_train(&data, &settings, None, &dir)?;
        println!("{mode}: mean epoch time {:.2}s", t.report.mean_epoch_seconds());
        let preds = predict_split(&checkpoint::load(&dir)?, &prepared, "multi_test")?;
        runs.push((mode, preds));
    }

    println!("\nfinal-query P@1 on multi-query test sessions");
    for (mode, preds) in &runs {
        let amb: Vec<SessionPrediction> = preds.iter().filter(|p| ambiguous.contains(&p.label)).cloned().collect();
        println!("  {mode:<20} all {:.4}  shared-title labels {:.4}", final_p1(preds), final_p1(&amb));
    }
    let a = per_item_scores(&runs[1].1, ItemMetric::P1);
    let b = per_item_scores(&runs[0].1, ItemMetric::P1);
    println!("paired randomization test on per-query P@1: p = {:.5}", randomization_test(&a, &b, 20_000, 1)?);
    Ok(())
}

//! Save and reload a trained model; predictions survive bit for bit.

use session_intent::checkpoint::{self, MANIFEST_FILE, TENSORS_FILE};
use session_intent::dataset::{build_encoder, encode_sessions};
use session_intent::encoding::Representation;
use session_intent::models::{ContextMode, ModelConfig};
use session_intent::pipeline::{prepare, records, PrepareParams, SplitName};
use session_intent::synthgen::{generate_catalog, generate_sessions, GenConfig};
use session_intent::training::{train_model, TrainConfig};

fn main() -> anyhow::Result<()> {
    let gen = GenConfig {
        n_programs: 8,
        n_devices: 20,
        n_sessions: 800,
        seed: 6,
        ..GenConfig::default()
    };
    let logs = generate_sessions(&generate_catalog(&gen)?, &gen)?;
    let prepared = prepare(
        &logs.queries,
        &logs.watches,
        &PrepareParams {
            min_sessions: 10,
            ..PrepareParams::default()
        },
    )?;
    let recs = records(&prepared.splits);
    let split = |n: SplitName| recs.iter().filter(|r| r.split == n).collect::<Vec<_>>();
    let train_recs = split(SplitName::Train);
    let texts: Vec<&str> = train_recs.iter().flat_map(|r| r.texts()).collect();
    let encoder = build_encoder(Representation::Char, &texts, None, 0, 17)?;
    let (train, _) = encode_sessions(&encoder, &train_recs, &prepared.vocab)?;
    let mut dev_recs = split(SplitName::SingleDev);
    dev_recs.extend(split(SplitName::MultiDev));
    let (dev, _) = encode_sessions(&encoder, &dev_recs, &prepared.vocab)?;

    let config = ModelConfig {
        representation: Representation::Char,
        mode: ContextMode::ContextFull,
        lstm_size: 16,
        fc_hidden: 16,
        num_programs: prepared.vocab.len(),
        char_dict_size: encoder.char_dim().unwrap_or(0),
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        lr0: 1e-2,
        max_epochs: 4,
        ..TrainConfig::default()
    };
    let (model, report) = train_model(&train, &dev, &config, &tc)?;

    let dir = tempfile::tempdir()?;
    checkpoint::save(dir.path(), &model, &encoder, &prepared.vocab, None)?;
    for f in [MANIFEST_FILE, TENSORS_FILE] {
        println!("{f}: {} bytes", std::fs::metadata(dir.path().join(f))?.len());
    }
    let ck = checkpoint::load(dir.path())?;
    let (dev2, _) = encode_sessions(&ck.encoder, &dev_recs, &ck.vocab)?;
    let (_, p1) = session_intent::training::evaluate_loss_p1(&ck.model, &dev2)?;
    println!("dev P@1 at selection {:.6}, after reload {:.6}", report.selected_dev_p1, p1);

    let mut identical = true;
    for (a, b) in dev.iter().zip(&dev2) {
        let x = model.forward_session(&a.queries)?;
        let y = ck.model.forward_session(&b.queries)?;
        identical &= x.iter().zip(&y).all(|(u, v)| u.probs() == v.probs());
    }
    println!("score vectors identical after reload: {identical}");
    Ok(())
}

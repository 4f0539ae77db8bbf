use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path;
use std::process::Command;

use session_intent::checkpoint;
use session_intent::cli::{cmd_eval, cmd_gen, cmd_predict_batch, cmd_prepare, cmd_train, PrefixOutput, Predictor};
use session_intent::config::{train_settings, KvConfig, TrainSettings};
use session_intent::dataset::load_prepared;
use session_intent::eval::DEFAULT_THRESHOLDS;
use session_intent::models::ContextMode;
use session_intent::pipeline::{prepare, read_jsonl, PrepareParams, SessionRecord};
use session_intent::synthgen::{generate_catalog, generate_sessions, GenConfig, NoiseModel, TruthRecord};

fn small_gen(seed: u64) -> GenConfig {
    GenConfig {
        n_programs: 10,
        n_devices: 25,
        n_sessions: 800,
        embedding_dim: 8,
        seed,
        ..GenConfig::default()
    }
}

fn params() -> PrepareParams {
    PrepareParams {
        min_sessions: 20,
        ..PrepareParams::default()
    }
}

fn small_settings(mode: ContextMode) -> TrainSettings {
    let mut s = TrainSettings::default();
    s.model.mode = mode;
    s.model.lstm_size = 10;
    s.model.fc_hidden = 8;
    s.train.lr0 = 1e-2;
    s.train.max_epochs = 3;
    s.train.pretrain_epochs = 2;
    s.train.patience_epochs = 1;
    s
}

fn prepared_dir(root: &Path, seed: u64) -> std::path::PathBuf {
    let (raw, data) = (root.join("raw"), root.join("data"));
    cmd_gen(&small_gen(seed), &raw).unwrap();
    cmd_prepare(&raw, &data, &params()).unwrap();
    data
}

#[test]
fn noiseless_logs_recover_generated_sessions_and_labels() {
    let cfg = GenConfig {
        noise: NoiseModel::noiseless(),
        ..small_gen(11)
    };
    let logs = generate_sessions(&generate_catalog(&cfg).unwrap(), &cfg).unwrap();
    let prepared = prepare(
        &logs.queries,
        &logs.watches,
        &PrepareParams {
            min_sessions: 1,
            ..PrepareParams::default()
        },
    )
    .unwrap();
    let truth: HashMap<&str, &str> = logs
        .truth
        .iter()
        .map(|t| (t.session_id.as_str(), t.true_program.as_str()))
        .collect();
    let lengths: HashMap<&str, usize> = logs.sessions.iter().map(|(id, n)| (id.as_str(), *n)).collect();
    let mut n = 0;
    for (_, s) in prepared.splits.iter() {
        assert_eq!(truth[s.session.id.as_str()], s.label, "{}", s.session.id);
        assert_eq!(lengths[s.session.id.as_str()], s.session.len(), "{}", s.session.id);
        n += 1;
    }
    // every generated session is labeled and program-related
    assert_eq!(prepared.report.program_related, logs.sessions.len());
    assert_eq!(n, prepared.report.in_vocab);
}

#[test]
fn prepared_files_match_truth() {
    let root = tempfile::tempdir().unwrap();
    let data = prepared_dir(root.path(), 2);
    let truth: Vec<TruthRecord> = read_jsonl(root.path().join("raw/truth.jsonl")).unwrap();
    let truth: HashMap<String, String> = truth.into_iter().map(|t| (t.session_id, t.true_program)).collect();
    let sessions: Vec<SessionRecord> = read_jsonl(data.join("sessions.jsonl")).unwrap();
    assert!(!sessions.is_empty());
    let agree = sessions.iter().filter(|s| truth.get(&s.session_id) == Some(&s.label)).count();
    assert_eq!(agree, sessions.len());
}

#[test]
fn eval_on_dev_reproduces_selection_metric() {
    let root = tempfile::tempdir().unwrap();
    let data = prepared_dir(root.path(), 4);
    for mode in [ContextMode::Basic, ContextMode::ContextConstrained] {
        let ck = root.path().join(mode.as_str());
        let out = cmd_train(&data, &small_settings(mode), None, &ck).unwrap();
        let report = cmd_eval(&data, "dev", Some(&ck), None, &DEFAULT_THRESHOLDS, None).unwrap();
        assert_eq!(report.p_at_1, out.report.selected_dev_p1, "{mode}");
        assert!(ck.join("train_report.tsv").exists());
    }
}

#[test]
fn constrained_from_pretrained_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    let data = prepared_dir(root.path(), 5);
    let basic = root.path().join("basic");
    cmd_train(&data, &small_settings(ContextMode::Basic), None, &basic).unwrap();
    let con = root.path().join("con");
    let out = cmd_train(&data, &small_settings(ContextMode::ContextConstrained), Some(&basic), &con).unwrap();
    let src = checkpoint::load(&basic).unwrap();
    for p in src.model.params.iter().filter(|p| p.name.starts_with("embed_")) {
        let id = out.model.params.id(&p.name).unwrap();
        assert_eq!(out.model.params.value(id), &p.value, "{}", p.name);
    }
    // only basic checkpoints can seed the embedding
    let err = cmd_train(&data, &small_settings(ContextMode::ContextConstrained), Some(&con), &root.path().join("x"));
    assert!(err.is_err());
    let err = cmd_train(&data, &small_settings(ContextMode::ContextFull), Some(&basic), &root.path().join("y"));
    assert!(err.is_err());
}

#[test]
fn predictor_matches_batch_prediction_and_resets() {
    let root = tempfile::tempdir().unwrap();
    let data = prepared_dir(root.path(), 6);
    let ck_dir = root.path().join("ck");
    cmd_train(&data, &small_settings(ContextMode::ContextFull), None, &ck_dir).unwrap();
    let ck = checkpoint::load(&ck_dir).unwrap();
    let k = 3;

    let prepared = load_prepared(&data).unwrap();
    let session = prepared.sessions.iter().find(|s| s.queries.len() >= 2).unwrap();
    let line = serde_json::to_string(session).unwrap() + "\n";
    let mut buf = Vec::new();
    let (done, skipped) = cmd_predict_batch(&ck, Cursor::new(line.clone() + "not json\n"), &mut buf, k).unwrap();
    assert_eq!((done, skipped), (1, 1));
    let batch: Vec<PrefixOutput> = String::from_utf8(buf)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(batch.len(), session.queries.len());

    let mut p = Predictor::new(ck.clone(), k).unwrap();
    for (out, q) in batch.iter().zip(&session.queries) {
        assert_eq!(p.query(&q.text).unwrap(), out.top);
    }
    // after a reset the last query alone equals a one-query batch
    p.reset();
    let last = &session.queries.last().unwrap().text;
    let alone = format!("{{\"session_id\":\"a\",\"queries\":[{{\"text\":{}}}]}}\n", serde_json::to_string(last).unwrap());
    let mut buf = Vec::new();
    cmd_predict_batch(&ck, Cursor::new(alone), &mut buf, k).unwrap();
    let single: PrefixOutput = serde_json::from_slice(buf.trim_ascii_end()).unwrap();
    assert_eq!(p.query(last).unwrap(), single.top);
    assert_eq!(p.session_len(), 1);
    assert!(Predictor::new(ck, 0).is_err());
}

#[test]
fn config_file_errors_are_specific() {
    let mut kv = KvConfig::parse("lstm_size = 8\nlearning_rate = 0.1\n").unwrap();
    train_settings(&mut kv).unwrap();
    let err = kv.finish().unwrap_err().to_string();
    assert!(err.contains("learning_rate"), "{err}");
    let mut kv = KvConfig::parse("max_epochs = 3\npatience_epochs = 3\n").unwrap();
    assert!(train_settings(&mut kv).is_err());
}

#[test]
fn binary_reports_params_and_fails_cleanly() {
    let bin = env!("CARGO_BIN_EXE_session-intent");
    let out = Command::new(bin).arg("params").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("326871") && text.contains("1210071"), "{text}");

    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin)
        .args(["eval", "--data"])
        .arg(dir.path())
        .args(["--split", "dev", "--checkpoint"])
        .arg(dir.path().join("missing"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error["));
}

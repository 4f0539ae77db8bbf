//! Title-matching baselines and the learning-to-rank feature dump.
//!
//! ```bash
//! cargo run --release --example title_baselines
//! ```

use session_intent::baselines::{
    baseline_predictions, editdist_predict, tfidf_predict, write_feature_dump, Baseline, TitleCatalog,
};
use session_intent::dataset::{load_prepared, text_sessions};
use session_intent::encoding::{load_embeddings, UnkStore};
use session_intent::eval::{evaluate, DEFAULT_THRESHOLDS};
use session_intent::pipeline::{PrepareParams, SplitName};
use session_intent::synthgen::{GenConfig, EMBEDDINGS_FILE};

fn main() -> anyhow::Result<()> {
    let work = tempfile::tempdir()?;
    let (raw, data) = (work.path().join("raw"), work.path().join("data"));
    session_intent::cli::cmd_gen(
        &GenConfig {
            n_programs: 20,
            n_devices: 40,
            n_sessions: 2_000,
            embedding_dim: 16,
            seed: 2,
            ..GenConfig::default()
        },
        &raw,
    )?;
    session_intent::cli::cmd_prepare(
        &raw,
        &data,
        &PrepareParams {
            min_sessions: 20,
            ..PrepareParams::default()
        },
    )?;
    let prepared = load_prepared(&data)?;
    let catalog = TitleCatalog::from_catalog(&prepared.vocab, &prepared.catalog)?;

    // a misheard title with its first letter dropped
    let query: String = catalog.title(0).chars().skip(1).collect();
    let query = query.as_str();
    println!("query `{query}`");
    for (p, d) in editdist_predict(query, &catalog, 3) {
        println!("  editdist {d:>2}  {}", catalog.title(p));
    }
    for (p, s) in tfidf_predict(query, &catalog, 3) {
        println!("  tfidf {s:.3}  {}", catalog.title(p));
    }

    let test = text_sessions(&prepared.split(SplitName::MultiTest), &prepared.vocab)?;
    for kind in [Baseline::EditDistance, Baseline::TfIdf] {
        let r = evaluate(&baseline_predictions(kind, &test, &catalog), &DEFAULT_THRESHOLDS)?;
        println!("{kind:?} on multi_test: P@1 {:.4}  MRR {:.4}  final P@1 {:.4}", r.p_at_1, r.mrr, r.final_p_at_1);
    }

    let table = load_embeddings(data.join(EMBEDDINGS_FILE))?;
    let unk = UnkStore::new(table.dim(), 17);
    let mut dump = Vec::new();
    let rows = write_feature_dump(&mut dump, &test[..5.min(test.len())], &catalog, &prepared.vocab, &table, &unk)?;
    println!("\nfeature dump: {rows} rows, first three:");
    for line in String::from_utf8(dump)?.lines().take(3) {
        println!("  {line}");
    }
    Ok(())
}

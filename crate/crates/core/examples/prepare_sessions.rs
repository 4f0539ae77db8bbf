//! Weak labeling of raw logs: sessionize, label by watches, filter, split.
//!
//! ```bash
//! cargo run --example prepare_sessions
//! ```

use session_intent::pipeline::{prepare, validate_prepared, write_stats_table, PrepareParams};
use session_intent::synthgen::{generate_catalog, generate_sessions, GenConfig};

fn main() -> anyhow::Result<()> {
    let cfg = GenConfig {
        n_programs: 15,
        n_devices: 30,
        n_sessions: 3_000,
        watch_probability: 0.9,
        distractor_rate: 0.3,
        other_session_rate: 0.1,
        seed: 3,
        ..GenConfig::default()
    };
    let catalog = generate_catalog(&cfg)?;
    let logs = generate_sessions(&catalog, &cfg)?;

    let params = PrepareParams {
        min_sessions: 50,
        ..PrepareParams::default()
    };
    let prepared = prepare(&logs.queries, &logs.watches, &params)?;
    validate_prepared(&prepared, &params)?;

    let r = &prepared.report;
    println!("raw queries        {}", r.raw_queries);
    println!("sessions           {}", r.sessions);
    println!("labeled            {}", r.labeled);
    println!("program-related    {}", r.program_related);
    println!("cohesive           {}", r.cohesive);
    println!("in vocabulary      {} ({} programs)", r.in_vocab, r.programs);

    let truth: std::collections::HashMap<_, _> =
        logs.truth.iter().map(|t| (t.session_id.as_str(), t.true_program.as_str())).collect();
    let all: Vec<_> = prepared.splits.iter().collect();
    let agree = all.iter().filter(|(_, s)| truth.get(s.session.id.as_str()) == Some(&s.label.as_str())).count();
    println!("label accuracy vs ground truth: {agree}/{}", all.len());
    println!();
    write_stats_table(std::io::stdout().lock(), &r.stats)?;
    Ok(())
}

//! Synthetic voice-query logs: catalog, queries, watches and ground truth.
//!
//! ```bash
//! cargo run --example generate_logs -- /tmp/session-logs
//! ```

use std::path::PathBuf;

use session_intent::baselines::shared_title_programs;
use session_intent::synthgen::{generate_catalog, generate_sessions, write_dataset, GenConfig};

fn main() -> anyhow::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "synthetic-logs".into()).into();
    let cfg = GenConfig {
        n_programs: 20,
        n_devices: 40,
        n_sessions: 2_000,
        ambiguity_rate: 0.3,
        distractor_rate: 0.2,
        other_session_rate: 0.05,
        embedding_dim: 16,
        seed: 7,
        ..GenConfig::default()
    };

    let catalog = generate_catalog(&cfg)?;
    let shared = shared_title_programs(&catalog);
    println!("catalog: {} programs, {} in shared-title pairs", catalog.len(), shared.len());
    for e in catalog.iter().take(6) {
        println!("  {} {:<11} {}", e.program_id, e.action_type, e.title);
    }

    let logs = generate_sessions(&catalog, &cfg)?;
    println!("{} queries, {} watches, {} labeled sessions", logs.queries.len(), logs.watches.len(), logs.truth.len());
    let first = &logs.queries[..logs.sessions[0].1];
    println!("first session on {}:", first[0].device_id);
    for q in first {
        println!("  t={:>9.3} {}", q.ts, q.text);
    }

    let files = write_dataset(&cfg, &out)?;
    println!("wrote {} to {}", files.join(", "), out.display());
    Ok(())
}

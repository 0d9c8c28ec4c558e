//! The `idclean` staged pipeline.
//!
//! ```text
//! synth → validate → score → flag → queue → serve → apply → report
//! ```
//!
//! Every stage reads and writes plain files, so each can be re-run on its
//! own. Exit status is 0 on success, 1 for user errors (arguments, missing
//! inputs, unwritable outputs) and 2 for malformed or inconsistent data.

pub mod args;
mod error;
pub mod stages;

pub use args::Cli;
pub use error::CliError;

use args::Command;

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::User("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::User(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&cli))
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Validate(a) => {
            let r = stages::run_validate(out, a)?;
            eprintln!("idclean: {} samples, {} identities, {}×{} embeddings: ok", r.samples, r.identities, r.embedding_rows, r.dim);
        }
        Command::Score(a) => {
            let scores = stages::run_score(out, a)?;
            let scorable = scores.iter().filter(|s| s.is_scorable()).count();
            eprintln!("idclean: scored {} identities ({scorable} scorable)", scores.len());
        }
        Command::Flag(a) => {
            let d = stages::run_flag(out, a)?;
            eprintln!(
                "idclean: flagged {} of {} identities; pair threshold {}",
                d.flagged.len(),
                d.scorable_identities,
                d.pair_threshold
            );
        }
        Command::Queue(a) => {
            let r = stages::run_queue(out, a)?;
            let queued: usize = r.identities.iter().map(|i| i.review_queue.len()).sum();
            eprintln!("idclean: {} identities, {queued} samples queued for review", r.identities.len());
        }
        Command::Serve(a) => stages::run_serve(out, cli.seed, a)?,
        Command::Apply(a) => {
            let c = stages::run_apply(out, a)?;
            eprintln!(
                "idclean: {} → {} samples, {} → {} identities",
                c.samples_before, c.samples_after, c.identities_before, c.identities_after
            );
        }
        Command::Report(a) => {
            let s = stages::run_report(out, cli.seed, a)?;
            eprintln!("idclean: AUC {:.6} over {} positive / {} negative pairs", s.before.auc, s.before.positives, s.before.negatives);
        }
        Command::Synth(a) => stages::run_synth(out, cli.seed, a)?,
    }
    Ok(())
}

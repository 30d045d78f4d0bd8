//! Regenerates the bundled fixtures: every corpus case and the sleep-mode
//! session are run through the real prompt builders with queued replies,
//! and each request is recorded under its fixture key.
//!
//! cargo run -p awareauto-cli --example author_fixtures

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use awareauto_core::bundled::{self, ScriptedInput};
use awareauto_core::eval::{run_case, EvalCase};
use awareauto_core::llm::{QueuedBackend, RecordingBackend};
use awareauto_core::model::{serialize_rule_text, Operation};
use awareauto_core::pipeline::Pipeline;
use awareauto_service::session::{no_rules, Session};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Override {
    #[serde(default)]
    reasoning: Option<Vec<Option<String>>>,
    #[serde(default)]
    grounding: Option<Vec<Option<String>>>,
}

fn expand(
    replies: &Option<Vec<Option<String>>>,
    gold: Option<&str>,
    default: usize,
) -> Result<Vec<String>> {
    let Some(replies) = replies else {
        return Ok(gold.into_iter().take(default).map(str::to_string).collect());
    };
    replies
        .iter()
        .map(|r| match (r, gold) {
            (None, Some(g)) => Ok(g.to_string()),
            (Some(text), Some(g)) => Ok(text.replace("{gold}", g)),
            (Some(text), None) if !text.contains("{gold}") => Ok(text.clone()),
            _ => bail!("reply refers to a gold answer the case does not have"),
        })
        .collect()
}

fn replies(case: &EvalCase, o: &Override) -> Result<Vec<String>> {
    let gold_text = serialize_rule_text(&case.gold_nl);
    let gold_json = case
        .gold_grounded
        .as_ref()
        .map(|g| serde_json::to_string(g).expect("grounded rule serializes"));
    let grounds = usize::from(case.gold_nl.operation != Operation::Delete);
    let mut out = expand(&o.reasoning, Some(&gold_text), 1)?;
    out.extend(expand(&o.grounding, gold_json.as_deref(), grounds)?);
    Ok(out)
}

fn main() -> Result<()> {
    let dir = bundled::fixture_dir();
    let overrides: HashMap<String, Override> = {
        let path =
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/authoring/overrides.json");
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    if dir.exists() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                std::fs::remove_file(path)?;
            }
        }
    }
    let catalog = Arc::new(bundled::catalog());
    let queue = Arc::new(QueuedBackend::default());
    let pipeline = Pipeline::bundled(
        catalog,
        Arc::new(RecordingBackend::new(queue.clone(), &dir)),
    );

    let corpus = bundled::corpus();
    for id in overrides.keys() {
        ensure!(
            corpus.iter().any(|c| &c.id == id),
            "override for unknown case {id}"
        );
    }
    for case in &corpus {
        let o = overrides
            .get(&case.id)
            .map_or_else(Override::default, |o| Override {
                reasoning: o.reasoning.clone(),
                grounding: o.grounding.clone(),
            });
        for reply in replies(case, &o).with_context(|| case.id.clone())? {
            queue.push(reply);
        }
        let result = run_case(case, &pipeline);
        ensure!(
            queue.remaining() == 0,
            "{}: {} replies unused",
            case.id,
            queue.remaining()
        );
        ensure!(
            result.score.success,
            "{}: {:?} {:?}",
            case.id,
            result.score,
            result.error
        );
    }

    let script = bundled::sleep_mode_session();
    let mut session = Session::new(1);
    for (i, round) in script.rounds.iter().enumerate() {
        for reply in round.reasoning.iter().chain(&round.grounding) {
            queue.push(reply.clone());
        }
        let draft = match round.kind {
            ScriptedInput::Expression => session.express(
                &pipeline,
                round
                    .expression
                    .clone()
                    .context("expression round without expression")?,
                script.snapshot.clone(),
                &no_rules,
            ),
            ScriptedInput::Edit => session.edit(
                &pipeline,
                round
                    .document
                    .clone()
                    .context("edit round without document")?,
                &no_rules,
            ),
        }
        .with_context(|| format!("{} round {}", script.id, i + 1))?;
        ensure!(
            queue.remaining() == 0,
            "{} round {}: replies unused",
            script.id,
            i + 1
        );
        println!(
            "{} round {}: feasible={}",
            script.id,
            i + 1,
            draft.grounded.feasible
        );
    }
    session.confirmable().context("final draft")?;

    let count = std::fs::read_dir(&dir)?.count();
    println!(
        "{} cases, {} fixtures in {}",
        corpus.len(),
        count,
        dir.display()
    );
    Ok(())
}

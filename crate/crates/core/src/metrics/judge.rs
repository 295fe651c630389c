use std::sync::OnceLock;

use regex::Regex;

use crate::backends::{ChatMessage, RoleClient};
use crate::error::{Error, Result};

/// Values this far outside `[0, 1]` are clamped instead of rejected.
const CLAMP_MARGIN: f64 = 0.05;

const JUDGE_SYSTEM: &str = "You are an impartial evaluator of answers about waterway navigation videos. \
Compare the candidate answer with the reference answer. Judge semantic alignment (does it convey the same facts \
and guidance?) and logical consistency (is the reasoning coherent and free of contradictions?). \
Reply with a single line of the form `Score: <number between 0 and 1>` followed by a short justification.";

fn in_unit_range(v: f64) -> Option<f64> {
    (-CLAMP_MARGIN..=1.0 + CLAMP_MARGIN).contains(&v).then(|| v.clamp(0.0, 1.0))
}

/// Extracts a confidence in `[0, 1]` from free-form model output.
///
/// A number following the word "score" wins when present. Otherwise the first
/// number in range is used. Numbers within 0.05 of the range are clamped.
pub fn parse_unit_score(text: &str) -> Option<f64> {
    static LABELED: OnceLock<Regex> = OnceLock::new();
    static NUMBER: OnceLock<Regex> = OnceLock::new();
    let labeled = LABELED.get_or_init(|| {
        Regex::new(r"(?i)\bscore\b\s*(?:is|of)?\s*[:=]?\s*(-?(?:\d+(?:\.\d+)?|\.\d+))").expect("static regex")
    });
    let number = NUMBER.get_or_init(|| Regex::new(r"-?(?:\d+(?:\.\d+)?|\.\d+)").expect("static regex"));

    if let Some(caps) = labeled.captures(text) {
        return caps[1].parse().ok().and_then(in_unit_range);
    }
    number
        .find_iter(text)
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .find_map(in_unit_range)
}

/// Rubric score of `candidate` against `reference` from a judge backend.
pub async fn judge_score(judge: &RoleClient, question: &str, candidate: &str, reference: &str) -> Result<f64> {
    let prompt = format!("QUESTION\n{question}\n\nREFERENCE ANSWER\n{reference}\n\nCANDIDATE ANSWER\n{candidate}");
    let exchange = judge
        .chat(vec![ChatMessage::system(JUDGE_SYSTEM), ChatMessage::user(prompt)])
        .await
        .map_err(|e| Error::MetricUnavailable(format!("judge call failed: {e}")))?;
    parse_unit_score(&exchange.response_text).ok_or_else(|| {
        Error::MetricUnavailable(format!("no score in judge reply {:?}", exchange.response_text))
    })
}

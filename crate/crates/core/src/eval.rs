//! Batch evaluation of a dataset split against reference answers.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::backends::Role;
use crate::dataset::{Category, DatasetManifest, QASample, Split, Waterway};
use crate::engine::{AskOverrides, Engine};
use crate::error::{Error, Result};
use crate::metrics::{cider, judge_score, tokenize, MetricReport};
use crate::router::RoutePath;
use crate::trace::{ClockMode, Session, TraceSink};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitSummary {
    pub chunk_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub clip_id: String,
    pub category: Category,
    pub waterway: Waterway,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_role: Option<Role>,
    pub route: Option<RoutePath>,
    pub used_fallback: bool,
    pub hits: Vec<HitSummary>,
    pub retries: usize,
    pub verified: Option<bool>,
    pub grades: Vec<f64>,
    /// End-to-end time to answer this question.
    pub latency_ms: u64,
    pub prediction: String,
    pub reference: String,
    pub metrics: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_error: Option<String>,
}

impl EvalRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAggregate {
    /// Records in the group, failed ones included.
    pub count: usize,
    pub scored: usize,
    pub metrics: Option<MetricReport>,
    pub mean_latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub split: Split,
    pub clock: ClockMode,
    pub records: Vec<EvalRecord>,
    pub overall: GroupAggregate,
    pub per_category: BTreeMap<Category, GroupAggregate>,
    pub per_waterway: BTreeMap<Waterway, GroupAggregate>,
    /// Per-question latency over scored records.
    pub latency: Option<LatencyStats>,
}

fn group<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> GroupAggregate {
    let records: Vec<&EvalRecord> = records.into_iter().collect();
    let ok: Vec<&EvalRecord> = records.iter().copied().filter(|r| r.is_ok()).collect();
    let metrics = MetricReport::mean(ok.iter().filter_map(|r| r.metrics.as_ref()));
    let mean_latency_s =
        (!ok.is_empty()).then(|| ok.iter().map(|r| r.latency_ms as f64 / 1000.0).sum::<f64>() / ok.len() as f64);
    GroupAggregate {
        count: records.len(),
        scored: ok.len(),
        metrics,
        mean_latency_s,
    }
}

fn latency_stats(records: &[EvalRecord]) -> Option<LatencyStats> {
    let mut secs: Vec<f64> = records.iter().filter(|r| r.is_ok()).map(|r| r.latency_ms as f64 / 1000.0).collect();
    if secs.is_empty() {
        return None;
    }
    secs.sort_by(f64::total_cmp);
    let n = secs.len();
    let median_s = if n % 2 == 1 {
        secs[n / 2]
    } else {
        (secs[n / 2 - 1] + secs[n / 2]) / 2.0
    };
    Some(LatencyStats {
        count: n,
        mean_s: secs.iter().sum::<f64>() / n as f64,
        median_s,
        min_s: secs[0],
        max_s: secs[n - 1],
    })
}

impl EvalRun {
    /// Orders records by sample id, fills in corpus-level CIDEr and computes
    /// every aggregate from the records.
    pub fn from_records(split: Split, clock: ClockMode, mut records: Vec<EvalRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let scored: Vec<usize> = (0..records.len()).filter(|&i| records[i].is_ok() && records[i].metrics.is_some()).collect();
        if !scored.is_empty() {
            let candidates: Vec<_> = scored.iter().map(|&i| tokenize(&records[i].prediction)).collect();
            let refs: Vec<_> = scored.iter().map(|&i| vec![tokenize(&records[i].reference)]).collect();
            let c = cider(&candidates, &refs)?;
            for (&i, score) in scored.iter().zip(c.per_sample) {
                if let Some(m) = records[i].metrics.as_mut() {
                    m.cider = score;
                }
            }
        }
        let per_category = Category::ALL
            .iter()
            .map(|&c| (c, group(records.iter().filter(|r| r.category == c))))
            .collect();
        let per_waterway = Waterway::ALL
            .iter()
            .map(|&w| (w, group(records.iter().filter(|r| r.waterway == w))))
            .collect();
        Ok(Self {
            split,
            clock,
            overall: group(&records),
            per_category,
            per_waterway,
            latency: latency_stats(&records),
            records,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Clone)]
pub struct EvalOptions {
    pub split: Split,
    pub concurrency: usize,
    /// Score predictions with the judge backend when one is configured.
    pub judge: bool,
    pub clock: ClockMode,
    pub trace: Arc<dyn TraceSink>,
    pub full_prompts: bool,
    pub overrides: AskOverrides,
}

impl EvalOptions {
    pub fn new(trace: Arc<dyn TraceSink>) -> Self {
        Self {
            split: Split::Test,
            concurrency: 4,
            judge: true,
            clock: ClockMode::Wall,
            trace,
            full_prompts: false,
            overrides: AskOverrides::default(),
        }
    }
}

async fn evaluate_one(engine: &Engine, dataset: &DatasetManifest, sample: &QASample, opts: &EvalOptions) -> EvalRecord {
    let mut record = EvalRecord {
        sample_id: sample.sample_id.clone(),
        clip_id: sample.clip_id.clone(),
        category: sample.category,
        waterway: sample.waterway,
        status: RecordStatus::Failed,
        error: None,
        failed_role: None,
        route: None,
        used_fallback: false,
        hits: Vec::new(),
        retries: 0,
        verified: None,
        grades: Vec::new(),
        latency_ms: 0,
        prediction: String::new(),
        reference: sample.reference_answer.clone(),
        metrics: None,
        judge_error: None,
    };
    let session = Session::new(sample.sample_id.clone(), opts.clock, opts.trace.clone()).with_full_prompts(opts.full_prompts);
    let outcome = engine
        .answer(&session, &sample.question, dataset.clip(&sample.clip_id), opts.overrides)
        .await;
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            record.error = Some(e.to_string());
            record.failed_role = e.failed_role();
            record.latency_ms = session.elapsed_ms();
            return record;
        }
    };
    record.status = RecordStatus::Ok;
    record.route = Some(outcome.route.path);
    record.used_fallback = outcome.route.used_fallback;
    record.hits = outcome
        .hits
        .iter()
        .map(|h| HitSummary {
            chunk_id: h.chunk.chunk_id.clone(),
            score: h.score,
        })
        .collect();
    record.retries = outcome.retries;
    record.verified = outcome.verified;
    record.grades = outcome.score_history.iter().map(|g| g.score).collect();
    record.latency_ms = outcome.latency_ms;
    record.prediction = outcome.answer;

    let mut metrics = MetricReport::score_pair(&record.prediction, &record.reference);
    if opts.judge {
        if let Some(judge) = engine.backends().get(Role::Judge) {
            match judge_score(judge, &sample.question, &record.prediction, &record.reference).await {
                Ok(s) => metrics.judge_score = Some(s),
                Err(e) => record.judge_error = Some(e.to_string()),
            }
        }
    }
    record.metrics = Some(metrics);
    record
}

/// Evaluates every sample of the split. Samples already scored in `previous`
/// are carried over instead of re-run. Per-sample failures are recorded; the
/// run fails only when no sample could be scored.
pub async fn run_eval(
    engine: &Engine,
    dataset: &DatasetManifest,
    opts: &EvalOptions,
    previous: Option<&EvalRun>,
) -> Result<EvalRun> {
    if opts.concurrency == 0 {
        return Err(Error::invalid("concurrency must be at least 1"));
    }
    let samples: Vec<&QASample> = dataset.split(opts.split).collect();
    if samples.is_empty() {
        return Err(Error::invalid(format!("dataset has no {} samples", opts.split)));
    }
    let done: BTreeMap<&str, &EvalRecord> = previous
        .map(|p| {
            p.records
                .iter()
                .filter(|r| r.is_ok())
                .map(|r| (r.sample_id.as_str(), r))
                .collect()
        })
        .unwrap_or_default();

    let mut records: Vec<EvalRecord> = Vec::with_capacity(samples.len());
    let mut todo = Vec::new();
    for s in samples {
        match done.get(s.sample_id.as_str()) {
            Some(r) => records.push((*r).clone()),
            None => todo.push(s),
        }
    }
    let fresh: Vec<EvalRecord> = stream::iter(todo)
        .map(|s| evaluate_one(engine, dataset, s, opts))
        .buffer_unordered(opts.concurrency)
        .collect()
        .await;
    records.extend(fresh);

    if !records.iter().any(EvalRecord::is_ok) {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        let role = records.iter().find_map(|r| r.failed_role);
        return Err(match role {
            Some(role) => Error::BackendFailure {
                role,
                status: None,
                message: format!("no sample could be evaluated; first error: {first}"),
            },
            None => Error::InvalidState(format!("no sample could be evaluated; first error: {first}")),
        });
    }
    EvalRun::from_records(opts.split, opts.clock, records)
}

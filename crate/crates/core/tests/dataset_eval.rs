//! Dataset validation, statistics, the evaluation harness and its reports.

use std::collections::BTreeMap;
use std::sync::Arc;

use helmsman_core::backends::{BackendSet, EmbeddingVector, MockBackend, MockFailure, MockRule, MockScript, Role};
use helmsman_core::dataset::{compute_stats, Category, DatasetManifest, Split, Waterway};
use helmsman_core::engine::{Engine, EngineConfig};
use helmsman_core::eval::{run_eval, EvalOptions, EvalRecord, EvalRun, RecordStatus};
use helmsman_core::knowledge::{KnowledgeBase, RuleChunk};
use helmsman_core::metrics::{bleu, meteor_lite, rouge_l, rouge_n, tokenize, MetricReport};
use helmsman_core::report::{self, parse_csv, render_csv, render_text, ReportFormat};
use helmsman_core::trace::{ClockMode, NullSink};
use helmsman_core::Error;
use serde_json::{json, Value};

fn clip(id: &str, n: usize, duration: f64) -> Value {
    json!({ "clip_id": id, "frames": (1..=n).map(|i| format!("{id}/{i:03}.jpg")).collect::<Vec<_>>(), "duration_s": duration })
}

fn sample(id: &str, clip: &str, q: &str, a: &str, cat: &str, water: &str) -> Value {
    json!({ "sample_id": id, "clip_id": clip, "question": q, "reference_answer": a,
            "category": cat, "waterway": water, "split": "test" })
}

/// One sample per category, with hand-countable word lengths.
fn five_sample_doc() -> Value {
    json!({
        "clips": [clip("c1", 20, 6.0), clip("c2", 9, 3.0)],
        "samples": [
            sample("p1", "c1", "Is there a boat ahead?", "Yes, one small boat.", "Perception", "River"),
            sample("s1", "c1", "Describe the scene.", "A quiet canal with moored barges.", "SceneUnderstanding", "Canal"),
            sample("c1q", "c2", "Will the ferry cross our bow?", "Yes, it will cross from starboard.", "CausalPredictive", "Harbor"),
            sample("a1", "c2", "Should we slow down now?", "Yes, slow down and keep right.", "ActionInteraction", "Lake"),
            sample("k1", "c2", "Which vessel gives way?", "The vessel with the other on her starboard side.", "KnowledgeDriven", "Sea"),
        ]
    })
}

fn issues(doc: &Value) -> Vec<(String, String)> {
    match DatasetManifest::parse(&doc.to_string(), None) {
        Err(Error::Validation(list)) => list.into_iter().map(|i| (i.field, i.message)).collect(),
        Err(other) => panic!("expected validation error, got {other}"),
        Ok(_) => panic!("manifest accepted"),
    }
}

#[test]
fn six_invalid_manifests_are_rejected_with_field_paths() {
    let base = five_sample_doc();

    let mut unknown_clip = base.clone();
    unknown_clip["samples"][2]["clip_id"] = json!("nope");
    let got = issues(&unknown_clip);
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].0, "samples[2].clip_id");
    assert!(got[0].1.contains("\"c1q\""));

    let mut duplicate = base.clone();
    duplicate["samples"][4]["sample_id"] = json!("p1");
    let got = issues(&duplicate);
    assert_eq!(got[0].0, "samples[4].sample_id");
    assert!(got[0].1.contains("duplicate"));

    let mut bad_category = base.clone();
    bad_category["samples"][0]["category"] = json!("Q");
    let got = issues(&bad_category);
    assert_eq!(got[0].0, "samples[0].category");
    for c in Category::ALL {
        assert!(got[0].1.contains(c.as_str()), "{}", got[0].1);
    }

    let mut bad_waterway = base.clone();
    bad_waterway["samples"][1]["waterway"] = json!("Ocean");
    let got = issues(&bad_waterway);
    assert_eq!(got[0].0, "samples[1].waterway");
    assert!(got[0].1.contains("Harbor"));

    let mut empty_question = base.clone();
    empty_question["samples"][3]["question"] = json!("   ");
    empty_question["samples"][3]["split"] = json!("validation");
    let got = issues(&empty_question);
    let fields: Vec<&str> = got.iter().map(|(f, _)| f.as_str()).collect();
    assert_eq!(fields, ["samples[3].question", "samples[3].split"]);

    let mut broken_clip = base.clone();
    broken_clip["clips"][1]["frames"] = json!([]);
    broken_clip["samples"][0]["extra"] = json!(1);
    let got = issues(&broken_clip);
    let fields: Vec<&str> = got.iter().map(|(f, _)| f.as_str()).collect();
    assert!(fields.iter().any(|f| f.starts_with("clips[1]")), "{fields:?}");
    assert!(fields.contains(&"samples[0].extra"), "{fields:?}");
}

#[test]
fn syntax_errors_report_line_and_column() {
    let got = match DatasetManifest::parse("{\n  \"clips\": [,]\n}", None) {
        Err(Error::Validation(list)) => list,
        other => panic!("{other:?}"),
    };
    assert_eq!(got[0].field, "line 2 column 13");
}

#[test]
fn stats_match_hand_counts() {
    let ds = DatasetManifest::parse(&five_sample_doc().to_string(), None).unwrap();
    let s = compute_stats(&ds);
    assert_eq!(s.samples, 5);
    assert_eq!(s.clips, 2);
    // questions: 5 + 3 + 6 + 5 + 4 words; answers: 4 + 6 + 6 + 6 + 9 words
    assert_eq!(s.mean_question_words, 23.0 / 5.0);
    assert_eq!(s.mean_answer_words, 31.0 / 5.0);
    assert!(s.per_category.values().all(|&n| n == 1));
    assert_eq!(s.per_waterway[&Waterway::Moat], 0);
    assert_eq!(s.per_split[&Split::Test], 5);
    let d = s.duration.unwrap();
    assert_eq!((d.min_s, d.mean_s, d.max_s), (3.0, 4.5, 6.0));

    let two = json!({
        "clips": [clip("c", 2, 1.0)],
        "samples": [sample("a", "c", "Is it clear?", "Yes.", "Perception", "River"),
                    sample("b", "c", "How many boats are there?", "Two.", "Perception", "River")]
    });
    let s = compute_stats(&DatasetManifest::parse(&two.to_string(), None).unwrap());
    assert_eq!(s.mean_question_words, 4.0);
}

fn kb() -> Arc<KnowledgeBase> {
    let chunks = (0..8)
        .map(|i| RuleChunk {
            chunk_id: format!("rules#{i:04}"),
            source_doc: "rules".into(),
            section_label: None,
            text: format!("Rule body {i}."),
        })
        .collect();
    let emb = (0..8).map(|i| EmbeddingVector::normalized(vec![1.0, i as f64]).unwrap()).collect();
    Arc::new(KnowledgeBase::from_parts("mock", chunks, emb).unwrap())
}

fn backends(extra: Vec<MockRule>, judge: bool) -> Arc<BackendSet> {
    let mut script = MockScript::default()
        .default_reply(Role::Router, "FastRag")
        .default_reply(Role::Reasoner, "Yes, one small boat.")
        .default_reply(Role::Grader, "Score: 0.9")
        .default_reply(Role::Judge, "Score: 0.75")
        .hashed_embeddings(2);
    for r in extra {
        script = script.rule(r);
    }
    let roles: Vec<Role> = Role::ALL.into_iter().filter(|r| judge || *r != Role::Judge).collect();
    Arc::new(BackendSet::all_mock(Arc::new(MockBackend::new(script)), &roles))
}

fn options(concurrency: usize) -> EvalOptions {
    let mut o = EvalOptions::new(Arc::new(NullSink));
    o.concurrency = concurrency;
    o.clock = ClockMode::Simulated;
    o
}

async fn evaluate(extra: Vec<MockRule>, judge: bool, previous: Option<&EvalRun>) -> EvalRun {
    let ds = DatasetManifest::parse(&five_sample_doc().to_string(), None).unwrap();
    let engine = Engine::new(backends(extra, judge), kb(), EngineConfig::default());
    run_eval(&engine, &ds, &options(3), previous).await.unwrap()
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Recomputes a group aggregate straight from records.
fn check_group(records: &[&EvalRecord], got: &helmsman_core::eval::GroupAggregate) {
    assert_eq!(got.count, records.len());
    let ok: Vec<&&EvalRecord> = records.iter().filter(|r| r.status == RecordStatus::Ok).collect();
    assert_eq!(got.scored, ok.len());
    let m = |f: fn(&MetricReport) -> f64| mean(ok.iter().map(|r| f(r.metrics.as_ref().unwrap())));
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "{a} vs {b}"),
        (a, b) => assert_eq!(a, b),
    };
    let g = got.metrics.as_ref();
    close(g.map(|g| g.rouge1), m(|r| r.rouge1));
    close(g.map(|g| g.rouge_l), m(|r| r.rouge_l));
    close(g.map(|g| g.bleu4), m(|r| r.bleu4));
    close(g.map(|g| g.meteor), m(|r| r.meteor));
    close(g.map(|g| g.cider), m(|r| r.cider));
    close(g.and_then(|g| g.judge_score), mean(ok.iter().filter_map(|r| r.metrics.as_ref().unwrap().judge_score)));
    close(got.mean_latency_s, mean(ok.iter().map(|r| r.latency_ms as f64 / 1000.0)));
}

fn check_aggregates(run: &EvalRun) {
    let all: Vec<&EvalRecord> = run.records.iter().collect();
    check_group(&all, &run.overall);
    for (c, g) in &run.per_category {
        check_group(&run.records.iter().filter(|r| r.category == *c).collect::<Vec<_>>(), g);
    }
    for (w, g) in &run.per_waterway {
        check_group(&run.records.iter().filter(|r| r.waterway == *w).collect::<Vec<_>>(), g);
    }
    assert_eq!(run.per_category.values().map(|g| g.count).sum::<usize>(), run.overall.count);
    assert_eq!(run.per_waterway.values().map(|g| g.count).sum::<usize>(), run.overall.count);
}

#[tokio::test]
async fn every_sample_gets_a_record_and_aggregates_recompute() {
    let run = evaluate(vec![], true, None).await;
    assert_eq!(run.records.len(), 5);
    let ids: Vec<&str> = run.records.iter().map(|r| r.sample_id.as_str()).collect();
    assert_eq!(ids, ["a1", "c1q", "k1", "p1", "s1"]);
    check_aggregates(&run);

    let p1 = run.records.iter().find(|r| r.sample_id == "p1").unwrap();
    let m = p1.metrics.unwrap();
    assert_eq!(m.rouge1, 1.0);
    assert_eq!(m.judge_score, Some(0.75));
    let (c, r) = (tokenize(&p1.prediction), tokenize(&p1.reference));
    assert_eq!(m.rouge2, rouge_n(&c, &r, 2));
    assert_eq!(m.rouge_l, rouge_l(&c, &r));
    assert_eq!(m.bleu3, bleu(&c, std::slice::from_ref(&r), 3).unwrap());
    assert_eq!(m.meteor, meteor_lite(&c, &r));

    for g in run.per_category.values() {
        assert_eq!((g.count, g.scored), (1, 1));
    }
    let text = render_text(&run);
    for c in Category::TABLE_ORDER {
        assert!(text.lines().any(|l| l.starts_with(c.letter()) && l.contains(c.as_str())));
    }
}

#[tokio::test]
async fn a_failing_reasoner_only_fails_its_sample() {
    let run = evaluate(
        vec![MockRule::failing(Role::Reasoner, "ferry", MockFailure::Status(500))],
        true,
        None,
    )
    .await;
    let failed: Vec<&EvalRecord> = run.records.iter().filter(|r| r.status == RecordStatus::Failed).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].sample_id, "c1q");
    assert_eq!(failed[0].failed_role, Some(Role::Reasoner));
    assert!(failed[0].metrics.is_none());
    assert_eq!(run.overall.scored, 4);
    assert_eq!(run.per_category[&Category::CausalPredictive].scored, 0);
    assert!(run.per_category[&Category::CausalPredictive].metrics.is_none());
    check_aggregates(&run);
    assert!(render_text(&run).contains("Failed samples: 1"));
}

#[tokio::test]
async fn all_samples_failing_is_a_run_error() {
    let ds = DatasetManifest::parse(&five_sample_doc().to_string(), None).unwrap();
    let engine = Engine::new(
        backends(vec![MockRule::failing(Role::Reasoner, "", MockFailure::Timeout)], true),
        kb(),
        EngineConfig::default(),
    );
    let err = run_eval(&engine, &ds, &options(2), None).await.unwrap_err();
    assert_eq!(err.failed_role(), Some(Role::Reasoner));
}

#[tokio::test]
async fn missing_judge_is_shown_as_unavailable() {
    let run = evaluate(vec![], false, None).await;
    assert!(run.records.iter().all(|r| r.metrics.unwrap().judge_score.is_none()));
    assert_eq!(run.overall.metrics.unwrap().judge_score, None);
    let text = render_text(&run);
    assert!(text.contains("n/a"));
    let rows = parse_csv(&render_csv(&run).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.judge_score.is_none()));
}

#[tokio::test]
async fn three_tables_with_expected_shape() {
    let run = evaluate(vec![], true, None).await;
    let text = render_text(&run);
    let blocks: Vec<&str> = text.split("\n\n").collect();
    let table_lines = |header: &str| -> usize {
        let i = blocks.iter().position(|b| b.starts_with(header)).unwrap();
        blocks[i].lines().count()
    };
    // header + rule + one row per group
    assert_eq!(table_lines("Split"), 3);
    assert_eq!(table_lines("Code"), 2 + 5);
    assert_eq!(table_lines("Waterway"), 2 + 6);
    assert_eq!(text.lines().find(|l| l.starts_with("Split")).unwrap().split_whitespace().count(), 11);
}

#[tokio::test]
async fn csv_round_trips_the_aggregates() {
    let run = evaluate(vec![], true, None).await;
    let rows = parse_csv(&render_csv(&run).unwrap()).unwrap();
    assert_eq!(rows.len(), 1 + 5 + 6);
    assert_eq!(rows[0].to_group(), run.overall);
    let by_name: BTreeMap<&str, _> = rows.iter().skip(1).map(|r| (r.group.as_str(), r.to_group())).collect();
    for (c, g) in &run.per_category {
        assert_eq!(&by_name[c.as_str()], g);
    }
    for (w, g) in &run.per_waterway {
        assert_eq!(&by_name[w.as_str()], g);
    }
    let json: Value = serde_json::from_str(&report::render(&run, ReportFormat::Json).unwrap()).unwrap();
    assert_eq!(json["overall"]["count"], 5);
}

#[tokio::test]
async fn resuming_a_complete_run_changes_nothing() {
    let first = evaluate(vec![], true, None).await;
    let again = evaluate(vec![MockRule::failing(Role::Reasoner, "", MockFailure::Status(500))], true, Some(&first)).await;
    assert_eq!(again, first);
    let reloaded: EvalRun = serde_json::from_str(&first.to_json().unwrap()).unwrap();
    assert_eq!(reloaded, first);
}

#[tokio::test]
async fn resuming_reruns_only_failed_samples() {
    let partial = evaluate(vec![MockRule::failing(Role::Reasoner, "ferry", MockFailure::Status(503))], true, None).await;
    assert_eq!(partial.overall.scored, 4);
    let fixed = evaluate(vec![], true, Some(&partial)).await;
    let fresh = evaluate(vec![], true, None).await;
    assert_eq!(fixed, fresh);
}

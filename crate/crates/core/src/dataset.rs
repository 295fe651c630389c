//! Video QA dataset manifests: loading, validation and descriptive statistics.
//!
//! A manifest is one JSON document:
//!
//! ```json
//! {
//!   "clips":   [{ "clip_id": "c1", "frames": ["c1/0001.jpg", "..."], "duration_s": 7.5 }],
//!   "samples": [{ "sample_id": "s1", "clip_id": "c1", "question": "...",
//!                 "reference_answer": "...", "category": "Perception",
//!                 "waterway": "River", "split": "test" }]
//! }
//! ```
//!
//! Frame paths are relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ats::FrameManifest;
use crate::error::{Error, Result, ValidationIssue};
use crate::metrics::tokenize;

macro_rules! label_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            /// Matches labels ignoring case, spaces, `_`, `-`, `/` and `&`.
            pub fn parse(text: &str) -> Option<Self> {
                let norm = normalize_label(text);
                Self::ALL.iter().copied().find(|v| normalize_label(v.as_str()) == norm)
            }

            pub fn allowed() -> String {
                Self::ALL.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(", ")
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl std::str::FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
                Self::parse(s).ok_or_else(|| format!("unknown value {s:?}; allowed: {}", Self::allowed()))
            }
        }
    };
}

fn normalize_label(text: &str) -> String {
    text.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

label_enum!(
    /// Question tiers, from perception up to knowledge-driven reasoning.
    Category {
        Perception => "Perception",
        SceneUnderstanding => "SceneUnderstanding",
        CausalPredictive => "CausalPredictive",
        ActionInteraction => "ActionInteraction",
        KnowledgeDriven => "KnowledgeDriven",
    }
);

impl Category {
    /// One-letter column heading used in per-category tables.
    pub fn letter(self) -> &'static str {
        match self {
            Category::Perception => "P",
            Category::SceneUnderstanding => "S",
            Category::CausalPredictive => "C",
            Category::ActionInteraction => "A",
            Category::KnowledgeDriven => "R",
        }
    }

    /// Table column order: P, S, C, A, R.
    pub const TABLE_ORDER: [Category; 5] = [
        Category::Perception,
        Category::SceneUnderstanding,
        Category::CausalPredictive,
        Category::ActionInteraction,
        Category::KnowledgeDriven,
    ];
}

label_enum!(Waterway {
    River => "River",
    Lake => "Lake",
    Canal => "Canal",
    Moat => "Moat",
    Harbor => "Harbor",
    Sea => "Sea",
});

label_enum!(Split {
    Train => "train",
    Test => "test",
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QASample {
    pub sample_id: String,
    pub clip_id: String,
    pub question: String,
    pub reference_answer: String,
    pub category: Category,
    pub waterway: Waterway,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub clips: BTreeMap<String, FrameManifest>,
    pub samples: Vec<QASample>,
    /// Directory frame paths resolve against.
    pub base_dir: Option<PathBuf>,
}

const SAMPLE_FIELDS: [&str; 7] = ["sample_id", "clip_id", "question", "reference_answer", "category", "waterway", "split"];

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf);
        Self::parse(&raw, base)
    }

    /// Parses and validates manifest text, reporting every violation found.
    pub fn parse(text: &str, base_dir: Option<PathBuf>) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| {
            Error::Validation(vec![ValidationIssue::new(
                format!("line {} column {}", e.line(), e.column()),
                format!("invalid JSON: {e}"),
            )])
        })?;
        let mut issues = Vec::new();
        let Some(root) = value.as_object() else {
            return Err(Error::Validation(vec![ValidationIssue::new("$", "manifest must be a JSON object")]));
        };
        for key in root.keys().filter(|k| !["clips", "samples"].contains(&k.as_str())) {
            issues.push(ValidationIssue::new(key.clone(), "unknown top-level field"));
        }

        let mut clips = BTreeMap::new();
        match root.get("clips").map(Value::as_array) {
            Some(Some(list)) => {
                for (i, raw_clip) in list.iter().enumerate() {
                    let at = format!("clips[{i}]");
                    match serde_json::from_value::<FrameManifest>(raw_clip.clone()) {
                        Ok(mut clip) => {
                            issues.extend(clip.issues(&at));
                            clip.base_dir = base_dir.clone();
                            if clips.contains_key(&clip.clip_id) {
                                issues.push(ValidationIssue::new(
                                    format!("{at}.clip_id"),
                                    format!("duplicate clip_id {:?}", clip.clip_id),
                                ));
                            } else {
                                clips.insert(clip.clip_id.clone(), clip);
                            }
                        }
                        Err(e) => issues.push(ValidationIssue::new(at, format!("malformed clip: {e}"))),
                    }
                }
            }
            Some(None) => issues.push(ValidationIssue::new("clips", "must be an array")),
            None => issues.push(ValidationIssue::new("clips", "missing")),
        }

        let mut samples = Vec::new();
        match root.get("samples").map(Value::as_array) {
            Some(Some(list)) => {
                if list.is_empty() {
                    issues.push(ValidationIssue::new("samples", "must contain at least one sample"));
                }
                let mut seen = HashSet::new();
                for (i, raw) in list.iter().enumerate() {
                    if let Some(s) = check_sample(raw, &format!("samples[{i}]"), &clips, &mut seen, &mut issues) {
                        samples.push(s);
                    }
                }
            }
            Some(None) => issues.push(ValidationIssue::new("samples", "must be an array")),
            None => issues.push(ValidationIssue::new("samples", "missing")),
        }

        if issues.is_empty() {
            Ok(Self {
                clips,
                samples,
                base_dir,
            })
        } else {
            Err(Error::Validation(issues))
        }
    }

    pub fn clip(&self, clip_id: &str) -> Option<&FrameManifest> {
        self.clips.get(clip_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &QASample> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

fn check_sample(
    raw: &Value,
    at: &str,
    clips: &BTreeMap<String, FrameManifest>,
    seen: &mut HashSet<String>,
    issues: &mut Vec<ValidationIssue>,
) -> Option<QASample> {
    let Some(obj) = raw.as_object() else {
        issues.push(ValidationIssue::new(at, "sample must be a JSON object"));
        return None;
    };
    let before = issues.len();
    for key in obj.keys().filter(|k| !SAMPLE_FIELDS.contains(&k.as_str())) {
        issues.push(ValidationIssue::new(format!("{at}.{key}"), "unknown field"));
    }
    let mut text = |field: &str| -> Option<String> {
        match obj.get(field) {
            Some(Value::String(s)) if !s.trim().is_empty() => Some(s.clone()),
            Some(Value::String(_)) => {
                issues.push(ValidationIssue::new(format!("{at}.{field}"), "must be non-empty"));
                None
            }
            Some(_) => {
                issues.push(ValidationIssue::new(format!("{at}.{field}"), "must be a string"));
                None
            }
            None => {
                issues.push(ValidationIssue::new(format!("{at}.{field}"), "missing"));
                None
            }
        }
    };
    let sample_id = text("sample_id");
    let clip_id = text("clip_id");
    let question = text("question");
    let reference_answer = text("reference_answer");
    let category = text("category");
    let waterway = text("waterway");
    let split = text("split");

    let name = sample_id.as_deref().unwrap_or("?");
    if let Some(id) = &sample_id {
        if !seen.insert(id.clone()) {
            issues.push(ValidationIssue::new(format!("{at}.sample_id"), format!("duplicate sample_id {id:?}")));
        }
    }
    if let Some(c) = &clip_id {
        if !clips.contains_key(c) {
            issues.push(ValidationIssue::new(
                format!("{at}.clip_id"),
                format!("sample {name:?} references unknown clip {c:?}"),
            ));
        }
    }
    let category = category.and_then(|v| {
        Category::parse(&v).or_else(|| {
            issues.push(ValidationIssue::new(
                format!("{at}.category"),
                format!("unknown category {v:?}; allowed: {}", Category::allowed()),
            ));
            None
        })
    });
    let waterway = waterway.and_then(|v| {
        Waterway::parse(&v).or_else(|| {
            issues.push(ValidationIssue::new(
                format!("{at}.waterway"),
                format!("unknown waterway {v:?}; allowed: {}", Waterway::allowed()),
            ));
            None
        })
    });
    let split = split.and_then(|v| {
        Split::parse(&v).or_else(|| {
            issues.push(ValidationIssue::new(
                format!("{at}.split"),
                format!("unknown split {v:?}; allowed: {}", Split::allowed()),
            ));
            None
        })
    });
    if issues.len() > before {
        return None;
    }
    Some(QASample {
        sample_id: sample_id?,
        clip_id: clip_id?,
        question: question?,
        reference_answer: reference_answer?,
        category: category?,
        waterway: waterway?,
        split: split?,
    })
}

/// Heuristic answer classes: a leading yes/no, a bare count, or anything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    YesNo,
    Count,
    Descriptive,
}

const NUMBER_WORDS: [&str; 21] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

pub fn answer_type(question: &str, answer: &str) -> AnswerType {
    let a = tokenize(answer);
    let first = a.tokens().first().map(String::as_str).unwrap_or("");
    if matches!(first, "yes" | "no") {
        return AnswerType::YesNo;
    }
    let numeric = |t: &str| t.chars().all(|c| c.is_ascii_digit()) || NUMBER_WORDS.contains(&t);
    let q = tokenize(question);
    let how_many = q.tokens().windows(2).any(|w| w[0] == "how" && w[1] == "many");
    if !first.is_empty() && numeric(first) && (how_many || a.len() <= 3) {
        return AnswerType::Count;
    }
    AnswerType::Descriptive
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub clips: usize,
    pub min_s: f64,
    pub mean_s: f64,
    pub max_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub samples: usize,
    pub clips: usize,
    pub per_category: BTreeMap<Category, usize>,
    pub per_waterway: BTreeMap<Waterway, usize>,
    pub per_split: BTreeMap<Split, usize>,
    pub answer_types: BTreeMap<AnswerType, usize>,
    pub mean_question_words: f64,
    pub mean_answer_words: f64,
    /// Over clips that declare a duration or frame rate.
    pub duration: Option<DurationStats>,
}

pub fn compute_stats(manifest: &DatasetManifest) -> StatsSummary {
    let mut per_category: BTreeMap<Category, usize> = Category::ALL.iter().map(|c| (*c, 0)).collect();
    let mut per_waterway: BTreeMap<Waterway, usize> = Waterway::ALL.iter().map(|w| (*w, 0)).collect();
    let mut per_split: BTreeMap<Split, usize> = Split::ALL.iter().map(|s| (*s, 0)).collect();
    let mut answer_types: BTreeMap<AnswerType, usize> =
        [AnswerType::YesNo, AnswerType::Count, AnswerType::Descriptive].into_iter().map(|t| (t, 0)).collect();
    let (mut qw, mut aw) = (0usize, 0usize);
    for s in &manifest.samples {
        *per_category.entry(s.category).or_default() += 1;
        *per_waterway.entry(s.waterway).or_default() += 1;
        *per_split.entry(s.split).or_default() += 1;
        *answer_types.entry(answer_type(&s.question, &s.reference_answer)).or_default() += 1;
        qw += tokenize(&s.question).len();
        aw += tokenize(&s.reference_answer).len();
    }
    let n = manifest.samples.len().max(1) as f64;
    let durations: Vec<f64> = manifest.clips.values().filter_map(FrameManifest::duration).collect();
    let duration = (!durations.is_empty()).then(|| DurationStats {
        clips: durations.len(),
        min_s: durations.iter().copied().fold(f64::INFINITY, f64::min),
        mean_s: durations.iter().sum::<f64>() / durations.len() as f64,
        max_s: durations.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });
    StatsSummary {
        samples: manifest.samples.len(),
        clips: manifest.clips.len(),
        per_category,
        per_waterway,
        per_split,
        answer_types,
        mean_question_words: qw as f64 / n,
        mean_answer_words: aw as f64 / n,
        duration,
    }
}

impl StatsSummary {
    pub fn render_text(&self) -> String {
        let mut out = format!("samples: {}\nclips: {}\n", self.samples, self.clips);
        out += &format!("mean question length (words): {:.2}\n", self.mean_question_words);
        out += &format!("mean answer length (words): {:.2}\n", self.mean_answer_words);
        if let Some(d) = &self.duration {
            out += &format!(
                "clip duration (s): min {:.2}, mean {:.2}, max {:.2} over {} clips\n",
                d.min_s, d.mean_s, d.max_s, d.clips
            );
        }
        out += "\ncategory\n";
        for (k, v) in &self.per_category {
            out += &format!("  {:<20}{v}\n", k.as_str());
        }
        out += "\nwaterway\n";
        for (k, v) in &self.per_waterway {
            out += &format!("  {:<20}{v}\n", k.as_str());
        }
        out += "\nsplit\n";
        for (k, v) in &self.per_split {
            out += &format!("  {:<20}{v}\n", k.as_str());
        }
        out += "\nanswer type (heuristic)\n";
        for (k, v) in &self.answer_types {
            let name = match k {
                AnswerType::YesNo => "yes/no",
                AnswerType::Count => "count",
                AnswerType::Descriptive => "descriptive",
            };
            out += &format!("  {name:<20}{v}\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn doc(samples: Value) -> String {
        json!({
            "clips": [
                { "clip_id": "c1", "frames": ["a.jpg", "b.jpg"], "duration_s": 4.0 },
                { "clip_id": "c2", "frames": ["x.jpg"], "fps": 0.5 }
            ],
            "samples": samples,
        })
        .to_string()
    }

    fn sample(id: &str, q: &str, a: &str) -> Value {
        json!({
            "sample_id": id, "clip_id": "c1", "question": q, "reference_answer": a,
            "category": "Perception", "waterway": "River", "split": "test"
        })
    }

    fn issues(text: &str) -> Vec<ValidationIssue> {
        match DatasetManifest::parse(text, None) {
            Err(Error::Validation(v)) => v,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn loads_valid_fixture() {
        let m = DatasetManifest::parse(&doc(json!([sample("s1", "a b c", "yes"), sample("s2", "a b c d e", "no")])), None).unwrap();
        assert_eq!(m.samples.len(), 2);
        let st = compute_stats(&m);
        assert_eq!(st.mean_question_words, 4.0);
        assert_eq!(st.per_category[&Category::Perception], 2);
        assert_eq!(st.answer_types[&AnswerType::YesNo], 2);
        let d = st.duration.unwrap();
        assert_eq!((d.min_s, d.mean_s, d.max_s), (2.0, 3.0, 4.0));
    }

    #[test]
    fn unknown_clip_names_the_sample() {
        let mut s = sample("s9", "q", "a");
        s["clip_id"] = json!("nope");
        let v = issues(&doc(json!([s])));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "samples[0].clip_id");
        assert!(v[0].message.contains("\"s9\""));
    }

    #[test]
    fn bad_category_lists_allowed_values() {
        let mut s = sample("s1", "q", "a");
        s["category"] = json!("Q");
        let v = issues(&doc(json!([s])));
        assert_eq!(v[0].field, "samples[0].category");
        for c in Category::ALL {
            assert!(v[0].message.contains(c.as_str()));
        }
    }

    #[test]
    fn reports_every_violation() {
        let mut a = sample("s1", "", "a");
        a["split"] = json!("dev");
        let b = sample("s1", "q", "a");
        let v = issues(&doc(json!([a, b])));
        let fields: Vec<&str> = v.iter().map(|i| i.field.as_str()).collect();
        assert_eq!(fields, ["samples[0].question", "samples[0].split", "samples[1].sample_id"]);
    }

    #[test]
    fn label_parsing_is_lenient_about_spelling() {
        assert_eq!(Category::parse("scene understanding"), Some(Category::SceneUnderstanding));
        assert_eq!(Category::parse("Causal & Predictive"), Some(Category::CausalPredictive));
        assert_eq!(Split::parse("TEST"), Some(Split::Test));
        assert_eq!(Waterway::parse("harbour"), None);
    }

    #[test]
    fn answer_type_heuristic() {
        assert_eq!(answer_type("Is it safe?", "No, the channel is blocked."), AnswerType::YesNo);
        assert_eq!(answer_type("How many boats are there?", "3 boats"), AnswerType::Count);
        assert_eq!(answer_type("How many?", "two"), AnswerType::Count);
        assert_eq!(answer_type("What is it?", "A red can buoy."), AnswerType::Descriptive);
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let v = issues("{\n \"clips\": [\n");
        assert!(v[0].field.starts_with("line "));
    }
}

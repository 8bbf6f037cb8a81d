//! Synthetic activity-grammar corpora, JSONL ingestion, and the
//! observe-p% / predict-q% protocol split.
//!
//! A grammar is a set of activities, each a weighted set of action-sequence
//! templates. Videos sample a template, per-action frame durations, and
//! per-frame features drawn from the action's class mean plus isotropic
//! Gaussian noise. Generation derives one RNG stream per video from
//! (seed, video index), so parallel and serial generation agree.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::video_stream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One labeled action occupying frames [start, end).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// One video: per-frame features plus the labeled spans that tile it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub features: Vec<Vec<f64>>,
    pub actions: Vec<ActionSpan>,
    pub split: Split,
}

impl VideoRecord {
    pub fn frame_count(&self) -> usize {
        self.features.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Spans must tile [0, T) in nondecreasing start order with a
    /// consistent feature dimension.
    pub fn validate(&self) -> Result<()> {
        let t = self.frame_count();
        if t == 0 {
            return Err(Error::Validation(format!("video {}: no frames", self.id)));
        }
        let d = self.feature_dim();
        if let Some(bad) = self.features.iter().position(|f| f.len() != d) {
            return Err(Error::Validation(format!(
                "video {}: frame {} has dimension {}, expected d={}",
                self.id,
                bad,
                self.features[bad].len(),
                d
            )));
        }
        if self.actions.is_empty() {
            return Err(Error::Validation(format!(
                "video {}: no action spans",
                self.id
            )));
        }
        let mut cursor = 0usize;
        for (i, span) in self.actions.iter().enumerate() {
            if span.start != cursor {
                let kind = if span.start < cursor {
                    "overlaps"
                } else {
                    "leaves a gap before"
                };
                return Err(Error::Validation(format!(
                    "video {}: span {} ('{}' at [{}, {})) {} frame {}",
                    self.id, i, span.label, span.start, span.end, kind, cursor
                )));
            }
            if span.end <= span.start {
                return Err(Error::Validation(format!(
                    "video {}: span {} ('{}') is empty",
                    self.id, i, span.label
                )));
            }
            cursor = span.end;
        }
        if cursor != t {
            return Err(Error::Validation(format!(
                "video {}: spans cover [0, {}) but the video has {} frames",
                self.id, cursor, t
            )));
        }
        Ok(())
    }

    /// Coarse action sequence: span labels in start order.
    pub fn coarse_sequence(&self) -> Vec<String> {
        self.actions.iter().map(|s| s.label.clone()).collect()
    }

    /// Label of a single frame.
    pub fn frame_label(&self, frame: usize) -> &str {
        for span in &self.actions {
            if frame >= span.start && frame < span.end {
                return &span.label;
            }
        }
        unreachable!("validated spans tile the video")
    }
}

/// Collapse consecutive equal labels into one symbol each.
pub fn collapse_runs(labels: &[&str]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for &l in labels {
        if out.last().map(String::as_str) != Some(l) {
            out.push(l.to_string());
        }
    }
    out
}

/// Weighted action-sequence template.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Template {
    pub actions: Vec<String>,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Activity {
    pub name: String,
    pub templates: Vec<Template>,
}

/// Declarative grammar description; built-in profiles and TOML files both
/// deserialize into this.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrammarProfile {
    pub name: String,
    pub actions: Vec<String>,
    pub activities: Vec<Activity>,
    /// Every distinct proper prefix has a unique continuation.
    pub deterministic: bool,
    /// Class means pairwise separated by at least 4 sigma.
    pub separable: bool,
    pub duration_min: usize,
    pub duration_max: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub mean_scale: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Validated grammar with derived per-class feature means.
#[derive(Debug)]
pub struct ActivityGrammar {
    pub profile: GrammarProfile,
    pub class_means: Vec<Vec<f64>>,
}

impl ActivityGrammar {
    pub fn new(profile: GrammarProfile) -> Result<ActivityGrammar> {
        if profile.actions.is_empty() {
            return Err(Error::Config(format!(
                "grammar '{}': empty action vocabulary",
                profile.name
            )));
        }
        if profile.activities.is_empty()
            || profile.activities.iter().any(|a| a.templates.is_empty())
        {
            return Err(Error::Config(format!(
                "grammar '{}': every activity needs at least one template",
                profile.name
            )));
        }
        if profile.duration_min == 0 || profile.duration_max < profile.duration_min {
            return Err(Error::Config(format!(
                "grammar '{}': bad duration range [{}, {}]",
                profile.name, profile.duration_min, profile.duration_max
            )));
        }
        if profile.feature_dim < profile.actions.len() {
            return Err(Error::Config(format!(
                "grammar '{}': feature_dim {} must be >= {} action classes",
                profile.name,
                profile.feature_dim,
                profile.actions.len()
            )));
        }
        let known: HashMap<&str, usize> = profile
            .actions
            .iter()
            .enumerate()
            .map(|(i, a)| (a.as_str(), i))
            .collect();
        for activity in &profile.activities {
            for tpl in &activity.templates {
                if tpl.actions.is_empty() {
                    return Err(Error::Config(format!(
                        "grammar '{}': activity '{}' has an empty template",
                        profile.name, activity.name
                    )));
                }
                if tpl.weight <= 0.0 {
                    return Err(Error::Config(format!(
                        "grammar '{}': activity '{}' has a non-positive template weight",
                        profile.name, activity.name
                    )));
                }
                for a in &tpl.actions {
                    if !known.contains_key(a.as_str()) {
                        return Err(Error::Config(format!(
                            "grammar '{}': unknown action '{}' in activity '{}'",
                            profile.name, a, activity.name
                        )));
                    }
                }
            }
        }
        if profile.deterministic {
            check_prefix_uniqueness(&profile)?;
        }
        // Scaled standard-basis means: pairwise distance sqrt(2) * scale.
        let class_means: Vec<Vec<f64>> = (0..profile.actions.len())
            .map(|c| {
                let mut m = vec![0.0; profile.feature_dim];
                m[c] = profile.mean_scale;
                m
            })
            .collect();
        if profile.separable && profile.noise_sigma > 0.0 {
            let min_dist = (2.0f64).sqrt() * profile.mean_scale;
            if min_dist < 4.0 * profile.noise_sigma {
                return Err(Error::Config(format!(
                    "grammar '{}': class means only {:.3} apart but 4 sigma = {:.3}",
                    profile.name,
                    min_dist,
                    4.0 * profile.noise_sigma
                )));
            }
        }
        Ok(ActivityGrammar {
            profile,
            class_means,
        })
    }

    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.profile.actions.iter().position(|a| a == label)
    }

    /// Sample `n` videos for a split, one derived RNG stream per video.
    pub fn generate_corpus(&self, n: usize, seed: u64, split: Split) -> Vec<VideoRecord> {
        let offset = match split {
            Split::Train => 0,
            Split::Test => 1 << 24,
        };
        (0..n)
            .map(|i| self.generate_video(seed, offset + i, split))
            .collect()
    }

    fn generate_video(&self, seed: u64, index: usize, split: Split) -> VideoRecord {
        let mut rng = video_stream(seed, index);
        let profile = &self.profile;
        let activity = &profile.activities[rng.gen_range(0..profile.activities.len())];
        let total: f64 = activity.templates.iter().map(|t| t.weight).sum();
        let mut pick = rng.gen_range(0.0..total);
        let mut template = &activity.templates[0];
        for t in &activity.templates {
            if pick < t.weight {
                template = t;
                break;
            }
            pick -= t.weight;
        }
        let mut actions = Vec::with_capacity(template.actions.len());
        let mut features = Vec::new();
        let mut cursor = 0usize;
        for label in &template.actions {
            let frames = rng.gen_range(profile.duration_min..=profile.duration_max);
            let class = self.action_index(label).expect("validated label");
            let mean = &self.class_means[class];
            for _ in 0..frames {
                let mut f = mean.clone();
                if profile.noise_sigma > 0.0 {
                    for v in f.iter_mut() {
                        *v += profile.noise_sigma * normal_sample(&mut rng);
                    }
                }
                features.push(f);
            }
            actions.push(ActionSpan {
                label: label.clone(),
                start: cursor,
                end: cursor + frames,
            });
            cursor += frames;
        }
        let prefix = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        VideoRecord {
            id: format!("{}-{}-{:05}", profile.name, prefix, index),
            features,
            actions,
            split,
        }
    }
}

/// Every proper prefix across all templates must map to a single
/// continuation.
fn check_prefix_uniqueness(profile: &GrammarProfile) -> Result<()> {
    let mut continuations: HashMap<Vec<&str>, (&str, Vec<&str>)> = HashMap::new();
    for activity in &profile.activities {
        for tpl in &activity.templates {
            let seq: Vec<&str> = tpl.actions.iter().map(String::as_str).collect();
            for k in 1..seq.len() {
                let prefix = seq[..k].to_vec();
                let continuation = seq[k..].to_vec();
                match continuations.get(&prefix) {
                    None => {
                        continuations.insert(prefix, (activity.name.as_str(), continuation));
                    }
                    Some((other, existing)) if *existing != continuation => {
                        return Err(Error::Config(format!(
                            "grammar '{}' is not deterministic: prefix {:?} continues as {:?} \
                             (activity '{}') but also as {:?} (activity '{}')",
                            profile.name, prefix, existing, other, continuation, activity.name
                        )));
                    }
                    Some(_) => {}
                }
            }
        }
    }
    Ok(())
}

/// Box-Muller standard normal draw.
fn normal_sample(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

const KITCHEN_ACTIONS: [&str; 8] = [
    "boil", "chop", "fry", "plate", "season", "serve", "stir", "wash",
];

fn kitchen_activity(name: &str, templates: &[(&[&str], f64)]) -> Activity {
    Activity {
        name: name.to_string(),
        templates: templates
            .iter()
            .map(|(actions, weight)| Template {
                actions: actions.iter().map(|s| s.to_string()).collect(),
                weight: *weight,
            })
            .collect(),
    }
}

/// Built-in grammar profiles.
pub fn builtin_profile(name: &str) -> Option<GrammarProfile> {
    match name {
        "deterministic-kitchen" => Some(GrammarProfile {
            name: name.to_string(),
            actions: KITCHEN_ACTIONS.iter().map(|s| s.to_string()).collect(),
            activities: vec![
                kitchen_activity("soup", &[(&["wash", "chop", "boil", "season", "serve"], 1.0)]),
                kitchen_activity(
                    "stir-fry",
                    &[(&["chop", "fry", "stir", "season", "plate"], 1.0)],
                ),
                kitchen_activity("porridge", &[(&["boil", "stir", "season", "serve"], 1.0)]),
                kitchen_activity("omelette", &[(&["stir", "fry", "plate"], 1.0)]),
                kitchen_activity("grill", &[(&["fry", "season", "plate", "serve"], 1.0)]),
                kitchen_activity("sauce", &[(&["season", "boil", "stir", "plate"], 1.0)]),
            ],
            deterministic: true,
            separable: true,
            duration_min: 4,
            duration_max: 8,
            feature_dim: 64,
            noise_sigma: 0.15,
            mean_scale: 1.0,
            n_train: 500,
            n_test: 100,
        }),
        "stochastic-kitchen" => Some(GrammarProfile {
            name: name.to_string(),
            actions: KITCHEN_ACTIONS.iter().map(|s| s.to_string()).collect(),
            activities: vec![
                kitchen_activity(
                    "soup",
                    &[
                        (&["wash", "chop", "boil", "season", "serve"], 0.6),
                        (&["wash", "chop", "boil", "stir", "serve"], 0.4),
                    ],
                ),
                kitchen_activity(
                    "stir-fry",
                    &[
                        (&["chop", "fry", "stir", "plate"], 0.5),
                        (&["chop", "fry", "season", "plate"], 0.3),
                        (&["chop", "fry", "stir", "serve"], 0.2),
                    ],
                ),
                kitchen_activity(
                    "porridge",
                    &[
                        (&["boil", "stir", "season", "serve"], 0.7),
                        (&["boil", "stir", "plate"], 0.3),
                    ],
                ),
                kitchen_activity(
                    "omelette",
                    &[
                        (&["stir", "fry", "plate", "serve"], 0.55),
                        (&["stir", "fry", "season", "plate"], 0.45),
                    ],
                ),
            ],
            deterministic: false,
            separable: true,
            duration_min: 4,
            duration_max: 8,
            feature_dim: 64,
            noise_sigma: 0.15,
            mean_scale: 1.0,
            n_train: 500,
            n_test: 100,
        }),
        _ => None,
    }
}

pub fn available_profiles() -> &'static [&'static str] {
    &["deterministic-kitchen", "stochastic-kitchen"]
}

/// Load a grammar from a TOML file.
pub fn load_grammar_file(path: &Path) -> Result<ActivityGrammar> {
    let text = std::fs::read_to_string(path)?;
    let profile: GrammarProfile = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("grammar file {}: {e}", path.display())))?;
    ActivityGrammar::new(profile)
}

/// Write one JSON object per line.
pub fn save_jsonl(records: &[VideoRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Validation(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read and validate a JSONL corpus. Parse failures carry the line number;
/// invariant violations name the offending record.
pub fn load_jsonl(path: &Path) -> Result<Vec<VideoRecord>> {
    let file = File::open(path)?;
    let mut records = Vec::new();
    let mut expected_dim: Option<usize> = None;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: VideoRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        record.validate()?;
        let d = record.feature_dim();
        match expected_dim {
            None => expected_dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Validation(format!(
                    "video {}: feature dimension {} differs from expected d={}",
                    record.id, d, expected
                )));
            }
            _ => {}
        }
        records.push(record);
    }
    Ok(records)
}

/// Windows of the observe-p% / predict-q% protocol. The observed range is
/// [0, floor(pT/100)) and the target range [floor(pT/100), floor((p+q)T/100)),
/// so the boundary frame belongs to the target window and consecutive
/// windows tile exactly.
#[derive(Debug, Clone)]
pub struct ProtocolExample {
    pub observed: Vec<Vec<f64>>,
    pub observed_coarse: Vec<String>,
    pub observed_frame_labels: Vec<String>,
    pub target_frame_labels: Vec<String>,
    pub future_coarse: Vec<String>,
    pub z: usize,
}

pub fn split_protocol(record: &VideoRecord, p: u32, q: u32) -> Result<Option<ProtocolExample>> {
    if p + q > 100 {
        return Err(Error::Contract(format!(
            "protocol p={p}, q={q} exceeds 100%"
        )));
    }
    let t = record.frame_count();
    let obs_end = p as usize * t / 100;
    let target_end = (p + q) as usize * t / 100;
    if obs_end == 0 || target_end <= obs_end {
        return Ok(None); // skip-record: empty observed or target window
    }
    let observed = record.features[..obs_end].to_vec();
    let observed_labels: Vec<&str> = (0..obs_end).map(|f| record.frame_label(f)).collect();
    let target_labels: Vec<&str> = (obs_end..target_end)
        .map(|f| record.frame_label(f))
        .collect();
    Ok(Some(ProtocolExample {
        observed,
        observed_coarse: collapse_runs(&observed_labels),
        observed_frame_labels: observed_labels.iter().map(|s| s.to_string()).collect(),
        future_coarse: collapse_runs(&target_labels),
        target_frame_labels: target_labels.iter().map(|s| s.to_string()).collect(),
        z: target_end - obs_end,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grammar(name: &str) -> ActivityGrammar {
        ActivityGrammar::new(builtin_profile(name).unwrap()).unwrap()
    }

    #[test]
    fn corpus_generation_is_seed_deterministic() {
        let g = grammar("deterministic-kitchen");
        let a = g.generate_corpus(5, 9, Split::Train);
        let b = g.generate_corpus(5, 9, Split::Train);
        assert_eq!(a, b);
        let c = g.generate_corpus(5, 10, Split::Train);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_noise_reproduces_class_means() {
        let mut profile = builtin_profile("deterministic-kitchen").unwrap();
        profile.noise_sigma = 0.0;
        let g = ActivityGrammar::new(profile).unwrap();
        for video in g.generate_corpus(3, 1, Split::Train) {
            for (i, f) in video.features.iter().enumerate() {
                let class = g.action_index(video.frame_label(i)).unwrap();
                assert_eq!(f, &g.class_means[class]);
            }
        }
    }

    #[test]
    fn empirical_means_obey_law_of_large_numbers() {
        let g = grammar("deterministic-kitchen");
        let corpus = g.generate_corpus(1300, 7, Split::Train);
        let sigma = g.profile.noise_sigma;
        let mut sums: HashMap<usize, (Vec<f64>, usize)> = HashMap::new();
        for video in &corpus {
            for (i, f) in video.features.iter().enumerate() {
                let class = g.action_index(video.frame_label(i)).unwrap();
                let entry = sums.entry(class).or_insert_with(|| (vec![0.0; f.len()], 0));
                for (s, v) in entry.0.iter_mut().zip(f) {
                    *s += v;
                }
                entry.1 += 1;
            }
        }
        for (class, (sum, count)) in sums {
            assert!(count >= 1000, "need enough frames per class, got {count}");
            let bound = 5.0 * sigma / (count as f64).sqrt();
            for (dim, s) in sum.iter().enumerate() {
                let mean = s / count as f64;
                assert!(
                    (mean - g.class_means[class][dim]).abs() < bound,
                    "class {class} dim {dim}: mean {mean} vs {} (bound {bound})",
                    g.class_means[class][dim]
                );
            }
        }
    }

    #[test]
    fn deterministic_profile_rejects_ambiguous_prefixes() {
        let mut profile = builtin_profile("deterministic-kitchen").unwrap();
        profile
            .activities
            .push(kitchen_activity("clash", &[(&["wash", "chop", "fry"], 1.0)]));
        let err = ActivityGrammar::new(profile).unwrap_err().to_string();
        assert!(err.contains("not deterministic"), "{err}");
    }

    #[test]
    fn jsonl_round_trip_preserves_records() {
        let g = grammar("stochastic-kitchen");
        let corpus = g.generate_corpus(4, 3, Split::Test);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        save_jsonl(&corpus, &path).unwrap();
        let loaded = load_jsonl(&path).unwrap();
        assert_eq!(corpus, loaded);
    }

    #[test]
    fn jsonl_rejects_overlap_and_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let overlapping = VideoRecord {
            id: "bad-video".into(),
            features: vec![vec![0.0]; 4],
            actions: vec![
                ActionSpan {
                    label: "a".into(),
                    start: 0,
                    end: 3,
                },
                ActionSpan {
                    label: "b".into(),
                    start: 2,
                    end: 4,
                },
            ],
            split: Split::Train,
        };
        save_jsonl(&[overlapping], &path).unwrap();
        let err = load_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains("bad-video") && err.contains("overlaps"), "{err}");

        std::fs::write(&path, "{\"id\": 3}\n").unwrap();
        let err = load_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn jsonl_rejects_inconsistent_feature_dim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dims.jsonl");
        let mk = |id: &str, d: usize| VideoRecord {
            id: id.into(),
            features: vec![vec![0.0; d]; 2],
            actions: vec![ActionSpan {
                label: "a".into(),
                start: 0,
                end: 2,
            }],
            split: Split::Train,
        };
        save_jsonl(&[mk("v0", 3), mk("v1", 4)], &path).unwrap();
        let err = load_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains("expected d=3"), "{err}");
    }

    fn labeled_video(spans: &[(&str, usize)]) -> VideoRecord {
        let mut actions = Vec::new();
        let mut cursor = 0;
        for (label, frames) in spans {
            actions.push(ActionSpan {
                label: label.to_string(),
                start: cursor,
                end: cursor + frames,
            });
            cursor += frames;
        }
        VideoRecord {
            id: "v".into(),
            features: vec![vec![0.0]; cursor],
            actions,
            split: Split::Test,
        }
    }

    #[test]
    fn split_protocol_window_arithmetic() {
        let video = labeled_video(&[("a", 50), ("b", 50)]);
        let ex = split_protocol(&video, 20, 10).unwrap().unwrap();
        assert_eq!(ex.observed.len(), 20);
        assert_eq!(ex.z, 10);
        assert_eq!(ex.target_frame_labels.len(), 10);
        assert_eq!(ex.future_coarse, vec!["a".to_string()]);
        assert!(split_protocol(&video, 60, 50).is_err());
        assert!(split_protocol(&video, 0, 10).unwrap().is_none());
        assert!(split_protocol(&video, 100, 0).unwrap().is_none());
    }

    #[test]
    fn split_protocol_windows_tile() {
        let g = grammar("deterministic-kitchen");
        for video in g.generate_corpus(20, 5, Split::Test) {
            for p in [10u32, 20, 30] {
                let wide = split_protocol(&video, p, 20).unwrap();
                let first = split_protocol(&video, p, 10).unwrap();
                let second = split_protocol(&video, p + 10, 10).unwrap();
                let mut joined = Vec::new();
                if let Some(f) = &first {
                    joined.extend(f.target_frame_labels.clone());
                }
                if let Some(s) = &second {
                    joined.extend(s.target_frame_labels.clone());
                }
                let wide_labels = wide.map(|w| w.target_frame_labels).unwrap_or_default();
                assert_eq!(wide_labels, joined, "video {} p={}", video.id, p);
            }
        }
    }

    #[test]
    fn coarse_sequence_equals_collapsed_frame_labels() {
        let g = grammar("stochastic-kitchen");
        for video in g.generate_corpus(10, 2, Split::Train) {
            let labels: Vec<&str> = (0..video.frame_count())
                .map(|f| video.frame_label(f))
                .collect();
            assert_eq!(video.coarse_sequence(), collapse_runs(&labels));
        }
    }

    #[test]
    fn deterministic_corpus_has_unique_continuations() {
        let g = grammar("deterministic-kitchen");
        let corpus = g.generate_corpus(100, 11, Split::Train);
        let mut seen: HashMap<Vec<String>, Vec<String>> = HashMap::new();
        for video in &corpus {
            let seq = video.coarse_sequence();
            for k in 1..seq.len() {
                let prefix = seq[..k].to_vec();
                let cont = seq[k..].to_vec();
                if let Some(existing) = seen.get(&prefix) {
                    assert_eq!(existing, &cont, "prefix {prefix:?} is ambiguous");
                } else {
                    seen.insert(prefix, cont);
                }
            }
        }
    }
}

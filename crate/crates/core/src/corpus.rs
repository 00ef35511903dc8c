//! Synthetic starter corpus: nine unit-pattern profiles, three activities
//! composed of them, and script builders that lay profiles out in time.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{PatternProfile, SynthSegment, CHANNELS};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityComposition {
    pub name: String,
    pub patterns: Vec<String>,
}

/// How scripts are laid out in time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptPlan {
    /// Seconds of each pattern performed alone, without an activity, before
    /// the activity blocks start.
    pub pattern_warmup_s: f64,
    /// Length of one single-activity block.
    pub block_s: f64,
    pub segment_min_s: f64,
    pub segment_max_s: f64,
}

impl Default for ScriptPlan {
    fn default() -> Self {
        // 62 s alone yields 121 windows per pattern; 60 s blocks hold 120
        // window steps.
        ScriptPlan { pattern_warmup_s: 62.0, block_s: 60.0, segment_min_s: 4.0, segment_max_s: 10.0 }
    }
}

impl ScriptPlan {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pattern_warmup_s >= 0.0
            && self.block_s > 0.0
            && self.segment_min_s > 0.0
            && self.segment_min_s <= self.segment_max_s
            && self.segment_max_s.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::argument(format!("invalid script plan {self:?}")))
        }
    }
}

/// Pattern profiles plus activity compositions; the `--profiles` file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub patterns: Vec<PatternProfile>,
    #[serde(default)]
    pub activities: Vec<ActivityComposition>,
    #[serde(default)]
    pub plan: ScriptPlan,
}

fn profile(
    name: &str,
    baseline: [f64; CHANNELS],
    amplitude: [f64; CHANNELS],
    freq: [f64; CHANNELS],
    noise: f64,
) -> PatternProfile {
    PatternProfile { name: name.into(), baseline, amplitude, frequency_hz: freq, noise_sigma: noise }
}

const STILL: [f64; CHANNELS] = [0.01, 0.01, 0.01, 1.0, 1.0, 1.0, 0.01, 0.01, 0.01];

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Corpus {
    /// The built-in nine-pattern, three-activity corpus.
    pub fn starter() -> Corpus {
        let strum = [0.15, 0.10, 0.08, 80.0, 20.0, 30.0, 0.10, 0.08, 0.05];
        let strum_f = [3.5, 3.5, 3.5, 3.5, 3.5, 3.5, 1.75, 1.75, 1.75];
        let patterns = vec![
            profile(
                "shooting",
                [0.30, -0.60, 0.50, 0.0, 0.0, 0.0, -0.40, 1.10, 0.20],
                [0.60, 0.70, 0.50, 120.0, 150.0, 60.0, 0.50, 0.70, 0.20],
                [0.6; CHANNELS],
                0.06,
            ),
            profile(
                "walking",
                [0.90, 0.15, -0.20, 0.0, 0.0, 0.0, 1.30, 0.10, 0.30],
                [0.25, 0.10, 0.20, 40.0, 15.0, 25.0, 0.25, 0.10, 0.05],
                [1.8, 1.8, 1.8, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9],
                0.05,
            ),
            profile(
                "running",
                [0.70, 0.30, 0.40, 0.0, 0.0, 0.0, 0.60, 0.80, 0.30],
                [0.90, 0.40, 0.60, 160.0, 60.0, 90.0, 0.60, 0.30, 0.15],
                [2.8, 2.8, 2.8, 1.4, 1.4, 1.4, 1.4, 1.4, 1.4],
                0.08,
            ),
            profile(
                "dribbling",
                [0.40, 0.10, 0.85, 0.0, 0.0, 0.0, 0.30, 0.30, 0.25],
                [0.30, 0.20, 0.80, 200.0, 40.0, 50.0, 0.20, 0.50, 0.10],
                [2.2; CHANNELS],
                0.07,
            ),
            profile("guitar_sitting", [0.20, 0.55, 0.75, 0.0, 0.0, 0.0, 0.90, -0.50, 0.80], strum, strum_f, 0.04),
            profile("guitar_standing", [0.55, 0.45, 0.60, 0.0, 0.0, 0.0, 0.80, 0.10, 0.70], strum, strum_f, 0.04),
            profile("guitar_foot_on_chair", [0.40, 0.65, 0.55, 0.0, 0.0, 0.0, 1.05, -0.20, 0.95], strum, strum_f, 0.04),
            profile(
                "idle_sitting",
                [0.05, -0.15, 0.98, 0.0, 0.0, 0.0, 0.10, -0.30, 0.50],
                STILL,
                [0.2; CHANNELS],
                0.02,
            ),
            profile(
                "idle_standing",
                [0.97, 0.10, -0.10, 0.0, 0.0, 0.0, 1.40, 0.05, 0.30],
                STILL,
                [0.2; CHANNELS],
                0.02,
            ),
        ];
        let activities = vec![
            ActivityComposition {
                name: "LIVE_CONCERT".into(),
                patterns: names(&["guitar_standing", "guitar_foot_on_chair", "guitar_sitting", "running", "walking"]),
            },
            ActivityComposition {
                name: "GUITAR_PRACTICE".into(),
                patterns: names(&["guitar_sitting", "idle_sitting"]),
            },
            ActivityComposition {
                name: "PLAY_BASKETBALL".into(),
                patterns: names(&["running", "walking", "shooting", "dribbling"]),
            },
        ];
        Corpus { patterns, activities, plan: ScriptPlan::default() }
    }

    /// Patterns outside the starter set, for novelty experiments.
    pub fn extra_patterns() -> Vec<PatternProfile> {
        vec![
            profile("reading", [0.10, -0.60, 0.75, 0.0, 0.0, 0.0, -0.30, -0.80, 0.10], STILL, [0.1; CHANNELS], 0.02),
            profile(
                "boxing",
                [-0.80, 0.90, 0.20, 0.0, 0.0, 0.0, 2.50, -1.20, -1.50],
                [1.20, 0.80, 0.60, 250.0, 120.0, 180.0, 0.40, 0.40, 0.30],
                [4.0; CHANNELS],
                0.10,
            ),
        ]
    }

    pub fn from_json(text: &str) -> Result<Corpus> {
        let c: Corpus = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        Corpus::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        for (i, p) in self.patterns.iter().enumerate() {
            p.validate()?;
            if self.patterns[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::argument(format!("duplicate pattern {:?}", p.name)));
            }
        }
        for a in &self.activities {
            if a.patterns.is_empty() {
                return Err(Error::argument(format!("activity {:?} has no patterns", a.name)));
            }
            for p in &a.patterns {
                if self.profile(p).is_none() {
                    return Err(Error::argument(format!("activity {:?} uses unknown pattern {p:?}", a.name)));
                }
            }
        }
        Ok(())
    }

    pub fn profile(&self, name: &str) -> Option<&PatternProfile> {
        self.patterns.iter().find(|p| p.name == name)
    }

    pub fn activity(&self, name: &str) -> Option<&ActivityComposition> {
        self.activities.iter().find(|a| a.name == name)
    }

    pub fn pattern_names(&self) -> Vec<String> {
        self.patterns.iter().map(|p| p.name.clone()).collect()
    }

    pub fn activity_names(&self) -> Vec<String> {
        self.activities.iter().map(|a| a.name.clone()).collect()
    }

    /// Every pattern once, `seconds` each, with no activity label.
    pub fn pattern_script(&self, seconds: f64) -> Vec<SynthSegment> {
        self.patterns.iter().map(|p| SynthSegment { profile: p.clone(), duration_s: seconds, activity: None }).collect()
    }

    /// One block of `activity`: random member patterns in segments of
    /// `segment_min_s..=segment_max_s`, never the same pattern twice in a
    /// row when the activity has more than one.
    pub fn activity_block(&self, activity: &str, rng: &mut ChaCha8Rng) -> Result<Vec<SynthSegment>> {
        let comp = self.activity(activity).ok_or_else(|| Error::argument(format!("unknown activity {activity:?}")))?;
        let plan = self.plan;
        let mut out: Vec<SynthSegment> = Vec::new();
        let mut left = plan.block_s;
        let mut prev: Option<&str> = None;
        while left > 1e-9 {
            let mut len = rng.random_range(plan.segment_min_s..=plan.segment_max_s);
            len = (len * 20.0).round() / 20.0;
            if left - len < plan.segment_min_s {
                len = left;
            }
            let choices: Vec<&String> =
                comp.patterns.iter().filter(|p| Some(p.as_str()) != prev || comp.patterns.len() == 1).collect();
            let name = choices.choose(rng).expect("non-empty composition");
            prev = Some(name.as_str());
            let profile = self.profile(name).expect("validated composition").clone();
            out.push(SynthSegment { profile, duration_s: len, activity: Some(comp.name.clone()) });
            left -= len;
        }
        Ok(out)
    }

    /// `blocks` activity blocks cycling through shuffled orders of all
    /// activities.
    pub fn activity_script(&self, blocks: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SynthSegment>> {
        Ok(self.activity_script_labeled(blocks, rng)?.into_iter().flat_map(|(_, s)| s).collect())
    }

    /// Like [`Corpus::activity_script`], keeping each block's activity.
    pub fn activity_script_labeled(
        &self,
        blocks: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<(String, Vec<SynthSegment>)>> {
        if self.activities.is_empty() {
            return Err(Error::argument("corpus defines no activities"));
        }
        let mut order: Vec<String> = Vec::new();
        let mut out = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            if order.is_empty() {
                order = self.activity_names();
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
            }
            let a = order.remove(0);
            let segs = self.activity_block(&a, rng)?;
            out.push((a, segs));
        }
        Ok(out)
    }

    /// Full script of `seconds`: the pattern warm-up followed by activity
    /// blocks (or a pattern rotation when no activities are defined),
    /// truncated to length.
    pub fn script(&self, seconds: f64, seed: u64) -> Result<Vec<SynthSegment>> {
        if !(seconds > 0.0) {
            return Err(Error::argument("script length must be positive"));
        }
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut segs =
            if self.plan.pattern_warmup_s > 0.0 { self.pattern_script(self.plan.pattern_warmup_s) } else { Vec::new() };
        let mut total: f64 = segs.iter().map(|s| s.duration_s).sum();
        while total < seconds {
            let more = if self.activities.is_empty() {
                let p = self.patterns.choose(&mut rng).ok_or_else(|| Error::argument("corpus has no patterns"))?;
                let len = rng.random_range(self.plan.segment_min_s..=self.plan.segment_max_s);
                vec![SynthSegment { profile: p.clone(), duration_s: len, activity: None }]
            } else {
                self.activity_script(1, &mut rng)?
            };
            total += more.iter().map(|s| s.duration_s).sum::<f64>();
            segs.extend(more);
        }
        truncate_script(&mut segs, seconds);
        Ok(segs)
    }

    /// A unit-label sequence of `seq_len` window steps for `activity`, as a
    /// perfect recognizer would report it: runs of member patterns lasting
    /// `segment_min_s..=segment_max_s` at `steps_per_s`.
    pub fn activity_label_sequence(
        &self,
        activity: &str,
        seq_len: usize,
        steps_per_s: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<String>> {
        let comp = self.activity(activity).ok_or_else(|| Error::argument(format!("unknown activity {activity:?}")))?;
        let (lo, hi) = (
            (self.plan.segment_min_s * steps_per_s).round().max(1.0) as usize,
            (self.plan.segment_max_s * steps_per_s).round().max(1.0) as usize,
        );
        let mut out = Vec::with_capacity(seq_len);
        let mut prev: Option<&String> = None;
        while out.len() < seq_len {
            let choices: Vec<&String> =
                comp.patterns.iter().filter(|p| Some(*p) != prev || comp.patterns.len() == 1).collect();
            let p = *choices.choose(rng).expect("non-empty composition");
            prev = Some(p);
            let run = rng.random_range(lo..=hi).min(seq_len - out.len());
            out.extend(std::iter::repeat_n(p.clone(), run));
        }
        Ok(out)
    }
}

fn truncate_script(segs: &mut Vec<SynthSegment>, seconds: f64) {
    let mut acc = 0.0;
    let mut keep = 0;
    for s in segs.iter_mut() {
        if acc >= seconds - 1e-9 {
            break;
        }
        if acc + s.duration_s > seconds {
            s.duration_s = seconds - acc;
        }
        acc += s.duration_s;
        keep += 1;
    }
    segs.truncate(keep);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synth_stream;

    #[test]
    fn starter_is_valid_and_matches_shipped_file() {
        let c = Corpus::starter();
        c.validate().unwrap();
        assert_eq!(c.patterns.len(), 9);
        let shipped = Corpus::from_json(include_str!("../data/starter_profiles.json")).unwrap();
        assert_eq!(shipped, c);
    }

    #[test]
    fn compositions() {
        let c = Corpus::starter();
        assert_eq!(c.activity("GUITAR_PRACTICE").unwrap().patterns, names(&["guitar_sitting", "idle_sitting"]));
        assert_eq!(c.activity("PLAY_BASKETBALL").unwrap().patterns.len(), 4);
        assert_eq!(c.activity("LIVE_CONCERT").unwrap().patterns.len(), 5);
    }

    #[test]
    fn blocks_have_exact_length() {
        let c = Corpus::starter();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (a, segs) in c.activity_script_labeled(12, &mut rng).unwrap() {
            let total: f64 = segs.iter().map(|s| s.duration_s).sum();
            assert!((total - 60.0).abs() < 1e-9, "{a}: {total}");
            let frames: u64 = segs.iter().map(|s| (s.duration_s * 20.0).round() as u64).sum();
            assert_eq!(frames, 1200);
            let comp = c.activity(&a).unwrap();
            assert!(segs.iter().all(|s| comp.patterns.contains(&s.profile.name)));
            assert!(segs.iter().all(|s| s.activity.as_deref() == Some(a.as_str())));
        }
    }

    #[test]
    fn every_activity_in_each_round() {
        let c = Corpus::starter();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let blocks = c.activity_script_labeled(6, &mut rng).unwrap();
        let mut first: Vec<&str> = blocks[..3].iter().map(|(a, _)| a.as_str()).collect();
        first.sort();
        assert_eq!(first, vec!["GUITAR_PRACTICE", "LIVE_CONCERT", "PLAY_BASKETBALL"]);
    }

    #[test]
    fn script_is_truncated_and_deterministic() {
        let c = Corpus::starter();
        let a = c.script(700.0, 1).unwrap();
        assert_eq!(a, c.script(700.0, 1).unwrap());
        let total: f64 = a.iter().map(|s| s.duration_s).sum();
        assert!((total - 700.0).abs() < 1e-9);
        assert_eq!(synth_stream(a, 1).unwrap().total_frames(), 14_000);
        let short = c.script(10.0, 1).unwrap();
        assert_eq!(short.len(), 1);
        assert_eq!(short[0].profile.name, "shooting");
    }

    #[test]
    fn label_sequences() {
        let c = Corpus::starter();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seq = c.activity_label_sequence("GUITAR_PRACTICE", 120, 2.0, &mut rng).unwrap();
        assert_eq!(seq.len(), 120);
        assert!(seq.iter().all(|l| l == "guitar_sitting" || l == "idle_sitting"));
        assert!(c.activity_label_sequence("DANCING", 120, 2.0, &mut rng).is_err());
    }

    #[test]
    fn rejects_bad_files() {
        assert!(Corpus::from_json("{").is_err());
        let mut c = Corpus::starter();
        c.activities[0].patterns.push("moonwalk".into());
        assert!(c.validate().unwrap_err().to_string().contains("moonwalk"));
    }
}

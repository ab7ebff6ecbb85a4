//! Generator for the built-in scripted suite.
//!
//! Each world is one video with 17 events on an orthogonal topic basis and
//! 20 questions: twelve answered by a single well-located event, five whose
//! event the planner believes is elsewhere, and three needing two events.
//! The generated documents are shipped under `assets/suite/`; a test keeps
//! the two in sync.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{QuestionKind, SuiteQuestion, SuiteWorld};
use crate::backends::scripted::{AnswerRule, LlmPolicy, ScriptedEvent, ScriptedVideo, ScriptedWorld};
use crate::model::{Query, TemporalInterval, VideoDescriptor};
use crate::vector::normalized;

pub const DIM: usize = 32;

const NOUNS: [(&str, &str); 24] = [
    ("kite", "drifts above the lawn"),
    ("bicycle", "leans against a railing"),
    ("umbrella", "opens in the wind"),
    ("balloon", "floats past"),
    ("guitar", "is strummed by a busker"),
    ("ladder", "is carried by two workers"),
    ("lantern", "swings from a hook"),
    ("suitcase", "is wheeled along"),
    ("violin", "is played on a bench"),
    ("candle", "flickers on a table"),
    ("bucket", "is filled with water"),
    ("telescope", "is pointed at the sky"),
    ("scooter", "zips by"),
    ("basket", "is packed with apples"),
    ("drum", "is beaten in rhythm"),
    ("mirror", "catches the sunlight"),
    ("wagon", "is pulled by a child"),
    ("trumpet", "sounds a short fanfare"),
    ("canoe", "is dragged onto the shore"),
    ("parrot", "squawks on a perch"),
    ("tractor", "rumbles across a field"),
    ("goat", "chews on a rope"),
    ("clock", "chimes the hour"),
    ("dog", "chases a tennis ball"),
];

const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "white", "black", "orange", "purple"];

const PLACES: [&str; 8] = [
    "fountain",
    "bridge",
    "bakery",
    "pier",
    "old gate",
    "market stall",
    "bus stop",
    "bandstand",
];

struct TwoStep {
    subject: &'static str,
    cause: &'static str,
    effect: &'static str,
    cause_text: &'static str,
    effect_text: &'static str,
    cause_key: &'static str,
    effect_key: &'static str,
    question: &'static str,
    gold: &'static str,
    effect_only: &'static str,
    cause_only: &'static str,
}

const TWO_STEP: [TwoStep; 6] = [
    TwoStep {
        subject: "cat",
        cause: "fence",
        effect: "hospital",
        cause_text: "the cat falls from the fence and hurts its paw",
        effect_text: "the cat is carried into the animal hospital",
        cause_key: "falls from the fence",
        effect_key: "carried into the animal hospital",
        question: "Why was the cat taken to the hospital?",
        gold: "it fell from the fence",
        effect_only: "it looked unwell",
        cause_only: "it fell",
    },
    TwoStep {
        subject: "baker",
        cause: "oven",
        effect: "firefighters",
        cause_text: "thick smoke pours out of the baker's oven",
        effect_text: "firefighters hurry into the baker's shop",
        cause_key: "smoke pours out of the baker's oven",
        effect_key: "firefighters hurry into",
        question: "Why did the firefighters come to the baker?",
        gold: "the oven was smoking",
        effect_only: "there was an emergency",
        cause_only: "something burned",
    },
    TwoStep {
        subject: "runner",
        cause: "cable",
        effect: "track",
        cause_text: "the runner trips over a loose cable",
        effect_text: "the runner limps off the track holding an ice pack",
        cause_key: "trips over a loose cable",
        effect_key: "limps off the track",
        question: "Why did the runner leave the track?",
        gold: "tripped over a cable",
        effect_only: "was tired",
        cause_only: "tripped",
    },
    TwoStep {
        subject: "farmer",
        cause: "storm",
        effect: "posts",
        cause_text: "a storm knocks down the farmer's fence posts",
        effect_text: "the farmer hammers new posts into the ground",
        cause_key: "storm knocks down",
        effect_key: "hammers new posts",
        question: "Why is the farmer setting new posts?",
        gold: "a storm knocked the old ones down",
        effect_only: "routine repairs",
        cause_only: "storm damage",
    },
    TwoStep {
        subject: "sailor",
        cause: "wave",
        effect: "flare",
        cause_text: "a huge wave cracks the sailor's mast",
        effect_text: "the sailor fires a flare into the sky",
        cause_key: "wave cracks the sailor's mast",
        effect_key: "fires a flare",
        question: "Why did the sailor fire a flare?",
        gold: "a wave cracked the mast",
        effect_only: "to signal someone",
        cause_only: "bad weather",
    },
    TwoStep {
        subject: "child",
        cause: "cone",
        effect: "tears",
        cause_text: "the child drops an ice cream cone on the pavement",
        effect_text: "the child bursts into tears",
        cause_key: "drops an ice cream cone",
        effect_key: "bursts into tears",
        question: "Why did the child burst into tears?",
        gold: "the ice cream fell",
        effect_only: "was tired",
        cause_only: "dropped something",
    },
];

struct WorldPlan {
    name: &'static str,
    duration_s: f64,
    seed: u64,
    noun_offset: usize,
    two_step: [usize; 3],
    /// Replaces the noun of one single-event slot (by index into the eleven).
    featured: Option<(usize, (&'static str, &'static str))>,
}

const PLANS: [WorldPlan; 3] = [
    WorldPlan {
        name: "park",
        duration_s: 600.0,
        seed: 11,
        noun_offset: 0,
        two_step: [0, 1, 2],
        // A dog plays just before the cat is carried into the hospital.
        featured: Some((3, ("dog", "chases a tennis ball across the lawn"))),
    },
    WorldPlan {
        name: "harbor",
        duration_s: 1200.0,
        seed: 23,
        noun_offset: 8,
        two_step: [4, 3, 1],
        featured: None,
    },
    WorldPlan {
        name: "festival",
        duration_s: 3000.0,
        seed: 37,
        noun_offset: 13,
        two_step: [5, 2, 0],
        featured: None,
    },
];

/// Slot order on the timeline. Causes come first so every effect lies well
/// after its cause; mislocalized events sit late enough for the planner's
/// misbelief to land inside the video.
#[derive(Clone, Copy)]
enum Slot {
    Cause(usize),
    Effect(usize),
    Direct(usize),
    Misplaced(usize),
}

const LAYOUT: [Slot; 17] = [
    Slot::Cause(0),
    Slot::Cause(1),
    Slot::Cause(2),
    Slot::Direct(0),
    Slot::Direct(1),
    Slot::Direct(2),
    Slot::Misplaced(0),
    Slot::Direct(3),
    Slot::Misplaced(1),
    Slot::Effect(0),
    Slot::Misplaced(2),
    Slot::Effect(1),
    Slot::Misplaced(3),
    Slot::Effect(2),
    Slot::Misplaced(4),
    Slot::Direct(4),
    Slot::Direct(5),
];

struct Lexicon {
    words: BTreeMap<String, Vec<f64>>,
    next: usize,
}

impl Lexicon {
    fn new() -> Self {
        Lexicon {
            words: BTreeMap::new(),
            next: 1,
        }
    }

    fn word(&mut self, w: &str) -> Vec<f64> {
        if let Some(v) = self.words.get(w) {
            return v.clone();
        }
        assert!(self.next < DIM, "lexicon exceeds the topic basis");
        let v = unit(self.next);
        self.next += 1;
        self.words.insert(w.to_string(), v.clone());
        v
    }

    fn topic(&mut self, words: &[&str]) -> Vec<f64> {
        let mut acc = vec![0.0; DIM];
        for w in words {
            for (a, x) in acc.iter_mut().zip(self.word(w)) {
                *a += x;
            }
        }
        normalized(&acc)
    }
}

fn unit(i: usize) -> Vec<f64> {
    let mut v = vec![0.0; DIM];
    v[i] = 1.0;
    v
}

const LABELS: [&str; 4] = ["A", "B", "C", "D"];

fn generate_world(plan: &WorldPlan) -> SuiteWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let video_id = format!("{}-{}", plan.name, plan.duration_s as u64);
    let slot = plan.duration_s / LAYOUT.len() as f64;
    let len = (slot * 0.55).clamp(16.0, 30.0).round();

    let mut lexicon = Lexicon::new();
    let mut events = Vec::new();
    let mut questions = Vec::new();
    let mut rules = Vec::new();
    let mut offsets = BTreeMap::new();

    for (i, s) in LAYOUT.iter().enumerate() {
        let start = (slot * i as f64 + (slot - len) / 2.0).round();
        let interval = TemporalInterval::new(start, start + len);
        match *s {
            Slot::Cause(k) | Slot::Effect(k) => {
                let t = &TWO_STEP[plan.two_step[k]];
                let is_cause = matches!(s, Slot::Cause(_));
                let (word, text) = if is_cause {
                    (t.cause, t.cause_text)
                } else {
                    (t.effect, t.effect_text)
                };
                let id = format!("{}-{}", t.subject, word);
                events.push(ScriptedEvent {
                    id: id.clone(),
                    interval,
                    description: text.to_string(),
                    glimpse: None,
                    embedding: lexicon.topic(&[t.subject, word]),
                });
                if is_cause {
                    continue;
                }
                let q = t.question.to_lowercase();
                let q = q.trim_end_matches('?').to_string();
                rules.push(AnswerRule {
                    question_contains: vec![q.clone()],
                    requires: vec![t.cause_key.into(), t.effect_key.into()],
                    answer: t.gold.into(),
                    reason: format!("{} because {}", t.effect_text, t.cause_text),
                    confidence: 94,
                });
                rules.push(AnswerRule {
                    question_contains: vec![q.clone()],
                    requires: vec![t.effect_key.into()],
                    answer: t.effect_only.into(),
                    reason: format!("The clip shows that {}, but not what led to it.", t.effect_text),
                    confidence: 60,
                });
                rules.push(AnswerRule {
                    question_contains: vec![q],
                    requires: vec![t.cause_key.into()],
                    answer: t.cause_only.into(),
                    reason: format!("The clip shows that {}.", t.cause_text),
                    confidence: 45,
                });
                questions.push(SuiteQuestion {
                    id: format!("{}-{}", plan.name, questions.len() + 1),
                    query: Query::new(t.question, &video_id),
                    gold_answer: t.gold.into(),
                    gold_interval: interval,
                    kind: QuestionKind::MultiHop,
                    mode: None,
                });
            }
            Slot::Direct(k) | Slot::Misplaced(k) => {
                let misplaced = matches!(s, Slot::Misplaced(_));
                let idx = if misplaced { 6 + k } else { k };
                let (noun, verb) = match plan.featured {
                    Some((i, pick)) if i == idx => pick,
                    _ => NOUNS[(plan.noun_offset + idx) % NOUNS.len()],
                };
                let color = *COLORS.choose(&mut rng).expect("colors");
                let place = *PLACES.choose(&mut rng).expect("places");
                let id = noun.to_string();
                events.push(ScriptedEvent {
                    id: id.clone(),
                    interval,
                    description: format!("a {color} {noun} {verb} near the {place}"),
                    glimpse: misplaced.then(|| format!("the edge of a {noun} is briefly visible")),
                    embedding: lexicon.topic(&[noun]),
                });
                let color_q = format!("What color is the {noun}?");
                rules.push(AnswerRule {
                    question_contains: vec![format!("what color is the {noun}")],
                    requires: vec![format!("{color} {noun}")],
                    answer: color.into(),
                    reason: format!("The clip shows a {color} {noun}."),
                    confidence: 95,
                });
                questions.push(SuiteQuestion {
                    id: format!("{}-{}", plan.name, questions.len() + 1),
                    query: Query::new(color_q, &video_id),
                    gold_answer: color.into(),
                    gold_interval: interval,
                    kind: if misplaced {
                        QuestionKind::Mislocalized
                    } else {
                        QuestionKind::Direct
                    },
                    mode: None,
                });
                if misplaced {
                    offsets.insert(id, -(85.0 + len / 2.0));
                    continue;
                }
                let mut choices: Vec<&str> = PLACES.iter().copied().filter(|p| *p != place).collect();
                choices.shuffle(&mut rng);
                choices.truncate(3);
                choices.push(place);
                choices.shuffle(&mut rng);
                let gold = LABELS[choices.iter().position(|p| *p == place).expect("gold present")];
                rules.push(AnswerRule {
                    question_contains: vec![format!("where is the {noun} seen")],
                    requires: vec![format!("{noun} {verb} near the {place}")],
                    answer: gold.into(),
                    reason: format!("The {noun} appears near the {place}."),
                    confidence: 92,
                });
                let options = LABELS
                    .iter()
                    .zip(&choices)
                    .map(|(l, p)| (l.to_string(), format!("near the {p}")));
                questions.push(SuiteQuestion {
                    id: format!("{}-{}", plan.name, questions.len() + 1),
                    query: Query::new(format!("Where is the {noun} seen?"), &video_id).with_options(options),
                    gold_answer: gold.into(),
                    gold_interval: interval,
                    kind: QuestionKind::Direct,
                    mode: None,
                });
            }
        }
    }

    let world = ScriptedWorld {
        name: plan.name.to_string(),
        videos: vec![ScriptedVideo {
            descriptor: VideoDescriptor::new(&video_id, plan.duration_s, 1.0).expect("valid descriptor"),
            events,
            background_embedding: unit(0),
            background_description: "an empty street with nothing happening".into(),
        }],
        lexicon: lexicon.words,
        llm_policy: LlmPolicy {
            planner_offsets: offsets,
            answer_rules: rules,
            ..LlmPolicy::default()
        },
        noise_seed: plan.seed,
        noise_magnitude: 1e-3,
    };
    SuiteWorld { world, questions }
}

/// The three built-in worlds (600 s, 1200 s and 3000 s).
pub fn generate_default_suite() -> Vec<SuiteWorld> {
    PLANS.iter().map(generate_world).collect()
}

/// Single-event world used as the base of duration sweeps.
pub fn sweep_world() -> SuiteWorld {
    let video_id = "sweep-600";
    let mut lexicon = Lexicon::new();
    let interval = TemporalInterval::new(228.0, 252.0);
    let event = ScriptedEvent {
        id: "kite".into(),
        interval,
        description: "a red kite drifts above the lawn near the fountain".into(),
        glimpse: None,
        embedding: lexicon.topic(&["kite"]),
    };
    let world = ScriptedWorld {
        name: "sweep".into(),
        videos: vec![ScriptedVideo {
            descriptor: VideoDescriptor::new(video_id, 600.0, 1.0).expect("valid descriptor"),
            events: vec![event],
            background_embedding: unit(0),
            background_description: "an empty lawn".into(),
        }],
        lexicon: lexicon.words,
        llm_policy: LlmPolicy {
            answer_rules: vec![AnswerRule {
                question_contains: vec!["what color is the kite".into()],
                requires: vec!["red kite".into()],
                answer: "red".into(),
                reason: "The clip shows a red kite.".into(),
                confidence: 95,
            }],
            ..LlmPolicy::default()
        },
        noise_seed: 5,
        noise_magnitude: 1e-3,
    };
    SuiteWorld {
        world,
        questions: vec![SuiteQuestion {
            id: "sweep-1".into(),
            query: Query::new("What color is the kite?", video_id),
            gold_answer: "red".into(),
            gold_interval: interval,
            kind: QuestionKind::Direct,
            mode: None,
        }],
    }
}

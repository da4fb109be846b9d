use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DropExample;
use crate::error::{Error, Result};
use crate::heads::GoldAnswer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Addition,
    Subtraction,
    Count,
    Span,
    OrdinalSpan,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Addition,
        TaskKind::Subtraction,
        TaskKind::Count,
        TaskKind::Span,
        TaskKind::OrdinalSpan,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub addition: f64,
    pub subtraction: f64,
    pub count: f64,
    pub span: f64,
    pub ordinal_span: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self {
            addition: 1.0,
            subtraction: 1.0,
            count: 1.0,
            span: 1.0,
            ordinal_span: 1.0,
        }
    }
}

impl TaskWeights {
    fn as_array(&self) -> [f64; 5] {
        [
            self.addition,
            self.subtraction,
            self.count,
            self.span,
            self.ordinal_span,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_examples: usize,
    pub seed: u64,
    #[serde(default)]
    pub weights: TaskWeights,
    /// Single-token capitalized names used as entities.
    #[serde(default = "default_entities")]
    pub entities: Vec<String>,
}

fn default_entities() -> Vec<String> {
    [
        "Smith", "Jones", "Brown", "Miller", "Davis", "Wilson", "Moore", "Taylor", "Clark",
        "Lewis", "Walker", "Hall", "Young", "Allen", "King", "Wright", "Scott", "Green", "Baker",
        "Adams", "Nelson", "Carter", "Parker", "Evans",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl SyntheticSpec {
    pub fn new(n_examples: usize, seed: u64) -> Self {
        Self {
            n_examples,
            seed,
            weights: TaskWeights::default(),
            entities: default_entities(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument(
                "task weights must be nonnegative with a positive sum".into(),
            ));
        }
        if self.entities.len() < 6 {
            return Err(Error::InvalidArgument(
                "at least 6 entity names are required".into(),
            ));
        }
        for e in &self.entities {
            let mut chars = e.chars();
            let ok = chars.next().is_some_and(|c| c.is_ascii_uppercase())
                && chars.all(|c| c.is_ascii_alphabetic());
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "entity `{e}` must be one capitalized alphabetic word"
                )));
            }
        }
        Ok(())
    }
}

const QUARTERS: [&str; 4] = ["first", "second", "third", "fourth"];
const LEADS: [&str; 5] = ["Then", "Later,", "After that,", "Soon after,", "Next,"];
const MONTHS: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

fn date_sentence(rng: &mut ChaCha8Rng) -> String {
    let month = MONTHS[rng.gen_range(0..12)];
    let day = rng.gen_range(1..=28);
    let year = rng.gen_range(1990..=2015);
    match rng.gen_range(0..3) {
        0 => format!("The game was played on {month} {day}, {year}."),
        1 => format!("The stadium first opened in {year}."),
        _ => format!("Both teams last met on {month} {day}, {year}."),
    }
}

/// Scoring events as quarter sentences, optionally framed by a date
/// distractor.
fn scoring_passage(events: &[(String, u32)], date: Option<String>) -> String {
    let mut parts: Vec<String> = Vec::new();
    if let Some(d) = &date {
        parts.push(d.clone());
    }
    for (k, (e, n)) in events.iter().enumerate() {
        parts.push(format!(
            "In the {} quarter, {e} scored {n} points.",
            QUARTERS[k % 4]
        ));
    }
    parts.join(" ")
}

/// Addition over events `a` and `b`.
pub fn render_addition(
    events: &[(String, u32)],
    a: usize,
    b: usize,
    date: Option<String>,
) -> (String, String, GoldAnswer) {
    let passage = scoring_passage(events, date);
    let question = format!(
        "How many points did {} and {} score in total?",
        events[a].0, events[b].0
    );
    let gold = GoldAnswer::number(&(events[a].1 + events[b].1).to_string());
    (passage, question, gold)
}

/// `kicks` field goals (entity, yards) mixed with touchdown distractors.
pub fn render_count(
    kicks: &[(String, u32)],
    touchdowns: &[(String, u32)],
    order: &[bool],
    leads: &[usize],
    date: Option<String>,
) -> (String, String, GoldAnswer) {
    let mut parts: Vec<String> = date.into_iter().collect();
    let (mut ki, mut ti) = (0, 0);
    for (k, &is_kick) in order.iter().enumerate() {
        let lead = LEADS[leads.get(k).copied().unwrap_or(0) % LEADS.len()];
        if is_kick {
            let (e, y) = &kicks[ki];
            ki += 1;
            parts.push(format!("{lead} {e} kicked a {y}-yard field goal."));
        } else {
            let (e, y) = &touchdowns[ti];
            ti += 1;
            parts.push(format!("{lead} {e} ran for a {y}-yard touchdown."));
        }
    }
    let question = "How many field goals were kicked?".to_string();
    (
        parts.join(" "),
        question,
        GoldAnswer::number(&kicks.len().to_string()),
    )
}

fn distinct_numbers(rng: &mut ChaCha8Rng, k: usize, lo: u32, hi: u32) -> Vec<u32> {
    let mut pool: Vec<u32> = (lo..=hi).collect();
    pool.shuffle(rng);
    pool.truncate(k);
    pool
}

fn pick_entities(rng: &mut ChaCha8Rng, names: &[String], k: usize) -> Vec<String> {
    names.choose_multiple(rng, k).cloned().collect()
}

fn maybe_date(rng: &mut ChaCha8Rng) -> Option<String> {
    rng.gen_bool(0.6).then(|| date_sentence(rng))
}

fn one(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, kind: TaskKind) -> (String, String, GoldAnswer) {
    match kind {
        TaskKind::Addition | TaskKind::Subtraction | TaskKind::Span => {
            let k = rng.gen_range(3..=4);
            let names = pick_entities(rng, &spec.entities, k);
            let nums = distinct_numbers(rng, k, 1, 40);
            let events: Vec<(String, u32)> = names.into_iter().zip(nums).collect();
            let date = maybe_date(rng);
            let mut pair: Vec<usize> = (0..k).collect();
            pair.shuffle(rng);
            let (a, b) = (pair[0], pair[1]);
            match kind {
                TaskKind::Addition => render_addition(&events, a, b, date),
                TaskKind::Subtraction => {
                    let (hi, lo) = if events[a].1 > events[b].1 {
                        (a, b)
                    } else {
                        (b, a)
                    };
                    let question = format!(
                        "How many more points did {} score than {}?",
                        events[hi].0, events[lo].0
                    );
                    let gold = GoldAnswer::number(&(events[hi].1 - events[lo].1).to_string());
                    (scoring_passage(&events, date), question, gold)
                }
                _ => {
                    let most = rng.gen_bool(0.5);
                    let best = (0..k)
                        .max_by_key(|&i| {
                            if most {
                                events[i].1 as i64
                            } else {
                                -(events[i].1 as i64)
                            }
                        })
                        .expect("k >= 3");
                    let question = format!(
                        "Who scored the {} points?",
                        if most { "most" } else { "fewest" }
                    );
                    let gold = GoldAnswer::spans(&[events[best].0.clone()]);
                    (scoring_passage(&events, date), question, gold)
                }
            }
        }
        TaskKind::OrdinalSpan => {
            let k = rng.gen_range(3..=4);
            let names = pick_entities(rng, &spec.entities, k);
            let nums = distinct_numbers(rng, k, 1, 40);
            let events: Vec<(String, u32)> = names.into_iter().zip(nums).collect();
            let q = rng.gen_range(0..k);
            let question = format!("Who scored in the {} quarter?", QUARTERS[q]);
            let gold = GoldAnswer::spans(&[events[q].0.clone()]);
            (scoring_passage(&events, maybe_date(rng)), question, gold)
        }
        TaskKind::Count => {
            let m = rng.gen_range(1..=5);
            let t = rng.gen_range(0..=2);
            let names = pick_entities(rng, &spec.entities, m + t);
            let yards = distinct_numbers(rng, m + t, 10, 55);
            let kicks: Vec<(String, u32)> = names[..m]
                .iter()
                .cloned()
                .zip(yards[..m].iter().copied())
                .collect();
            let tds: Vec<(String, u32)> = names[m..]
                .iter()
                .cloned()
                .zip(yards[m..].iter().copied())
                .collect();
            let mut order: Vec<bool> = std::iter::repeat_n(true, m)
                .chain(std::iter::repeat_n(false, t))
                .collect();
            order.shuffle(rng);
            let leads: Vec<usize> = (0..m + t).map(|_| rng.gen_range(0..LEADS.len())).collect();
            render_count(&kicks, &tds, &order, &leads, maybe_date(rng))
        }
    }
}

/// Deterministic templated examples in DROP form, one passage each.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<DropExample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dist = WeightedIndex::new(spec.weights.as_array())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let width = spec.n_examples.max(1).to_string().len();
    Ok((0..spec.n_examples)
        .map(|i| {
            let kind = TaskKind::ALL[dist.sample(&mut rng)];
            let (passage, question, gold) = one(&mut rng, spec, kind);
            DropExample {
                passage_id: format!("syn_{i:0width$}"),
                passage,
                query_id: format!("syn_{i:0width$}_q"),
                question,
                gold,
                validated: Vec::new(),
            }
        })
        .collect())
}

//! DROP-style answer normalization, exact match and bag-aligned F1.

use std::sync::OnceLock;

use regex::Regex;

use crate::heads::{canonical_number, GoldAnswer};

/// Per-example score on a 0 to 100 scale.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Score {
    pub em: f64,
    pub f1: f64,
}

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("static regex"))
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn normalize_token(token: &str) -> String {
    let lower = token.to_lowercase();
    let stripped = if parse_number(&lower).is_some() {
        lower
    } else {
        lower
            .chars()
            .filter(|c| !c.is_ascii_punctuation())
            .collect()
    };
    let numbered = match parse_number(&stripped) {
        Some(v) => canonical_number(v),
        None => stripped,
    };
    let no_articles = articles().replace_all(&numbered, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercases, strips punctuation from non-numbers, drops articles and
/// rewrites numbers canonically. Tokens split on spaces and hyphens.
pub fn normalize_answer(text: &str) -> String {
    text.split([' ', '-'])
        .map(normalize_token)
        .filter(|p| !p.trim().is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn token_set(normalized: &str) -> Vec<&str> {
    let mut v: Vec<&str> = normalized.split_whitespace().collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn numbers_in<'a>(bag: &[&'a str]) -> Vec<&'a str> {
    bag.iter()
        .copied()
        .filter(|t| parse_number(t).is_some())
        .collect()
}

/// Token-set F1 in [0, 1]; zero when the gold has numbers and none of
/// them appear in the prediction.
pub fn bag_f1(pred: &[&str], gold: &[&str]) -> f64 {
    let inter = gold.iter().filter(|g| pred.contains(g)).count() as f64;
    let p = if pred.is_empty() {
        1.0
    } else {
        inter / pred.len() as f64
    };
    let r = if gold.is_empty() {
        1.0
    } else {
        inter / gold.len() as f64
    };
    let f1 = if p == 0.0 && r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    let gold_nums = numbers_in(gold);
    let pred_nums = numbers_in(pred);
    if gold_nums.is_empty() || gold_nums.iter().any(|g| pred_nums.contains(g)) {
        f1
    } else {
        0.0
    }
}

/// Maximum-weight one-to-one assignment between rows and columns of a
/// rectangular score matrix; returns the summed score.
pub fn max_alignment(scores: &[Vec<f64>]) -> f64 {
    let n = scores.len();
    let m = scores.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return 0.0;
    }
    // Hungarian algorithm on costs with rows <= cols.
    let transpose = n > m;
    let (rows, cols) = if transpose { (m, n) } else { (n, m) };
    let cost = |i: usize, j: usize| {
        if transpose {
            -scores[j][i]
        } else {
            -scores[i][j]
        }
    };
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=cols)
        .filter(|&j| p[j] != 0)
        .map(|j| -cost(p[j] - 1, j - 1))
        .sum()
}

/// EM and F1 of a predicted answer bag against one gold bag.
///
/// F1 aligns predicted and gold spans one-to-one to maximize the summed
/// per-pair F1 `S`, then takes the harmonic mean of `S / |pred|` and
/// `S / |gold|`.
pub fn score_bags<P: AsRef<str>, G: AsRef<str>>(pred: &[P], gold: &[G]) -> Score {
    let pn: Vec<String> = pred.iter().map(|s| normalize_answer(s.as_ref())).collect();
    let gn: Vec<String> = gold.iter().map(|s| normalize_answer(s.as_ref())).collect();
    let em = {
        let (mut a, mut b) = (pn.clone(), gn.clone());
        a.sort();
        b.sort();
        if a == b {
            100.0
        } else {
            0.0
        }
    };
    if pn.is_empty() || gn.is_empty() {
        let f1 = if pn.is_empty() && gn.is_empty() {
            100.0
        } else {
            0.0
        };
        return Score { em, f1 };
    }
    let pbags: Vec<Vec<&str>> = pn.iter().map(|s| token_set(s)).collect();
    let gbags: Vec<Vec<&str>> = gn.iter().map(|s| token_set(s)).collect();
    let matrix: Vec<Vec<f64>> = pbags
        .iter()
        .map(|p| gbags.iter().map(|g| bag_f1(p, g)).collect())
        .collect();
    let total = max_alignment(&matrix);
    let precision = total / pbags.len() as f64;
    let recall = total / gbags.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    // Rounding in the alignment must not break EM = 100 implying F1 = 100.
    let f1 = if em == 100.0 {
        100.0
    } else {
        (100.0 * f1).clamp(0.0, 100.0)
    };
    Score { em, f1 }
}

const MONTH_NAMES: [&str; 12] = [
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

/// Gold answer as strings: the number, else the spans, else the date
/// rendered as "day Month year" over its present fields.
pub fn gold_strings(gold: &GoldAnswer) -> Vec<String> {
    if let Some(n) = gold.number.as_deref().filter(|n| !n.trim().is_empty()) {
        return vec![n.to_string()];
    }
    if !gold.spans.is_empty() {
        return gold.spans.clone();
    }
    match gold.date {
        Some(d) if !d.is_empty() => {
            let mut parts = Vec::new();
            if let Some(day) = d.day {
                parts.push(day.to_string());
            }
            if let Some(m) = d.month.filter(|m| (1..=12).contains(m)) {
                parts.push(MONTH_NAMES[m as usize - 1].to_string());
            }
            if let Some(y) = d.year {
                parts.push(y.to_string());
            }
            vec![parts.join(" ")]
        }
        _ => Vec::new(),
    }
}

/// Best score over all acceptable golds.
pub fn score_against<'a, P: AsRef<str>>(
    pred: &[P],
    golds: impl IntoIterator<Item = &'a GoldAnswer>,
) -> Score {
    let mut best = Score::default();
    for g in golds {
        let strings = gold_strings(g);
        if strings.is_empty() {
            continue;
        }
        let s = score_bags(pred, &strings);
        best.em = best.em.max(s.em);
        best.f1 = best.f1.max(s.f1);
    }
    best
}

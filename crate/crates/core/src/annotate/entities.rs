use std::collections::HashSet;

use super::{EntityMention, NumberMention, Token};

fn is_capitalized(t: &Token) -> bool {
    t.text.chars().next().is_some_and(char::is_uppercase)
}

fn sentence_initial(tokens: &[Token], i: usize) -> bool {
    i == 0 || tokens[i - 1].sentence_id != tokens[i].sentence_id
}

/// Maximal runs of capitalized tokens become ENTITY mentions.
///
/// A sentence-initial token qualifies only if the same word also appears
/// capitalized at a non-initial position. Runs break at sentence
/// boundaries, at any non-whitespace gap between tokens, and at tokens
/// covered by a number mention.
pub fn extract_entities(tokens: &[Token], numbers: &[NumberMention]) -> Vec<EntityMention> {
    let mut in_number = vec![false; tokens.len()];
    for m in numbers {
        for flag in &mut in_number[m.token_span.0..=m.token_span.1.min(tokens.len() - 1)] {
            *flag = true;
        }
    }
    let recurring: HashSet<&str> = tokens
        .iter()
        .enumerate()
        .filter(|&(i, t)| is_capitalized(t) && !sentence_initial(tokens, i))
        .map(|(_, t)| t.text.as_str())
        .collect();
    let eligible: Vec<bool> = (0..tokens.len())
        .map(|i| {
            let t = &tokens[i];
            !in_number[i]
                && is_capitalized(t)
                && (!sentence_initial(tokens, i) || recurring.contains(t.text.as_str()))
        })
        .collect();

    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if !eligible[i] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < tokens.len()
            && eligible[j + 1]
            && tokens[j + 1].sentence_id == tokens[j].sentence_id
            && tokens[j + 1].char_start <= tokens[j].char_end + 1
        {
            j += 1;
        }
        out.push(EntityMention { token_span: (i, j) });
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{extract_numbers, tokenize};

    fn entity_texts(text: &str) -> Vec<Vec<String>> {
        let toks = tokenize(text);
        let (nums, _) = extract_numbers(&toks);
        extract_entities(&toks, &nums)
            .into_iter()
            .map(|e| {
                toks[e.token_span.0..=e.token_span.1]
                    .iter()
                    .map(|t| t.text.clone())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn separate_entities() {
        assert_eq!(
            entity_texts("the Spanish and Portuguese troops"),
            [vec!["Spanish"], vec!["Portuguese"]]
        );
    }

    #[test]
    fn no_capitals_no_entities() {
        assert!(entity_texts("the game").is_empty());
    }

    #[test]
    fn maximal_run() {
        assert_eq!(
            entity_texts("kicker John Kasay hitting"),
            [vec!["John", "Kasay"]]
        );
    }

    #[test]
    fn comma_breaks_run() {
        assert_eq!(
            entity_texts("an army of Spanish, Portuguese, and others"),
            [vec!["Spanish"], vec!["Portuguese"]]
        );
    }

    #[test]
    fn sentence_initial_needs_recurrence() {
        assert_eq!(
            entity_texts("Kasay kicked. The ball went to Kasay again."),
            [vec!["Kasay"], vec!["Kasay"]]
        );
    }

    #[test]
    fn month_inside_date_is_not_entity() {
        assert_eq!(
            entity_texts("the war ended on February 7, 1756 near Lisbon"),
            [vec!["Lisbon"]]
        );
    }
}

//! Answer grading: multiple-choice letter matching, else normalized exact match.

use crate::model::Query;

/// Lowercase, alphanumeric words separated by single spaces, with a leading
/// "answer" label removed.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let words: Vec<&str> = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let words = match words.first() {
        Some(&"answer") if words.len() > 1 => &words[1..],
        _ => &words[..],
    };
    words.join(" ")
}

/// Option label chosen by `text`: a bare letter ("C", "C.", "(C)"), an
/// "Answer: C" line, a leading "C. option text", or the option text itself.
pub fn extract_choice(text: &str, query: &Query) -> Option<String> {
    let labels: Vec<String> = query.options.iter().map(|o| o.label.to_lowercase()).collect();
    let norm = normalize(text);
    if labels.contains(&norm) {
        return Some(norm.to_uppercase());
    }
    let trimmed = text.trim();
    let body = trimmed
        .strip_prefix("Answer:")
        .or_else(|| trimmed.strip_prefix("answer:"))
        .unwrap_or(trimmed)
        .trim()
        .trim_start_matches('(');
    let head: String = body.chars().take_while(|c| c.is_alphanumeric()).collect();
    let rest = &body[head.len()..];
    if labels.contains(&head.to_lowercase()) && (rest.is_empty() || rest.starts_with(['.', ')', ':', ' '])) {
        return Some(head.to_uppercase());
    }
    query
        .options
        .iter()
        .find(|o| normalize(&o.text) == norm)
        .map(|o| o.label.to_uppercase())
}

/// Symmetric correctness check between a produced answer and the gold answer.
pub fn grade(answer: &str, gold: &str, query: &Query) -> bool {
    if !query.options.is_empty() {
        if let (Some(a), Some(b)) = (extract_choice(answer, query), extract_choice(gold, query)) {
            return a == b;
        }
    }
    let (a, b) = (normalize(answer), normalize(gold));
    !a.is_empty() && a == b
}

//! Template explanations citing the generator's ground-truth factors.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::corpus::Corpus;
use super::lexicon::{self, FACTOR_NAMES};
use super::mining::{ContentLabel, PairRecord, StyleLabel};
use crate::error::{bail, Result};

fn level_name(factor: usize, level: u32) -> &'static str {
    let table: &[&str] = match factor {
        0 => &lexicon::SENTENCE_LENGTH_LEVELS,
        1 => &lexicon::COMMA_LEVELS,
        2 => &lexicon::EXCLAMATION_LEVELS,
        _ => &lexicon::FUNCTION_WORD_PROFILES,
    };
    table.get(level as usize).copied().unwrap_or("unknown")
}

fn join_list(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        n => format!("{} and {}", items[..n - 1].join(", "), items[n - 1]),
    }
}

/// Explanation of a style comparison between factor vectors `a` and `b`.
pub fn style_explanation(label: StyleLabel, a: &[u32], b: &[u32]) -> String {
    match label {
        StyleLabel::SameAuthor => {
            let parts: Vec<String> = a
                .iter()
                .enumerate()
                .map(|(f, l)| format!("{} {}", level_name(f, *l), FACTOR_NAMES[f]))
                .collect();
            format!("Both texts share {}; same author.", join_list(&parts))
        }
        StyleLabel::DifferentAuthor => {
            let diffs: Vec<String> = a
                .iter()
                .zip(b)
                .enumerate()
                .filter(|(_, (x, y))| x != y)
                .map(|(f, (x, y))| format!("{} ({} vs {})", FACTOR_NAMES[f], level_name(f, *x), level_name(f, *y)))
                .collect();
            if diffs.is_empty() {
                format!(
                    "Both texts share {} {}, but their word habits differ; different author.",
                    level_name(0, a[0]),
                    FACTOR_NAMES[0]
                )
            } else {
                format!("They differ in {}; different author.", join_list(&diffs))
            }
        }
    }
}

/// Explanation of a content comparison between topics `a` and `b`.
pub fn content_explanation(label: ContentLabel, a: usize, b: usize) -> String {
    let (ka, kb) = (lexicon::topic_name(a), lexicon::topic_name(b));
    match label {
        ContentLabel::SameContent if a == b => format!("Both texts discuss {ka} themes; same content."),
        ContentLabel::SameContent => format!("Both texts discuss {ka} and {kb} themes; same content."),
        ContentLabel::DifferentContent => {
            format!("Text 1 discusses {ka} while Text 2 discusses {kb}; different content.")
        }
    }
}

/// Fills both explanation fields of `pair` from corpus metadata.
pub fn synth_explanations(pair: &PairRecord, corpus: &Corpus) -> Result<PairRecord> {
    let a = corpus.doc(pair.doc_i)?;
    let b = corpus.doc(pair.doc_j)?;
    if a.style_factors.len() != FACTOR_NAMES.len() || b.style_factors.len() != FACTOR_NAMES.len() {
        bail!(Contract, "documents lack the {} style factors", FACTOR_NAMES.len());
    }
    let mut out = pair.clone();
    out.style_explanation = style_explanation(pair.style_label, &a.style_factors, &b.style_factors);
    out.content_explanation = content_explanation(pair.content_label, a.topic_id, b.topic_id);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_author_cites_every_factor() {
        let e = style_explanation(StyleLabel::SameAuthor, &[0, 2, 1, 3], &[0, 2, 1, 3]);
        assert_eq!(
            e,
            "Both texts share short sentence length, heavy comma use, frequent exclamation marks and hedging function words; same author."
        );
        for name in FACTOR_NAMES {
            assert!(e.contains(name));
        }
    }

    #[test]
    fn different_author_lists_differences() {
        let e = style_explanation(StyleLabel::DifferentAuthor, &[0, 2, 1, 3], &[2, 2, 1, 0]);
        assert_eq!(
            e,
            "They differ in sentence length (short vs long) and function words (hedging vs plain); different author."
        );
    }

    #[test]
    fn topic_only_difference_names_both_keywords() {
        let e = content_explanation(ContentLabel::DifferentContent, 0, 2);
        assert!(e.contains("cooking") && e.contains("music"), "{e}");
    }
}

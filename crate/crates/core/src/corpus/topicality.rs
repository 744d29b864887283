use std::collections::HashSet;

use super::Document;

/// Per-sentence topicality under a simple discourse model.
///
/// A document starts on topic. A sentence mentioning a flight number other
/// than the topical flight switches it, and all following sentences, to
/// nontopical. A later sentence mentioning the topical flight switches back.
/// A flight mention counts as topical when flagged so or when its value is
/// in `topical_flight_values`.
pub fn segment_topicality(doc: &Document, topical_flight_values: &HashSet<String>) -> Vec<bool> {
    let mut has_topical = vec![false; doc.sentence_count];
    let mut has_other = vec![false; doc.sentence_count];
    for m in doc.mentions.iter().filter(|m| m.is_flight_number) {
        let s = doc.sentence_of(m.start);
        if m.is_topical_flight || topical_flight_values.contains(&m.value_id) {
            has_topical[s] = true;
        } else {
            has_other[s] = true;
        }
    }
    let mut on_topic = true;
    has_topical
        .iter()
        .zip(&has_other)
        .map(|(&topical, &other)| {
            if topical {
                on_topic = true;
            } else if other {
                on_topic = false;
            }
            on_topic
        })
        .collect()
}

//! Property tests for the segmentation/insertion invariants.

use proptest::prelude::*;

use segdelim::delimit::{
    insert_at_sentences, insert_fixed_chunks, insert_random, strip_delimiters, DelimiterSpec,
};
use segdelim::textseg::{segment_rule, sentences, Document};
use segdelim::tokenize::{tokenize, Vocabulary};

/// A sentence of plain lowercase words, first word capitalized, ending in
/// one of the three terminators. Nothing in here collides with the
/// structured or arbitrary delimiter literals.
fn sentence_strategy() -> impl Strategy<Value = String> {
    (
        prop::collection::vec("[a-z]{2,8}", 3..10),
        prop::sample::select(vec!['.', '!', '?']),
    )
        .prop_map(|(words, term)| {
            let mut s = String::new();
            for (i, w) in words.iter().enumerate() {
                if i == 0 {
                    let mut chars = w.chars();
                    let first = chars.next().unwrap().to_uppercase().to_string();
                    s.push_str(&first);
                    s.push_str(chars.as_str());
                } else {
                    s.push(' ');
                    s.push_str(w);
                }
            }
            s.push(term);
            s
        })
}

fn doc_strategy() -> impl Strategy<Value = Document> {
    prop::collection::vec(sentence_strategy(), 1..8)
        .prop_map(|sents| Document::new("prop", sents.join(" ")))
}

proptest! {
    /// Slicing at boundaries and concatenating reconstructs the text exactly.
    #[test]
    fn reconstruction_identity(doc in doc_strategy()) {
        let b = segment_rule(&doc).unwrap();
        let joined: String = sentences(&doc, &b).concat();
        prop_assert_eq!(joined, doc.text.clone());
        prop_assert_eq!(*b.offsets().last().unwrap(), doc.char_len());
        prop_assert!(b.offsets().windows(2).all(|w| w[0] < w[1]));
    }

    /// Segmenting an already-segmented document yields the same boundaries.
    #[test]
    fn segmentation_is_stable(doc in doc_strategy()) {
        let b1 = segment_rule(&doc).unwrap();
        let b2 = segment_rule(&doc).unwrap();
        prop_assert_eq!(b1, b2);
    }

    /// strip_delimiters inverts insert_at_sentences for non-colliding literals.
    #[test]
    fn strip_inverts_sentence_insert(doc in doc_strategy()) {
        let b = segment_rule(&doc).unwrap();
        for literal in ["<seg>", "<and>", "####", "114", ".&?"] {
            let d = segdelim::delimit::spec_for(literal);
            let (out, plan) = insert_at_sentences(&doc, &b, &d);
            prop_assert!(!plan.non_invertible);
            prop_assert_eq!(strip_delimiters(&out, &d), doc.text.clone());
        }
    }

    /// Fixed-chunk insertion places exactly ceil(T/n) delimiters.
    #[test]
    fn fixed_chunk_count(words in prop::collection::vec("[a-z]{1,6}", 1..120), n in 1usize..64) {
        let mut v = Vocabulary::new();
        let tt = tokenize(&mut v, &words.join(" ")).unwrap();
        let total = tt.len();
        let (_, plan) = insert_fixed_chunks(&tt, n, &DelimiterSpec::seg()).unwrap();
        prop_assert_eq!(plan.positions.len(), total.div_ceil(n));
        prop_assert_eq!(*plan.positions.last().unwrap(), total);
    }

    /// Random insertion is deterministic per seed, places the requested count
    /// at strictly increasing in-range gaps, and round-trips through strip.
    #[test]
    fn random_insert_properties(
        words in prop::collection::vec("[a-z]{1,6}", 1..80),
        seed in any::<u64>(),
        count_frac in 0.0f64..=1.0,
    ) {
        let mut v = Vocabulary::new();
        let tt = tokenize(&mut v, &words.join(" ")).unwrap();
        let count = ((tt.len() as f64) * count_frac).floor() as usize;
        let d = DelimiterSpec::seg();
        let (out_a, plan_a) = insert_random(&tt, count, seed, &d).unwrap();
        let (out_b, plan_b) = insert_random(&tt, count, seed, &d).unwrap();
        prop_assert_eq!(&out_a, &out_b);
        prop_assert_eq!(&plan_a.positions, &plan_b.positions);
        prop_assert_eq!(plan_a.positions.len(), count);
        prop_assert!(plan_a.positions.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(plan_a.positions.iter().all(|&g| g >= 1 && g <= tt.len()));
        prop_assert_eq!(strip_delimiters(&out_a, &d), tt.source.clone());
    }

    /// Token spans tile the non-whitespace content in order.
    #[test]
    fn token_spans_ordered(words in prop::collection::vec("[a-z]{1,6}", 1..60)) {
        let mut v = Vocabulary::new();
        let tt = tokenize(&mut v, &words.join(" ")).unwrap();
        prop_assert!(tt.tokens.windows(2).all(|w| w[0].span.1 <= w[1].span.0));
        for t in &tt.tokens {
            prop_assert!(t.span.0 < t.span.1);
        }
    }
}

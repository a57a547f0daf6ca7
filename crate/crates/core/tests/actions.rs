use proptest::prelude::*;
use stlm_core::actions::{coalesce, parse_all, reconstruct, ActionParser, ParseEvent};

fn feed_chunks(text: &str, cuts: &[usize], cap: usize) -> Vec<ParseEvent> {
    let bounds: Vec<usize> = {
        let mut b: Vec<usize> = cuts
            .iter()
            .map(|&c| c % (text.len() + 1))
            .filter(|&c| text.is_char_boundary(c))
            .collect();
        b.push(0);
        b.push(text.len());
        b.sort_unstable();
        b.dedup();
        b
    };
    let mut p = ActionParser::with_cap(cap);
    let mut out = Vec::new();
    for w in bounds.windows(2) {
        out.extend(p.feed(&text[w[0]..w[1]]));
    }
    out.extend(p.flush());
    out
}

fn grammar_text() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        Just("<call>".to_string()),
        Just("<search>".to_string()),
        Just("<calendar>".to_string()),
        Just("<ca".to_string()),
        Just("<".to_string()),
        Just("<human>".to_string()),
        Just("2023-05-20T09:00:00/".to_string()),
        Just("John".to_string()),
        Just(" ".to_string()),
        "[a-zA-Z /é漢<>]{0,6}",
    ];
    prop::collection::vec(piece, 0..16).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn chunking_invariance(s in grammar_text(), cuts in prop::collection::vec(any::<usize>(), 0..12), cap in prop_oneof![Just(512usize), 1usize..12]) {
        let whole = coalesce(feed_chunks(&s, &[], cap));
        let split = coalesce(feed_chunks(&s, &cuts, cap));
        prop_assert_eq!(&whole, &split);
    }

    #[test]
    fn conservation(s in grammar_text(), cuts in prop::collection::vec(any::<usize>(), 0..12)) {
        let events = feed_chunks(&s, &cuts, 512);
        prop_assert_eq!(reconstruct(&events), s.clone());
        prop_assert_eq!(parse_all(&s), coalesce(events));
    }

    #[test]
    fn text_never_carries_a_parsed_payload(s in grammar_text()) {
        let events = parse_all(&s);
        for e in &events {
            if let ParseEvent::Text { text } = e {
                for a in events.iter().filter_map(|e| match e { ParseEvent::Action { action } => Some(action), _ => None }) {
                    prop_assert!(!text.contains(&a.raw_span));
                }
            }
        }
    }
}

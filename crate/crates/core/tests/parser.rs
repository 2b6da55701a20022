mod common;

use std::collections::BTreeMap;

use promptscope::template::{scan_placeholders, third_of};
use promptscope::{parse_template, PositionThird};
use proptest::prelude::*;
use regex::Regex;
use serde_json::{Map, Value};

fn json_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i32>().prop_map(|n| Value::from(n)),
        "[a-z0-9 ,:._-]{0,12}".prop_map(Value::String),
    ];
    leaf.prop_recursive(4, 32, 5, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..5).prop_map(Value::Array),
            prop::collection::btree_map("[a-z_][a-z0-9_]{0,8}", inner, 0..5)
                .prop_map(|m| Value::Object(m.into_iter().collect::<Map<_, _>>())),
        ]
    })
}

fn prose() -> impl Strategy<Value = String> {
    "[A-Za-z ,.:\n]{0,30}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn embedded_json_is_never_a_placeholder(
        before in prose(),
        doc in json_value(),
        pretty in any::<bool>(),
        after in prose(),
    ) {
        let json = if pretty { serde_json::to_string_pretty(&doc).unwrap() } else { doc.to_string() };
        let text = format!("{before}{json}{after}");
        prop_assert!(scan_placeholders(&text).is_empty(), "false placeholder in {text:?}");
    }

    #[test]
    fn scanner_matches_oracle(text in r#"[{}a-zA-Z_0-9 :"\n]{0,40}"#) {
        let got: Vec<_> = scan_placeholders(&text).into_iter().map(|p| (p.span.start, p.span.end, p.name)).collect();
        prop_assert_eq!(got, common::oracles::placeholders(&text));
    }
}

fn fragment() -> impl Strategy<Value = String> {
    prop_oneof![
        "[A-Za-z .,:\n]{0,12}",
        Just("{".to_string()),
        Just("}".to_string()),
        Just("{ \"k\": 1 }".to_string()),
        "\\{[a-z_][a-z0-9_]{0,6}\\}",
        "\\{\\{[a-z_][a-z0-9_]{0,6}\\}\\}",
    ]
}

fn template_text() -> impl Strategy<Value = String> {
    prop::collection::vec(fragment(), 1..12).prop_map(|f| f.concat()).prop_filter("non-empty", |t| !t.trim().is_empty())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn spans_are_sound_and_ordered(text in template_text()) {
        let t = parse_template(&text, "t").unwrap();
        for p in &t.placeholders {
            let s = &text[p.span.range()];
            prop_assert!(s.starts_with('{') && s.ends_with('}'), "unsound span {:?}", s);
            prop_assert!(s.contains(p.name.as_str()));
        }
        for w in t.placeholders.windows(2) {
            prop_assert!(w[0].span.end <= w[1].span.start);
        }
    }

    #[test]
    fn render_round_trip(text in template_text(), value in "[a-z ,.:]{0,10}") {
        let t = parse_template(&text, "t").unwrap();
        // padding keeps a binding from fusing with adjacent static braces into a new slot
        let bindings: BTreeMap<String, String> =
            t.placeholder_names().into_iter().map(|n| (n.to_string(), format!(" {value} "))).collect();
        let rendered = t.render(&bindings).unwrap();
        prop_assert!(rendered.unused_bindings.is_empty());
        prop_assert!(scan_placeholders(&rendered.text).is_empty(), "{:?} -> {:?}", text, rendered.text);
    }

    #[test]
    fn thirds_partition(texts in prop::collection::vec(template_text(), 1..20)) {
        let mut counts: BTreeMap<PositionThird, usize> = BTreeMap::new();
        let mut total = 0;
        for text in &texts {
            let t = parse_template(text, "t").unwrap();
            total += t.placeholders.len();
            for p in &t.placeholders {
                let third = third_of(p.span.start, t.byte_len());
                let r = p.span.start as f64 / t.byte_len() as f64;
                let expected = if r < 1.0 / 3.0 { PositionThird::Beginning } else if r < 2.0 / 3.0 { PositionThird::Middle } else { PositionThird::End };
                prop_assert_eq!(third, expected);
                *counts.entry(third).or_default() += 1;
            }
        }
        prop_assert_eq!(counts.values().sum::<usize>(), total);
    }
}

#[test]
fn unpadded_binding_can_fuse_with_static_braces() {
    let t = parse_template("{{a}b}", "t").unwrap();
    assert_eq!(t.placeholder_names(), ["a"]);
    let rendered = t.render(&BTreeMap::from([("a".to_string(), "x".to_string())])).unwrap();
    assert_eq!(rendered.text, "{xb}");
    assert_eq!(scan_placeholders(&rendered.text).len(), 1);
}

#[test]
fn brace_substring_brute_force() {
    let text = "JSON: { \"k\": 1 }";
    let grammar = Regex::new(r"^(?:\{\{[A-Za-z_][A-Za-z0-9_]*\}\}|\{[A-Za-z_][A-Za-z0-9_]*\})$").unwrap();
    for i in 0..text.len() {
        for j in i + 1..=text.len() {
            assert!(!grammar.is_match(&text[i..j]));
        }
    }
    assert!(!promptscope::template::is_template(text));
}

#[test]
fn ninety_byte_template_offset_75() {
    let mut text = "x".repeat(75);
    text.push_str("{slot}");
    text.push_str(&"y".repeat(90 - text.len()));
    let t = parse_template(&text, "t").unwrap();
    assert_eq!(t.byte_len(), 90);
    assert_eq!(third_of(t.placeholders[0].span.start, 90), PositionThird::End);
    assert_eq!(third_of(30, 90), PositionThird::Middle);
    assert_eq!(third_of(29, 90), PositionThird::Beginning);
}

//! One PASS/FAIL line per acceptance criterion. Each check panics on failure;
//! the runner catches the panic, reports it, and exits non-zero at the end.
//! Runs without the libtest harness so the lines are never captured.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use promptscope::analytics::{build_report, transition_matrix, transition_matrix_from_orders};
use promptscope::cluster::{cluster_exclusions, purity};
use promptscope::component::{score_against_gold, segment_full, GoldLabel, GoldLabeling};
use promptscope::harness::{
    binary_format_following, compare_patterns, run_bounded, BindingSet, CompareOptions, Completion, ExpectedJsonSchema,
    HarnessError, MockProvider, Provider, RunKey,
};
use promptscope::ingest::{dedupe, filter_records, read_jsonl, DatasetRecord, FilterPolicy};
use promptscope::lint::{apply_fixes, format_text, lint, FixPolicy, LintConfig, RuleId};
use promptscope::metadata::{MetadataClient, MetadataConfig};
use promptscope::taxonomy::classify_directive_style;
use promptscope::template::{scan_placeholders, third_of, ByteSpan};
use promptscope::{
    parse_template, AnalysisBundle, Analyzer, ComponentKind, ComponentSpan, DirectiveStyle, JsonFormatPattern,
    PositionThird,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn analyzer() -> &'static Analyzer {
    static A: OnceLock<Analyzer> = OnceLock::new();
    A.get_or_init(Analyzer::default)
}

fn analyze(text: &str, id: &str) -> AnalysisBundle {
    analyzer().analyze(&parse_template(text, id).unwrap())
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

fn random_json(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    let branch = depth < 4 && rng.random_bool(0.5);
    if !branch {
        return match rng.random_range(0..4) {
            0 => Value::Null,
            1 => Value::Bool(rng.random()),
            2 => Value::from(rng.random::<i32>()),
            _ => Value::String(random_string(rng, "abcxyz019 ,:._-", 0..12)),
        };
    }
    let n = rng.random_range(0..5);
    if rng.random_bool(0.5) {
        Value::Array((0..n).map(|_| random_json(rng, depth + 1)).collect())
    } else {
        Value::Object(
            (0..n)
                .map(|_| {
                    let key = format!("k{}", random_string(rng, "abcdef_0123", 0..8));
                    (key, random_json(rng, depth + 1))
                })
                .collect(),
        )
    }
}

fn random_string(rng: &mut ChaCha8Rng, alphabet: &str, len: std::ops::Range<usize>) -> String {
    let chars: Vec<char> = alphabet.chars().collect();
    let n = rng.random_range(len);
    (0..n).map(|_| *pick(rng, &chars)).collect()
}

fn random_template(rng: &mut ChaCha8Rng) -> String {
    loop {
        let n = rng.random_range(1..12);
        let text: String = (0..n)
            .map(|_| match rng.random_range(0..6) {
                0 => random_string(rng, "AbcXyz .,:\n", 0..12),
                1 => "{".to_string(),
                2 => "}".to_string(),
                3 => "{ \"k\": 1 }".to_string(),
                4 => format!("{{s{}}}", random_string(rng, "abc_012", 0..6)),
                _ => format!("{{{{d{}}}}}", random_string(rng, "abc_012", 0..6)),
            })
            .collect();
        if !text.trim().is_empty() {
            return text;
        }
    }
}

fn parser_suite() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let doc = random_json(&mut rng, 0);
        let json = if rng.random() { serde_json::to_string_pretty(&doc).unwrap() } else { doc.to_string() };
        let text =
            format!("{}{json}{}", random_string(&mut rng, "Ab .:\n", 0..20), random_string(&mut rng, "Ab .:\n", 0..20));
        assert!(scan_placeholders(&text).is_empty(), "false placeholder in {text:?}");
    }
    for _ in 0..1000 {
        let text = random_string(&mut rng, "{}ab_0 :\"\n", 0..40);
        let got: Vec<_> = scan_placeholders(&text).into_iter().map(|p| (p.span.start, p.span.end, p.name)).collect();
        assert_eq!(got, common::oracles::placeholders(&text), "{text:?}");
    }
    let mut counted = 0;
    let mut total = 0;
    for _ in 0..500 {
        let text = random_template(&mut rng);
        let t = parse_template(&text, "t").unwrap();
        for w in t.placeholders.windows(2) {
            assert!(w[0].span.end <= w[1].span.start);
        }
        let bindings: BTreeMap<String, String> =
            t.placeholder_names().into_iter().map(|n| (n.to_string(), " v ".to_string())).collect();
        let rendered = t.render(&bindings).unwrap();
        assert!(scan_placeholders(&rendered.text).is_empty(), "{text:?} -> {:?}", rendered.text);
        for p in &t.placeholders {
            let r = p.span.start as f64 / t.byte_len() as f64;
            let expected = if r < 1.0 / 3.0 {
                PositionThird::Beginning
            } else if r < 2.0 / 3.0 {
                PositionThird::Middle
            } else {
                PositionThird::End
            };
            assert_eq!(third_of(p.span.start, t.byte_len()), expected);
            counted += 1;
        }
        total += t.placeholders.len();
    }
    assert_eq!(counted, total);
    assert_eq!(third_of(75, 90), PositionThird::End);
    assert!(!promptscope::template::is_template("JSON: { \"k\": 1 }"));
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    format!("3000 generated cases in {:.2}s", elapsed.as_secs_f64())
}

fn segmentation() -> String {
    let mut summary = Vec::new();
    for rel in ["segmentation/gold.txt", "segmentation/heldout.txt"] {
        let gold = common::load_gold(rel);
        let predicted: Vec<_> =
            gold.iter().map(|g| (g.id.clone(), segment_full(&parse_template(&g.text, &g.id).unwrap()).spans)).collect();
        let labels: Vec<_> = gold.iter().map(|g| g.labeling()).collect();
        let s = score_against_gold(&predicted, &labels).unwrap();
        assert!(s.precision >= 0.85 && s.p_partial >= 0.95, "{rel}: {s:?}");
        summary.push(format!("{rel} precision {:.3} p_partial {:.3}", s.precision, s.p_partial));
    }

    use ComponentKind::*;
    let span = |kind, r: std::ops::Range<usize>| ComponentSpan {
        kind,
        span: ByteSpan::new(r.start, r.end),
        sentence_range: r,
    };
    let gold = |id: &str, kinds: &[ComponentKind]| GoldLabeling {
        id: id.into(),
        labels: kinds.iter().enumerate().map(|(sentence, kind)| GoldLabel { sentence, kind: *kind }).collect(),
    };
    let predicted = vec![
        ("a".to_string(), vec![span(Directive, 0..1), span(Context, 1..2)]),
        ("b".to_string(), vec![span(Directive, 0..1), span(OutputFormatStyle, 1..3)]),
    ];
    let labels = vec![gold("a", &[Directive, Context]), gold("b", &[Directive, Directive, OutputFormatStyle])];
    let s = score_against_gold(&predicted, &labels).unwrap();
    assert_eq!((s.precision, s.p_full, s.p_partial), (0.75, 0.5, 1.0));
    summary.push("hand case 3/4, 1/2, 1".into());
    summary.join("; ")
}

fn kind_of(tag: &str) -> ComponentKind {
    *ComponentKind::ALL.iter().find(|k| format!("{k:?}") == tag).unwrap_or_else(|| panic!("unknown kind {tag}"))
}

fn transitions() -> String {
    let mut bundles = Vec::new();
    let mut orders: Vec<Vec<ComponentKind>> = Vec::new();
    for b in common::load_blocks("analytics/six.txt") {
        bundles.push(analyze(&b.text, &b.id));
        orders.push(b.tag.split(',').map(kind_of).collect());
    }
    let got: Vec<_> = bundles.iter().map(|b| b.order()).collect();
    assert_eq!(got, orders);
    let m = transition_matrix::<f64>(&bundles).unwrap();
    let oracle = common::oracles::pair_counts(&orders);
    for &from in &m.kinds {
        let row: u64 = oracle.iter().filter(|((f, _), _)| *f == from).map(|(_, c)| c).sum();
        for &to in &m.kinds {
            let c = oracle.get(&(from, to)).copied().unwrap_or(0);
            assert_eq!(m.count(from, to), c);
            assert_eq!(m.prob(from, to), if row == 0 { 0.0 } else { c as f64 / row as f64 });
        }
    }

    let baseline = serde_json::to_string(&build_report::<f64>(&bundles, 10).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut shuffled = bundles.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(serde_json::to_string(&build_report::<f64>(&shuffled, 10).unwrap()).unwrap(), baseline);
    }

    for _ in 0..200 {
        let orders: Vec<Vec<ComponentKind>> = (0..rng.random_range(1..15))
            .map(|_| (0..rng.random_range(0..8)).map(|_| *pick(&mut rng, &ComponentKind::CORE)).collect())
            .collect();
        let m = transition_matrix_from_orders::<f64>(&orders);
        for (i, row) in m.probs.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            let want = if m.absorbing[i] { 0.0 } else { 1.0 };
            assert!((sum - want).abs() <= 1e-9, "row {i} sums to {sum}");
        }
    }
    "six-template oracle, 20 shuffles, 200 random corpora".into()
}

fn directive_styles() -> String {
    let table = common::read_fixture("directive_styles.tsv");
    let rows: Vec<(&str, &str)> = table.lines().filter_map(|l| l.split_once('\t')).collect();
    assert_eq!(rows.len(), 30);
    for (label, text) in &rows {
        let expected = if *label == "Question" { DirectiveStyle::Question } else { DirectiveStyle::Instruction };
        assert_eq!(common::oracles::directive_style(text), expected, "oracle: {text}");
        assert_eq!(classify_directive_style(text), expected, "{text}");
    }
    "30/30".into()
}

fn json_patterns() -> String {
    let blocks = common::load_blocks("json_patterns/templates.txt");
    assert_eq!(blocks.len(), 15);
    let correct = blocks
        .iter()
        .filter(|b| {
            let tag = match analyze(&b.text, &b.id).json_pattern {
                JsonFormatPattern::JsonOutput => "P1",
                JsonFormatPattern::AttributeNames => "P2",
                JsonFormatPattern::AttributeDescriptions => "P3",
                JsonFormatPattern::NotJson => "none",
            };
            tag == b.tag
        })
        .count();
    assert!(correct >= 14, "{correct}/15");
    format!("{correct}/15")
}

fn clustering() -> String {
    let (sentences, labels): (Vec<String>, Vec<String>) = common::read_fixture("exclusions/sentences.tsv")
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(label, s)| (s.to_string(), label.to_string()))
        .unzip();
    let start = Instant::now();
    let a = cluster_exclusions(&sentences, 5, 0).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(a, cluster_exclusions(&sentences, 5, 0).unwrap());
    let p = purity(&a.assignments, &labels);
    assert!(p >= 0.8, "purity {p}");
    assert!(elapsed < Duration::from_secs(2), "took {elapsed:?}");
    format!("purity {p:.2} in {:.2}s", elapsed.as_secs_f64())
}

fn ingest() -> String {
    let reference: DateTime<Utc> = "2024-06-20T00:00:00Z".parse().unwrap();
    let f = std::fs::File::open(common::fixtures().join("ingest/dataset.jsonl")).unwrap();
    let records = read_jsonl(BufReader::new(f)).unwrap();
    let (_, trace) = filter_records(&records, &FilterPolicy::default(), reference).unwrap();
    assert_eq!(trace.outputs(), vec![20, 14, 17, 15, 12, 7]);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut items: Vec<String> = (0..90).map(|i| format!("prompt {i} {}", rng.random::<u32>())).collect();
    let copies: Vec<String> = (0..10).map(|i| format!("  {}\t", items[i * 9 + 3].replace(' ', "   "))).collect();
    items.extend(copies);
    assert_eq!(dedupe(&items).len(), 90);

    let words = ["summarize", "the", "{doc}", "report", "要約", ""];
    for case in 0..100 {
        let records: Vec<DatasetRecord> = (0..rng.random_range(0..30))
            .map(|i| DatasetRecord {
                id: format!("x{i}"),
                repo: "acme/demo".into(),
                prompts: (0..rng.random_range(1..4))
                    .map(|_| (0..rng.random_range(0..9)).map(|_| *pick(&mut rng, &words)).collect::<Vec<_>>().join(" "))
                    .collect(),
                stars: rng.random_bool(0.8).then(|| rng.random_range(0..12)),
                pushed_at: rng.random_bool(0.8).then(|| reference - chrono::Duration::days(rng.random_range(0..800))),
            })
            .collect();
        let (kept, trace) = filter_records(&records, &FilterPolicy::default(), reference).unwrap();
        for w in trace.stages.windows(2) {
            assert_eq!(w[0].output, w[1].input, "case {case}");
        }
        for s in &trace.stages {
            assert!(s.stage == "split_multiprompt" || s.output <= s.input, "case {case}: {} grew", s.stage);
        }
        assert_eq!(kept.len(), trace.stages.last().unwrap().output);
    }

    // mock metadata API: rate-limited once, then served, then cached
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let reset = Utc::now().timestamp().to_string();
    std::thread::spawn(move || {
        for req in server.incoming_requests() {
            let resp = if counter.fetch_add(1, Ordering::SeqCst) == 0 {
                tiny_http::Response::from_string("{}")
                    .with_status_code(403)
                    .with_header(tiny_http::Header::from_bytes("x-ratelimit-remaining", "0").unwrap())
                    .with_header(tiny_http::Header::from_bytes("x-ratelimit-reset", reset.as_bytes()).unwrap())
            } else {
                tiny_http::Response::from_string(r#"{"stargazers_count": 42, "pushed_at": "2024-05-01T12:00:00Z"}"#)
            };
            let _ = req.respond(resp);
        }
    });
    let cache = tempfile::tempdir().unwrap();
    let client = MetadataClient::new(MetadataConfig {
        base_url: url,
        cache_dir: Some(cache.path().into()),
        max_wait_secs: 1,
        ..Default::default()
    });
    assert_eq!(client.fetch("acme/demo").unwrap().stars, 42);
    client.fetch("acme/demo").unwrap();
    assert_eq!(client.network_requests(), 2);
    assert_eq!(hits.load(Ordering::SeqCst), 2);
    "trace (20,14,17,15,12,7), 100 random datasets, retry then cache hit".into()
}

const LINT_FIXTURES: [&str; 12] = [
    "01-placeholder-first",
    "02-instruction-first",
    "03-json-only",
    "04-json-names",
    "05-json-described",
    "06-vague-names",
    "07-question",
    "08-no-directive",
    "09-examples-first",
    "10-many",
    "11-clean",
    "12-double-brace",
];

fn placeholder_multiset(text: &str) -> Vec<String> {
    let mut names: Vec<String> = scan_placeholders(text).into_iter().map(|p| p.name).collect();
    names.sort();
    names
}

fn linting() -> String {
    let cfg = LintConfig::default();
    for name in LINT_FIXTURES {
        let text = common::read_fixture(&format!("lint/{name}.txt"));
        let bundle = analyze(&text, name);
        let diags = lint(&bundle, &cfg).unwrap();
        let rendered = format_text(&format!("{name}.txt"), &text, &diags);
        assert_eq!(rendered, common::read_fixture(&format!("lint/{name}.expected")), "{name}: golden differs");

        let fixed = apply_fixes(analyzer(), &bundle, &diags, FixPolicy::default()).unwrap();
        let refixed = analyze(&fixed, name);
        let after = lint(&refixed, &cfg).unwrap();
        assert!(after.iter().all(|d| d.rule != RuleId::R3 && d.rule != RuleId::R4), "{name}");
        assert_eq!(placeholder_multiset(&fixed), placeholder_multiset(&text), "{name}");
        assert_eq!(apply_fixes(analyzer(), &refixed, &after, FixPolicy::default()).unwrap(), fixed, "{name}");
    }

    let constraints = [
        ("", false),
        ("Do not provide any other output text beyond the JSON string.\n", true),
        ("Do not mention competitors.\n", false),
        ("Keep the output under 50 words.\n", false),
    ];
    for json in [false, true] {
        for (constraint, suppresses) in constraints {
            let format = if json {
                "Return the answer as JSON with keys \"answer\" and \"source\".\n"
            } else {
                "Answer in one paragraph.\n"
            };
            let text = format!("Answer the customer's message in {{message}}.\n{constraint}{format}");
            let fired = lint(&analyze(&text, "r3"), &cfg).unwrap().iter().any(|d| d.rule == RuleId::R3);
            assert_eq!(fired, json && !suppresses, "json={json} constraint={constraint:?}");
        }
    }
    "12 goldens, 8-row R3 table, idempotent fixes".into()
}

struct CountingProvider {
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl Provider for CountingProvider {
    fn complete(&self, _key: &RunKey, prompt: &str) -> Result<Completion, HarnessError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(5));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        Ok(Completion { text: prompt.to_string(), model: None, finish_reason: None, retries: 0 })
    }
}

fn harness() -> String {
    let schema = ExpectedJsonSchema::new(["a"]);
    let cases: Vec<Value> =
        common::read_fixture("harness/format_cases.jsonl").lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(cases.len(), 50);
    for c in &cases {
        let output = c["output"].as_str().unwrap();
        let label = u8::from(c["follows"].as_bool().unwrap());
        assert_eq!(common::oracles::format_following(output), label, "oracle on {}", c["id"]);
        assert_eq!(binary_format_following(output, &schema), label, "{}", c["id"]);
    }

    let raw: Value = serde_json::from_str(&common::read_fixture("harness/bindings.json")).unwrap();
    let bindings: Vec<BindingSet> = raw
        .as_array()
        .unwrap()
        .iter()
        .map(|b| (b["id"].as_str().unwrap().to_string(), serde_json::from_value(b["bindings"].clone()).unwrap()))
        .collect();
    let variants: Vec<_> = ["tweet-p3", "tweet-p3-exclusion"]
        .iter()
        .map(|stem| {
            (stem.to_string(), parse_template(&common::read_fixture(&format!("harness/{stem}.txt")), stem).unwrap())
        })
        .collect();
    let schema = ExpectedJsonSchema::from_attributes(&analyzer().analyze(&variants[0].1).json_attributes);
    let mock = MockProvider::Dir(common::fixtures().join("harness/mock"));
    let report = compare_patterns(&variants, &bindings, &schema, &mock, &CompareOptions::default()).unwrap();
    let (base, constrained) = (report.variants[0].binary_rate, report.variants[1].binary_rate);
    assert!(base < constrained, "{base} vs {constrained}");

    for limit in [1, 3, 8] {
        let provider = CountingProvider { in_flight: AtomicUsize::new(0), peak: AtomicUsize::new(0) };
        let jobs: Vec<(RunKey, String)> = (0..40)
            .map(|i| {
                (RunKey { template_id: "t".into(), variant: "v".into(), input_id: format!("i{i}") }, format!("p{i}"))
            })
            .collect();
        let results = run_bounded(&jobs, &provider, limit);
        assert!(provider.peak.load(Ordering::SeqCst) <= limit, "limit {limit}");
        assert!(results.iter().enumerate().all(|(i, r)| r.as_ref().unwrap().output == format!("p{i}")));
    }
    format!("50/50 oracle agreement, A/B {base} -> {constrained}, in-flight limits held")
}

fn end_to_end() -> String {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_promptscope"))
        .args(["analyze", "fixtures/corpus/corpus.jsonl", "--timestamp", "2024-06-20T00:00:00Z", "--out"])
        .arg(out.path())
        .current_dir(&root)
        .env("NO_COLOR", "1")
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for file in ["report.json", "report.md"] {
        let got = std::fs::read(out.path().join(file)).unwrap();
        let want = std::fs::read(root.join("fixtures/corpus/golden").join(file)).unwrap();
        assert!(got == want, "{file} differs from the golden copy");
    }
    "report.json and report.md byte-identical; full-suite wall time is checked separately".into()
}

fn main() {
    let checks: [(&str, fn() -> String); 10] = [
        ("parser properties within 5s", parser_suite),
        ("segmentation thresholds and hand case", segmentation),
        ("transition matrix", transitions),
        ("directive style table", directive_styles),
        ("JSON pattern fixture", json_patterns),
        ("exclusion clustering", clustering),
        ("ingest trace, dedupe, metadata mock", ingest),
        ("lint goldens, R3 table, fixes", linting),
        ("evaluation harness", harness),
        ("analyze golden report", end_to_end),
    ];
    let started = Instant::now();
    let mut failed = Vec::new();
    for (i, (name, check)) in checks.iter().enumerate() {
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(e) => {
                let reason = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL {:>2} {name}: {reason}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    println!("acceptance checks took {:.1}s", started.elapsed().as_secs_f64());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

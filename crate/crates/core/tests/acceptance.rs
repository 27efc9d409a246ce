//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::collections::HashMap;
use std::io::Write;
use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use segdelim::attnlens::{
    heatmap_svg, relative_delimiter_attention, Aggregation, AttentionTensor, TokenLabel, TokenRoles,
};
use segdelim::corpusstats::{corpus_stats, histogram, summarize, StatsAccumulator};
use segdelim::delimit::{
    insert_at_sentences, insert_fixed_chunks, insert_random, spec_for, strip_delimiters,
    DelimiterSpec,
};
use segdelim::evalclient::{
    delta_from_pcts, exact_match, extract_answer, prob_protocol, cot_protocol,
    render_choice_prompt, render_cot_prompt, render_eval_prompt, run_eval_items, EvalItem,
    ModelEndpoint, ProtocolReport,
};
use segdelim::mock::{prompt_digest, MockScript, MockServer, ScriptedResponse};
use segdelim::promptkit::{
    delimit_text, transform_sft_dataset, InputFormat, PromptMode, Regime, TaskTemplate,
};
use segdelim::textseg::{segment_rule, Document};
use segdelim::tokenize::{tokenize, Vocabulary};
use segdelim::AnswerFormat;

fn criterion(n: usize, desc: &str, f: impl FnOnce() + UnwindSafe) {
    match catch_unwind(f) {
        Ok(()) => println!("criterion {n}: PASS - {desc}"),
        Err(cause) => {
            println!("criterion {n}: FAIL - {desc}");
            resume_unwind(cause);
        }
    }
}

const WORDS: &[&str] = &[
    "garden", "flower", "purple", "yellow", "green", "planted", "colors", "total", "many", "more",
    "there", "those", "them", "only", "sum", "count", "grows", "bloom", "field", "rows",
];

fn random_sentence(rng: &mut StdRng) -> String {
    let n_words = rng.random_range(3..12);
    let mut s = String::new();
    for i in 0..n_words {
        let w = WORDS[rng.random_range(0..WORDS.len())];
        if i == 0 {
            let mut chars = w.chars();
            s.push(chars.next().unwrap().to_ascii_uppercase());
            s.push_str(chars.as_str());
        } else {
            s.push(' ');
            s.push_str(w);
        }
    }
    s.push(['.', '!', '?'][rng.random_range(0..3)]);
    s
}

fn random_doc(rng: &mut StdRng) -> Document {
    let n_sents = rng.random_range(2..8);
    let sents: Vec<String> = (0..n_sents).map(|_| random_sentence(rng)).collect();
    Document::new("rand", sents.join(" "))
}

#[test]
fn criterion_1_round_trip_fidelity() {
    criterion(1, "strip∘insert identity over 1000 random docs × 5 delimiters", || {
        let started = Instant::now();
        let mut rng = StdRng::seed_from_u64(1);
        let literals = ["<seg>", "<and>", "####", "114", ".&?"];
        for _ in 0..1000 {
            let doc = random_doc(&mut rng);
            let b = segment_rule(&doc).unwrap();
            for literal in literals {
                let d = spec_for(literal);
                let (out, plan) = insert_at_sentences(&doc, &b, &d);
                assert!(!plan.non_invertible, "{literal} collided unexpectedly");
                assert_eq!(strip_delimiters(&out, &d), doc.text, "delimiter {literal}");
            }
        }
        let elapsed = started.elapsed();
        assert!(elapsed.as_secs() < 10, "took {elapsed:?}, budget 10s");
    });
}

const EXAMPLE_QUESTION: &str = "Mark has a garden with flowers. He planted plants of three different colors in it. Ten of them are yellow, and there are 80% more of those in purple. There are only 25% as many green flowers as there are yellow and purple flowers. How many flowers does Mark have in his garden?";

const EXAMPLE_SOLUTION: &str = "There are 80/100 * 10 = 8 more purple flowers than yellow flowers. So in Mark's garden, there are 10 + 8 = 18 purple flowers. Purple and yellow flowers sum up to 10 + 18 = 28 flowers. That means in Mark's garden there are 25/100 * 28 = 7 green flowers. So in total Mark has 28 + 7 = 35 plants in his garden.\n#### 35";

#[test]
fn criterion_2_worked_example_fidelity() {
    criterion(2, "worked GSM8k example delimits to 5 <seg> and extracts \"35\"", || {
        let d = DelimiterSpec::seg();
        let delimited_q = delimit_text(EXAMPLE_QUESTION, &d).unwrap();
        assert_eq!(delimited_q.matches("<seg>").count(), 5);
        assert!(delimited_q.starts_with("Mark has a garden with flowers. <seg> He planted"));
        assert!(delimited_q.ends_with("How many flowers does Mark have in his garden? <seg>"));

        let delimited_a = delimit_text(EXAMPLE_SOLUTION, &d).unwrap();
        assert!(delimited_a.ends_with("#### 35 <seg>"));
        assert_eq!(delimited_a.matches("<seg>").count(), 6);

        let extracted = extract_answer(&delimited_a, AnswerFormat::Gsm8kHash);
        assert_eq!(extracted.as_deref(), Some("35"));
        assert!(exact_match(extracted.as_deref(), "35", AnswerFormat::Gsm8kHash));
    });
}

#[test]
fn criterion_3_counting_oracles() {
    criterion(3, "chunk/random delimiter counts match brute-force oracles", || {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..500 {
            let n_tokens = rng.random_range(1..200);
            let words: Vec<&str> = (0..n_tokens)
                .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                .collect();
            let mut v = Vocabulary::new();
            let tt = tokenize(&mut v, &words.join(" ")).unwrap();
            let total = tt.len();

            let n = rng.random_range(1..=64);
            let (_, plan) = insert_fixed_chunks(&tt, n, &DelimiterSpec::seg()).unwrap();
            // brute-force oracle: walk the tokens, drop a delimiter after every
            // full chunk and after the final token
            let mut oracle = 0usize;
            let mut since = 0usize;
            for i in 0..total {
                since += 1;
                if since == n || i == total - 1 {
                    oracle += 1;
                    since = 0;
                }
            }
            assert_eq!(plan.positions.len(), oracle);
            assert_eq!(oracle, total.div_ceil(n));

            // random placement matched to the sentence count of a same-size doc
            let doc = random_doc(&mut rng);
            let b = segment_rule(&doc).unwrap();
            if b.len() <= total {
                let (_, plan) = insert_random(&tt, b.len(), rng.random(), &DelimiterSpec::seg()).unwrap();
                assert_eq!(plan.positions.len(), b.len());
            }
        }
    });
}

#[test]
fn criterion_4_reference_delta_arithmetic() {
    criterion(4, "all 16 reference (base, seg) pairs reproduce their printed Δ", || {
        // (dataset, base, seg, printed Δ)
        let rows: [(&str, f64, f64, f64); 16] = [
            ("mmlu-a", 64.43, 69.96, 5.53),
            ("mmlu-b", 62.89, 67.28, 4.39),
            ("mmlu-c", 86.64, 86.40, -0.24),
            ("mmlu-d", 74.04, 74.82, 0.78),
            ("gsm8k-a", 73.92, 81.65, 7.73),
            ("gsm8k-b", 75.51, 78.01, 2.5),
            ("gsm8k-c", 90.14, 91.96, 1.82),
            ("gsm8k-d", 95.00, 95.30, 0.3),
            ("math-a", 53.33, 54.30, 0.97),
            ("math-b", 32.60, 32.26, -0.34),
            ("math-c", 73.04, 75.78, 2.74),
            ("math-d", 89.40, 90.60, 1.2),
            ("drop-a", 38.14, 50.64, 12.50),
            ("drop-b", 46.39, 53.16, 6.77),
            ("drop-c", 58.74, 60.38, 1.64),
            ("drop-d", 75.10, 79.10, 4.0),
        ];
        for (dataset, base, seg, printed) in rows {
            let row = delta_from_pcts(dataset, base, seg);
            assert!(
                (row.delta - printed).abs() <= 0.01,
                "{dataset}: computed {} vs printed {printed}",
                row.delta
            );
        }
        assert_eq!(delta_from_pcts("x", 73.92, 81.65).formatted(), "+7.73%\u{2191}");
        assert_eq!(delta_from_pcts("x", 86.64, 86.40).formatted(), "-0.24%\u{2193}");
    });
}

fn mock_gsm8k_items() -> Vec<EvalItem> {
    let exemplars: Vec<(String, String)> = (0..8)
        .map(|i| {
            (
                format!("What is {i} plus {i}?"),
                format!("Adding {i} and {i} gives {r}.\n#### {r}", r = 2 * i),
            )
        })
        .collect();
    (0..20)
        .map(|i| {
            serde_json::from_value(serde_json::json!({
                "id": format!("item-{i:02}"),
                "question": format!("A box holds {i} red balls and {i} blue balls. How many balls are in the box?"),
                "gold": format!("{}", 2 * i),
                "exemplars": exemplars,
            }))
            .unwrap()
        })
        .collect()
}

#[test]
fn criterion_5_mock_end_to_end() {
    criterion(5, "20-item mock run scores 65.00 in both modes under the concurrency bound", || {
        let items = mock_gsm8k_items();
        let tmpl = TaskTemplate::builtin("gsm8k", Regime::Icl, false).unwrap();
        let d = DelimiterSpec::seg();

        // 13 correct, 5 wrong, 2 injected failures = 13/20 = 65.00
        let mut script = MockScript::default();
        for mode in [PromptMode::Base, PromptMode::Seg] {
            for (i, item) in items.iter().enumerate() {
                let prompt = render_eval_prompt(item, &tmpl, mode, &d).unwrap().text();
                let response = if i < 13 {
                    ScriptedResponse::text(format!("Adding gives {g}.\n#### {g}", g = 2 * i))
                } else if i < 18 {
                    ScriptedResponse::text("I am not sure.\n#### 999999")
                } else {
                    ScriptedResponse::failure(500)
                };
                script.by_digest.insert(prompt_digest(&prompt), response);
            }
        }
        let server = MockServer::start(script).unwrap();
        let mut ep = ModelEndpoint::new(server.base_url(), "mock");
        ep.max_retries = 1;
        ep.retry_base_ms = 1;
        ep.max_concurrency = 4;

        let base = run_eval_items(&items, &ep, &tmpl, PromptMode::Base, &d).unwrap();
        let seg = run_eval_items(&items, &ep, &tmpl, PromptMode::Seg, &d).unwrap();
        for report in [&base, &seg] {
            assert_eq!(report.n_items, 20);
            assert_eq!(report.n_correct, 13);
            assert_eq!(report.accuracy_pct, 65.00);
            assert_eq!(report.failures, 2);
            // audit consistency: the header is recomputable from the records
            let recount = report.records.iter().filter(|r| r.correct).count();
            assert_eq!(recount, report.n_correct);
            let order: Vec<&str> = report.records.iter().map(|r| r.item_id.as_str()).collect();
            let expected: Vec<String> = (0..20).map(|i| format!("item-{i:02}")).collect();
            assert_eq!(order, expected.iter().map(String::as_str).collect::<Vec<_>>());
            for r in &report.records {
                if r.error.is_some() {
                    assert!(!r.correct);
                }
            }
        }
        assert!(server.max_observed_concurrency() <= 4);

        let row = segdelim::evalclient::delta_report(&base, &seg).unwrap();
        assert_eq!(row.delta, 0.0);
        assert_eq!(row.formatted(), "+0.00%");
    });
}

#[test]
fn criterion_6_prob_cot_protocol_split() {
    criterion(6, "prob argmax matches a hand oracle on 10 items; CoT extracts; report layout", || {
        let tmpl = TaskTemplate::builtin("mmlu", Regime::Sft, false).unwrap();
        let mut script = MockScript::default();
        let mut questions = Vec::new();
        let mut prob_oracle = Vec::new();
        let mut cot_oracle = Vec::new();
        for i in 0..10usize {
            let question = format!("Which option is number {i}?");
            let choices: Vec<String> = ["w", "x", "y", "z"]
                .iter()
                .map(|c| format!("{c}{i}"))
                .collect();
            // logprobs: give letter (i mod 4) the max; item 9 is an all-equal
            // tie that must break to A
            let mut lp = HashMap::new();
            for (j, letter) in ["A", "B", "C", "D"].iter().enumerate() {
                let score = if i == 9 {
                    -1.0
                } else if j == i % 4 {
                    -0.5
                } else {
                    -2.0 - j as f64
                };
                lp.insert(letter.to_string(), score);
            }
            // hand oracle: argmax with earliest-letter ties
            let expected = if i == 9 { 'A' } else { (b'A' + (i % 4) as u8) as char };
            prob_oracle.push(expected);
            script.by_digest.insert(
                prompt_digest(&render_choice_prompt(&question, &choices)),
                ScriptedResponse {
                    logprobs: Some(lp),
                    ..Default::default()
                },
            );

            let cot_letter = (b'A' + (3 - i % 4) as u8) as char;
            cot_oracle.push(cot_letter);
            script.by_digest.insert(
                prompt_digest(&render_cot_prompt(&question, &tmpl)),
                ScriptedResponse::text(format!("Reasoning first. The answer is ({cot_letter})")),
            );
            questions.push((question, choices));
        }

        let server = MockServer::start(script).unwrap();
        let ep = ModelEndpoint::new(server.base_url(), "mock");
        for (i, (question, choices)) in questions.iter().enumerate() {
            assert_eq!(prob_protocol(&ep, question, choices).unwrap(), prob_oracle[i]);
            assert_eq!(cot_protocol(&ep, question, &tmpl).unwrap(), Some(cot_oracle[i]));
        }

        let report = ProtocolReport {
            columns: vec!["Std-FT".into(), "Seg-FT".into()],
            prob_pct: vec![61.90, 61.19],
            cot_pct: vec![59.02, 60.13],
        };
        let md = report.to_markdown();
        assert!(md.contains("| | Std-FT | Seg-FT | Improvement |"));
        assert!(md.contains("| Prob | 61.90 | 61.19 | -0.71% |"));
        assert!(md.contains("| CoT | 59.02 | 60.13 |"));
    });
}

/// 4 sentences of 8 positions each: 7 ordinary tokens (final at offset 6)
/// plus a delimiter.
fn analytic_roles() -> TokenRoles {
    let mut labels = vec![TokenLabel::Ordinary; 32];
    let mut sentence_ids = vec![0u32; 32];
    for s in 0..4usize {
        for p in 8 * s..8 * (s + 1) {
            sentence_ids[p] = s as u32;
        }
        labels[8 * s + 6] = TokenLabel::SentenceFinal;
        labels[8 * s + 7] = TokenLabel::Delimiter;
    }
    TokenRoles { labels, sentence_ids }
}

#[test]
fn criterion_7_attention_ratio() {
    criterion(7, "analytic 2×4×32 tensor yields ratio 2.0; uniform yields 1.0; heatmap deterministic", || {
        let (layers, heads, t) = (2usize, 4usize, 32usize);
        let roles = analytic_roles();
        let delims = [7usize, 15, 23, 31];

        // sentence-final rows give every delimiter column exactly twice the
        // mass of any other visible column; all other rows are uniform causal
        let mut weights = vec![0.0f32; layers * heads * t * t];
        for layer in 0..layers {
            for head in 0..heads {
                for q in 0..t {
                    let row = &mut weights[((layer * heads + head) * t + q) * t..][..t];
                    if roles.labels[q] == TokenLabel::SentenceFinal {
                        let n_delim = delims.iter().filter(|&&p| p <= q).count();
                        let w = 1.0 / (q + 1 + n_delim) as f32;
                        for p in 0..=q {
                            row[p] = if delims.contains(&p) { 2.0 * w } else { w };
                        }
                    } else {
                        let w = 1.0 / (q + 1) as f32;
                        for p in 0..=q {
                            row[p] = w;
                        }
                    }
                }
            }
        }
        let tensor = AttentionTensor::new(layers, heads, t, weights).unwrap();
        let report = relative_delimiter_attention(&tensor, &roles, Aggregation::MeanAll).unwrap();
        assert!(
            (report.mean_all.ratio - 2.0).abs() < 1e-6,
            "ratio {}",
            report.mean_all.ratio
        );

        let mut uniform = vec![0.0f32; layers * heads * t * t];
        for layer in 0..layers {
            for head in 0..heads {
                for q in 0..t {
                    let row = &mut uniform[((layer * heads + head) * t + q) * t..][..t];
                    let w = 1.0 / (q + 1) as f32;
                    for p in 0..=q {
                        row[p] = w;
                    }
                }
            }
        }
        let tensor_u = AttentionTensor::new(layers, heads, t, uniform).unwrap();
        let report_u = relative_delimiter_attention(&tensor_u, &roles, Aggregation::MeanAll).unwrap();
        assert!((report_u.mean_all.ratio - 1.0).abs() < 1e-6);

        let dir = tempfile::tempdir().unwrap();
        let labels: Vec<String> = (0..t)
            .map(|p| {
                if delims.contains(&p) {
                    "<seg>".to_string()
                } else {
                    format!("t{p}")
                }
            })
            .collect();
        let a = dir.path().join("a.svg");
        let b = dir.path().join("b.svg");
        heatmap_svg(&tensor, 1, 2, &labels, &a).unwrap();
        heatmap_svg(&tensor, 1, 2, &labels, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert!(!std::fs::read(&a).unwrap().is_empty());
    });
}

#[test]
fn criterion_8_transform_conservation() {
    criterion(8, "1000-record transform conserves counts and strip-round-trips", || {
        let dir = tempfile::tempdir().unwrap();
        let in_path = dir.path().join("tulu.jsonl");
        let out_path = dir.path().join("tulu-seg.jsonl");

        let mut rng = StdRng::seed_from_u64(8);
        let mut originals: HashMap<String, (String, String)> = HashMap::new();
        let mut file = std::fs::File::create(&in_path).unwrap();
        let mut n_filtered = 0usize;
        let mut valid = 0usize;
        // 795 keepers + 200 filtered + 5 malformed = 1000 lines
        for i in 0..1000usize {
            if i % 200 == 7 {
                writeln!(file, "{{not valid json").unwrap();
                continue;
            }
            valid += 1;
            let filtered = n_filtered < 200 && valid % 4 == 3;
            if filtered {
                n_filtered += 1;
            }
            let category = if filtered { "code" } else { "chat" };
            let prompt = format!("{} Count item {i}?", random_sentence(&mut rng));
            let response = format!("{} The item is {i}.", random_sentence(&mut rng));
            let record = serde_json::json!({
                "id": format!("rec-{i}"),
                "category": category,
                "prompt": prompt,
                "response": response,
                "source": "synthetic",
            });
            if !filtered {
                originals.insert(format!("rec-{i}"), (prompt, response));
            }
            writeln!(file, "{}", record).unwrap();
        }
        drop(file);

        let d = DelimiterSpec::seg();
        let report =
            transform_sft_dataset(&in_path, &out_path, &d, &["code".to_string()], InputFormat::Normalized)
                .unwrap();
        assert_eq!(report.read, 1000);
        assert_eq!(report.malformed, 5);
        assert_eq!(
            report.read,
            report.dropped_by_category + report.malformed + report.written
        );
        assert_eq!(report.written, originals.len());

        let out = std::fs::read_to_string(&out_path).unwrap();
        let mut seen = 0usize;
        for line in out.lines() {
            let rec: serde_json::Value = serde_json::from_str(line).unwrap();
            let id = rec["id"].as_str().unwrap();
            let (orig_prompt, orig_response) = &originals[id];
            assert_eq!(&strip_delimiters(rec["prompt"].as_str().unwrap(), &d), orig_prompt);
            assert_eq!(&strip_delimiters(rec["response"].as_str().unwrap(), &d), orig_response);
            assert_eq!(rec["delimiter"], "<seg>");
            assert_eq!(rec["source"], "synthetic", "extra fields must survive");
            seen += 1;
        }
        assert_eq!(seen, report.written);
        assert!(out_path.with_file_name("train_config.json").exists());
    });
}

#[test]
fn criterion_9_corpus_stats_oracle() {
    criterion(9, "streaming corpus stats equal a naive oracle on 10,000 sentences", || {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut rng = StdRng::seed_from_u64(9);
        let mut texts = Vec::new();
        let mut file = std::fs::File::create(&path).unwrap();
        // 1000 items × 10 sentences = 10,000 sentences
        for _ in 0..1000usize {
            let sents: Vec<String> = (0..10).map(|_| random_sentence(&mut rng)).collect();
            let text = sents.join(" ");
            writeln!(file, "{}", serde_json::json!({ "text": text })).unwrap();
            texts.push(text);
        }
        drop(file);

        let mut vocab = Vocabulary::new();
        let streamed = corpus_stats(&path, &mut vocab, "text").unwrap();

        // naive in-memory oracle over the same texts
        let mut naive = StatsAccumulator::default();
        let mut naive_vocab = Vocabulary::new();
        for text in &texts {
            naive.observe_item(&mut naive_vocab, text).unwrap();
        }
        let naive = naive.finish().unwrap();

        assert_eq!(streamed.total_sentences(), 10_000);
        assert_eq!(streamed.per_item_sentence_counts, naive.per_item_sentence_counts);
        assert_eq!(streamed.sentence_token_lengths, naive.sentence_token_lengths);
        assert_eq!(streamed.sentence_count_summary, naive.sentence_count_summary);
        assert_eq!(streamed.sentence_length_summary, naive.sentence_length_summary);
        assert_eq!(streamed.malformed, 0);
        assert_eq!(
            summarize(&streamed.sentence_token_lengths).unwrap(),
            streamed.sentence_length_summary
        );

        // histogram mass conservation, full and zoomed
        let full = histogram(&streamed.sentence_token_lengths, 1, None);
        let mass: usize = full.bins.iter().map(|b| b.count).sum();
        assert_eq!(mass + full.truncated_tail, streamed.sentence_token_lengths.len());
        assert_eq!(full.truncated_tail, 0);

        let p95 = segdelim::corpusstats::percentile(&streamed.sentence_token_lengths, 95.0).unwrap();
        let zoom = histogram(&streamed.sentence_token_lengths, 1, Some(p95));
        let zoom_mass: usize = zoom.bins.iter().map(|b| b.count).sum();
        assert_eq!(zoom_mass + zoom.truncated_tail, streamed.sentence_token_lengths.len());
    });
}

//! One PASS/FAIL line per acceptance criterion.

mod common;
#[path = "../../core/tests/common/mod.rs"]
mod lib_common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestRunner};
use sitehazard::extraction::{evaluate_accuracy, extract_all, parse_extraction_json, read_gold};
use sitehazard::ingest::{truncate_text, CorpusStore, REPORT_CHAR_LIMIT};
use sitehazard::rulevqa::{
    self, f1_score, load_manifest, majority_vote, read_results, report_table, AnswerOutcome, Mode, SafetyRule,
    TableRow,
};
use sitehazard::vision::{ratio_to_pixels, CropRegion, PixelRect, RatioBBox};
use sitehazard::{Execution, Taxonomy};

type Outcome = Result<String, String>;
type Criterion = (u8, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    }};
}

fn table4() -> Vec<(&'static str, f64, f64, f64)> {
    vec![
        ("GPT", 20.4, 76.4, 32.2),
        ("GPT 5-shot", 18.2, 89.4, 30.2),
        ("LLaVA 13B", 12.0, 54.0, 19.6),
        ("LLaVA 13B CoT", 12.0, 55.0, 19.7),
        ("LLaVA 34B 1-shot", 14.3, 13.0, 13.6),
        ("Qwen2-VL-2B", 66.0, 67.3, 66.7),
        ("Qwen2-VL-2B(10 prompt)", 67.2, 98.0, 72.6),
        ("Molmo-7B", 85.7, 48.0, 61.5),
        ("Molmo-7B (10 prompt)", 58.2, 79.6, 67.2),
    ]
}

fn criterion_1() -> Outcome {
    let rows = table4();
    let mut mismatched = Vec::new();
    for (model, p, r, printed) in &rows {
        let f1 = 100.0 * f1_score(p / 100.0, r / 100.0);
        let shown: f64 = format!("{f1:.1}").parse().unwrap();
        if (shown - printed).abs() > 0.1 + 1e-9 {
            mismatched.push((*model, shown));
        }
    }
    ensure!(
        mismatched == [("Qwen2-VL-2B(10 prompt)", 79.7)],
        "rows off by more than 0.1: {mismatched:?}"
    );
    let table = report_table(
        &rows
            .iter()
            .map(|(m, p, r, f)| TableRow::from_percent(*m, *p, *r, Some(*f)))
            .collect::<Vec<_>>(),
    );
    ensure!(
        table.flags == ["Qwen2-VL-2B(10 prompt): computed F1 79.7 differs from reported 72.6"],
        "flags: {:?}",
        table.flags
    );
    let m = rulevqa::compute_metrics(33, 17, 16, 0);
    ensure!((100.0 * m.f1 - 66.7).abs() < 0.05, "count-based F1 {}", m.f1);
    Ok(format!("8 rows within 0.1, 1 flagged ({})", table.flags[0]))
}

fn criterion_2() -> Outcome {
    let dir = lib_common::extraction_fixture_dir();
    let store = CorpusStore::open_existing(&dir.join("corpus")).map_err(|e| e.to_string())?;
    let reports: Vec<_> = store.list().iter().map(|id| store.get(id).unwrap()).collect();
    ensure!(reports.len() == 20, "{} reports", reports.len());
    let tax = Taxonomy::load();
    let gold = read_gold(&dir.join("gold.csv"), &tax).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().unwrap();
    let fixture = tmp.path().join("extraction.jsonl");
    lib_common::record(&fixture, lib_common::canned_extraction_model(), |g| {
        extract_all(&reports, &tax, g, Execution::Sequential)
    });
    let started = Instant::now();
    let mut seen = Vec::new();
    for _ in 0..3 {
        let g = lib_common::replay(&fixture);
        let records: Vec<_> = extract_all(&reports, &tax, &g, Execution::Parallel)
            .into_iter()
            .filter_map(Result::ok)
            .map(|o| o.record)
            .collect();
        let acc = evaluate_accuracy(&records, &gold).map_err(|e| e.to_string())?;
        seen.push((acc.correct, acc.total, acc.accuracy));
    }
    let elapsed = started.elapsed();
    ensure!(seen.iter().all(|s| *s == (17, 20, 0.85)), "accuracies {seen:?}");
    ensure!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    Ok(format!("17/20 = 0.85 on 3 runs in {:.2}s", elapsed.as_secs_f64()))
}

/// Canned answer of sample `i` to prompt `p` (1-based).
fn canned_vqa(i: usize, p: usize) -> &'static str {
    match i {
        3 => "maybe, hard to say",
        5 if p <= 5 => "Yes.",
        5 => "No.",
        _ => match (i * 7 + p * 3) % 5 {
            0 | 1 => "Yes, a worker has no hard hat.",
            2 | 3 => "No",
            _ => "The image is unclear.",
        },
    }
}

fn criterion_3() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let golds: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
    let manifest = lib_common::vqa_corpus(tmp.path(), &golds);
    let samples = load_manifest(&manifest).map_err(|e| e.to_string())?;
    let rule = SafetyRule::ppe();
    let fixture = tmp.path().join("vqa.jsonl");
    lib_common::record(
        &fixture,
        |body| {
            let (i, p) = lib_common::vqa_request(body);
            canned_vqa(i, p).to_string()
        },
        |g| rulevqa::evaluate(&samples, &rule, Mode::Ensemble, g, Execution::Parallel),
    )
    .map_err(|e| e.to_string())?;

    let g = lib_common::replay(&fixture);
    let eval = rulevqa::evaluate(&samples, &rule, Mode::Ensemble, &g, Execution::Parallel).map_err(|e| e.to_string())?;
    let out = tmp.path().join("out");
    eval.write_outputs(&out, "canned", &[]).map_err(|e| e.to_string())?;
    let persisted = read_results(&out.join("results.jsonl")).map_err(|e| e.to_string())?;
    ensure!(persisted.len() == 20, "{} persisted rows", persisted.len());

    let mut brute = BTreeMap::from([("tp", 0), ("fp", 0), ("fn", 0), ("tn", 0)]);
    for r in &persisted {
        ensure!(r.responses.len() == 10, "{}: {} responses", r.sample_id, r.responses.len());
        let key = match (r.decision, r.gold) {
            (Some(true), true) => "tp",
            (Some(true), false) => "fp",
            (Some(false), true) => "fn",
            (Some(false), false) => "tn",
            (None, _) => return Err(format!("{} has no decision", r.sample_id)),
        };
        *brute.get_mut(key).unwrap() += 1;
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    for (k, v) in &brute {
        ensure!(metrics["metrics"][k] == *v, "{k}: harness {} vs recount {v}", metrics["metrics"][k]);
    }
    let m = eval.metrics;
    ensure!(
        (m.tp, m.fp, m.fn_, m.tn) == (brute["tp"], brute["fp"], brute["fn"], brute["tn"]),
        "in-memory metrics {m:?} vs recount {brute:?}"
    );

    for (i, r) in persisted.iter().enumerate() {
        let answers: Vec<&str> = (1..=10).map(|p| canned_vqa(i, p)).collect();
        let first_word = |a: &str| {
            a.split(|c: char| !c.is_alphanumeric())
                .find(|w| !w.is_empty())
                .unwrap_or("")
                .to_ascii_lowercase()
        };
        let yes = answers.iter().filter(|a| first_word(a) == "yes").count();
        let no = answers.iter().filter(|a| first_word(a) == "no").count();
        let expected = yes + no > 0 && yes >= no;
        ensure!(r.decision == Some(expected), "{}: decision {:?}, recount yes={yes} no={no}", r.sample_id, r.decision);
        ensure!(r.flagged == (yes + no == 0), "{}: flagged {}", r.sample_id, r.flagged);
    }
    ensure!(persisted[5].vote.map(|v| v.tie_broken) == Some(true), "sample 5 should be a broken tie");
    Ok(format!(
        "tp={} fp={} fn={} tn={} match the recount",
        brute["tp"], brute["fp"], brute["fn"], brute["tn"]
    ))
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(RunnerConfig {
        cases,
        failure_persistence: None,
        ..RunnerConfig::default()
    })
}

fn outcome() -> impl Strategy<Value = AnswerOutcome> {
    prop_oneof![
        Just(AnswerOutcome::Yes),
        Just(AnswerOutcome::No),
        "[a-z]{0,6}".prop_map(AnswerOutcome::Invalid),
    ]
}

fn criterion_4() -> Outcome {
    let tie: Vec<_> = [vec![AnswerOutcome::Yes; 5], vec![AnswerOutcome::No; 5]].concat();
    let v = majority_vote(&tie).map_err(|e| e.to_string())?;
    ensure!(v.decision && v.tie_broken, "5-5 tie gave {v:?}");

    let cases = 1000;
    let strategy = (prop::collection::vec(outcome(), 1..16), any::<u64>(), 0usize..16);
    runner(cases)
        .run(&strategy, |(votes, seed, extra)| {
            let base = majority_vote(&votes);
            let mut shuffled = votes.clone();
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(&base, &majority_vote(&shuffled));
            if let Ok(r) = base {
                prop_assert_eq!(r.decision, r.yes_count >= r.no_count);
                prop_assert_eq!(r.tie_broken, r.yes_count == r.no_count);
                let mut more_yes = votes.clone();
                more_yes.extend(std::iter::repeat_n(AnswerOutcome::Yes, extra));
                let after = majority_vote(&more_yes).unwrap();
                prop_assert!(after.decision || !r.decision);
                let mut more_no = votes.clone();
                more_no.extend(std::iter::repeat_n(AnswerOutcome::No, extra));
                let after = majority_vote(&more_no).unwrap();
                prop_assert_eq!(after.decision, r.yes_count >= r.no_count + extra);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} random vectors; 5-5 tie predicts a violation"))
}

fn criterion_5() -> Outcome {
    let cases = 10_000;
    let strategy = (
        -0.5f64..1.5,
        -0.5f64..1.5,
        0.0005f64..1.5,
        0.0005f64..1.5,
        1u32..4096,
        1u32..4096,
        prop::collection::vec(0.0f64..1.0, 4),
    );
    runner(cases)
        .run(&strategy, |(cx, cy, w, h, iw, ih, other)| {
            let b = RatioBBox::clamped(cx, cy, w, h).unwrap();
            let rect = ratio_to_pixels(&b, iw, ih);
            prop_assert!(rect.is_valid_in(iw, ih), "{:?} in {}x{}", rect, iw, ih);
            prop_assert!(rect.x0 < rect.x1 && rect.y0 < rect.y1 && rect.x1 <= iw && rect.y1 <= ih);

            let crop = CropRegion::around(&rect, iw, ih, 0.5);
            prop_assert!(crop.rect.is_valid_in(iw, ih));
            let local = crop.to_crop(&b);
            let (ox, oy) = crop.offset();
            let back = ratio_to_pixels(&local, crop.rect.width(), crop.rect.height());
            let shifted = PixelRect {
                x0: back.x0 + ox,
                y0: back.y0 + oy,
                x1: back.x1 + ox,
                y1: back.y1 + oy,
            };
            let full = ratio_to_pixels(&crop.to_full(&local), iw, ih);
            for (got, want) in [(shifted, rect), (full, rect)] {
                let d = [
                    got.x0.abs_diff(want.x0),
                    got.y0.abs_diff(want.y0),
                    got.x1.abs_diff(want.x1),
                    got.y1.abs_diff(want.y1),
                ];
                prop_assert!(d.iter().all(|&e| e <= 1), "{:?} vs {:?}", got, want);
            }

            let o = RatioBBox::clamped(other[0], other[1], other[2].max(0.001), other[3].max(0.001)).unwrap();
            let (ab, ba) = (b.iou(&o), o.iou(&b));
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(b.iou(&b), 1.0);
            let other_rect = ratio_to_pixels(&o, iw, ih);
            let (pab, pba) = (rect.iou(&other_rect), other_rect.iou(&rect));
            prop_assert_eq!(pab, pba);
            prop_assert!((0.0..=1.0).contains(&pab));
            prop_assert_eq!(rect.iou(&rect), 1.0);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} random box/image pairs"))
}

fn criterion_6() -> Outcome {
    let store = CorpusStore::open_existing(&lib_common::extraction_fixture_dir().join("corpus"))
        .map_err(|e| e.to_string())?;
    let mut longest = 0;
    for id in store.list() {
        let n = store.get(&id).map_err(|e| e.to_string())?.raw_text.chars().count();
        ensure!(n <= REPORT_CHAR_LIMIT, "report {id} has {n} chars");
        longest = longest.max(n);
    }

    runner(1000)
        .run(&(any::<String>(), 0usize..64), |(s, limit)| {
            let (once, _) = truncate_text(&s, limit);
            let (twice, cut) = truncate_text(&once, limit);
            prop_assert_eq!(&once, &twice);
            prop_assert!(!cut);
            prop_assert!(s.starts_with(&once));
            prop_assert_eq!(once.chars().count(), s.chars().count().min(limit));
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    for wide in ['\u{1F477}', 'é', '工'] {
        let text: String = "a".repeat(REPORT_CHAR_LIMIT - 1) + &wide.to_string().repeat(3);
        let (out, cut) = truncate_text(&text, REPORT_CHAR_LIMIT);
        ensure!(cut, "{wide:?}: not cut");
        ensure!(out.chars().count() == REPORT_CHAR_LIMIT, "{wide:?}: {} chars", out.chars().count());
        ensure!(out.ends_with(wide), "{wide:?}: last char split or dropped");
        ensure!(std::str::from_utf8(out.as_bytes()).is_ok(), "{wide:?}: invalid UTF-8");
    }
    Ok(format!(
        "{} stored reports, longest {longest} chars; idempotent; wide chars kept whole",
        store.len()
    ))
}

fn criterion_7() -> Outcome {
    let tax = Taxonomy::load();
    let sizes: Vec<usize> = tax.families().iter().map(|f| tax.categories_in(f.id).count()).collect();
    ensure!(sizes == [5, 5, 5, 5, 4, 5, 5, 4, 4], "family sizes {sizes:?}");
    ensure!(tax.len() == 42, "{} categories", tax.len());
    let mut names = std::collections::HashSet::new();
    for c in tax.categories() {
        ensure!(names.insert(c.name.as_str()), "duplicate name {}", c.name);
        ensure!(tax.id_by_name(&c.name) == Some(c.id), "name {} does not map back", c.name);
        ensure!(tax.resolve(c.id as i64).map(|x| x.name.as_str()) == Ok(c.name.as_str()), "id {}", c.id);
    }
    let ids: Vec<u32> = tax.categories().iter().map(|c| c.id).collect();
    ensure!(ids == (1..=42).collect::<Vec<_>>(), "ids {ids:?}");
    Ok("9 families sized 5,5,5,5,4,5,5,4,4; 42 ids map one-to-one to names".into())
}

fn criterion_8() -> Outcome {
    use common::*;
    let tmp = tempfile::tempdir().unwrap();
    let started = Instant::now();

    let images = tmp.path().join("images");
    fs::create_dir(&images).unwrap();
    fs::write(images.join("deck.png"), png(320, 240, 1)).unwrap();
    fs::write(images.join("yard.png"), png(240, 320, 2)).unwrap();
    let vision_fixture = tmp.path().join("vision.jsonl");
    let vision = ["vision", "--images", images.to_str().unwrap()];
    let model = FakeModel::start(vision_model);
    let rec = record_run(&model, &vision_fixture, &tmp.path().join("vrec"), &vision);
    ensure!(code(&rec) == 0, "vision recording exited {}", code(&rec));

    let data = tmp.path().join("bench");
    fs::create_dir(&data).unwrap();
    let manifest = vqa_corpus(&data, 20);
    let bench_fixture = tmp.path().join("bench.jsonl");
    let bench = ["bench", "--manifest", manifest.to_str().unwrap(), "--mode", "ensemble"];
    let model = FakeModel::start(vqa_model);
    let rec = record_run(&model, &bench_fixture, &tmp.path().join("brec"), &bench);
    ensure!(code(&rec) == 0, "bench recording exited {}", code(&rec));

    let mut runs = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("run{i}"));
        let v = replay_run(&vision_fixture, &out.join("vision"), &vision);
        ensure!(code(&v) == 0, "vision replay exited {}", code(&v));
        let b = replay_run(&bench_fixture, &out.join("bench"), &bench);
        ensure!(code(&b) == 0, "bench replay exited {}", code(&b));
        let files = [
            out.join("vision/deck/annotations.json"),
            out.join("vision/yard/annotations.json"),
            out.join("bench/metrics.csv"),
        ];
        runs.push(files.iter().map(|f| fs::read(f).map_err(|e| format!("{}: {e}", f.display()))).collect::<Result<Vec<_>, _>>()?);
    }
    ensure!(runs[0] == runs[1], "replay outputs differ between runs");
    let elapsed = started.elapsed();
    ensure!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    Ok(format!(
        "annotations.json x2 and metrics.csv identical across replays ({:.2}s)",
        elapsed.as_secs_f64()
    ))
}

fn criterion_9() -> Outcome {
    let tax = Taxonomy::load();
    let base = parse_extraction_json(lib_common::BASE_ANSWER, &tax);
    ensure!(base.is_ok(), "base answer rejected: {:?}", base.err());
    let cases = lib_common::rejection_cases();
    ensure!(cases.len() >= 10, "only {} cases", cases.len());
    for (name, text, expect) in &cases {
        match parse_extraction_json(text, &tax) {
            Ok(r) => return Err(format!("{name}: accepted as {r:?}")),
            Err(e) => ensure!(expect.matches(&e), "{name}: expected {expect:?}, got {e:?}"),
        }
    }
    Ok(format!("{} malformed outputs each rejected with the expected error", cases.len()))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        (1, "F1 arithmetic and inconsistent row flag", criterion_1),
        (2, "extraction replay accuracy", criterion_2),
        (3, "ensemble confusion recount", criterion_3),
        (4, "vote properties", criterion_4),
        (5, "geometry properties", criterion_5),
        (6, "truncation conformance", criterion_6),
        (7, "taxonomy integrity", criterion_7),
        (8, "replay determinism of vision and bench", criterion_8),
        (9, "schema rejection corpus", criterion_9),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stdout();
    for (n, name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let line = match &result {
            Ok(detail) => format!("PASS criterion {n}: {name}: {detail}"),
            Err(why) => format!("FAIL criterion {n}: {name}: {why}"),
        };
        writeln!(out, "{line}").unwrap();
        if result.is_err() {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

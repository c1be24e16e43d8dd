//! Criterion-level checks shared by the integration tests and the
//! acceptance runner. Every check panics on the first failure.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{arb_document, arb_spans, bitmap_merge, brute_force_hull, doc, numbered_words, path, LABELS, THREE};
use uner::codecs::io::{convert, ReadOptions};
use uner::codecs::{
    decode_inline_xml, decode_iob2, decode_spans, encode_inline_xml, encode_iob2, encode_spans, validate, Format,
    WhitespaceTokenizer,
};
use uner::ensemble::{merge_corpus, ModelRun};
use uner::evaluation::{score, MatchLevel};
use uner::kb::{correct_span, CorrectionAction, CorrectionPolicy, KbMappings, KbRecord, TraceReason};
use uner::pipeline::{correct_stage, Context, CorrectOptions};
use uner::projection::{
    project_corpus, project_document, AlignedSentencePair, OnCollision, ProjectionConfig, ProjectionReason,
};
use uner::review::{apply_verdicts, generate_tasks, Action, ReviewTask, Sampling, Verdict};
use uner::taxonomy::{SchemeRegistry, UNER_TAXONOMY_JSON};
use uner::{AnnotatedDocument, Taxonomy};

/// Run `test` over `cases` generated values; panic with the shrunk
/// counterexample on failure.
pub fn property<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    if let Err(e) = runner.run(&strategy, test) {
        panic!("{e}");
    }
}

pub fn words_doc(id: &str, n: usize, spans: &[(usize, usize, &str)]) -> AnnotatedDocument {
    let words = numbered_words(n);
    let refs: Vec<&str> = words.iter().map(String::as_str).collect();
    doc(id, "xx", &refs, spans)
}

// Taxonomy

/// Parse the shipped taxonomy from its JSON text and count nodes per level.
pub fn taxonomy_level_counts() -> [usize; 5] {
    let taxonomy = Taxonomy::from_json(UNER_TAXONOMY_JSON).unwrap();
    taxonomy.level_counts()
}

// Codecs

type Key = (usize, usize, usize, usize, String);

fn keys(d: &AnnotatedDocument) -> Vec<Key> {
    d.spans
        .iter()
        .map(|s| {
            (
                s.token_start,
                s.token_end,
                s.char_start,
                s.char_end,
                s.label.to_string(),
            )
        })
        .collect()
}

fn same_content(a: &AnnotatedDocument, b: &AnnotatedDocument) -> Result<(), TestCaseError> {
    prop_assert_eq!(&a.text, &b.text);
    prop_assert_eq!(&a.tokens, &b.tokens);
    prop_assert_eq!(keys(a), keys(b));
    Ok(())
}

pub fn via_iob2(d: &AnnotatedDocument) -> AnnotatedDocument {
    let tags = encode_iob2(d).unwrap();
    let decoded = decode_iob2(&tags, &d.unannotated(), "test").unwrap();
    assert!(decoded.warnings.is_empty());
    decoded.value
}

pub fn via_xml(d: &AnnotatedDocument) -> AnnotatedDocument {
    let xml = encode_inline_xml(d).unwrap();
    let decoded = decode_inline_xml(&xml, &WhitespaceTokenizer, &d.doc_id, &d.lang, "test").unwrap();
    assert!(decoded.warnings.is_empty());
    decoded.value
}

/// Spans record through `from`, then `from` to `to`, then back to spans.
fn streamed(d: &AnnotatedDocument, from: Format, to: Format) -> AnnotatedDocument {
    let opts = ReadOptions {
        lang: &d.lang,
        source: "test",
        tokenizer: &WhitespaceTokenizer,
    };
    let line = encode_spans(d) + "\n";
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    convert(line.as_bytes(), &mut a, Format::Spans, from, &opts).unwrap();
    convert(a.as_slice(), &mut b, from, to, &opts).unwrap();
    convert(b.as_slice(), &mut c, to, Format::Spans, &opts).unwrap();
    decode_spans(String::from_utf8(c).unwrap().trim_end()).unwrap()
}

/// Spans record identity, spans↔IOB2, spans↔XML and both compositions, in
/// memory and through the streaming converter.
pub fn codec_round_trips(cases: u32) {
    let taxonomy = Taxonomy::uner();
    property(cases, arb_document(), |d| {
        let back = decode_spans(&encode_spans(&d)).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert!(validate(&back, &taxonomy).is_empty());

        same_content(&via_iob2(&d), &d)?;
        same_content(&via_xml(&d), &d)?;
        same_content(&via_xml(&via_iob2(&d)), &d)?;
        same_content(&via_iob2(&via_xml(&d)), &d)?;
        prop_assert_eq!(encode_iob2(&via_xml(&via_iob2(&d))).unwrap(), encode_iob2(&d).unwrap());
        prop_assert_eq!(
            encode_inline_xml(&via_iob2(&via_xml(&d))).unwrap(),
            encode_inline_xml(&d).unwrap()
        );

        for (from, to) in [(Format::Iob2, Format::Xml), (Format::Xml, Format::Iob2)] {
            same_content(&streamed(&d, from, to), &d)?;
        }
        Ok(())
    });
}

/// Character offsets of "George Clooney" in its interchange record.
pub fn clooney_offsets() -> (u64, u64) {
    let d = doc(
        "d1",
        "en",
        &["George", "Clooney", "arrived"],
        &[(0, 2, "Name.Person.Name")],
    );
    let record: serde_json::Value = serde_json::from_str(&encode_spans(&d)).unwrap();
    let span = &record["spans"][0];
    (span["start"].as_u64().unwrap(), span["end"].as_u64().unwrap())
}

// Ensemble

fn observed(doc: &AnnotatedDocument) -> Vec<(usize, usize, String, usize)> {
    let mut out: Vec<_> = doc
        .spans
        .iter()
        .map(|s| {
            (
                s.token_start,
                s.token_end,
                s.label.to_string(),
                s.source[1..].parse().unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

const N: usize = 10;

type Models = Vec<Vec<Vec<(usize, usize, &'static str)>>>;

fn corpus_runs(models: &Models) -> Vec<ModelRun> {
    models
        .iter()
        .enumerate()
        .map(|(m, docs)| {
            let documents = docs
                .iter()
                .enumerate()
                .map(|(d, spans)| {
                    let mut doc = AnnotatedDocument::from_words(format!("d{d}"), "xx", &numbered_words(N));
                    for (k, &(s, e, l)) in spans.iter().enumerate() {
                        let span = doc.make_span(format!("x{k}"), s, e, path(l), "raw", None);
                        doc.spans.push(span);
                    }
                    doc
                })
                .collect();
            ModelRun::new(format!("m{m}"), Some(0.9 - 0.1 * m as f64), "uner", documents).unwrap()
        })
        .collect()
}

fn arb_models() -> impl Strategy<Value = Models> {
    proptest::collection::vec(proptest::collection::vec(arb_spans(N, THREE), 3), 1..=4)
}

/// Three-document corpora from up to four models, fed in a rotated order,
/// against the bitmap oracle.
pub fn ensemble_matches_oracle(cases: u32) {
    let taxonomy = Taxonomy::uner();
    let schemes = SchemeRegistry::shipped(&taxonomy).unwrap();
    property(cases, (arb_models(), 0usize..4), |(models, rotate)| {
        let mut runs = corpus_runs(&models);
        let k = rotate % runs.len();
        runs.rotate_left(k);
        let (merged, _) = merge_corpus(&runs, &taxonomy, &schemes).unwrap();
        for (d, doc) in merged.iter().enumerate() {
            let inputs: Vec<_> = models.iter().map(|m| m[d].clone()).collect();
            prop_assert_eq!(observed(doc), bitmap_merge(N, &inputs));
        }
        Ok(())
    });
}

/// Appending a lower-priority model keeps every merged span and never
/// shrinks coverage.
pub fn ensemble_monotone(cases: u32) {
    let taxonomy = Taxonomy::uner();
    let schemes = SchemeRegistry::shipped(&taxonomy).unwrap();
    let extra = proptest::collection::vec(arb_spans(N, THREE), 3);
    property(cases, (arb_models(), extra), |(models, extra)| {
        let (before, _) = merge_corpus(&corpus_runs(&models), &taxonomy, &schemes).unwrap();
        let mut more = models.clone();
        more.push(extra);
        let (after, _) = merge_corpus(&corpus_runs(&more), &taxonomy, &schemes).unwrap();
        for (b, a) in before.iter().zip(&after) {
            let a_spans = observed(a);
            for span in observed(b) {
                prop_assert!(a_spans.contains(&span));
            }
            let covered = |d: &AnnotatedDocument| d.spans.iter().map(|s| s.len()).sum::<usize>();
            prop_assert!(covered(a) >= covered(b));
        }
        Ok(())
    });
}

/// Every span of the highest-recall model survives; output stays flat.
pub fn ensemble_priority(cases: u32) {
    let taxonomy = Taxonomy::uner();
    let schemes = SchemeRegistry::shipped(&taxonomy).unwrap();
    property(cases, arb_models(), |models| {
        let (merged, report) = merge_corpus(&corpus_runs(&models), &taxonomy, &schemes).unwrap();
        for (d, doc) in merged.iter().enumerate() {
            let out = observed(doc);
            for &(s, e, l) in &models[0][d] {
                prop_assert!(out.contains(&(s, e, l.to_string(), 0)));
            }
            prop_assert!(doc.first_overlap().is_none());
        }
        prop_assert_eq!(report.models["m0"].suppressed, 0);
        Ok(())
    });
}

// Knowledge-base correction

/// Strict descent by segment comparison.
fn below(candidate: &str, current: &str) -> bool {
    let c: Vec<&str> = candidate.split('.').collect();
    let l: Vec<&str> = current.split('.').collect();
    c.len() > l.len() && c[..l.len()] == l[..]
}

pub fn all_paths() -> Vec<String> {
    Taxonomy::uner().paths().map(|p| p.to_string()).collect()
}

/// One class per node, named after the node, in every listed kb.
pub fn mirror_mappings(kbs: &[&str]) -> KbMappings {
    let mut tsv = String::new();
    for kb in kbs {
        for p in all_paths() {
            tsv.push_str(&format!("{kb}\t{kb}:{p}\t{p}\n"));
        }
    }
    KbMappings::from_tsv(&tsv, &Taxonomy::uner()).unwrap()
}

pub fn kb_record(classes: &[(&str, Vec<String>)]) -> KbRecord {
    let mut r = KbRecord::empty("x");
    for (kb, cs) in classes {
        r.classes.insert(kb.to_string(), cs.clone());
    }
    r
}

pub fn span_with(label: &str) -> uner::EntitySpan {
    let d = AnnotatedDocument::from_words("d", "en", &["x", "y"]);
    d.make_span("s0", 0, 2, path(label), "model", Some(0.7))
}

/// Every (action, current label, KB label) combination plus the no-evidence
/// case, against the policy table. Returns the number of cases.
pub fn kb_policy_table() -> usize {
    let mappings = mirror_mappings(&["dbpedia"]);
    let paths = all_paths();
    let mut cases = 0;
    for action in [
        CorrectionAction::RefineOnly,
        CorrectionAction::Replace,
        CorrectionAction::AnnotateOnly,
    ] {
        let policy = CorrectionPolicy::new(vec!["dbpedia".into()], action).unwrap();
        for current in &paths {
            let span = span_with(current);
            let (out, trace) = correct_span("d", &span, &KbRecord::empty("x"), &mappings, &policy);
            assert_eq!(out, span);
            assert_eq!(trace.reason, TraceReason::NoEvidence);
            assert_eq!(trace.evidence, None);
            cases += 1;

            for candidate in &paths {
                let rec = kb_record(&[("dbpedia", vec![format!("dbpedia:{candidate}")])]);
                let (out, trace) = correct_span("d", &span, &rec, &mappings, &policy);
                let (label, reason) = match action {
                    CorrectionAction::AnnotateOnly => (current, TraceReason::Annotated),
                    _ if candidate == current => (candidate, TraceReason::UnchangedByIdentity),
                    CorrectionAction::RefineOnly if below(candidate, current) => (candidate, TraceReason::Refined),
                    CorrectionAction::RefineOnly => (current, TraceReason::ConflictSuppressed),
                    CorrectionAction::Replace => (candidate, TraceReason::Replaced),
                };
                assert_eq!(trace.reason, reason, "{action} {current} <- {candidate}");
                assert_eq!(out.label.as_str(), label);
                let relabeled = matches!(
                    reason,
                    TraceReason::Refined | TraceReason::Replaced | TraceReason::UnchangedByIdentity
                );
                assert_eq!(out.source, if relabeled { "kb:dbpedia" } else { "model" });
                assert_eq!(out.confidence, span.confidence);
                assert_eq!(trace.old_label.as_str(), current);
                let shown = if reason == TraceReason::ConflictSuppressed {
                    current
                } else {
                    candidate
                };
                assert_eq!(trace.new_label.as_str(), shown);
                assert_eq!(
                    trace.evidence,
                    Some(("dbpedia".to_string(), format!("dbpedia:{candidate}")))
                );
                assert_eq!(
                    (out.token_start, out.token_end, out.char_start, out.char_end),
                    (0, 2, 0, 3)
                );
                assert_eq!(out.id, span.id);
                cases += 1;
            }
        }
    }
    cases
}

pub struct KbRuns {
    pub identical: bool,
    pub client_calls: usize,
    pub network_calls: usize,
}

/// The correction stage over the committed demo corpus and fixture store,
/// run twice offline, with endpoints configured that must not be touched.
pub fn kb_fixture_runs(dir: &Path) -> KbRuns {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo");
    let ctx = Context::load(None, &[]).unwrap();
    let options = CorrectOptions {
        fixtures: Some(data.join("kb_fixtures.jsonl")),
        offline: true,
        endpoints: vec![("wikidata".into(), "http://127.0.0.1:9/sparql".into())],
        ..Default::default()
    };
    let mut outputs = Vec::new();
    let mut client_calls = 0;
    let mut network_calls = 0;
    for k in 0..2 {
        let out = dir.join(format!("corrected{k}.jsonl"));
        let report = dir.join(format!("report{k}.json"));
        let r = correct_stage(&ctx, &data.join("gold.jsonl"), &out, Some(&report), &options).unwrap();
        client_calls += r.client_calls;
        network_calls += r.network_calls;
        outputs.push((std::fs::read(out).unwrap(), std::fs::read(report).unwrap()));
    }
    KbRuns {
        identical: outputs[0] == outputs[1],
        client_calls,
        network_calls,
    }
}

// Projection

fn random_spans(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize, &'static str)> {
    let mut out = Vec::new();
    let mut pos = rng.gen_range(0..2);
    while pos < n {
        let end = (pos + rng.gen_range(1..=3)).min(n);
        out.push((pos, end, LABELS[rng.gen_range(0..LABELS.len())]));
        pos = end + rng.gen_range(0..3);
    }
    out
}

/// 100 pairs with equal-length sides and identity links.
pub fn identity_pairs(seed: u64) -> Vec<AlignedSentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..100)
        .map(|k| {
            let n = rng.gen_range(1..=20);
            let spans = random_spans(&mut rng, n);
            let id = format!("p{k}");
            AlignedSentencePair::new(
                &id,
                words_doc(&id, n, &spans),
                words_doc(&id, n, &[]),
                (0..n).map(|i| (i, i)),
            )
            .unwrap()
        })
        .collect()
}

/// Projection rate of the identity corpus; panics unless the projected
/// spans equal the source spans index-wise.
pub fn identity_fixpoint() -> f64 {
    let pairs = identity_pairs(7);
    let (targets, report) = project_corpus(&pairs, &ProjectionConfig::default()).unwrap();
    for (pair, target) in pairs.iter().zip(&targets) {
        let key = |d: &AnnotatedDocument| {
            d.spans
                .iter()
                .map(|s| (s.token_start, s.token_end, s.char_start, s.char_end, s.label.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(key(target), key(&pair.source));
        assert!(validate(target, &Taxonomy::uner()).is_empty());
    }
    let total: usize = pairs.iter().map(|p| p.source.spans.len()).sum();
    assert_eq!(report.count(ProjectionReason::Projected), total);
    report.projection_rate().unwrap()
}

/// Source length, target length, source spans, links.
pub type RawPair = (
    usize,
    usize,
    Vec<(usize, usize, &'static str)>,
    BTreeSet<(usize, usize)>,
);

pub fn arb_pair() -> impl Strategy<Value = RawPair> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(n, m)| {
        (
            Just(n),
            Just(m),
            arb_spans(n, LABELS),
            proptest::collection::btree_set((0..n, 0..m), 0..=(n * m).min(12)),
        )
    })
}

pub fn make_pair(raw: &RawPair) -> AlignedSentencePair {
    let (n, m, spans, links) = raw;
    AlignedSentencePair::new(
        "p",
        words_doc("p", *n, spans),
        words_doc("p", *m, &[]),
        links.iter().copied(),
    )
    .unwrap()
}

/// Independent per-document expectation: hull by enumeration, then
/// placement in source order (drop) or by target position (keep-first).
pub fn projection_oracle(
    raw: &RawPair,
    min_cov: f64,
    policy: OnCollision,
) -> (Vec<(usize, usize, String)>, Vec<ProjectionReason>) {
    let (_, m, spans, links) = raw;
    let mut reasons = Vec::new();
    let mut candidates = Vec::new();
    for (k, &(s, e, l)) in spans.iter().enumerate() {
        let touched = (s..e).any(|i| (0..*m).any(|j| links.contains(&(i, j))));
        match brute_force_hull((s, e), links, *m, min_cov) {
            Some(h) => {
                reasons.push(ProjectionReason::Projected);
                candidates.push((h, k, l));
            }
            None if touched => reasons.push(ProjectionReason::LowCoverage),
            None => reasons.push(ProjectionReason::Unaligned),
        }
    }
    if policy == OnCollision::KeepFirst {
        candidates.sort();
    }
    let mut used = vec![false; *m];
    let mut placed = Vec::new();
    for ((lo, hi), k, l) in candidates {
        if used[lo..hi].iter().any(|&u| u) {
            reasons[k] = ProjectionReason::Collision;
        } else {
            used[lo..hi].iter_mut().for_each(|u| *u = true);
            placed.push((lo, hi, l.to_string()));
        }
    }
    placed.sort();
    (placed, reasons)
}

/// Random pairs of up to eight tokens a side, thresholds on a 1/8 grid,
/// both collision policies.
pub fn projection_matches_oracle(cases: u32) {
    let taxonomy = Taxonomy::uner();
    property(
        cases,
        (arb_pair(), 0usize..=8, any::<bool>()),
        |(raw, k, keep_first)| {
            let min_cov = k as f64 / 8.0;
            let policy = if keep_first {
                OnCollision::KeepFirst
            } else {
                OnCollision::Drop
            };
            let pair = make_pair(&raw);
            let (target, outcomes) = project_document(&pair, &ProjectionConfig::new(min_cov, policy).unwrap()).unwrap();
            let (placed, reasons) = projection_oracle(&raw, min_cov, policy);
            let got: Vec<(usize, usize, String)> = target
                .spans
                .iter()
                .map(|s| (s.token_start, s.token_end, s.label.to_string()))
                .collect();
            prop_assert_eq!(got, placed);
            prop_assert_eq!(outcomes.iter().map(|o| o.reason).collect::<Vec<_>>(), reasons);
            prop_assert!(validate(&target, &taxonomy).is_empty());
            for (o, s) in outcomes.iter().zip(&raw.2) {
                if let Some((lo, hi)) = o.target_range {
                    let hit: BTreeSet<usize> = raw
                        .3
                        .iter()
                        .filter(|(i, _)| (s.0..s.1).contains(i))
                        .map(|&(_, j)| j)
                        .collect();
                    prop_assert_eq!(o.hull_gapped, hit.len() != hi - lo);
                }
            }
            Ok(())
        },
    );
}

/// Raising the threshold never admits a new candidate; the placed count is
/// monotone whenever no collision occurs at either threshold.
pub fn projection_threshold_monotone(cases: u32) {
    property(cases, (arb_pair(), 0usize..=8, 0usize..=8), |(raw, a, b)| {
        let (lo, hi) = (a.min(b) as f64 / 8.0, a.max(b) as f64 / 8.0);
        let pair = make_pair(&raw);
        let at = |min: f64| {
            let (t, outcomes) =
                project_document(&pair, &ProjectionConfig::new(min, OnCollision::Drop).unwrap()).unwrap();
            let passing: BTreeSet<String> = outcomes
                .iter()
                .filter(|o| matches!(o.reason, ProjectionReason::Projected | ProjectionReason::Collision))
                .map(|o| o.span_id.clone())
                .collect();
            let collided = outcomes.iter().any(|o| o.reason == ProjectionReason::Collision);
            (passing, t.spans.len(), collided)
        };
        let ((pass_lo, n_lo, c_lo), (pass_hi, n_hi, c_hi)) = (at(lo), at(hi));
        prop_assert!(pass_hi.is_subset(&pass_lo));
        if !c_lo && !c_hi {
            prop_assert!(n_hi <= n_lo);
        }
        Ok(())
    });
}

// Evaluation

/// Four gold spans; predictions: two exact, one shifted boundary, one spurious.
pub fn golden_fixture() -> (Vec<AnnotatedDocument>, Vec<AnnotatedDocument>) {
    let words = ["Ana", "Horvat", "visited", "Zagreb", "and", "NATO", "on", "Monday"];
    let gold = doc(
        "g",
        "en",
        &words,
        &[
            (0, 2, "Name.Person.Name"),
            (3, 4, "Name.Location.GPE.City"),
            (5, 6, "Name.Organization.International Organization"),
            (7, 8, "Timex TOP.Timex.Date"),
        ],
    );
    let pred = doc(
        "g",
        "en",
        &words,
        &[
            (0, 2, "Name.Person.Name"),
            (2, 4, "Name.Location.GPE.City"),
            (4, 5, "Numex"),
            (7, 8, "Timex TOP.Timex.Date"),
        ],
    );
    (vec![gold], vec![pred])
}

/// (TP, P, R, F) of the golden fixture.
pub fn golden_score() -> (usize, f64, f64, f64) {
    let (gold, pred) = golden_fixture();
    let r = score(&gold, &pred, MatchLevel::Exact).unwrap();
    (r.true_positives, r.precision, r.recall, r.f1)
}

pub const DEEP: &[&str] = &[
    "Name.Person.Name",
    "Name.Person",
    "Name.Location.GPE.City",
    "Name.Location.GPE.Country",
    "Name.Location.Region",
    "Name.Organization.Corporation.Company",
    "Name.Organization",
    "Timex TOP.Timex.Date",
    "Timex TOP.Periodx",
    "Numex.Money",
    "Numex",
];

pub fn arb_corpus_pair() -> impl Strategy<Value = (Vec<AnnotatedDocument>, Vec<AnnotatedDocument>)> {
    proptest::collection::vec(
        (1usize..12).prop_flat_map(|n| (Just(n), arb_spans(n, DEEP), arb_spans(n, DEEP))),
        1..6,
    )
    .prop_map(|docs| {
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for (k, (n, g, p)) in docs.into_iter().enumerate() {
            let id = format!("d{k}");
            gold.push(words_doc(&id, n, &g));
            pred.push(words_doc(&id, n, &p));
        }
        (gold, pred)
    })
}

/// TP, P, R and F never decrease from exact matching down to level 1.
pub fn coarsening_monotone(cases: u32) {
    property(cases, arb_corpus_pair(), |(gold, pred)| {
        let reports: Vec<_> = MatchLevel::all().map(|l| score(&gold, &pred, l).unwrap()).collect();
        for w in reports.windows(2) {
            let (fine, coarser) = (&w[0], &w[1]);
            prop_assert!(coarser.true_positives >= fine.true_positives);
            prop_assert!(coarser.precision >= fine.precision);
            prop_assert!(coarser.recall >= fine.recall);
            prop_assert!(coarser.f1 >= fine.f1);
        }
        Ok(())
    });
}

/// score(g, g) = (1, 1, 1) at every level for corpora with at least one span.
pub fn self_score_perfect(cases: u32) {
    property(cases, arb_corpus_pair(), |(gold, _)| {
        prop_assume!(gold.iter().any(|d| !d.spans.is_empty()));
        for level in MatchLevel::all() {
            let r = score(&gold, &gold, level).unwrap();
            prop_assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        }
        Ok(())
    });
}

// Review

pub fn verdict_alphabet() -> Vec<Action> {
    vec![
        Action::Accept,
        Action::Reject,
        Action::Relabel(path("Name.Location.GPE.City")),
        Action::Relabel(path("Name.Location.GPE.Country")),
    ]
}

/// Every verdict sequence of length at most 3 over the alphabet.
pub fn verdict_sequences() -> Vec<Vec<Action>> {
    let a = verdict_alphabet();
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..3 {
        let mut next = Vec::new();
        for seq in &frontier {
            for act in &a {
                let mut s: Vec<Action> = seq.clone();
                s.push(act.clone());
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[derive(Debug, PartialEq)]
enum Expect {
    Unmet,
    Tie,
    Win(Action),
}

fn majority_oracle(seq: &[Action], quorum: usize) -> Expect {
    if seq.len() < quorum {
        return Expect::Unmet;
    }
    for candidate in verdict_alphabet() {
        let votes = seq.iter().filter(|a| **a == candidate).count();
        if votes * 2 > seq.len() {
            return Expect::Win(candidate);
        }
    }
    Expect::Tie
}

pub fn verdicts_for(task: &str, seq: &[Action]) -> Vec<Verdict> {
    seq.iter()
        .enumerate()
        .map(|(k, a)| Verdict {
            task_id: task.to_string(),
            annotator_id: format!("a{k}"),
            action: a.clone(),
            ts: k as u64,
        })
        .collect()
}

/// One task per verdict sequence, applied at quorum 1 to 4 against the
/// majority/tie/quorum oracle, including the agreement report. Returns the
/// number of (sequence, quorum) cases.
pub fn review_majority_oracle() -> usize {
    let seqs = verdict_sequences();
    let taxonomy = Taxonomy::uner();
    let corpus: Vec<AnnotatedDocument> = (0..seqs.len())
        .map(|k| {
            doc(
                &format!("d{k}"),
                "en",
                &["Ana", "visited", "Zagreb"],
                &[(0, 1, "Name.Person.Name"), (2, 3, "Name.Location")],
            )
        })
        .collect();
    let tasks: Vec<ReviewTask> = generate_tasks(&corpus, Sampling::All, &taxonomy)
        .into_iter()
        .filter(|t| t.span_id == "s1")
        .collect();
    assert_eq!(tasks.len(), seqs.len());
    let verdicts: Vec<Verdict> = tasks
        .iter()
        .zip(&seqs)
        .flat_map(|(t, s)| verdicts_for(&t.task_id, s))
        .collect();

    let mut cases = 0;
    for quorum in 1..=4 {
        let (out, report) = apply_verdicts(&corpus, &tasks, &verdicts, quorum).unwrap();
        let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
        let (mut quorate, mut unanimous) = (0, 0);
        for ((d, task), seq) in out.iter().zip(&tasks).zip(&seqs) {
            cases += 1;
            assert_eq!(d.spans[0].label, path("Name.Person.Name"));
            let expect = majority_oracle(seq, quorum);
            if expect != Expect::Unmet {
                quorate += 1;
                if seq.iter().all(|a| *a == seq[0]) {
                    unanimous += 1;
                }
            }
            match expect {
                Expect::Unmet | Expect::Tie | Expect::Win(Action::Accept) => {
                    assert_eq!(d.spans.len(), 2, "{seq:?} q{quorum}");
                    assert_eq!(d.spans[1].label, path("Name.Location"));
                    assert_eq!(d.spans[1].source, "test");
                    let (bucket, listed) = match expect {
                        Expect::Unmet => ("unmet", report.quorum_unmet.contains(&task.task_id)),
                        Expect::Tie => ("tie", report.flagged.contains(&task.task_id)),
                        _ => ("accept", true),
                    };
                    assert!(listed, "{seq:?} q{quorum}");
                    *tally.entry(bucket).or_default() += 1;
                }
                Expect::Win(Action::Reject) => {
                    assert_eq!(d.spans.len(), 1);
                    *tally.entry("reject").or_default() += 1;
                }
                Expect::Win(Action::Relabel(label)) => {
                    assert_eq!(d.spans.len(), 2);
                    assert_eq!(d.spans[1].label, label);
                    assert_eq!(d.spans[1].source, "human");
                    *tally.entry("relabel").or_default() += 1;
                }
            }
            assert!(validate(d, &taxonomy).is_empty());
        }
        let n = |k: &str| tally.get(k).copied().unwrap_or(0);
        assert_eq!(report.accepted, n("accept"));
        assert_eq!(report.rejected, n("reject"));
        assert_eq!(report.relabeled, n("relabel"));
        assert_eq!(report.quorum_unmet.len(), n("unmet"));
        assert_eq!(report.flagged.len(), n("tie"));
        assert!(report.stale.is_empty());
        assert_eq!(
            report.unanimity,
            (quorate > 0).then(|| unanimous as f64 / quorate as f64)
        );

        let total: usize = seqs.iter().map(Vec::len).sum();
        let accepts: usize = seqs.iter().flatten().filter(|a| **a == Action::Accept).count();
        let rate = &report.per_label["Name.Location"];
        assert_eq!((rate.verdicts, rate.accepts), (total, accepts));
        assert_eq!(rate.accept_rate, accepts as f64 / total as f64);
    }
    cases
}

fn arb_review() -> impl Strategy<Value = (Vec<AnnotatedDocument>, Vec<Vec<u8>>, usize)> {
    proptest::collection::vec(arb_document(), 1..5)
        .prop_map(|mut docs| {
            for (k, d) in docs.iter_mut().enumerate() {
                d.doc_id = format!("d{k}");
            }
            docs
        })
        .prop_flat_map(|docs| {
            let n: usize = docs.iter().map(|d| d.spans.len()).sum();
            (
                Just(docs),
                proptest::collection::vec(proptest::collection::vec(0u8..4, 0..4), n),
                1usize..4,
            )
        })
}

/// Re-applying a log to its own output changes nothing, and every
/// adjudicated corpus validates.
pub fn review_idempotent(cases: u32) {
    let taxonomy = Taxonomy::uner();
    property(cases, arb_review(), |(docs, codes, quorum)| {
        let tasks = generate_tasks(&docs, Sampling::All, &taxonomy);
        let a = verdict_alphabet();
        let verdicts: Vec<Verdict> = tasks
            .iter()
            .zip(&codes)
            .flat_map(|(t, c)| {
                let seq: Vec<Action> = c.iter().map(|&i| a[i as usize].clone()).collect();
                verdicts_for(&t.task_id, &seq)
            })
            .collect();
        let (once, _) = apply_verdicts(&docs, &tasks, &verdicts, quorum).unwrap();
        let (twice, _) = apply_verdicts(&once, &tasks, &verdicts, quorum).unwrap();
        prop_assert_eq!(&once, &twice);
        for d in &once {
            prop_assert!(validate(d, &taxonomy).is_empty());
        }
        Ok(())
    });
}

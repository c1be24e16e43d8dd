//! Shared builders, enumerators, oracles and the synthetic bilingual corpus.
#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uner::codecs::encode_spans;
use uner::{AnnotatedDocument, TagPath};

pub fn path(label: &str) -> TagPath {
    TagPath::parse(label).unwrap()
}

/// Document over `words` with `(start, end, label)` spans.
pub fn doc(id: &str, lang: &str, words: &[&str], spans: &[(usize, usize, &str)]) -> AnnotatedDocument {
    let mut d = AnnotatedDocument::from_words(id, lang, words);
    for (k, &(s, e, l)) in spans.iter().enumerate() {
        let span = d.make_span(format!("s{k}"), s, e, path(l), "test", None);
        d.spans.push(span);
    }
    d
}

pub fn numbered_words(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

/// Every flat set of spans over `n` tokens, each as sorted `(start, end)`.
pub fn segmentations(n: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(pos: usize, n: usize, acc: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if pos == n {
            out.push(acc.clone());
            return;
        }
        go(pos + 1, n, acc, out);
        for end in pos + 1..=n {
            acc.push((pos, end));
            go(end, n, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, &mut Vec::new(), &mut out);
    out
}

/// Every flat labeled span set over `n` tokens with labels from `labels`.
pub fn labeled_segmentations(n: usize, labels: &[&'static str]) -> Vec<Vec<(usize, usize, &'static str)>> {
    let mut out = Vec::new();
    for seg in segmentations(n) {
        let total = labels.len().pow(seg.len() as u32);
        for mut code in 0..total {
            let spans = seg
                .iter()
                .map(|&(s, e)| {
                    let l = labels[code % labels.len()];
                    code /= labels.len();
                    (s, e, l)
                })
                .collect();
            out.push(spans);
        }
    }
    out
}

/// Priority fill over a token bitmap: walk models in order, admit a span iff
/// none of its tokens is set, then set them.
pub fn bitmap_merge(n: usize, models: &[Vec<(usize, usize, &str)>]) -> Vec<(usize, usize, String, usize)> {
    let mut bitmap = 0u64;
    let mut out = Vec::new();
    for (m, spans) in models.iter().enumerate() {
        for &(s, e, l) in spans {
            let mask = ((1u64 << (e - s)) - 1) << s;
            if bitmap & mask == 0 {
                bitmap |= mask;
                out.push((s, e, l.to_string(), m));
            }
        }
    }
    assert!(n <= 64);
    out.sort();
    out
}

pub const VOCAB: &[&str] = &[
    "Zagreb",
    "Θεσσαλονίκη",
    "čelnik",
    "東京",
    "naïve",
    "Skopje",
    "🙂",
    "Ελλάδα",
    "Sarajevo",
    "the",
    "of",
    "ŠĐČĆŽ",
    "مرحبا",
    "x",
    "Ünïcödé",
    "Москва",
    "a&b",
    "<tag>",
    "\"q\"",
];

pub const LABELS: &[&str] = &[
    "Name",
    "Name.Person.Name",
    "Name.Location.GPE.City",
    "Name.Organization",
    "Timex TOP.Timex.Date",
    "Numex.Money",
    "Numex",
];

/// Random valid documents: multibyte tokens, flat labeled spans.
pub fn arb_document() -> impl Strategy<Value = AnnotatedDocument> {
    (1usize..14)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(proptest::sample::select(VOCAB), n),
                proptest::collection::vec((0usize..4, 0usize..3, 0usize..LABELS.len()), 0..6),
                "[a-z]{1,6}",
            )
        })
        .prop_map(|(words, raw_spans, id)| {
            let n = words.len();
            let mut d = AnnotatedDocument::from_words(id, "xx", &words);
            let mut pos = 0;
            for (gap, extra, label) in raw_spans {
                let start = pos + gap;
                let end = start + 1 + extra;
                if end > n {
                    break;
                }
                let k = d.spans.len();
                let span = d.make_span(format!("s{k}"), start, end, path(LABELS[label]), "test", None);
                d.spans.push(span);
                pos = end;
            }
            d
        })
}

/// Random flat labeled span sets over `n` tokens, in token order.
pub fn arb_spans(
    n: usize,
    labels: &'static [&'static str],
) -> impl Strategy<Value = Vec<(usize, usize, &'static str)>> {
    proptest::collection::vec((0usize..3, 1usize..4, proptest::sample::select(labels)), 0..5).prop_map(move |raw| {
        let mut pos = 0;
        let mut out = Vec::new();
        for (gap, len, label) in raw {
            let start = pos + gap;
            let end = start + len;
            if end > n {
                break;
            }
            out.push((start, end, label));
            pos = end;
        }
        out
    })
}

/// Every candidate hull for projection computed by brute force over all
/// target tokens: `Some((lo, hi))` iff at least `min_coverage` of the span's
/// source tokens have a link.
pub fn brute_force_hull(
    span: (usize, usize),
    links: &BTreeSet<(usize, usize)>,
    target_len: usize,
    min_coverage: f64,
) -> Option<(usize, usize)> {
    let aligned = (span.0..span.1)
        .filter(|&i| (0..target_len).any(|j| links.contains(&(i, j))))
        .count();
    let hit: Vec<usize> = (0..target_len)
        .filter(|&j| (span.0..span.1).any(|i| links.contains(&(i, j))))
        .collect();
    if hit.is_empty() || (aligned as f64) < min_coverage * (span.1 - span.0) as f64 {
        return None;
    }
    Some((hit[0], hit[hit.len() - 1] + 1))
}

struct Entity {
    words: &'static [&'static str],
    gold: &'static str,
    conll: &'static str,
    onto: &'static str,
    muc: Option<&'static str>,
    kb: Option<(&'static str, &'static str)>,
}

const W: &str = "http://www.wikidata.org/entity/";

const ENTITIES: &[Entity] = &[
    Entity {
        words: &["Ana", "Horvat"],
        gold: "Name.Person.Name",
        conll: "PER",
        onto: "PERSON",
        muc: Some("PERSON"),
        kb: Some(("wikidata", "Q5")),
    },
    Entity {
        words: &["Nikos", "Papadopoulos"],
        gold: "Name.Person.Name",
        conll: "PER",
        onto: "PERSON",
        muc: Some("PERSON"),
        kb: Some(("wikidata", "Q5")),
    },
    Entity {
        words: &["Đorđe", "Balašević"],
        gold: "Name.Person.Name",
        conll: "PER",
        onto: "PERSON",
        muc: Some("PERSON"),
        kb: Some(("wikidata", "Q5")),
    },
    Entity {
        words: &["Zagreb"],
        gold: "Name.Location.GPE.City",
        conll: "LOC",
        onto: "GPE",
        muc: Some("LOCATION"),
        kb: Some(("wikidata", "Q515")),
    },
    Entity {
        words: &["Θεσσαλονίκη"],
        gold: "Name.Location.GPE.City",
        conll: "LOC",
        onto: "GPE",
        muc: Some("LOCATION"),
        kb: Some(("wikidata", "Q515")),
    },
    Entity {
        words: &["Skopje"],
        gold: "Name.Location.GPE.City",
        conll: "LOC",
        onto: "GPE",
        muc: Some("LOCATION"),
        kb: Some(("wikidata", "Q515")),
    },
    Entity {
        words: &["Bulgaria"],
        gold: "Name.Location.GPE.Country",
        conll: "LOC",
        onto: "GPE",
        muc: Some("LOCATION"),
        kb: Some(("wikidata", "Q6256")),
    },
    Entity {
        words: &["Adriatic", "Bank"],
        gold: "Name.Organization.Corporation.Company",
        conll: "ORG",
        onto: "ORG",
        muc: Some("ORGANIZATION"),
        kb: Some(("wikidata", "Q4830453")),
    },
    Entity {
        words: &["NATO"],
        gold: "Name.Organization.International Organization",
        conll: "ORG",
        onto: "ORG",
        muc: Some("ORGANIZATION"),
        kb: Some(("wikidata", "Q484652")),
    },
    Entity {
        words: &["Monday"],
        gold: "Timex TOP.Timex.Date",
        conll: "",
        onto: "DATE",
        muc: Some("DATE"),
        kb: None,
    },
    Entity {
        words: &["May", "2009"],
        gold: "Timex TOP.Timex.Date",
        conll: "",
        onto: "DATE",
        muc: Some("DATE"),
        kb: None,
    },
    Entity {
        words: &["40", "euros"],
        gold: "Numex.Money",
        conll: "",
        onto: "MONEY",
        muc: Some("MONEY"),
        kb: None,
    },
];

const FILLERS: &[&[&str]] = &[
    &["said", "that"],
    &["met", "officials", "in"],
    &["visited"],
    &["reported", "on"],
    &["and"],
    &["will", "open", "an", "office", "near"],
];

/// Paths of a written synthetic corpus.
pub struct Synthetic {
    pub config: std::path::PathBuf,
    pub sentences: usize,
}

/// Write a synthetic bilingual corpus of `n` sentences into `dir`: three mock
/// model runs, a KB fixture store, a target-language corpus with Pharaoh
/// alignments, source and target gold, and `pipeline.toml`.
pub fn write_synthetic(dir: &Path, n: usize, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut runs = [String::new(), String::new(), String::new()];
    let (mut gold, mut target, mut target_gold, mut alignments) =
        (String::new(), String::new(), String::new(), String::new());
    for s in 0..n {
        let id = format!("sent{s:05}");
        let mut words: Vec<&str> = Vec::new();
        let mut ents: Vec<(usize, usize, usize)> = Vec::new();
        for _ in 0..rng.gen_range(1..=3) {
            words.extend_from_slice(FILLERS[rng.gen_range(0..FILLERS.len())]);
            let e = rng.gen_range(0..ENTITIES.len());
            let start = words.len();
            words.extend_from_slice(ENTITIES[e].words);
            ents.push((start, words.len(), e));
        }
        words.push(".");

        // Target: every token maps to one or two target tokens and some
        // function words are dropped.
        let mut t_words: Vec<String> = Vec::new();
        let mut map: Vec<Vec<usize>> = vec![Vec::new(); words.len()];
        for (i, w) in words.iter().enumerate() {
            let inside = ents.iter().any(|&(a, b, _)| (a..b).contains(&i));
            if !inside && matches!(*w, "that" | "on") && rng.gen_bool(0.5) {
                continue;
            }
            map[i].push(t_words.len());
            t_words.push(w.to_string());
            if !inside && rng.gen_bool(0.2) {
                map[i].push(t_words.len());
                t_words.push("se".to_string());
            }
        }
        let mut links = BTreeSet::new();
        for (i, ts) in map.iter().enumerate() {
            for &j in ts {
                links.insert((i, j));
            }
        }
        let t_gold: Vec<(usize, usize, &str)> = ents
            .iter()
            .map(|&(a, b, e)| {
                let hits: Vec<usize> = (a..b).flat_map(|i| map[i].iter().copied()).collect();
                (
                    *hits.iter().min().unwrap(),
                    hits.iter().max().unwrap() + 1,
                    ENTITIES[e].gold,
                )
            })
            .collect();

        let gold_spans: Vec<(usize, usize, &str)> = ents.iter().map(|&(a, b, e)| (a, b, ENTITIES[e].gold)).collect();
        gold.push_str(&encode_spans(&doc(&id, "en", &words, &gold_spans)));
        gold.push('\n');

        // Mock taggers: the high-recall model misses some entities, the
        // others fill gaps and sometimes shift a boundary.
        let mut model_spans: [Vec<(usize, usize, &str)>; 3] = Default::default();
        for &(a, b, e) in &ents {
            let ent = &ENTITIES[e];
            if rng.gen_bool(0.85) {
                model_spans[0].push((a, b, ent.onto));
            }
            if !ent.conll.is_empty() && rng.gen_bool(0.8) {
                let b2 = if b - a > 1 && rng.gen_bool(0.1) { b - 1 } else { b };
                model_spans[1].push((a, b2, ent.conll));
            }
            if let Some(m) = ent.muc {
                if rng.gen_bool(0.6) {
                    model_spans[2].push((a, b, m));
                }
            }
        }
        for (k, spans) in model_spans.iter().enumerate() {
            runs[k].push_str(&encode_spans(&doc(&id, "en", &words, spans)));
            runs[k].push('\n');
        }

        let t_refs: Vec<&str> = t_words.iter().map(String::as_str).collect();
        target.push_str(&encode_spans(&doc(&id, "hr", &t_refs, &[])));
        target.push('\n');
        target_gold.push_str(&encode_spans(&doc(&id, "hr", &t_refs, &t_gold)));
        target_gold.push('\n');
        let pairs: Vec<String> = links.iter().map(|(i, j)| format!("{i}-{j}")).collect();
        writeln!(alignments, "{id}\t{}", pairs.join(" ")).unwrap();
    }

    let mut fixtures = String::new();
    for ent in ENTITIES {
        if let Some((kb, q)) = ent.kb {
            let line =
                serde_json::json!({ "surface": ent.words.join(" "), "kb_id": kb, "classes": [format!("{W}{q}")] });
            writeln!(fixtures, "{line}").unwrap();
        }
    }
    let files = [
        ("run_ontonotes.jsonl", runs[0].as_str()),
        ("run_conll.jsonl", runs[1].as_str()),
        ("run_muc.jsonl", runs[2].as_str()),
        ("gold.jsonl", gold.as_str()),
        ("target.jsonl", target.as_str()),
        ("target_gold.jsonl", target_gold.as_str()),
        ("alignments.txt", alignments.as_str()),
        ("kb_fixtures.jsonl", fixtures.as_str()),
        (
            "runs.tsv",
            "ontonotes\t0.86\tontonotes18\trun_ontonotes.jsonl\nconll\t0.80\tconll4\trun_conll.jsonl\nmuc\t0.61\tmuc7\trun_muc.jsonl\n",
        ),
        (
            "pipeline.toml",
            "output_dir = \"out\"\noffline = true\n\n[merge]\nmanifest = \"runs.tsv\"\n\n[correct]\nfixtures = \"kb_fixtures.jsonl\"\n\n[project]\ntarget = \"target.jsonl\"\nalignments = \"alignments.txt\"\n\n[score]\ngold = \"gold.jsonl\"\ntarget_gold = \"target_gold.jsonl\"\nlevel = \"exact\"\n",
        ),
    ];
    for (name, body) in files {
        std::fs::write(dir.join(name), body).unwrap();
    }
    Synthetic {
        config: dir.join("pipeline.toml"),
        sentences: n,
    }
}

/// Provenance and run manifests with the timestamp field blanked.
pub fn without_timestamps(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("\"timestamp\""))
        .collect::<Vec<_>>()
        .join("\n")
}

pub const THREE: &[&str] = &["Name", "Numex", "Timex TOP"];

/// Span layouts for one model slot as `(start, end, label index)`: fully
/// labeled up to three tokens; beyond that every unlabeled layout, labeled
/// by (model, position) so a label leaking from the wrong model is caught.
pub fn ensemble_layouts(n: usize, model: usize) -> Vec<Vec<(usize, usize, usize)>> {
    let index = |l: &str| THREE.iter().position(|t| *t == l).unwrap();
    if n <= 3 {
        return labeled_segmentations(n, THREE)
            .into_iter()
            .map(|spans| spans.into_iter().map(|(s, e, l)| (s, e, index(l))).collect())
            .collect();
    }
    segmentations(n)
        .into_iter()
        .map(|seg| {
            seg.into_iter()
                .enumerate()
                .map(|(k, (s, e))| (s, e, (model + k) % 3))
                .collect()
        })
        .collect()
}

/// Check `merge_document` against the bitmap priority fill for every
/// corpus of one document with up to `max_tokens` tokens and up to three
/// models. Returns the number of corpora checked.
pub fn exhaustive_ensemble_check(max_tokens: usize) -> usize {
    use uner::ensemble::{merge_document, ModelRun};
    use uner::taxonomy::{SchemeRegistry, Taxonomy};

    let taxonomy = Taxonomy::uner();
    let schemes = SchemeRegistry::shipped(&taxonomy).unwrap();
    let model_ids = ["m0", "m1", "m2"];
    let mut checked = 0usize;
    let mut expected: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(16);
    for n in 1..=max_tokens {
        let words = numbered_words(n);
        for models in 1..=3 {
            let specs: Vec<_> = (0..models).map(|m| ensemble_layouts(n, m)).collect();
            let runs: Vec<Vec<ModelRun>> = specs
                .iter()
                .enumerate()
                .map(|(m, layouts)| {
                    layouts
                        .iter()
                        .map(|spans| {
                            let mut d = AnnotatedDocument::from_words("d", "xx", &words);
                            for (k, &(s, e, l)) in spans.iter().enumerate() {
                                let span = d.make_span(format!("x{k}"), s, e, path(THREE[l]), "raw", None);
                                d.spans.push(span);
                            }
                            ModelRun::new(model_ids[m], Some(0.9 - 0.1 * m as f64), "uner", vec![d]).unwrap()
                        })
                        .collect()
                })
                .collect();
            let mut idx = [0usize; 3];
            let mut chosen: Vec<&ModelRun> = Vec::with_capacity(3);
            'outer: loop {
                chosen.clear();
                chosen.extend((0..models).map(|m| &runs[m][idx[m]]));
                let (merged, report) = merge_document("d", &chosen, &taxonomy, &schemes).unwrap().unwrap();

                expected.clear();
                let mut bitmap = 0u64;
                let mut produced = 0;
                for m in 0..models {
                    for &(s, e, l) in &specs[m][idx[m]] {
                        produced += 1;
                        let mask = ((1u64 << (e - s)) - 1) << s;
                        if bitmap & mask == 0 {
                            bitmap |= mask;
                            expected.push((s, e, l, m));
                        }
                    }
                }
                expected.sort_unstable();
                let matches = merged.spans.len() == expected.len()
                    && merged.spans.iter().zip(&expected).all(|(span, &(s, e, l, m))| {
                        span.token_start == s
                            && span.token_end == e
                            && span.label.as_str() == THREE[l]
                            && span.source == model_ids[m]
                    });
                let admitted: usize = report.models.values().map(|c| c.admitted).sum();
                let total: usize = report.models.values().map(|c| c.produced()).sum();
                if !matches || admitted != expected.len() || total != produced {
                    let inputs: Vec<_> = (0..models).map(|m| &specs[m][idx[m]]).collect();
                    panic!("n={n} inputs={inputs:?} expected={expected:?} got={:?}", merged.spans);
                }
                checked += 1;

                for m in 0..models {
                    idx[m] += 1;
                    if idx[m] < specs[m].len() {
                        continue 'outer;
                    }
                    idx[m] = 0;
                }
                break;
            }
        }
    }
    checked
}

pub fn cli() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_uner"))
}

/// Every file under `dir`, keyed by relative path, timestamps blanked.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, String> {
    let mut out = std::collections::BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, without_timestamps(&std::fs::read_to_string(&path).unwrap()));
        }
    }
    out
}

/// Outcome of two `run` invocations over one synthetic corpus.
pub struct DeskRun {
    pub seconds: f64,
    pub rerun_identical: bool,
    /// Stage corpora that failed `validate`, with the tool's output.
    pub invalid: Vec<String>,
    pub validated: usize,
    pub outputs: std::collections::BTreeMap<String, String>,
}

/// Write `n` synthetic sentences, `run` the pipeline twice through the CLI
/// and validate every stage corpus with `validate`.
pub fn desk_run(n: usize) -> DeskRun {
    let dir = tempfile::tempdir().unwrap();
    let synthetic = write_synthetic(dir.path(), n, 42);
    let out = dir.path().join("out");
    let run = || {
        let start = std::time::Instant::now();
        let status = cli().args(["run", "--config"]).arg(&synthetic.config).output().unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        start.elapsed().as_secs_f64()
    };
    let seconds = run();
    let first = snapshot(&out);
    run();
    let second = snapshot(&out);
    let mut invalid = Vec::new();
    let mut validated = 0;
    for name in first.keys().filter(|k| k.ends_with(".jsonl")) {
        validated += 1;
        let result = cli()
            .args(["validate", "--input"])
            .arg(out.join(name))
            .output()
            .unwrap();
        if !result.status.success() {
            invalid.push(format!("{name}: {}", String::from_utf8_lossy(&result.stdout)));
        }
    }
    DeskRun {
        seconds,
        rerun_identical: first == second,
        invalid,
        validated,
        outputs: first,
    }
}

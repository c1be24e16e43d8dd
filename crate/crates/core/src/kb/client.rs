use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;
use std::time::{Duration, SystemTime};

use serde::Deserialize;

use super::KbError;

/// Classes of one surface string, per knowledge base.
#[derive(Debug, Clone, PartialEq)]
pub struct KbRecord {
    /// Exactly as queried.
    pub surface: String,
    pub classes: BTreeMap<String, Vec<String>>,
    pub retrieved_at: SystemTime,
}

impl KbRecord {
    pub fn empty(surface: &str) -> Self {
        KbRecord {
            surface: surface.to_string(),
            classes: BTreeMap::new(),
            retrieved_at: SystemTime::now(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.classes.values().all(Vec::is_empty)
    }
}

/// Anything that can answer "which classes does this surface belong to".
pub trait KbClient: Send + Sync {
    fn fetch(&self, surface: &str) -> Result<KbRecord, KbError>;
    /// Number of `fetch` calls served so far.
    fn calls(&self) -> usize;
    /// Number of network requests issued so far.
    fn network_calls(&self) -> usize;
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    surface: String,
    kb_id: String,
    classes: Vec<String>,
}

/// Offline client backed by committed fixture records. Never touches the
/// network; unknown surfaces yield an empty record.
#[derive(Debug, Default)]
pub struct FixtureClient {
    records: HashMap<String, BTreeMap<String, Vec<String>>>,
    calls: AtomicUsize,
}

impl FixtureClient {
    /// Parse `{"surface": …, "kb_id": …, "classes": […]}` lines.
    pub fn from_jsonl(source: &str) -> Result<Self, KbError> {
        let mut records: HashMap<String, BTreeMap<String, Vec<String>>> = HashMap::new();
        for (n, line) in source.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: FixtureLine = serde_json::from_str(line).map_err(|e| KbError::Fixture {
                line: n + 1,
                message: e.to_string(),
            })?;
            let classes = records
                .entry(parsed.surface)
                .or_default()
                .entry(parsed.kb_id)
                .or_default();
            for class in parsed.classes {
                if !classes.contains(&class) {
                    classes.push(class);
                }
            }
        }
        Ok(FixtureClient {
            records,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, KbError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| KbError::Io {
            context: format!("reading {}", path.display()),
            source,
        })?;
        Self::from_jsonl(&text)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl KbClient for FixtureClient {
    fn fetch(&self, surface: &str) -> Result<KbRecord, KbError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(KbRecord {
            surface: surface.to_string(),
            classes: self.records.get(surface).cloned().unwrap_or_default(),
            retrieved_at: SystemTime::now(),
        })
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn network_calls(&self) -> usize {
        0
    }
}

/// Live client issuing one SPARQL `SELECT` per knowledge base.
pub struct SparqlClient {
    endpoints: Vec<(String, String)>,
    agent: ureq::Agent,
    calls: AtomicUsize,
    network_calls: AtomicUsize,
}

impl SparqlClient {
    /// `endpoints` pairs a kb id with its SPARQL endpoint URL.
    pub fn new(endpoints: Vec<(String, String)>) -> Self {
        SparqlClient {
            endpoints,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(30))
                .user_agent(concat!("uner/", env!("CARGO_PKG_VERSION")))
                .build(),
            calls: AtomicUsize::new(0),
            network_calls: AtomicUsize::new(0),
        }
    }

    fn run_query(&self, endpoint: &str, query: &str) -> Result<Vec<String>, KbError> {
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let unavailable = |message: String| KbError::EndpointUnavailable {
            endpoint: endpoint.to_string(),
            message,
        };
        let response = self
            .agent
            .get(endpoint)
            .query("query", query)
            .set("Accept", "application/sparql-results+json")
            .call()
            .map_err(|e| unavailable(e.to_string()))?;
        let text = response.into_string().map_err(|e| unavailable(e.to_string()))?;
        let body: serde_json::Value = serde_json::from_str(&text).map_err(|e| unavailable(e.to_string()))?;
        Ok(parse_bindings(&body, "class"))
    }
}

/// Values bound to `var` in a SPARQL JSON result set.
pub fn parse_bindings(body: &serde_json::Value, var: &str) -> Vec<String> {
    let mut out: Vec<String> = body["results"]["bindings"]
        .as_array()
        .map(|rows| {
            rows.iter()
                .filter_map(|row| row[var]["value"].as_str().map(str::to_string))
                .collect()
        })
        .unwrap_or_default();
    out.sort();
    out.dedup();
    out
}

fn sparql_literal(surface: &str) -> String {
    let mut out = String::with_capacity(surface.len() + 2);
    out.push('"');
    for c in surface.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Class query for an exact English label. Wikidata uses `wdt:P31`, other
/// knowledge bases `rdf:type`.
pub fn class_query(kb_id: &str, surface: &str) -> String {
    let typing = if kb_id == "wikidata" {
        "<http://www.wikidata.org/prop/direct/P31>"
    } else {
        "<http://www.w3.org/1999/02/22-rdf-syntax-ns#type>"
    };
    format!(
        "SELECT DISTINCT ?class WHERE {{ ?item <http://www.w3.org/2000/01/rdf-schema#label> {}@en . ?item {typing} ?class . }} LIMIT 100",
        sparql_literal(surface)
    )
}

impl KbClient for SparqlClient {
    fn fetch(&self, surface: &str) -> Result<KbRecord, KbError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut classes = BTreeMap::new();
        for (kb_id, endpoint) in &self.endpoints {
            let found = self.run_query(endpoint, &class_query(kb_id, surface))?;
            classes.insert(kb_id.clone(), found);
        }
        Ok(KbRecord {
            surface: surface.to_string(),
            classes,
            retrieved_at: SystemTime::now(),
        })
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }
}

/// Surface → record cache shared across lookups. Reads run concurrently,
/// inserts take the write lock.
#[derive(Debug, Default)]
pub struct KbCache {
    records: RwLock<HashMap<String, KbRecord>>,
}

impl KbCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, surface: &str) -> Option<KbRecord> {
        self.records.read().expect("cache lock").get(surface).cloned()
    }

    pub fn insert(&self, record: KbRecord) {
        self.records
            .write()
            .expect("cache lock")
            .insert(record.surface.clone(), record);
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cached lookup: the client is consulted only on a cache miss.
pub fn lookup(surface: &str, client: &dyn KbClient, cache: &KbCache) -> Result<KbRecord, KbError> {
    if let Some(hit) = cache.get(surface) {
        return Ok(hit);
    }
    let record = client.fetch(surface)?;
    cache.insert(record.clone());
    Ok(record)
}

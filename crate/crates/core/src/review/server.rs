//! HTTP front end for review tasks.
//!
//! Routes: `GET /tasks/next?annotator=<id>`, `POST /verdicts`,
//! `GET /progress`, `GET /taxonomy`, and static files when a directory is
//! configured.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Read;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use serde_json::json;

use super::{append_verdict, now_millis, open_log, read_verdict_log, ReviewError, ReviewTask, Verdict, VerdictRecord};
use crate::taxonomy::Taxonomy;

const MAX_BODY: u64 = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Response {
    fn json(status: u16, value: serde_json::Value) -> Response {
        Response {
            status,
            content_type: "application/json",
            body: value.to_string().into_bytes(),
        }
    }

    fn error(status: u16, message: impl std::fmt::Display) -> Response {
        Response::json(status, json!({ "error": message.to_string() }))
    }

    fn empty(status: u16) -> Response {
        Response {
            status,
            content_type: "application/json",
            body: Vec::new(),
        }
    }

    pub fn json_body(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or(serde_json::Value::Null)
    }
}

#[derive(Default)]
struct State {
    judged_by: Vec<Vec<String>>,
    verdicts: usize,
    per_annotator: BTreeMap<String, usize>,
}

impl State {
    fn record(&mut self, task: usize, annotator: &str) {
        self.judged_by[task].push(annotator.to_string());
        self.verdicts += 1;
        *self.per_annotator.entry(annotator.to_string()).or_default() += 1;
    }
}

pub struct ReviewService {
    tasks: Vec<ReviewTask>,
    index: HashMap<String, usize>,
    taxonomy: Taxonomy,
    quorum: Option<usize>,
    static_dir: Option<PathBuf>,
    state: RwLock<State>,
    log: Mutex<File>,
}

impl ReviewService {
    /// Load tasks and any verdicts already in the log. With a quorum, tasks
    /// that reached it are no longer handed out.
    pub fn new(
        tasks: Vec<ReviewTask>,
        log_path: &Path,
        taxonomy: Taxonomy,
        quorum: Option<usize>,
    ) -> Result<Self, ReviewError> {
        if quorum == Some(0) {
            return Err(ReviewError::InvalidQuorum);
        }
        let mut index = HashMap::new();
        for (i, task) in tasks.iter().enumerate() {
            if index.insert(task.task_id.clone(), i).is_some() {
                return Err(ReviewError::DuplicateTaskId(task.task_id.clone()));
            }
        }
        let mut state = State {
            judged_by: vec![Vec::new(); tasks.len()],
            ..Default::default()
        };
        for verdict in read_verdict_log(log_path, &taxonomy)? {
            let Some(&i) = index.get(&verdict.task_id) else {
                return Err(ReviewError::UnknownTask(verdict.task_id));
            };
            state.record(i, &verdict.annotator_id);
        }
        let log = open_log(log_path)?;
        Ok(ReviewService {
            tasks,
            index,
            taxonomy,
            quorum,
            static_dir: None,
            state: RwLock::new(state),
            log: Mutex::new(log),
        })
    }

    pub fn with_static_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.static_dir = Some(dir.into());
        self
    }

    fn is_done(&self, state: &State, task: usize) -> bool {
        self.quorum.is_some_and(|q| state.judged_by[task].len() >= q)
    }

    pub fn handle(&self, method: &str, url: &str, body: &[u8]) -> Response {
        let (path, query) = url.split_once('?').unwrap_or((url, ""));
        match (method, path) {
            ("GET", "/tasks/next") => self.next_task(query),
            ("POST", "/verdicts") => self.post_verdict(body),
            ("GET", "/progress") => self.progress(),
            ("GET", "/taxonomy") => self.taxonomy(),
            ("GET", _) if self.static_dir.is_some() => self.static_file(path),
            (_, "/tasks/next" | "/verdicts" | "/progress" | "/taxonomy") => Response::error(405, "method not allowed"),
            _ => Response::error(404, "not found"),
        }
    }

    fn next_task(&self, query: &str) -> Response {
        let annotator = form_urlencoded::parse(query.as_bytes())
            .find(|(k, _)| k == "annotator")
            .map(|(_, v)| v.into_owned());
        let Some(annotator) = annotator.filter(|a| !a.is_empty()) else {
            return Response::error(400, "missing annotator parameter");
        };
        let state = self.state.read().expect("state lock");
        let next = (0..self.tasks.len())
            .filter(|&i| !self.is_done(&state, i) && !state.judged_by[i].contains(&annotator))
            .min_by_key(|&i| (state.judged_by[i].len(), i));
        match next {
            Some(i) => Response::json(200, serde_json::to_value(&self.tasks[i]).expect("task serializes")),
            None => Response::empty(204),
        }
    }

    fn post_verdict(&self, body: &[u8]) -> Response {
        let record: VerdictRecord = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => return Response::error(400, e),
        };
        let mut verdict = match Verdict::from_record(record, &self.taxonomy) {
            Ok(v) => v,
            Err(e) => return Response::error(400, e),
        };
        let Some(&task) = self.index.get(&verdict.task_id) else {
            return Response::error(404, format!("unknown task {:?}", verdict.task_id));
        };
        verdict.ts = now_millis();
        let mut log = self.log.lock().expect("log lock");
        if self.state.read().expect("state lock").judged_by[task].contains(&verdict.annotator_id) {
            return Response::error(409, "annotator already judged this task");
        }
        if let Err(e) = append_verdict(&mut log, &verdict) {
            return Response::error(500, e);
        }
        self.state
            .write()
            .expect("state lock")
            .record(task, &verdict.annotator_id);
        Response::json(
            201,
            serde_json::to_value(verdict.to_record()).expect("record serializes"),
        )
    }

    fn progress(&self) -> Response {
        let state = self.state.read().expect("state lock");
        let complete = (0..self.tasks.len()).filter(|&i| self.is_done(&state, i)).count();
        let judged = state.judged_by.iter().filter(|v| !v.is_empty()).count();
        Response::json(
            200,
            json!({
                "tasks": self.tasks.len(),
                "done": state.verdicts,
                "judged_tasks": judged,
                "complete_tasks": complete,
                "open_tasks": self.tasks.len() - complete,
                "quorum": self.quorum,
                "annotators": state.per_annotator,
            }),
        )
    }

    fn taxonomy(&self) -> Response {
        let nodes: Vec<_> = self
            .taxonomy
            .paths()
            .map(|p| json!({ "path": p.as_str(), "level": p.depth(), "leaf": self.taxonomy.is_leaf(p) }))
            .collect();
        Response::json(200, json!({ "nodes": nodes }))
    }

    fn static_file(&self, path: &str) -> Response {
        let root = self.static_dir.as_ref().expect("checked by caller");
        let relative = path.trim_start_matches('/');
        let relative = if relative.is_empty() { "index.html" } else { relative };
        let relative = Path::new(relative);
        if !relative.components().all(|c| matches!(c, Component::Normal(_))) {
            return Response::error(404, "not found");
        }
        match std::fs::read(root.join(relative)) {
            Ok(body) => Response {
                status: 200,
                content_type: content_type(relative),
                body,
            },
            Err(_) => Response::error(404, "not found"),
        }
    }

    /// Listen on `addr` with `threads` workers.
    pub fn start(self, addr: &str, threads: usize) -> Result<RunningServer, ReviewError> {
        let server = tiny_http::Server::http(addr).map_err(|e| ReviewError::Bind(e.to_string()))?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| ReviewError::Bind("not an IP listener".into()))?;
        let server = Arc::new(server);
        let service = Arc::new(self);
        let workers = (0..threads.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let service = Arc::clone(&service);
                std::thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        serve_one(&service, request);
                    }
                })
            })
            .collect();
        Ok(RunningServer {
            addr: local,
            server,
            workers,
        })
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

fn serve_one(service: &ReviewService, mut request: tiny_http::Request) {
    let mut body = Vec::new();
    let read = request.as_reader().take(MAX_BODY).read_to_end(&mut body);
    let response = match read {
        Ok(_) => service.handle(request.method().as_str(), request.url(), &body),
        Err(e) => Response::error(400, e),
    };
    let header = tiny_http::Header::from_bytes("Content-Type", response.content_type).expect("valid header");
    let reply = tiny_http::Response::from_data(response.body)
        .with_status_code(response.status)
        .with_header(header);
    if let Err(e) = request.respond(reply) {
        log::warn!("failed to send response: {e}");
    }
}

pub struct RunningServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Block until the workers exit.
    pub fn join(self) {
        for w in self.workers {
            let _ = w.join();
        }
    }

    pub fn shutdown(self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        self.join();
    }
}

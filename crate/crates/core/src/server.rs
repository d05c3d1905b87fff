//! The HTTP front door.
//!
//! [`Server::handle`] is a pure request-to-response function so routing can
//! be tested without sockets; [`Daemon`] puts it behind a listening socket
//! with a pool of worker threads.
//!
//! | request                          | handled by                      |
//! |----------------------------------|---------------------------------|
//! | `GET /meta`                      | registry network view           |
//! | `GET /files/<alias>/<rel>`       | confined file read              |
//! | `GET /ui/...`                    | console assets                  |
//! | `/admin/<method>` or `POST /admin` | admin operations              |
//! | `/service/...`, other XML POSTs  | wire decode, gate, dispatch     |

use std::io::Read;
use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::files::{self, FileError, FileRoots};
use crate::http::MAX_BODY;
use crate::registry::{Handler, PasswordDigest, Registry};
use crate::wire::{self, Fault, FaultCode, MethodCall, WireError, WireResponse};

pub const XML_CONTENT_TYPE: &str = "text/xml; charset=utf-8";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    /// Raw, still percent-encoded path.
    pub path: String,
    pub query: String,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn get(target: &str) -> Self {
        Self::new("GET", target, Vec::new())
    }

    pub fn post(target: &str, body: impl Into<Vec<u8>>) -> Self {
        Self::new("POST", target, body.into())
    }

    /// `target` is a request target such as `/service/A/ping?password=x`.
    pub fn new(method: &str, target: &str, body: Vec<u8>) -> Self {
        let (path, query) = target.split_once('?').unwrap_or((target, ""));
        HttpRequest {
            method: method.to_ascii_uppercase(),
            path: path.to_string(),
            query: query.to_string(),
            body,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl HttpResponse {
    fn ok(content_type: &str, body: Vec<u8>) -> Self {
        HttpResponse {
            status: 200,
            content_type: content_type.to_string(),
            body,
        }
    }

    fn wire(result: Result<wire::Value, Fault>) -> Self {
        let status = match &result {
            Ok(_) => 200,
            Err(f) => f.code.code(),
        };
        HttpResponse {
            status,
            content_type: XML_CONTENT_TYPE.to_string(),
            body: wire::encode_response(&WireResponse::from(result)),
        }
    }

    fn fault(code: FaultCode, message: impl Into<String>) -> Self {
        Self::wire(Err(Fault::new(code, message)))
    }

    pub fn body_text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

/// Where a request goes, decided before anything runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Route {
    XmlCall(MethodCall),
    RestCall(MethodCall),
    File(String),
    Meta,
    Ui(String),
    Admin(MethodCall),
    Malformed(WireError),
    TooLarge,
    NotFound,
    UnsupportedMethod,
}

struct AdminEndpoint {
    handler: Arc<dyn Handler>,
    password: PasswordDigest,
}

pub struct Server {
    registry: Registry,
    ui_dir: Option<PathBuf>,
    admin: Option<AdminEndpoint>,
}

impl Server {
    pub fn new(registry: Registry) -> Self {
        Server {
            registry,
            ui_dir: None,
            admin: None,
        }
    }

    /// Serves console assets from `dir` under `/ui/`.
    pub fn with_ui_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.ui_dir = Some(dir.into());
        self
    }

    /// Exposes admin operations under `/admin`, gated by `password`.
    pub fn with_admin(mut self, handler: Arc<dyn Handler>, password: PasswordDigest) -> Self {
        self.admin = Some(AdminEndpoint { handler, password });
        self
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn file_roots(&self) -> Arc<parking_lot::RwLock<FileRoots>> {
        self.registry.file_roots()
    }

    pub fn route(&self, req: &HttpRequest) -> Route {
        if req.body.len() as u64 > MAX_BODY {
            return Route::TooLarge;
        }
        let path = req.path.as_str();
        let is_post = req.method == "POST";
        if req.method != "GET" && !is_post {
            return Route::UnsupportedMethod;
        }
        if path == "/meta" {
            return Route::Meta;
        }
        if let Some(rest) = path.strip_prefix("/files/") {
            return Route::File(rest.to_string());
        }
        if path == "/ui" {
            return Route::Ui(String::new());
        }
        if let Some(rest) = path.strip_prefix("/ui/") {
            return Route::Ui(rest.to_string());
        }
        if path == "/admin" || path.starts_with("/admin/") {
            return match wire::decode_call_xml(&req.body) {
                Ok(call) => Route::Admin(call),
                Err(xml) => {
                    let rest_path = format!("/service/admin{}", &path["/admin".len()..]);
                    match wire::parse_rest(&rest_path, &req.query) {
                        Ok(call) => Route::Admin(call),
                        Err(rest) => Route::Malformed(WireError::Unparseable {
                            xml: Box::new(xml),
                            rest: Box::new(rest),
                        }),
                    }
                }
            };
        }
        let service_path = path == "/service" || path.starts_with("/service/");
        if !service_path && !is_post {
            return Route::NotFound;
        }
        match wire::decode_call_xml(&req.body) {
            Ok(call) => Route::XmlCall(call),
            Err(xml) => match wire::parse_rest(path, &req.query) {
                Ok(call) => Route::RestCall(call),
                Err(rest) => Route::Malformed(WireError::Unparseable {
                    xml: Box::new(xml),
                    rest: Box::new(rest),
                }),
            },
        }
    }

    /// Never panics: failures become fault responses.
    pub fn handle(&self, req: &HttpRequest) -> HttpResponse {
        match catch_unwind(AssertUnwindSafe(|| self.handle_route(self.route(req)))) {
            Ok(r) => r,
            Err(_) => HttpResponse::fault(FaultCode::ServiceError, "internal error"),
        }
    }

    fn handle_route(&self, route: Route) -> HttpResponse {
        match route {
            Route::XmlCall(call) | Route::RestCall(call) => HttpResponse::wire(self.registry.invoke(&call)),
            Route::Meta => HttpResponse::ok(XML_CONTENT_TYPE, self.registry.network_view().into_bytes()),
            Route::File(raw) => match self.serve_file(&raw) {
                Ok((bytes, ct)) => HttpResponse::ok(ct, bytes),
                Err(e) => file_fault(e),
            },
            Route::Ui(rest) => self.serve_ui(&rest),
            Route::Admin(call) => self.handle_admin(call),
            Route::Malformed(e) => HttpResponse::fault(FaultCode::Unparseable, e.to_string()),
            Route::TooLarge => {
                HttpResponse::fault(FaultCode::Unparseable, format!("request body exceeds {MAX_BODY} bytes"))
            }
            Route::NotFound => HttpResponse::fault(FaultCode::NoSuchService, "no such endpoint"),
            Route::UnsupportedMethod => HttpResponse::fault(FaultCode::NoSuchMethod, "only GET and POST"),
        }
    }

    /// Reads `<alias>/<relative>` (the part after `/files/`, still encoded)
    /// from a registered root.
    pub fn serve_file(&self, raw: &str) -> Result<(Vec<u8>, &'static str), FileError> {
        let path = self.registry.file_roots().read().resolve_encoded(raw)?;
        files::read_file(&path)
    }

    fn serve_ui(&self, rest: &str) -> HttpResponse {
        let rest = if rest.is_empty() { "index.html" } else { rest };
        if let Some(dir) = &self.ui_dir {
            let mut roots = FileRoots::new();
            if roots.add("ui", dir).is_ok() {
                return match roots
                    .resolve_encoded(&format!("ui/{rest}"))
                    .and_then(|p| files::read_file(&p))
                {
                    Ok((bytes, ct)) => HttpResponse::ok(ct, bytes),
                    Err(e) => file_fault(e),
                };
            }
        }
        if rest == "index.html" {
            return HttpResponse::ok("text/html", FALLBACK_INDEX.as_bytes().to_vec());
        }
        HttpResponse::fault(FaultCode::NoSuchService, format!("no ui asset {rest}"))
    }

    fn handle_admin(&self, call: MethodCall) -> HttpResponse {
        let Some(admin) = &self.admin else {
            return HttpResponse::fault(FaultCode::NoSuchService, "admin endpoint disabled");
        };
        if !admin.password.verify(&call.password) {
            return HttpResponse::fault(FaultCode::BadPassword, "bad admin password");
        }
        let handler = Arc::clone(&admin.handler);
        let result = catch_unwind(AssertUnwindSafe(|| handler.invoke(&call.method, &call.args)))
            .unwrap_or_else(|_| Err(crate::registry::ServiceError::Failed("admin operation panicked".into())));
        HttpResponse::wire(result.map_err(Fault::from))
    }
}

fn file_fault(e: FileError) -> HttpResponse {
    match e {
        FileError::Forbidden(m) => HttpResponse::fault(FaultCode::ForbiddenPath, m),
        FileError::NotFound(m) => HttpResponse::fault(FaultCode::NoSuchService, format!("not found: {m}")),
        other => HttpResponse::fault(FaultCode::ServiceError, other.to_string()),
    }
}

const FALLBACK_INDEX: &str = "<!DOCTYPE html>\n<html><head><title>licas</title></head>\n<body><h1>licas node</h1>\n<p>No console bundle installed. The network description is at <a href=\"/meta\">/meta</a>.</p>\n</body></html>\n";

/// A listening server with a fixed pool of worker threads.
pub struct Daemon {
    http: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl Daemon {
    /// Binds `addr` (for example `127.0.0.1:0`) and starts serving.
    pub fn start(server: Server, addr: &str, threads: usize) -> std::io::Result<Daemon> {
        let http = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
        let bound = http
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let http = Arc::new(http);
        let server = Arc::new(server);
        let mut workers = Vec::new();
        for i in 0..threads.max(1) {
            let (http, server) = (Arc::clone(&http), Arc::clone(&server));
            workers.push(
                std::thread::Builder::new()
                    .name(format!("http-{i}"))
                    .spawn(move || worker(&http, &server))?,
            );
        }
        log::info!("listening on {bound}");
        Ok(Daemon {
            http,
            workers,
            addr: bound,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL usable by peers and clients, e.g. `http://127.0.0.1:8080`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the daemon is shut down from another thread.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in 0..self.workers.len() {
            self.http.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for Daemon {
    fn drop(&mut self) {
        self.stop();
    }
}

fn worker(http: &tiny_http::Server, server: &Server) {
    while let Ok(mut rq) = http.recv() {
        let mut body = Vec::new();
        let read = rq.as_reader().take(MAX_BODY + 1).read_to_end(&mut body);
        let response = match read {
            Err(e) => HttpResponse::fault(FaultCode::Unparseable, format!("cannot read body: {e}")),
            Ok(_) => {
                let req = HttpRequest::new(rq.method().as_str(), rq.url(), body);
                server.handle(&req)
            }
        };
        let header = tiny_http::Header::from_bytes("Content-Type", response.content_type.as_bytes())
            .unwrap_or_else(|_| tiny_http::Header::from_bytes("Content-Type", "application/octet-stream").unwrap());
        let reply = tiny_http::Response::from_data(response.body)
            .with_status_code(response.status)
            .with_header(header);
        if let Err(e) = rq.respond(reply) {
            log::debug!("client went away: {e}");
        }
    }
}

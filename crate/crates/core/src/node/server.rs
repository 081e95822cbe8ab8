//! HTTP routing. Every request gets exactly one response.

use std::io::Read;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use percent_encoding::percent_decode_str;
use tiny_http::{Header, Method, Request, Response, Server};

use super::Runtime;
use crate::codec::{encode_response, Fault, FaultKind};

const MAX_BODY: u64 = 16 * 1024 * 1024;

pub(super) fn serve(server: &Server, runtime: &Runtime, shutdown: &AtomicBool) {
    while !shutdown.load(Ordering::SeqCst) {
        match server.recv_timeout(Duration::from_millis(50)) {
            Ok(Some(request)) => handle(runtime, request),
            Ok(None) => {}
            Err(_) => std::thread::sleep(Duration::from_millis(10)),
        }
    }
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("static header is valid")
}

fn reply(request: Request, status: u16, content_type: &str, body: Vec<u8>) {
    let response = Response::from_data(body)
        .with_status_code(status)
        .with_header(header("Content-Type", content_type));
    let _ = request.respond(response);
}

fn reply_json(request: Request, status: u16, doc: &serde_json::Value) {
    reply(request, status, "application/json", serde_json::to_vec(doc).expect("JSON values always serialize"));
}

fn error_json(request: Request, status: u16, message: &str) {
    reply_json(request, status, &serde_json::json!({ "error": message }));
}

fn decode_segment(s: &str) -> Option<String> {
    percent_decode_str(s).decode_utf8().ok().map(|c| c.into_owned())
}

fn handle(runtime: &Runtime, mut request: Request) {
    let path = request.url().split(['?', '#']).next().unwrap_or("").trim_start_matches('/').to_owned();
    let (head, tail) = match path.split_once('/') {
        Some((h, t)) => (h.to_owned(), Some(t.to_owned())),
        None => (path.clone(), None),
    };
    let method = request.method().clone();
    match (method, head.as_str(), tail) {
        (Method::Post, "invoke", Some(id)) => {
            let Some(id) = decode_segment(&id) else {
                return error_json(request, 400, "bad service id encoding");
            };
            let mut body = Vec::new();
            let read = request.as_reader().take(MAX_BODY + 1).read_to_end(&mut body);
            let response = match read {
                Ok(_) if body.len() as u64 > MAX_BODY => protocol_fault("request body too large"),
                Ok(_) => runtime.handle_invoke(&id, &body),
                Err(e) => protocol_fault(&format!("cannot read body: {e}")),
            };
            match encode_response(&response) {
                Ok(bytes) => reply(request, 200, "application/json", bytes),
                Err(e) => {
                    let fallback = encode_response(&protocol_fault(&e.to_string())).expect("fault envelopes always encode");
                    reply(request, 200, "application/json", fallback)
                }
            }
        }
        (Method::Get, "services", None) => reply_json(request, 200, &runtime.list_services()),
        (Method::Get, "browse", None) => reply(request, 200, "text/html; charset=utf-8", runtime.browse_html().into_bytes()),
        (Method::Get, "describe", Some(id)) => describe(runtime, request, &id),
        (Method::Get, id, None) if !id.is_empty() => {
            let id = id.to_owned();
            describe(runtime, request, &id)
        }
        (Method::Get | Method::Post, _, _) => error_json(request, 404, "no such resource"),
        _ => error_json(request, 405, "method not allowed"),
    }
}

fn describe(runtime: &Runtime, request: Request, raw_id: &str) {
    let Some(id) = decode_segment(raw_id) else {
        return error_json(request, 400, "bad service id encoding");
    };
    match runtime.describe(&id) {
        Ok(doc) => reply_json(request, 200, &doc),
        Err(crate::Error::NotFound(_)) => error_json(request, 404, &format!("no service `{id}`")),
        Err(e) => error_json(request, 500, &e.to_string()),
    }
}

fn protocol_fault(message: &str) -> crate::codec::Response {
    crate::codec::Response::Fault(Fault {
        kind: FaultKind::Protocol,
        class: "protocol".into(),
        message: message.to_owned(),
    })
}

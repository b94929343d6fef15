use std::sync::Arc;

use serde_json::{json, Value};
use worldmem_core::{Engine, EngineConfig, ManualClock, MemoryService, ReclusterMode, Scope, ScopeKind, Timestamp};
use worldmem_mcp::{http, stdio, McpServer};

use crate::{ensure, Outcome};

const NINE: [&str; 9] = [
    "memory_write",
    "memory_recall",
    "memory_list",
    "memory_read",
    "memory_amend",
    "memory_retire",
    "memory_retire_all",
    "memory_purge_scope",
    "memory_list_scopes",
];

fn server() -> McpServer {
    let clock = Arc::new(ManualClock::stepping(Timestamp::from_secs(1_700_000_000), 1_000));
    let engine = Engine::in_memory(EngineConfig::new(32).clock(clock).recluster(ReclusterMode::Off));
    McpServer::new(MemoryService::new(engine))
}

fn call(id: u64, tool: &str, args: Value) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "method": "tools/call", "params": {"name": tool, "arguments": args}})
}

/// Thirty calls; `@id` becomes the id returned by call 3.
fn script() -> Vec<Value> {
    let u = json!(["user:kim"]);
    vec![
        json!({"jsonrpc": "2.0", "id": 1, "method": "initialize", "params": {"protocolVersion": "2025-03-26", "capabilities": {}, "clientInfo": {"name": "acceptance", "version": "1"}}}),
        json!({"jsonrpc": "2.0", "id": 2, "method": "tools/list"}),
        call(3, "memory_write", json!({"text": "kim drinks oolong tea", "scopes": u})),
        call(4, "memory_write", json!({"text": "kim is moving to osaka", "scopes": ["user:kim", "agent:travel"]})),
        call(5, "memory_write", json!({"text": "travel agent prefers rail", "scopes": ["agent:travel"]})),
        call(6, "memory_write", json!({"text": "kim runs on tuesdays", "scopes": u, "origin": "chat-1"})),
        call(7, "memory_recall", json!({"query": "osaka move", "scopes": u, "k": 2})),
        call(8, "memory_recall", json!({"query": "rail", "scopes": ["agent:travel"]})),
        call(9, "memory_recall", json!({"query": "tea", "scopes": ["user:nobody"]})),
        call(10, "memory_list", json!({"scope": "user:kim", "page": 0, "page_size": 2})),
        call(11, "memory_list", json!({"scope": "user:kim", "page": 1, "page_size": 2})),
        call(12, "memory_read", json!({"id": "@id"})),
        call(13, "memory_read", json!({"id": "zz"})),
        call(14, "memory_amend", json!({"id": "@id", "text": "kim drinks green tea now"})),
        call(15, "memory_recall", json!({"query": "tea", "scopes": u})),
        call(16, "memory_recall", json!({"query": "tea", "scopes": u, "include_retired": true})),
        call(17, "memory_list_scopes", json!({})),
        call(18, "memory_list_scopes", json!({"kind": "user"})),
        call(19, "memory_retire", json!({"id": "@id"})),
        call(20, "memory_write", json!({"text": "", "scopes": u})),
        call(21, "memory_write", json!({"text": "no scope", "scopes": []})),
        call(22, "memory_purge_scope", json!({"scope": "agent:travel"})),
        call(23, "memory_purge_scope", json!({"scope": "agent:travel", "confirm": true})),
        call(24, "memory_list_scopes", json!({"include_retired": true})),
        call(25, "memory_retire_all", json!({"scope": "user:kim"})),
        call(26, "memory_list", json!({"scope": "user:kim", "include_retired": true})),
        call(27, "memory_recall", json!({"query": "tuesdays", "scopes": u})),
        call(28, "not_a_tool", json!({})),
        json!({"jsonrpc": "2.0", "id": 29, "method": "ping"}),
        json!({"jsonrpc": "2.0", "id": 30, "method": "resources/list"}),
    ]
}

fn fill(msg: &Value, id: &str) -> String {
    msg.to_string().replace("@id", id)
}

fn written_id(responses: &[Value]) -> Option<String> {
    responses.iter().find(|r| r["id"] == 3)?["result"]["structuredContent"]["id"].as_str().map(str::to_string)
}

fn over_stdio() -> Result<Vec<Value>, String> {
    let s = server();
    let mut out: Vec<Value> = Vec::new();
    for msg in script() {
        let line = format!("{}\n", fill(&msg, &written_id(&out).unwrap_or_default()));
        let mut buf = Vec::new();
        stdio::serve(&s, line.as_bytes(), &mut buf).map_err(|e| e.to_string())?;
        for l in String::from_utf8(buf).map_err(|e| e.to_string())?.lines() {
            out.push(serde_json::from_str(l).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn over_http() -> Result<Vec<Value>, String> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).map_err(|e| e.to_string())?;
    let url = format!("http://{}{}", listener.local_addr().map_err(|e| e.to_string())?, http::ENDPOINT);
    rt.spawn(http::serve_listener(server(), listener));
    let client = reqwest::blocking::Client::new();
    let mut out: Vec<Value> = Vec::new();
    for msg in script() {
        let body = fill(&msg, &written_id(&out).unwrap_or_default());
        let resp = client
            .post(&url)
            .header("content-type", "application/json")
            .header("accept", "application/json, text/event-stream")
            .body(body)
            .send()
            .map_err(|e| e.to_string())?;
        ensure!(resp.status().is_success(), "HTTP status {}", resp.status());
        out.push(resp.json().map_err(|e| e.to_string())?);
    }
    Ok(out)
}

pub fn conformance() -> Outcome {
    let stdio = over_stdio()?;
    let http = over_http()?;
    ensure!(stdio.len() == 30, "stdio answered {} of 30 calls", stdio.len());
    ensure!(stdio == http, "transports disagree");
    let names: Vec<&str> =
        stdio[1]["result"]["tools"].as_array().ok_or("no tool list")?.iter().filter_map(|t| t["name"].as_str()).collect();
    ensure!(names == NINE, "advertised tools {names:?}");
    ensure!(stdio[11]["result"]["structuredContent"]["text"] == "kim drinks oolong tea", "read-back mismatch");
    ensure!(stdio[27]["error"]["code"] == -32602, "unknown tool not rejected");
    let first = Scope::new(ScopeKind::User, "kim").node();
    let mut stable = 0;
    for i in 0..1000 {
        let kind = [ScopeKind::User, ScopeKind::Agent, ScopeKind::App, ScopeKind::Run][i % 4];
        let a = Scope::new(kind, format!("id-{}", i / 4)).node();
        let b = Scope::new(kind, format!("id-{}", i / 4)).node();
        ensure!(a == b, "scope hash drifted for {kind:?}");
        stable += 1;
    }
    ensure!(Scope::user("kim").node() == first, "user shorthand differs");
    ensure!(Scope::agent("kim").node() != first, "scope kinds collide");
    Ok(format!("9 tools, 30 calls identical over stdio and HTTP, {stable} stable scope derivations"))
}

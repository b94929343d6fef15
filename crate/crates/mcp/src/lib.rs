//! JSON-RPC 2.0 dispatcher for the memory tools, shared by the stdio and
//! streamable-HTTP transports so both answer byte-identically.

pub mod http;
pub mod stdio;

use serde_json::{json, Value};
use worldmem_core::memory::TOOL_NAMES;
use worldmem_core::MemoryService;

pub const PROTOCOL_VERSION: &str = "2025-03-26";
pub const SERVER_NAME: &str = "worldmem";

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;

#[derive(Debug, Clone)]
pub struct McpServer {
    service: MemoryService,
}

fn error(id: Value, code: i64, message: impl Into<String>) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "error": {"code": code, "message": message.into()}})
}

fn ok(id: Value, result: Value) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "result": result})
}

impl McpServer {
    pub fn new(service: MemoryService) -> Self {
        Self { service }
    }

    pub fn service(&self) -> &MemoryService {
        &self.service
    }

    /// Handle one raw frame. `None` when nothing should be sent back
    /// (notifications, responses, or a batch made only of those).
    pub fn handle_text(&self, text: &str) -> Option<Value> {
        match serde_json::from_str::<Value>(text) {
            Ok(v) => self.handle(v),
            Err(e) => Some(error(Value::Null, PARSE_ERROR, format!("parse error: {e}"))),
        }
    }

    pub fn handle(&self, msg: Value) -> Option<Value> {
        match msg {
            Value::Array(batch) if batch.is_empty() => Some(error(Value::Null, INVALID_REQUEST, "empty batch")),
            Value::Array(batch) => {
                let out: Vec<Value> = batch.into_iter().filter_map(|m| self.handle_one(m)).collect();
                (!out.is_empty()).then_some(Value::Array(out))
            }
            other => self.handle_one(other),
        }
    }

    fn handle_one(&self, msg: Value) -> Option<Value> {
        let Value::Object(obj) = msg else {
            return Some(error(Value::Null, INVALID_REQUEST, "message must be an object"));
        };
        let id = obj.get("id").cloned();
        let Some(method) = obj.get("method").and_then(Value::as_str) else {
            // A response from the client, or garbage without an id.
            return id.filter(|_| !obj.contains_key("result") && !obj.contains_key("error")).map(|id| {
                error(id, INVALID_REQUEST, "missing method")
            });
        };
        let params = obj.get("params").cloned().unwrap_or(Value::Null);
        let Some(id) = id else {
            if !method.starts_with("notifications/") {
                log::debug!("ignoring notification {method}");
            }
            return None;
        };
        Some(match method {
            "initialize" => ok(
                id,
                json!({
                    "protocolVersion": PROTOCOL_VERSION,
                    "capabilities": {"tools": {"listChanged": false}},
                    "serverInfo": {"name": SERVER_NAME, "version": env!("CARGO_PKG_VERSION")},
                }),
            ),
            "ping" => ok(id, json!({})),
            "tools/list" => ok(id, json!({"tools": MemoryService::tool_descriptors()})),
            "tools/call" => self.call(id, &params),
            other => error(id, METHOD_NOT_FOUND, format!("unknown method {other}")),
        })
    }

    fn call(&self, id: Value, params: &Value) -> Value {
        let Some(name) = params.get("name").and_then(Value::as_str) else {
            return error(id, INVALID_PARAMS, "tools/call needs a tool name");
        };
        if !TOOL_NAMES.contains(&name) {
            return error(id, INVALID_PARAMS, format!("unknown tool {name}"));
        }
        let args = params.get("arguments").cloned().unwrap_or(Value::Null);
        let result = match self.service.call_tool(name, &args) {
            Ok(v) => {
                let structured = if v.is_object() { v.clone() } else { json!({"items": v}) };
                json!({
                    "content": [{"type": "text", "text": v.to_string()}],
                    "structuredContent": structured,
                    "isError": false,
                })
            }
            Err(e) => json!({"content": [{"type": "text", "text": e.to_string()}], "isError": true}),
        };
        ok(id, result)
    }
}

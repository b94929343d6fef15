//! Streamable-HTTP transport: one endpoint, JSON-RPC in the POST body,
//! JSON responses. No server-initiated stream is offered, so GET is 405.

use std::net::SocketAddr;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use tokio::net::TcpListener;

use crate::McpServer;

pub const ENDPOINT: &str = "/mcp";

/// Browsers may only reach a local server from a local page.
fn origin_allowed(headers: &HeaderMap) -> bool {
    let Some(origin) = headers.get(header::ORIGIN).and_then(|v| v.to_str().ok()) else {
        return true;
    };
    let host = origin.split("://").nth(1).unwrap_or(origin);
    let host = host.split(['/', ':']).next().unwrap_or(host);
    matches!(host, "localhost" | "127.0.0.1" | "[::1]")
}

async fn post_message(State(server): State<McpServer>, headers: HeaderMap, body: Bytes) -> Response {
    if !origin_allowed(&headers) {
        return (StatusCode::FORBIDDEN, "origin not allowed").into_response();
    }
    let text = match String::from_utf8(body.to_vec()) {
        Ok(t) => t,
        Err(_) => return (StatusCode::BAD_REQUEST, "body must be UTF-8").into_response(),
    };
    let reply = tokio::task::spawn_blocking(move || server.handle_text(&text)).await;
    match reply {
        Ok(Some(v)) => ([(header::CONTENT_TYPE, "application/json")], v.to_string()).into_response(),
        Ok(None) => StatusCode::ACCEPTED.into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn no_stream() -> StatusCode {
    StatusCode::METHOD_NOT_ALLOWED
}

pub fn router(server: McpServer) -> Router {
    Router::new().route(ENDPOINT, post(post_message).get(no_stream).delete(no_stream)).with_state(server)
}

/// Serve on an already bound listener until the future is dropped.
pub async fn serve_listener(server: McpServer, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(server)).await
}

pub async fn serve(server: McpServer, addr: SocketAddr) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    log::info!("listening on http://{}{}", listener.local_addr()?, ENDPOINT);
    serve_listener(server, listener).await
}

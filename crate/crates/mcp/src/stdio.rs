//! Newline-delimited JSON-RPC over a byte stream pair.

use std::io::{self, BufRead, Write};

use crate::McpServer;

/// Serve until the reader hits end of input.
pub fn serve<R: BufRead, W: Write>(server: &McpServer, reader: R, mut writer: W) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(reply) = server.handle_text(&line) {
            serde_json::to_writer(&mut writer, &reply)?;
            writer.write_all(b"\n")?;
            writer.flush()?;
        }
    }
    Ok(())
}

/// Serve on the process's stdin and stdout.
pub fn serve_process(server: &McpServer) -> io::Result<()> {
    serve(server, io::stdin().lock(), io::stdout().lock())
}

//! Byte sources for `stream`: a file, standard input or a TCP connection.

use std::fs::File;
use std::io::{self, Read};
use std::net::TcpStream;
use std::sync::mpsc::SyncSender;

use anyhow::{Context, Result};

pub const QUEUE_DEPTH: usize = 16;
const CHUNK: usize = 4096;

pub fn open(source: &str) -> Result<Box<dyn Read + Send>> {
    if source == "stdin" || source == "-" {
        return Ok(Box::new(io::stdin()));
    }
    if let Some(addr) = source.strip_prefix("tcp:") {
        let stream = TcpStream::connect(addr).with_context(|| format!("connecting to {addr}"))?;
        return Ok(Box::new(stream));
    }
    let path = source.strip_prefix("file:").unwrap_or(source);
    Ok(Box::new(File::open(path).with_context(|| format!("opening {path}"))?))
}

/// Reads until end of stream, handing chunks to the compute side. Blocks
/// when the queue is full.
pub fn pump(mut reader: Box<dyn Read + Send>, tx: SyncSender<io::Result<Vec<u8>>>) {
    let mut buf = vec![0; CHUNK];
    loop {
        match reader.read(&mut buf) {
            Ok(0) => return,
            Ok(n) => {
                if tx.send(Ok(buf[..n].to_vec())).is_err() {
                    return;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        }
    }
}

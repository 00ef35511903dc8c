//! TCP binding of the protocol: each connection is one subscriber plus a
//! command sender.

use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use super::Session;
use crate::error::Result;

/// Accepts connections until the session finishes.
pub fn serve(listener: TcpListener, session: Arc<Session>) -> Result<()> {
    listener.set_nonblocking(true)?;
    while !session.is_finished() {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                connect(stream, session.clone())?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn connect(stream: TcpStream, session: Arc<Session>) -> Result<()> {
    let sub = session.subscribe();
    let mut out = stream.try_clone()?;
    std::thread::spawn(move || {
        for line in sub.lines() {
            if writeln!(out, "{line}").and_then(|_| out.flush()).is_err() {
                break;
            }
        }
        let _ = out.shutdown(Shutdown::Both);
    });
    std::thread::spawn(move || {
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            if session.submit_line(&line).is_err() {
                break;
            }
        }
    });
    Ok(())
}

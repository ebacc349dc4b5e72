use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use rand::RngCore;

use super::message::{recv, send, CodecError, MessageBody, ProtocolMessage, QuerySource, SessionId};
use super::transcript::{Direction, SessionTranscript};
use super::vendor::{EnclavePk, VendorSession, VendorState};
use super::{handle_query, resolve_query, EnclaveHost, ProtocolError, VendorLink};

/// Vendor endpoint over TCP. Opens a fresh connection per session.
#[derive(Debug)]
pub struct TcpLink {
    addr: SocketAddr,
    stream: Option<TcpStream>,
}

impl TcpLink {
    pub fn new(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
        Ok(Self { addr, stream: None })
    }
}

impl VendorLink for TcpLink {
    fn begin(&mut self) -> Result<(), ProtocolError> {
        self.stream = Some(TcpStream::connect(self.addr).map_err(CodecError::Io)?);
        Ok(())
    }

    fn exchange(&mut self, msg: &ProtocolMessage, transcript: &mut SessionTranscript) -> Result<ProtocolMessage, ProtocolError> {
        if self.stream.is_none() {
            self.begin()?;
        }
        let stream = self.stream.as_mut().expect("connected");
        let wire = msg.encode();
        super::message::write_frame(stream, &wire).map_err(CodecError::Io)?;
        transcript.record(Direction::EnclaveToVendor, msg, wire);
        let raw = super::message::read_frame(stream)?;
        let reply = ProtocolMessage::decode(&raw)?;
        transcript.record(Direction::VendorToEnclave, &reply, raw);
        Ok(reply)
    }
}

/// Loopback vendor endpoint; one thread per connection, each with its own
/// session state and transcript.
pub struct VendorServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    transcripts: Arc<Mutex<Vec<SessionTranscript>>>,
}

impl std::fmt::Debug for VendorServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VendorServer").field("addr", &self.addr).finish_non_exhaustive()
    }
}

impl VendorServer {
    pub fn bind(addr: impl ToSocketAddrs, vendor: Arc<Mutex<VendorState>>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let transcripts = Arc::new(Mutex::new(Vec::new()));
        let accept = {
            let stop = stop.clone();
            let transcripts = transcripts.clone();
            std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let vendor = vendor.clone();
                    let transcripts = transcripts.clone();
                    std::thread::spawn(move || {
                        let t = serve_vendor_connection(stream, &vendor);
                        transcripts.lock().unwrap().push(t);
                    });
                }
            })
        };
        log::info!("vendor listening on {addr}");
        Ok(Self { addr, stop, accept: Some(accept), transcripts })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Transcripts of the connections that have closed so far.
    pub fn transcripts(&self) -> Vec<SessionTranscript> {
        self.transcripts.lock().unwrap().clone()
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for VendorServer {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

fn serve_vendor_connection(mut stream: TcpStream, vendor: &Mutex<VendorState>) -> SessionTranscript {
    let mut session = VendorSession::new();
    let mut transcript = SessionTranscript::new();
    loop {
        let raw = match super::message::read_frame(&mut stream) {
            Ok(raw) => raw,
            Err(CodecError::Closed) => break,
            Err(e) => {
                log::debug!("vendor connection error: {e}");
                break;
            }
        };
        let reply = match ProtocolMessage::decode(&raw) {
            Ok(msg) => {
                transcript.record(Direction::EnclaveToVendor, &msg, raw);
                vendor.lock().unwrap().handle(&mut session, &msg)
            }
            Err(e) => ProtocolError::Codec(e).to_message(SessionId::default()),
        };
        let wire = reply.encode();
        transcript.record(Direction::VendorToEnclave, &reply, wire.clone());
        if super::message::write_frame(&mut stream, &wire).is_err() {
            break;
        }
    }
    for line in transcript.to_lines().lines() {
        log::debug!("{line}");
    }
    transcript
}

/// Administrative license change on a running vendor endpoint.
pub fn set_license(addr: impl ToSocketAddrs, pk: EnclavePk, authorized: bool) -> Result<(), ProtocolError> {
    let mut stream = TcpStream::connect(addr).map_err(CodecError::Io)?;
    let mut sid = [0u8; 8];
    rand::rngs::OsRng.fill_bytes(&mut sid);
    send(&mut stream, &ProtocolMessage::new(SessionId(sid), MessageBody::LicenseControl { pk, authorized }))
        .map_err(CodecError::Io)?;
    match recv(&mut stream)?.body {
        MessageBody::Ack => Ok(()),
        MessageBody::Error { code, detail } => Err(ProtocolError::from_remote(code, detail)),
        other => Err(super::unexpected("ACK", other)),
    }
}

/// Answers `QUERY` messages with `RESULT` / `ERROR` until `max_queries`
/// have been served (or forever).
pub fn serve_queries(listener: &TcpListener, host: &mut EnclaveHost, max_queries: Option<usize>) -> io::Result<usize> {
    let mut served = 0;
    for conn in listener.incoming() {
        let mut stream = conn?;
        loop {
            let msg = match recv(&mut stream) {
                Ok(m) => m,
                Err(CodecError::Closed) => break,
                Err(e) => {
                    let _ = send(&mut stream, &ProtocolError::Codec(e).to_message(SessionId::default()));
                    break;
                }
            };
            let sid = msg.header.session;
            let reply = match msg.body {
                MessageBody::Query { source } => {
                    served += 1;
                    match resolve_query(source).and_then(|input| handle_query(host, input)) {
                        Ok(c) => ProtocolMessage::new(sid, MessageBody::Result { label: c.label, score: c.score }),
                        Err(e) => e.to_message(sid),
                    }
                }
                other => super::unexpected("QUERY", other).to_message(sid),
            };
            send(&mut stream, &reply)?;
            if max_queries.is_some_and(|m| served >= m) {
                return Ok(served);
            }
        }
    }
    Ok(served)
}

/// User-side query against an enclave host's query endpoint.
pub fn query_enclave(addr: impl ToSocketAddrs, source: QuerySource) -> Result<(String, f64), ProtocolError> {
    let mut stream = TcpStream::connect(addr).map_err(CodecError::Io)?;
    let mut sid = [0u8; 8];
    rand::rngs::OsRng.fill_bytes(&mut sid);
    send(&mut stream, &ProtocolMessage::new(SessionId(sid), MessageBody::Query { source })).map_err(CodecError::Io)?;
    match recv(&mut stream)?.body {
        MessageBody::Result { label, score } => Ok((label, score)),
        MessageBody::Error { code, detail } => Err(ProtocolError::from_remote(code, detail)),
        other => Err(super::unexpected("RESULT", other)),
    }
}

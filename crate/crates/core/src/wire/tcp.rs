//! Byte-stream transport over TCP.
//!
//! Each local endpoint owns a listener. A connection carries traffic in one
//! direction only: the dialing side first sends a `Hello` naming the sending
//! endpoint, then frames. Incoming frames from all connections land in one
//! queue, which preserves per-connection order.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use super::{read_frame, write_frame, Endpoint, Envelope, Message, MessageCounters, Topology, Transport, TransportError};

const CONNECT_RETRY: Duration = Duration::from_millis(50);
const CONNECT_DEADLINE: Duration = Duration::from_secs(10);

pub struct TcpTransport {
    topology: Topology,
    hellos: BTreeMap<Endpoint, Message>,
    outgoing: BTreeMap<(Endpoint, Endpoint), BufWriter<TcpStream>>,
    inbox: Receiver<Envelope>,
    pub counters: MessageCounters,
}

impl TcpTransport {
    /// Binds a listener for every local endpoint at its topology address.
    pub fn bind(topology: Topology, locals: Vec<(Endpoint, Message)>) -> Result<Self, TransportError> {
        let mut listeners = Vec::new();
        for (ep, hello) in locals {
            let addr = topology.address_of(&ep).ok_or(TransportError::NoRoute(ep))?;
            let listener = TcpListener::bind(addr).map_err(|e| TransportError::Wire(e.into()))?;
            listeners.push((ep, hello, listener));
        }
        Ok(Self::with_listeners(topology, listeners))
    }

    /// Uses already bound listeners, e.g. on port 0 for tests.
    pub fn with_listeners(topology: Topology, listeners: Vec<(Endpoint, Message, TcpListener)>) -> Self {
        let (tx, inbox) = mpsc::channel();
        let mut hellos = BTreeMap::new();
        for (ep, hello, listener) in listeners {
            hellos.insert(ep, hello);
            let tx = tx.clone();
            thread::spawn(move || accept_loop(ep, listener, tx));
        }
        Self {
            topology,
            hellos,
            outgoing: BTreeMap::new(),
            inbox,
            counters: MessageCounters::default(),
        }
    }

    fn stream(&mut self, from: Endpoint, to: Endpoint) -> Result<&mut BufWriter<TcpStream>, TransportError> {
        if !self.outgoing.contains_key(&(from, to)) {
            let addr = self.topology.address_of(&to).ok_or(TransportError::NoRoute(to))?.to_string();
            let hello = self.hellos.get(&from).ok_or(TransportError::NoRoute(from))?.clone();
            let deadline = Instant::now() + CONNECT_DEADLINE;
            let stream = loop {
                match TcpStream::connect(&addr) {
                    Ok(s) => break s,
                    Err(_) if Instant::now() < deadline => thread::sleep(CONNECT_RETRY),
                    Err(e) => return Err(TransportError::Wire(e.into())),
                }
            };
            stream.set_nodelay(true).ok();
            let mut writer = BufWriter::new(stream);
            write_frame(&mut writer, &hello)?;
            self.outgoing.insert((from, to), writer);
        }
        Ok(self.outgoing.get_mut(&(from, to)).unwrap())
    }
}

fn accept_loop(local: Endpoint, listener: TcpListener, tx: Sender<Envelope>) {
    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        let tx = tx.clone();
        thread::spawn(move || {
            let mut reader = BufReader::new(stream);
            let remote = match read_frame(&mut reader) {
                Ok(Some(Message::Hello { node_id, shard_id, .. })) => Endpoint {
                    node: node_id,
                    shard: shard_id,
                },
                _ => return,
            };
            while let Ok(Some(msg)) = read_frame(&mut reader) {
                if tx.send(Envelope::new(remote, local, msg)).is_err() {
                    return;
                }
            }
        });
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, env: Envelope) -> Result<(), TransportError> {
        let frame_len = env.msg.frame_len();
        self.counters.record(&env, frame_len);
        let to = env.to;
        let writer = self.stream(env.from, env.to)?;
        write_frame(writer, &env.msg)?;
        writer.flush().map_err(|_| TransportError::Closed(to))?;
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Envelope>, TransportError> {
        match self.inbox.recv_timeout(timeout) {
            Ok(env) => Ok(Some(env)),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => Ok(None),
        }
    }
}

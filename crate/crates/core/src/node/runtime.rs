use std::time::{Duration, Instant};

use super::NodeHost;
use crate::types::Block;
use crate::wire::tcp::TcpTransport;
use crate::wire::{Endpoint, Envelope, Message, MessageCounters, Topology, Transport, TransportError};

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Upper bound on wall-clock running time.
    pub duration: Duration,
    /// Return as soon as the main chain reaches this length.
    pub target_height: Option<usize>,
    pub tick: Duration,
    /// Blocks this node produced, announced to its peers at start-up.
    pub blocks: Vec<Block>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            duration: Duration::from_secs(10),
            target_height: None,
            tick: Duration::from_millis(100),
            blocks: Vec::new(),
        }
    }
}

pub struct RunReport {
    pub host: NodeHost,
    pub counters: MessageCounters,
    pub elapsed: Duration,
}

/// Runs one node over TCP at the addresses listed for it in `topology`.
pub fn run_node(mut host: NodeHost, topology: Topology, opts: RunOptions) -> Result<RunReport, TransportError> {
    let me = host.node_id();
    let mut net = TcpTransport::bind(topology.clone(), host.hellos())?;
    let start = Instant::now();

    let coordinator = host.coordinator.endpoint();
    let peers = topology.peers(me);
    for &p in &peers {
        net.send(Envelope::new(coordinator, Endpoint::coordinator(p), host.coordinator.hello()))?;
    }
    for block in &opts.blocks {
        host.seed(block);
        for &p in &peers {
            net.send(Envelope::new(coordinator, Endpoint::coordinator(p), Message::Inventory {
                block_hash: block.hash(),
            }))?;
        }
    }

    let mut next_tick = start + opts.tick;
    loop {
        let now = Instant::now();
        if now >= start + opts.duration {
            break;
        }
        if opts
            .target_height
            .is_some_and(|h| host.coordinator.main_chain().len() >= h && host.is_idle())
        {
            break;
        }
        let wait = next_tick.saturating_duration_since(now).max(Duration::from_millis(1));
        if let Some(env) = net.recv(wait)? {
            for out in host.handle(env) {
                net.send(out)?;
            }
        }
        if Instant::now() >= next_tick {
            next_tick += opts.tick;
            for out in host.tick() {
                net.send(out)?;
            }
        }
    }
    Ok(RunReport {
        host,
        counters: net.counters.clone(),
        elapsed: start.elapsed(),
    })
}

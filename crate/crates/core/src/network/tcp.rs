//! Line-delimited JSON transport over TCP.
//!
//! Broadcasts go over outbound connections to the configured peers; replies
//! go back over whichever connection carried the request. Each node
//! handles messages one at a time under its lock.

use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};

use super::{Message, NodeCore, Outbound};

pub type SharedNode = Arc<Mutex<NodeCore>>;

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Outbound queues, one per configured peer.
#[derive(Clone, Default)]
pub struct PeerSet {
    senders: Arc<Mutex<Vec<UnboundedSender<Message>>>>,
}

impl PeerSet {
    pub fn new() -> PeerSet {
        PeerSet::default()
    }

    pub fn broadcast(&self, msg: &Message) {
        for s in self.senders.lock().expect("peer set lock").iter() {
            let _ = s.send(msg.clone());
        }
    }

    pub fn len(&self) -> usize {
        self.senders.lock().expect("peer set lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Routes messages returned by the node.
    pub fn route(&self, outs: Vec<Outbound>, reply: Option<&UnboundedSender<Message>>) {
        for out in outs {
            match out {
                Outbound::Broadcast(m) => self.broadcast(&m),
                Outbound::Reply(m) => {
                    if let Some(r) = reply {
                        let _ = r.send(m);
                    }
                }
            }
        }
    }

    /// Keeps an outbound connection to `addr` open, reconnecting after
    /// failures. Messages queued while disconnected are discarded.
    pub fn connect(&self, addr: SocketAddr, node: SharedNode) {
        let (tx, mut rx) = unbounded_channel();
        self.senders.lock().expect("peer set lock").push(tx);
        let peers = self.clone();
        tokio::spawn(async move {
            loop {
                match TcpStream::connect(addr).await {
                    Ok(stream) => {
                        let hello = node.lock().expect("node lock").tip_message();
                        let _ = run_connection(stream, node.clone(), peers.clone(), Some(&mut rx), Some(hello)).await;
                    }
                    Err(_) => while rx.try_recv().is_ok() {},
                }
                tokio::time::sleep(Duration::from_millis(500)).await;
                while rx.try_recv().is_ok() {}
            }
        });
    }
}

async fn write_line(w: &mut OwnedWriteHalf, msg: &Message) -> io::Result<()> {
    let mut line = serde_json::to_vec(msg).map_err(io::Error::other)?;
    line.push(b'\n');
    w.write_all(&line).await
}

async fn next_outgoing(rx: &mut Option<&mut UnboundedReceiver<Message>>) -> Option<Message> {
    match rx {
        Some(rx) => rx.recv().await,
        None => std::future::pending().await,
    }
}

/// Serves one connection until either side closes it.
pub async fn run_connection(
    stream: TcpStream,
    node: SharedNode,
    peers: PeerSet,
    mut outgoing: Option<&mut UnboundedReceiver<Message>>,
    hello: Option<Message>,
) -> io::Result<()> {
    let (r, mut w) = stream.into_split();
    let (reply_tx, mut reply_rx) = unbounded_channel();
    let mut lines = BufReader::new(r).lines();
    if let Some(m) = hello {
        write_line(&mut w, &m).await?;
    }
    loop {
        tokio::select! {
            line = lines.next_line() => {
                let Some(line) = line? else { return Ok(()) };
                let Ok(msg) = serde_json::from_str::<Message>(&line) else { continue };
                let outs = node.lock().expect("node lock").handle_message(msg, now_ms());
                peers.route(outs, Some(&reply_tx));
            }
            Some(m) = reply_rx.recv() => write_line(&mut w, &m).await?,
            Some(m) = next_outgoing(&mut outgoing) => write_line(&mut w, &m).await?,
        }
    }
}

/// Accepts inbound peer connections forever.
pub async fn serve(listener: TcpListener, node: SharedNode, peers: PeerSet) {
    loop {
        let Ok((stream, _)) = listener.accept().await else { continue };
        let (node, peers) = (node.clone(), peers.clone());
        tokio::spawn(async move {
            let _ = run_connection(stream, node, peers, None, None).await;
        });
    }
}

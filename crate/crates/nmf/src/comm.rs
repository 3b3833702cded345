//! Message passing for the distributed workers.
//!
//! A [`CommWorld`] is one rank's handle on a world of `P` ranks. Its only
//! collectives are a sum-allreduce and a barrier, both built on a binomial
//! tree: reduce towards rank 0, then broadcast back down. Every rank sums in
//! the same fixed order, so results are bit-identical on all ranks and across
//! transports.
//!
//! Two transports are provided: [`InProcessTransport`] (threads and
//! channels) and [`TcpTransport`] (one process per rank, full TCP mesh).
//!
//! TCP frames are `[u32 tag LE][u64 body length LE][DMAT1 body]`. The tag is
//! the collective's sequence number, which catches ranks that fall out of step.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use nmf_core::distributed::Allreduce;
use nmf_core::DenseMatrix;

use crate::error::{NmfError, Result};
use crate::io::{decode_dmat, encode_dmat};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub tag: u32,
    pub matrix: DenseMatrix,
}

/// Point-to-point delivery between ranks. Frames from one peer arrive in the
/// order they were sent.
pub trait Transport: Send {
    fn kind(&self) -> TransportKind;

    fn send(&mut self, to: usize, frame: &Frame) -> Result<()>;

    fn recv(&mut self, from: usize) -> Result<Frame>;
}

/// Counters for one rank. Algorithmic allreduces are counted apart from the
/// scalar monitoring reductions and barriers the harness adds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CommStats {
    pub allreduce_calls: u64,
    /// Bytes of matrix values this rank sent inside algorithmic allreduces.
    pub bytes_sent: u64,
    pub metric_calls: u64,
    pub barrier_calls: u64,
    pub comm_wall_time: Duration,
    pub compute_wall_time: Duration,
}

pub struct CommWorld {
    rank: usize,
    size: usize,
    transport: Box<dyn Transport>,
    seq: u32,
    stats: CommStats,
}

impl std::fmt::Debug for CommWorld {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CommWorld")
            .field("rank", &self.rank)
            .field("size", &self.size)
            .field("transport", &self.transport.kind())
            .field("stats", &self.stats)
            .finish()
    }
}

impl CommWorld {
    pub fn new(rank: usize, size: usize, transport: Box<dyn Transport>) -> Result<Self> {
        if size == 0 || rank >= size {
            return Err(NmfError::Config(format!("rank {rank} outside world of size {size}")));
        }
        Ok(Self {
            rank,
            size,
            transport,
            seq: 0,
            stats: CommStats::default(),
        })
    }

    /// `size` in-process worlds, one per rank, to be moved onto threads.
    pub fn in_process(size: usize, timeout: Duration) -> Result<Vec<Self>> {
        InProcessTransport::mesh(size, timeout)
            .into_iter()
            .enumerate()
            .map(|(rank, t)| Self::new(rank, size, Box::new(t)))
            .collect()
    }

    /// Joins a TCP world through the rendezvous at `addr` (rank 0 listens there).
    pub fn tcp(rank: usize, size: usize, addr: SocketAddr, timeout: Duration) -> Result<Self> {
        let t = TcpTransport::connect(rank, size, addr, timeout)?;
        Self::new(rank, size, Box::new(t))
    }

    pub fn kind(&self) -> TransportKind {
        self.transport.kind()
    }

    pub fn stats(&self) -> CommStats {
        self.stats
    }

    pub fn add_compute_time(&mut self, d: Duration) {
        self.stats.compute_wall_time += d;
    }

    /// Sums `values` across ranks without touching the algorithmic counters.
    pub fn allreduce_metric(&mut self, values: &mut [f64]) -> Result<()> {
        let start = Instant::now();
        let mut payload = [DenseMatrix::new(values.len(), 1, values.to_vec())?];
        self.tree_allreduce(&mut payload)?;
        values.copy_from_slice(payload[0].as_slice());
        self.stats.metric_calls += 1;
        self.stats.comm_wall_time += start.elapsed();
        Ok(())
    }

    /// Returns once every rank has entered the barrier.
    pub fn barrier(&mut self) -> Result<()> {
        let start = Instant::now();
        let mut payload = [DenseMatrix::zeros(1, 1)];
        self.tree_allreduce(&mut payload)?;
        self.stats.barrier_calls += 1;
        self.stats.comm_wall_time += start.elapsed();
        Ok(())
    }

    fn send_all(&mut self, to: usize, tag: u32, payload: &[DenseMatrix]) -> Result<u64> {
        let mut bytes = 0;
        for m in payload {
            // The frame owns its matrix; the clone is the message buffer.
            self.transport.send(to, &Frame { tag, matrix: m.clone() })?;
            bytes += 8 * m.len() as u64;
        }
        Ok(bytes)
    }

    fn recv_checked(&mut self, from: usize, tag: u32, like: &DenseMatrix) -> Result<DenseMatrix> {
        let frame = self.transport.recv(from)?;
        if frame.tag != tag {
            return Err(NmfError::Protocol {
                rank: self.rank,
                peer: from,
                detail: format!("expected collective #{tag}, got #{}", frame.tag),
            });
        }
        if frame.matrix.shape() != like.shape() {
            return Err(NmfError::Protocol {
                rank: self.rank,
                peer: from,
                detail: format!(
                    "payload shape {:?} does not match local {:?}",
                    frame.matrix.shape(),
                    like.shape()
                ),
            });
        }
        Ok(frame.matrix)
    }

    /// Binomial-tree reduce to rank 0 followed by the mirror-image broadcast.
    /// Returns the bytes this rank sent.
    fn tree_allreduce(&mut self, payload: &mut [DenseMatrix]) -> Result<u64> {
        let tag = self.seq;
        self.seq = self.seq.wrapping_add(1);
        let (rank, size) = (self.rank, self.size);
        let mut bytes = 0;

        let mut step = 1;
        while step < size {
            if rank & step != 0 {
                bytes += self.send_all(rank - step, tag, payload)?;
                break;
            }
            if rank + step < size {
                for m in payload.iter_mut() {
                    let incoming = self.recv_checked(rank + step, tag, m)?;
                    m.add_assign(&incoming)?;
                }
            }
            step <<= 1;
        }

        let mut top = 1;
        while top < size {
            top <<= 1;
        }
        let mut step = top >> 1;
        while step >= 1 {
            if rank % (2 * step) == step {
                for m in payload.iter_mut() {
                    *m = self.recv_checked(rank - step, tag, m)?;
                }
            } else if rank % (2 * step) == 0 && rank + step < size {
                bytes += self.send_all(rank + step, tag, payload)?;
            }
            step >>= 1;
        }
        Ok(bytes)
    }
}

impl Allreduce for CommWorld {
    type Error = NmfError;

    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.size
    }

    fn allreduce_sum(&mut self, payload: &mut [DenseMatrix]) -> Result<()> {
        let start = Instant::now();
        let bytes = self.tree_allreduce(payload)?;
        self.stats.allreduce_calls += 1;
        self.stats.bytes_sent += bytes;
        self.stats.comm_wall_time += start.elapsed();
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// In-process

pub struct InProcessTransport {
    rank: usize,
    timeout: Duration,
    to: Vec<Sender<Frame>>,
    from: Vec<Receiver<Frame>>,
}

impl InProcessTransport {
    /// One unbounded channel per ordered pair of ranks.
    pub fn mesh(size: usize, timeout: Duration) -> Vec<Self> {
        let mut senders: Vec<Vec<Sender<Frame>>> = (0..size).map(|_| Vec::with_capacity(size)).collect();
        let mut receivers: Vec<Vec<Receiver<Frame>>> = (0..size).map(|_| Vec::with_capacity(size)).collect();
        for from in 0..size {
            for to_list in receivers.iter_mut() {
                let (tx, rx) = crossbeam_channel::unbounded();
                senders[from].push(tx);
                to_list.push(rx);
            }
        }
        senders
            .into_iter()
            .zip(receivers)
            .enumerate()
            .map(|(rank, (to, from))| Self { rank, timeout, to, from })
            .collect()
    }
}

impl Transport for InProcessTransport {
    fn kind(&self) -> TransportKind {
        TransportKind::InProcess
    }

    fn send(&mut self, to: usize, frame: &Frame) -> Result<()> {
        self.to[to]
            .send(frame.clone())
            .map_err(|_| NmfError::Disconnected { rank: self.rank, peer: to })
    }

    fn recv(&mut self, from: usize) -> Result<Frame> {
        let start = Instant::now();
        self.from[from].recv_timeout(self.timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => NmfError::Timeout {
                rank: self.rank,
                peer: from,
                elapsed: start.elapsed(),
            },
            RecvTimeoutError::Disconnected => NmfError::Disconnected { rank: self.rank, peer: from },
        })
    }
}

// ---------------------------------------------------------------------------
// TCP

const HELLO_MAGIC: &[u8; 4] = b"NMFH";
const POLL: Duration = Duration::from_millis(5);

pub struct TcpTransport {
    rank: usize,
    timeout: Duration,
    peers: Vec<Option<TcpStream>>,
}

fn write_u64(s: &mut TcpStream, v: u64) -> std::io::Result<()> {
    s.write_all(&v.to_le_bytes())
}

fn read_u64(s: &mut TcpStream) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    s.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// `[magic][world u64][rank u64]`
fn write_hello(s: &mut TcpStream, world: usize, rank: usize) -> std::io::Result<()> {
    s.write_all(HELLO_MAGIC)?;
    write_u64(s, world as u64)?;
    write_u64(s, rank as u64)
}

fn read_hello(s: &mut TcpStream, me: usize, world: usize) -> Result<usize> {
    let mut magic = [0u8; 4];
    s.read_exact(&mut magic)?;
    let their_world = read_u64(s)? as usize;
    let their_rank = read_u64(s)? as usize;
    if &magic != HELLO_MAGIC || their_world != world || their_rank >= world || their_rank == me {
        return Err(NmfError::Protocol {
            rank: me,
            peer: their_rank,
            detail: format!("bad handshake: world {their_world} (expected {world})"),
        });
    }
    Ok(their_rank)
}

fn connect_retry(addr: SocketAddr, deadline: Instant, rank: usize, peer: usize, start: Instant) -> Result<TcpStream> {
    loop {
        match TcpStream::connect_timeout(&addr, Duration::from_secs(1)) {
            Ok(s) => return Ok(s),
            Err(_) if Instant::now() < deadline => thread::sleep(POLL),
            Err(_) => {
                return Err(NmfError::Timeout {
                    rank,
                    peer,
                    elapsed: start.elapsed(),
                })
            }
        }
    }
}

fn accept_until(listener: &TcpListener, deadline: Instant, rank: usize, start: Instant) -> Result<TcpStream> {
    listener.set_nonblocking(true)?;
    loop {
        match listener.accept() {
            Ok((s, _)) => {
                s.set_nonblocking(false)?;
                return Ok(s);
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock && Instant::now() < deadline => thread::sleep(POLL),
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                return Err(NmfError::Timeout {
                    rank,
                    peer: usize::MAX,
                    elapsed: start.elapsed(),
                })
            }
            Err(e) => return Err(e.into()),
        }
    }
}

impl TcpTransport {
    /// Rendezvous and full-mesh setup.
    ///
    /// Rank 0 listens on `addr`. Every other rank binds an ephemeral listener,
    /// connects to rank 0 and sends `hello + listener port`. Rank 0 answers each
    /// with the table of listener addresses; rank `j` then dials every rank
    /// `0 < i < j` and accepts from every rank above it.
    pub fn connect(rank: usize, size: usize, addr: SocketAddr, timeout: Duration) -> Result<Self> {
        let start = Instant::now();
        let deadline = start + timeout;
        let mut peers: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();

        if rank == 0 {
            let listener = TcpListener::bind(addr)?;
            let mut table = vec![addr; size];
            for _ in 1..size {
                let mut s = accept_until(&listener, deadline, rank, start)?;
                s.set_read_timeout(Some(timeout))?;
                let peer = read_hello(&mut s, rank, size)?;
                let port = read_u64(&mut s)? as u16;
                if peers[peer].is_some() {
                    return Err(NmfError::Protocol {
                        rank,
                        peer,
                        detail: "rank joined twice".into(),
                    });
                }
                table[peer] = SocketAddr::new(s.peer_addr()?.ip(), port);
                peers[peer] = Some(s);
            }
            for s in peers.iter_mut().flatten() {
                for a in &table {
                    let text = a.to_string();
                    write_u64(s, text.len() as u64)?;
                    s.write_all(text.as_bytes())?;
                }
            }
        } else {
            let mut root = connect_retry(addr, deadline, rank, 0, start)?;
            root.set_read_timeout(Some(timeout))?;
            let listener = TcpListener::bind(SocketAddr::new(root.local_addr()?.ip(), 0))?;
            write_hello(&mut root, size, rank)?;
            write_u64(&mut root, listener.local_addr()?.port() as u64)?;
            let mut table = Vec::with_capacity(size);
            for _ in 0..size {
                let bad = || NmfError::Protocol {
                    rank,
                    peer: 0,
                    detail: "bad address table".into(),
                };
                let len = read_u64(&mut root)? as usize;
                if len > 256 {
                    return Err(bad());
                }
                let mut text = vec![0u8; len];
                root.read_exact(&mut text)?;
                let a: SocketAddr = String::from_utf8_lossy(&text).parse().map_err(|_| bad())?;
                table.push(a);
            }
            peers[0] = Some(root);
            for (i, a) in table.iter().enumerate().take(rank).skip(1) {
                let mut s = connect_retry(*a, deadline, rank, i, start)?;
                write_hello(&mut s, size, rank)?;
                peers[i] = Some(s);
            }
            for _ in rank + 1..size {
                let mut s = accept_until(&listener, deadline, rank, start)?;
                s.set_read_timeout(Some(timeout))?;
                let peer = read_hello(&mut s, rank, size)?;
                if peer <= rank || peers[peer].is_some() {
                    return Err(NmfError::Protocol {
                        rank,
                        peer,
                        detail: "unexpected mesh connection".into(),
                    });
                }
                peers[peer] = Some(s);
            }
        }
        for s in peers.iter().flatten() {
            s.set_nodelay(true)?;
            s.set_read_timeout(Some(timeout))?;
        }
        Ok(Self { rank, timeout, peers })
    }

    fn stream(&mut self, peer: usize) -> Result<&mut TcpStream> {
        let rank = self.rank;
        self.peers
            .get_mut(peer)
            .and_then(Option::as_mut)
            .ok_or(NmfError::Disconnected { rank, peer })
    }
}

impl Transport for TcpTransport {
    fn kind(&self) -> TransportKind {
        TransportKind::Tcp
    }

    fn send(&mut self, to: usize, frame: &Frame) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + crate::io::encoded_len(&frame.matrix));
        buf.extend_from_slice(&frame.tag.to_le_bytes());
        buf.extend_from_slice(&(crate::io::encoded_len(&frame.matrix) as u64).to_le_bytes());
        encode_dmat(&frame.matrix, &mut buf);
        let rank = self.rank;
        self.stream(to)?.write_all(&buf).map_err(|e| match e.kind() {
            ErrorKind::BrokenPipe | ErrorKind::ConnectionReset => NmfError::Disconnected { rank, peer: to },
            _ => e.into(),
        })
    }

    fn recv(&mut self, from: usize) -> Result<Frame> {
        let start = Instant::now();
        let (rank, timeout) = (self.rank, self.timeout);
        let s = self.stream(from)?;
        let map = |e: std::io::Error| match e.kind() {
            ErrorKind::WouldBlock | ErrorKind::TimedOut => NmfError::Timeout {
                rank,
                peer: from,
                elapsed: start.elapsed().max(timeout),
            },
            ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset => NmfError::Disconnected { rank, peer: from },
            _ => e.into(),
        };
        let mut head = [0u8; 12];
        s.read_exact(&mut head).map_err(map)?;
        let tag = u32::from_le_bytes(head[..4].try_into().unwrap());
        let len = u64::from_le_bytes(head[4..].try_into().unwrap());
        let len = usize::try_from(len).map_err(|_| NmfError::Protocol {
            rank,
            peer: from,
            detail: format!("frame length {len} overflows"),
        })?;
        let mut body = vec![0u8; len];
        s.read_exact(&mut body).map_err(map)?;
        Ok(Frame {
            tag,
            matrix: decode_dmat(&body)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_ranks<T: Send + 'static>(
        worlds: Vec<CommWorld>,
        f: impl Fn(CommWorld) -> T + Send + Sync + Clone + 'static,
    ) -> Vec<T> {
        let handles: Vec<_> = worlds
            .into_iter()
            .map(|w| {
                let f = f.clone();
                thread::spawn(move || f(w))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    }

    #[test]
    fn tree_reduces_in_fixed_order() {
        for p in 1..=7 {
            let worlds = CommWorld::in_process(p, DEFAULT_TIMEOUT).unwrap();
            let out = run_ranks(worlds, |mut w| {
                let mut payload = [DenseMatrix::from_rows(&[&[(w.rank() + 1) as f64]]).unwrap()];
                w.allreduce_sum(&mut payload).unwrap();
                (payload[0].get(0, 0), w.stats().allreduce_calls)
            });
            let want = (p * (p + 1) / 2) as f64;
            assert!(out.iter().all(|&(v, calls)| v == want && calls == 1), "p={p}: {out:?}");
        }
    }

    #[test]
    fn solo_world_is_identity() {
        let mut w = CommWorld::in_process(1, DEFAULT_TIMEOUT).unwrap().pop().unwrap();
        let m = DenseMatrix::from_rows(&[&[1.5, -2.0]]).unwrap();
        let mut payload = [m.clone()];
        w.allreduce_sum(&mut payload).unwrap();
        assert_eq!(payload[0], m);
        assert_eq!(w.stats().bytes_sent, 0);
        w.barrier().unwrap();
    }

    #[test]
    fn timeout_names_the_rank() {
        let mut worlds = CommWorld::in_process(2, Duration::from_millis(50)).unwrap();
        let mut w0 = worlds.remove(0);
        let mut payload = [DenseMatrix::zeros(1, 1)];
        let err = w0.allreduce_sum(&mut payload).unwrap_err();
        match err {
            NmfError::Timeout { rank: 0, peer: 1, elapsed } => assert!(elapsed >= Duration::from_millis(50)),
            other => panic!("{other}"),
        }
    }
}

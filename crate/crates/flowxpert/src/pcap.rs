//! Classic pcap capture reading.
//!
//! Supports the four classic magics (microsecond/nanosecond resolution in
//! either byte order) and link types 1 (Ethernet II, with at most one
//! 802.1Q VLAN tag) and 101 (raw IP). Packets that cannot contribute flow
//! features are skipped and counted rather than failing the whole read:
//! non-IP frames, non-initial IPv4 fragments, and records truncated below
//! the transport header. A record header that runs past end-of-file is a
//! hard error carrying the number of packets successfully read.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

/// Classic pcap magics: microsecond and nanosecond variants.
pub const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
pub const MAGIC_NANOS: u32 = 0xa1b2_3c4d;

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW_IP: u32 = 101;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
// A record claiming more captured bytes than this is treated as file
// corruption rather than an allocation request.
const MAX_SNAP_LEN: u32 = 256 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("UnknownMagic: {0:#010x} is not a classic capture magic")]
    UnknownMagic(u32),
    #[error("UnsupportedLinkType: link type {0} (supported: 1 ethernet, 101 raw ip)")]
    UnsupportedLinkType(u32),
    #[error("TruncatedHeader: file ends inside the 24-byte global header")]
    TruncatedHeader,
    #[error("TruncatedRecord: capture ends mid-record after {packets_read} packets")]
    TruncatedRecord { packets_read: u64 },
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Big,
    Little,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeResolution {
    Micros,
    Nanos,
}

#[derive(Debug, Clone, Copy)]
pub struct CaptureHeader {
    pub byte_order: ByteOrder,
    pub resolution: TimeResolution,
    pub snap_len: u32,
    pub link_type: u32,
}

/// Transport protocol of a packet or flow. Anything that is not TCP or
/// UDP (ICMP, GRE, ...) is grouped as `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    Tcp,
    Udp,
    Other,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
            Protocol::Other => "OTHER",
        })
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TCP" => Ok(Protocol::Tcp),
            "UDP" => Ok(Protocol::Udp),
            "OTHER" => Ok(Protocol::Other),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

/// TCP flag byte (bits as on the wire; empty for non-TCP packets).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;
    pub const URG: u8 = 0x20;

    pub fn contains(self, mask: u8) -> bool {
        self.0 & mask != 0
    }
}

/// Packet capture timestamp with nanosecond precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp {
    nanos: i64,
}

impl Timestamp {
    pub fn from_nanos(nanos: i64) -> Self {
        Self { nanos }
    }

    pub fn from_capture(secs: u32, frac: u32, resolution: TimeResolution) -> Self {
        let frac_nanos = match resolution {
            TimeResolution::Micros => frac as i64 * 1_000,
            TimeResolution::Nanos => frac as i64,
        };
        Self {
            nanos: secs as i64 * 1_000_000_000 + frac_nanos,
        }
    }

    pub fn nanos(self) -> i64 {
        self.nanos
    }

    pub fn as_secs_f64(self) -> f64 {
        self.nanos as f64 / 1e9
    }

    /// Seconds from `earlier` to `self` (negative if `self` is earlier).
    pub fn secs_since(self, earlier: Timestamp) -> f64 {
        (self.nanos - earlier.nanos) as f64 / 1e9
    }

    pub fn saturating_add_secs(self, secs: f64) -> Timestamp {
        let delta = (secs * 1e9).round();
        let delta = if delta >= i64::MAX as f64 {
            i64::MAX
        } else {
            delta as i64
        };
        Timestamp {
            nanos: self.nanos.saturating_add(delta),
        }
    }
}

/// One decoded IP packet, reduced to the fields the flow stage needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketRecord {
    pub ts: Timestamp,
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    /// Zero when the transport has no ports (`Protocol::Other`).
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    pub tcp_flags: TcpFlags,
    /// Original length on the wire (`orig_len`), not the captured length.
    pub wire_len: u32,
}

/// Why a record was skipped instead of decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// Frame does not carry IPv4 or IPv6.
    NonIp,
    /// Non-initial IPv4 fragment (no transport header present).
    Fragment,
    /// Captured bytes end before the transport header we need.
    Truncated,
}

/// Per-capture ingest counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub packets_read: u64,
    pub skipped_non_ip: u64,
    pub skipped_fragment: u64,
    pub skipped_truncated: u64,
}

impl IngestStats {
    pub fn skipped_total(&self) -> u64 {
        self.skipped_non_ip + self.skipped_fragment + self.skipped_truncated
    }

    fn count_skip(&mut self, reason: SkipReason) {
        match reason {
            SkipReason::NonIp => self.skipped_non_ip += 1,
            SkipReason::Fragment => self.skipped_fragment += 1,
            SkipReason::Truncated => self.skipped_truncated += 1,
        }
    }
}

/// Streaming reader over one capture file.
pub struct CaptureReader<R> {
    src: R,
    header: CaptureHeader,
    stats: IngestStats,
    buf: Vec<u8>,
}

impl CaptureReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, PcapError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> CaptureReader<R> {
    pub fn new(mut src: R) -> Result<Self, PcapError> {
        let mut raw = [0u8; GLOBAL_HEADER_LEN];
        match read_all(&mut src, &mut raw)? {
            Some(n) if n == GLOBAL_HEADER_LEN => {}
            _ => return Err(PcapError::TruncatedHeader),
        }

        let magic_be = u32::from_be_bytes(raw[0..4].try_into().unwrap());
        let magic_le = u32::from_le_bytes(raw[0..4].try_into().unwrap());
        let (byte_order, resolution) = match (magic_be, magic_le) {
            (MAGIC_MICROS, _) => (ByteOrder::Big, TimeResolution::Micros),
            (MAGIC_NANOS, _) => (ByteOrder::Big, TimeResolution::Nanos),
            (_, MAGIC_MICROS) => (ByteOrder::Little, TimeResolution::Micros),
            (_, MAGIC_NANOS) => (ByteOrder::Little, TimeResolution::Nanos),
            _ => return Err(PcapError::UnknownMagic(magic_le)),
        };
        let read_u32 = |bytes: &[u8]| -> u32 {
            let arr: [u8; 4] = bytes.try_into().unwrap();
            match byte_order {
                ByteOrder::Big => u32::from_be_bytes(arr),
                ByteOrder::Little => u32::from_le_bytes(arr),
            }
        };
        let snap_len = read_u32(&raw[16..20]);
        let link_type = read_u32(&raw[20..24]);
        if link_type != LINKTYPE_ETHERNET && link_type != LINKTYPE_RAW_IP {
            return Err(PcapError::UnsupportedLinkType(link_type));
        }

        Ok(Self {
            src,
            header: CaptureHeader {
                byte_order,
                resolution,
                snap_len,
                link_type,
            },
            stats: IngestStats::default(),
            buf: Vec::new(),
        })
    }

    pub fn header(&self) -> &CaptureHeader {
        &self.header
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    /// Next decodable packet, or `None` at clean end-of-file. Skipped
    /// records are counted in [`Self::stats`] and never surface here.
    pub fn next_packet(&mut self) -> Result<Option<PacketRecord>, PcapError> {
        loop {
            let mut rec = [0u8; RECORD_HEADER_LEN];
            match read_all(&mut self.src, &mut rec)? {
                None => return Ok(None),
                Some(n) if n < RECORD_HEADER_LEN => {
                    return Err(PcapError::TruncatedRecord {
                        packets_read: self.stats.packets_read,
                    })
                }
                Some(_) => {}
            }

            let field = |range: std::ops::Range<usize>| -> u32 {
                let arr: [u8; 4] = rec[range].try_into().unwrap();
                match self.header.byte_order {
                    ByteOrder::Big => u32::from_be_bytes(arr),
                    ByteOrder::Little => u32::from_le_bytes(arr),
                }
            };
            let ts_sec = field(0..4);
            let ts_frac = field(4..8);
            let incl_len = field(8..12);
            let orig_len = field(12..16);

            if incl_len > MAX_SNAP_LEN {
                return Err(PcapError::TruncatedRecord {
                    packets_read: self.stats.packets_read,
                });
            }
            self.buf.resize(incl_len as usize, 0);
            match read_all(&mut self.src, &mut self.buf)? {
                Some(n) if n == incl_len as usize => {}
                _ => {
                    return Err(PcapError::TruncatedRecord {
                        packets_read: self.stats.packets_read,
                    })
                }
            }

            let ts = Timestamp::from_capture(ts_sec, ts_frac, self.header.resolution);
            match decode_packet(self.header.link_type, &self.buf, ts, orig_len) {
                Ok(pkt) => {
                    self.stats.packets_read += 1;
                    return Ok(Some(pkt));
                }
                Err(reason) => self.stats.count_skip(reason),
            }
        }
    }
}

impl<R: Read> Iterator for CaptureReader<R> {
    type Item = Result<PacketRecord, PcapError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_packet().transpose()
    }
}

/// Read until `buf` is full or EOF. `None` means EOF before the first
/// byte; `Some(n)` with `n < buf.len()` means a partial tail.
fn read_all<R: Read>(src: &mut R, buf: &mut [u8]) -> std::io::Result<Option<usize>> {
    let mut filled = 0;
    while filled < buf.len() {
        match src.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    if filled == 0 && !buf.is_empty() {
        Ok(None)
    } else {
        Ok(Some(filled))
    }
}

/// Decode one captured frame into a packet record.
pub fn decode_packet(
    link_type: u32,
    data: &[u8],
    ts: Timestamp,
    orig_len: u32,
) -> Result<PacketRecord, SkipReason> {
    let ip = match link_type {
        LINKTYPE_ETHERNET => strip_ethernet(data)?,
        LINKTYPE_RAW_IP => data,
        _ => unreachable!("link type validated at open"),
    };
    decode_ip(ip, ts, orig_len)
}

/// Strip the Ethernet II header (and at most one 802.1Q tag), returning
/// the IP payload.
fn strip_ethernet(data: &[u8]) -> Result<&[u8], SkipReason> {
    if data.len() < 14 {
        return Err(SkipReason::Truncated);
    }
    let mut ethertype = u16::from_be_bytes([data[12], data[13]]);
    let mut offset = 14;
    if ethertype == 0x8100 {
        if data.len() < 18 {
            return Err(SkipReason::Truncated);
        }
        ethertype = u16::from_be_bytes([data[16], data[17]]);
        offset = 18;
    }
    match ethertype {
        0x0800 | 0x86DD => Ok(&data[offset..]),
        _ => Err(SkipReason::NonIp),
    }
}

fn decode_ip(ip: &[u8], ts: Timestamp, orig_len: u32) -> Result<PacketRecord, SkipReason> {
    if ip.is_empty() {
        return Err(SkipReason::Truncated);
    }
    match ip[0] >> 4 {
        4 => decode_ipv4(ip, ts, orig_len),
        6 => decode_ipv6(ip, ts, orig_len),
        _ => Err(SkipReason::NonIp),
    }
}

fn decode_ipv4(ip: &[u8], ts: Timestamp, orig_len: u32) -> Result<PacketRecord, SkipReason> {
    if ip.len() < 20 {
        return Err(SkipReason::Truncated);
    }
    let ihl = (ip[0] & 0x0F) as usize * 4;
    if ihl < 20 || ip.len() < ihl {
        return Err(SkipReason::Truncated);
    }
    let frag = u16::from_be_bytes([ip[6], ip[7]]);
    if frag & 0x1FFF != 0 {
        // Later fragment: transport header lives in the first fragment only.
        return Err(SkipReason::Fragment);
    }
    let protocol_num = ip[9];
    let src_ip = IpAddr::V4(Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]));
    let dst_ip = IpAddr::V4(Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]));
    decode_transport(protocol_num, &ip[ihl..], src_ip, dst_ip, ts, orig_len)
}

fn decode_ipv6(ip: &[u8], ts: Timestamp, orig_len: u32) -> Result<PacketRecord, SkipReason> {
    if ip.len() < 40 {
        return Err(SkipReason::Truncated);
    }
    // Next-header is taken at face value; extension-header chains land in
    // Protocol::Other with zero ports, like any other unknown transport.
    let protocol_num = ip[6];
    let mut src = [0u8; 16];
    let mut dst = [0u8; 16];
    src.copy_from_slice(&ip[8..24]);
    dst.copy_from_slice(&ip[24..40]);
    let src_ip = IpAddr::V6(Ipv6Addr::from(src));
    let dst_ip = IpAddr::V6(Ipv6Addr::from(dst));
    decode_transport(protocol_num, &ip[40..], src_ip, dst_ip, ts, orig_len)
}

fn decode_transport(
    protocol_num: u8,
    payload: &[u8],
    src_ip: IpAddr,
    dst_ip: IpAddr,
    ts: Timestamp,
    orig_len: u32,
) -> Result<PacketRecord, SkipReason> {
    let (protocol, src_port, dst_port, tcp_flags) = match protocol_num {
        6 => {
            if payload.len() < 14 {
                return Err(SkipReason::Truncated);
            }
            (
                Protocol::Tcp,
                u16::from_be_bytes([payload[0], payload[1]]),
                u16::from_be_bytes([payload[2], payload[3]]),
                TcpFlags(payload[13]),
            )
        }
        17 => {
            if payload.len() < 4 {
                return Err(SkipReason::Truncated);
            }
            (
                Protocol::Udp,
                u16::from_be_bytes([payload[0], payload[1]]),
                u16::from_be_bytes([payload[2], payload[3]]),
                TcpFlags::default(),
            )
        }
        _ => (Protocol::Other, 0, 0, TcpFlags::default()),
    };
    Ok(PacketRecord {
        ts,
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        protocol,
        tcp_flags,
        wire_len: orig_len,
    })
}

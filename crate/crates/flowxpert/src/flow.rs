//! Bidirectional flow aggregation with per-host context counters.
//!
//! Packets sharing a canonical 5-tuple (the two `(ip, port)` endpoints
//! ordered lexicographically, plus protocol) belong to one flow. The flow
//! is oriented by its initiator: the source of the first packet seen. A
//! flow ends when the gap since its last packet exceeds the inactivity
//! timeout, when its total age exceeds the active timeout (both strictly),
//! or when the capture ends.
//!
//! Alongside per-flow shape features, each emitted record carries context
//! features snapshotted from the initiator host at emission time: distinct
//! source ports, destination IPs and destination ports used across flows
//! that host initiated, and its flow-initiation rate. These counters only
//! grow while a host stays active, which is what separates a scanner's
//! hundredth probe from a client's handful of connections even when the
//! individual flows look alike.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pcap::{PacketRecord, Protocol, TcpFlags, Timestamp};
use crate::util::fmt_g9;

/// Flow session parameters, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// A gap strictly greater than this ends the flow.
    pub inactivity_timeout: f64,
    /// A flow strictly older than this ends even while active.
    pub active_timeout: f64,
    /// Lower bound on rate denominators, so instantaneous flows get
    /// finite rates instead of dividing by zero.
    pub duration_floor: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            inactivity_timeout: 120.0,
            active_timeout: 3600.0,
            duration_floor: 1e-3,
        }
    }
}

/// Canonical bidirectional flow identity: endpoint pairs ordered so both
/// packet directions map to the same key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    pub endpoint_a: (IpAddr, u16),
    pub endpoint_b: (IpAddr, u16),
    pub protocol: Protocol,
}

impl FlowKey {
    pub fn canonical(
        src_ip: IpAddr,
        src_port: u16,
        dst_ip: IpAddr,
        dst_port: u16,
        protocol: Protocol,
    ) -> Self {
        let src = (src_ip, src_port);
        let dst = (dst_ip, dst_port);
        if src <= dst {
            Self {
                endpoint_a: src,
                endpoint_b: dst,
                protocol,
            }
        } else {
            Self {
                endpoint_a: dst,
                endpoint_b: src,
                protocol,
            }
        }
    }
}

/// Flow identity in initiator orientation, kept for labeling and reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMeta {
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    /// Seconds since the capture epoch of the flow's earliest packet.
    pub first_ts: f64,
}

impl FlowMeta {
    /// Placeholder identity for records synthesized outside a capture.
    pub fn unspecified() -> Self {
        Self {
            src_ip: IpAddr::V4(std::net::Ipv4Addr::UNSPECIFIED),
            dst_ip: IpAddr::V4(std::net::Ipv4Addr::UNSPECIFIED),
            src_port: 0,
            dst_port: 0,
            first_ts: 0.0,
        }
    }
}

pub const CONTINUOUS_FEATURE_NAMES: [&str; 12] = [
    "flow_dur",
    "pkt_num",
    "pkts_per_sec",
    "iat_mean",
    "iat_std",
    "syn_num",
    "fin_num",
    "rst_num",
    "num_s_port",
    "num_d_ip",
    "num_d_port",
    "con_per_sec",
];

pub const FLOW_CSV_HEADER: &str = "protocol,flow_dur,pkt_num,pkts_per_sec,iat_mean,iat_std,\
syn_num,fin_num,rst_num,num_s_port,num_d_ip,num_d_port,con_per_sec,\
src_ip,dst_ip,src_port,dst_port,first_ts";

/// One emitted flow: the categorical protocol, twelve non-negative
/// continuous features, and identity metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatureRecord {
    pub protocol: Protocol,
    pub flow_dur: f64,
    pub pkt_num: u64,
    pub pkts_per_sec: f64,
    pub iat_mean: f64,
    pub iat_std: f64,
    pub syn_num: u64,
    pub fin_num: u64,
    pub rst_num: u64,
    pub num_s_port: u64,
    pub num_d_ip: u64,
    pub num_d_port: u64,
    pub con_per_sec: f64,
    pub meta: FlowMeta,
}

impl RawFeatureRecord {
    /// The twelve continuous features in CSV column order.
    pub fn continuous(&self) -> [f64; 12] {
        [
            self.flow_dur,
            self.pkt_num as f64,
            self.pkts_per_sec,
            self.iat_mean,
            self.iat_std,
            self.syn_num as f64,
            self.fin_num as f64,
            self.rst_num as f64,
            self.num_s_port as f64,
            self.num_d_ip as f64,
            self.num_d_port as f64,
            self.con_per_sec,
        ]
    }

    pub fn to_csv_row(&self) -> String {
        let mut row = String::new();
        let _ = write!(
            row,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.protocol,
            fmt_g9(self.flow_dur),
            self.pkt_num,
            fmt_g9(self.pkts_per_sec),
            fmt_g9(self.iat_mean),
            fmt_g9(self.iat_std),
            self.syn_num,
            self.fin_num,
            self.rst_num,
            self.num_s_port,
            self.num_d_ip,
            self.num_d_port,
            fmt_g9(self.con_per_sec),
            self.meta.src_ip,
            self.meta.dst_ip,
            self.meta.src_port,
            self.meta.dst_port,
            fmt_g9(self.meta.first_ts),
        );
        row
    }
}

#[derive(Debug, Error)]
pub enum FlowCsvError {
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("MalformedCsv: bad header: {0}")]
    BadHeader(String),
    #[error("MalformedCsv: line {line}: {detail}")]
    BadRow { line: usize, detail: String },
}

/// Write flow records as CSV, optionally with a trailing label column.
pub fn write_flow_csv<W: Write>(
    out: &mut W,
    records: &[RawFeatureRecord],
    labels: Option<&[String]>,
) -> std::io::Result<()> {
    if let Some(labels) = labels {
        assert_eq!(labels.len(), records.len(), "one label per record");
        writeln!(out, "{FLOW_CSV_HEADER},label")?;
        for (r, l) in records.iter().zip(labels) {
            writeln!(out, "{},{}", r.to_csv_row(), l)?;
        }
    } else {
        writeln!(out, "{FLOW_CSV_HEADER}")?;
        for r in records {
            writeln!(out, "{}", r.to_csv_row())?;
        }
    }
    Ok(())
}

/// Read a flow CSV produced by [`write_flow_csv`]. Returns the records
/// and, when the file carries the optional trailing column, the raw
/// label strings.
pub fn read_flow_csv<R: Read>(
    src: R,
) -> Result<(Vec<RawFeatureRecord>, Option<Vec<String>>), FlowCsvError> {
    let mut lines = BufReader::new(src).lines();
    let header = lines
        .next()
        .ok_or_else(|| FlowCsvError::BadHeader("empty input".to_string()))??;
    let labeled = if header == FLOW_CSV_HEADER {
        false
    } else if header == format!("{FLOW_CSV_HEADER},label") {
        true
    } else {
        return Err(FlowCsvError::BadHeader(format!(
            "expected the flow feature header, got {header:?}"
        )));
    };
    let want = if labeled { 19 } else { 18 };

    let mut records = Vec::new();
    let mut labels = if labeled { Some(Vec::new()) } else { None };
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != want {
            return Err(FlowCsvError::BadRow {
                line: lineno,
                detail: format!("expected {want} fields, got {}", fields.len()),
            });
        }
        let bad = |what: &str| FlowCsvError::BadRow {
            line: lineno,
            detail: format!("bad {what}"),
        };
        let real = |i: usize, what: &str| -> Result<f64, FlowCsvError> {
            fields[i].parse::<f64>().map_err(|_| bad(what))
        };
        let count = |i: usize, what: &str| -> Result<u64, FlowCsvError> {
            fields[i].parse::<u64>().map_err(|_| bad(what))
        };
        records.push(RawFeatureRecord {
            protocol: fields[0].parse().map_err(|_| bad("protocol"))?,
            flow_dur: real(1, "flow_dur")?,
            pkt_num: count(2, "pkt_num")?,
            pkts_per_sec: real(3, "pkts_per_sec")?,
            iat_mean: real(4, "iat_mean")?,
            iat_std: real(5, "iat_std")?,
            syn_num: count(6, "syn_num")?,
            fin_num: count(7, "fin_num")?,
            rst_num: count(8, "rst_num")?,
            num_s_port: count(9, "num_s_port")?,
            num_d_ip: count(10, "num_d_ip")?,
            num_d_port: count(11, "num_d_port")?,
            con_per_sec: real(12, "con_per_sec")?,
            meta: FlowMeta {
                src_ip: fields[13].parse().map_err(|_| bad("src_ip"))?,
                dst_ip: fields[14].parse().map_err(|_| bad("dst_ip"))?,
                src_port: fields[15].parse().map_err(|_| bad("src_port"))?,
                dst_port: fields[16].parse().map_err(|_| bad("dst_port"))?,
                first_ts: real(17, "first_ts")?,
            },
        });
        if let Some(labels) = labels.as_mut() {
            labels.push(fields[18].to_string());
        }
    }
    Ok((records, labels))
}

pub fn read_flow_csv_path(
    path: &Path,
) -> Result<(Vec<RawFeatureRecord>, Option<Vec<String>>), FlowCsvError> {
    read_flow_csv(std::fs::File::open(path)?)
}

struct LiveFlow {
    key: FlowKey,
    // Initiator orientation.
    src_ip: IpAddr,
    dst_ip: IpAddr,
    src_port: u16,
    dst_port: u16,
    first_ts: Timestamp,
    last_ts: Timestamp,
    prev_arrival: Timestamp,
    pkt_num: u64,
    syn_num: u64,
    fin_num: u64,
    rst_num: u64,
    gap_sum: f64,
    gap_sum_sq: f64,
}

impl LiveFlow {
    fn open(pkt: &PacketRecord, key: FlowKey) -> Self {
        Self {
            key,
            src_ip: pkt.src_ip,
            dst_ip: pkt.dst_ip,
            src_port: pkt.src_port,
            dst_port: pkt.dst_port,
            first_ts: pkt.ts,
            last_ts: pkt.ts,
            prev_arrival: pkt.ts,
            pkt_num: 0,
            syn_num: 0,
            fin_num: 0,
            rst_num: 0,
            gap_sum: 0.0,
            gap_sum_sq: 0.0,
        }
    }

    fn add(&mut self, pkt: &PacketRecord) {
        if self.pkt_num > 0 {
            // Gaps follow arrival order; magnitudes keep reordered
            // captures from producing negative timing features.
            let gap = pkt.ts.secs_since(self.prev_arrival).abs();
            self.gap_sum += gap;
            self.gap_sum_sq += gap * gap;
        }
        self.pkt_num += 1;
        self.prev_arrival = pkt.ts;
        self.first_ts = self.first_ts.min(pkt.ts);
        self.last_ts = self.last_ts.max(pkt.ts);
        if pkt.tcp_flags.contains(TcpFlags::SYN) {
            self.syn_num += 1;
        }
        if pkt.tcp_flags.contains(TcpFlags::FIN) {
            self.fin_num += 1;
        }
        if pkt.tcp_flags.contains(TcpFlags::RST) {
            self.rst_num += 1;
        }
    }

    fn deadline(&self, cfg: &FlowConfig) -> i64 {
        let by_gap = self.last_ts.saturating_add_secs(cfg.inactivity_timeout);
        let by_age = self.first_ts.saturating_add_secs(cfg.active_timeout);
        by_gap.nanos().min(by_age.nanos())
    }
}

struct HostContext {
    src_ports: HashSet<u16>,
    dst_ips: HashSet<IpAddr>,
    dst_ports: HashSet<u16>,
    flows_initiated: u64,
    first_seen: Timestamp,
}

/// Streaming packet-to-flow aggregator.
pub struct FlowTable {
    cfg: FlowConfig,
    flows: HashMap<FlowKey, LiveFlow>,
    contexts: HashMap<IpAddr, HostContext>,
    // Lazy-deletion expiry queue: stale entries are skipped when their
    // deadline no longer matches the flow's current one.
    expiry: BinaryHeap<Reverse<(i64, FlowKey)>>,
}

impl FlowTable {
    pub fn new(cfg: FlowConfig) -> Self {
        Self {
            cfg,
            flows: HashMap::new(),
            contexts: HashMap::new(),
            expiry: BinaryHeap::new(),
        }
    }

    pub fn active_flows(&self) -> usize {
        self.flows.len()
    }

    /// Feed one packet. Returns the flows this packet's timestamp expired,
    /// ordered by (first_ts, key); usually empty.
    pub fn assign(&mut self, pkt: &PacketRecord) -> Vec<RawFeatureRecord> {
        let expired = self.expire_before(pkt.ts);

        let key = FlowKey::canonical(
            pkt.src_ip,
            pkt.src_port,
            pkt.dst_ip,
            pkt.dst_port,
            pkt.protocol,
        );
        let flow = self.flows.entry(key).or_insert_with(|| {
            let ctx = self
                .contexts
                .entry(pkt.src_ip)
                .or_insert_with(|| HostContext {
                    src_ports: HashSet::new(),
                    dst_ips: HashSet::new(),
                    dst_ports: HashSet::new(),
                    flows_initiated: 0,
                    first_seen: pkt.ts,
                });
            ctx.src_ports.insert(pkt.src_port);
            ctx.dst_ips.insert(pkt.dst_ip);
            ctx.dst_ports.insert(pkt.dst_port);
            ctx.flows_initiated += 1;
            LiveFlow::open(pkt, key)
        });
        flow.add(pkt);
        self.expiry.push(Reverse((flow.deadline(&self.cfg), key)));

        expired
    }

    /// Flush all remaining flows (end of capture), ordered by
    /// (first_ts, key), and reset the table including host contexts.
    pub fn finish(&mut self) -> Vec<RawFeatureRecord> {
        let mut remaining: Vec<LiveFlow> = self.flows.drain().map(|(_, f)| f).collect();
        remaining.sort_by_key(|f| (f.first_ts, f.key));
        let records = remaining.iter().map(|f| self.emit(f)).collect();
        self.expiry.clear();
        self.contexts.clear();
        records
    }

    fn expire_before(&mut self, now: Timestamp) -> Vec<RawFeatureRecord> {
        let mut expired: Vec<LiveFlow> = Vec::new();
        while let Some(&Reverse((deadline, key))) = self.expiry.peek() {
            if deadline >= now.nanos() {
                break;
            }
            self.expiry.pop();
            let current = self.flows.get(&key).map(|f| f.deadline(&self.cfg));
            if current == Some(deadline) {
                expired.push(self.flows.remove(&key).expect("flow present"));
            }
        }
        if expired.is_empty() {
            return Vec::new();
        }
        expired.sort_by_key(|f| (f.first_ts, f.key));
        expired.iter().map(|f| self.emit(f)).collect()
    }

    fn emit(&self, flow: &LiveFlow) -> RawFeatureRecord {
        let floor = self.cfg.duration_floor;
        let flow_dur = flow.last_ts.secs_since(flow.first_ts);
        let pkts_per_sec = flow.pkt_num as f64 / flow_dur.max(floor);
        let gaps = flow.pkt_num.saturating_sub(1);
        let (iat_mean, iat_std) = if gaps == 0 {
            (0.0, 0.0)
        } else {
            let mean = flow.gap_sum / gaps as f64;
            let var = (flow.gap_sum_sq / gaps as f64 - mean * mean).max(0.0);
            (mean, var.sqrt())
        };

        let ctx = self
            .contexts
            .get(&flow.src_ip)
            .expect("initiator context created at flow open");
        let elapsed = flow.last_ts.secs_since(ctx.first_seen);
        let con_per_sec = ctx.flows_initiated as f64 / elapsed.max(floor);

        RawFeatureRecord {
            protocol: flow.key.protocol,
            flow_dur,
            pkt_num: flow.pkt_num,
            pkts_per_sec,
            iat_mean,
            iat_std,
            syn_num: flow.syn_num,
            fin_num: flow.fin_num,
            rst_num: flow.rst_num,
            num_s_port: ctx.src_ports.len() as u64,
            num_d_ip: ctx.dst_ips.len() as u64,
            num_d_port: ctx.dst_ports.len() as u64,
            con_per_sec,
            meta: FlowMeta {
                src_ip: flow.src_ip,
                dst_ip: flow.dst_ip,
                src_port: flow.src_port,
                dst_port: flow.dst_port,
                first_ts: flow.first_ts.as_secs_f64(),
            },
        }
    }
}

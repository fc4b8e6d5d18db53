//! Shared builders for the integration suites: classic pcap byte
//! assembly and a synthetic labeled flow corpus with tight behavioral
//! archetypes (normal clients vs scan-like sources).

#![allow(dead_code)] // each suite uses its own subset

use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowxpert::flow::{write_flow_csv, FlowMeta, RawFeatureRecord};
use flowxpert::pcap::Protocol;
use flowxpert::preprocess::{Class, FeatureVector, FEATURE_DIM};

// ---- pcap assembly -------------------------------------------------------

/// Builds little-endian, microsecond-resolution, Ethernet-linktype
/// captures byte by byte.
pub struct PcapWriter {
    bytes: Vec<u8>,
}

impl PcapWriter {
    pub fn new_ethernet() -> Self {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0xa1b2_c3d4u32.to_le_bytes()); // micros magic
        bytes.extend_from_slice(&2u16.to_le_bytes()); // version major
        bytes.extend_from_slice(&4u16.to_le_bytes()); // version minor
        bytes.extend_from_slice(&0i32.to_le_bytes()); // thiszone
        bytes.extend_from_slice(&0u32.to_le_bytes()); // sigfigs
        bytes.extend_from_slice(&65535u32.to_le_bytes()); // snaplen
        bytes.extend_from_slice(&1u32.to_le_bytes()); // linktype ethernet
        Self { bytes }
    }

    fn push_record(&mut self, sec: u32, usec: u32, frame: &[u8]) {
        self.bytes.extend_from_slice(&sec.to_le_bytes());
        self.bytes.extend_from_slice(&usec.to_le_bytes());
        self.bytes.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        self.bytes.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        self.bytes.extend_from_slice(frame);
    }

    pub fn push_tcp(
        &mut self,
        (sec, usec): (u32, u32),
        src: [u8; 4],
        sport: u16,
        dst: [u8; 4],
        dport: u16,
        flags: u8,
    ) {
        let mut tcp = Vec::with_capacity(20);
        tcp.extend_from_slice(&sport.to_be_bytes());
        tcp.extend_from_slice(&dport.to_be_bytes());
        tcp.extend_from_slice(&1u32.to_be_bytes()); // seq
        tcp.extend_from_slice(&0u32.to_be_bytes()); // ack
        tcp.push(5 << 4); // data offset 5 words
        tcp.push(flags);
        tcp.extend_from_slice(&1024u16.to_be_bytes()); // window
        tcp.extend_from_slice(&0u16.to_be_bytes()); // checksum
        tcp.extend_from_slice(&0u16.to_be_bytes()); // urgent
        let frame = eth_ipv4(6, src, dst, &tcp);
        self.push_record(sec, usec, &frame);
    }

    pub fn push_udp(
        &mut self,
        (sec, usec): (u32, u32),
        src: [u8; 4],
        sport: u16,
        dst: [u8; 4],
        dport: u16,
    ) {
        let payload = [0u8; 4];
        let mut udp = Vec::with_capacity(8 + payload.len());
        udp.extend_from_slice(&sport.to_be_bytes());
        udp.extend_from_slice(&dport.to_be_bytes());
        udp.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
        udp.extend_from_slice(&0u16.to_be_bytes()); // checksum
        udp.extend_from_slice(&payload);
        let frame = eth_ipv4(17, src, dst, &udp);
        self.push_record(sec, usec, &frame);
    }

    pub fn bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn write_to(self, path: &Path) {
        std::fs::write(path, self.bytes).expect("write pcap");
    }
}

/// Ethernet II frame around an IPv4 packet with the given transport.
fn eth_ipv4(ip_proto: u8, src: [u8; 4], dst: [u8; 4], transport: &[u8]) -> Vec<u8> {
    let total_len = (20 + transport.len()) as u16;
    let mut frame = Vec::with_capacity(14 + total_len as usize);
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]); // dst mac
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]); // src mac
    frame.extend_from_slice(&0x0800u16.to_be_bytes()); // ethertype ipv4
    frame.push(0x45); // version 4, ihl 5
    frame.push(0); // tos
    frame.extend_from_slice(&total_len.to_be_bytes());
    frame.extend_from_slice(&0u16.to_be_bytes()); // id
    frame.extend_from_slice(&0x4000u16.to_be_bytes()); // DF, offset 0
    frame.push(64); // ttl
    frame.push(ip_proto);
    frame.extend_from_slice(&0u16.to_be_bytes()); // header checksum
    frame.extend_from_slice(&src);
    frame.extend_from_slice(&dst);
    frame.extend_from_slice(transport);
    frame
}

/// The golden three-packet capture: one TCP flow with packets at
/// t = 0, 0.1, 0.3 seconds.
pub fn golden_three_packet_pcap() -> Vec<u8> {
    let mut w = PcapWriter::new_ethernet();
    let client = [10, 0, 0, 2];
    let server = [10, 0, 0, 1];
    w.push_tcp((0, 0), client, 5000, server, 80, 0x02); // SYN
    w.push_tcp((0, 100_000), server, 80, client, 5000, 0x12); // SYN+ACK
    w.push_tcp((0, 300_000), client, 5000, server, 80, 0x10); // ACK
    w.bytes()
}

/// A scan capture: one source probing `ports` distinct destination ports
/// on one target, one SYN per probe, `gap_usec` apart starting at
/// `start_sec`. Each probe is its own single-packet flow.
pub fn scan_pcap(start_sec: u32, gap_usec: u32, ports: u16) -> Vec<u8> {
    let mut w = PcapWriter::new_ethernet();
    let scanner = [203, 0, 113, 7];
    let target = [10, 0, 0, 1];
    for i in 0..ports {
        let total = i as u64 * gap_usec as u64;
        let sec = start_sec + (total / 1_000_000) as u32;
        let usec = (total % 1_000_000) as u32;
        w.push_tcp((sec, usec), scanner, 40000 + i, target, 1 + i, 0x02);
    }
    w.bytes()
}

// ---- synthetic corpus ----------------------------------------------------

/// Source addresses used by the malicious archetypes; the label spec
/// marks exactly these as malicious.
pub const SCANNER_IPS: [[u8; 4]; 6] = [
    [203, 0, 113, 7],
    [203, 0, 113, 8],
    [198, 51, 100, 4],
    [198, 51, 100, 5],
    [192, 0, 2, 66],
    [192, 0, 2, 67],
];

fn v4(octets: [u8; 4]) -> IpAddr {
    IpAddr::V4(Ipv4Addr::from(octets))
}

/// Write a rule file classifying every scanner source as malicious.
pub fn write_label_spec(path: &Path) {
    let mut text = String::from("src_ip,dst_ip,src_port,dst_port,protocol,label\n");
    for ip in SCANNER_IPS {
        text.push_str(&format!("{},*,*,*,*,malicious\n", Ipv4Addr::from(ip)));
    }
    std::fs::write(path, text).expect("write label spec");
}

struct Jitter<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl Jitter<'_> {
    /// Uniform in `center ± half`; bounded so archetypes cannot overlap.
    fn real(&mut self, center: f64, half: f64) -> f64 {
        if half == 0.0 {
            center
        } else {
            self.rng.gen_range(center - half..=center + half)
        }
    }

    fn count(&mut self, base: u64, extra: u64) -> u64 {
        base + self.rng.gen_range(0..=extra)
    }
}

/// One flow record from one behavioral archetype. Archetypes are tight:
/// after min-max scaling, within-archetype spread stays well inside a
/// 0.3 neighborhood while distinct archetypes sit much farther apart,
/// so density clustering on a small sample recovers them.
fn archetype_record(kind: usize, j: &mut Jitter, meta: FlowMeta) -> (RawFeatureRecord, Class) {
    // (protocol, dur±, pkt base/extra, syn, fin, rst, s_port, d_ip,
    //  d_port base/extra, con±, class)
    let (protocol, dur, pkt, syn, fin, rst, s_port, d_ip, d_port, con, class) = match kind {
        // Benign: web fetches, dns lookups, ssh sessions, media streams,
        // icmp diagnostics.
        0 => (Protocol::Tcp, (2.0, 0.4), (40, 16), 2, 2, 0, (4, 2), (3, 2), (2, 2), (0.2, 0.05), Class::Benign),
        1 => (Protocol::Udp, (0.05, 0.02), (2, 0), 0, 0, 0, (3, 1), (2, 1), (1, 1), (0.5, 0.1), Class::Benign),
        2 => (Protocol::Tcp, (60.0, 10.0), (300, 100), 1, 1, 0, (1, 1), (1, 1), (1, 1), (0.02, 0.01), Class::Benign),
        3 => (Protocol::Udp, (30.0, 5.0), (1500, 400), 0, 0, 0, (1, 1), (1, 1), (1, 0), (0.05, 0.02), Class::Benign),
        4 => (Protocol::Other, (1.0, 0.3), (5, 2), 0, 0, 0, (1, 0), (2, 1), (1, 0), (0.1, 0.03), Class::Benign),
        // Malicious: vertical port scan, horizontal sweep, udp probing.
        5 => (Protocol::Tcp, (0.0, 0.0), (1, 1), 1, 0, 1, (500, 100), (2, 2), (800, 300), (80.0, 5.0), Class::Malicious),
        6 => (Protocol::Tcp, (0.0, 0.0), (1, 0), 1, 0, 0, (2, 1), (600, 200), (2, 1), (120.0, 5.0), Class::Malicious),
        _ => (Protocol::Udp, (0.0, 0.0), (1, 0), 0, 0, 0, (200, 50), (3, 2), (300, 80), (40.0, 3.0), Class::Malicious),
    };

    let flow_dur = j.real(dur.0, dur.1).max(0.0);
    let pkt_num = j.count(pkt.0, pkt.1);
    let pkts_per_sec = pkt_num as f64 / flow_dur.max(1e-3);
    let (iat_mean, iat_std) = if pkt_num > 1 && flow_dur > 0.0 {
        let mean = flow_dur / (pkt_num - 1) as f64;
        (mean, mean * j.real(0.15, 0.1))
    } else {
        (0.0, 0.0)
    };
    let record = RawFeatureRecord {
        protocol,
        flow_dur,
        pkt_num,
        pkts_per_sec,
        iat_mean,
        iat_std,
        syn_num: syn,
        fin_num: fin,
        rst_num: if rst > 0 { j.count(0, rst) } else { 0 },
        num_s_port: j.count(s_port.0, s_port.1),
        num_d_ip: j.count(d_ip.0, d_ip.1),
        num_d_port: j.count(d_port.0, d_port.1),
        con_per_sec: j.real(con.0, con.1).max(0.0),
        meta,
    };
    (record, class)
}

/// Generate `n` labeled flows: ~70% normal clients across five tight
/// behavioral archetypes, ~30% scan-like sources across three.
pub fn synth_corpus(n: usize, seed: u64) -> (Vec<RawFeatureRecord>, Vec<Class>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Cumulative archetype weights: benign 70%, malicious 30%.
    let cumulative = [0.22f64, 0.40, 0.52, 0.62, 0.70, 0.82, 0.92, 1.0];

    let mut records = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let roll: f64 = rng.gen();
        let kind = cumulative.iter().position(|&c| roll < c).unwrap_or(7);
        let meta = synth_meta(kind, i, &mut rng);
        let mut j = Jitter { rng: &mut rng };
        let (record, class) = archetype_record(kind, &mut j, meta);
        records.push(record);
        classes.push(class);
    }
    (records, classes)
}

fn synth_meta(kind: usize, index: usize, rng: &mut ChaCha8Rng) -> FlowMeta {
    let (src_ip, dst_port) = if kind >= 5 {
        // Two scanner sources per malicious archetype.
        let pick = SCANNER_IPS[(kind - 5) * 2 + rng.gen_range(0..2usize)];
        (v4(pick), rng.gen_range(1..1024))
    } else {
        let host = [10, 0, rng.gen_range(0..4u8), rng.gen_range(1..250u8)];
        let port = [80u16, 53, 22, 443, 0][kind];
        (v4(host), port)
    };
    FlowMeta {
        src_ip,
        dst_ip: v4([93, 184, 216, rng.gen_range(1..250u8)]),
        src_port: rng.gen_range(49152..65535),
        dst_port,
        first_ts: index as f64 * 0.01,
    }
}

/// Write the corpus as a flow CSV, optionally with its label column.
pub fn write_corpus_csv(path: &Path, records: &[RawFeatureRecord], classes: Option<&[Class]>) {
    let labels: Option<Vec<String>> =
        classes.map(|cs| cs.iter().map(Class::to_string).collect());
    let mut buf = Vec::new();
    write_flow_csv(&mut buf, records, labels.as_deref()).expect("render csv");
    std::fs::write(path, buf).expect("write csv");
}

// ---- gaussian clusters ----------------------------------------------------

/// Isotropic Gaussian blobs in feature space. Returns the vectors and
/// their true cluster ids.
pub fn gaussian_blobs(
    centers: &[[f32; FEATURE_DIM]],
    sigma: f64,
    per_cluster: usize,
    seed: u64,
) -> (Vec<FeatureVector>, Vec<i32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Vec::with_capacity(centers.len() * per_cluster);
    let mut labels = Vec::with_capacity(vectors.capacity());
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_cluster {
            let mut v = [0.0f32; FEATURE_DIM];
            for (out, &mu) in v.iter_mut().zip(center) {
                *out = mu + (sigma * standard_normal(&mut rng)) as f32;
            }
            vectors.push(FeatureVector(v));
            labels.push(c as i32);
        }
    }
    (vectors, labels)
}

/// Box-Muller standard normal draw.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

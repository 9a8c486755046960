//! Minimal authoritative DNS frontend for the record registry.
//!
//! Speaks the RFC 1035 subset that spatial discovery needs: UDP only, one
//! question per query, QTYPE=TXT, QCLASS=IN, no EDNS. Each map-server
//! record becomes one TXT answer whose RDATA is the record's canonical
//! text and whose TTL field carries the record TTL. Responses are capped
//! at 512 bytes; overflowing answers are dropped and the TC bit set.
//!
//! Faults map to standard RCODEs: FORMERR for malformed packets, NOTIMP
//! for unsupported query types, NXDOMAIN for names holding no records.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use tokio::net::UdpSocket;

use super::{DiscoveryError, MapServerRecord, NameRegistry};

pub const TYPE_TXT: u16 = 16;
pub const CLASS_IN: u16 = 1;

pub const RCODE_NOERROR: u8 = 0;
pub const RCODE_FORMERR: u8 = 1;
pub const RCODE_NXDOMAIN: u8 = 3;
pub const RCODE_NOTIMP: u8 = 4;

const MAX_UDP_RESPONSE: usize = 512;
const QUERY_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub name: String,
    pub qtype: u16,
    pub qclass: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub name: String,
    pub rtype: u16,
    pub rclass: u16,
    pub ttl: u32,
    pub rdata: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub id: u16,
    pub rcode: u8,
    pub truncated: bool,
    pub answers: Vec<Answer>,
}

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_be_bytes());
}

fn read_u16(packet: &[u8], at: usize) -> Option<u16> {
    Some(u16::from_be_bytes([*packet.get(at)?, *packet.get(at + 1)?]))
}

fn read_u32(packet: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_be_bytes([
        *packet.get(at)?,
        *packet.get(at + 1)?,
        *packet.get(at + 2)?,
        *packet.get(at + 3)?,
    ]))
}

/// Append a domain name in label wire form.
fn encode_name(buf: &mut Vec<u8>, name: &str) -> Result<(), DiscoveryError> {
    for label in name.split('.').filter(|l| !l.is_empty()) {
        let bytes = label.as_bytes();
        if bytes.len() > 63 {
            return Err(DiscoveryError::ResolutionFailure(format!(
                "label too long in {name:?}"
            )));
        }
        buf.push(bytes.len() as u8);
        buf.extend_from_slice(bytes);
    }
    buf.push(0);
    Ok(())
}

/// Read a (possibly compressed) name. Returns the name and the offset just
/// past it in the original stream.
fn parse_name(packet: &[u8], mut at: usize) -> Option<(String, usize)> {
    let mut labels: Vec<String> = Vec::new();
    let mut jumps = 0;
    let mut end: Option<usize> = None;
    loop {
        let len = *packet.get(at)? as usize;
        if len & 0xC0 == 0xC0 {
            let ptr = ((len & 0x3F) << 8) | *packet.get(at + 1)? as usize;
            if end.is_none() {
                end = Some(at + 2);
            }
            jumps += 1;
            if jumps > 8 {
                return None;
            }
            at = ptr;
            continue;
        }
        if len == 0 {
            let end = end.unwrap_or(at + 1);
            return Some((labels.join("."), end));
        }
        if len > 63 {
            return None;
        }
        let bytes = packet.get(at + 1..at + 1 + len)?;
        labels.push(String::from_utf8_lossy(bytes).to_ascii_lowercase());
        at += 1 + len;
    }
}

/// Build a TXT query for `name`.
pub fn encode_query(id: u16, name: &str) -> Result<Vec<u8>, DiscoveryError> {
    let mut buf = Vec::with_capacity(32);
    put_u16(&mut buf, id);
    put_u16(&mut buf, 0x0100); // RD set, everything else zero
    put_u16(&mut buf, 1);
    put_u16(&mut buf, 0);
    put_u16(&mut buf, 0);
    put_u16(&mut buf, 0);
    encode_name(&mut buf, name)?;
    put_u16(&mut buf, TYPE_TXT);
    put_u16(&mut buf, CLASS_IN);
    Ok(buf)
}

/// What the server decided to do with an incoming packet.
enum Disposition {
    /// Not even a query; stay silent.
    Drop,
    /// Respond with an error RCODE, echoing the question when we have one.
    Fault { rcode: u8, question: Option<Question> },
    /// A well-formed TXT/IN question.
    Serve(Question),
}

fn classify(packet: &[u8]) -> Disposition {
    if packet.len() < 12 {
        return if packet.len() >= 2 {
            Disposition::Fault {
                rcode: RCODE_FORMERR,
                question: None,
            }
        } else {
            Disposition::Drop
        };
    }
    let flags = read_u16(packet, 2).expect("length checked");
    if flags & 0x8000 != 0 {
        return Disposition::Drop; // a response, not a query
    }
    let opcode = ((flags >> 11) & 0xF) as u8;
    let qdcount = read_u16(packet, 4).expect("length checked");
    if qdcount != 1 {
        return Disposition::Fault {
            rcode: RCODE_FORMERR,
            question: None,
        };
    }
    let Some((name, after_name)) = parse_name(packet, 12) else {
        return Disposition::Fault {
            rcode: RCODE_FORMERR,
            question: None,
        };
    };
    let (Some(qtype), Some(qclass)) = (read_u16(packet, after_name), read_u16(packet, after_name + 2))
    else {
        return Disposition::Fault {
            rcode: RCODE_FORMERR,
            question: None,
        };
    };
    let question = Question {
        name,
        qtype,
        qclass,
    };
    if opcode != 0 || qtype != TYPE_TXT || qclass != CLASS_IN {
        return Disposition::Fault {
            rcode: RCODE_NOTIMP,
            question: Some(question),
        };
    }
    Disposition::Serve(question)
}

/// Assemble a response. Answers that would push the packet past 512 bytes
/// are dropped and TC is set.
fn build_response(
    id: u16,
    rd: bool,
    rcode: u8,
    question: Option<&Question>,
    answers: &[(u32, String)],
) -> Vec<u8> {
    let mut buf = Vec::with_capacity(MAX_UDP_RESPONSE);
    put_u16(&mut buf, id);
    put_u16(&mut buf, 0);
    put_u16(&mut buf, u16::from(question.is_some()));
    put_u16(&mut buf, 0); // ANCOUNT patched below
    put_u16(&mut buf, 0);
    put_u16(&mut buf, 0);

    let mut question_offset = None;
    if let Some(q) = question {
        question_offset = Some(buf.len());
        encode_name(&mut buf, &q.name).expect("question name came off the wire");
        put_u16(&mut buf, q.qtype);
        put_u16(&mut buf, q.qclass);
    }

    let mut ancount = 0u16;
    let mut truncated = false;
    for (ttl, text) in answers {
        let mut rr = Vec::with_capacity(16 + text.len());
        match question_offset {
            // Compression pointer back to the question name.
            Some(off) => put_u16(&mut rr, 0xC000 | off as u16),
            None => rr.push(0),
        }
        put_u16(&mut rr, TYPE_TXT);
        put_u16(&mut rr, CLASS_IN);
        rr.extend_from_slice(&ttl.to_be_bytes());
        let bytes = text.as_bytes();
        debug_assert!(bytes.len() <= 255, "canonical record text fits one string");
        put_u16(&mut rr, (bytes.len() + 1) as u16);
        rr.push(bytes.len() as u8);
        rr.extend_from_slice(bytes);
        if buf.len() + rr.len() > MAX_UDP_RESPONSE {
            truncated = true;
            break;
        }
        buf.extend_from_slice(&rr);
        ancount += 1;
    }

    let mut flags = 0x8000u16 | 0x0400; // QR, AA
    if truncated {
        flags |= 0x0200;
    }
    if rd {
        flags |= 0x0100;
    }
    flags |= rcode as u16 & 0xF;
    buf[2..4].copy_from_slice(&flags.to_be_bytes());
    buf[6..8].copy_from_slice(&ancount.to_be_bytes());
    buf
}

/// Answer one datagram. `None` means stay silent.
pub fn handle_packet(registry: &NameRegistry, packet: &[u8]) -> Option<Vec<u8>> {
    let id = read_u16(packet, 0).unwrap_or(0);
    let rd = read_u16(packet, 2).map(|f| f & 0x0100 != 0).unwrap_or(false);
    match classify(packet) {
        Disposition::Drop => None,
        Disposition::Fault { rcode, question } => {
            Some(build_response(id, rd, rcode, question.as_ref(), &[]))
        }
        Disposition::Serve(question) => {
            let records = registry.lookup_records(&question.name).unwrap_or_default();
            if records.is_empty() {
                return Some(build_response(
                    id,
                    rd,
                    RCODE_NXDOMAIN,
                    Some(&question),
                    &[],
                ));
            }
            let answers: Vec<(u32, String)> = records
                .iter()
                .map(|r| (r.ttl_s.min(u32::MAX as u64) as u32, r.canonical_text()))
                .collect();
            Some(build_response(
                id,
                rd,
                RCODE_NOERROR,
                Some(&question),
                &answers,
            ))
        }
    }
}

/// Parse a response packet.
pub fn parse_response(packet: &[u8]) -> Result<Response, DiscoveryError> {
    let fail = |what: &str| DiscoveryError::ResolutionFailure(format!("bad response: {what}"));
    if packet.len() < 12 {
        return Err(fail("short header"));
    }
    let id = read_u16(packet, 0).unwrap();
    let flags = read_u16(packet, 2).unwrap();
    if flags & 0x8000 == 0 {
        return Err(fail("not a response"));
    }
    let rcode = (flags & 0xF) as u8;
    let truncated = flags & 0x0200 != 0;
    let qdcount = read_u16(packet, 4).unwrap();
    let ancount = read_u16(packet, 6).unwrap();

    let mut at = 12;
    for _ in 0..qdcount {
        let (_, next) = parse_name(packet, at).ok_or_else(|| fail("question name"))?;
        at = next + 4;
    }
    let mut answers = Vec::with_capacity(ancount as usize);
    for _ in 0..ancount {
        let (name, next) = parse_name(packet, at).ok_or_else(|| fail("answer name"))?;
        at = next;
        let rtype = read_u16(packet, at).ok_or_else(|| fail("rtype"))?;
        let rclass = read_u16(packet, at + 2).ok_or_else(|| fail("rclass"))?;
        let ttl = read_u32(packet, at + 4).ok_or_else(|| fail("ttl"))?;
        let rdlength = read_u16(packet, at + 8).ok_or_else(|| fail("rdlength"))? as usize;
        at += 10;
        let rdata = packet
            .get(at..at + rdlength)
            .ok_or_else(|| fail("rdata"))?
            .to_vec();
        at += rdlength;
        answers.push(Answer {
            name,
            rtype,
            rclass,
            ttl,
            rdata,
        });
    }
    Ok(Response {
        id,
        rcode,
        truncated,
        answers,
    })
}

/// Join the character-strings of a TXT RDATA.
pub fn txt_strings(rdata: &[u8]) -> Option<String> {
    let mut out = String::new();
    let mut at = 0;
    while at < rdata.len() {
        let len = rdata[at] as usize;
        let bytes = rdata.get(at + 1..at + 1 + len)?;
        out.push_str(&String::from_utf8_lossy(bytes));
        at += 1 + len;
    }
    Some(out)
}

/// A running UDP frontend. Dropping it stops the task.
pub struct DnsFrontend {
    pub addr: SocketAddr,
    task: tokio::task::JoinHandle<()>,
}

impl Drop for DnsFrontend {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Serve the registry over UDP. Bind to port 0 for an ephemeral port.
pub async fn serve_dns(registry: Arc<NameRegistry>, bind: SocketAddr) -> io::Result<DnsFrontend> {
    let socket = Arc::new(UdpSocket::bind(bind).await?);
    let addr = socket.local_addr()?;
    let task = tokio::spawn(async move {
        let mut buf = vec![0u8; 1500];
        loop {
            let Ok((len, peer)) = socket.recv_from(&mut buf).await else {
                continue;
            };
            let packet = buf[..len].to_vec();
            let registry = registry.clone();
            let socket = socket.clone();
            tokio::spawn(async move {
                if let Some(reply) = handle_packet(&registry, &packet) {
                    let _ = socket.send_to(&reply, peer).await;
                }
            });
        }
    });
    Ok(DnsFrontend { addr, task })
}

/// Send one query datagram and wait for the reply. Used by tests that
/// build their own packets.
pub async fn exchange(server: SocketAddr, query: &[u8]) -> Result<Vec<u8>, DiscoveryError> {
    let unreachable =
        |e: io::Error| DiscoveryError::ResolutionFailure(format!("dns {server}: {e}"));
    let socket = UdpSocket::bind("127.0.0.1:0").await.map_err(unreachable)?;
    socket.connect(server).await.map_err(unreachable)?;
    socket.send(query).await.map_err(unreachable)?;
    let mut buf = vec![0u8; 1500];
    let len = tokio::time::timeout(QUERY_TIMEOUT, socket.recv(&mut buf))
        .await
        .map_err(|_| DiscoveryError::ResolutionFailure(format!("dns {server}: timeout")))?
        .map_err(unreachable)?;
    buf.truncate(len);
    Ok(buf)
}

/// Resolve map-server records for `name` over the wire frontend. An
/// NXDOMAIN answer is an empty record set, not an error.
pub async fn resolve_txt(
    server: SocketAddr,
    name: &str,
) -> Result<Vec<MapServerRecord>, DiscoveryError> {
    let id = rand::random::<u16>();
    let query = encode_query(id, name)?;
    // One retry on a lost datagram.
    let raw = match exchange(server, &query).await {
        Ok(raw) => raw,
        Err(_) => exchange(server, &query).await?,
    };
    let response = parse_response(&raw)?;
    if response.id != id {
        return Err(DiscoveryError::ResolutionFailure(
            "response id mismatch".into(),
        ));
    }
    match response.rcode {
        RCODE_NOERROR => {}
        RCODE_NXDOMAIN => return Ok(Vec::new()),
        other => {
            return Err(DiscoveryError::ResolutionFailure(format!(
                "server answered rcode {other}"
            )))
        }
    }
    let mut records = Vec::new();
    for answer in response
        .answers
        .iter()
        .filter(|a| a.rtype == TYPE_TXT && a.rclass == CLASS_IN)
    {
        let text = txt_strings(&answer.rdata).ok_or_else(|| {
            DiscoveryError::ResolutionFailure("unparseable TXT rdata".into())
        })?;
        if text.starts_with("v=of1;") {
            records.push(MapServerRecord::from_canonical_text(
                &text,
                answer.ttl as u64,
            )?);
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::discovery::ServiceKind;
    use crate::model::GeoPoint;

    fn record(id: &str, ttl_s: u64) -> MapServerRecord {
        MapServerRecord {
            server_id: id.to_string(),
            endpoint: format!("http://127.0.0.1:9/{id}"),
            services: BTreeSet::from([ServiceKind::Tile]),
            localization_techs: BTreeSet::new(),
            priority: 0,
            ttl_s,
        }
    }

    fn registry_with_record() -> Arc<NameRegistry> {
        let registry = Arc::new(NameRegistry::new("maps.test"));
        let poly = vec![
            GeoPoint::new(10.0, 10.0).unwrap(),
            GeoPoint::new(10.0, 20.0).unwrap(),
            GeoPoint::new(20.0, 20.0).unwrap(),
            GeoPoint::new(20.0, 10.0).unwrap(),
        ];
        registry.register_zone(&poly, record("a", 120), 1).unwrap();
        registry
    }

    #[test]
    fn query_round_trips_through_codec() {
        let query = encode_query(7, "0.2.3.maps.test").unwrap();
        match classify(&query) {
            Disposition::Serve(q) => {
                assert_eq!(q.name, "0.2.3.maps.test");
                assert_eq!(q.qtype, TYPE_TXT);
            }
            _ => panic!("expected a served question"),
        }
    }

    #[test]
    fn answers_resolve_with_compression_pointer() {
        let registry = registry_with_record();
        let query = encode_query(42, "3.maps.test").unwrap();
        let reply = handle_packet(&registry, &query).unwrap();
        let response = parse_response(&reply).unwrap();
        assert_eq!(response.id, 42);
        assert_eq!(response.rcode, RCODE_NOERROR);
        assert_eq!(response.answers.len(), 1);
        assert_eq!(response.answers[0].name, "3.maps.test");
        assert_eq!(response.answers[0].ttl, 120);
        let text = txt_strings(&response.answers[0].rdata).unwrap();
        assert_eq!(text, record("a", 120).canonical_text());
    }

    #[test]
    fn unknown_name_is_nxdomain() {
        let registry = registry_with_record();
        let query = encode_query(1, "1.maps.test").unwrap();
        let reply = handle_packet(&registry, &query).unwrap();
        assert_eq!(parse_response(&reply).unwrap().rcode, RCODE_NXDOMAIN);
    }

    #[test]
    fn a_query_is_notimp() {
        let registry = registry_with_record();
        let mut query = encode_query(1, "3.maps.test").unwrap();
        let qtype_at = query.len() - 4;
        query[qtype_at..qtype_at + 2].copy_from_slice(&1u16.to_be_bytes()); // QTYPE=A
        let reply = handle_packet(&registry, &query).unwrap();
        assert_eq!(parse_response(&reply).unwrap().rcode, RCODE_NOTIMP);
    }

    #[test]
    fn malformed_packet_is_formerr() {
        let registry = registry_with_record();
        let reply = handle_packet(&registry, &[0, 9, 1, 0]).unwrap();
        let response = parse_response(&reply).unwrap();
        assert_eq!(response.rcode, RCODE_FORMERR);
        assert_eq!(response.id, 9);
        // Two questions are out of contract too.
        let mut query = encode_query(3, "3.maps.test").unwrap();
        query[4..6].copy_from_slice(&2u16.to_be_bytes());
        let reply = handle_packet(&registry, &query).unwrap();
        assert_eq!(parse_response(&reply).unwrap().rcode, RCODE_FORMERR);
    }

    #[test]
    fn responses_are_dropped_not_answered() {
        let registry = registry_with_record();
        let query = encode_query(5, "3.maps.test").unwrap();
        let reply = handle_packet(&registry, &query).unwrap();
        assert!(handle_packet(&registry, &reply).is_none());
    }

    #[test]
    fn oversize_answer_sets_tc() {
        let registry = Arc::new(NameRegistry::new("maps.test"));
        for i in 0..12 {
            registry
                .insert_record(
                    "3.maps.test",
                    record(&format!("server-{i:02}-padded-to-make-it-long"), 60),
                )
                .unwrap();
        }
        let query = encode_query(6, "3.maps.test").unwrap();
        let reply = handle_packet(&registry, &query).unwrap();
        assert!(reply.len() <= 512);
        let response = parse_response(&reply).unwrap();
        assert!(response.truncated);
        assert!(response.answers.len() < 12);
        assert!(!response.answers.is_empty());
    }

    #[tokio::test]
    async fn udp_round_trip_matches_lookup() {
        let registry = registry_with_record();
        let frontend = serve_dns(registry.clone(), "127.0.0.1:0".parse().unwrap())
            .await
            .unwrap();
        let records = resolve_txt(frontend.addr, "3.maps.test").await.unwrap();
        assert_eq!(records, registry.lookup_records("3.maps.test").unwrap());
        assert!(resolve_txt(frontend.addr, "1.maps.test")
            .await
            .unwrap()
            .is_empty());
    }
}

use std::borrow::Cow;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom};
use std::path::Path;
use std::time::Duration;

use pcap_file::pcap::{PcapHeader, PcapPacket, PcapReader, PcapWriter};
use pcap_file::pcapng::{Block, PcapNgReader};
use pcap_file::DataLink;

use super::{IngestError, LinkType};

/// A raw captured frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Zero-based position in the capture.
    pub index: u64,
    /// Seconds since the first frame of the capture.
    pub timestamp: f64,
    pub link_type: Option<LinkType>,
    pub data: Vec<u8>,
    pub orig_len: u32,
}

#[derive(Debug, Clone, Default)]
pub struct Capture {
    pub frames: Vec<Frame>,
    /// Frames whose link type the inline parser does not handle.
    pub unsupported_link: usize,
}

const PCAPNG_MAGIC: [u8; 4] = [0x0a, 0x0d, 0x0d, 0x0a];

fn map_link(link: DataLink) -> Option<LinkType> {
    match link {
        DataLink::ETHERNET => Some(LinkType::Ethernet),
        DataLink::RAW | DataLink::IPV4 => Some(LinkType::RawIp),
        DataLink::LINUX_SLL => Some(LinkType::LinuxSll),
        _ => None,
    }
}

fn capture_err(path: &Path, e: impl std::fmt::Display) -> IngestError {
    IngestError::Capture { path: path.to_path_buf(), reason: e.to_string() }
}

/// Reads a pcap or pcapng file, detecting the container by magic number.
pub fn read_capture(path: &Path) -> Result<Capture, IngestError> {
    if !path.exists() {
        return Err(IngestError::MissingInput(path.to_path_buf()));
    }
    let mut file = File::open(path)?;
    let mut magic = [0u8; 4];
    let n = file.read(&mut magic)?;
    if n == 0 {
        return Ok(Capture::default());
    }
    file.seek(SeekFrom::Start(0))?;
    let reader = BufReader::new(file);
    let mut raw: Vec<(Duration, Option<LinkType>, Vec<u8>, u32)> = Vec::new();
    if magic == PCAPNG_MAGIC {
        let mut ng = PcapNgReader::new(reader).map_err(|e| capture_err(path, e))?;
        let mut links: Vec<Option<LinkType>> = Vec::new();
        while let Some(block) = ng.next_block() {
            let block = block.map_err(|e| capture_err(path, e))?;
            match block {
                Block::SectionHeader(_) => links.clear(),
                Block::InterfaceDescription(idb) => links.push(map_link(idb.linktype)),
                Block::EnhancedPacket(epb) => {
                    let link = links.get(epb.interface_id as usize).copied().flatten();
                    raw.push((epb.timestamp, link, epb.data.into_owned(), epb.original_len));
                }
                Block::SimplePacket(spb) => {
                    let link = links.first().copied().flatten();
                    let prev = raw.last().map(|r| r.0).unwrap_or_default();
                    raw.push((prev, link, spb.data.into_owned(), spb.original_len));
                }
                _ => {}
            }
        }
    } else {
        let mut pr = PcapReader::new(reader).map_err(|e| capture_err(path, e))?;
        let link = map_link(pr.header().datalink);
        while let Some(pkt) = pr.next_packet() {
            let pkt = pkt.map_err(|e| capture_err(path, e))?;
            raw.push((pkt.timestamp, link, pkt.data.into_owned(), pkt.orig_len));
        }
    }

    let start = raw.iter().map(|r| r.0).min().unwrap_or_default();
    let mut capture = Capture::default();
    for (index, (ts, link, data, orig_len)) in raw.into_iter().enumerate() {
        if link.is_none() {
            capture.unsupported_link += 1;
        }
        capture.frames.push(Frame {
            index: index as u64,
            timestamp: ts.saturating_sub(start).as_secs_f64(),
            link_type: link,
            data,
            orig_len,
        });
    }
    Ok(capture)
}

/// Writes frames as a classic little-endian microsecond pcap. `timestamps`
/// are absolute seconds.
pub fn write_pcap<'a, I>(path: &Path, link: LinkType, frames: I) -> Result<(), IngestError>
where
    I: IntoIterator<Item = (f64, &'a [u8])>,
{
    let datalink = match link {
        LinkType::Ethernet => DataLink::ETHERNET,
        LinkType::RawIp => DataLink::RAW,
        LinkType::LinuxSll => DataLink::LINUX_SLL,
    };
    let header = PcapHeader {
        datalink,
        endianness: pcap_file::Endianness::Little,
        ..PcapHeader::default()
    };
    let file = BufWriter::new(File::create(path)?);
    let mut writer = PcapWriter::with_header(file, header).map_err(|e| capture_err(path, e))?;
    for (ts, data) in frames {
        let micros = (ts.max(0.0) * 1e6).round() as u64;
        let packet = PcapPacket {
            timestamp: Duration::from_micros(micros),
            orig_len: data.len() as u32,
            data: Cow::Borrowed(data),
        };
        writer.write_packet(&packet).map_err(|e| capture_err(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcap_round_trip_keeps_order_and_relative_time() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pcap");
        let a = vec![1u8, 2, 3];
        let b = vec![4u8, 5];
        write_pcap(&path, LinkType::RawIp, [(100.5, a.as_slice()), (101.0, b.as_slice())]).unwrap();
        let cap = read_capture(&path).unwrap();
        assert_eq!(cap.frames.len(), 2);
        assert_eq!(cap.frames[0].data, a);
        assert_eq!(cap.frames[1].link_type, Some(LinkType::RawIp));
        assert!((cap.frames[1].timestamp - 0.5).abs() < 1e-6);
    }

    #[test]
    fn missing_file_is_reported() {
        let err = read_capture(Path::new("/nonexistent/x.pcap")).unwrap_err();
        assert!(matches!(err, IngestError::MissingInput(_)));
    }

    #[test]
    fn empty_file_is_an_empty_capture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.pcap");
        std::fs::write(&path, b"").unwrap();
        assert!(read_capture(&path).unwrap().frames.is_empty());
    }
}

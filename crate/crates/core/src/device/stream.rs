//! Bounded single-producer/single-consumer queue of fixed-width beats.
//!
//! A frame travels as a length header followed by its data, each split into
//! `width`-byte beats; the final beat carries the `last` flag and is
//! zero-padded when the frame length is not a multiple of the width. The
//! header spans `ceil(8 / width)` beats (one beat for widths of 8 or more),
//! so the reader recovers the exact unpadded length.

use std::collections::VecDeque;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use super::{DeviceError, DeviceId};

pub const DEFAULT_MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId(pub u32);

/// One beat as seen on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Beat {
    pub data: Vec<u8>,
    pub last: bool,
}

/// Beats are stored back to back: `bytes` holds `width` bytes per entry of
/// `last`.
#[derive(Debug, Default)]
struct Fifo {
    bytes: VecDeque<u8>,
    last: VecDeque<bool>,
}

/// A frame being written, addressed beat by beat.
pub(crate) struct Framed<'a> {
    header: Vec<u8>,
    frame: &'a [u8],
    width: usize,
    total: usize,
}

impl Framed<'_> {
    pub(crate) fn beats(&self) -> usize {
        self.total
    }

    /// Appends the bytes of beats `range`, padding included.
    fn fill(&self, range: Range<usize>, out: &mut VecDeque<u8>) {
        let w = self.width;
        let hb = self.header.len() / w;
        let head = range.start.min(hb)..range.end.min(hb);
        out.extend(&self.header[head.start * w..head.end * w]);
        if range.end > hb {
            let data = range.start.max(hb) - hb..range.end - hb;
            let start = data.start * w;
            let end = (data.end * w).min(self.frame.len());
            out.extend(&self.frame[start..end]);
            out.extend(std::iter::repeat(0).take(data.len() * w - (end - start)));
        }
    }
}

#[derive(Debug)]
pub struct StreamQueue {
    id: StreamId,
    device: DeviceId,
    width: usize,
    capacity: usize,
    max_frame: usize,
    fifo: Mutex<Fifo>,
    not_full: Condvar,
    not_empty: Condvar,
    beats_written: AtomicU64,
    beats_read: AtomicU64,
}

impl StreamQueue {
    pub fn new(id: StreamId, device: DeviceId, capacity: usize, width: usize) -> Result<StreamQueue, DeviceError> {
        if capacity == 0 {
            return Err(DeviceError::ZeroCapacity);
        }
        if width == 0 {
            return Err(DeviceError::ZeroBeatWidth);
        }
        Ok(StreamQueue {
            id,
            device,
            width,
            capacity,
            max_frame: DEFAULT_MAX_FRAME,
            fifo: Mutex::new(Fifo::default()),
            not_full: Condvar::new(),
            not_empty: Condvar::new(),
            beats_written: AtomicU64::new(0),
            beats_read: AtomicU64::new(0),
        })
    }

    pub fn with_max_frame(mut self, max_frame: usize) -> StreamQueue {
        self.max_frame = max_frame;
        self
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn device(&self) -> DeviceId {
        self.device
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn max_frame(&self) -> usize {
        self.max_frame
    }

    pub fn header_beats(&self) -> usize {
        8usize.div_ceil(self.width)
    }

    /// Beats on the wire for a frame of `len` bytes, header included.
    pub fn beats_for(&self, len: usize) -> usize {
        self.header_beats() + len.div_ceil(self.width)
    }

    pub fn len_beats(&self) -> usize {
        self.fifo.lock().unwrap().last.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len_beats() == 0
    }

    pub fn beats_written(&self) -> u64 {
        self.beats_written.load(Ordering::Acquire)
    }

    pub fn beats_read(&self) -> u64 {
        self.beats_read.load(Ordering::Acquire)
    }

    pub fn check_frame(&self, len: usize) -> Result<(), DeviceError> {
        if len > self.max_frame {
            return Err(DeviceError::FrameTooLarge {
                len,
                max: self.max_frame,
            });
        }
        Ok(())
    }

    pub(crate) fn frame<'a>(&self, frame: &'a [u8]) -> Result<Framed<'a>, DeviceError> {
        self.check_frame(frame.len())?;
        let mut header = (frame.len() as u64).to_le_bytes().to_vec();
        header.resize(self.header_beats() * self.width, 0);
        Ok(Framed {
            header,
            frame,
            width: self.width,
            total: self.beats_for(frame.len()),
        })
    }

    /// The beats `frame` is sent as.
    pub fn wire_beats(&self, frame: &[u8]) -> Result<Vec<Beat>, DeviceError> {
        let f = self.frame(frame)?;
        Ok((0..f.total)
            .map(|i| {
                let mut data = VecDeque::new();
                f.fill(i..i + 1, &mut data);
                Beat {
                    data: data.into(),
                    last: i + 1 == f.total,
                }
            })
            .collect())
    }

    /// Pushes beats `range` of `f`, blocking while the queue is full.
    pub(crate) fn push(&self, f: &Framed<'_>, range: Range<usize>) {
        let mut i = range.start;
        while i < range.end {
            let mut fifo = self
                .not_full
                .wait_while(self.fifo.lock().unwrap(), |q| q.last.len() >= self.capacity)
                .unwrap();
            let start = i;
            i = range.end.min(start + self.capacity - fifo.last.len());
            f.fill(start..i, &mut fifo.bytes);
            fifo.last.extend((start..i).map(|b| b + 1 == f.total));
            self.beats_written.fetch_add((i - start) as u64, Ordering::Release);
            drop(fifo);
            self.not_empty.notify_all();
        }
    }

    /// Writes one frame, blocking while the queue is full.
    pub fn write(&self, frame: &[u8]) -> Result<(), DeviceError> {
        let f = self.frame(frame)?;
        self.push(&f, 0..f.beats());
        Ok(())
    }

    /// Pops exactly `count` beats, appending their bytes to `out`. Returns
    /// the last flags.
    fn pop(&self, count: usize, out: &mut Vec<u8>) -> Vec<bool> {
        let mut flags = Vec::with_capacity(count);
        while flags.len() < count {
            let mut fifo = self
                .not_empty
                .wait_while(self.fifo.lock().unwrap(), |q| q.last.is_empty())
                .unwrap();
            let k = (count - flags.len()).min(fifo.last.len());
            let n = k * self.width;
            let (a, b) = fifo.bytes.as_slices();
            let from_a = n.min(a.len());
            out.extend_from_slice(&a[..from_a]);
            out.extend_from_slice(&b[..n - from_a]);
            fifo.bytes.drain(..n);
            flags.extend(fifo.last.drain(..k));
            drop(fifo);
            self.beats_read.fetch_add(k as u64, Ordering::Release);
            self.not_full.notify_all();
        }
        flags
    }

    /// Reads one frame, blocking until all of its beats have arrived.
    pub fn read(&self) -> Result<Vec<u8>, DeviceError> {
        let mut header = Vec::with_capacity(self.header_beats() * self.width);
        let mut flags = self.pop(self.header_beats(), &mut header);
        let len = u64::from_le_bytes(header[..8].try_into().unwrap()) as usize;
        if len > self.max_frame {
            return Err(DeviceError::StreamFraming(format!("header announces {len} bytes")));
        }
        let data_beats = len.div_ceil(self.width);
        let mut frame = Vec::with_capacity(data_beats * self.width);
        flags.extend(self.pop(data_beats, &mut frame));
        if let Some(i) = flags[..flags.len() - 1].iter().position(|&l| l) {
            return Err(DeviceError::StreamFraming(format!(
                "last flag on beat {} of {}",
                i + 1,
                flags.len()
            )));
        }
        if !flags[flags.len() - 1] {
            return Err(DeviceError::StreamFraming("final beat lacks the last flag".into()));
        }
        frame.truncate(len);
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::time::Duration;

    fn queue(capacity: usize, width: usize) -> StreamQueue {
        StreamQueue::new(StreamId(0), DeviceId(0), capacity, width).unwrap()
    }

    #[test]
    fn beat_arithmetic() {
        let q = queue(64, 64);
        assert_eq!(q.beats_for(1024), 17);
        let beats = q.wire_beats(&[7u8; 1024]).unwrap();
        assert_eq!(beats.len(), 17);
        assert!(beats[16].last);
        assert!(beats[..16].iter().all(|b| !b.last));
    }

    #[test]
    fn short_final_beat_is_padded() {
        let q = queue(8, 64);
        let frame: Vec<u8> = (0..100).collect();
        let beats = q.wire_beats(&frame).unwrap();
        // header + two data beats, the second carrying 36 bytes and 28 of padding
        assert_eq!(beats.len(), 3);
        assert_eq!(&beats[2].data[..36], &frame[64..]);
        assert!(beats[2].data[36..].iter().all(|&b| b == 0));
        q.write(&frame).unwrap();
        assert_eq!(q.read().unwrap().len(), 100);
    }

    #[test]
    fn narrow_beats_use_multi_beat_header() {
        let q = queue(64, 3);
        assert_eq!(q.header_beats(), 3);
        q.write(b"hello").unwrap();
        assert_eq!(q.read().unwrap(), b"hello");
    }

    #[test]
    fn empty_frame_round_trips() {
        let q = queue(4, 16);
        q.write(&[]).unwrap();
        assert_eq!(q.read().unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            StreamQueue::new(StreamId(0), DeviceId(0), 0, 64),
            Err(DeviceError::ZeroCapacity)
        ));
        assert!(matches!(
            StreamQueue::new(StreamId(0), DeviceId(0), 16, 0),
            Err(DeviceError::ZeroBeatWidth)
        ));
    }

    #[test]
    fn oversized_frame_is_rejected() {
        let q = queue(4, 8).with_max_frame(16);
        assert!(matches!(
            q.write(&[0; 17]),
            Err(DeviceError::FrameTooLarge { .. })
        ));
    }

    #[test]
    fn independent_queues() {
        let a = queue(16, 8);
        let b = queue(16, 8);
        a.write(b"aaa").unwrap();
        b.write(b"bb").unwrap();
        assert_eq!(b.read().unwrap(), b"bb");
        assert_eq!(a.read().unwrap(), b"aaa");
    }

    #[test]
    fn writer_blocks_at_capacity() {
        let q = Arc::new(queue(16, 64));
        let writer = {
            let q = q.clone();
            std::thread::spawn(move || q.write(&[1u8; 64 * 40]).unwrap())
        };
        std::thread::sleep(Duration::from_millis(50));
        assert_eq!(q.len_beats(), 16);
        assert!(q.beats_written() <= 17);
        assert!(!writer.is_finished());
        assert_eq!(q.read().unwrap(), vec![1u8; 64 * 40]);
        writer.join().unwrap();
    }

    #[test]
    fn frames_stay_in_order_across_threads() {
        let q = Arc::new(queue(8, 16));
        let frames: Vec<Vec<u8>> = (0..50u8).map(|i| vec![i; (i as usize) * 7 + 1]).collect();
        let writer = {
            let q = q.clone();
            let frames = frames.clone();
            std::thread::spawn(move || {
                for f in &frames {
                    q.write(f).unwrap();
                }
            })
        };
        for f in &frames {
            assert_eq!(&q.read().unwrap(), f);
        }
        writer.join().unwrap();
    }
}

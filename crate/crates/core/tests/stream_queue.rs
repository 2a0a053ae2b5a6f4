use std::sync::Arc;
use std::thread;
use std::time::Duration;

use flowbench::device::{DeviceId, StreamId, StreamQueue};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn queue(capacity: usize, width: usize) -> Arc<StreamQueue> {
    Arc::new(StreamQueue::new(StreamId(0), DeviceId(0), capacity, width).unwrap())
}

#[test]
fn ten_thousand_random_frames_round_trip_in_order() {
    let q = queue(32, 16);
    let frames: Vec<Vec<u8>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (0..10_000)
            .map(|_| {
                let len = rng.gen_range(0..300);
                (0..len).map(|_| rng.gen()).collect()
            })
            .collect()
    };
    let writer = {
        let (q, frames) = (q.clone(), frames.clone());
        thread::spawn(move || {
            for f in &frames {
                q.write(f).unwrap();
            }
        })
    };
    for (i, f) in frames.iter().enumerate() {
        assert_eq!(&q.read().unwrap(), f, "frame {i}");
    }
    writer.join().unwrap();
    assert!(q.is_empty());
    assert_eq!(q.beats_written(), q.beats_read());
    let beats: usize = frames.iter().map(|f| q.beats_for(f.len())).sum();
    assert_eq!(q.beats_read(), beats as u64);
}

#[test]
fn stalled_reader_blocks_the_writer_at_capacity() {
    let capacity = 8;
    let q = queue(capacity, 4);
    let writer = {
        let q = q.clone();
        thread::spawn(move || {
            q.write(&[7u8; 400]).unwrap();
        })
    };
    thread::sleep(Duration::from_millis(100));
    assert!(!writer.is_finished());
    assert!(q.beats_written() <= capacity as u64 + 1, "{}", q.beats_written());
    assert_eq!(q.len_beats(), capacity);
    assert_eq!(q.read().unwrap(), vec![7u8; 400]);
    writer.join().unwrap();
}

#[test]
fn wire_format_marks_only_the_last_beat() {
    let q = queue(64, 8);
    let beats = q.wire_beats(&[1, 2, 3, 4, 5, 6, 7, 8, 9]).unwrap();
    assert_eq!(beats.len(), q.header_beats() + 2);
    assert!(beats[..beats.len() - 1].iter().all(|b| !b.last));
    assert!(beats.last().unwrap().last);
    let small = StreamQueue::new(StreamId(1), DeviceId(0), 4, 4).unwrap().with_max_frame(10);
    assert!(small.write(&[0; 11]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn frames_round_trip_for_any_geometry(
        frames in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..200), 1..40),
        capacity in 1usize..16,
        width in 1usize..33,
    ) {
        let q = queue(capacity, width);
        let writer = {
            let (q, frames) = (q.clone(), frames.clone());
            thread::spawn(move || frames.iter().for_each(|f| q.write(f).unwrap()))
        };
        for f in &frames {
            prop_assert_eq!(&q.read().unwrap(), f);
        }
        writer.join().unwrap();
        prop_assert!(q.is_empty());
    }
}

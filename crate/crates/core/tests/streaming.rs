//! Peak heap while writing and reading a 665,000-record corpus.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use adr::dataset::{load_corpus, write_corpus, CorpusFormat};
use adr::fixture::ZipfConfig;
use adr::Perspective;

struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

/// Heap growth allowed over the baseline: id fingerprints plus buffers,
/// a small fraction of the corpus file.
const CEILING: usize = 24 << 20;

fn reset_peak() -> usize {
    let live = LIVE.load(Ordering::Relaxed);
    PEAK.store(live, Ordering::Relaxed);
    live
}

#[test]
fn corpus_round_trip_runs_in_bounded_memory() {
    const N: usize = 665_000;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.jsonl");
    let cfg = ZipfConfig {
        instances: N,
        ..Default::default()
    };

    let base = reset_peak();
    let written = write_corpus(cfg.instances().unwrap(), &path, CorpusFormat::LlavaJsonl).unwrap();
    let write_peak = PEAK.load(Ordering::Relaxed) - base;
    assert_eq!(written, N);

    let file_size = std::fs::metadata(&path).unwrap().len() as usize;
    assert!(
        file_size > 6 * CEILING,
        "corpus too small to prove anything: {file_size} bytes"
    );

    let base = reset_peak();
    let mut records = 0usize;
    let mut tokens = 0usize;
    for inst in load_corpus(&path, CorpusFormat::LlavaJsonl).unwrap() {
        let inst = inst.unwrap();
        records += 1;
        tokens += inst.entities[&Perspective::Token].len();
    }
    let read_peak = PEAK.load(Ordering::Relaxed) - base;
    assert_eq!(records, N);
    assert!(tokens >= N);

    eprintln!("file {file_size} B, write peak {write_peak} B, read peak {read_peak} B");
    assert!(write_peak < CEILING, "write peak {write_peak}");
    assert!(read_peak < CEILING, "read peak {read_peak}");
}

//! Event stream I/O: CSV and binary codecs round-trip losslessly, and both
//! readers rebase timestamps when the stream carries a polarity-0 trigger
//! marker (the marker and anything before it are dropped).
//!
//! Run with: cargo run --example event_codecs

use embermet::event::{
    read_events_binary, read_events_csv, write_events_binary, write_events_csv, Event,
};
use std::io::Cursor;

fn main() -> embermet::Result<()> {
    let events = vec![
        Event { t_us: 100, u: 10, v: 20, p: 1 },
        Event { t_us: 250, u: 11, v: 20, p: -1 },
        Event { t_us: 650, u: 13, v: 22, p: 1 },
        Event { t_us: 900, u: 14, v: 23, p: 1 },
    ];

    let mut csv = Vec::new();
    write_events_csv(&mut csv, &events)?;
    print!("{}", String::from_utf8_lossy(&csv));
    let back = read_events_csv(Cursor::new(&csv))?;
    assert_eq!(back, events);
    println!("csv round-trip: {} events preserved", back.len());

    let mut bin = Vec::new();
    write_events_binary(&mut bin, &events)?;
    let back = read_events_binary(Cursor::new(&bin))?;
    assert_eq!(back, events);
    println!("binary round-trip: {} bytes for {} events", bin.len(), back.len());

    // A trigger marker (p = 0) rebases the stream on read: events before the
    // trigger are dropped and the rest shift to start at the trigger instant.
    let mut with_trigger = events.clone();
    with_trigger.insert(2, Event { t_us: 400, u: 12, v: 21, p: 0 });
    let mut bin = Vec::new();
    write_events_binary(&mut bin, &with_trigger)?;
    let rebased = read_events_binary(Cursor::new(&bin))?;
    println!("after trigger rebase: {} of {} events remain", rebased.len(), with_trigger.len());
    for e in &rebased {
        println!("  t={} u={} v={} p={}", e.t_us, e.u, e.v, e.p);
    }
    Ok(())
}

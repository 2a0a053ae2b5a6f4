use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::{TraceDump, TraceError, TraceEvent, Tp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    ChromeJson,
    Csv,
}

impl TraceFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::ChromeJson => "json",
            TraceFormat::Csv => "csv",
        }
    }
}

impl std::str::FromStr for TraceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chrome" | "chrome_trace_json" | "json" => Ok(TraceFormat::ChromeJson),
            "csv" => Ok(TraceFormat::Csv),
            other => Err(format!("unknown trace format '{other}' (expected chrome|csv)")),
        }
    }
}

pub fn export(dump: &TraceDump, format: TraceFormat, path: &Path) -> Result<(), TraceError> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        TraceFormat::ChromeJson => {
            serde_json::to_writer(&mut out, &chrome_events(dump))
                .map_err(|e| TraceError::Io(e.into()))?;
        }
        TraceFormat::Csv => write_csv(dump, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn micros(ns: u64) -> f64 {
    // ns / 1000 rounds to the nearest double, which prints with at most
    // three decimals.
    ns as f64 / 1000.0
}

/// End tracepoint that closes a duration event opened by `tp`.
fn closing(tp: Tp) -> Option<(Tp, &'static str)> {
    Some(match tp {
        Tp::CallbackStart => (Tp::CallbackEnd, "callback"),
        Tp::H2dBegin => (Tp::H2dEnd, "h2d"),
        Tp::KernelBegin => (Tp::KernelEnd, "kernel"),
        Tp::D2hBegin => (Tp::D2hEnd, "d2h"),
        Tp::StreamWriteBegin => (Tp::StreamWriteEnd, "stream_write"),
        Tp::StreamReadBegin => (Tp::StreamReadEnd, "stream_read"),
        _ => return None,
    })
}

fn args(dump: &TraceDump, e: &TraceEvent) -> Value {
    json!({
        "node": dump.node_name(e.node),
        "topic": dump.topic_name(e.topic),
        "seq": e.seq,
        "arg": e.arg,
    })
}

/// Trace Event Format array. Begin/end tracepoints on the same thread and
/// message are paired into complete (`"ph":"X"`) events; everything else is
/// an instant event.
pub fn chrome_events(dump: &TraceDump) -> Vec<Value> {
    let mut open: HashMap<(u32, u32, u32, u64, u16), usize> = HashMap::new();
    let mut paired = vec![None; dump.events.len()];
    let mut closed = vec![false; dump.events.len()];
    for (i, e) in dump.events.iter().enumerate() {
        let Some(tp) = e.tracepoint() else { continue };
        if closing(tp).is_some() {
            open.insert((e.thread, e.node, e.topic, e.seq, e.tp), i);
            continue;
        }
        let opener = Tp::ALL
            .iter()
            .find(|t| closing(**t).map(|c| c.0) == Some(tp))
            .copied();
        if let Some(opener) = opener {
            if let Some(j) = open.remove(&(e.thread, e.node, e.topic, e.seq, opener.id())) {
                paired[j] = Some(i);
                closed[i] = true;
            }
        }
    }

    let mut out = Vec::new();
    for (i, e) in dump.events.iter().enumerate() {
        if closed[i] {
            continue;
        }
        let Some(tp) = e.tracepoint() else { continue };
        match (paired[i], closing(tp)) {
            (Some(j), Some((_, label))) => {
                let end = &dump.events[j];
                let name = if tp == Tp::CallbackStart {
                    format!("callback {}", dump.node_name(e.node))
                } else {
                    label.to_string()
                };
                out.push(json!({
                    "name": name,
                    "cat": tp.category().as_str(),
                    "ph": "X",
                    "ts": micros(e.ts),
                    "dur": micros(end.ts - e.ts),
                    "pid": 1,
                    "tid": e.thread,
                    "args": args(dump, e),
                }));
            }
            _ => out.push(json!({
                "name": tp.name(),
                "cat": tp.category().as_str(),
                "ph": "i",
                "s": "t",
                "ts": micros(e.ts),
                "pid": 1,
                "tid": e.thread,
                "args": args(dump, e),
            })),
        }
    }
    out
}

const CSV_HEADER: &str = "ts_ns,tp_name,thread,node,seq,arg";

fn write_csv(dump: &TraceDump, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for e in &dump.events {
        let name = e.tracepoint().map(Tp::name).unwrap_or("unknown");
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.ts, name, e.thread, e.node, e.seq, e.arg
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvRow {
    pub ts_ns: u64,
    pub tp: Tp,
    pub thread: u32,
    pub node: u32,
    pub seq: u64,
    pub arg: u64,
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>, TraceError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line != CSV_HEADER {
                return Err(TraceError::Parse(format!("unexpected header '{line}'")));
            }
            continue;
        }
        let bad = || TraceError::Parse(format!("line {}: '{line}'", n + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        rows.push(CsvRow {
            ts_ns: f[0].parse().map_err(|_| bad())?,
            tp: Tp::from_name(f[1]).ok_or_else(bad)?,
            thread: f[2].parse().map_err(|_| bad())?,
            node: f[3].parse().map_err(|_| bad())?,
            seq: f[4].parse().map_err(|_| bad())?,
            arg: f[5].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

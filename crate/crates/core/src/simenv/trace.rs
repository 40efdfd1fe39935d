//! Episode traces as JSON lines, one step per line:
//! `{"t":…, "state":[…], "action":[…], "reward":…, "phase":…}`.
//! `state` is the flattened observation **before** the action, `action` is
//! the raw (denormalized) command, `reward` follows the resulting state.

use crate::Result;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub phase: String,
}

pub fn write_episode_jsonl(path: &Path, steps: &[TraceStep]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for s in steps {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episode_jsonl(path: &Path) -> Result<Vec<TraceStep>> {
    let file = std::fs::File::open(path)?;
    let r = BufReader::new(file);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip() {
        let steps = vec![
            TraceStep {
                t: 0,
                state: vec![0.5, 0.25, -1.0],
                action: vec![0.1, -0.2, 4.0, 0.0],
                reward: 0.04,
                phase: "reach".into(),
            },
            TraceStep {
                t: 1,
                state: vec![0.51, 0.24, -1.0],
                action: vec![0.0, 0.0, 0.0, 0.0],
                reward: 0.05,
                phase: "descend".into(),
            },
        ];
        let dir = std::env::temp_dir().join(format!("trace_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ep.jsonl");
        write_episode_jsonl(&path, &steps).unwrap();
        let back = read_episode_jsonl(&path).unwrap();
        assert_eq!(steps, back);
        std::fs::remove_dir_all(&dir).ok();
    }
}

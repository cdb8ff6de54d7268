//! Canonical line-delimited conversation format:
//! `{"id", "split", "utterances": [{"speaker", "text", "item_mentions",
//! "entity_mentions"}]}`, one conversation per line. Spans are byte offsets.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::Conversation;
use crate::error::{CrsError, Result};

pub fn write_canonical(path: impl AsRef<Path>, conversations: &[Conversation]) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| CrsError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for conv in conversations {
        let line = serde_json::to_string(conv).expect("conversation serializes");
        writeln!(w, "{line}").map_err(|e| CrsError::io(path, e))?;
    }
    w.flush().map_err(|e| CrsError::io(path, e))
}

pub fn read_canonical(path: impl AsRef<Path>) -> Result<Vec<Conversation>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| CrsError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CrsError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let conv: Conversation = serde_json::from_str(&line)
            .map_err(|e| CrsError::parse(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        conv.validate()?;
        out.push(conv);
    }
    Ok(out)
}

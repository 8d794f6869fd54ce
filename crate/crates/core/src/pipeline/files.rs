//! Stage files: a `#tbp <kind> key=value ...` header followed by one record
//! per line. Sharding deals body lines round-robin; merging interleaves them
//! back.

use std::fmt;

use super::PipelineError;

const MAGIC: &str = "#tbp";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub kind: String,
    pub fields: Vec<(String, String)>,
}

impl Header {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            fields: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.fields.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.fields.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, PipelineError> {
        self.get(key)
            .ok_or_else(|| PipelineError::Job(format!("header lacks '{key}'")))
    }

    /// `(index, count)`; unsharded files are `0/1`.
    pub fn shard(&self) -> Result<(usize, usize), PipelineError> {
        let text = self.get("shard").unwrap_or("0/1");
        let bad = || PipelineError::Job(format!("bad shard field '{text}'"));
        let (i, k) = text.split_once('/').ok_or_else(bad)?;
        let (i, k): (usize, usize) = (i.parse().map_err(|_| bad())?, k.parse().map_err(|_| bad())?);
        if k == 0 || i >= k {
            return Err(bad());
        }
        Ok((i, k))
    }

    pub fn set_shard(&mut self, index: usize, count: usize) {
        self.set("shard", format!("{index}/{count}"));
    }

    /// Equal apart from the shard field.
    pub fn compatible(&self, other: &Header) -> bool {
        let strip = |h: &Header| -> Vec<(String, String)> {
            h.fields.iter().filter(|(k, _)| k != "shard").cloned().collect()
        };
        self.kind == other.kind && strip(self) == strip(other)
    }

    pub fn parse(line: &str) -> Result<Self, PipelineError> {
        let mut parts = line.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(PipelineError::Job("missing '#tbp' header line".into()));
        }
        let kind = parts
            .next()
            .ok_or_else(|| PipelineError::Job("header lacks a file kind".into()))?;
        let mut h = Header::new(kind);
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| PipelineError::Job(format!("bad header field '{p}'")))?;
            h.fields.push((k.to_string(), v.to_string()));
        }
        Ok(h)
    }
}

impl fmt::Display for Header {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{MAGIC} {}", self.kind)?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

/// A parsed stage file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageFile {
    pub header: Header,
    pub lines: Vec<String>,
}

impl StageFile {
    pub fn new(header: Header, lines: Vec<String>) -> Self {
        Self { header, lines }
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut it = text.lines();
        let header = Header::parse(it.next().unwrap_or(""))?;
        let lines = it
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect();
        Ok(Self { header, lines })
    }

    pub fn expect_kind(&self, kinds: &[&str]) -> Result<(), PipelineError> {
        if kinds.contains(&self.header.kind.as_str()) {
            Ok(())
        } else {
            Err(PipelineError::Job(format!(
                "expected a {} file, got '{}'",
                kinds.join(" or "),
                self.header.kind
            )))
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = self.header.to_string();
        out.push('\n');
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }
}

/// Number of items shard `index` of `count` receives from `total`.
pub fn shard_len(total: usize, count: usize, index: usize) -> usize {
    if index >= total {
        0
    } else {
        (total - index).div_ceil(count)
    }
}

/// Lines `index, index + count, ...` of an unsharded file.
pub fn shard(file: &StageFile, count: usize, index: usize) -> Result<StageFile, PipelineError> {
    if count == 0 || index >= count {
        return Err(PipelineError::Job(format!(
            "shard index {index} out of range for {count} shards"
        )));
    }
    if file.header.shard()? != (0, 1) {
        return Err(PipelineError::Job("input is already a shard".into()));
    }
    let mut header = file.header.clone();
    header.set_shard(index, count);
    let lines = file
        .lines
        .iter()
        .skip(index)
        .step_by(count)
        .cloned()
        .collect();
    Ok(StageFile::new(header, lines))
}

/// Reassembles `count` shards, given in any order, into the original order.
pub fn merge(parts: &[StageFile], count: usize) -> Result<StageFile, PipelineError> {
    if count == 0 {
        return Err(PipelineError::Job("shard count must be positive".into()));
    }
    let mut slots: Vec<Option<&StageFile>> = vec![None; count];
    for p in parts {
        let (i, k) = p.header.shard()?;
        if k != count {
            return Err(PipelineError::Job(format!(
                "shard {i}/{k} does not belong to a {count}-way split"
            )));
        }
        if slots[i].is_some() {
            return Err(PipelineError::Job(format!("shard {i} given twice")));
        }
        slots[i] = Some(p);
    }
    if let Some(missing) = slots.iter().position(Option::is_none) {
        return Err(PipelineError::Job(format!("missing shard {missing}")));
    }
    let slots: Vec<&StageFile> = slots.into_iter().map(|s| s.expect("checked")).collect();
    let first = &slots[0].header;
    for s in &slots[1..] {
        if !s.header.compatible(first) {
            return Err(PipelineError::Job(format!(
                "header mismatch: '{}' vs '{}'",
                first, s.header
            )));
        }
    }
    let total: usize = slots.iter().map(|s| s.lines.len()).sum();
    for (i, s) in slots.iter().enumerate() {
        if s.lines.len() != shard_len(total, count, i) {
            return Err(PipelineError::Job(format!(
                "shard {i} has {} lines, expected {}",
                s.lines.len(),
                shard_len(total, count, i)
            )));
        }
    }
    let mut lines = Vec::with_capacity(total);
    for n in 0..total {
        lines.push(slots[n % count].lines[n / count].clone());
    }
    let mut header = first.clone();
    header.set_shard(0, 1);
    Ok(StageFile::new(header, lines))
}

/// Positional fields plus trailing `key=value` annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordLine {
    pub fields: Vec<String>,
    pub tags: Vec<(String, String)>,
}

impl RecordLine {
    pub fn parse(line: &str) -> Self {
        let mut fields = Vec::new();
        let mut tags = Vec::new();
        for tok in line.split_whitespace() {
            match tok.split_once('=') {
                Some((k, v)) if !fields.is_empty() => tags.push((k.to_string(), v.to_string())),
                _ => fields.push(tok.to_string()),
            }
        }
        Self { fields, tags }
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set_tag(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.tags.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.tags.push((key.to_string(), value)),
        }
    }

    /// Appends `entry` to the `;`-separated stage trail.
    pub fn push_trail(&mut self, entry: &str) {
        let trail = match self.tag("trail") {
            Some(t) if !t.is_empty() => format!("{t};{entry}"),
            _ => entry.to_string(),
        };
        self.set_tag("trail", trail);
    }

    pub fn render(&self) -> String {
        let mut out = self.fields.join(" ");
        for (k, v) in &self.tags {
            out.push_str(&format!(" {k}={v}"));
        }
        out
    }
}

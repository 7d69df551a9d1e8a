//! Question files: one example per line,
//! `question<TAB>anchor|anchor<TAB>answer|answer[<TAB>seq|seq]`, where each
//! gold sequence is space-separated relation names. Blank lines and `#`
//! comments are skipped.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::coalesce::{EntitySet, RelationSeq};
use crate::error::DatasetError;
use crate::kg::KnowledgeGraph;
use crate::scorer::QAExample;

fn entity_list(g: &KnowledgeGraph, field: &str, line: usize) -> Result<EntitySet, DatasetError> {
    let mut ids = Vec::new();
    for name in field.split('|').map(str::trim).filter(|n| !n.is_empty()) {
        ids.push(g.entity_id(name).map_err(|e| DatasetError::Parse { line, message: e.to_string() })?);
    }
    Ok(EntitySet::from_unsorted(ids))
}

pub fn parse_example(g: &KnowledgeGraph, text: &str, line: usize) -> Result<QAExample, DatasetError> {
    let fields: Vec<&str> = text.split('\t').collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(DatasetError::Parse { line, message: format!("expected 3 or 4 tab-separated fields, found {}", fields.len()) });
    }
    let anchors = entity_list(g, fields[1], line)?;
    if anchors.is_empty() {
        return Err(DatasetError::Parse { line, message: "no anchors".into() });
    }
    let answers = entity_list(g, fields[2], line)?;
    let mut ex = QAExample::new(fields[0], anchors, answers);
    if let Some(golds) = fields.get(3) {
        let seqs = golds
            .split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| RelationSeq::parse(g, s).map_err(|e| DatasetError::Parse { line, message: e.to_string() }))
            .collect::<Result<Vec<_>, _>>()?;
        ex.gold_sequences = Some(seqs);
    }
    Ok(ex)
}

pub fn parse_dataset<R: BufRead>(g: &KnowledgeGraph, reader: R) -> Result<Vec<QAExample>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io { path: "<input>".into(), source })?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_example(g, trimmed, i + 1)?);
    }
    Ok(out)
}

pub fn load_dataset(g: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<Vec<QAExample>, DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::open(path).map_err(io_err)?;
    parse_dataset(g, BufReader::new(file)).map_err(|e| match e {
        DatasetError::Io { source, .. } => io_err(source),
        other => other,
    })
}

pub fn format_example(g: &KnowledgeGraph, ex: &QAExample) -> String {
    let names = |s: &EntitySet| s.iter().map(|&v| g.entity_name(v)).collect::<Vec<_>>().join("|");
    let mut line = format!("{}\t{}\t{}", ex.text, names(&ex.anchors), names(&ex.answers));
    if let Some(golds) = &ex.gold_sequences {
        line.push('\t');
        line.push_str(&golds.iter().map(|s| s.display(g).to_string()).collect::<Vec<_>>().join("|"));
    }
    line
}

pub fn write_dataset<W: Write>(g: &KnowledgeGraph, mut out: W, examples: &[QAExample]) -> std::io::Result<()> {
    for ex in examples {
        writeln!(out, "{}", format_example(g, ex))?;
    }
    out.flush()
}

//! Embedding-array output and pair scoring over plain text files.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;

use rayon::prelude::*;

use super::ToolsError;
use crate::model::EmbeddingModel;

const EM_MAGIC: &[u8; 4] = b"SPEM";
// Lines buffered per pass; keeps memory proportional to the chunk, not the file.
const CHUNK_LINES: usize = 4096;

/// Counters from [`embed_file`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedSummary {
    pub sentences: usize,
    pub dim: usize,
}

/// Counters from [`score_file`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreSummary {
    pub pairs: usize,
}

/// Embeds one sentence per input line into a binary array file.
///
/// Output layout (little-endian): magic `SPEM`, u32 sentence count, u32
/// dimension, then the f32 rows in input order. Sentences are embedded in
/// length-sorted batches of `batch_size`, which never changes the values or
/// their order. Input streams through in bounded chunks.
pub fn embed_file(
    model_path: impl AsRef<Path>,
    sentences_path: impl AsRef<Path>,
    out_path: impl AsRef<Path>,
    batch_size: usize,
) -> Result<EmbedSummary, ToolsError> {
    assert!(batch_size > 0, "batch_size must be positive");
    let model = EmbeddingModel::load(model_path)?;
    let dim = model.dim();
    let reader = BufReader::new(fs::File::open(sentences_path)?);
    let out_path = out_path.as_ref();
    let dir = out_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    let mut count: u32 = 0;
    {
        let mut w = io::BufWriter::new(tmp.as_file_mut());
        w.write_all(EM_MAGIC)?;
        w.write_all(&0u32.to_le_bytes())?; // patched once the count is known
        w.write_all(&(dim as u32).to_le_bytes())?;

        let mut lines = reader.lines();
        loop {
            let mut chunk: Vec<String> = Vec::with_capacity(CHUNK_LINES);
            for line in lines.by_ref().take(CHUNK_LINES) {
                chunk.push(line?);
            }
            if chunk.is_empty() {
                break;
            }
            let rows = embed_chunk(&model, &chunk, batch_size);
            for row in &rows {
                for &x in row {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            count += chunk.len() as u32;
        }
        w.flush()?;
    }
    tmp.as_file_mut().seek(SeekFrom::Start(4))?;
    tmp.as_file_mut().write_all(&count.to_le_bytes())?;
    tmp.persist(out_path).map_err(|e| e.error)?;
    Ok(EmbedSummary {
        sentences: count as usize,
        dim,
    })
}

// Length-sorted batched embedding of one chunk, output in input order.
fn embed_chunk(model: &EmbeddingModel, sentences: &[String], batch_size: usize) -> Vec<Vec<f32>> {
    let encoded: Vec<Vec<u32>> = sentences
        .iter()
        .map(|s| model.vocab().encode(s))
        .collect();
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.sort_by_key(|&i| (encoded[i].len(), i));
    let mut rows: Vec<Vec<f32>> = vec![Vec::new(); sentences.len()];
    for batch in order.chunks(batch_size) {
        let embedded: Vec<(usize, Vec<f32>)> = batch
            .par_iter()
            .map(|&i| {
                let e = model
                    .embed_tokens(&encoded[i], crate::model::Side::Src, None)
                    .expect("encoder ids in range");
                (i, e)
            })
            .collect();
        for (i, e) in embedded {
            rows[i] = e;
        }
    }
    rows
}

/// Reads an embedding array file back as `(count, dim, row-major values)`.
pub fn read_embedding_array(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>), ToolsError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(ToolsError::Format("file shorter than header".into()));
    }
    if &bytes[0..4] != EM_MAGIC {
        return Err(ToolsError::Format("bad magic".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 4 * n * d;
    if bytes.len() != expected {
        return Err(ToolsError::Format(format!(
            "payload is {} bytes but the header implies {}",
            bytes.len() - 12,
            expected - 12
        )));
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((n, d, values))
}

/// Writes an embedding array file from rows already in memory.
pub fn write_embedding_array(
    path: impl AsRef<Path>,
    dim: usize,
    rows: &[Vec<f32>],
) -> Result<(), ToolsError> {
    let mut bytes = Vec::with_capacity(12 + 4 * dim * rows.len());
    bytes.extend_from_slice(EM_MAGIC);
    bytes.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    for row in rows {
        debug_assert_eq!(row.len(), dim);
        for &x in row {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    super::write_atomic(path.as_ref(), &bytes)?;
    Ok(())
}

/// Appends the cosine score (six decimal places) to each `sent1<TAB>sent2`
/// line, preserving order. With no output path the scored lines go to
/// standard output.
pub fn score_file(
    model_path: impl AsRef<Path>,
    pairs_path: impl AsRef<Path>,
    out_path: Option<&Path>,
) -> Result<ScoreSummary, ToolsError> {
    let model = EmbeddingModel::load(model_path)?;
    let pairs_path = pairs_path.as_ref();
    let path_label = pairs_path.display().to_string();
    let reader = BufReader::new(fs::File::open(pairs_path)?);

    let mut tmp = match out_path {
        Some(p) => {
            let dir = p
                .parent()
                .filter(|d| !d.as_os_str().is_empty())
                .unwrap_or_else(|| Path::new("."));
            Some(tempfile::NamedTempFile::new_in(dir)?)
        }
        None => None,
    };
    let stdout = io::stdout();
    let mut sink: Box<dyn Write> = match &mut tmp {
        Some(t) => Box::new(io::BufWriter::new(t.as_file_mut())),
        None => Box::new(stdout.lock()),
    };

    let mut lines = reader.lines();
    let mut line_no = 0usize;
    let mut pairs_written = 0usize;
    loop {
        let mut chunk: Vec<(usize, String, String)> = Vec::with_capacity(CHUNK_LINES);
        for line in lines.by_ref().take(CHUNK_LINES) {
            let line = line?;
            line_no += 1;
            let mut fields = line.split('\t');
            match (fields.next(), fields.next(), fields.next()) {
                (Some(s1), Some(s2), None) => chunk.push((line_no, s1.to_string(), s2.to_string())),
                (_, None, _) => {
                    return Err(ToolsError::Parse {
                        path: path_label,
                        line: line_no,
                        message: "expected two tab-separated sentences".into(),
                    })
                }
                _ => {
                    return Err(ToolsError::Parse {
                        path: path_label,
                        line: line_no,
                        message: "expected exactly two tab-separated sentences".into(),
                    })
                }
            }
        }
        if chunk.is_empty() {
            break;
        }
        let scores: Vec<f32> = chunk
            .par_iter()
            .map(|(_, s1, s2)| model.score_pair(s1, s2))
            .collect();
        for ((_, s1, s2), score) in chunk.iter().zip(scores) {
            writeln!(sink, "{s1}\t{s2}\t{score:.6}")?;
        }
        pairs_written += chunk.len();
    }
    sink.flush()?;
    drop(sink);
    if let (Some(t), Some(p)) = (tmp, out_path) {
        t.persist(p).map_err(|e| e.error)?;
    }
    Ok(ScoreSummary {
        pairs: pairs_written,
    })
}

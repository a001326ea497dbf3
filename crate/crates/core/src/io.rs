//! File formats: network description, MNIST IDX, bAbI-style stories and
//! training checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid_input, Error, Result};
use crate::network::NetworkGraph;
use crate::sim::Story;
use crate::TOOL_VERSION;

pub const GRAPH_FORMAT: &str = "spikeplace-graph";
pub const GRAPH_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "spikeplace-checkpoint";

fn malformed(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Format { what, detail: detail.into() }
}

/// Where the weights of a graph file live.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    /// File name relative to the graph file.
    pub file: String,
    pub sha256: String,
    /// Start of every block's weights, in f64 entries.
    pub offsets: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GraphDoc {
    format: String,
    version: u32,
    tool: String,
    graph_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sidecar: Option<Sidecar>,
    graph: NetworkGraph,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".weights.bin");
    path.with_file_name(name)
}

/// Writes a graph as pretty JSON. With `sidecar`, block weights go to
/// `<path>.weights.bin` as little-endian f64 and the JSON keeps offsets.
pub fn write_graph(path: &Path, graph: &NetworkGraph, config_hash: Option<&str>, sidecar: bool) -> Result<()> {
    let mut stored = graph.clone();
    let mut side = None;
    if sidecar {
        let mut bytes = Vec::new();
        let mut offsets = Vec::with_capacity(stored.blocks.len());
        let mut at = 0u64;
        for b in &mut stored.blocks {
            offsets.push(at);
            at += b.weights.len() as u64;
            for w in std::mem::take(&mut b.weights) {
                bytes.extend_from_slice(&w.to_le_bytes());
            }
        }
        let file = sidecar_path(path);
        fs::write(&file, &bytes)?;
        side = Some(Sidecar {
            file: file.file_name().unwrap().to_string_lossy().into_owned(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            offsets,
        });
    }
    let doc = GraphDoc {
        format: GRAPH_FORMAT.into(),
        version: GRAPH_VERSION,
        tool: TOOL_VERSION.into(),
        graph_hash: graph.hash(),
        config_hash: config_hash.map(String::from),
        sidecar: side,
        graph: stored,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a graph file, filling weights from the sidecar when present and
/// checking the stored graph hash.
pub fn read_graph(path: &Path) -> Result<NetworkGraph> {
    let text = fs::read_to_string(path)?;
    let doc: GraphDoc = serde_json::from_str(&text).map_err(|e| malformed("graph file", e.to_string()))?;
    if doc.format != GRAPH_FORMAT || doc.version != GRAPH_VERSION {
        return Err(malformed("graph file", format!("unsupported format {} v{}", doc.format, doc.version)));
    }
    let mut graph = doc.graph;
    if let Some(side) = &doc.sidecar {
        let bytes = fs::read(path.with_file_name(&side.file))?;
        if hex::encode(Sha256::digest(&bytes)) != side.sha256 {
            return Err(malformed("weights sidecar", "checksum mismatch"));
        }
        if side.offsets.len() != graph.blocks.len() {
            return Err(malformed("weights sidecar", "offset table does not match the block list"));
        }
        let weights: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        for (b, &off) in graph.blocks.iter_mut().zip(&side.offsets) {
            let n = b.delays.len();
            let off = off as usize;
            let slice = weights
                .get(off..off + n)
                .ok_or_else(|| malformed("weights sidecar", format!("block {} runs past the end", b.tag)))?;
            b.weights = slice.to_vec();
        }
    }
    graph.validate()?;
    if graph.hash() != doc.graph_hash {
        return Err(malformed("graph file", "graph hash mismatch"));
    }
    Ok(graph)
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| malformed("IDX file", "truncated header"))
}

/// Images of an IDX3 file as flat row-major byte vectors.
pub fn read_idx_images(path: &Path) -> Result<Vec<Vec<u8>>> {
    parse_idx_images(&fs::read(path)?)
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<u8>>> {
    if be_u32(bytes, 0)? != 0x0803 {
        return Err(malformed("IDX file", "not an unsigned-byte image file (magic 0x803)"));
    }
    let n = be_u32(bytes, 4)? as usize;
    let size = be_u32(bytes, 8)? as usize * be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != n * size {
        return Err(malformed("IDX file", format!("expected {} pixel bytes, found {}", n * size, body.len())));
    }
    Ok(body.chunks_exact(size.max(1)).take(n).map(|c| c.to_vec()).collect())
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&fs::read(path)?)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    if be_u32(bytes, 0)? != 0x0801 {
        return Err(malformed("IDX file", "not a label file (magic 0x801)"));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(malformed("IDX file", format!("expected {n} labels, found {}", body.len())));
    }
    Ok(body.to_vec())
}

/// `(pixels, label)` pairs of the `train` or `test` split in `dir`, using
/// the standard `*-images-idx3-ubyte` / `*-labels-idx1-ubyte` names.
pub fn load_mnist(dir: &Path, split: &str) -> Result<Vec<(Vec<u8>, u8)>> {
    let images = read_idx_images(&dir.join(format!("{split}-images-idx3-ubyte")))?;
    let labels = read_idx_labels(&dir.join(format!("{split}-labels-idx1-ubyte")))?;
    if images.len() != labels.len() {
        return Err(invalid_input(format!("{} images but {} labels", images.len(), labels.len())));
    }
    Ok(images.into_iter().zip(labels).collect())
}

/// Word to id map, ids assigned in order of first appearance.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordMap {
    ids: BTreeMap<String, u32>,
    words: Vec<String>,
}

impl WordMap {
    pub fn id(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.ids.insert(word.to_string(), id);
        self.words.push(word.to_string());
        id
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// One `word id` pair per line.
    pub fn to_text(&self) -> String {
        self.words.iter().enumerate().map(|(i, w)| format!("{w} {i}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = WordMap::default();
        for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let (Some(w), Some(id), None) = (it.next(), it.next(), it.next()) else {
                return Err(malformed("word map", format!("line {}: expected `word id`", ln + 1)));
            };
            let id: u32 = id.parse().map_err(|_| malformed("word map", format!("line {}: bad id", ln + 1)))?;
            if id as usize != m.words.len() {
                return Err(malformed("word map", format!("line {}: ids must be consecutive from 0", ln + 1)));
            }
            m.id(w);
        }
        Ok(m)
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Parses bAbI-style text: numbered story lines, question lines of the form
/// `n question?<TAB>answer<TAB>supporting ids`, and a new story whenever
/// the numbering restarts at 1. Each question yields one [`Story`] holding
/// the story lines seen so far.
pub fn parse_stories(text: &str, words: &mut WordMap) -> Result<Vec<Story>> {
    let mut out = Vec::new();
    let mut sentences: Vec<Vec<u32>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        let bad = |d: &str| malformed("story file", format!("line {}: {d}", ln + 1));
        let (num, rest) = line.trim_start().split_once(' ').ok_or_else(|| bad("expected a line number"))?;
        let num: u32 = num.parse().map_err(|_| bad("expected a line number"))?;
        if num == 1 {
            sentences.clear();
        }
        let mut parts = rest.split('\t');
        let body = parts.next().unwrap_or_default();
        match parts.next() {
            Some(answer) => {
                let question: Vec<u32> = tokens(body).iter().map(|w| words.id(w)).collect();
                let answer = tokens(answer);
                let [answer] = answer.as_slice() else {
                    return Err(bad("answer must be a single token"));
                };
                out.push(Story { sentences: sentences.clone(), question, answer: Some(words.id(answer)) });
            }
            None => sentences.push(tokens(body).iter().map(|w| words.id(w)).collect()),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub tool: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub graph: NetworkGraph,
    /// Free-form training summary.
    #[serde(default)]
    pub report: serde_json::Value,
}

impl Checkpoint {
    pub fn new(graph: NetworkGraph, seed: u64, config: serde_json::Value, config_hash: String) -> Self {
        Self {
            format: format!("{CHECKPOINT_FORMAT} v1"),
            tool: TOOL_VERSION.into(),
            seed,
            config_hash,
            config,
            graph,
            report: serde_json::Value::Null,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c: Checkpoint =
            serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| malformed("checkpoint", e.to_string()))?;
        if !c.format.starts_with(CHECKPOINT_FORMAT) {
            return Err(malformed("checkpoint", format!("unknown format {}", c.format)));
        }
        c.graph.validate()?;
        Ok(c)
    }
}

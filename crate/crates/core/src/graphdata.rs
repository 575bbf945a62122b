//! Attributed-graph datasets and their on-disk container.
//!
//! # Container layout
//!
//! ```text
//! TRUSSMODAL-GRAPHDATA\n                 magic line
//! {json header}\n                         one line of JSON metadata
//! input section:     blocks for graph 0, graph 1, ...
//! reference section: blocks for graph 0, graph 1, ...
//! ```
//!
//! A block is a little-endian `u64` element count followed by that many
//! little-endian IEEE-754 `f64` values; matrices are stored row-major. Each
//! graph owns one input block (its `N x T` signals) and four reference blocks
//! (frequencies, damping ratios, `N x n_modes` shapes, Rayleigh `[alpha,
//! beta]`). Ground truth lives in its own section so consumers that only
//! need inputs never touch it. The header carries the manifest, per-graph
//! metadata and a SHA-256 checksum over each graph's blocks.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::fem::{ModalReference, SimulationConfig};
use crate::population::{TrapezoidSpec, TrussSpec};
use crate::seed;
use crate::sensing::{SensingConfig, SignalSet};

pub const MAGIC: &str = "TRUSSMODAL-GRAPHDATA";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// One structure: topology, reconstructed signals and (held-out) reference.
#[derive(Debug)]
pub struct AttributedGraph {
    pub id: usize,
    pub truss: TrussSpec,
    pub signals: SignalSet,
    pub split: Split,
    reference: ModalReference,
    reference_reads: AtomicUsize,
}

impl Clone for AttributedGraph {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            truss: self.truss.clone(),
            signals: self.signals.clone(),
            split: self.split,
            reference: self.reference.clone(),
            reference_reads: AtomicUsize::new(0),
        }
    }
}

impl AttributedGraph {
    pub fn new(id: usize, truss: TrussSpec, signals: SignalSet, reference: ModalReference, split: Split) -> Result<Self> {
        if signals.n_nodes() != truss.n_nodes() {
            return invalid(format!("graph {id}: {} signal rows for {} nodes", signals.n_nodes(), truss.n_nodes()));
        }
        if reference.mode_shapes.nrows() != truss.n_nodes() {
            return invalid(format!("graph {id}: reference shapes do not cover every node"));
        }
        Ok(Self { id, truss, signals, split, reference, reference_reads: AtomicUsize::new(0) })
    }

    /// Ground truth for evaluation. Every call is counted so tests can audit
    /// that unsupervised stages never read it.
    pub fn reference(&self) -> &ModalReference {
        self.reference_reads.fetch_add(1, Ordering::Relaxed);
        &self.reference
    }

    pub fn reference_reads(&self) -> usize {
        self.reference_reads.load(Ordering::Relaxed)
    }

    pub fn n_nodes(&self) -> usize {
        self.truss.n_nodes()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }

    pub fn of(graphs: &[AttributedGraph]) -> Self {
        let mut c = Self::default();
        for g in graphs {
            match g.split {
                Split::Train => c.train += 1,
                Split::Validation => c.validation += 1,
                Split::Test => c.test += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub population_seed: u64,
    pub boundary: TrapezoidSpec,
    pub simulation: SimulationConfig,
    pub sensing: SensingConfig,
    pub counts: SplitCounts,
    /// Hex SHA-256 per graph, in graph order.
    pub checksums: Vec<String>,
    pub units: Units,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub signals: String,
    pub frequencies: String,
    pub coordinates: String,
    pub youngs_modulus: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            signals: "dimensionless (acceleration / normalization_scale, m/s^2)".into(),
            frequencies: "Hz".into(),
            coordinates: "m".into(),
            youngs_modulus: "Pa".into(),
        }
    }
}

/// Provenance recorded in the manifest alongside the graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub population_seed: u64,
    pub boundary: TrapezoidSpec,
    pub simulation: SimulationConfig,
    pub sensing: SensingConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphHeader {
    id: usize,
    split: Split,
    truss: TrussSpec,
    mask: Vec<bool>,
    fs_hz: f64,
    normalization_scale: f64,
    n_samples: usize,
    n_modes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileHeader {
    manifest: DatasetManifest,
    graphs: Vec<GraphHeader>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        v.extend(m.row(r).iter());
    }
    v
}

fn write_block(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn input_blocks(g: &AttributedGraph) -> Vec<Vec<f64>> {
    vec![row_major(&g.signals.signals)]
}

fn reference_blocks(r: &ModalReference) -> Vec<Vec<f64>> {
    vec![r.frequencies_hz.clone(), r.damping_ratios.clone(), row_major(&r.mode_shapes), vec![r.rayleigh_alpha, r.rayleigh_beta]]
}

fn checksum(blocks: &[Vec<f64>]) -> String {
    let mut h = Sha256::new();
    for b in blocks {
        h.update((b.len() as u64).to_le_bytes());
        for v in b {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn graph_checksum(g: &AttributedGraph) -> String {
    let mut blocks = input_blocks(g);
    blocks.extend(reference_blocks(&g.reference));
    checksum(&blocks)
}

/// Write all graphs into one container file and return its manifest.
pub fn save(graphs: &[AttributedGraph], info: &DatasetInfo, path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        population_seed: info.population_seed,
        boundary: info.boundary.clone(),
        simulation: info.simulation.clone(),
        sensing: info.sensing.clone(),
        counts: SplitCounts::of(graphs),
        checksums: graphs.iter().map(graph_checksum).collect(),
        units: Units::default(),
    };
    let header = FileHeader {
        manifest: manifest.clone(),
        graphs: graphs
            .iter()
            .map(|g| GraphHeader {
                id: g.id,
                split: g.split,
                truss: g.truss.clone(),
                mask: g.signals.mask.clone(),
                fs_hz: g.signals.fs_hz,
                normalization_scale: g.signals.normalization_scale,
                n_samples: g.signals.n_samples(),
                n_modes: g.reference.n_modes(),
            })
            .collect(),
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC.as_bytes());
    buf.push(b'\n');
    buf.extend_from_slice(serde_json::to_string(&header)?.as_bytes());
    buf.push(b'\n');
    for g in graphs {
        for b in input_blocks(g) {
            write_block(&mut buf, &b);
        }
    }
    for g in graphs {
        for b in reference_blocks(&g.reference) {
            write_block(&mut buf, &b);
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(manifest)
}

struct BlockReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BlockReader<'_> {
    fn block(&mut self, graph_id: usize) -> Result<Vec<f64>> {
        let err = || Error::Checksum { graph_id };
        let len_bytes = self.bytes.get(self.pos..self.pos + 8).ok_or_else(err)?;
        let len = u64::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        self.pos += 8;
        let end = len.checked_mul(8).and_then(|n| n.checked_add(self.pos)).ok_or_else(err)?;
        let data = self.bytes.get(self.pos..end).ok_or_else(err)?;
        self.pos = end;
        Ok(data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn matrix(rows: usize, cols: usize, values: Vec<f64>, graph_id: usize) -> Result<DMatrix<f64>> {
    if values.len() != rows * cols {
        return Err(Error::Checksum { graph_id });
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Read only the header (manifest and per-graph metadata).
pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let bytes = fs::read(path)?;
    let (header, _) = parse_header(&bytes)?;
    Ok(header.manifest)
}

fn parse_header(bytes: &[u8]) -> Result<(FileHeader, usize)> {
    let magic_end = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format("missing magic line".into()))?;
    if &bytes[..magic_end] != MAGIC.as_bytes() {
        return Err(Error::Format("not a graph dataset container".into()));
    }
    let rest = &bytes[magic_end + 1..];
    let header_end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format("unterminated header".into()))?;
    let value: serde_json::Value = serde_json::from_slice(&rest[..header_end])?;
    let found = value.pointer("/manifest/schema_version").and_then(|v| v.as_u64()).ok_or_else(|| Error::Format("header has no schema version".into()))? as u32;
    if found != SCHEMA_VERSION {
        return Err(Error::Version { found, expected: SCHEMA_VERSION });
    }
    let header: FileHeader = serde_json::from_value(value)?;
    Ok((header, magic_end + 1 + header_end + 1))
}

/// Load every graph, verifying per-graph checksums.
pub fn load(path: impl AsRef<Path>) -> Result<(Vec<AttributedGraph>, DatasetManifest)> {
    let bytes = fs::read(path)?;
    let (header, body) = parse_header(&bytes)?;
    let mut reader = BlockReader { bytes: &bytes, pos: body };
    let mut inputs = Vec::with_capacity(header.graphs.len());
    for g in &header.graphs {
        inputs.push(reader.block(g.id)?);
    }
    let mut graphs = Vec::with_capacity(header.graphs.len());
    for (i, (g, signals)) in header.graphs.into_iter().zip(inputs).enumerate() {
        let n = g.truss.n_nodes();
        let freqs = reader.block(g.id)?;
        let zetas = reader.block(g.id)?;
        let shapes = reader.block(g.id)?;
        let ray = reader.block(g.id)?;
        let blocks = vec![signals, freqs, zetas, shapes, ray];
        if header.manifest.checksums.get(i) != Some(&checksum(&blocks)) {
            return Err(Error::Checksum { graph_id: g.id });
        }
        let [signals, freqs, zetas, shapes, ray]: [Vec<f64>; 5] = blocks.try_into().unwrap();
        if ray.len() != 2 {
            return Err(Error::Checksum { graph_id: g.id });
        }
        let reference = ModalReference {
            mode_shapes: matrix(n, g.n_modes, shapes, g.id)?,
            frequencies_hz: freqs,
            damping_ratios: zetas,
            rayleigh_alpha: ray[0],
            rayleigh_beta: ray[1],
        };
        let signal_set =
            SignalSet { signals: matrix(n, g.n_samples, signals, g.id)?, mask: g.mask, fs_hz: g.fs_hz, normalization_scale: g.normalization_scale };
        graphs.push(AttributedGraph::new(g.id, g.truss, signal_set, reference, g.split)?);
    }
    if reader.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after the reference section".into()));
    }
    Ok((graphs, header.manifest))
}

/// Integer split sizes by largest remainder; they always sum to `n`.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<SplitCounts> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return invalid("split fractions must be non-negative and sum to 1");
    }
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut k = 0;
    while counts.iter().sum::<usize>() < n {
        counts[order[k % 3]] += 1;
        k += 1;
    }
    for i in 0..3 {
        if fractions[i] > 0.0 && counts[i] == 0 {
            return invalid(format!("{} split is empty for fraction {}", Split::ALL[i].name(), fractions[i]));
        }
    }
    Ok(SplitCounts { train: counts[0], validation: counts[1], test: counts[2] })
}

/// Deterministic split tags for `n` graphs: a seeded shuffle, then the
/// first `train` indices are train, the next `validation`, the rest test.
pub fn split(n: usize, fractions: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    let counts = split_counts(n, fractions)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let mut tags = vec![Split::Train; n];
    for (rank, &i) in idx.iter().enumerate() {
        tags[i] = if rank < counts.train {
            Split::Train
        } else if rank < counts.train + counts.validation {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(tags)
}

/// Generate, simulate and sense a whole population. Excitation seeds and
/// split tags are child seeds of `info.population_seed`.
pub fn build(info: &DatasetInfo, count: usize, fractions: [f64; 3]) -> Result<Vec<AttributedGraph>> {
    let population = crate::population::generate_population(count, &info.boundary, info.population_seed)?;
    let tags = split(count, fractions, seed::derive_named(info.population_seed, "split"))?;
    let excitation = seed::derive_named(info.population_seed, "excitation");
    population
        .into_iter()
        .zip(tags)
        .enumerate()
        .map(|(i, (truss, tag))| {
            let (history, reference) = crate::fem::simulate(&truss, &info.simulation, seed::derive(excitation, i as u64))?;
            let signals = crate::sensing::sense(&history, &truss, &info.sensing)?;
            AttributedGraph::new(i, truss, signals, reference, tag)
        })
        .collect()
}

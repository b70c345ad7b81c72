//! Linear-attention Transformer layers, prompt layouts, and helpers for
//! assembling block-sparse weights.
//!
//! A layer maps `H ↦ Attn(H) = H + Σᵢ W_Vⁱ H (W_Kⁱ H)ᵀ (W_Qⁱ H)` and then,
//! if it has a feed-forward part, `Attn(H) + W₂ σ(W₁ Attn(H))` column by
//! column. There is no softmax, mask or `1/n` scaling.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{shape, Error, Result};
use crate::linalg::{matmul, DenseMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    pub w_v: DenseMatrix,
    pub w_k: DenseMatrix,
    pub w_q: DenseMatrix,
}

impl AttentionHead {
    pub fn new(w_v: DenseMatrix, w_k: DenseMatrix, w_q: DenseMatrix) -> Result<Self> {
        let dim = w_v.rows();
        for (name, m) in [("w_v", &w_v), ("w_k", &w_k), ("w_q", &w_q)] {
            if m.shape() != (dim, dim) {
                return Err(shape("AttentionHead", format!("{name} is {:?}, expected {dim}x{dim}", m.shape())));
            }
        }
        Ok(Self { w_v, w_k, w_q })
    }

    pub fn dim(&self) -> usize {
        self.w_v.rows()
    }
}

/// `W₁` is `N×D`, `W₂` is `D×N`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
}

impl FeedForward {
    pub fn width(&self) -> usize {
        self.w1.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLayer {
    pub heads: Vec<AttentionHead>,
    pub ffn: Option<FeedForward>,
}

impl TransformerLayer {
    pub fn new(heads: Vec<AttentionHead>, ffn: Option<FeedForward>) -> Result<Self> {
        let dim = heads
            .first()
            .ok_or_else(|| shape("TransformerLayer", "a layer needs at least one head"))?
            .dim();
        if heads.iter().any(|h| h.dim() != dim) {
            return Err(shape("TransformerLayer", "heads disagree on the embedding dimension"));
        }
        if let Some(f) = &ffn {
            if f.w1.cols() != dim || f.w2.rows() != dim || f.w2.cols() != f.w1.rows() {
                return Err(shape(
                    "TransformerLayer",
                    format!("ffn w1 {:?} / w2 {:?} do not fit dimension {dim}", f.w1.shape(), f.w2.shape()),
                ));
            }
        }
        Ok(Self { heads, ffn })
    }

    pub fn dim(&self) -> usize {
        self.heads[0].dim()
    }
}

fn check_prompt(op: &'static str, layer: &TransformerLayer, h: &DenseMatrix) -> Result<()> {
    if h.rows() != layer.dim() {
        return Err(shape(op, format!("prompt has {} rows, layer expects {}", h.rows(), layer.dim())));
    }
    Ok(())
}

/// `H + Σᵢ W_V H (W_K H)ᵀ (W_Q H)`.
pub fn attention_forward(layer: &TransformerLayer, h: &DenseMatrix) -> Result<DenseMatrix> {
    check_prompt("attention_forward", layer, h)?;
    let mut out = h.clone();
    for head in &layer.heads {
        let v = matmul(&head.w_v, h)?;
        let k = matmul(&head.w_k, h)?;
        let q = matmul(&head.w_q, h)?;
        let scores = matmul(&k.transpose(), &q)?;
        out = out.add(&matmul(&v, &scores)?)?;
    }
    Ok(out)
}

/// `H + W₂ σ(W₁ H)`; the flag is false when the layer has no feed-forward
/// part and `H` is returned unchanged.
pub fn ffn_forward(layer: &TransformerLayer, h: &DenseMatrix) -> Result<(DenseMatrix, bool)> {
    check_prompt("ffn_forward", layer, h)?;
    let Some(ffn) = &layer.ffn else {
        return Ok((h.clone(), false));
    };
    let mut hidden = matmul(&ffn.w1, h)?;
    for i in 0..hidden.rows() {
        hidden.row_mut(i).iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok((h.add(&matmul(&ffn.w2, &hidden)?)?, true))
}

pub fn layer_forward(layer: &TransformerLayer, h: &DenseMatrix) -> Result<DenseMatrix> {
    let attn = attention_forward(layer, h)?;
    Ok(ffn_forward(layer, &attn)?.0)
}

/// Applies the layers in order; errors carry the failing layer index.
pub fn model_forward(layers: &[TransformerLayer], h0: &DenseMatrix) -> Result<DenseMatrix> {
    let mut h = h0.clone();
    for (index, layer) in layers.iter().enumerate() {
        h = layer_forward(layer, &h).map_err(|e| Error::Layer { index, source: Box::new(e) })?;
    }
    Ok(h)
}

/// What a block of prompt rows holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockSemantic {
    IdentityPad,
    DataMatrix,
    Labels,
    Iterate,
    Scratch,
    Ones,
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptBlock {
    pub name: String,
    pub rows: Range<usize>,
    pub semantic: BlockSemantic,
}

impl PromptBlock {
    pub fn start(&self) -> usize {
        self.rows.start
    }

    pub fn height(&self) -> usize {
        self.rows.len()
    }
}

/// Named row blocks of a prompt; spans are disjoint and tile `[0, D)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptLayout {
    blocks: Vec<PromptBlock>,
}

impl PromptLayout {
    pub fn new(blocks: Vec<PromptBlock>) -> Result<Self> {
        let mut sorted: Vec<&PromptBlock> = blocks.iter().collect();
        sorted.sort_by_key(|b| b.rows.start);
        let mut next = 0;
        for b in &sorted {
            if b.rows.is_empty() {
                return Err(layout_err(&b.name, "empty row span"));
            }
            if b.rows.start != next {
                return Err(layout_err(&b.name, format!("starts at row {} but row {next} is next", b.rows.start)));
            }
            next = b.rows.end;
        }
        for (i, b) in blocks.iter().enumerate() {
            if blocks[..i].iter().any(|o| o.name == b.name) {
                return Err(layout_err(&b.name, "duplicate block name"));
            }
        }
        Ok(Self { blocks })
    }

    /// Stacks blocks top to bottom in the given order.
    pub fn stacked(entries: &[(&str, usize, BlockSemantic)]) -> Result<Self> {
        let mut start = 0;
        let blocks = entries
            .iter()
            .map(|&(name, height, semantic)| {
                let b = PromptBlock { name: name.to_string(), rows: start..start + height, semantic };
                start += height;
                b
            })
            .collect();
        Self::new(blocks)
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.rows.end).max().unwrap_or(0)
    }

    pub fn blocks(&self) -> &[PromptBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Result<&PromptBlock> {
        self.blocks.iter().find(|b| b.name == name).ok_or_else(|| layout_err(name, "no such block"))
    }

    /// First row of the named block.
    pub fn row(&self, name: &str) -> Result<usize> {
        Ok(self.block(name)?.start())
    }

    /// Copies the named block's rows out of a prompt.
    pub fn extract(&self, h: &DenseMatrix, name: &str) -> Result<DenseMatrix> {
        let b = self.block(name)?;
        if h.rows() != self.dim() {
            return Err(layout_err(name, format!("prompt has {} rows, layout has {}", h.rows(), self.dim())));
        }
        Ok(h.block(b.start(), 0, b.height(), h.cols()))
    }

    /// Writes `content` (block height × prompt width) into the named block.
    pub fn fill(&self, h: &mut DenseMatrix, name: &str, content: &DenseMatrix) -> Result<()> {
        let b = self.block(name)?;
        if content.rows() != b.height() || content.cols() > h.cols() {
            return Err(layout_err(
                name,
                format!("content {:?} does not fit {} rows x {} cols", content.shape(), b.height(), h.cols()),
            ));
        }
        h.set_block(b.start(), 0, content);
        Ok(())
    }
}

fn layout_err(block: &str, detail: impl Into<String>) -> Error {
    Error::Layout { block: block.to_string(), detail: detail.into() }
}

/// Assembles a `D×D` weight matrix from block-level pieces. Placing
/// `content` at `(dst, src)` means `(W H)[dst] += content · H[src]`.
#[derive(Clone, Debug)]
pub struct BlockWeights<'a> {
    layout: &'a PromptLayout,
    m: DenseMatrix,
}

impl<'a> BlockWeights<'a> {
    pub fn new(layout: &'a PromptLayout) -> Self {
        Self { layout, m: DenseMatrix::zeros(layout.dim(), layout.dim()) }
    }

    pub fn place(mut self, dst: &str, src: &str, content: &DenseMatrix) -> Result<Self> {
        let (d, s) = (self.layout.block(dst)?, self.layout.block(src)?);
        if content.shape() != (d.height(), s.height()) {
            return Err(layout_err(
                dst,
                format!("content {:?} does not map `{src}` ({} rows) to {} rows", content.shape(), s.height(), d.height()),
            ));
        }
        for i in 0..d.height() {
            for j in 0..s.height() {
                self.m[(d.start() + i, s.start() + j)] += content[(i, j)];
            }
        }
        Ok(self)
    }

    /// `(W H)[dst] += scale · H[src]`; blocks must have equal height.
    pub fn copy(self, dst: &str, src: &str, scale: f64) -> Result<Self> {
        let h = self.layout.block(src)?.height();
        self.place(dst, src, &DenseMatrix::identity(h).scale(scale))
    }

    /// `(W H)[dst row dr] += scale · H[src row sr]`, rows offset within blocks.
    pub fn entry(mut self, dst: &str, dr: usize, src: &str, sr: usize, scale: f64) -> Result<Self> {
        let (d, s) = (self.layout.block(dst)?, self.layout.block(src)?);
        if dr >= d.height() || sr >= s.height() {
            return Err(layout_err(dst, format!("row offsets ({dr}, {sr}) out of range")));
        }
        self.m[(d.start() + dr, s.start() + sr)] += scale;
        Ok(self)
    }

    pub fn build(self) -> DenseMatrix {
        self.m
    }
}

/// Accumulates hidden units of a feed-forward block. Each unit reads a
/// linear combination of prompt rows and writes weighted copies of its
/// ReLU output into prompt rows.
#[derive(Clone, Debug, Default)]
pub struct FfnBuilder {
    inputs: Vec<Vec<(usize, f64)>>,
    outputs: Vec<Vec<(usize, f64)>>,
}

impl FfnBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn unit(&mut self, input: &[(usize, f64)], output: &[(usize, f64)]) -> &mut Self {
        self.inputs.push(input.to_vec());
        self.outputs.push(output.to_vec());
        self
    }

    pub fn width(&self) -> usize {
        self.inputs.len()
    }

    pub fn build(&self, dim: usize) -> Result<FeedForward> {
        let n = self.width();
        if n == 0 {
            return Err(Error::Build("feed-forward block has no units".into()));
        }
        let mut w1 = DenseMatrix::zeros(n, dim);
        let mut w2 = DenseMatrix::zeros(dim, n);
        for (u, (ins, outs)) in self.inputs.iter().zip(&self.outputs).enumerate() {
            for &(r, c) in ins {
                if r >= dim {
                    return Err(shape("FfnBuilder", format!("input row {r} >= {dim}")));
                }
                w1[(u, r)] += c;
            }
            for &(r, c) in outs {
                if r >= dim {
                    return Err(shape("FfnBuilder", format!("output row {r} >= {dim}")));
                }
                w2[(r, u)] += c;
            }
        }
        Ok(FeedForward { w1, w2 })
    }
}

const MANIFEST: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "tfnewton-model v1";

/// Writes every weight matrix as CSV plus a plain-text manifest with one
/// line per layer, head and feed-forward block.
pub fn save_model(dir: &Path, layers: &[TransformerLayer]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = BufWriter::new(fs::File::create(dir.join(MANIFEST))?);
    writeln!(manifest, "{MANIFEST_HEADER}")?;
    for (l, layer) in layers.iter().enumerate() {
        let width = layer.ffn.as_ref().map_or(0, FeedForward::width);
        writeln!(manifest, "layer {l} dim={} heads={} ffn_width={width}", layer.dim(), layer.heads.len())?;
        for (i, head) in layer.heads.iter().enumerate() {
            let mut names = Vec::new();
            for (tag, m) in [("v", &head.w_v), ("k", &head.w_k), ("q", &head.w_q)] {
                let name = format!("l{l:03}_h{i}_{tag}.csv");
                write_matrix(&dir.join(&name), m)?;
                names.push(format!("{tag}={name}"));
            }
            writeln!(manifest, "head {l} {i} {}", names.join(" "))?;
        }
        if let Some(ffn) = &layer.ffn {
            let (n1, n2) = (format!("l{l:03}_w1.csv"), format!("l{l:03}_w2.csv"));
            write_matrix(&dir.join(&n1), &ffn.w1)?;
            write_matrix(&dir.join(&n2), &ffn.w2)?;
            writeln!(manifest, "ffn {l} w1={n1} w2={n2}")?;
        }
    }
    manifest.flush()?;
    Ok(())
}

fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    m.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    DenseMatrix::read_csv(BufReader::new(fs::File::open(path)?))
}

/// Inverse of [`save_model`].
pub fn load_model(dir: &Path) -> Result<Vec<TransformerLayer>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::Parse(format!("{MANIFEST} does not start with `{MANIFEST_HEADER}`")));
    }
    let mut heads: BTreeMap<usize, Vec<AttentionHead>> = BTreeMap::new();
    let mut ffns: BTreeMap<usize, FeedForward> = BTreeMap::new();
    let mut count = 0;
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let field = |key: &str| -> Result<&str> {
            parts
                .iter()
                .find_map(|p| p.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::Parse(format!("`{line}` lacks `{key}=`")))
        };
        let index = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad index in `{line}`")))
        };
        match parts.first().copied() {
            Some("layer") => count = count.max(index(1)? + 1),
            Some("head") => {
                let head = AttentionHead::new(
                    read_matrix(&dir.join(field("v")?))?,
                    read_matrix(&dir.join(field("k")?))?,
                    read_matrix(&dir.join(field("q")?))?,
                )?;
                heads.entry(index(1)?).or_default().push(head);
            }
            Some("ffn") => {
                let ffn = FeedForward {
                    w1: read_matrix(&dir.join(field("w1")?))?,
                    w2: read_matrix(&dir.join(field("w2")?))?,
                };
                ffns.insert(index(1)?, ffn);
            }
            None => {}
            Some(other) => return Err(Error::Parse(format!("unknown manifest entry `{other}`"))),
        }
    }
    (0..count)
        .map(|l| TransformerLayer::new(heads.remove(&l).unwrap_or_default(), ffns.remove(&l)))
        .collect()
}

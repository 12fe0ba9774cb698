//! Model file format v1.
//!
//! Header line, then named weight blocks. Floats are serialized as the
//! 16-hex-digit bit pattern of the f64, which round-trips exactly.
//!
//! ```text
//! #GMMN v1 cond=1 noise=10 hidden=128x3 residual=1 seed=42
//! block glu0.lin.w 128 11
//! <cols hex words per row, one row per line>
//! ...
//! ```

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gmmn::model::{GluLayer, GmmnModel};

const MODEL_HEADER: &str = "#GMMN v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major values.
    pub data: Vec<f64>,
}

impl Block {
    pub fn from_matrix(name: &str, m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self {
            name: name.to_string(),
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn from_vector(name: &str, v: &DVector<f64>) -> Self {
        Self {
            name: name.to_string(),
            rows: v.nrows(),
            cols: 1,
            data: v.iter().copied().collect(),
        }
    }

    pub fn from_values(name: &str, values: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }
}

fn model_blocks(model: &GmmnModel) -> Vec<Block> {
    let mut blocks = Vec::new();
    for (i, l) in model.layers.iter().enumerate() {
        blocks.push(Block::from_matrix(&format!("glu{i}.lin.w"), &l.lin_w));
        blocks.push(Block::from_vector(&format!("glu{i}.lin.b"), &l.lin_b));
        blocks.push(Block::from_matrix(&format!("glu{i}.gate.w"), &l.gate_w));
        blocks.push(Block::from_vector(&format!("glu{i}.gate.b"), &l.gate_b));
    }
    blocks.push(Block::from_matrix("out.w", &model.out_w));
    blocks.push(Block::from_vector("out.b", &model.out_b));
    blocks
}

/// Write a model plus any extra named blocks (e.g. the normalizer ranges a
/// post-filter artifact carries along).
pub fn write_model<W: Write>(out: &mut W, model: &GmmnModel, extras: &[Block]) -> Result<()> {
    let hidden_units = model.layers[0].lin_w.nrows();
    writeln!(
        out,
        "{MODEL_HEADER} cond={} noise={} hidden={}x{} residual=1 seed={}",
        model.cond_dim,
        model.noise_dim,
        hidden_units,
        model.layers.len(),
        model.seed
    )?;
    for block in model_blocks(model).iter().chain(extras) {
        writeln!(out, "block {} {} {}", block.name, block.rows, block.cols)?;
        for row in block.data.chunks(block.cols) {
            let line: Vec<String> = row.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    }
    Ok(())
}

pub struct ModelFile {
    pub model: GmmnModel,
    pub extras: HashMap<String, Block>,
}

pub fn read_model<R: BufRead>(input: R) -> Result<ModelFile> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty model file".into()))??;
    let rest = header.strip_prefix(MODEL_HEADER).ok_or_else(|| {
        Error::Version(format!("expected `{MODEL_HEADER}` header, got `{header}`"))
    })?;
    let mut fields = HashMap::new();
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad model header token `{tok}`")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<&String> {
        fields
            .get(k)
            .ok_or_else(|| Error::Parse(format!("model header missing `{k}`")))
    };
    let cond_dim: usize = get("cond")?
        .parse()
        .map_err(|_| Error::Parse("bad cond field".into()))?;
    let noise_dim: usize = get("noise")?
        .parse()
        .map_err(|_| Error::Parse("bad noise field".into()))?;
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|_| Error::Parse("bad seed field".into()))?;
    if get("residual")? != "1" {
        return Err(Error::Parse("only residual=1 models are supported".into()));
    }
    let (units_s, layers_s) = get("hidden")?
        .split_once('x')
        .ok_or_else(|| Error::Parse("bad hidden field".into()))?;
    let hidden_units: usize = units_s
        .parse()
        .map_err(|_| Error::Parse("bad hidden units".into()))?;
    let hidden_layers: usize = layers_s
        .parse()
        .map_err(|_| Error::Parse("bad hidden layer count".into()))?;

    let mut blocks: HashMap<String, Block> = HashMap::new();
    while let Some(line) = lines.next() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        if it.next() != Some("block") {
            return Err(Error::Parse(format!("expected block line, got `{line}`")));
        }
        let name = it
            .next()
            .ok_or_else(|| Error::Parse("block without a name".into()))?
            .to_string();
        let rows: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad row count for block `{name}`")))?;
        let cols: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad column count for block `{name}`")))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("truncated block `{name}`")))??;
            let mut n = 0usize;
            for word in row.split_whitespace() {
                let bits = u64::from_str_radix(word, 16)
                    .map_err(|_| Error::Parse(format!("bad hex float in block `{name}`")))?;
                data.push(f64::from_bits(bits));
                n += 1;
            }
            if n != cols {
                return Err(Error::Parse(format!(
                    "block `{name}` row has {n} values, expected {cols}"
                )));
            }
        }
        blocks.insert(name.clone(), Block { name, rows, cols, data });
    }

    let mut take = |name: String, rows: usize, cols: usize| -> Result<Block> {
        let b = blocks
            .remove(&name)
            .ok_or_else(|| Error::Parse(format!("missing block `{name}`")))?;
        if b.rows != rows || b.cols != cols {
            return Err(Error::Parse(format!(
                "block `{name}` is {}x{}, expected {rows}x{cols}",
                b.rows, b.cols
            )));
        }
        Ok(b)
    };

    let mut layers = Vec::with_capacity(hidden_layers);
    let mut in_dim = cond_dim + noise_dim;
    for i in 0..hidden_layers {
        let lin_w = take(format!("glu{i}.lin.w"), hidden_units, in_dim)?.to_matrix();
        let lin_b = take(format!("glu{i}.lin.b"), hidden_units, 1)?.to_vector();
        let gate_w = take(format!("glu{i}.gate.w"), hidden_units, in_dim)?.to_matrix();
        let gate_b = take(format!("glu{i}.gate.b"), hidden_units, 1)?.to_vector();
        layers.push(GluLayer {
            lin_w,
            lin_b,
            gate_w,
            gate_b,
        });
        in_dim = hidden_units;
    }
    let out_w = take("out.w".to_string(), cond_dim, hidden_units)?.to_matrix();
    let out_b = take("out.b".to_string(), cond_dim, 1)?.to_vector();

    Ok(ModelFile {
        model: GmmnModel {
            cond_dim,
            noise_dim,
            layers,
            out_w,
            out_b,
            seed,
        },
        extras: blocks,
    })
}

pub fn save_model(path: &Path, model: &GmmnModel) -> Result<()> {
    save_model_with_blocks(path, model, &[])
}

pub fn save_model_with_blocks(path: &Path, model: &GmmnModel, extras: &[Block]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_model(&mut f, model, extras)
}

pub fn load_model(path: &Path) -> Result<GmmnModel> {
    Ok(load_model_file(path)?.model)
}

pub fn load_model_file(path: &Path) -> Result<ModelFile> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_model(f)
}

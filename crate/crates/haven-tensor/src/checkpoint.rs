use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

/// First line of every checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "haven-ckpt v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad header: expected `{CHECKPOINT_MAGIC}`")]
    BadMagic,
    #[error("line {line}: malformed entry")]
    Malformed { line: usize },
    #[error("line {line}: bad shape `{text}`")]
    BadShape { line: usize, text: String },
    #[error("line {line}: bad value `{text}`")]
    BadValue { line: usize, text: String },
    #[error("line {line}: tensor `{name}` has {got} values, shape wants {want}")]
    CountMismatch {
        line: usize,
        name: String,
        got: usize,
        want: usize,
    },
    #[error("duplicate tensor `{0}`")]
    Duplicate(String),
    #[error("unknown tensor `{0}`")]
    Unknown(String),
    #[error("missing tensor `{0}`")]
    Missing(String),
    #[error("tensor `{name}`: shape {got:?} does not match registered {want:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
}

/// Ordered, named collection of parameter tensors with value-exact text
/// serialization.
///
/// The format is line-based: a magic header, then one line per tensor of
/// the form `name d0xd1x... hex,hex,...` where each value is the 16-digit
/// hex encoding of the f64 bit pattern, so save/load round-trips are exact.
#[derive(Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn register(&mut self, name: &str, tensor: Tensor) {
        assert!(
            !name.contains(char::is_whitespace),
            "parameter name `{name}` contains whitespace"
        );
        assert!(
            self.entries.iter().all(|(n, _)| n != name),
            "duplicate parameter name `{name}`"
        );
        self.entries.push((name.to_string(), tensor));
    }

    pub fn extend(&mut self, prefix: &str, named: Vec<(String, Tensor)>) {
        for (name, t) in named {
            self.register(&format!("{prefix}.{name}"), t);
        }
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        for (name, t) in &self.entries {
            out.push_str(name);
            out.push(' ');
            let shape = t.shape();
            for (i, d) in shape.iter().enumerate() {
                if i > 0 {
                    out.push('x');
                }
                let _ = write!(out, "{d}");
            }
            out.push(' ');
            let values = t.values();
            for (i, v) in values.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{:016x}", v.to_bits());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Loads values into the registered tensors. Every registered tensor
    /// must appear in the text with a matching shape, and vice versa.
    pub fn load_text(&self, text: &str) -> Result<(), CheckpointError> {
        let parsed = parse_checkpoint(text)?;
        let mut seen = vec![false; self.entries.len()];
        for (name, shape, values) in &parsed {
            let Some(pos) = self.entries.iter().position(|(n, _)| n == name) else {
                return Err(CheckpointError::Unknown(name.clone()));
            };
            if seen[pos] {
                return Err(CheckpointError::Duplicate(name.clone()));
            }
            seen[pos] = true;
            let tensor = &self.entries[pos].1;
            if tensor.shape() != shape.as_slice() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    got: shape.clone(),
                    want: tensor.shape().to_vec(),
                });
            }
            tensor.set_values(values);
        }
        if let Some(pos) = seen.iter().position(|s| !s) {
            return Err(CheckpointError::Missing(self.entries[pos].0.clone()));
        }
        Ok(())
    }

    pub fn load(&self, path: &Path) -> Result<(), CheckpointError> {
        let text = fs::read_to_string(path)?;
        self.load_text(&text)
    }
}

/// One parsed checkpoint entry: name, shape, row-major values.
pub type CheckpointEntry = (String, Vec<usize>, Vec<f64>);

/// Parses checkpoint text into entries without needing a registered set.
/// Never panics on malformed input.
pub fn parse_checkpoint(text: &str) -> Result<Vec<CheckpointEntry>, CheckpointError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_end() == CHECKPOINT_MAGIC => {}
        _ => return Err(CheckpointError::BadMagic),
    }
    let mut out: Vec<CheckpointEntry> = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let (Some(name), Some(shape_text), Some(values_text), None) = (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        ) else {
            return Err(CheckpointError::Malformed { line: line_no });
        };
        if name.is_empty() {
            return Err(CheckpointError::Malformed { line: line_no });
        }
        let mut shape = Vec::new();
        for part in shape_text.split('x') {
            let d: usize = part.parse().map_err(|_| CheckpointError::BadShape {
                line: line_no,
                text: shape_text.to_string(),
            })?;
            shape.push(d);
        }
        let want: usize = shape.iter().product();
        // guard against absurd shapes before allocating
        if want > (1 << 28) {
            return Err(CheckpointError::BadShape {
                line: line_no,
                text: shape_text.to_string(),
            });
        }
        let mut values = Vec::with_capacity(want.min(1 << 20));
        if !values_text.is_empty() {
            for part in values_text.split(',') {
                if part.len() != 16 {
                    return Err(CheckpointError::BadValue {
                        line: line_no,
                        text: part.to_string(),
                    });
                }
                let bits = u64::from_str_radix(part, 16).map_err(|_| {
                    CheckpointError::BadValue {
                        line: line_no,
                        text: part.to_string(),
                    }
                })?;
                values.push(f64::from_bits(bits));
                if values.len() > want {
                    break;
                }
            }
        }
        if values.len() != want {
            return Err(CheckpointError::CountMismatch {
                line: line_no,
                name: name.to_string(),
                got: values.len(),
                want,
            });
        }
        if out.iter().any(|(n, _, _)| n == name) {
            return Err(CheckpointError::Duplicate(name.to_string()));
        }
        out.push((name.to_string(), shape, values));
    }
    Ok(out)
}

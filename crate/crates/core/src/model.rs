//! Model parameters, the binary model container and seeded model generation.
//!
//! The container is a fixed little-endian layout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "RNLM"
//! 4       4     version (u32) = 1
//! 8       20    V, H, D, M, N (u32 each)
//! 28      ...   f32 payload: E, Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh, Theta, b_nce, maxent_table
//! ```
//!
//! Every matrix is stored row-major. The NCE weight matrix is stored one row
//! per word (V x H).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RNLM";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 28;

/// Word id reserved for the sentence-start token.
pub const SENTENCE_START: u32 = 0;

const INIT_RANGE: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelDims {
    pub vocab_size: u32,
    pub hidden_size: u32,
    pub embed_size: u32,
    pub maxent_table_size: u32,
    pub maxent_order: u32,
}

impl ModelDims {
    pub fn new(vocab: u32, hidden: u32, embed: u32, table: u32, order: u32) -> Self {
        ModelDims {
            vocab_size: vocab,
            hidden_size: hidden,
            embed_size: embed,
            maxent_table_size: table,
            maxent_order: order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Dimension(format!(
                "vocab_size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        for (name, v) in [
            ("hidden_size", self.hidden_size),
            ("embed_size", self.embed_size),
            ("maxent_table_size", self.maxent_table_size),
            ("maxent_order", self.maxent_order),
        ] {
            if v == 0 {
                return Err(Error::Dimension(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn vocab(&self) -> usize {
        self.vocab_size as usize
    }

    pub fn hidden(&self) -> usize {
        self.hidden_size as usize
    }

    pub fn embed(&self) -> usize {
        self.embed_size as usize
    }

    /// Number of f32 values in the payload.
    pub fn parameter_count(&self) -> u64 {
        let v = self.vocab_size as u64;
        let h = self.hidden_size as u64;
        let d = self.embed_size as u64;
        let m = self.maxent_table_size as u64;
        v * d + 3 * h * d + 3 * h * h + 3 * h + v * h + v + m
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN + 4 * self.parameter_count()
    }
}

/// Dense row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// All parameters of the GRU language model.
///
/// Gate naming: `z` is the update gate, `r` the reset gate and `h` the
/// candidate activation. `w_*` act on the word embedding, `u_*` on the
/// previous history vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub embeddings: Matrix,
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Vec<f32>,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Vec<f32>,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Vec<f32>,
    pub nce_weights: Matrix,
    pub nce_bias: Vec<f32>,
    pub maxent_table: Vec<f32>,
}

impl ModelParams {
    /// All-zero model of the given shape.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let (v, h, d) = (dims.vocab(), dims.hidden(), dims.embed());
        Ok(ModelParams {
            dims,
            embeddings: Matrix::zeros(v, d),
            w_z: Matrix::zeros(h, d),
            u_z: Matrix::zeros(h, h),
            b_z: vec![0.0; h],
            w_r: Matrix::zeros(h, d),
            u_r: Matrix::zeros(h, h),
            b_r: vec![0.0; h],
            w_h: Matrix::zeros(h, d),
            u_h: Matrix::zeros(h, h),
            b_h: vec![0.0; h],
            nce_weights: Matrix::zeros(v, h),
            nce_bias: vec![0.0; v],
            maxent_table: vec![0.0; dims.maxent_table_size as usize],
        })
    }

    pub fn embedding(&self, word: u32) -> Result<&[f32]> {
        self.check_word(word)?;
        Ok(self.embeddings.row(word as usize))
    }

    pub fn check_word(&self, word: u32) -> Result<()> {
        if word >= self.dims.vocab_size {
            return Err(Error::Vocabulary {
                word,
                vocab: self.dims.vocab_size,
            });
        }
        Ok(())
    }

    /// Checks every shape against `dims` and rejects non-finite entries.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let (v, h, d) = (self.dims.vocab(), self.dims.hidden(), self.dims.embed());
        let m = self.dims.maxent_table_size as usize;
        let shapes: [(&str, &Matrix, usize, usize); 8] = [
            ("embeddings", &self.embeddings, v, d),
            ("w_z", &self.w_z, h, d),
            ("u_z", &self.u_z, h, h),
            ("w_r", &self.w_r, h, d),
            ("u_r", &self.u_r, h, h),
            ("w_h", &self.w_h, h, d),
            ("u_h", &self.u_h, h, h),
            ("nce_weights", &self.nce_weights, v, h),
        ];
        for (name, mat, rows, cols) in shapes {
            if mat.rows() != rows || mat.cols() != cols || mat.as_slice().len() != rows * cols {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    mat.rows(),
                    mat.cols()
                )));
            }
        }
        let vectors: [(&str, &[f32], usize); 5] = [
            ("b_z", &self.b_z, h),
            ("b_r", &self.b_r, h),
            ("b_h", &self.b_h, h),
            ("nce_bias", &self.nce_bias, v),
            ("maxent_table", &self.maxent_table, m),
        ];
        for (name, vec, len) in vectors {
            if vec.len() != len {
                return Err(Error::Dimension(format!(
                    "{name} has length {}, expected {len}",
                    vec.len()
                )));
            }
        }
        for (name, values) in self.payload() {
            if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
                return Err(Error::CorruptModel(format!(
                    "non-finite value in {name} at flat index {pos}"
                )));
            }
        }
        Ok(())
    }

    /// Parameter blocks in container order.
    fn payload(&self) -> [(&'static str, &[f32]); 13] {
        [
            ("embeddings", self.embeddings.as_slice()),
            ("w_z", self.w_z.as_slice()),
            ("u_z", self.u_z.as_slice()),
            ("b_z", &self.b_z),
            ("w_r", self.w_r.as_slice()),
            ("u_r", self.u_r.as_slice()),
            ("b_r", &self.b_r),
            ("w_h", self.w_h.as_slice()),
            ("u_h", self.u_h.as_slice()),
            ("b_h", &self.b_h),
            ("nce_weights", self.nce_weights.as_slice()),
            ("nce_bias", &self.nce_bias),
            ("maxent_table", &self.maxent_table),
        ]
    }

    fn payload_mut(&mut self) -> [&mut [f32]; 13] {
        [
            self.embeddings.as_mut_slice(),
            self.w_z.as_mut_slice(),
            self.u_z.as_mut_slice(),
            &mut self.b_z,
            self.w_r.as_mut_slice(),
            self.u_r.as_mut_slice(),
            &mut self.b_r,
            self.w_h.as_mut_slice(),
            self.u_h.as_mut_slice(),
            &mut self.b_h,
            self.nce_weights.as_mut_slice(),
            &mut self.nce_bias,
            &mut self.maxent_table,
        ]
    }

    /// Serializes into the container layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.dims.file_len() as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for d in [
            self.dims.vocab_size,
            self.dims.hidden_size,
            self.dims.embed_size,
            self.dims.maxent_table_size,
            self.dims.maxent_order,
        ] {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for (_, block) in self.payload() {
            for x in block {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let found = bytes.len() as u64;
        if found < 8 {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                found,
            });
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:02x?}, expected \"RNLM\"",
                &bytes[0..4]
            )));
        }
        let version = read_u32(bytes, 4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, expected {FORMAT_VERSION}"
            )));
        }
        if found < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                found,
            });
        }
        let dims = ModelDims::new(
            read_u32(bytes, 8),
            read_u32(bytes, 12),
            read_u32(bytes, 16),
            read_u32(bytes, 20),
            read_u32(bytes, 24),
        );
        dims.validate()
            .map_err(|e| Error::Format(format!("invalid header dims: {e}")))?;
        let expected = dims.file_len();
        if found != expected {
            return Err(Error::Truncated { expected, found });
        }

        let mut model = ModelParams::zeros(dims)?;
        let mut offset = HEADER_LEN as usize;
        for block in model.payload_mut() {
            for x in block.iter_mut() {
                *x = f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
                offset += 4;
            }
        }
        model.validate()?;
        Ok(model)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn save_model(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let bytes = fs::read(path)?;
    ModelParams::from_bytes(&bytes)
}

/// Draws every parameter uniformly from [-0.1, 0.1] in container order.
pub fn generate_model(dims: ModelDims, seed: u64) -> Result<ModelParams> {
    let mut model = ModelParams::zeros(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for block in model.payload_mut() {
        for x in block.iter_mut() {
            *x = rng.random_range(-INIT_RANGE..=INIT_RANGE);
        }
    }
    Ok(model)
}

use serde::{Deserialize, Serialize};

/// Element storage kind of a dat or global.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemKind {
    F64,
    I64,
}

impl ElemKind {
    pub fn bytes(self) -> usize {
        8
    }

    pub fn name(self) -> &'static str {
        match self {
            ElemKind::F64 => "f64",
            ElemKind::I64 => "i64",
        }
    }
}

/// Physical ordering of a dat payload.
///
/// `Aos` stores element-major (`e * dim + c`), `Soa` component-major (`c * size + e`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    Aos,
    Soa,
}

impl Layout {
    #[inline]
    pub fn position(self, elem: usize, comp: usize, size: usize, dim: usize) -> usize {
        match self {
            Layout::Aos => elem * dim + comp,
            Layout::Soa => comp * size + elem,
        }
    }
}

/// A flat, typed value buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl Payload {
    pub fn kind(&self) -> ElemKind {
        match self {
            Payload::F64(_) => ElemKind::F64,
            Payload::I64(_) => ElemKind::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F64(v) => v.len(),
            Payload::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(kind: ElemKind, len: usize) -> Self {
        match kind {
            ElemKind::F64 => Payload::F64(vec![0.0; len]),
            ElemKind::I64 => Payload::I64(vec![0; len]),
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match self {
            Payload::F64(v) => Some(v),
            Payload::I64(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match self {
            Payload::I64(v) => Some(v),
            Payload::F64(_) => None,
        }
    }

    /// Transposes a `rows x cols` row-major buffer into `cols x rows`.
    pub(crate) fn transposed(&self, rows: usize, cols: usize) -> Payload {
        fn tr<T: Copy>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
            let mut out = Vec::with_capacity(src.len());
            for c in 0..cols {
                for r in 0..rows {
                    out.push(src[r * cols + c]);
                }
            }
            out
        }
        match self {
            Payload::F64(v) => Payload::F64(tr(v, rows, cols)),
            Payload::I64(v) => Payload::I64(tr(v, rows, cols)),
        }
    }

    /// Gathers `dst[i] = self[idx[i]]`.
    pub(crate) fn gather(&self, idx: impl Iterator<Item = usize>) -> Payload {
        match self {
            Payload::F64(v) => Payload::F64(idx.map(|i| v[i]).collect()),
            Payload::I64(v) => Payload::I64(idx.map(|i| v[i]).collect()),
        }
    }
}

impl From<Vec<f64>> for Payload {
    fn from(v: Vec<f64>) -> Self {
        Payload::F64(v)
    }
}

impl From<Vec<i64>> for Payload {
    fn from(v: Vec<i64>) -> Self {
        Payload::I64(v)
    }
}

/// A single constant value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scalar {
    F64(f64),
    I64(i64),
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::F64(v)
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::I64(v)
    }
}

impl Scalar {
    pub fn as_f64(self) -> f64 {
        match self {
            Scalar::F64(v) => v,
            Scalar::I64(v) => v as f64,
        }
    }

    pub fn as_i64(self) -> Option<i64> {
        match self {
            Scalar::I64(v) => Some(v),
            Scalar::F64(_) => None,
        }
    }
}

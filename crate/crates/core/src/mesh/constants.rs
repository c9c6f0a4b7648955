use std::collections::BTreeMap;

use super::Scalar;
use crate::error::MeshError;

/// Named global constants, write-once before the first loop runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Constants {
    values: BTreeMap<String, Scalar>,
    frozen: bool,
}

impl Constants {
    pub fn set(&mut self, name: &str, value: impl Into<Scalar>) -> Result<(), MeshError> {
        if self.frozen {
            return Err(MeshError::Frozen {
                action: format!("set constant `{name}`"),
            });
        }
        self.values.insert(name.to_owned(), value.into());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Scalar, MeshError> {
        self.values
            .get(name)
            .copied()
            .ok_or_else(|| MeshError::UnknownName {
                kind: "constant",
                name: name.to_owned(),
            })
    }

    /// Float view of a constant. Panics on an unknown name, which inside a
    /// kernel surfaces as a kernel fault.
    pub fn f64(&self, name: &str) -> f64 {
        match self.get(name) {
            Ok(v) => v.as_f64(),
            Err(e) => panic!("{e}"),
        }
    }

    pub fn i64(&self, name: &str) -> i64 {
        match self.get(name) {
            Ok(Scalar::I64(v)) => v,
            Ok(Scalar::F64(_)) => panic!("constant `{name}` is float64"),
            Err(e) => panic!("{e}"),
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub(crate) fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Scalar)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

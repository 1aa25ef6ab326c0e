use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Mat;
use crate::error::{invalid, Result};

/// A named, shaped array of learned (or fixed) values.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    /// Embedding frequency tables (`*.embed`) are fixed and never trained.
    pub fn is_frozen(&self) -> bool {
        self.name.ends_with(".embed")
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of parameters, addressed by name or by insertion index.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    seed: u64,
    meta: Vec<(String, String)>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore { params: Vec::new(), seed, meta: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<usize> {
        if self.index_of(name).is_some() {
            return Err(invalid(format!("duplicate parameter name {name}")));
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(invalid(format!("parameter {name} has an empty dimension: {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(invalid(format!(
                "parameter {name} with shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if !super::all_finite(&data) {
            return Err(invalid(format!("parameter {name} contains non-finite values")));
        }
        self.params.push(Param { name: name.into(), shape: shape.to_vec(), data });
        Ok(self.params.len() - 1)
    }

    /// Inserts a `rows x cols` matrix drawn i.i.d. from `U(-a, a)`, `a = sqrt(6 / (rows + cols))`.
    pub fn insert_glorot(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
        let a = libm::sqrt(6.0 / (rows + cols) as f64);
        let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
        self.insert(name, &[rows, cols], data)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<usize> {
        self.insert(name, shape, vec![0.0; shape.iter().product()])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn param_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn require(&self, name: &str) -> Result<&Param> {
        self.get(name).ok_or_else(|| invalid(format!("missing parameter {name}")))
    }

    pub fn matrix(&self, name: &str) -> Result<Mat> {
        let p = self.require(name)?;
        match p.shape.as_slice() {
            [r, c] => Mat::from_vec(*r, *c, p.data.clone()),
            s => Err(invalid(format!("parameter {name} is not a matrix (shape {s:?})"))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let p = self.require(name)?;
        match p.shape.as_slice() {
            [_] => Ok(p.data.clone()),
            s => Err(invalid(format!("parameter {name} is not a vector (shape {s:?})"))),
        }
    }

    /// Free-form key/value metadata carried alongside the parameters.
    pub fn meta(&self) -> &[(String, String)] {
        &self.meta
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: &str, value: &str) {
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value.into(),
            None => self.meta.push((key.into(), value.into())),
        }
    }
}

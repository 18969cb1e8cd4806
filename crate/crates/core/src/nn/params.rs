//! Named, deterministically initialised trainable parameters.

use candle_core::{DType, Device, Tensor, Var};
use rand_distr::{Distribution, Normal};

use super::checkpoint::NamedArray;
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

/// Owns every trainable variable of a model. Initial values come from a
/// seeded stream, never from the tensor backend's global RNG.
pub struct ParamStore {
    vars: Vec<(String, Var)>,
    rng: Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            vars: Vec::new(),
            rng: rng_from(seed),
        }
    }

    fn register(&mut self, name: &str, data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.iter().any(|(n, _)| n == name) {
            return Err(Error::Argument(format!("parameter {name} registered twice")));
        }
        let t = Tensor::from_vec(data, shape, &Device::Cpu)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.push((name.to_string(), var));
        Ok(out)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f32) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0f32, std).map_err(|e| Error::Argument(e.to_string()))?;
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.register(name, data, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.register(name, vec![value; n], shape)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.iter().map(|(n, _)| n.as_str())
    }

    pub fn num_params(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn to_arrays(&self) -> Result<Vec<NamedArray>> {
        self.vars
            .iter()
            .map(|(name, v)| {
                Ok(NamedArray {
                    name: name.clone(),
                    shape: v.dims().to_vec(),
                    data: v.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?,
                })
            })
            .collect()
    }

    /// Overwrite every registered parameter with the array of the same name.
    pub fn load_arrays(&self, arrays: &[NamedArray]) -> Result<()> {
        for (name, var) in &self.vars {
            let a = arrays
                .iter()
                .find(|a| &a.name == name)
                .ok_or_else(|| Error::Argument(format!("checkpoint lacks parameter {name}")))?;
            if a.shape != var.dims() {
                return Err(Error::Argument(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    a.shape,
                    var.dims()
                )));
            }
            var.set(&Tensor::from_vec(a.data.clone(), a.shape.as_slice(), &Device::Cpu)?)?;
        }
        Ok(())
    }
}

//! Named parameter tensors and first-order optimizers.

use std::collections::BTreeMap;
use std::path::Path;

use crate::init::{seeded_init, Init};
use crate::tape::{Tape, Var};
use crate::{Error, Result, Tensor};

/// Named parameters plus the record needed to rebuild them: parameter
/// `name` initialized with `init` always comes from the stream seeded by
/// `derive(seed, name)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    seed: u64,
    params: BTreeMap<String, Tensor>,
    inits: BTreeMap<String, Init>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            params: BTreeMap::new(),
            inits: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn init(&mut self, name: &str, shape: &[usize], init: Init) -> Result<&Tensor> {
        let t = seeded_init(shape, init, instenc_core::rng::derive(self.seed, name))?;
        self.inits.insert(name.to_string(), init);
        self.params.insert(name.to_string(), t);
        Ok(&self.params[name])
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        self.inits.remove(name);
        self.params.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Initializer used for each seeded parameter.
    pub fn init_record(&self) -> &BTreeMap<String, Init> {
        &self.inits
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    /// Writes `<name>.ptnsr` per parameter plus an `index.tsv` of
    /// `name<TAB>file` lines.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut index = format!("seed\t{}\n", self.seed);
        for (i, (name, t)) in self.params.iter().enumerate() {
            let file = format!("p{i:03}.ptnsr");
            t.save(dir.join(&file))?;
            index.push_str(&format!("{name}\t{file}\n"));
        }
        std::fs::write(dir.join("index.tsv"), index)?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<ParamStore> {
        let dir = dir.as_ref();
        let index = std::fs::read_to_string(dir.join("index.tsv"))?;
        let mut lines = index.lines();
        let seed = lines
            .next()
            .and_then(|l| l.strip_prefix("seed\t"))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("index.tsv must start with a seed line".into()))?;
        let mut store = ParamStore::new(seed);
        for line in lines {
            let (name, file) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("bad index line `{line}`")))?;
            if file.contains('/') || file.contains("..") {
                return Err(Error::Format(format!("bad parameter file `{file}`")));
            }
            store.insert(name, Tensor::load(dir.join(file))?);
        }
        Ok(store)
    }
}

/// Tape handles for a [`ParamStore`]'s parameters.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Handles assembled by hand, e.g. from the leaves of a gradient check.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Bound {
        Bound {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Gradient of `output` for every bound parameter. Parameters the output
    /// does not touch get zero gradients.
    pub fn gradients(&self, tape: &Tape, output: Var) -> Result<BTreeMap<String, Tensor>> {
        let g = tape.gradients(output)?;
        Ok(self
            .vars
            .iter()
            .map(|(k, &v)| {
                let grad = g.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()));
                (k.clone(), grad)
            })
            .collect())
    }
}

/// Adam; weight decay enters as an L2 term added to the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (name, g) in grads {
            let p = store.get_mut(name)?;
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi + self.weight_decay * *w;
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{he_init, RngSeed, Scalar, Shape, Tensor};

/// Name, shape and initialization fan-in of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Shape,
    /// Zero for biases, which start at zero.
    pub fan_in: usize,
}

impl ParamInfo {
    pub fn count(&self) -> usize {
        self.shape.numel()
    }
}

/// Ordered list of every parameter a network owns.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest(pub Vec<ParamInfo>);

impl Manifest {
    pub fn total(&self) -> usize {
        self.0.iter().map(ParamInfo::count).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamInfo> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Plain-text table of name, shape and element count.
    pub fn to_table(&self) -> String {
        let width = self.0.iter().map(|p| p.name.len()).max().unwrap_or(4).max(4);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:<16}  {:>10}", "name", "shape", "count");
        for p in &self.0 {
            let _ = writeln!(s, "{:<width$}  {:<16}  {:>10}", p.name, p.shape.to_string(), p.count());
        }
        let _ = writeln!(s, "{:<width$}  {:<16}  {:>10}", "total", "", self.total());
        s
    }
}

/// Named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { tensors: BTreeMap::new() }
    }

    /// He-initialized kernels and zero biases. Each tensor draws from a seed
    /// derived from its position in the manifest.
    pub fn initialize(manifest: &Manifest, seed: RngSeed) -> Result<Self> {
        let mut store = ParamStore::new();
        for (i, p) in manifest.iter().enumerate() {
            let t = if p.fan_in == 0 {
                Tensor::zeros(p.shape.clone())
            } else {
                he_init(p.shape.clone(), p.fan_in, seed.derive(&[i as u64]))?
            };
            store.insert(p.name.clone(), t);
        }
        Ok(store)
    }

    /// Zero tensor for every manifest entry.
    pub fn zeros(manifest: &Manifest) -> Self {
        let mut store = ParamStore::new();
        for p in manifest.iter() {
            store.insert(p.name.clone(), Tensor::zeros(p.shape.clone()));
        }
        store
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| Error::Param(format!("missing parameter {name}")))
    }

    pub fn require_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.get_mut(name).ok_or_else(|| Error::Param(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Errors unless names and shapes agree exactly with `manifest`.
    pub fn check_against(&self, manifest: &Manifest) -> Result<()> {
        if self.len() != manifest.len() {
            return Err(Error::Param(format!(
                "store holds {} tensors, network expects {}",
                self.len(),
                manifest.len()
            )));
        }
        for p in manifest.iter() {
            let t = self.require(&p.name)?;
            if t.shape() != &p.shape {
                return Err(shape_err!("parameter {} is {}, expected {}", p.name, t.shape(), p.shape));
            }
        }
        Ok(())
    }
}

/// Supplies parameter nodes to the network wiring.
pub trait ParamSource<T: Scalar> {
    fn fetch(&mut self, g: &mut Graph<T>, info: ParamInfo) -> Result<NodeId>;
}

/// Records the manifest while feeding zero tensors to the wiring.
#[derive(Default)]
pub struct ManifestRecorder {
    pub manifest: Manifest,
}

impl<T: Scalar> ParamSource<T> for ManifestRecorder {
    fn fetch(&mut self, g: &mut Graph<T>, info: ParamInfo) -> Result<NodeId> {
        if self.manifest.iter().any(|p| p.name == info.name) {
            return Err(Error::Build(format!("duplicate parameter name {}", info.name)));
        }
        let id = g.input(Tensor::zeros(info.shape.clone()));
        self.manifest.0.push(info);
        Ok(id)
    }
}

/// Reads parameters from a store, as trainable leaves or as constants.
pub struct StoreSource<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    trainable: bool,
    pub nodes: BTreeMap<String, NodeId>,
}

impl<'a, T: Scalar> StoreSource<'a, T> {
    pub fn new(store: &'a ParamStore<T>, trainable: bool) -> Self {
        StoreSource { store, trainable, nodes: BTreeMap::new() }
    }
}

impl<T: Scalar> ParamSource<T> for StoreSource<'_, T> {
    fn fetch(&mut self, g: &mut Graph<T>, info: ParamInfo) -> Result<NodeId> {
        let t = self.store.require(&info.name)?;
        if t.shape() != &info.shape {
            return Err(shape_err!("parameter {} is {}, expected {}", info.name, t.shape(), info.shape));
        }
        let id = if self.trainable { g.param(t.clone()) } else { g.input(t.clone()) };
        self.nodes.insert(info.name, id);
        Ok(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> Manifest {
        Manifest(vec![
            ParamInfo { name: "a.w".into(), shape: Shape::new(vec![3, 3, 2, 4]).unwrap(), fan_in: 18 },
            ParamInfo { name: "a.b".into(), shape: Shape::new(vec![4]).unwrap(), fan_in: 0 },
        ])
    }

    #[test]
    fn initialize_is_seeded() {
        let m = manifest();
        let a = ParamStore::<f32>::initialize(&m, RngSeed(3)).unwrap();
        let b = ParamStore::<f32>::initialize(&m, RngSeed(3)).unwrap();
        let c = ParamStore::<f32>::initialize(&m, RngSeed(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.get("a.b").unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(a.total(), 76);
        a.check_against(&m).unwrap();
    }

    #[test]
    fn check_against_reports_mismatch() {
        let m = manifest();
        let mut s = ParamStore::<f32>::zeros(&m);
        s.insert("a.b", Tensor::zeros(Shape::new(vec![5]).unwrap()));
        assert!(matches!(s.check_against(&m), Err(Error::Shape(_))));
    }

    #[test]
    fn table_lists_total() {
        let t = manifest().to_table();
        assert!(t.contains("3x3x2x4"));
        assert!(t.lines().last().unwrap().trim_end().ends_with("76"));
    }
}

//! Parameter declarations and deterministic initialization.
//!
//! Each tensor is drawn from its own generator seeded by the model seed and a
//! hash of its name, so adding or removing a parameter never changes the
//! values of the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::numerics::NamedTensors;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Const(f32),
    /// Normal with the given std, redrawn outside two standard deviations.
    TruncNormal(f32),
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanInUniform(usize),
    /// `ln(n + 1)` along the last axis.
    StateLog,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }
}

/// `prefix.name`, or `name` for an empty prefix.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn materialize(spec: &ParamSpec, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&spec.name));
    let shape = &spec.shape;
    match spec.init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, 1.0),
        Init::Const(v) => Tensor::full(shape, v),
        Init::TruncNormal(std) => {
            let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
            Tensor::from_fn(shape, |_| loop {
                let z = normal.sample(&mut rng);
                if z.abs() <= 2.0 {
                    break z * std;
                }
            })
        }
        Init::FanInUniform(fan_in) => {
            let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
            Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
        }
        Init::StateLog => {
            let n = *shape.last().unwrap_or(&1);
            Tensor::from_fn(shape, |i| ((i % n) as f32 + 1.0).ln())
        }
    }
}

pub fn materialize_all(specs: &[ParamSpec], seed: u64) -> NamedTensors {
    specs
        .iter()
        .map(|s| (s.name.clone(), materialize(s, seed)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_independent_of_neighbors() {
        let a = ParamSpec::new("a", &[4], Init::TruncNormal(0.02));
        let b = ParamSpec::new("b", &[4], Init::TruncNormal(0.02));
        let both = materialize_all(&[a.clone(), b], 7);
        let alone = materialize_all(&[a.clone()], 7);
        assert_eq!(both["a"], alone["a"]);
        assert_ne!(materialize(&a, 8), alone["a"]);
    }

    #[test]
    fn truncation_and_bounds() {
        let t = materialize(&ParamSpec::new("w", &[1000], Init::TruncNormal(0.5)), 1);
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
        let u = materialize(&ParamSpec::new("u", &[1000], Init::FanInUniform(4)), 1);
        assert!(u.data().iter().all(|v| v.abs() <= 0.5));
        let s = materialize(&ParamSpec::new("s", &[2, 3], Init::StateLog), 1);
        assert_eq!(s.data()[4], 2f32.ln());
    }
}

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::real::Real;

/// Contiguous range of a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    #[inline]
    pub fn of<'a, T>(&self, flat: &'a [T]) -> &'a [T] {
        &flat[self.offset..self.offset + self.len]
    }

    #[inline]
    pub fn of_mut<'a, T>(&self, flat: &'a mut [T]) -> &'a mut [T] {
        &mut flat[self.offset..self.offset + self.len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub slot: Slot,
    pub init: Init,
}

/// Names, shapes and offsets of every array in a flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: String, shape: &[usize], init: Init) -> Slot {
        debug_assert!(self.specs.iter().all(|s| s.name != name), "duplicate parameter {name}");
        let len = shape.iter().product();
        let slot = Slot { offset: self.total, len };
        self.total += len;
        self.specs.push(ParamSpec { name, shape: shape.to_vec(), slot, init });
        slot
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn find(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut out = Vec::with_capacity(self.total);
        for spec in &self.specs {
            match spec.init {
                Init::Zeros => out.extend((0..spec.slot.len).map(|_| T::zero())),
                Init::Ones => out.extend((0..spec.slot.len).map(|_| T::one())),
                Init::Uniform(bound) => {
                    out.extend((0..spec.slot.len).map(|_| T::from_f64(rng.gen_range(-bound..=bound))))
                }
            }
        }
        out
    }
}

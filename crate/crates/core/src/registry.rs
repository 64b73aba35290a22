//! Named strategy registries: front ends and attention variants are looked
//! up by the names used in configuration files and on the command line.

use rand_chacha::ChaCha8Rng;

use crate::backbone::{Ctx, FrontOutput, GqaAttention, HybridFrontEnd, RawFrontEnd, RdwtFrontEnd, WindowedAttention};
use crate::config::ModelConfig;
use crate::error::{cfg_err, Result};
use crate::ndarr::Var;
use crate::params::ParamStore;

/// Signal-domain stage ahead of the convolutional block.
pub trait FrontEnd: Send + Sync {
    fn name(&self) -> &'static str;
    /// Inserts this front end's trainable tensors.
    fn init(&self, cfg: &ModelConfig, params: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()>;
    /// `[N, C, T] -> [N, C, T]`
    fn forward(&self, ctx: &mut Ctx, cfg: &ModelConfig, x: Var) -> Result<FrontOutput>;
}

/// Token mixer over layer-normalized `[N, T, d_model]`.
pub trait Attention: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, ctx: &mut Ctx, cfg: &ModelConfig, x: Var) -> Result<Var>;
}

/// Constructors keyed by name, in registration order.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, fn() -> Box<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn register(mut self, name: &'static str, make: fn() -> Box<T>) -> Self {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, make));
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn create(&self, name: &str) -> Result<Box<T>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, make)| make())
            .ok_or_else(|| {
                cfg_err!(
                    "unknown {} `{name}` (available: {})",
                    self.kind,
                    self.names().join(", ")
                )
            })
    }
}

pub fn frontends() -> Registry<dyn FrontEnd> {
    Registry::new("front end")
        .register("raw", || Box::new(RawFrontEnd) as Box<dyn FrontEnd>)
        .register("rdwt", || Box::new(RdwtFrontEnd) as Box<dyn FrontEnd>)
        .register("hybrid", || Box::new(HybridFrontEnd) as Box<dyn FrontEnd>)
}

pub fn attentions() -> Registry<dyn Attention> {
    Registry::new("attention")
        .register("gqa", || Box::new(GqaAttention) as Box<dyn Attention>)
        .register("windowed", || Box::new(WindowedAttention) as Box<dyn Attention>)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookups_by_name() {
        assert_eq!(frontends().names(), ["raw", "rdwt", "hybrid"]);
        for n in frontends().names() {
            assert_eq!(frontends().create(n).unwrap().name(), n);
        }
        for n in attentions().names() {
            assert_eq!(attentions().create(n).unwrap().name(), n);
        }
        let err = attentions().create("linear").err().unwrap().to_string();
        assert!(err.contains("gqa, windowed"), "{err}");
    }
}

//! The model stack behind an abstract boundary.
//!
//! [`SyntheticOracle`] serves a [`SyntheticWorld`] in process. [`WireClient`]
//! speaks the JSON-lines protocol in [`wire`] to an external server.
//! [`ComposedOracle`] runs a local shift predictor in front of any oracle that
//! can generate and predict.

pub mod wire;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::numerics::Vector;
use crate::shift::{shift_infer, DirectionSpec, ShiftPredictor};
use crate::world::SyntheticWorld;

pub use wire::{handle_line, serve, WireClient, WireRequest, WireResponse, WireResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleDescriptor {
    pub latent_dim: usize,
    pub image_dim: usize,
    pub num_attrs: usize,
    pub supports_gradients: bool,
    pub supports_shift: bool,
    pub supports_composite_value: bool,
}

/// One composite value request: `target(G(M(z, spec)))`.
///
/// With `bypass` set and an all-zero spec the shift predictor is skipped and
/// the answer is `target(G(z))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueQuery {
    pub z: Vector,
    pub spec: DirectionSpec,
    pub bypass: bool,
}

pub trait Oracle {
    fn descriptor(&mut self) -> Result<OracleDescriptor>;

    fn generate(&mut self, z: &[f64]) -> Result<Vector>;

    fn predict_attrs(&mut self, x: &[f64]) -> Result<Vector>;

    fn predict_target(&mut self, x: &[f64]) -> Result<f64>;

    fn shift(&mut self, z: &[f64], spec: &DirectionSpec) -> Result<Vector>;

    fn value(&mut self, query: &ValueQuery) -> Result<f64>;

    /// Evaluates many queries; remote implementations send one batch.
    fn values(&mut self, queries: &[ValueQuery]) -> Result<Vec<f64>> {
        queries.iter().map(|q| self.value(q)).collect()
    }
}

impl<O: Oracle + ?Sized> Oracle for &mut O {
    fn descriptor(&mut self) -> Result<OracleDescriptor> {
        (**self).descriptor()
    }
    fn generate(&mut self, z: &[f64]) -> Result<Vector> {
        (**self).generate(z)
    }
    fn predict_attrs(&mut self, x: &[f64]) -> Result<Vector> {
        (**self).predict_attrs(x)
    }
    fn predict_target(&mut self, x: &[f64]) -> Result<f64> {
        (**self).predict_target(x)
    }
    fn shift(&mut self, z: &[f64], spec: &DirectionSpec) -> Result<Vector> {
        (**self).shift(z, spec)
    }
    fn value(&mut self, query: &ValueQuery) -> Result<f64> {
        (**self).value(query)
    }
    fn values(&mut self, queries: &[ValueQuery]) -> Result<Vec<f64>> {
        (**self).values(queries)
    }
}

/// In-process oracle over a synthetic world and an optional shift predictor.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    world: SyntheticWorld,
    shift: Option<ShiftPredictor>,
}

impl SyntheticOracle {
    pub fn new(world: SyntheticWorld, shift: Option<ShiftPredictor>) -> Result<Self> {
        if let Some(s) = &shift {
            if s.latent_dim() != world.latent_dim() || s.num_attrs() != world.num_attrs() {
                return Err(Error::Shape(format!(
                    "shift predictor is ({}, {}), world is ({}, {})",
                    s.latent_dim(),
                    s.num_attrs(),
                    world.latent_dim(),
                    world.num_attrs()
                )));
            }
        }
        Ok(Self { world, shift })
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }

    pub fn shift_predictor(&self) -> Option<&ShiftPredictor> {
        self.shift.as_ref()
    }

    fn shift_ref(&self) -> Result<&ShiftPredictor> {
        self.shift
            .as_ref()
            .ok_or_else(|| Error::Domain("no shift predictor loaded".into()))
    }

    fn check_spec(&self, spec: &DirectionSpec) -> Result<()> {
        ensure_len("spec", spec.len(), self.world.num_attrs())
    }
}

impl Oracle for SyntheticOracle {
    fn descriptor(&mut self) -> Result<OracleDescriptor> {
        Ok(OracleDescriptor {
            latent_dim: self.world.latent_dim(),
            image_dim: self.world.image_dim(),
            num_attrs: self.world.num_attrs(),
            supports_gradients: true,
            supports_shift: self.shift.is_some(),
            supports_composite_value: self.shift.is_some(),
        })
    }

    fn generate(&mut self, z: &[f64]) -> Result<Vector> {
        self.world.generate(z)
    }

    fn predict_attrs(&mut self, x: &[f64]) -> Result<Vector> {
        self.world.predict_attrs(x)
    }

    fn predict_target(&mut self, x: &[f64]) -> Result<f64> {
        self.world.predict_target(x)
    }

    fn shift(&mut self, z: &[f64], spec: &DirectionSpec) -> Result<Vector> {
        self.check_spec(spec)?;
        shift_infer(self.shift_ref()?, z, spec)
    }

    fn value(&mut self, query: &ValueQuery) -> Result<f64> {
        self.check_spec(&query.spec)?;
        if query.bypass && query.spec.is_zero() {
            let x = self.world.generate(&query.z)?;
            return self.world.predict_target(&x);
        }
        let z_hat = shift_infer(self.shift_ref()?, &query.z, &query.spec)?;
        let x = self.world.generate(&z_hat)?;
        self.world.predict_target(&x)
    }
}

/// Local shift predictor in front of an oracle that only generates and
/// predicts. Composite values cost one `generate` and one `predict_target`
/// call on the inner oracle.
#[derive(Debug)]
pub struct ComposedOracle<O> {
    inner: O,
    shift: ShiftPredictor,
}

impl<O: Oracle> ComposedOracle<O> {
    pub fn new(mut inner: O, shift: ShiftPredictor) -> Result<Self> {
        let d = inner.descriptor()?;
        if d.latent_dim != shift.latent_dim() || d.num_attrs != shift.num_attrs() {
            return Err(Error::Shape(format!(
                "shift predictor is ({}, {}), oracle is ({}, {})",
                shift.latent_dim(),
                shift.num_attrs(),
                d.latent_dim,
                d.num_attrs
            )));
        }
        Ok(Self { inner, shift })
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: Oracle> Oracle for ComposedOracle<O> {
    fn descriptor(&mut self) -> Result<OracleDescriptor> {
        let mut d = self.inner.descriptor()?;
        d.supports_shift = true;
        d.supports_composite_value = true;
        Ok(d)
    }

    fn generate(&mut self, z: &[f64]) -> Result<Vector> {
        self.inner.generate(z)
    }

    fn predict_attrs(&mut self, x: &[f64]) -> Result<Vector> {
        self.inner.predict_attrs(x)
    }

    fn predict_target(&mut self, x: &[f64]) -> Result<f64> {
        self.inner.predict_target(x)
    }

    fn shift(&mut self, z: &[f64], spec: &DirectionSpec) -> Result<Vector> {
        shift_infer(&self.shift, z, spec)
    }

    fn value(&mut self, query: &ValueQuery) -> Result<f64> {
        let z_hat = if query.bypass && query.spec.is_zero() {
            query.z.clone()
        } else {
            shift_infer(&self.shift, &query.z, &query.spec)?
        };
        let x = self.inner.generate(&z_hat)?;
        self.inner.predict_target(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shift::{ShiftPredictor, TrainingConfig};
    use crate::world::world_create;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn oracle() -> SyntheticOracle {
        let (world, _) = world_create(16, 32, 5, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut shift = ShiftPredictor::initialize(16, 5, &TrainingConfig::default(), &mut rng).unwrap();
        // Perturb the zero output layer so shifts are non-trivial.
        let mut flat = shift.network().to_flat();
        for (k, v) in flat.iter_mut().enumerate() {
            *v += 0.01 * ((k % 7) as f64 - 3.0);
        }
        shift.network_mut().set_flat(&flat).unwrap();
        SyntheticOracle::new(world, Some(shift)).unwrap()
    }

    #[test]
    fn descriptor_echoes_dims() {
        let d = oracle().descriptor().unwrap();
        assert_eq!((d.latent_dim, d.image_dim, d.num_attrs), (16, 32, 5));
        assert!(d.supports_gradients && d.supports_shift && d.supports_composite_value);
    }

    #[test]
    fn value_matches_explicit_composition() {
        let mut o = oracle();
        let z = Vector::new((0..16).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
        let spec = DirectionSpec::new(vec![1.0, 0.0, -1.0, 0.0, 1.0]).unwrap();
        let z_hat = shift_infer(o.shift_predictor().unwrap(), &z, &spec).unwrap();
        let x = o.world().generate(&z_hat).unwrap();
        let expected = o.world().predict_target(&x).unwrap();
        let got = o.value(&ValueQuery { z: z.clone(), spec, bypass: false }).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn bypass_skips_shift_only_for_zero_spec() {
        let mut o = oracle();
        let z = Vector::new(vec![0.3; 16]).unwrap();
        let direct = {
            let x = o.world().generate(&z).unwrap();
            o.world().predict_target(&x).unwrap()
        };
        let zero = DirectionSpec::zeros(5);
        let bypassed = o.value(&ValueQuery { z: z.clone(), spec: zero.clone(), bypass: true }).unwrap();
        assert_eq!(bypassed, direct);
        let shifted = o.value(&ValueQuery { z, spec: zero, bypass: false }).unwrap();
        assert_ne!(shifted, direct);
    }

    #[test]
    fn missing_shift_predictor_is_reported() {
        let (world, _) = world_create(8, 8, 3, 1).unwrap();
        let mut o = SyntheticOracle::new(world, None).unwrap();
        assert!(!o.descriptor().unwrap().supports_shift);
        let z = Vector::zeros(8);
        let q = ValueQuery { z: z.clone(), spec: DirectionSpec::single(3, 0, true), bypass: false };
        assert!(matches!(o.value(&q), Err(Error::Domain(_))));
        let q = ValueQuery { z, spec: DirectionSpec::zeros(3), bypass: true };
        assert!(o.value(&q).is_ok());
    }

    #[test]
    fn mismatched_shift_is_rejected() {
        let (world, _) = world_create(8, 8, 3, 1).unwrap();
        let shift = ShiftPredictor::identity(8, 4).unwrap();
        assert!(SyntheticOracle::new(world, Some(shift)).is_err());
    }

    #[test]
    fn composed_oracle_agrees_with_synthetic() {
        let mut o = oracle();
        let shift = o.shift_predictor().unwrap().clone();
        let plain = SyntheticOracle::new(o.world().clone(), None).unwrap();
        let mut composed = ComposedOracle::new(plain, shift).unwrap();
        let z = Vector::new((0..16).map(|k| k as f64 / 10.0 - 0.8).collect()).unwrap();
        for spec in [vec![1.0, -1.0, 0.0, 0.0, 1.0], vec![0.0; 5]] {
            for bypass in [false, true] {
                let q = ValueQuery { z: z.clone(), spec: DirectionSpec::new(spec.clone()).unwrap(), bypass };
                assert_eq!(o.value(&q).unwrap(), composed.value(&q).unwrap());
            }
        }
    }
}

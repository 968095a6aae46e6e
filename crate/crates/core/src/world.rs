//! Synthetic differentiable stand-in for a generator, an attribute
//! classifier and a black-box target model.
//!
//! * generator `x = W z` with `W = s·Q`, `Q` having orthonormal columns;
//! * attribute classifier `y_i = σ(a_i·x + c_i)` with orthonormal rows `a_i`
//!   drawn inside the generator's column space;
//! * target `σ(w·x + b)` with `w` a combination of a declared subset of the
//!   attribute rows, so the remaining attributes are null for the target.
//!
//! Because every `a_i` lies in the column space of `W`, the pseudo-inverse
//! pullback `u_i = W⁺ a_i` moves attribute logit `i` by exactly `t` along
//! `z + t·u_i` and leaves every other attribute logit unchanged.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::numerics::{dot, norm, sigmoid, Matrix, Vector};

pub const WORLD_FORMAT: &str = "cfshap-world/1";

/// Column scale of the generator.
pub const GENERATOR_SCALE: f64 = 2.0;
const MIN_SINGULAR_VALUE: f64 = 1e-6;
const MAX_DRAWS: usize = 10;
const UNIT_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    latent_dim: usize,
    image_dim: usize,
    num_attrs: usize,
    seed: u64,
    generator: Matrix,
    attribute_directions: Matrix,
    attribute_offsets: Vector,
    target_weights: Vector,
    target_offset: f64,
    relevant_attributes: Vec<usize>,
}

/// Latent directions that provably control each attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `u_i = W⁺ a_iᵀ`, one per attribute.
    pub directions: Vec<Vector>,
    /// Attributes the target depends on.
    pub relevant: Vec<usize>,
}

impl GroundTruth {
    pub fn is_relevant(&self, attribute: usize) -> bool {
        self.relevant.contains(&attribute)
    }

    pub fn irrelevant(&self) -> Vec<usize> {
        (0..self.directions.len())
            .filter(|i| !self.is_relevant(*i))
            .collect()
    }
}

pub fn world_create(
    latent_dim: usize,
    image_dim: usize,
    num_attrs: usize,
    seed: u64,
) -> Result<(SyntheticWorld, GroundTruth)> {
    if num_attrs == 0 || latent_dim < num_attrs || image_dim < latent_dim {
        return Err(Error::Domain(format!(
            "need 1 <= num_attrs <= latent_dim <= image_dim, got d={latent_dim} n={image_dim} m={num_attrs}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_DRAWS {
        if let Some(world) = try_draw(latent_dim, image_dim, num_attrs, seed, &mut rng)? {
            let truth = world.ground_truth()?;
            return Ok((world, truth));
        }
    }
    Err(Error::Construction(format!(
        "rank-deficient draw {MAX_DRAWS} times in a row (seed {seed})"
    )))
}

fn gaussian_vec<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Modified Gram–Schmidt. `None` if a vector collapses below the rank tolerance.
fn orthonormalize(mut vectors: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    for k in 0..vectors.len() {
        let (done, rest) = vectors.split_at_mut(k);
        let v = &mut rest[0];
        for q in done.iter() {
            let proj = dot(q, v);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= proj * y);
        }
        let n = norm(v);
        if n < MIN_SINGULAR_VALUE {
            return None;
        }
        v.iter_mut().for_each(|x| *x /= n);
    }
    Some(vectors)
}

fn min_singular_value(m: &Matrix) -> f64 {
    let dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    dm.singular_values().min()
}

fn try_draw(
    d: usize,
    n: usize,
    m: usize,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<SyntheticWorld>> {
    let columns: Vec<Vec<f64>> = (0..d).map(|_| gaussian_vec(n, rng)).collect();
    let Some(q) = orthonormalize(columns) else {
        return Ok(None);
    };
    let mut data = vec![0.0; n * d];
    for (c, col) in q.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            data[r * d + c] = GENERATOR_SCALE * v;
        }
    }
    let generator = Matrix::new(n, d, data)?;
    if min_singular_value(&generator) <= MIN_SINGULAR_VALUE {
        return Ok(None);
    }

    let images: Vec<Vec<f64>> = (0..m)
        .map(|_| generator.matvec_unchecked(&gaussian_vec(d, rng)))
        .collect();
    let Some(rows) = orthonormalize(images) else {
        return Ok(None);
    };
    let attribute_directions = Matrix::new(m, n, rows.concat())?;
    let attribute_offsets = Vector::new((0..m).map(|_| rng.random_range(-0.5..0.5)).collect())?;

    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut relevant: Vec<usize> = order[..m - m / 2].to_vec();
    relevant.sort_unstable();
    let mut target = vec![0.0; n];
    for &k in &relevant {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let beta = sign * rng.random_range(1.0..2.0);
        target
            .iter_mut()
            .zip(attribute_directions.row(k))
            .for_each(|(t, a)| *t += beta * a);
    }
    let target_offset = rng.random_range(-0.5..0.5);

    Ok(Some(SyntheticWorld {
        latent_dim: d,
        image_dim: n,
        num_attrs: m,
        seed,
        generator,
        attribute_directions,
        attribute_offsets,
        target_weights: Vector::new(target)?,
        target_offset,
        relevant_attributes: relevant,
    }))
}

impl SyntheticWorld {
    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn image_dim(&self) -> usize {
        self.image_dim
    }

    pub fn num_attrs(&self) -> usize {
        self.num_attrs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn generator(&self) -> &Matrix {
        &self.generator
    }

    pub fn attribute_directions(&self) -> &Matrix {
        &self.attribute_directions
    }

    pub fn attribute_offsets(&self) -> &Vector {
        &self.attribute_offsets
    }

    pub fn target_weights(&self) -> &Vector {
        &self.target_weights
    }

    pub fn target_offset(&self) -> f64 {
        self.target_offset
    }

    pub fn relevant_attributes(&self) -> &[usize] {
        &self.relevant_attributes
    }

    /// Pseudo-inverse pullbacks of the attribute rows.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let g = DMatrix::from_row_slice(self.image_dim, self.latent_dim, self.generator.data());
        let pinv = g
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Construction(e.to_string()))?;
        let directions = (0..self.num_attrs)
            .map(|i| {
                let a = nalgebra::DVector::from_column_slice(self.attribute_directions.row(i));
                Vector::new((&pinv * a).as_slice().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GroundTruth {
            directions,
            relevant: self.relevant_attributes.clone(),
        })
    }

    pub fn generate(&self, z: &[f64]) -> Result<Vector> {
        Vector::new(self.generator.matvec(z)?)
    }

    pub fn attribute_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut logits = self.attribute_directions.matvec(x)?;
        logits
            .iter_mut()
            .zip(self.attribute_offsets.iter())
            .for_each(|(l, c)| *l += c);
        Ok(logits)
    }

    pub fn predict_attrs(&self, x: &[f64]) -> Result<Vector> {
        Vector::new(self.attribute_logits(x)?.into_iter().map(sigmoid).collect())
    }

    /// `∂y_i/∂x_j = y_i(1 − y_i)·a_ij`, as an `m × n` matrix.
    pub fn predict_attrs_jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let y = self.predict_attrs(x)?;
        let mut data = Vec::with_capacity(self.num_attrs * self.image_dim);
        for (i, yi) in y.iter().enumerate() {
            let s = yi * (1.0 - yi);
            data.extend(self.attribute_directions.row(i).iter().map(|a| s * a));
        }
        Matrix::new(self.num_attrs, self.image_dim, data)
    }

    pub fn target_logit(&self, x: &[f64]) -> Result<f64> {
        Ok(self.target_weights.dot(x)? + self.target_offset)
    }

    pub fn predict_target(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.target_logit(x)?))
    }

    pub fn predict_target_gradient(&self, x: &[f64]) -> Result<Vector> {
        let p = self.predict_target(x)?;
        let s = p * (1.0 - p);
        Vector::new(self.target_weights.iter().map(|w| s * w).collect())
    }

    /// `Wᵀ g`: carries an image-space gradient back to latent space.
    pub fn pullback(&self, image_gradient: &[f64]) -> Result<Vec<f64>> {
        self.generator.matvec_transposed(image_gradient)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = WorldFile {
            format: WORLD_FORMAT.to_string(),
            latent_dim: self.latent_dim,
            image_dim: self.image_dim,
            num_attrs: self.num_attrs,
            seed: self.seed,
            generator: self.generator.data().to_vec(),
            attribute_directions: self.attribute_directions.data().to_vec(),
            attribute_offsets: self.attribute_offsets.to_vec(),
            target_weights: self.target_weights.to_vec(),
            target_offset: self.target_offset,
            relevant_attributes: self.relevant_attributes.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WorldFile = serde_json::from_str(text)?;
        file.validate()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk layout; all matrices row-major.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldFile {
    format: String,
    latent_dim: usize,
    image_dim: usize,
    num_attrs: usize,
    seed: u64,
    generator: Vec<f64>,
    attribute_directions: Vec<f64>,
    attribute_offsets: Vec<f64>,
    target_weights: Vec<f64>,
    target_offset: f64,
    relevant_attributes: Vec<usize>,
}

impl WorldFile {
    fn validate(self) -> Result<SyntheticWorld> {
        if self.format != WORLD_FORMAT {
            return Err(Error::Format(format!(
                "unsupported world format {:?}, expected {WORLD_FORMAT:?}",
                self.format
            )));
        }
        let (d, n, m) = (self.latent_dim, self.image_dim, self.num_attrs);
        if m == 0 || d < m || n < d {
            return Err(Error::Format(format!("invalid dims d={d} n={n} m={m}")));
        }
        let generator = Matrix::new(n, d, self.generator)?;
        let attribute_directions = Matrix::new(m, n, self.attribute_directions)?;
        for i in 0..m {
            let len = norm(attribute_directions.row(i));
            if (len - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::Format(format!("attribute row {i} has norm {len}, expected 1")));
            }
        }
        ensure_len("attribute offsets", self.attribute_offsets.len(), m)?;
        ensure_len("target weights", self.target_weights.len(), n)?;
        if !self.target_offset.is_finite() {
            return Err(Error::Format("target offset is not finite".into()));
        }
        if self.relevant_attributes.iter().any(|&k| k >= m) {
            return Err(Error::Format("relevant attribute index out of range".into()));
        }
        if min_singular_value(&generator) <= MIN_SINGULAR_VALUE {
            return Err(Error::Format("generator is rank deficient".into()));
        }
        Ok(SyntheticWorld {
            latent_dim: d,
            image_dim: n,
            num_attrs: m,
            seed: self.seed,
            generator,
            attribute_directions,
            attribute_offsets: Vector::new(self.attribute_offsets)?,
            target_weights: Vector::new(self.target_weights)?,
            target_offset: self.target_offset,
            relevant_attributes: self.relevant_attributes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, relative_error};

    fn world() -> (SyntheticWorld, GroundTruth) {
        world_create(16, 32, 5, 7).unwrap()
    }

    #[test]
    fn creation_is_deterministic() {
        let (a, ta) = world();
        let (b, tb) = world();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = world_create(16, 32, 5, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(matches!(world_create(3, 32, 5, 1), Err(Error::Domain(_))));
        assert!(matches!(world_create(16, 8, 5, 1), Err(Error::Domain(_))));
        assert!(world_create(4, 4, 0, 1).is_err());
    }

    #[test]
    fn invariants_hold() {
        let (w, truth) = world();
        for i in 0..w.num_attrs() {
            assert!((norm(w.attribute_directions().row(i)) - 1.0).abs() < 1e-12);
        }
        assert!(min_singular_value(w.generator()) > 1e-6);
        assert_eq!(truth.relevant.len(), 3);
        assert_eq!(truth.irrelevant().len(), 2);
        assert_eq!(w.relevant_attributes(), truth.relevant.as_slice());
    }

    #[test]
    fn classifier_increases_along_ground_truth() {
        let (w, truth) = world();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let z = gaussian_vec(16, &mut rng);
            for (i, u) in truth.directions.iter().enumerate() {
                let mut last = f64::NEG_INFINITY;
                for t in [0.0, 0.25, 0.5, 1.0] {
                    let zt: Vec<f64> = z.iter().zip(u.iter()).map(|(a, b)| a + t * b).collect();
                    let y = w.predict_attrs(&w.generate(&zt).unwrap()).unwrap()[i];
                    assert!(y > last, "attribute {i} not increasing at t={t}");
                    last = y;
                }
            }
        }
    }

    #[test]
    fn generate_examples() {
        let (w, _) = world();
        assert!(w.generate(&[0.0; 16]).unwrap().iter().all(|&v| v == 0.0));
        let e1 = Vector::basis(16, 0);
        assert_eq!(w.generate(&e1).unwrap().as_slice(), w.generator().column(0).as_slice());
        assert!(matches!(w.generate(&[0.0; 15]), Err(Error::Shape(_))));
    }

    #[test]
    fn generator_jacobian_matches_finite_differences() {
        let (w, _) = world();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = gaussian_vec(16, &mut rng);
        for r in 0..w.image_dim() {
            let fd = finite_difference_gradient(|zz| w.generate(zz).unwrap()[r], &z, 1e-5).unwrap();
            for (a, b) in fd.iter().zip(w.generator().row(r)) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn attribute_and_target_gradients_match_finite_differences() {
        let (w, _) = world();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let x = gaussian_vec(32, &mut rng);
            let jac = w.predict_attrs_jacobian(&x).unwrap();
            for i in 0..w.num_attrs() {
                let fd = finite_difference_gradient(|xx| w.predict_attrs(xx).unwrap()[i], &x, 1e-5)
                    .unwrap();
                assert!(relative_error(jac.row(i), &fd) < 1e-5);
            }
            let g = w.predict_target_gradient(&x).unwrap();
            let fd = finite_difference_gradient(|xx| w.predict_target(xx).unwrap(), &x, 1e-5).unwrap();
            assert!(relative_error(&g, &fd) < 1e-5);
        }
    }

    #[test]
    fn classifier_examples() {
        let (w, _) = world();
        // Choose x along a_0 so that a_0·x + c_0 = 0.
        let c0 = w.attribute_offsets()[0];
        let x: Vec<f64> = w.attribute_directions().row(0).iter().map(|a| -c0 * a).collect();
        assert!((w.predict_attrs(&x).unwrap()[0] - 0.5).abs() < 1e-12);
        let far: Vec<f64> = w.attribute_directions().row(0).iter().map(|a| 1e3 * a).collect();
        assert!(w.predict_attrs(&far).unwrap()[0] > 1.0 - 1e-12);
        assert!(w.predict_attrs(&[0.0; 31]).is_err());
    }

    #[test]
    fn target_is_monotone_along_its_weights() {
        let (w, _) = world();
        let mut last = 0.0;
        for k in 0..10 {
            let x: Vec<f64> = w.target_weights().iter().map(|v| v * k as f64 * 0.2).collect();
            let p = w.predict_target(&x).unwrap();
            assert!(p > last && p < 1.0);
            last = p;
        }
    }

    #[test]
    fn target_ignores_directions_orthogonal_to_relevant_pullbacks() {
        let (w, truth) = world();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis: Vec<Vec<f64>> = truth
            .relevant
            .iter()
            .map(|&k| truth.directions[k].to_vec())
            .collect();
        let basis = orthonormalize(basis).unwrap();
        for _ in 0..100 {
            let z = gaussian_vec(16, &mut rng);
            let mut delta = gaussian_vec(16, &mut rng);
            for q in &basis {
                let p = dot(q, &delta);
                delta.iter_mut().zip(q).for_each(|(d, q)| *d -= p * q);
            }
            let moved: Vec<f64> = z.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let before = w.predict_target(&w.generate(&z).unwrap()).unwrap();
            let after = w.predict_target(&w.generate(&moved).unwrap()).unwrap();
            assert!((before - after).abs() < 1e-10);
        }
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let (w, _) = world();
        let text = w.to_json().unwrap();
        let back = SyntheticWorld::from_json(&text).unwrap();
        assert_eq!(w, back);
        assert_eq!(text, back.to_json().unwrap());
    }

    #[test]
    fn bad_world_files_are_rejected() {
        let (w, _) = world();
        let text = w.to_json().unwrap();
        let wrong_version = text.replace(WORLD_FORMAT, "cfshap-world/99");
        assert!(matches!(SyntheticWorld::from_json(&wrong_version), Err(Error::Format(_))));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["attribute_directions"][0] = serde_json::json!(5.0);
        assert!(SyntheticWorld::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["num_attrs"] = serde_json::json!(4);
        assert!(SyntheticWorld::from_json(&v.to_string()).is_err());
    }
}

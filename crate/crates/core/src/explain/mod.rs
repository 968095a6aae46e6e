//! Contrastive explanations: attribute the target-prediction gap between an
//! original latent and its counterfactual to the attributes that were moved.
//!
//! A coalition `S` is turned into a direction spec that applies the grand
//! direction on members of `S` and leaves every other attribute at zero. The
//! empty coalition is the original image itself (the shift predictor is
//! bypassed); the all-zero spec pushed through the shift predictor is
//! evaluated separately and reported, so any drift of the predictor away
//! from the identity stays visible.

pub mod fixtures;
mod render;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use render::{format_row_line, render_explanation, RenderFormat};

use crate::error::{ensure_len, Error, Result};
use crate::numerics::Vector;
use crate::oracle::{Oracle, ValueQuery};
use crate::shapley::{shapley_exact, shapley_sampled, Attribution, Coalition, Game, Method, EXACT_PLAYER_LIMIT};
use crate::shift::DirectionSpec;

pub const EXPLANATION_FORMAT: &str = "cfshap-explanation/1";

/// Default efficiency-audit tolerance for values printed at two decimals.
pub const PUBLISHED_AUDIT_TOLERANCE: f64 = 0.025;

/// Per-attribute `±1` direction of the grand coalition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct GrandDirection(Vec<i8>);

impl GrandDirection {
    pub fn new(entries: Vec<i8>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Shape("grand direction must name at least one attribute".into()));
        }
        if let Some(i) = entries.iter().position(|&e| e != 1 && e != -1) {
            return Err(Error::Domain(format!(
                "grand direction entry {i} is {}, expected +1 or -1",
                entries[i]
            )));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_up(&self, attribute: usize) -> bool {
        self.0[attribute] > 0
    }
}

impl TryFrom<Vec<i8>> for GrandDirection {
    type Error = Error;

    fn try_from(v: Vec<i8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GrandDirection> for Vec<i8> {
    fn from(g: GrandDirection) -> Self {
        g.0
    }
}

/// Parses `"+1,-1,+1"`; bare `1` and `-1` are accepted too.
impl FromStr for GrandDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let entries = s
            .split(',')
            .map(|tok| match tok.trim() {
                "+1" | "1" => Ok(1),
                "-1" => Ok(-1),
                other => Err(Error::Domain(format!(
                    "bad direction entry {other:?}; use +1 or -1"
                ))),
            })
            .collect::<Result<Vec<i8>>>()?;
        Self::new(entries)
    }
}

impl fmt::Display for GrandDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, e) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            f.write_str(if *e > 0 { "+1" } else { "-1" })?;
        }
        Ok(())
    }
}

/// `spec_i = grand_i` for members of the coalition, `0` otherwise.
pub fn coalition_to_spec(coalition: Coalition, grand: &GrandDirection) -> Result<DirectionSpec> {
    ensure_len("grand direction", grand.len(), coalition.num_players())?;
    let entries = grand
        .entries()
        .iter()
        .enumerate()
        .map(|(i, &g)| if coalition.contains(i) { f64::from(g) } else { 0.0 })
        .collect();
    DirectionSpec::new(entries)
}

/// Memo of coalition values for one `(z, grand)` pair. A stored value is
/// never replaced.
#[derive(Debug, Clone, Default)]
pub struct ValueCache {
    values: HashMap<u64, f64>,
}

impl ValueCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, mask: u64) -> Option<f64> {
        self.values.get(&mask).copied()
    }

    /// Stores `value` unless the mask is already present; returns the value
    /// held by the cache afterwards.
    pub fn insert(&mut self, mask: u64, value: f64) -> f64 {
        *self.values.entry(mask).or_insert(value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn query_for(z: &Vector, grand: &GrandDirection, coalition: Coalition) -> Result<ValueQuery> {
    Ok(ValueQuery {
        z: z.clone(),
        spec: coalition_to_spec(coalition, grand)?,
        bypass: coalition.is_empty(),
    })
}

/// `v(S)`, memoised in `cache`.
pub fn contrastive_value<O: Oracle + ?Sized>(
    oracle: &mut O,
    z: &Vector,
    coalition: Coalition,
    grand: &GrandDirection,
    cache: &mut ValueCache,
) -> Result<f64> {
    if let Some(v) = cache.get(coalition.mask()) {
        return Ok(v);
    }
    let query = query_for(z, grand, coalition)?;
    let v = oracle.value(&query).map_err(|e| Error::Evaluation {
        mask: coalition.mask(),
        source: Box::new(e),
    })?;
    Ok(cache.insert(coalition.mask(), v))
}

/// The contrastive game over one oracle. Counts composite value calls.
pub struct ContrastiveGame<'a, O: Oracle + ?Sized> {
    oracle: &'a mut O,
    z: Vector,
    grand: GrandDirection,
    cache: Option<ValueCache>,
    oracle_calls: usize,
}

impl<'a, O: Oracle + ?Sized> ContrastiveGame<'a, O> {
    pub fn new(oracle: &'a mut O, z: Vector, grand: GrandDirection, use_cache: bool) -> Self {
        Self {
            oracle,
            z,
            grand,
            cache: use_cache.then(ValueCache::new),
            oracle_calls: 0,
        }
    }

    pub fn oracle_calls(&self) -> usize {
        self.oracle_calls
    }

    pub fn cache(&self) -> Option<&ValueCache> {
        self.cache.as_ref()
    }

    /// Prediction for the all-zero spec pushed through the shift predictor.
    pub fn empty_spec_value(&mut self) -> Result<f64> {
        let query = ValueQuery {
            z: self.z.clone(),
            spec: DirectionSpec::zeros(self.grand.len()),
            bypass: false,
        };
        self.oracle_calls += 1;
        self.oracle.value(&query)
    }

    fn evaluate(&mut self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        let queries = coalitions
            .iter()
            .map(|&c| query_for(&self.z, &self.grand, c))
            .collect::<Result<Vec<_>>>()?;
        self.oracle_calls += queries.len();
        match self.oracle.values(&queries) {
            Ok(values) => {
                ensure_len("oracle values", values.len(), queries.len())?;
                Ok(values)
            }
            Err(e) if coalitions.len() == 1 => Err(Error::Evaluation {
                mask: coalitions[0].mask(),
                source: Box::new(e),
            }),
            Err(batch_error) => {
                // Re-run one at a time to name the failing coalition.
                for (&c, q) in coalitions.iter().zip(&queries) {
                    self.oracle_calls += 1;
                    if let Err(e) = self.oracle.value(q) {
                        return Err(Error::Evaluation {
                            mask: c.mask(),
                            source: Box::new(e),
                        });
                    }
                }
                Err(batch_error)
            }
        }
    }
}

impl<O: Oracle + ?Sized> Game for ContrastiveGame<'_, O> {
    fn num_players(&self) -> usize {
        self.grand.len()
    }

    fn value(&mut self, coalition: Coalition) -> Result<f64> {
        Ok(self.values(&[coalition])?[0])
    }

    fn values(&mut self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        let Some(cache) = &self.cache else {
            return self.evaluate(coalitions);
        };
        let mut pending = Vec::new();
        let mut queued = HashSet::new();
        for c in coalitions {
            if cache.get(c.mask()).is_none() && queued.insert(c.mask()) {
                pending.push(*c);
            }
        }
        if !pending.is_empty() {
            let values = self.evaluate(&pending)?;
            let cache = self.cache.as_mut().expect("cache checked above");
            for (c, v) in pending.iter().zip(values) {
                cache.insert(c.mask(), v);
            }
        }
        let cache = self.cache.as_ref().expect("cache checked above");
        Ok(coalitions
            .iter()
            .map(|c| cache.get(c.mask()).expect("every coalition was evaluated"))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationRequest {
    pub z: Vector,
    pub grand: GrandDirection,
    pub names: Vec<String>,
    pub method: Method,
}

impl ExplanationRequest {
    pub fn new(z: Vector, grand: GrandDirection, names: Vec<String>, method: Method) -> Result<Self> {
        ensure_len("attribute names", names.len(), grand.len())?;
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Domain(format!("duplicate attribute name {n:?}")));
            }
        }
        Ok(Self { z, grand, names, method })
    }
}

/// `attr0`, `attr1`, ...
pub fn default_names(num_attrs: usize) -> Vec<String> {
    (0..num_attrs).map(|i| format!("attr{i}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRow {
    pub name: String,
    pub direction: i8,
    pub phi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

impl AttributeRow {
    pub fn arrow(&self) -> &'static str {
        if self.direction > 0 {
            "↑"
        } else {
            "↓"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    #[serde(rename = "attributes")]
    pub rows: Vec<AttributeRow>,
    pub original_prediction: f64,
    pub counterfactual_prediction: f64,
    /// `|Σφ − (counterfactual − original)|`.
    pub efficiency_residual: f64,
    /// Target prediction for the all-zero spec through the shift predictor.
    pub empty_spec_prediction: f64,
    pub oracle_calls: usize,
    pub evaluations: usize,
    pub method: Method,
    pub latent: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ExplanationFile {
    format: String,
    #[serde(flatten)]
    explanation: Explanation,
}

impl Explanation {
    pub fn phi(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.phi).collect()
    }

    pub fn difference(&self) -> f64 {
        self.counterfactual_prediction - self.original_prediction
    }

    /// How far the all-zero spec moves the prediction away from the original.
    pub fn empty_coalition_drift(&self) -> f64 {
        self.empty_spec_prediction - self.original_prediction
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ExplanationFile {
            format: EXPLANATION_FORMAT.into(),
            explanation: self.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ExplanationFile = serde_json::from_str(text)?;
        if file.format != EXPLANATION_FORMAT {
            return Err(Error::Format(format!(
                "expected format {EXPLANATION_FORMAT}, found {}",
                file.format
            )));
        }
        Ok(file.explanation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExplainOptions {
    pub use_cache: bool,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self { use_cache: true }
    }
}

pub fn explain<O: Oracle + ?Sized>(request: &ExplanationRequest, oracle: &mut O) -> Result<Explanation> {
    explain_with(request, oracle, ExplainOptions::default())
}

pub fn explain_with<O: Oracle + ?Sized>(
    request: &ExplanationRequest,
    oracle: &mut O,
    options: ExplainOptions,
) -> Result<Explanation> {
    let m = request.grand.len();
    let descriptor = oracle.descriptor()?;
    ensure_len("latent", request.z.len(), descriptor.latent_dim)?;
    ensure_len("grand direction", m, descriptor.num_attrs)?;
    if matches!(request.method, Method::Exact) && m > EXACT_PLAYER_LIMIT {
        return Err(Error::Domain(format!(
            "exact attribution over {m} attributes refused (limit {EXACT_PLAYER_LIMIT}); use sampling"
        )));
    }

    let mut game = ContrastiveGame::new(oracle, request.z.clone(), request.grand.clone(), options.use_cache);
    let attribution: Attribution = match request.method {
        Method::Exact => shapley_exact(&mut game)?,
        Method::Sampled { permutations, seed } => shapley_sampled(&mut game, permutations, seed)?,
    };
    let empty_spec_prediction = game.empty_spec_value()?;

    let rows = request
        .names
        .iter()
        .zip(request.grand.entries())
        .enumerate()
        .map(|(i, (name, &direction))| AttributeRow {
            name: name.clone(),
            direction,
            phi: attribution.phi[i],
            std_error: attribution.std_errors.as_ref().map(|se| se[i]),
        })
        .collect();
    Ok(Explanation {
        rows,
        original_prediction: attribution.v_empty,
        counterfactual_prediction: attribution.v_grand,
        efficiency_residual: attribution.efficiency_residual(),
        empty_spec_prediction,
        oracle_calls: game.oracle_calls(),
        evaluations: attribution.evaluations,
        method: attribution.method,
        latent: request.z.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditReport {
    pub sum: f64,
    pub difference: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks `|Σ rows − (counterfactual − original)| ≤ tolerance`.
pub fn efficiency_audit(rows: &[f64], original: f64, counterfactual: f64, tolerance: f64) -> Result<AuditReport> {
    if !(tolerance > 0.0) {
        return Err(Error::Domain(format!("audit tolerance must be positive, got {tolerance}")));
    }
    let sum: f64 = rows.iter().sum();
    let difference = counterfactual - original;
    let residual = (sum - difference).abs();
    Ok(AuditReport {
        sum,
        difference,
        residual,
        tolerance,
        passed: residual <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::SyntheticOracle;
    use crate::shapley::Coalition;
    use crate::shift::{ShiftPredictor, TrainingConfig};
    use crate::world::world_create;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn perturbed_oracle() -> SyntheticOracle {
        let (world, _) = world_create(8, 12, 5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut shift = ShiftPredictor::initialize(8, 5, &TrainingConfig::default(), &mut rng).unwrap();
        let mut flat = shift.network().to_flat();
        for (k, v) in flat.iter_mut().enumerate() {
            *v += 0.05 * (((k * 7919) % 13) as f64 / 6.0 - 1.0);
        }
        shift.network_mut().set_flat(&flat).unwrap();
        SyntheticOracle::new(world, Some(shift)).unwrap()
    }

    fn request(method: Method) -> ExplanationRequest {
        let z = Vector::new((0..8).map(|k| ((k * 3) as f64).cos()).collect()).unwrap();
        let grand: GrandDirection = "+1,-1,+1,-1,+1".parse().unwrap();
        ExplanationRequest::new(z, grand, default_names(5), method).unwrap()
    }

    #[test]
    fn grand_direction_parsing() {
        let g: GrandDirection = "+1, -1,1".parse().unwrap();
        assert_eq!(g.entries(), &[1, -1, 1]);
        assert_eq!(g.to_string(), "+1,-1,+1");
        assert!("+1,0,-1".parse::<GrandDirection>().is_err());
        assert!("".parse::<GrandDirection>().is_err());
        assert!("+2".parse::<GrandDirection>().is_err());
        assert!(serde_json::from_str::<GrandDirection>("[1,0]").is_err());
    }

    #[test]
    fn coalition_to_spec_examples() {
        let all_up = GrandDirection::new(vec![1; 5]).unwrap();
        assert!(coalition_to_spec(Coalition::empty(5), &all_up).unwrap().is_zero());
        assert_eq!(coalition_to_spec(Coalition::full(5), &all_up).unwrap().entries(), &[1.0; 5]);
        let g: GrandDirection = "+1,-1,+1,-1,+1".parse().unwrap();
        let s = Coalition::from_members(&[0, 2], 5).unwrap();
        assert_eq!(coalition_to_spec(s, &g).unwrap().entries(), &[1.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(coalition_to_spec(Coalition::empty(4), &g).is_err());
    }

    #[test]
    fn spec_mapping_is_injective() {
        let g: GrandDirection = "-1,+1,-1,+1".parse().unwrap();
        let specs: HashSet<Vec<i64>> = (0..16u64)
            .map(|mask| {
                let spec = coalition_to_spec(Coalition::new(mask, 4).unwrap(), &g).unwrap();
                spec.entries().iter().map(|&e| e as i64).collect()
            })
            .collect();
        assert_eq!(specs.len(), 16);
    }

    #[test]
    fn cache_keeps_first_value() {
        let mut c = ValueCache::new();
        assert_eq!(c.insert(3, 1.0), 1.0);
        assert_eq!(c.insert(3, 2.0), 1.0);
        assert_eq!(c.get(3), Some(1.0));
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn contrastive_value_memoises() {
        struct Counting(SyntheticOracle, usize);
        impl Oracle for Counting {
            fn descriptor(&mut self) -> Result<crate::oracle::OracleDescriptor> {
                self.0.descriptor()
            }
            fn generate(&mut self, z: &[f64]) -> Result<Vector> {
                self.0.generate(z)
            }
            fn predict_attrs(&mut self, x: &[f64]) -> Result<Vector> {
                self.0.predict_attrs(x)
            }
            fn predict_target(&mut self, x: &[f64]) -> Result<f64> {
                self.0.predict_target(x)
            }
            fn shift(&mut self, z: &[f64], spec: &DirectionSpec) -> Result<Vector> {
                self.0.shift(z, spec)
            }
            fn value(&mut self, q: &ValueQuery) -> Result<f64> {
                self.1 += 1;
                self.0.value(q)
            }
        }
        let mut o = Counting(perturbed_oracle(), 0);
        let req = request(Method::Exact);
        let mut cache = ValueCache::new();
        let s = Coalition::from_members(&[1, 3], 5).unwrap();
        let a = contrastive_value(&mut o, &req.z, s, &req.grand, &mut cache).unwrap();
        let b = contrastive_value(&mut o, &req.z, s, &req.grand, &mut cache).unwrap();
        assert_eq!(a, b);
        assert_eq!(o.1, 1);
    }

    #[test]
    fn empty_coalition_is_the_original_image() {
        let mut o = perturbed_oracle();
        let req = request(Method::Exact);
        let e = explain(&req, &mut o).unwrap();
        let x = o.world().generate(&req.z).unwrap();
        assert_eq!(e.original_prediction, o.world().predict_target(&x).unwrap());
        assert_ne!(e.empty_spec_prediction, e.original_prediction);
    }

    #[test]
    fn exact_explanation_is_efficient_and_economical() {
        let e = explain(&request(Method::Exact), &mut perturbed_oracle()).unwrap();
        assert!(e.efficiency_residual < 1e-9);
        assert_eq!(e.rows.len(), 5);
        assert_eq!(e.oracle_calls, 33);
        assert_eq!(e.evaluations, 32);
    }

    #[test]
    fn cache_does_not_change_results() {
        let req = request(Method::Sampled { permutations: 40, seed: 9 });
        let with = explain_with(&req, &mut perturbed_oracle(), ExplainOptions { use_cache: true }).unwrap();
        let without = explain_with(&req, &mut perturbed_oracle(), ExplainOptions { use_cache: false }).unwrap();
        assert_eq!(with.phi(), without.phi());
        assert!(with.oracle_calls < without.oracle_calls);
        assert!(with.oracle_calls <= 33);
    }

    #[test]
    fn identity_shift_gives_zero_attributions() {
        let (world, _) = world_create(8, 12, 5, 3).unwrap();
        let mut o = SyntheticOracle::new(world, Some(ShiftPredictor::identity(8, 5).unwrap())).unwrap();
        let e = explain(&request(Method::Exact), &mut o).unwrap();
        assert!(e.phi().iter().all(|&p| p == 0.0));
        assert_eq!(e.empty_coalition_drift(), 0.0);
    }

    #[test]
    fn shape_and_limit_errors() {
        let mut o = perturbed_oracle();
        let z = Vector::zeros(7);
        let g = GrandDirection::new(vec![1; 5]).unwrap();
        let bad = ExplanationRequest::new(z, g.clone(), default_names(5), Method::Exact).unwrap();
        assert!(explain(&bad, &mut o).is_err());
        assert!(ExplanationRequest::new(Vector::zeros(8), g.clone(), vec!["a".into(); 5], Method::Exact).is_err());
        assert!(ExplanationRequest::new(Vector::zeros(8), g, default_names(4), Method::Exact).is_err());
    }

    #[test]
    fn oracle_failures_name_the_coalition() {
        let (world, _) = world_create(8, 12, 5, 3).unwrap();
        let mut o = SyntheticOracle::new(world, None).unwrap();
        match explain(&request(Method::Exact), &mut o) {
            Err(Error::Evaluation { mask, .. }) => assert_ne!(mask, 0),
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn efficiency_audit_thresholds() {
        let rows = [-0.28, -0.02, -0.03, -0.34, 0.07];
        let pass = efficiency_audit(&rows, 0.73, 0.12, 0.025).unwrap();
        assert!(pass.passed);
        assert!((pass.sum + 0.60).abs() < 1e-12 && (pass.difference + 0.61).abs() < 1e-12);
        assert!((pass.residual - 0.01).abs() < 1e-12);
        assert!(!efficiency_audit(&rows, 0.73, 0.12, 0.005).unwrap().passed);
        assert!(efficiency_audit(&[0.0; 3], 0.4, 0.4, 1e-300).unwrap().passed);
        assert!(efficiency_audit(&rows, 0.73, 0.12, 0.0).is_err());
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let e = explain(&request(Method::Sampled { permutations: 5, seed: 1 }), &mut perturbed_oracle()).unwrap();
        let text = e.to_json().unwrap();
        assert!(text.contains(EXPLANATION_FORMAT));
        let back = Explanation::from_json(&text).unwrap();
        assert_eq!(back, e);
        let wrong = text.replace(EXPLANATION_FORMAT, "cfshap-explanation/0");
        assert!(matches!(Explanation::from_json(&wrong), Err(Error::Format(_))));
    }
}

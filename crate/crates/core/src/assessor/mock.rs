//! Deterministic stand-in for the vision-language model.
//!
//! A response is a pure function of the per-call seed, the fault mode and the
//! prompt hash. Scores are correlated with the generated construction year:
//! older buildings get higher decoration, aesthetic and heritage scores.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::schema::{
    field_spec, to_json, ConstructionTechnique, DoorMaterial, DoorShape, DoorType, Element, FacadeAssessment,
    FacadeColor, FacadeMaterial, FieldKind, OrNa, RoofColor, RoofMaterial, RoofShape, Style, WindowShape,
    JSON_FIELD, SCHEMA,
};
use super::{ModelError, ModelProvider, ModelRequest};
use crate::config::MockModelConfig;

pub const EXTRA_FIELD_NAME: &str = "architect_name";
const INVENTED_TOKEN: &str = "art deco";
const INVENTED_ELEMENT: &str = "gargoyles";
const PROSE: &str = "The image shows a multi-storey residential building with a plastered facade. \
I cannot provide a reliable assessment of all requested attributes.";

/// How a mock response is corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultMode {
    Prose,
    MissingField(&'static str),
    OutOfRange(&'static str),
    InventedEnum(&'static str),
    ExtraField,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid fault mode {0:?}")]
pub struct FaultModeError(pub String);

impl FaultMode {
    /// Every applicable mode; each schema field is named by at least one.
    pub fn all() -> Vec<FaultMode> {
        let mut out = vec![FaultMode::Prose, FaultMode::ExtraField];
        for s in SCHEMA {
            out.push(FaultMode::MissingField(s.name));
            if s.kind.is_numeric() {
                out.push(FaultMode::OutOfRange(s.name));
            }
            if s.kind.is_categorical() {
                out.push(FaultMode::InventedEnum(s.name));
            }
        }
        out
    }

    /// The field a validator must name when rejecting this fault.
    pub fn expected_field(&self) -> &'static str {
        match self {
            FaultMode::Prose => JSON_FIELD,
            FaultMode::ExtraField => EXTRA_FIELD_NAME,
            FaultMode::MissingField(f) | FaultMode::OutOfRange(f) | FaultMode::InventedEnum(f) => f,
        }
    }

    /// Corrupts a valid response object.
    pub fn apply(&self, mut obj: serde_json::Map<String, Value>) -> String {
        match *self {
            FaultMode::Prose => return PROSE.to_string(),
            FaultMode::ExtraField => {
                obj.insert(EXTRA_FIELD_NAME.into(), Value::from("unknown"));
            }
            FaultMode::MissingField(f) => {
                obj.remove(f);
            }
            FaultMode::OutOfRange(f) => {
                let v = match field_spec(f).expect("schema field").kind {
                    FieldKind::Year => 2050,
                    FieldKind::Scale | FieldKind::Percent => 101,
                    FieldKind::Count { min } => min - 1,
                    _ => unreachable!("parsing restricts out_of_range to numeric fields"),
                };
                obj.insert(f.into(), Value::from(v));
            }
            FaultMode::InventedEnum(f) => {
                if f == "elements" {
                    if let Some(Value::Array(a)) = obj.get_mut(f) {
                        a.push(Value::from(INVENTED_ELEMENT));
                    }
                } else {
                    obj.insert(f.into(), Value::from(INVENTED_TOKEN));
                }
            }
        }
        Value::Object(obj).to_string()
    }
}

impl fmt::Display for FaultMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultMode::Prose => f.write_str("prose"),
            FaultMode::ExtraField => f.write_str("extra_field"),
            FaultMode::MissingField(n) => write!(f, "missing_field:{n}"),
            FaultMode::OutOfRange(n) => write!(f, "out_of_range:{n}"),
            FaultMode::InventedEnum(n) => write!(f, "invented_enum:{n}"),
        }
    }
}

impl FromStr for FaultMode {
    type Err = FaultModeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || FaultModeError(s.to_string());
        match s {
            "prose" => return Ok(FaultMode::Prose),
            "extra_field" => return Ok(FaultMode::ExtraField),
            _ => {}
        }
        let (mode, field) = s.split_once(':').ok_or_else(err)?;
        let spec = field_spec(field).ok_or_else(err)?;
        match mode {
            "missing_field" => Ok(FaultMode::MissingField(spec.name)),
            "out_of_range" if spec.kind.is_numeric() => Ok(FaultMode::OutOfRange(spec.name)),
            "invented_enum" if spec.kind.is_categorical() => Ok(FaultMode::InventedEnum(spec.name)),
            _ => Err(err()),
        }
    }
}

fn digest_u64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn scale(rng: &mut ChaCha8Rng, base: f64, spread: f64) -> OrNa<u8> {
    let v = base + rng.random_range(-spread..=spread);
    OrNa::Value(v.round().clamp(1.0, 100.0) as u8)
}

fn maybe_na<T>(rng: &mut ChaCha8Rng, p: f64, draw: impl FnOnce(&mut ChaCha8Rng) -> T) -> OrNa<T> {
    let v = draw(rng);
    if rng.random_bool(p) {
        OrNa::NotAvailable
    } else {
        OrNa::Value(v)
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    *xs.choose(rng).expect("non-empty choice list")
}

/// A schema-valid assessment drawn from `rng`.
pub fn generate(rng: &mut ChaCha8Rng) -> FacadeAssessment {
    let year: u16 = rng.random_range(1850..=2020);
    // 0 for the newest buildings, 1 for the oldest.
    let age = f64::from(2024 - year) / 174.0;
    let style = match year {
        ..1890 => pick(rng, &[Style::Nyrenassans, Style::Nygotik, Style::Nybarock, Style::Nyklassicism]),
        1890..1910 => pick(rng, &[Style::Sekelskifte, Style::Jugend, Style::Nationalromantik]),
        1910..1930 => pick(rng, &[Style::Nationalromantik, Style::Nyklassicism, Style::Klassicism]),
        1930..1960 => Style::Funktionalism,
        1960..1980 => pick(rng, &[Style::Brutalism, Style::Funktionalism]),
        1980..2000 => Style::Postmodernism,
        _ => pick(rng, &[Style::Nyfunktionalism, Style::HighTech]),
    };
    let facade_material = if year < 1930 {
        pick(rng, &[FacadeMaterial::Brick, FacadeMaterial::Plaster, FacadeMaterial::Wood, FacadeMaterial::Stone])
    } else {
        pick(
            rng,
            &[
                FacadeMaterial::Concrete,
                FacadeMaterial::Brick,
                FacadeMaterial::Plaster,
                FacadeMaterial::Metal,
                FacadeMaterial::Glass,
            ],
        )
    };
    let floors: u32 = rng.random_range(1..=8);
    let p_element = 0.05 + 0.3 * age;
    let elements = Element::ALL.iter().copied().filter(|_| rng.random_bool(p_element)).collect();
    let construction_year = maybe_na(rng, 0.03, |_| year);
    FacadeAssessment {
        construction_year,
        famous_architect: rng.random_bool(0.02 + 0.1 * age),
        landmark: rng.random_bool(0.01 + 0.05 * age),
        popularity: scale(rng, 40.0 + 20.0 * age, 20.0),
        state: scale(rng, 65.0, 25.0),
        architectural_integrity: scale(rng, 55.0 + 20.0 * age, 20.0),
        rarity: scale(rng, 10.0 + 40.0 * age, 15.0),
        style,
        construction_technique: pick(rng, ConstructionTechnique::ALL),
        roof_shape: maybe_na(rng, 0.08, |r| pick(r, RoofShape::ALL)),
        roof_material: maybe_na(rng, 0.1, |r| pick(r, RoofMaterial::ALL)),
        roof_color: maybe_na(rng, 0.1, |r| pick(r, RoofColor::ALL)),
        facade_material,
        facade_color: pick(rng, FacadeColor::ALL),
        facade_decoration: scale(rng, 15.0 + 70.0 * age, 20.0),
        window_area: rng.random_range(5..=60),
        window_shape: maybe_na(rng, 0.02, |r| pick(r, WindowShape::ALL)),
        window_number: floors * rng.random_range(3..=12),
        window_avg_pane_number: rng.random_range(1..=6),
        door_type: maybe_na(rng, 0.3, |r| pick(r, DoorType::ALL)),
        door_material: maybe_na(rng, 0.3, |r| pick(r, DoorMaterial::ALL)),
        door_shape: maybe_na(rng, 0.3, |r| pick(r, DoorShape::ALL)),
        complexity: scale(rng, 30.0 + 40.0 * age, 20.0),
        symmetry: scale(rng, 60.0, 30.0),
        floor_number: floors,
        balcony_number: rng.random_range(0..=floors * 4),
        representative_time: scale(rng, 60.0, 30.0),
        representative_place: scale(rng, 55.0, 30.0),
        representative_culture: scale(rng, 20.0 + 30.0 * age, 15.0),
        emotional_reaction: scale(rng, 45.0 + 25.0 * age, 20.0),
        elements,
        culture_historical: scale(rng, 10.0 + 70.0 * age, 20.0),
        aesthetic: scale(rng, 30.0 + 50.0 * age, 20.0),
        social: scale(rng, 45.0 + 20.0 * age, 20.0),
        predicted_heritage_value: scale(rng, 10.0 + 75.0 * age, 20.0),
        visibility_score: maybe_na(rng, 0.03, |r| r.random_range(20..=100)),
    }
}

/// The response text for one call.
pub fn respond(call_seed: u64, fault: Option<FaultMode>, prompt_hash: &str) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(digest_u64(&[&call_seed.to_le_bytes(), prompt_hash.as_bytes()]));
    let a = generate(&mut rng);
    let fenced = rng.random_bool(0.25);
    let Value::Object(obj) = to_json(&a) else { unreachable!("assessment is an object") };
    let body = match fault {
        Some(f) => f.apply(obj),
        None => serde_json::to_string_pretty(&Value::Object(obj)).expect("serialisable"),
    };
    if fenced && fault != Some(FaultMode::Prose) {
        format!("```json\n{body}\n```")
    } else {
        body
    }
}

pub struct MockModel {
    seed: u64,
    fault_rate: f64,
    modes: Vec<FaultMode>,
    overrides: Mutex<HashMap<String, FaultMode>>,
    transient_failures: AtomicU32,
    calls: AtomicUsize,
    latency: std::time::Duration,
}

impl MockModel {
    pub const MODEL_ID: &'static str = "mock-facade-v1";

    pub fn new(cfg: &MockModelConfig) -> Result<Self, FaultModeError> {
        let modes = if cfg.fault_modes.is_empty() {
            FaultMode::all()
        } else {
            cfg.fault_modes.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
        };
        Ok(MockModel {
            seed: cfg.seed,
            fault_rate: cfg.fault_rate,
            modes,
            overrides: Mutex::new(HashMap::new()),
            transient_failures: AtomicU32::new(0),
            calls: AtomicUsize::new(0),
            latency: std::time::Duration::from_millis(cfg.latency_ms),
        })
    }

    pub fn call_seed(&self, image_id: &str) -> u64 {
        digest_u64(&[&self.seed.to_le_bytes(), b"call", image_id.as_bytes()])
    }

    /// The fault injected for an image, before overrides. This is the
    /// injection manifest batch tallies are checked against.
    pub fn planned_fault(&self, image_id: &str) -> Option<FaultMode> {
        if self.fault_rate <= 0.0 {
            return None;
        }
        let h = digest_u64(&[&self.seed.to_le_bytes(), b"fault", image_id.as_bytes()]);
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        if u >= self.fault_rate {
            return None;
        }
        let k = digest_u64(&[&self.seed.to_le_bytes(), b"mode", image_id.as_bytes()]);
        Some(self.modes[(k % self.modes.len() as u64) as usize])
    }

    pub fn fault_for(&self, image_id: &str) -> Option<FaultMode> {
        let forced = self.overrides.lock().expect("overrides poisoned").get(image_id).copied();
        forced.or_else(|| self.planned_fault(image_id))
    }

    pub fn force_fault(&self, image_id: &str, mode: FaultMode) {
        self.overrides.lock().expect("overrides poisoned").insert(image_id.to_string(), mode);
    }

    /// The next `n` calls fail with a transient error.
    pub fn inject_transient_failures(&self, n: u32) {
        self.transient_failures.store(n, Ordering::SeqCst);
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ModelProvider for MockModel {
    fn model_id(&self) -> String {
        Self::MODEL_ID.to_string()
    }

    fn complete(&self, req: &ModelRequest<'_>) -> Result<String, ModelError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let pending = self
            .transient_failures
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .unwrap_or(0);
        if pending > 0 {
            return Err(ModelError::Transient("injected timeout".into()));
        }
        Ok(respond(self.call_seed(req.image_id), self.fault_for(req.image_id), &req.prompt.hash))
    }
}

//! The closed response schema: typed assessment, field table and the strict
//! validator.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::de::{DeserializeOwned, Error as _};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

pub const YEAR_MIN: i64 = 1000;
pub const YEAR_MAX: i64 = 2024;
pub const NA: &str = "N/A";

macro_rules! token_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident = $tok:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($var),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];
            pub const TOKENS: &'static [&'static str] = &[$($tok),+];

            pub fn token(self) -> &'static str {
                match self { $($name::$var => $tok),+ }
            }

            pub fn from_token(s: &str) -> Option<Self> {
                match s { $($tok => Some($name::$var),)+ _ => None }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.token())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                $name::from_token(&s).ok_or_else(|| D::Error::custom(format!("invented category: {s:?}")))
            }
        }
    };
}

token_enum!(Style {
    Klassicism = "klassicism",
    Romansk = "romansk",
    Gotik = "gotik",
    Renassans = "renässans",
    Barock = "barock",
    Rokok = "rokok",
    Nyklassicism = "nyklassicism",
    Nygotik = "nygotik",
    Nybarock = "nybarock",
    Nyrenassans = "nyrenässans",
    Sekelskifte = "sekelskifte",
    Nationalromantik = "nationalromantik",
    Jugend = "jugend",
    Funktionalism = "funktionalism",
    Brutalism = "brutalism",
    HighTech = "high-tech",
    Postmodernism = "postmodernism",
    Nyfunktionalism = "nyfunktionalism",
});

token_enum!(ConstructionTechnique {
    Stolpverkshus = "stolpverkshus",
    Restimmerhus = "restimmerhus",
    Resvirkeshus = "resvirkeshus",
    Plankhus = "plankhus",
    Landshovdingehus = "landshövdingehus",
    Tegelhus = "tegelhus",
    Tjockhus = "tjockhus",
    Smalhus = "smalhus",
    Lamellhus = "lamellhus",
    Punkthus = "punkthus",
    Skivhus = "skivhus",
    Bursprakshus = "burspråkshus",
});

token_enum!(RoofShape {
    Flat = "flat",
    Gabled = "gabled",
    Skillion = "skillion",
    Hipped = "hipped",
    Gambrel = "gambrel",
    Pyramidal = "pyramidal",
    Crosspitched = "crosspitched",
    Sawtooth = "sawtooth",
    Cone = "cone",
    Dome = "dome",
    Onion = "onion",
    Round = "round",
    Mansard = "mansard",
});

token_enum!(RoofMaterial {
    SheetMetal = "sheet metal",
    Concrete = "concrete",
    Green = "green",
    Clay = "clay",
    Copper = "copper",
    Wood = "wood",
    Straw = "straw",
    Slate = "slate",
    Bitumen = "bitumen",
    Glass = "glass",
    Asphalt = "asphalt",
});

token_enum!(RoofColor {
    Red = "red",
    Black = "black",
    Brown = "brown",
    Green = "green",
    Grey = "grey",
    Other = "other",
});

token_enum!(FacadeMaterial {
    Brick = "brick",
    Concrete = "concrete",
    Wood = "wood",
    Plaster = "plaster",
    Stone = "stone",
    Metal = "metal",
    Glass = "glass",
});

token_enum!(FacadeColor {
    Red = "red",
    Yellow = "yellow",
    White = "white",
    Blue = "blue",
    Green = "green",
    Black = "black",
    Brown = "brown",
    Grey = "grey",
    Beige = "beige",
    Other = "other",
});

token_enum!(WindowShape {
    Round = "round",
    Rectangular = "rectangular",
    Rounded = "rounded",
    Square = "square",
});

token_enum!(DoorType {
    Single = "single",
    Double = "double",
    Portal = "portal",
    Revolving = "revolving",
    Dutch = "dutch",
});

token_enum!(DoorMaterial {
    Metal = "metal",
    Wood = "wood",
    Glass = "glass",
    Mixed = "mixed",
    Other = "other",
});

token_enum!(DoorShape {
    Rectangular = "rectangular",
    Arched = "arched",
});

token_enum!(Element {
    Balconies = "balconies",
    BayWindows = "bay_windows",
    Dormers = "dormers",
    GablePeaks = "gable_peaks",
    NaturalStonePlinth = "natural_stone_plinth",
    HalfTimbered = "half_timbered",
    Plaque = "plaque",
    Gates = "gates",
    ColoredGlass = "colored_glass",
    WoodShutters = "wood_shutters",
    DoorAwning = "door_awning",
    FrontSteps = "front_steps",
    EaveDecorations = "eave_decorations",
    WindowCasings = "window_casings",
    DoorDecorations = "door_decorations",
    RecessedDoorway = "recessed_doorway",
    DisplayWindow = "display_window",
    DecorativeMoldings = "decorative_moldings",
    TransomWindow = "transom_window",
    Pilasters = "pilasters",
    Medallions = "medallions",
    Columns = "columns",
    Cornice = "cornice",
    Tympanum = "tympanum",
    Corbel = "corbel",
    Pediment = "pediment",
});

/// A value or the literal `"N/A"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OrNa<T> {
    Value(T),
    NotAvailable,
}

impl<T: Copy> OrNa<T> {
    pub fn value(&self) -> Option<T> {
        match self {
            OrNa::Value(v) => Some(*v),
            OrNa::NotAvailable => None,
        }
    }
}

impl<T: Serialize> Serialize for OrNa<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            OrNa::Value(v) => v.serialize(s),
            OrNa::NotAvailable => s.serialize_str(NA),
        }
    }
}

impl<'de, T: DeserializeOwned> Deserialize<'de> for OrNa<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        if v.as_str() == Some(NA) {
            return Ok(OrNa::NotAvailable);
        }
        T::deserialize(v).map(OrNa::Value).map_err(D::Error::custom)
    }
}

pub type Scale = OrNa<u8>;

/// One validated model answer. Field order is the schema order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacadeAssessment {
    pub construction_year: OrNa<u16>,
    pub famous_architect: bool,
    pub landmark: bool,
    pub popularity: Scale,
    pub state: Scale,
    pub architectural_integrity: Scale,
    pub rarity: Scale,
    pub style: Style,
    pub construction_technique: ConstructionTechnique,
    pub roof_shape: OrNa<RoofShape>,
    pub roof_material: OrNa<RoofMaterial>,
    pub roof_color: OrNa<RoofColor>,
    pub facade_material: FacadeMaterial,
    pub facade_color: FacadeColor,
    pub facade_decoration: Scale,
    pub window_area: u8,
    pub window_shape: OrNa<WindowShape>,
    pub window_number: u32,
    pub window_avg_pane_number: u32,
    pub door_type: OrNa<DoorType>,
    pub door_material: OrNa<DoorMaterial>,
    pub door_shape: OrNa<DoorShape>,
    pub complexity: Scale,
    pub symmetry: Scale,
    pub floor_number: u32,
    pub balcony_number: u32,
    pub representative_time: Scale,
    pub representative_place: Scale,
    pub representative_culture: Scale,
    pub emotional_reaction: Scale,
    pub elements: BTreeSet<Element>,
    pub culture_historical: Scale,
    pub aesthetic: Scale,
    pub social: Scale,
    pub predicted_heritage_value: Scale,
    pub visibility_score: Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// Integer year in `[YEAR_MIN, YEAR_MAX]` or N/A.
    Year,
    Flag,
    /// Integer in `[1, 100]` or N/A.
    Scale,
    /// Integer in `[0, 100]`.
    Percent,
    /// Integer `≥ min`.
    Count { min: i64 },
    Choice { tokens: &'static [&'static str], na: bool },
    Elements,
}

impl FieldKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, FieldKind::Year | FieldKind::Scale | FieldKind::Percent | FieldKind::Count { .. })
    }

    pub fn is_categorical(self) -> bool {
        matches!(self, FieldKind::Choice { .. } | FieldKind::Elements)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: &'static str,
    pub kind: FieldKind,
}

const fn f(name: &'static str, kind: FieldKind) -> FieldSpec {
    FieldSpec { name, kind }
}

const fn choice(tokens: &'static [&'static str], na: bool) -> FieldKind {
    FieldKind::Choice { tokens, na }
}

pub const SCHEMA: &[FieldSpec] = &[
    f("construction_year", FieldKind::Year),
    f("famous_architect", FieldKind::Flag),
    f("landmark", FieldKind::Flag),
    f("popularity", FieldKind::Scale),
    f("state", FieldKind::Scale),
    f("architectural_integrity", FieldKind::Scale),
    f("rarity", FieldKind::Scale),
    f("style", choice(Style::TOKENS, false)),
    f("construction_technique", choice(ConstructionTechnique::TOKENS, false)),
    f("roof_shape", choice(RoofShape::TOKENS, true)),
    f("roof_material", choice(RoofMaterial::TOKENS, true)),
    f("roof_color", choice(RoofColor::TOKENS, true)),
    f("facade_material", choice(FacadeMaterial::TOKENS, false)),
    f("facade_color", choice(FacadeColor::TOKENS, false)),
    f("facade_decoration", FieldKind::Scale),
    f("window_area", FieldKind::Percent),
    f("window_shape", choice(WindowShape::TOKENS, true)),
    f("window_number", FieldKind::Count { min: 0 }),
    f("window_avg_pane_number", FieldKind::Count { min: 1 }),
    f("door_type", choice(DoorType::TOKENS, true)),
    f("door_material", choice(DoorMaterial::TOKENS, true)),
    f("door_shape", choice(DoorShape::TOKENS, true)),
    f("complexity", FieldKind::Scale),
    f("symmetry", FieldKind::Scale),
    f("floor_number", FieldKind::Count { min: 1 }),
    f("balcony_number", FieldKind::Count { min: 0 }),
    f("representative_time", FieldKind::Scale),
    f("representative_place", FieldKind::Scale),
    f("representative_culture", FieldKind::Scale),
    f("emotional_reaction", FieldKind::Scale),
    f("elements", FieldKind::Elements),
    f("culture_historical", FieldKind::Scale),
    f("aesthetic", FieldKind::Scale),
    f("social", FieldKind::Scale),
    f("predicted_heritage_value", FieldKind::Scale),
    f("visibility_score", FieldKind::Scale),
];

pub fn field_spec(name: &str) -> Option<&'static FieldSpec> {
    SCHEMA.iter().find(|s| s.name == name)
}

/// Pseudo-field naming a response that is not a JSON object.
pub const JSON_FIELD: &str = "_json";
/// Pseudo-field naming a provider failure.
pub const TRANSPORT_FIELD: &str = "_transport";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        FieldError { field: field.into(), reason: reason.into() }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

fn integer(v: &Value) -> Result<i64, String> {
    v.as_i64().ok_or_else(|| format!("expected an integer, got {v}"))
}

fn in_range(v: &Value, lo: i64, hi: Option<i64>, na: bool) -> Result<(), String> {
    if na && v.as_str() == Some(NA) {
        return Ok(());
    }
    let n = integer(v)?;
    let hi_ok = hi.is_none_or(|h| n <= h);
    if n < lo || !hi_ok {
        let range = match hi {
            Some(h) => format!("[{lo}-{h}]"),
            None => format!("[{lo}-]"),
        };
        return Err(format!("out of range {range}: {n}"));
    }
    Ok(())
}

fn check_field(kind: FieldKind, v: &Value) -> Result<(), String> {
    match kind {
        FieldKind::Year => in_range(v, YEAR_MIN, Some(YEAR_MAX), true),
        FieldKind::Flag => v.as_bool().map(|_| ()).ok_or_else(|| format!("expected true or false, got {v}")),
        FieldKind::Scale => in_range(v, 1, Some(100), true),
        FieldKind::Percent => in_range(v, 0, Some(100), false),
        FieldKind::Count { min } => in_range(v, min, Some(u32::MAX as i64), false),
        FieldKind::Choice { tokens, na } => {
            let s = v.as_str().ok_or_else(|| format!("expected a category string, got {v}"))?;
            if tokens.contains(&s) || (na && s == NA) {
                Ok(())
            } else {
                Err(format!("invented category: {s:?}"))
            }
        }
        FieldKind::Elements => {
            let items = v.as_array().ok_or_else(|| format!("expected a list of elements, got {v}"))?;
            let mut seen = HashSet::new();
            for it in items {
                let s = it.as_str().ok_or_else(|| format!("expected element strings, got {it}"))?;
                if !Element::TOKENS.contains(&s) {
                    return Err(format!("invented category: {s:?}"));
                }
                if !seen.insert(s) {
                    return Err(format!("duplicate element: {s:?}"));
                }
            }
            Ok(())
        }
    }
}

/// Removes one surrounding markdown code fence, if present.
pub fn strip_fences(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let Some(body) = rest.strip_suffix("```") else { return t };
    // Drop the info string (e.g. `json`) on the opening line.
    match body.find('\n') {
        Some(nl) if body[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => body[nl + 1..].trim(),
        _ => t,
    }
}

/// Strict parse: a single JSON object, every field present and valid, no
/// extra fields. Every failing field is reported.
pub fn parse_assessment(raw: &str) -> Result<FacadeAssessment, Vec<FieldError>> {
    let text = strip_fences(raw);
    let value: Value = serde_json::from_str(text)
        .map_err(|e| vec![FieldError::new(JSON_FIELD, format!("not a JSON object: {e}"))])?;
    let Value::Object(obj) = &value else {
        return Err(vec![FieldError::new(JSON_FIELD, "expected a JSON object")]);
    };
    let mut errors = Vec::new();
    for spec in SCHEMA {
        match obj.get(spec.name) {
            None => errors.push(FieldError::new(spec.name, "missing field")),
            Some(v) => {
                if let Err(reason) = check_field(spec.kind, v) {
                    errors.push(FieldError::new(spec.name, reason));
                }
            }
        }
    }
    for key in obj.keys() {
        if field_spec(key).is_none() {
            errors.push(FieldError::new(key.as_str(), "unknown field"));
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    serde_json::from_value(value).map_err(|e| vec![FieldError::new(JSON_FIELD, format!("schema mismatch: {e}"))])
}

/// Serialises in schema order.
pub fn to_json(a: &FacadeAssessment) -> Value {
    serde_json::to_value(a).expect("assessment serialises")
}

pub fn to_json_string(a: &FacadeAssessment) -> String {
    serde_json::to_string(a).expect("assessment serialises")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> FacadeAssessment {
        FacadeAssessment {
            construction_year: OrNa::Value(1932),
            famous_architect: false,
            landmark: false,
            popularity: OrNa::Value(40),
            state: OrNa::Value(70),
            architectural_integrity: OrNa::Value(65),
            rarity: OrNa::Value(20),
            style: Style::Funktionalism,
            construction_technique: ConstructionTechnique::Lamellhus,
            roof_shape: OrNa::Value(RoofShape::Gabled),
            roof_material: OrNa::Value(RoofMaterial::SheetMetal),
            roof_color: OrNa::NotAvailable,
            facade_material: FacadeMaterial::Plaster,
            facade_color: FacadeColor::Yellow,
            facade_decoration: OrNa::Value(15),
            window_area: 25,
            window_shape: OrNa::Value(WindowShape::Rectangular),
            window_number: 24,
            window_avg_pane_number: 2,
            door_type: OrNa::Value(DoorType::Single),
            door_material: OrNa::Value(DoorMaterial::Wood),
            door_shape: OrNa::Value(DoorShape::Rectangular),
            complexity: OrNa::Value(30),
            symmetry: OrNa::Value(80),
            floor_number: 3,
            balcony_number: 6,
            representative_time: OrNa::Value(75),
            representative_place: OrNa::Value(60),
            representative_culture: OrNa::Value(20),
            emotional_reaction: OrNa::Value(55),
            elements: [Element::Balconies, Element::WindowCasings].into_iter().collect(),
            culture_historical: OrNa::Value(45),
            aesthetic: OrNa::Value(50),
            social: OrNa::Value(50),
            predicted_heritage_value: OrNa::Value(48),
            visibility_score: OrNa::Value(72),
        }
    }

    fn with(field: &str, v: Value) -> String {
        let mut j = to_json(&sample());
        j.as_object_mut().unwrap().insert(field.into(), v);
        j.to_string()
    }

    fn rejected_fields(raw: &str) -> Vec<String> {
        parse_assessment(raw).unwrap_err().into_iter().map(|e| e.field).collect()
    }

    #[test]
    fn schema_has_no_duplicate_names_and_36_fields() {
        let names: HashSet<_> = SCHEMA.iter().map(|s| s.name).collect();
        assert_eq!(names.len(), SCHEMA.len());
        assert_eq!(SCHEMA.len(), 36);
        let keys: Vec<String> = to_json(&sample()).as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, SCHEMA.iter().map(|s| s.name.to_string()).collect::<Vec<_>>());
    }

    #[test]
    fn closed_set_sizes() {
        assert_eq!(Style::ALL.len(), 18);
        assert_eq!(ConstructionTechnique::ALL.len(), 12);
        assert_eq!(Element::ALL.len(), 26);
    }

    #[test]
    fn valid_object_accepted() {
        let a = parse_assessment(&with("style", "funktionalism".into())).unwrap();
        assert_eq!(a.style, Style::Funktionalism);
        assert_eq!(a.visibility_score, OrNa::Value(72));
    }

    #[test]
    fn year_out_of_range() {
        let errs = parse_assessment(&with("construction_year", 2050.into())).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].field, "construction_year");
        assert!(errs[0].reason.contains("[1000-2024]"));
    }

    #[test]
    fn invented_style_and_element() {
        assert_eq!(rejected_fields(&with("style", "art deco".into())), vec!["style"]);
        let e = with("elements", serde_json::json!(["balconies", "gargoyles"]));
        assert_eq!(rejected_fields(&e), vec!["elements"]);
    }

    #[test]
    fn na_only_where_permitted() {
        assert!(parse_assessment(&with("roof_shape", NA.into())).is_ok());
        assert!(parse_assessment(&with("visibility_score", NA.into())).is_ok());
        assert_eq!(rejected_fields(&with("style", NA.into())), vec!["style"]);
        assert_eq!(rejected_fields(&with("facade_material", NA.into())), vec!["facade_material"]);
        assert_eq!(rejected_fields(&with("window_number", NA.into())), vec!["window_number"]);
    }

    #[test]
    fn count_minimums() {
        assert_eq!(rejected_fields(&with("floor_number", 0.into())), vec!["floor_number"]);
        assert_eq!(rejected_fields(&with("window_avg_pane_number", 0.into())), vec!["window_avg_pane_number"]);
        assert!(parse_assessment(&with("balcony_number", 0.into())).is_ok());
        assert_eq!(rejected_fields(&with("balcony_number", (-1).into())), vec!["balcony_number"]);
        assert_eq!(rejected_fields(&with("window_area", 101.into())), vec!["window_area"]);
    }

    #[test]
    fn wrong_types_rejected() {
        assert_eq!(rejected_fields(&with("landmark", "false".into())), vec!["landmark"]);
        assert_eq!(rejected_fields(&with("rarity", "50".into())), vec!["rarity"]);
        assert_eq!(rejected_fields(&with("rarity", 50.5.into())), vec!["rarity"]);
    }

    #[test]
    fn missing_and_extra_fields_all_reported() {
        let mut j = to_json(&sample());
        let o = j.as_object_mut().unwrap();
        o.remove("symmetry");
        o.remove("door_shape");
        o.insert("architect_name".into(), "unknown".into());
        let mut got = rejected_fields(&j.to_string());
        got.sort();
        assert_eq!(got, vec!["architect_name", "door_shape", "symmetry"]);
    }

    #[test]
    fn fences_are_the_only_tolerated_decoration() {
        let body = to_json_string(&sample());
        assert!(parse_assessment(&format!("```json\n{body}\n```")).is_ok());
        assert!(parse_assessment(&format!("```\n{body}\n```")).is_ok());
        assert_eq!(rejected_fields(&format!("Here you go: {body}")), vec![JSON_FIELD]);
        assert_eq!(rejected_fields(&format!("{body}\nThanks")), vec![JSON_FIELD]);
        assert_eq!(rejected_fields("[1,2]"), vec![JSON_FIELD]);
    }

    #[test]
    fn round_trip() {
        let a = sample();
        assert_eq!(parse_assessment(&to_json_string(&a)).unwrap(), a);
    }
}

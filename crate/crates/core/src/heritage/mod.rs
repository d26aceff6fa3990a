//! Visibility filtering, per-certificate aggregation and heritage group
//! assignment.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assessor::{AssessmentRecord, FacadeAssessment};
use crate::config::PipelineConfig;
use crate::registry::{Category, EpcRecord, IncomeBand, MatchedBuilding, ProtectionSource, RegionFlag};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub image_id: String,
    pub reason: String,
}

/// Keeps parsed records whose visibility score reaches `visibility_min`.
pub fn filter_visibility(records: &[AssessmentRecord], cfg: &PipelineConfig) -> (Vec<AssessmentRecord>, Vec<Exclusion>) {
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for r in records {
        let reason = match (&r.parsed, r.visibility()) {
            (None, _) => Some("record not parsed".to_string()),
            (Some(_), None) => Some("visibility unreadable".to_string()),
            (Some(_), Some(v)) if u32::from(v) < cfg.visibility_min => {
                Some(format!("visibility {v} below {}", cfg.visibility_min))
            }
            _ => None,
        };
        match reason {
            Some(reason) => excluded.push(Exclusion { image_id: r.image_id.clone(), reason }),
            None => kept.push(r.clone()),
        }
    }
    (kept, excluded)
}

/// The observation chosen to represent a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub image_id: String,
    pub building_uuid: String,
    pub wall_id: u32,
    pub visibility_score: u8,
    pub assessment: FacadeAssessment,
}

/// One certificate with its register context and best visible observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpcAssessment {
    pub epc_id: String,
    pub category: Category,
    pub construction_year: i32,
    pub floors: u32,
    pub heated_floor_area_m2: f64,
    pub building_uuids: Vec<String>,
    pub protection: BTreeSet<ProtectionSource>,
    pub income_band: Option<IncomeBand>,
    pub region_flag: Option<RegionFlag>,
    pub region_name: Option<String>,
    pub best_observation: Option<Observation>,
    pub predicted_heritage_value: Option<u8>,
    /// Visible observations only.
    pub n_observations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationResidual {
    pub image_id: String,
    pub epc_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    /// One entry per certificate, ordered by epc_id.
    pub epcs: Vec<EpcAssessment>,
    pub residuals: Vec<AggregationResidual>,
}

/// Ranking key: higher score, then higher visibility, then lower image id.
fn rank(r: &AssessmentRecord) -> (Option<u8>, Option<u8>, Reverse<&str>) {
    (r.heritage_value(), r.visibility(), Reverse(r.image_id.as_str()))
}

/// Groups visible records by certificate. Buildings supply protection and
/// area context; the first linked building with a value wins for income and
/// region.
pub fn aggregate_per_epc(visible: &[AssessmentRecord], epcs: &[EpcRecord], buildings: &[MatchedBuilding]) -> Aggregation {
    let known: HashMap<&str, &EpcRecord> = epcs.iter().map(|e| (e.epc_id.as_str(), e)).collect();
    let mut by_epc: HashMap<&str, Vec<&AssessmentRecord>> = HashMap::new();
    let mut residuals = Vec::new();
    for r in visible {
        match r.epc_id.as_deref() {
            Some(id) if known.contains_key(id) => by_epc.entry(id).or_default().push(r),
            Some(id) => residuals.push(AggregationResidual {
                image_id: r.image_id.clone(),
                epc_id: Some(id.to_string()),
                reason: "epc_id not in certificate set".into(),
            }),
            None => residuals.push(AggregationResidual {
                image_id: r.image_id.clone(),
                epc_id: None,
                reason: "building has no linked certificate".into(),
            }),
        }
    }
    let mut linked: HashMap<&str, Vec<&MatchedBuilding>> = HashMap::new();
    for b in buildings {
        if let Some(e) = b.epc_id.as_deref() {
            linked.entry(e).or_default().push(b);
        }
    }

    let mut out: Vec<EpcAssessment> = epcs
        .iter()
        .map(|e| {
            let obs = by_epc.get(e.epc_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let best = obs.iter().max_by(|a, b| rank(a).cmp(&rank(b)));
            let bs = linked.get(e.epc_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            EpcAssessment {
                epc_id: e.epc_id.clone(),
                category: e.category,
                construction_year: e.construction_year,
                floors: e.floors,
                heated_floor_area_m2: e.heated_floor_area_m2,
                building_uuids: bs.iter().map(|b| b.building_uuid.clone()).collect(),
                protection: bs.iter().flat_map(|b| b.protection.iter().copied()).collect(),
                income_band: bs.iter().find_map(|b| b.income_band),
                region_flag: bs.iter().find_map(|b| b.region_flag),
                region_name: bs.iter().find_map(|b| b.region_name.clone()),
                predicted_heritage_value: best.and_then(|r| r.heritage_value()),
                best_observation: best.map(|r| Observation {
                    image_id: r.image_id.clone(),
                    building_uuid: r.building_uuid.clone(),
                    wall_id: r.wall_id,
                    visibility_score: r.visibility().expect("visible records carry a score"),
                    assessment: r.parsed.clone().expect("visible records are parsed"),
                }),
                n_observations: obs.len(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.epc_id.cmp(&b.epc_id));
    residuals.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Aggregation { epcs: out, residuals }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeritageGroup {
    NationalListed,
    PlanProtected,
    AgeBased,
    Predicted,
    None,
    NoImage,
}

impl HeritageGroup {
    pub const ALL: [HeritageGroup; 6] = [
        HeritageGroup::NationalListed,
        HeritageGroup::PlanProtected,
        HeritageGroup::AgeBased,
        HeritageGroup::Predicted,
        HeritageGroup::None,
        HeritageGroup::NoImage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HeritageGroup::NationalListed => "national_listed",
            HeritageGroup::PlanProtected => "plan_protected",
            HeritageGroup::AgeBased => "age_based",
            HeritageGroup::Predicted => "predicted",
            HeritageGroup::None => "none",
            HeritageGroup::NoImage => "no_image",
        }
    }

    /// Report column header.
    pub fn label(self) -> &'static str {
        match self {
            HeritageGroup::NationalListed => "Byggnadsminne",
            HeritageGroup::PlanProtected => "Räkna Q",
            HeritageGroup::AgeBased => "Heritage value from age",
            HeritageGroup::Predicted => "Predicted heritage value",
            HeritageGroup::None => "No assigned heritage value",
            HeritageGroup::NoImage => "No available street view image",
        }
    }

    /// Groups carrying heritage value.
    pub fn has_heritage_value(self) -> bool {
        matches!(
            self,
            HeritageGroup::NationalListed
                | HeritageGroup::PlanProtected
                | HeritageGroup::AgeBased
                | HeritageGroup::Predicted
        )
    }
}

impl fmt::Display for HeritageGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeritageGroup {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HeritageGroup::ALL.into_iter().find(|g| g.as_str() == s).ok_or_else(|| format!("unknown group `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeritageAssignment {
    pub epc_id: String,
    pub group: HeritageGroup,
    pub basis: String,
    pub predicted_heritage_value: Option<u8>,
    pub heated_floor_area_m2: f64,
}

/// First matching rule wins: national listing, plan protection, age,
/// predicted score, visible but below threshold, no visible image.
pub fn assign_group(e: &EpcAssessment, cfg: &PipelineConfig) -> HeritageAssignment {
    let (group, basis) = if e.protection.contains(&ProtectionSource::NationalListed) {
        (HeritageGroup::NationalListed, "national register listing".to_string())
    } else if e.protection.contains(&ProtectionSource::PlanProtected) {
        (HeritageGroup::PlanProtected, "plan protection".to_string())
    } else if e.construction_year < cfg.age_cutoff_year {
        (HeritageGroup::AgeBased, format!("construction year {} before {}", e.construction_year, cfg.age_cutoff_year))
    } else if e.construction_year == cfg.default_uncertain_year {
        (HeritageGroup::AgeBased, format!("default construction year {}", cfg.default_uncertain_year))
    } else {
        let cmp = if cfg.threshold_inclusive { "≥" } else { ">" };
        match e.predicted_heritage_value {
            Some(v) if cfg.meets_threshold(u32::from(v)) => {
                (HeritageGroup::Predicted, format!("predicted value {v} {cmp} {}", cfg.heritage_threshold))
            }
            Some(v) => (HeritageGroup::None, format!("predicted value {v} not {cmp} {}", cfg.heritage_threshold)),
            None if e.n_observations > 0 => (HeritageGroup::None, "visible observation without a score".into()),
            None => (HeritageGroup::NoImage, "no visible street view image".into()),
        }
    };
    HeritageAssignment {
        epc_id: e.epc_id.clone(),
        group,
        basis,
        predicted_heritage_value: e.predicted_heritage_value,
        heated_floor_area_m2: e.heated_floor_area_m2,
    }
}

pub fn assign_all(epcs: &[EpcAssessment], cfg: &PipelineConfig) -> Vec<HeritageAssignment> {
    epcs.iter().map(|e| assign_group(e, cfg)).collect()
}

/// Exact floor-area sums, kept in integer thousandths of a square metre.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaTotals {
    pub milli_m2: BTreeMap<HeritageGroup, i64>,
}

pub fn to_milli_m2(m2: f64) -> i64 {
    (m2 * 1000.0).round() as i64
}

impl AreaTotals {
    pub fn group_m2(&self, g: HeritageGroup) -> f64 {
        self.milli_m2.get(&g).copied().unwrap_or(0) as f64 / 1000.0
    }

    pub fn group_mm2(&self, g: HeritageGroup) -> f64 {
        self.milli_m2.get(&g).copied().unwrap_or(0) as f64 / 1e9
    }

    pub fn total_milli_m2(&self) -> i64 {
        self.milli_m2.values().sum()
    }

    pub fn total_mm2(&self) -> f64 {
        self.total_milli_m2() as f64 / 1e9
    }
}

pub fn floor_area_totals(assignments: &[HeritageAssignment]) -> AreaTotals {
    let mut t = AreaTotals { milli_m2: HeritageGroup::ALL.iter().map(|&g| (g, 0)).collect() };
    for a in assignments {
        *t.milli_m2.get_mut(&a.group).expect("all groups present") += to_milli_m2(a.heated_floor_area_m2);
    }
    t
}

#[derive(Debug, Serialize, Deserialize)]
struct AssignmentRow {
    epc_id: String,
    group: HeritageGroup,
    basis: String,
    predicted_heritage_value: Option<u8>,
    heated_floor_area_m2: f64,
}

pub fn write_assignments_csv<W: std::io::Write>(rows: &[HeritageAssignment], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for a in rows {
        w.serialize(AssignmentRow {
            epc_id: a.epc_id.clone(),
            group: a.group,
            basis: a.basis.clone(),
            predicted_heritage_value: a.predicted_heritage_value,
            heated_floor_area_m2: a.heated_floor_area_m2,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_assignments_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<HeritageAssignment>> {
    csv::Reader::from_reader(input)
        .deserialize::<AssignmentRow>()
        .map(|r| {
            r.map(|r| HeritageAssignment {
                epc_id: r.epc_id,
                group: r.group,
                basis: r.basis,
                predicted_heritage_value: r.predicted_heritage_value,
                heated_floor_area_m2: r.heated_floor_area_m2,
            })
        })
        .collect()
}

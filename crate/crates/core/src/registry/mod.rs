//! Certificate, footprint, road, protection-register and area-income records,
//! and the linking of certificates to footprints.

mod ingest;
mod matching;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geom::{self, Point};

pub use ingest::{
    load_datasets, parse_epc_csv, parse_register_csv, write_rejects_csv, DatasetPaths, Datasets, IngestError, LoadOptions,
    Reject,
};
pub use matching::{
    attach_context, attach_registers, match_epc_to_footprints, EpcMatch, MatchMethod, MatchOutcome, RegisterResidual,
    UnmatchedEpc,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Multifamily,
    Nonresidential,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Multifamily, Category::Nonresidential];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Multifamily => "multifamily",
            Category::Nonresidential => "nonresidential",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::Multifamily => "Multifamily",
            Category::Nonresidential => "Non-residential",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "multifamily" => Ok(Category::Multifamily),
            "nonresidential" => Ok(Category::Nonresidential),
            other => Err(format!("unknown category `{other}`")),
        }
    }
}

/// One energy performance certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpcRecord {
    pub epc_id: String,
    pub building_uuids: Vec<String>,
    pub category: Category,
    pub construction_year: i32,
    pub floors: u32,
    pub heated_floor_area_m2: f64,
    pub centroid: Point,
    /// Street address used in the prompt; absent in most synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
}

/// A simple footprint polygon with its exterior ring stored counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintRecord {
    pub building_uuid: String,
    pub ring: Vec<Point>,
    pub centroid: Point,
}

impl FootprintRecord {
    /// Validates and normalises a ring (drops a repeated closing vertex,
    /// reorients to counter-clockwise).
    pub fn new(building_uuid: impl Into<String>, mut ring: Vec<Point>) -> Result<Self, String> {
        if ring.len() >= 2 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            return Err("invariant: polygon needs at least 3 distinct vertices".into());
        }
        if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err("invariant: non-finite coordinate".into());
        }
        let area = geom::signed_area(&ring);
        let scale = geom::perimeter(&ring).powi(2);
        if area.abs() <= 1e-9 * scale.max(1.0) {
            return Err("invariant: area > 0".into());
        }
        if !geom::is_simple_ring(&ring) {
            return Err("invariant: polygon is simple".into());
        }
        if area < 0.0 {
            ring.reverse();
        }
        let centroid = geom::centroid(&ring);
        Ok(FootprintRecord { building_uuid: building_uuid.into(), ring, centroid })
    }

    pub fn area(&self) -> f64 {
        geom::signed_area(&self.ring)
    }

    pub fn bbox(&self) -> geom::BBox {
        geom::BBox::of(&self.ring).expect("ring has vertices")
    }

    pub fn contains(&self, p: Point) -> bool {
        geom::point_in_ring(p, &self.ring)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadPolyline {
    pub road_id: String,
    pub points: Vec<Point>,
}

impl RoadPolyline {
    pub fn new(road_id: impl Into<String>, points: Vec<Point>) -> Result<Self, String> {
        if points.len() < 2 {
            return Err("invariant: polyline needs at least 2 points".into());
        }
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err("invariant: consecutive points distinct".into());
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err("invariant: non-finite coordinate".into());
        }
        Ok(RoadPolyline { road_id: road_id.into(), points })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectionSource {
    NationalListed,
    PlanProtected,
}

impl std::str::FromStr for ProtectionSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "national_listed" => Ok(ProtectionSource::NationalListed),
            "plan_protected" => Ok(ProtectionSource::PlanProtected),
            other => Err(format!("unknown register source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeritageRegisterEntry {
    pub building_uuid: String,
    pub source: ProtectionSource,
    #[serde(default)]
    pub note: String,
}

/// Polygon(s) carrying a statistic or a name; holes are not modelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaPolygon {
    pub rings: Vec<Vec<Point>>,
}

impl AreaPolygon {
    pub fn contains(&self, p: Point) -> bool {
        self.rings.iter().any(|r| geom::point_in_ring(p, r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncomeArea {
    pub area_id: String,
    pub polygon: AreaPolygon,
    pub avg_disposable_income_ksek: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionArea {
    pub name: String,
    pub polygon: AreaPolygon,
}

/// Disposable-income band, KSEK per person and year. Lower bound inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IncomeBand {
    #[serde(rename = "lt300")]
    Below300,
    #[serde(rename = "300_400")]
    From300To400,
    #[serde(rename = "400_500")]
    From400To500,
    #[serde(rename = "500_600")]
    From500To600,
    #[serde(rename = "gt600")]
    From600,
}

impl IncomeBand {
    pub const ALL: [IncomeBand; 5] = [
        IncomeBand::Below300,
        IncomeBand::From300To400,
        IncomeBand::From400To500,
        IncomeBand::From500To600,
        IncomeBand::From600,
    ];

    pub fn from_income(ksek: f64) -> IncomeBand {
        if ksek < 300.0 {
            IncomeBand::Below300
        } else if ksek < 400.0 {
            IncomeBand::From300To400
        } else if ksek < 500.0 {
            IncomeBand::From400To500
        } else if ksek < 600.0 {
            IncomeBand::From500To600
        } else {
            IncomeBand::From600
        }
    }

    /// Column header in report tables.
    pub fn label(self) -> &'static str {
        match self {
            IncomeBand::Below300 => "300>",
            IncomeBand::From300To400 => "300-400",
            IncomeBand::From400To500 => "400-500",
            IncomeBand::From500To600 => "500-600",
            IncomeBand::From600 => "600<",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionFlag {
    Stockholm,
    Other,
}

impl RegionFlag {
    pub fn label(self) -> &'static str {
        match self {
            RegionFlag::Stockholm => "Stockholm",
            RegionFlag::Other => "Not Stockholm",
        }
    }
}

/// A footprint together with everything linked to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedBuilding {
    pub building_uuid: String,
    pub epc_id: Option<String>,
    pub match_method: Option<MatchMethod>,
    pub footprint: FootprintRecord,
    pub protection: BTreeSet<ProtectionSource>,
    pub income_band: Option<IncomeBand>,
    pub region_flag: Option<RegionFlag>,
    pub region_name: Option<String>,
}

impl fmt::Display for MatchedBuilding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.building_uuid)?;
        if let Some(e) = &self.epc_id {
            write!(f, " (epc {e})")?;
        }
        Ok(())
    }
}

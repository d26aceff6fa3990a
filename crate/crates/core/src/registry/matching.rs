//! Certificate-to-footprint linking and attachment of registers and area context.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{
    EpcRecord, FootprintRecord, HeritageRegisterEntry, IncomeArea, IncomeBand, MatchedBuilding, RegionArea, RegionFlag,
};
use crate::geom::{BBox, Point};
use crate::index::GridIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    Uuid,
    Pip,
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpcMatch {
    pub epc_id: String,
    pub method: MatchMethod,
    pub building_uuids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmatchedEpc {
    pub epc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    /// One entry per footprint, in footprint input order.
    pub buildings: Vec<MatchedBuilding>,
    pub matches: Vec<EpcMatch>,
    pub unmatched: Vec<UnmatchedEpc>,
}

/// Links certificates to footprints: by UUID, then by containment of the
/// certificate centroid, then by nearest footprint centroid within
/// `radius_m`. A footprint is linked to at most one certificate; the first
/// claim in priority order wins.
pub fn match_epc_to_footprints(epcs: &[EpcRecord], footprints: &[FootprintRecord], radius_m: f64) -> MatchOutcome {
    let by_uuid: HashMap<&str, usize> =
        footprints.iter().enumerate().map(|(i, f)| (f.building_uuid.as_str(), i)).collect();
    let mut owner: Vec<Option<(usize, MatchMethod)>> = vec![None; footprints.len()];
    let mut matches: Vec<Option<EpcMatch>> = vec![None; epcs.len()];
    let mut reasons: Vec<Option<String>> = vec![None; epcs.len()];

    // Pass 1: UUID join.
    let mut pending = Vec::new();
    for (ei, epc) in epcs.iter().enumerate() {
        let hits: Vec<usize> = epc.building_uuids.iter().filter_map(|u| by_uuid.get(u.as_str()).copied()).collect();
        if hits.is_empty() {
            pending.push(ei);
            continue;
        }
        let mut claimed = Vec::new();
        for fi in hits {
            if owner[fi].is_none() {
                owner[fi] = Some((ei, MatchMethod::Uuid));
                claimed.push(footprints[fi].building_uuid.clone());
            }
        }
        if claimed.is_empty() {
            reasons[ei] = Some("uuid hit already linked to another certificate".into());
        } else {
            matches[ei] = Some(EpcMatch { epc_id: epc.epc_id.clone(), method: MatchMethod::Uuid, building_uuids: claimed });
        }
    }

    let index = GridIndex::new(footprints.iter().map(FootprintRecord::bbox).collect(), 100.0);
    let centroid_index = GridIndex::new(
        footprints.iter().map(|f| BBox { min: f.centroid, max: f.centroid }).collect(),
        radius_m.max(1.0),
    );

    // Pass 2: containment, pass 3: nearest centroid.
    let mut still_pending = Vec::new();
    for ei in pending {
        let c = epcs[ei].centroid;
        let pip = index
            .query(&BBox { min: c, max: c })
            .into_iter()
            .find(|&fi| footprints[fi].contains(c));
        match pip {
            Some(fi) if owner[fi].is_none() => {
                owner[fi] = Some((ei, MatchMethod::Pip));
                matches[ei] = Some(EpcMatch {
                    epc_id: epcs[ei].epc_id.clone(),
                    method: MatchMethod::Pip,
                    building_uuids: vec![footprints[fi].building_uuid.clone()],
                });
            }
            Some(fi) => {
                reasons[ei] =
                    Some(format!("centroid inside {} which is linked to another certificate", footprints[fi].building_uuid))
            }
            None => still_pending.push(ei),
        }
    }
    for ei in still_pending {
        let c = epcs[ei].centroid;
        let q = BBox { min: Point::new(c.x - radius_m, c.y - radius_m), max: Point::new(c.x + radius_m, c.y + radius_m) };
        let nearest = centroid_index
            .query(&q)
            .into_iter()
            .filter(|&fi| owner[fi].is_none())
            .map(|fi| (fi, footprints[fi].centroid.dist(c)))
            .filter(|&(_, d)| d <= radius_m)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        match nearest {
            Some((fi, _)) => {
                owner[fi] = Some((ei, MatchMethod::Nearest));
                matches[ei] = Some(EpcMatch {
                    epc_id: epcs[ei].epc_id.clone(),
                    method: MatchMethod::Nearest,
                    building_uuids: vec![footprints[fi].building_uuid.clone()],
                });
            }
            None => {
                reasons[ei] = Some(format!("no unlinked footprint centroid within {radius_m} m"));
            }
        }
    }

    let buildings = footprints
        .iter()
        .zip(&owner)
        .map(|(f, o)| MatchedBuilding {
            building_uuid: f.building_uuid.clone(),
            epc_id: o.map(|(ei, _)| epcs[ei].epc_id.clone()),
            match_method: o.map(|(_, m)| m),
            footprint: f.clone(),
            protection: BTreeSet::new(),
            income_band: None,
            region_flag: None,
            region_name: None,
        })
        .collect();
    let unmatched = epcs
        .iter()
        .zip(reasons)
        .filter_map(|(e, r)| r.map(|reason| UnmatchedEpc { epc_id: e.epc_id.clone(), reason }))
        .collect();
    MatchOutcome { buildings, matches: matches.into_iter().flatten().collect(), unmatched }
}

/// Register entries whose UUID matched no building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterResidual {
    pub entry: HeritageRegisterEntry,
    pub reason: String,
}

/// Adds protection sources to buildings by UUID. Idempotent.
pub fn attach_registers(matched: &mut [MatchedBuilding], entries: &[HeritageRegisterEntry]) -> Vec<RegisterResidual> {
    let by_uuid: HashMap<String, usize> =
        matched.iter().enumerate().map(|(i, b)| (b.building_uuid.clone(), i)).collect();
    let mut residuals = Vec::new();
    for e in entries {
        match by_uuid.get(&e.building_uuid) {
            Some(&i) => {
                matched[i].protection.insert(e.source);
            }
            None => residuals.push(RegisterResidual { entry: e.clone(), reason: "building_uuid matches no footprint".into() }),
        }
    }
    residuals
}

/// Sets income band and region from the first area containing each footprint
/// centroid. Buildings outside every area keep the fields empty. Idempotent.
pub fn attach_context(
    matched: &mut [MatchedBuilding],
    income_areas: &[IncomeArea],
    regions: &[RegionArea],
    capital_region: &str,
) {
    let income_index = GridIndex::new(
        income_areas.iter().map(|a| area_bbox(&a.polygon.rings)).collect(),
        500.0,
    );
    let region_index = GridIndex::new(regions.iter().map(|a| area_bbox(&a.polygon.rings)).collect(), 2000.0);
    for b in matched.iter_mut() {
        let c = b.footprint.centroid;
        let probe = BBox { min: c, max: c };
        b.income_band = income_index
            .query(&probe)
            .into_iter()
            .find(|&i| income_areas[i].polygon.contains(c))
            .map(|i| IncomeBand::from_income(income_areas[i].avg_disposable_income_ksek));
        let region = region_index.query(&probe).into_iter().find(|&i| regions[i].polygon.contains(c));
        b.region_name = region.map(|i| regions[i].name.clone());
        b.region_flag = region.map(|i| {
            if regions[i].name.eq_ignore_ascii_case(capital_region) {
                RegionFlag::Stockholm
            } else {
                RegionFlag::Other
            }
        });
    }
}

fn area_bbox(rings: &[Vec<Point>]) -> BBox {
    let all: Vec<Point> = rings.iter().flatten().copied().collect();
    BBox::of(&all).unwrap_or(BBox { min: Point::new(f64::MAX, f64::MAX), max: Point::new(f64::MIN, f64::MIN) })
}

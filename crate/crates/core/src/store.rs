//! The trust table: per-vehicle evidence history shared by every intersection
//! manager of an episode.
//!
//! Records hold cumulative `(r, s)` counters rather than opinions. Fusing two
//! evidence-derived opinions is the same as adding their counters, so the
//! counter form is exact and never runs into dogmatic opinions. A vehicle with
//! no record and no pending road-side report is trusted fully (`1.0`).

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sl::{
    fuse_cumulative, opinion_from_evidence, trust_score, EvidenceCounter, Opinion,
    DEFAULT_BASE_RATE, TOLERANCE,
};

/// Trust reported for a vehicle that has never been observed.
pub const UNKNOWN_VEHICLE_TRUST: f64 = 1.0;

const HEADER: [&str; 5] = ["vehicle_id", "r", "s", "base_rate", "last_trust"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Controller bin a vehicle currently sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleStatus {
    Unprocessed,
    Approved,
    Safe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustRecord {
    pub vehicle_id: VehicleId,
    pub counters: EvidenceCounter,
    pub base_rate: f64,
    pub last_trust: f64,
}

impl TrustRecord {
    fn new(vehicle_id: VehicleId, counters: EvidenceCounter, base_rate: f64) -> Result<Self> {
        let mut rec = TrustRecord {
            vehicle_id,
            counters,
            base_rate,
            last_trust: 0.0,
        };
        rec.refresh()?;
        Ok(rec)
    }

    pub fn opinion(&self) -> Result<Opinion> {
        opinion_from_evidence(self.counters, self.base_rate)
    }

    fn refresh(&mut self) -> Result<f64> {
        self.last_trust = trust_score(&self.opinion()?);
        Ok(self.last_trust)
    }
}

/// Which branch of the four-case lookup answered a trust query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupCase {
    Unknown,
    Known,
    ReportOnly,
    KnownAndReport,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrustStore {
    records: BTreeMap<VehicleId, TrustRecord>,
    pending: BTreeMap<VehicleId, Opinion>,
}

impl TrustStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, id: VehicleId) -> Option<&TrustRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &TrustRecord> {
        self.records.values()
    }

    pub fn pending_report(&self, id: VehicleId) -> Option<&Opinion> {
        self.pending.get(&id)
    }

    pub fn lookup_case(&self, id: VehicleId) -> LookupCase {
        match (self.records.contains_key(&id), self.pending.contains_key(&id)) {
            (false, false) => LookupCase::Unknown,
            (true, false) => LookupCase::Known,
            (false, true) => LookupCase::ReportOnly,
            (true, true) => LookupCase::KnownAndReport,
        }
    }

    /// Trust lookup. A pending road-side report is folded into the record.
    pub fn get_trust(&mut self, id: VehicleId) -> f64 {
        match self.pending.remove(&id) {
            None => self
                .records
                .get(&id)
                .map_or(UNKNOWN_VEHICLE_TRUST, |r| r.last_trust),
            Some(report) => self.consume_report(id, report),
        }
    }

    /// Same answer as [`get_trust`](Self::get_trust) without consuming reports.
    pub fn peek_trust(&self, id: VehicleId) -> f64 {
        match (self.records.get(&id), self.pending.get(&id)) {
            (None, None) => UNKNOWN_VEHICLE_TRUST,
            (Some(rec), None) => rec.last_trust,
            (None, Some(report)) => trust_score(report),
            (Some(rec), Some(report)) => {
                let stored = rec.opinion().expect("stored counters are valid");
                trust_score(&fuse_cumulative(&stored, report).expect("report is not dogmatic"))
            }
        }
    }

    fn consume_report(&mut self, id: VehicleId, report: Opinion) -> f64 {
        let evidence = report
            .to_evidence()
            .expect("dogmatic reports are rejected on submission");
        let rec = match self.records.remove(&id) {
            None => TrustRecord::new(id, evidence, report.base_rate()),
            Some(rec) => {
                let stored = rec.opinion().expect("stored counters are valid");
                let fused = fuse_cumulative(&stored, &report).expect("report is not dogmatic");
                TrustRecord::new(id, rec.counters + evidence, fused.base_rate())
            }
        }
        .expect("fused evidence is finite and non-negative");
        let trust = rec.last_trust;
        self.records.insert(id, rec);
        trust
    }

    /// Queues a road-side (LTA) report. Several pending reports are fused.
    pub fn submit_lta_report(&mut self, id: VehicleId, report: Opinion) -> Result<()> {
        if report.is_dogmatic() {
            return Err(Error::DogmaticReport(id.0));
        }
        let merged = match self.pending.get(&id) {
            Some(prev) => fuse_cumulative(prev, &report)?,
            None => report,
        };
        self.pending.insert(id, merged);
        Ok(())
    }

    /// Adds evidence to a vehicle's counters and returns the new trust.
    pub fn apply_evidence(&mut self, id: VehicleId, delta: EvidenceCounter) -> Result<f64> {
        delta.validate()?;
        match self.records.get_mut(&id) {
            Some(rec) => {
                rec.counters += delta;
                rec.refresh()
            }
            None => {
                let rec = TrustRecord::new(id, delta, DEFAULT_BASE_RATE)?;
                let trust = rec.last_trust;
                self.records.insert(id, rec);
                Ok(trust)
            }
        }
    }

    /// Writes the table as `vehicle_id,r,s,base_rate,last_trust` lines.
    ///
    /// Pending road-side reports are not part of the file format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "{}", HEADER.join(","))?;
            for rec in self.records.values() {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    rec.vehicle_id,
                    rec.counters.positive,
                    rec.counters.negative,
                    rec.base_rate,
                    rec.last_trust
                )?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

        match lines.next() {
            Some((_, header)) if header.split(',').map(str::trim).eq(HEADER) => {}
            Some((line, _)) => {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected header `{}`", HEADER.join(",")),
                ))
            }
            None => return Err(Error::parse(path, 1, "missing header")),
        }

        let mut store = TrustStore::new();
        for (line, content) in lines {
            if content.is_empty() {
                continue;
            }
            let rec = parse_record(content).map_err(|msg| Error::parse(path, line, msg))?;
            if store.records.contains_key(&rec.vehicle_id) {
                return Err(Error::parse(
                    path,
                    line,
                    format!("duplicate record for vehicle {}", rec.vehicle_id),
                ));
            }
            store.records.insert(rec.vehicle_id, rec);
        }
        Ok(store)
    }
}

fn parse_record(line: &str) -> std::result::Result<TrustRecord, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != HEADER.len() {
        return Err(format!("expected {} fields, found {}", HEADER.len(), fields.len()));
    }
    let id: u32 = fields[0]
        .parse()
        .map_err(|_| format!("bad vehicle_id `{}`", fields[0]))?;
    if id == 0 {
        return Err("vehicle_id must be positive".into());
    }
    let num = |i: usize| -> std::result::Result<f64, String> {
        fields[i]
            .parse::<f64>()
            .map_err(|_| format!("bad {} `{}`", HEADER[i], fields[i]))
    };
    let (r, s, base_rate, last_trust) = (num(1)?, num(2)?, num(3)?, num(4)?);
    let counters = EvidenceCounter::new(r, s).map_err(|e| e.to_string())?;
    if !(0.0..=1.0).contains(&base_rate) {
        return Err(format!("base_rate {base_rate} outside [0,1]"));
    }
    let rec = TrustRecord::new(VehicleId(id), counters, base_rate).map_err(|e| e.to_string())?;
    if (rec.last_trust - last_trust).abs() > TOLERANCE {
        return Err(format!(
            "last_trust {last_trust} inconsistent with counters (expected {})",
            rec.last_trust
        ));
    }
    Ok(TrustRecord { last_trust, ..rec })
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: VehicleId = VehicleId(7);

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    fn op(r: f64, s: f64) -> Opinion {
        opinion_from_evidence(EvidenceCounter::new(r, s).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn unknown_vehicle_is_fully_trusted() {
        let mut store = TrustStore::new();
        assert_eq!(store.get_trust(A), 1.0);
        assert!(store.is_empty());
        assert_eq!(store.lookup_case(A), LookupCase::Unknown);
    }

    #[test]
    fn known_vehicle_uses_counters() {
        let mut store = TrustStore::new();
        store
            .apply_evidence(A, EvidenceCounter::new(3.0, 1.0).unwrap())
            .unwrap();
        assert_eq!(store.lookup_case(A), LookupCase::Known);
        assert!(close(store.get_trust(A), 2.0 / 3.0));
    }

    #[test]
    fn record_plus_report_is_fused_and_consumed() {
        let mut store = TrustStore::new();
        store.apply_evidence(A, EvidenceCounter::positive(1.0)).unwrap();
        store.submit_lta_report(A, op(0.0, 1.0)).unwrap();
        assert_eq!(store.lookup_case(A), LookupCase::KnownAndReport);
        assert!(close(store.peek_trust(A), 0.5));
        assert!(close(store.get_trust(A), 0.5));
        assert_eq!(store.lookup_case(A), LookupCase::Known);
        let rec = store.record(A).unwrap();
        assert!(close(rec.counters.positive, 1.0) && close(rec.counters.negative, 1.0));
        assert!(close(store.get_trust(A), 0.5));
    }

    #[test]
    fn report_only_case() {
        let mut store = TrustStore::new();
        let report = op(0.0, 3.0);
        store.submit_lta_report(A, report).unwrap();
        assert_eq!(store.lookup_case(A), LookupCase::ReportOnly);
        assert!(close(store.get_trust(A), trust_score(&report)));
    }

    #[test]
    fn pending_reports_are_prefused() {
        let mut store = TrustStore::new();
        store.submit_lta_report(A, op(0.0, 1.0)).unwrap();
        store.submit_lta_report(A, op(0.0, 1.0)).unwrap();
        assert!(close(store.get_trust(A), 0.25));
    }

    #[test]
    fn dogmatic_report_rejected() {
        let mut store = TrustStore::new();
        let dogmatic = Opinion::new(0.0, 1.0, 0.0, 0.5).unwrap();
        assert!(matches!(
            store.submit_lta_report(A, dogmatic),
            Err(Error::DogmaticReport(7))
        ));
        assert_eq!(store.get_trust(A), 1.0);
    }

    #[test]
    fn apply_evidence_examples() {
        let mut store = TrustStore::new();
        assert!(close(store.apply_evidence(A, EvidenceCounter::positive(1.0)).unwrap(), 2.0 / 3.0));

        let b = VehicleId(8);
        store.apply_evidence(b, EvidenceCounter::positive(2.0)).unwrap();
        assert!(close(store.apply_evidence(b, EvidenceCounter::negative(1.0)).unwrap(), 0.6));
        assert!(close(store.apply_evidence(b, EvidenceCounter::EMPTY).unwrap(), 0.6));

        let bad = EvidenceCounter {
            positive: -1.0,
            negative: 0.0,
        };
        assert!(store.apply_evidence(b, bad).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trust.csv");

        let empty = TrustStore::new();
        empty.save(&path).unwrap();
        assert_eq!(TrustStore::load(&path).unwrap(), empty);

        let mut store = TrustStore::new();
        for i in 1..=10u32 {
            let ev = EvidenceCounter::new(f64::from(i) * 0.7, f64::from(i % 3) / 3.0).unwrap();
            store.apply_evidence(VehicleId(i), ev).unwrap();
        }
        store.save(&path).unwrap();
        let loaded = TrustStore::load(&path).unwrap();
        assert_eq!(loaded, store);
        for (a, b) in loaded.records().zip(store.records()) {
            assert_eq!(a.counters.positive.to_bits(), b.counters.positive.to_bits());
            assert_eq!(a.last_trust.to_bits(), b.last_trust.to_bits());
        }
    }

    #[test]
    fn load_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let cases = [
            "vehicle_id,r,s,base_rate,last_trust\n1,-1,0,0.5,0.25\n",
            "vehicle_id,r,s,base_rate,last_trust\n1,1,0\n",
            "id,r,s\n",
            "vehicle_id,r,s,base_rate,last_trust\n1,1,0,0.5,0.9\n",
            "vehicle_id,r,s,base_rate,last_trust\n1,0,0,0.5,0.5\n1,0,0,0.5,0.5\n",
            "vehicle_id,r,s,base_rate,last_trust\n0,0,0,0.5,0.5\n",
        ];
        for text in cases {
            std::fs::write(&path, text).unwrap();
            let err = TrustStore::load(&path).unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "{text:?} -> {err}");
        }
        std::fs::write(&path, cases[0]).unwrap();
        match TrustStore::load(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }
}

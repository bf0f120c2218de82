//! CSV ingestion and export for strata, counts, scores and mappings.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::flows::FlowCounts;
use super::scores::{Individual, ScoreMatrix};
use super::space::{AgeBand, Gender, Stratum, StrataSpace};
use super::StrataError;

fn input_err(e: impl std::fmt::Display) -> StrataError {
    StrataError::Input(e.to_string())
}

#[derive(Debug, Serialize, Deserialize)]
struct StratumRow {
    id: String,
    #[serde(default)]
    gender: String,
    #[serde(default)]
    age: String,
    #[serde(default)]
    location: String,
}

pub fn read_strata(reader: impl Read) -> Result<Vec<Stratum>, StrataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize::<StratumRow>()
        .map(|row| {
            let row = row.map_err(input_err)?;
            Ok(Stratum {
                gender: row.gender.parse::<Gender>()?,
                age: if row.age.trim().is_empty() { None } else { Some(row.age.parse::<AgeBand>()?) },
                location: Some(row.location).filter(|l| !l.is_empty()),
                id: row.id,
            })
        })
        .collect()
}

pub fn write_strata(writer: impl Write, strata: &[Stratum]) -> Result<(), StrataError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in strata {
        w.serialize(StratumRow {
            id: s.id.clone(),
            gender: s.gender.to_string(),
            age: s.age.map(|a| a.to_string()).unwrap_or_default(),
            location: s.location.clone().unwrap_or_default(),
        })
        .map_err(input_err)?;
    }
    w.flush().map_err(input_err)
}

#[derive(Debug, Serialize, Deserialize)]
struct CountRow {
    source_stratum: String,
    recipient_stratum: String,
    count: u64,
}

pub fn read_counts(reader: impl Read, space: Arc<StrataSpace>) -> Result<FlowCounts, StrataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let rows = rdr.deserialize::<CountRow>().collect::<Result<Vec<_>, _>>().map_err(input_err)?;
    FlowCounts::from_records(space, rows.iter().map(|r| (r.source_stratum.as_str(), r.recipient_stratum.as_str(), r.count)))
}

/// Writes one row per non-masked pair, zeros included.
pub fn write_counts(writer: impl Write, counts: &FlowCounts) -> Result<(), StrataError> {
    let space = counts.space();
    let mut w = csv::Writer::from_writer(writer);
    for (p, &n) in space.pairs().iter().zip(counts.values()) {
        w.serialize(CountRow {
            source_stratum: space.stratum(p.source).id.clone(),
            recipient_stratum: space.stratum(p.recipient).id.clone(),
            count: n,
        })
        .map_err(input_err)?;
    }
    w.flush().map_err(input_err)
}

/// Writes real-valued flows (`source_stratum, recipient_stratum, value`).
pub fn write_flow_values(writer: impl Write, space: &StrataSpace, values: &[f64]) -> Result<(), StrataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["source_stratum", "recipient_stratum", "value"]).map_err(input_err)?;
    for (p, v) in space.pairs().iter().zip(values) {
        w.write_record([&space.stratum(p.source).id, &space.stratum(p.recipient).id, &v.to_string()])
            .map_err(input_err)?;
    }
    w.flush().map_err(input_err)
}

#[derive(Debug, Deserialize)]
struct IndividualRow {
    id: String,
    stratum: String,
    sampled: String,
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    source_id: String,
    recipient_id: String,
    score: f64,
}

fn parse_flag(s: &str) -> Result<bool, StrataError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(StrataError::Parse(format!("unrecognised flag `{other}`"))),
    }
}

/// Individuals file `(id, stratum, sampled)` and scores file
/// `(source_id, recipient_id, score)`.
pub fn read_scores(individuals: impl Read, scores: impl Read) -> Result<ScoreMatrix, StrataError> {
    let mut rdr = csv::Reader::from_reader(individuals);
    let inds = rdr
        .deserialize::<IndividualRow>()
        .map(|r| {
            let r = r.map_err(input_err)?;
            Ok(Individual { sampled: parse_flag(&r.sampled)?, id: r.id, stratum: r.stratum })
        })
        .collect::<Result<Vec<_>, StrataError>>()?;
    let mut matrix = ScoreMatrix::new(inds)?;
    let mut rdr = csv::Reader::from_reader(scores);
    for row in rdr.deserialize::<ScoreRow>() {
        let row = row.map_err(input_err)?;
        matrix.insert(&row.source_id, &row.recipient_id, row.score)?;
    }
    Ok(matrix)
}

#[derive(Debug, Deserialize)]
struct MappingRow {
    stratum: String,
    coarse: String,
}

/// Mapping file `(stratum, coarse)`.
pub fn read_mapping(reader: impl Read) -> Result<HashMap<String, String>, StrataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize::<MappingRow>()
        .map(|r| r.map(|r| (r.stratum, r.coarse)).map_err(input_err))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strata_and_counts_round_trip() {
        let csv_in = "id,gender,age,location\nm15a,M,15,a\nf15-16a,F,15-16,a\nx,,,\n";
        let strata = read_strata(csv_in.as_bytes()).unwrap();
        assert_eq!(strata[1].age, Some(AgeBand { lo: 15, hi: 16 }));
        assert_eq!(strata[2].gender, Gender::Unspecified);
        assert_eq!(strata[2].location, None);
        let mut out = Vec::new();
        write_strata(&mut out, &strata).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), csv_in);

        let space = Arc::new(StrataSpace::with_gender_mask(strata).unwrap());
        let counts = read_counts("source_stratum,recipient_stratum,count\nm15a,f15-16a,4\nx,m15a,1\n".as_bytes(), space.clone()).unwrap();
        assert_eq!(counts.get(0, 1), 4);
        let mut out = Vec::new();
        write_counts(&mut out, &counts).unwrap();
        let back = read_counts(out.as_slice(), space.clone()).unwrap();
        assert_eq!(back, counts);
        let masked = read_counts("source_stratum,recipient_stratum,count\nm15a,m15a,2\n".as_bytes(), space);
        assert!(matches!(masked, Err(StrataError::MaskedPairs(_))));
    }

    #[test]
    fn reads_scores_and_mapping() {
        let inds = "id,stratum,sampled\n1,a,1\n2,b,true\n";
        let scores = "source_id,recipient_id,score\n1,2,0.8\n";
        let w = read_scores(inds.as_bytes(), scores.as_bytes()).unwrap();
        assert_eq!(w.get("1", "2"), Some(0.8));
        let m = read_mapping("stratum,coarse\na,x\nb,x\n".as_bytes()).unwrap();
        assert_eq!(m["b"], "x");
    }
}

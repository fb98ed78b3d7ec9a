//! Bioassay ingestion: raw fluorescence records, log response ratios and
//! control-level estimates.
//!
//! Only the ratio final/initial fluorescence is ever used, so the fluorescence
//! unit is never interpreted. The log ratio is *not* divided by the exposure
//! duration.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub species_id: String,
    pub contaminant_id: String,
    /// µg/L; zero marks a control.
    pub concentration: f64,
    pub replicate: u32,
    pub fluo_initial: f64,
    pub fluo_final: f64,
    /// True for control records. Set from `concentration == 0` or from the
    /// optional control label column.
    #[serde(default)]
    pub is_control: bool,
}

impl Observation {
    /// Response ratio R = final / initial fluorescence.
    pub fn ratio(&self) -> f64 {
        self.fluo_final / self.fluo_initial
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BioassayDataset {
    pub observations: Vec<Observation>,
}

/// Identifies one concentration-response curve.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CurveKey {
    pub species: String,
    pub contaminant: String,
}

/// One non-control measurement on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsePoint<T> {
    pub species_id: String,
    pub contaminant_id: String,
    pub concentration: T,
    /// Natural log of the response ratio.
    pub y: T,
}

impl<T: Scalar> ResponsePoint<T> {
    pub fn cast<U: Scalar>(&self) -> ResponsePoint<U> {
        ResponsePoint {
            species_id: self.species_id.clone(),
            contaminant_id: self.contaminant_id.clone(),
            concentration: U::lit(self.concentration.as_f64()),
            y: U::lit(self.y.as_f64()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSummary<T> {
    pub species_id: String,
    /// Mean control response ratio.
    pub d: T,
    pub n_controls: usize,
}

/// How control observations are pooled when estimating `d`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlPooling {
    /// All controls of a species, across every contaminant.
    #[default]
    PerSpecies,
    /// Controls of the same (species, contaminant) pair only.
    PerPair,
}

/// Column names and delimiter of the input table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub species: String,
    pub contaminant: String,
    pub concentration: String,
    pub replicate: String,
    pub fluo_initial: String,
    pub fluo_final: String,
    /// Optional column flagging control rows (`1`, `true`, `yes`, `control`).
    pub control: Option<String>,
    pub delimiter: u8,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            species: "species".into(),
            contaminant: "contaminant".into(),
            concentration: "concentration".into(),
            replicate: "replicate".into(),
            fluo_initial: "fluo_initial".into(),
            fluo_final: "fluo_final".into(),
            control: None,
            delimiter: b',',
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<BioassayDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, mapping)
}

pub fn read_dataset<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<BioassayDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(mapping.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };
    let i_species = col(&mapping.species)?;
    let i_contaminant = col(&mapping.contaminant)?;
    let i_conc = col(&mapping.concentration)?;
    let i_rep = col(&mapping.replicate)?;
    let i_f0 = col(&mapping.fluo_initial)?;
    let i_f1 = col(&mapping.fluo_final)?;
    let i_control = mapping.control.as_deref().map(col).transpose()?;

    let mut observations = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let number = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    column: name.to_string(),
                    value: raw.to_string(),
                })
        };
        let concentration = number(i_conc, &mapping.concentration)?;
        let fluo_initial = number(i_f0, &mapping.fluo_initial)?;
        let fluo_final = number(i_f1, &mapping.fluo_final)?;
        let raw_rep = record.get(i_rep).unwrap_or("");
        let replicate = raw_rep.parse::<u32>().map_err(|_| Error::Parse {
            line,
            column: mapping.replicate.clone(),
            value: raw_rep.to_string(),
        })?;
        if concentration < 0.0 {
            return Err(Error::Validation {
                line,
                message: format!("negative concentration {concentration}"),
            });
        }
        if fluo_initial <= 0.0 || fluo_final <= 0.0 {
            return Err(Error::Validation {
                line,
                message: format!(
                    "fluorescence must be positive (initial {fluo_initial}, final {fluo_final})"
                ),
            });
        }
        let labelled = i_control
            .and_then(|i| record.get(i))
            .map(|v| matches!(v.to_ascii_lowercase().as_str(), "1" | "true" | "yes" | "control"))
            .unwrap_or(false);
        observations.push(Observation {
            species_id: record.get(i_species).unwrap_or("").to_string(),
            contaminant_id: record.get(i_contaminant).unwrap_or("").to_string(),
            concentration,
            replicate,
            fluo_initial,
            fluo_final,
            is_control: concentration == 0.0 || labelled,
        });
    }
    if observations.is_empty() {
        log::warn!("dataset contains a header but no observations");
    }
    Ok(BioassayDataset { observations })
}

/// Writes the dataset with the default column names.
pub fn write_dataset<W: Write>(writer: W, ds: &BioassayDataset) -> Result<()> {
    let labelled = ds
        .observations
        .iter()
        .any(|o| o.is_control && o.concentration != 0.0);
    let mut wtr = csv::Writer::from_writer(writer);
    let m = ColumnMapping::default();
    let mut header = vec![
        m.species,
        m.contaminant,
        m.concentration,
        m.replicate,
        m.fluo_initial,
        m.fluo_final,
    ];
    if labelled {
        header.push("control".into());
    }
    wtr.write_record(&header)?;
    for o in &ds.observations {
        let mut row = vec![
            o.species_id.clone(),
            o.contaminant_id.clone(),
            o.concentration.to_string(),
            o.replicate.to_string(),
            o.fluo_initial.to_string(),
            o.fluo_final.to_string(),
        ];
        if labelled {
            row.push(if o.is_control { "1" } else { "0" }.into());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<dataset writer>", e))?;
    Ok(())
}

impl BioassayDataset {
    pub fn species(&self) -> Vec<String> {
        let mut s: Vec<String> = self.observations.iter().map(|o| o.species_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn contaminants(&self) -> Vec<String> {
        let mut s: Vec<String> = self
            .observations
            .iter()
            .map(|o| o.contaminant_id.clone())
            .collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn n_controls(&self) -> usize {
        self.observations.iter().filter(|o| o.is_control).count()
    }

    /// Observations of one contaminant plus every control record (controls
    /// of other contaminants are still needed for species-pooled `d`).
    pub fn for_contaminant(&self, contaminant: &str) -> BioassayDataset {
        BioassayDataset {
            observations: self
                .observations
                .iter()
                .filter(|o| o.contaminant_id == contaminant || o.is_control)
                .cloned()
                .collect(),
        }
    }
}

/// Log response ratios of every non-control observation, grouped by curve.
/// Replicates stay separate points.
pub fn make_responses(ds: &BioassayDataset) -> BTreeMap<CurveKey, Vec<ResponsePoint<f64>>> {
    let mut groups: BTreeMap<CurveKey, Vec<ResponsePoint<f64>>> = BTreeMap::new();
    for o in ds.observations.iter().filter(|o| !o.is_control) {
        groups
            .entry(CurveKey {
                species: o.species_id.clone(),
                contaminant: o.contaminant_id.clone(),
            })
            .or_default()
            .push(ResponsePoint {
                species_id: o.species_id.clone(),
                contaminant_id: o.contaminant_id.clone(),
                concentration: o.concentration,
                y: (o.fluo_final / o.fluo_initial).ln(),
            });
    }
    groups
}

/// Mean control response ratio of a species, pooled over contaminants.
pub fn estimate_control(ds: &BioassayDataset, species_id: &str) -> Result<ControlSummary<f64>> {
    summarize_controls(
        species_id,
        ds.observations
            .iter()
            .filter(|o| o.is_control && o.species_id == species_id),
    )
}

/// Mean control response ratio of one (species, contaminant) pair.
pub fn estimate_control_pair(
    ds: &BioassayDataset,
    species_id: &str,
    contaminant_id: &str,
) -> Result<ControlSummary<f64>> {
    summarize_controls(
        species_id,
        ds.observations.iter().filter(|o| {
            o.is_control && o.species_id == species_id && o.contaminant_id == contaminant_id
        }),
    )
}

impl ControlPooling {
    pub fn estimate(
        self,
        ds: &BioassayDataset,
        species_id: &str,
        contaminant_id: &str,
    ) -> Result<ControlSummary<f64>> {
        match self {
            ControlPooling::PerSpecies => estimate_control(ds, species_id),
            ControlPooling::PerPair => estimate_control_pair(ds, species_id, contaminant_id),
        }
    }
}

fn summarize_controls<'a>(
    species_id: &str,
    controls: impl Iterator<Item = &'a Observation>,
) -> Result<ControlSummary<f64>> {
    // Sorted summation keeps the mean independent of record order.
    let mut ratios: Vec<f64> = controls.map(Observation::ratio).collect();
    if ratios.is_empty() {
        return Err(Error::NoControl(species_id.to_string()));
    }
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    Ok(ControlSummary {
        species_id: species_id.to_string(),
        d: ratios.iter().sum::<f64>() / n as f64,
        n_controls: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "species,contaminant,concentration,replicate,fluo_initial,fluo_final\n";

    fn parse(body: &str) -> Result<BioassayDataset> {
        read_dataset(format!("{HEADER}{body}").as_bytes(), &ColumnMapping::default())
    }

    fn obs(species: &str, conc: f64, f0: f64, f1: f64) -> Observation {
        Observation {
            species_id: species.into(),
            contaminant_id: "diuron".into(),
            concentration: conc,
            replicate: 1,
            fluo_initial: f0,
            fluo_final: f1,
            is_control: conc == 0.0,
        }
    }

    #[test]
    fn maps_row_fields() {
        let ds = parse("Nitzschia,diuron,10,1,250.0,900.0\n").unwrap();
        let o = &ds.observations[0];
        assert_eq!(o.species_id, "Nitzschia");
        assert_eq!(o.contaminant_id, "diuron");
        assert_eq!(o.concentration, 10.0);
        assert_eq!(o.replicate, 1);
        assert_eq!(o.fluo_initial, 250.0);
        assert_eq!(o.fluo_final, 900.0);
        assert!(!o.is_control);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("").unwrap().observations.is_empty());
    }

    #[test]
    fn zero_fluorescence_is_rejected_with_line() {
        let err = parse("a,diuron,1,1,100,100\nb,diuron,10,1,250.0,0\n").unwrap_err();
        match err {
            Error::Validation { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let err = read_dataset(
            "species,contaminant,concentration,replicate,fluo_initial\n".as_bytes(),
            &ColumnMapping::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("fluo_final"), "{err}");
    }

    #[test]
    fn non_numeric_value_reports_row() {
        let err = parse("a,diuron,1,1,100,100\na,diuron,abc,1,100,100\n").unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "concentration");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn remapped_columns_and_delimiter() {
        let mapping = ColumnMapping {
            species: "sp".into(),
            fluo_final: "f4".into(),
            control: Some("ctl".into()),
            delimiter: b';',
            ..ColumnMapping::default()
        };
        let text = "sp;contaminant;concentration;replicate;fluo_initial;f4;ctl\nx;atz;0.5;2;10;20;yes\n";
        let ds = read_dataset(text.as_bytes(), &mapping).unwrap();
        assert!(ds.observations[0].is_control);
        assert_eq!(ds.observations[0].fluo_final, 20.0);
    }

    #[test]
    fn log_ratio_responses() {
        let ds = BioassayDataset {
            observations: vec![
                obs("a", 5.0, 100.0, 100.0),
                obs("a", 5.0, 100.0, 100.0 * std::f64::consts::E),
                obs("a", 0.0, 100.0, 300.0),
            ],
        };
        let groups = make_responses(&ds);
        let pts = &groups[&CurveKey { species: "a".into(), contaminant: "diuron".into() }];
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].y, 0.0);
        assert!((pts[1].y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn control_means() {
        let ds = BioassayDataset {
            observations: vec![
                obs("a", 0.0, 1.0, 2.0),
                obs("a", 0.0, 1.0, 4.0),
                obs("b", 0.0, 2.0, 11.0),
                obs("c", 1.0, 2.0, 11.0),
            ],
        };
        assert_eq!(estimate_control(&ds, "a").unwrap().d, 3.0);
        let b = estimate_control(&ds, "b").unwrap();
        assert_eq!((b.d, b.n_controls), (5.5, 1));
        assert!(matches!(estimate_control(&ds, "c"), Err(Error::NoControl(_))));
    }

    #[test]
    fn pooling_modes() {
        let mut other = obs("a", 0.0, 1.0, 6.0);
        other.contaminant_id = "atrazine".into();
        let ds = BioassayDataset {
            observations: vec![obs("a", 0.0, 1.0, 2.0), other],
        };
        assert_eq!(ControlPooling::PerSpecies.estimate(&ds, "a", "diuron").unwrap().d, 4.0);
        assert_eq!(ControlPooling::PerPair.estimate(&ds, "a", "diuron").unwrap().d, 2.0);
    }

    fn arb_obs() -> impl Strategy<Value = Observation> {
        (
            prop::sample::select(vec!["sp1", "sp2", "sp3"]),
            prop::sample::select(vec!["diuron", "atrazine"]),
            prop_oneof![Just(0.0), 1e-3..1e4f64],
            1u32..4,
            1e-2..1e4f64,
            1e-2..1e4f64,
        )
            .prop_map(|(s, c, conc, r, f0, f1)| Observation {
                species_id: s.into(),
                contaminant_id: c.into(),
                concentration: conc,
                replicate: r,
                fluo_initial: f0,
                fluo_final: f1,
                is_control: conc == 0.0,
            })
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(observations in prop::collection::vec(arb_obs(), 0..40)) {
            let ds = BioassayDataset { observations };
            let mut buf = Vec::new();
            write_dataset(&mut buf, &ds).unwrap();
            let back = read_dataset(buf.as_slice(), &ColumnMapping::default()).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn response_count_excludes_controls(observations in prop::collection::vec(arb_obs(), 0..40)) {
            let ds = BioassayDataset { observations };
            let n: usize = make_responses(&ds).values().map(Vec::len).sum();
            prop_assert_eq!(n, ds.observations.len() - ds.n_controls());
        }

        #[test]
        fn control_estimate_ignores_order(
            observations in prop::collection::vec(arb_obs(), 1..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let ds = BioassayDataset { observations };
            let mut shuffled = ds.clone();
            shuffled.observations.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            for sp in ds.species() {
                let a = estimate_control(&ds, &sp).ok().map(|c| c.d);
                let b = estimate_control(&shuffled, &sp).ok().map(|c| c.d);
                prop_assert_eq!(a, b);
            }
        }
    }
}

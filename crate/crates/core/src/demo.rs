//! Seeded demo tables: monthly state temperatures and a university innovation fixture.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{CatalogError, TableCatalog};
use crate::value::SemanticType;

pub const TEMPS: &str = "temps";
pub const FACULTY: &str = "faculty";
pub const DEPARTMENTS: &str = "departments";
pub const DISCLOSURES: &str = "disclosures";

pub const FIRST_YEAR: i32 = 2014;
pub const LAST_YEAR: i32 = 2024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoSeeds {
    pub temps: u64,
    pub innovation: u64,
}

impl Default for DemoSeeds {
    fn default() -> Self {
        Self {
            temps: 20_140_101,
            innovation: 3_302,
        }
    }
}

/// State code, annual mean (°F), seasonal half-swing (°F).
pub const STATES: [(&str, f64, f64); 50] = [
    ("AK", 27.0, 24.0),
    ("AL", 63.0, 14.5),
    ("AR", 60.5, 17.0),
    ("AZ", 60.0, 17.5),
    ("CA", 59.5, 11.0),
    ("CO", 45.5, 19.0),
    ("CT", 50.0, 19.5),
    ("DE", 55.5, 18.5),
    ("FL", 71.0, 10.5),
    ("GA", 63.5, 14.5),
    ("HI", 70.0, 3.5),
    ("IA", 48.0, 24.0),
    ("ID", 44.5, 19.5),
    ("IL", 52.0, 22.5),
    ("IN", 52.5, 21.0),
    ("KS", 54.5, 21.5),
    ("KY", 56.0, 18.5),
    ("LA", 66.5, 13.5),
    ("MA", 48.0, 19.5),
    ("MD", 54.5, 18.5),
    ("ME", 42.0, 22.0),
    ("MI", 45.0, 21.5),
    ("MN", 41.5, 27.0),
    ("MO", 54.5, 20.5),
    ("MS", 63.5, 15.0),
    ("MT", 42.5, 21.0),
    ("NC", 59.0, 16.5),
    ("ND", 40.5, 29.0),
    ("NE", 48.5, 23.0),
    ("NH", 43.5, 21.5),
    ("NJ", 52.5, 19.0),
    ("NM", 53.5, 17.5),
    ("NV", 50.0, 18.5),
    ("NY", 45.5, 20.5),
    ("OH", 51.0, 20.0),
    ("OK", 59.5, 19.0),
    ("OR", 48.5, 13.5),
    ("PA", 48.5, 19.5),
    ("RI", 50.5, 18.0),
    ("SC", 62.5, 15.5),
    ("SD", 45.0, 25.5),
    ("TN", 57.5, 17.5),
    ("TX", 64.5, 15.5),
    ("UT", 48.5, 20.0),
    ("VA", 55.0, 17.5),
    ("VT", 43.0, 22.0),
    ("WA", 48.5, 13.5),
    ("WI", 43.5, 24.5),
    ("WV", 52.0, 18.0),
    ("WY", 42.5, 20.0),
];

/// Climate table as CSV: `state,date,temp`, one row per state-month, 2014 through 2024.
/// July is the warmest month and January the coldest for every state, before noise.
pub fn temps_csv(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.2).expect("valid sigma");
    let mut out = String::from("state,date,temp\n");
    for (state, mean, swing) in STATES {
        for year in FIRST_YEAR..=LAST_YEAR {
            let trend = 0.04 * f64::from(year - FIRST_YEAR);
            for month in 1..=12 {
                let season = -(2.0 * PI * f64::from(month - 1) / 12.0).cos();
                let t = mean + swing * season + trend + noise.sample(&mut rng);
                let t = (t * 10.0).round() / 10.0;
                writeln!(out, "{state},{year}-{month:02}-15,{t:.1}").expect("write to string");
            }
        }
    }
    out
}

const DEPTS: [(&str, &str); 12] = [
    ("Computer Science", "Engineering"),
    ("Electrical Engineering", "Engineering"),
    ("Mechanical Engineering", "Engineering"),
    ("Chemical Engineering", "Engineering"),
    ("Biology", "Arts and Sciences"),
    ("Chemistry", "Arts and Sciences"),
    ("Physics", "Arts and Sciences"),
    ("Mathematics", "Arts and Sciences"),
    ("Psychology", "Social Sciences"),
    ("Economics", "Social Sciences"),
    ("Medicine", "Medicine"),
    ("Pharmacy", "Medicine"),
];

const RANKS: [&str; 3] = ["Assistant", "Associate", "Full"];
const CATEGORIES: [&str; 4] = ["device", "software", "compound", "method"];

/// Innovation fixture CSVs keyed by table id: departments, faculty and disclosures.
/// About a fifth of faculty with patent-cited papers have no disclosures.
pub fn innovation_csvs(seed: u64) -> BTreeMap<&'static str, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut departments = String::from("department,college,propensity\n");
    let mut faculty = String::from("faculty_id,department,rank,papers,patent_cited_papers,disclosures,hire_year\n");
    let mut disclosures = String::from("disclosure_id,faculty_id,year,category\n");
    let mut next_disclosure = 0;
    for (d, (dept, college)) in DEPTS.iter().enumerate() {
        // Applied departments disclose more.
        let propensity = match *college {
            "Engineering" | "Medicine" => 0.55 + 0.02 * (d % 5) as f64,
            _ => 0.15 + 0.02 * (d % 5) as f64,
        };
        writeln!(departments, "{dept},{college},{propensity:.2}").expect("write");
        let size = rng.random_range(14..=26);
        for k in 0..size {
            let id = format!("F{:02}{:02}", d, k);
            let rank = RANKS[rng.random_range(0..RANKS.len())];
            let seniority = match rank {
                "Assistant" => 1.0,
                "Associate" => 2.0,
                _ => 3.5,
            };
            let papers = (rng.random_range(4.0..18.0) * seniority) as u32;
            let cited = (f64::from(papers) * propensity * rng.random_range(0.0..0.3)).round() as u32;
            let disclosed = if cited == 0 {
                u32::from(rng.random_bool(0.1))
            } else if rng.random_bool(0.2) {
                0
            } else {
                1 + (f64::from(cited) * rng.random_range(0.2..0.8)) as u32
            };
            let hire = rng.random_range(1985..=2022);
            writeln!(faculty, "{id},{dept},{rank},{papers},{cited},{disclosed},{hire}").expect("write");
            for _ in 0..disclosed {
                let year = rng.random_range(hire.max(2000)..=2024);
                let cat = CATEGORIES[rng.random_range(0..CATEGORIES.len())];
                writeln!(disclosures, "D{next_disclosure:05},{id},{year},{cat}").expect("write");
                next_disclosure += 1;
            }
        }
    }
    BTreeMap::from([(DEPARTMENTS, departments), (FACULTY, faculty), (DISCLOSURES, disclosures)])
}

/// Registers every demo table.
pub fn demo_catalog(seeds: DemoSeeds) -> Result<TableCatalog, CatalogError> {
    let mut c = TableCatalog::new();
    load_demo(&mut c, seeds)?;
    Ok(c)
}

pub fn load_demo(c: &mut TableCatalog, seeds: DemoSeeds) -> Result<(), CatalogError> {
    c.ingest_csv(TEMPS, &temps_csv(seeds.temps), &BTreeMap::new())?;
    let year = BTreeMap::from([("year".to_string(), SemanticType::Temporal)]);
    let hire = BTreeMap::from([("hire_year".to_string(), SemanticType::Temporal)]);
    for (id, csv) in innovation_csvs(seeds.innovation) {
        let hints = match id {
            DISCLOSURES => &year,
            FACULTY => &hire,
            _ => &BTreeMap::new(),
        };
        c.ingest_csv(id, &csv, hints)?;
    }
    Ok(())
}

/// Commands for the scripted climate walkthrough.
pub fn walkthrough() -> Vec<String> {
    vec![
        "Plot the average monthly temperature in Florida over the past ten years (2014 to 2024).".into(),
        "[brush months 6-8 on the line] Show me the average temperature of each U.S. state in the past 10 years (2014-2024), and rank them from hottest to coolest.".into(),
        "[click months 12, 1, 2 on the line] the ranking updates to winter".into(),
    ]
}

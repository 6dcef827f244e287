use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::encoding::{ShapeGenome, GENOME_LEN};

use super::cvt::{cvt_centroids, NearestIndex};
use super::{FeatureSpace, QdError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Fitness and enstrophy were measured by the evaluator.
    Simulated,
    /// Fitness and enstrophy come from the surrogates.
    Predicted,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Simulated => "simulated",
            Provenance::Predicted => "predicted",
        }
    }

    pub fn parse(s: &str) -> Result<Self, QdError> {
        match s {
            "simulated" => Ok(Provenance::Simulated),
            "predicted" => Ok(Provenance::Predicted),
            other => Err(QdError::Format(format!("unknown provenance {other:?}"))),
        }
    }
}

/// One archive entry. `fitness` is `u_max` (lower is better).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub genome: ShapeGenome,
    pub fitness: f64,
    pub area: f64,
    pub enstrophy: f64,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignOutcome {
    Inserted(usize),
    Replaced(usize),
    Rejected(usize),
}

impl AssignOutcome {
    pub fn niche(&self) -> usize {
        match *self {
            AssignOutcome::Inserted(n)
            | AssignOutcome::Replaced(n)
            | AssignOutcome::Rejected(n) => n,
        }
    }

    pub fn accepted(&self) -> bool {
        !matches!(self, AssignOutcome::Rejected(_))
    }
}

/// Elite container over the cells of a centroidal Voronoi tessellation of
/// the normalized feature square. Each niche is the set of feature points
/// nearer to its centroid than to any other.
#[derive(Clone, Debug)]
pub struct VoronoiArchive {
    space: FeatureSpace,
    index: NearestIndex,
    elites: Vec<Option<Elite>>,
    /// Occupied niches in insertion order, for uniform parent draws.
    occupied: Vec<usize>,
}

impl PartialEq for VoronoiArchive {
    fn eq(&self, other: &Self) -> bool {
        self.space == other.space
            && self.centroids() == other.centroids()
            && self.elites == other.elites
    }
}

pub const ARCHIVE_CSV_HEADER: [&str; 7] = [
    "niche_id",
    "centroid_a",
    "centroid_e",
    "area",
    "enstrophy",
    "fitness",
    "provenance",
];

impl VoronoiArchive {
    /// Empty archive over a fresh seeded tessellation with `capacity` cells.
    pub fn new(capacity: usize, seed: u64, space: FeatureSpace) -> Result<Self, QdError> {
        Ok(Self::with_centroids(cvt_centroids(capacity, seed)?, space))
    }

    pub fn with_centroids(centroids: Vec<[f64; 2]>, space: FeatureSpace) -> Self {
        let k = centroids.len();
        Self {
            space,
            index: NearestIndex::new(centroids),
            elites: vec![None; k],
            occupied: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.elites.len()
    }

    pub fn occupancy(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn feature_space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn centroids(&self) -> &[[f64; 2]] {
        self.index.points()
    }

    pub fn get(&self, niche: usize) -> Option<&Elite> {
        self.elites.get(niche).and_then(Option::as_ref)
    }

    /// Occupied niches in ascending order with their elites.
    pub fn elites(&self) -> impl Iterator<Item = (usize, &Elite)> {
        self.elites
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().map(|e| (i, e)))
    }

    /// The `i`-th occupied niche in insertion order.
    pub fn occupied_niche(&self, i: usize) -> usize {
        self.occupied[i]
    }

    pub fn normalized(&self, elite: &Elite) -> [f64; 2] {
        self.space.normalize(elite.area, elite.enstrophy)
    }

    pub fn niche_of(&self, area: f64, enstrophy: f64) -> usize {
        self.index.nearest(self.space.normalize(area, enstrophy))
    }

    /// Places `elite` in the niche of its features if that niche is empty
    /// or holds a strictly worse (higher) fitness.
    pub fn assign(&mut self, elite: Elite) -> Result<AssignOutcome, QdError> {
        if !(elite.fitness.is_finite() && elite.area.is_finite() && elite.enstrophy.is_finite()) {
            return Err(QdError::NonFinite);
        }
        let niche = self.niche_of(elite.area, elite.enstrophy);
        Ok(match &self.elites[niche] {
            None => {
                self.elites[niche] = Some(elite);
                self.occupied.push(niche);
                AssignOutcome::Inserted(niche)
            }
            Some(incumbent) if elite.fitness < incumbent.fitness => {
                self.elites[niche] = Some(elite);
                AssignOutcome::Replaced(niche)
            }
            Some(_) => AssignOutcome::Rejected(niche),
        })
    }

    /// Removes every elite, keeping the tessellation.
    pub fn clear(&mut self) {
        self.elites.iter_mut().for_each(|e| *e = None);
        self.occupied.clear();
    }

    /// Lowest-fitness elite (lowest niche on ties).
    pub fn best(&self) -> Option<(usize, &Elite)> {
        self.elites()
            .fold(None, |acc: Option<(usize, &Elite)>, (i, e)| match acc {
                Some((_, b)) if b.fitness <= e.fitness => acc,
                _ => Some((i, e)),
            })
    }

    pub fn mean_fitness(&self) -> Option<f64> {
        (!self.is_empty())
            .then(|| self.elites().map(|(_, e)| e.fitness).sum::<f64>() / self.occupancy() as f64)
    }

    /// Re-assigns every elite, in niche order, to a fresh tessellation with
    /// `max_cells` cells; each new cell keeps the best elite mapped to it.
    pub fn reduced(&self, max_cells: usize, seed: u64) -> Result<Self, QdError> {
        if max_cells == 0 {
            return Err(QdError::InvalidCapacity(0));
        }
        if max_cells == self.capacity() {
            return Ok(self.clone());
        }
        let mut out = Self::new(max_cells, seed, self.space)?;
        for (_, e) in self.elites() {
            out.assign(*e)?;
        }
        Ok(out)
    }

    /// Writes the occupied niches as CSV:
    /// `niche_id,centroid_a,centroid_e,area,enstrophy,fitness,provenance,g0..g15`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), QdError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ARCHIVE_CSV_HEADER.iter().map(|s| s.to_string()).collect();
        header.extend((0..GENOME_LEN).map(|i| format!("g{i}")));
        w.write_record(&header)?;
        for (niche, e) in self.elites() {
            let c = self.centroids()[niche];
            let mut row = vec![
                niche.to_string(),
                c[0].to_string(),
                c[1].to_string(),
                e.area.to_string(),
                e.enstrophy.to_string(),
                e.fitness.to_string(),
                e.provenance.as_str().to_string(),
            ];
            row.extend(e.genome.params().iter().map(|g| g.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuilds an archive from its tessellation, feature space and an
    /// archive CSV. Rows must sit in the niche their features map to.
    pub fn read_csv<R: Read>(
        input: R,
        centroids: Vec<[f64; 2]>,
        space: FeatureSpace,
    ) -> Result<Self, QdError> {
        let mut archive = Self::with_centroids(centroids, space);
        let mut r = csv::Reader::from_reader(input);
        let expected = ARCHIVE_CSV_HEADER.len() + GENOME_LEN;
        for record in r.records() {
            let record = record?;
            if record.len() != expected {
                return Err(QdError::Format(format!(
                    "archive row has {} fields, expected {expected}",
                    record.len()
                )));
            }
            let num = |i: usize| -> Result<f64, QdError> {
                record[i]
                    .parse::<f64>()
                    .map_err(|e| QdError::Format(format!("column {}: {e}", i)))
            };
            let niche: usize = record[0]
                .parse()
                .map_err(|e| QdError::Format(format!("niche_id: {e}")))?;
            let genes: Vec<f64> = (ARCHIVE_CSV_HEADER.len()..expected)
                .map(num)
                .collect::<Result<_, _>>()?;
            let elite = Elite {
                genome: ShapeGenome::from_slice(&genes)?,
                area: num(3)?,
                enstrophy: num(4)?,
                fitness: num(5)?,
                provenance: Provenance::parse(&record[6])?,
            };
            match archive.assign(elite)? {
                AssignOutcome::Inserted(n) if n == niche => {}
                other => {
                    return Err(QdError::Format(format!(
                        "row for niche {niche} does not load into its own empty niche ({other:?})"
                    )))
                }
            }
        }
        Ok(archive)
    }
}

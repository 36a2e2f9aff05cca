use std::fmt::Write as _;
use std::path::Path;

use super::{parse_header, parse_num, FormatError};
use crate::detector::ExemplarSet;
use crate::error::Error;
use crate::world::{CellIndex, PatchEmbedding, SiteGrid};

pub const EXEMPLAR_VERSION: u32 = 1;
const VECTORS_SECTION: &str = "[vectors]";

/// Exemplars picked from patches of one site cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarSource {
    /// Manifest the patches come from, as written by the tool that made the file.
    pub site: Option<String>,
    pub cell: CellIndex,
    pub patches: Vec<usize>,
}

/// One class's exemplars on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarFile {
    pub label: String,
    pub threshold: f64,
    pub dim: usize,
    pub source: Option<ExemplarSource>,
    /// Inline vectors; used instead of `source` patches when non-empty.
    pub vectors: Vec<PatchEmbedding>,
}

impl ExemplarFile {
    /// Builds the exemplar set, pulling referenced patches from `grid`.
    pub fn resolve(&self, grid: &SiteGrid) -> crate::Result<ExemplarSet> {
        if self.dim != grid.dim {
            return Err(Error::Config(format!(
                "exemplar dimension {} does not match site dimension {}",
                self.dim, grid.dim
            )));
        }
        if !self.vectors.is_empty() {
            return ExemplarSet::new(self.label.clone(), self.vectors.clone(), self.threshold);
        }
        let src = self.source.as_ref().ok_or_else(|| {
            Error::Config("exemplar file has neither vectors nor a source".into())
        })?;
        let cell = self.source_cell(grid)?;
        let picked = src
            .patches
            .iter()
            .map(|&i| {
                cell.get(i)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("cell {} has no patch {i}", src.cell)))
            })
            .collect::<crate::Result<Vec<_>>>()?;
        ExemplarSet::new(self.label.clone(), picked, self.threshold)
    }

    /// Patches of the referenced cell: the labelled image the buffer is seeded from.
    pub fn source_cell<'g>(&self, grid: &'g SiteGrid) -> crate::Result<&'g [PatchEmbedding]> {
        let src = self
            .source
            .as_ref()
            .ok_or_else(|| Error::Config("exemplar file does not reference a site cell".into()))?;
        grid.check_index(src.cell)?;
        Ok(&grid.cell(src.cell).patches)
    }
}

pub fn load_exemplars(path: &Path) -> Result<ExemplarFile, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    let (pairs, section) = parse_header(&lines)?;
    let mut version = None;
    let (mut label, mut threshold, mut dim) = (None, None, None);
    let (mut site, mut cell, mut patches) = (None, None, None);
    for (line, k, v) in pairs {
        match k.as_str() {
            "format_version" => {
                let found: u32 = parse_num(line, "format_version", &v)?;
                if found != EXEMPLAR_VERSION {
                    return Err(FormatError::VersionMismatch {
                        found,
                        supported: EXEMPLAR_VERSION,
                    });
                }
                version = Some(found);
            }
            "label" => label = Some(v),
            "threshold" => threshold = Some(parse_num::<f64>(line, "threshold", &v)?),
            "dim" => dim = Some(parse_num::<usize>(line, "dim", &v)?),
            "source_site" => site = Some(v),
            "source_cell" => {
                let (r, c) = v
                    .split_once(',')
                    .ok_or_else(|| FormatError::MalformedRecord {
                        line,
                        msg: "source_cell must be 'row,col'".into(),
                    })?;
                cell = Some(CellIndex::new(
                    parse_num(line, "row", r)?,
                    parse_num(line, "col", c)?,
                ));
            }
            "source_patches" => {
                patches = Some(
                    v.split(',')
                        .map(|p| parse_num::<usize>(line, "patch index", p))
                        .collect::<Result<Vec<_>, _>>()?,
                );
            }
            other => {
                return Err(FormatError::MalformedRecord {
                    line,
                    msg: format!("unknown key '{other}'"),
                })
            }
        }
    }
    let missing = |k: &str| FormatError::MalformedHeader(format!("exemplar file lacks '{k}'"));
    version.ok_or_else(|| missing("format_version"))?;
    let label = label.ok_or_else(|| missing("label"))?;
    let threshold = threshold.ok_or_else(|| missing("threshold"))?;
    let dim = dim.ok_or_else(|| missing("dim"))?;

    let source = match (cell, patches) {
        (Some(cell), Some(mut patches)) => {
            patches.sort_unstable();
            patches.dedup();
            Some(ExemplarSource {
                site,
                cell,
                patches,
            })
        }
        (None, None) => None,
        _ => {
            return Err(FormatError::MalformedHeader(
                "source_cell and source_patches must appear together".into(),
            ))
        }
    };

    let mut vectors = Vec::new();
    if let Some(s) = section {
        if lines[s].trim() != VECTORS_SECTION {
            return Err(FormatError::MalformedRecord {
                line: s + 1,
                msg: format!("expected '{VECTORS_SECTION}'"),
            });
        }
        for (i, l) in lines.iter().enumerate().skip(s + 1) {
            if l.trim().is_empty() {
                continue;
            }
            let v = l
                .split(',')
                .map(|x| parse_num::<f32>(i + 1, "vector component", x))
                .collect::<Result<Vec<_>, _>>()?;
            if v.len() != dim {
                return Err(FormatError::DimensionMismatch(format!(
                    "line {}: vector has {} components, expected {dim}",
                    i + 1,
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(FormatError::NonFinite {
                    patch: vectors.len() as u64,
                });
            }
            vectors.push(PatchEmbedding::new(v));
        }
    }
    if vectors.is_empty() && source.as_ref().is_none_or(|s| s.patches.is_empty()) {
        return Err(FormatError::MalformedHeader(
            "exemplar file lists no exemplars".into(),
        ));
    }
    Ok(ExemplarFile {
        label,
        threshold,
        dim,
        source,
        vectors,
    })
}

pub fn save_exemplars(path: &Path, file: &ExemplarFile) -> Result<(), FormatError> {
    let mut s = String::new();
    s.push_str("# ctxsurvey exemplar file\n");
    let _ = writeln!(s, "format_version = {EXEMPLAR_VERSION}");
    let _ = writeln!(s, "label = {}", file.label);
    let _ = writeln!(s, "threshold = {}", file.threshold);
    let _ = writeln!(s, "dim = {}", file.dim);
    if let Some(src) = &file.source {
        if let Some(site) = &src.site {
            let _ = writeln!(s, "source_site = {site}");
        }
        let _ = writeln!(s, "source_cell = {},{}", src.cell.row, src.cell.col);
        let idx: Vec<String> = src.patches.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "source_patches = {}", idx.join(","));
    }
    if !file.vectors.is_empty() {
        s.push_str(VECTORS_SECTION);
        s.push('\n');
        for v in &file.vectors {
            let parts: Vec<String> = v.values().iter().map(f32::to_string).collect();
            s.push_str(&parts.join(","));
            s.push('\n');
        }
    }
    std::fs::write(path, s).map_err(|e| FormatError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::CellObservation;

    fn grid() -> SiteGrid {
        let cells = (0..4)
            .map(|i| {
                CellObservation::new(
                    (0..3)
                        .map(|j| PatchEmbedding::new(vec![i as f32 + 1.0, j as f32]))
                        .collect(),
                    0,
                )
            })
            .collect();
        SiteGrid::from_cells(2, 2, 2, cells)
    }

    #[test]
    fn referenced_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.exemplars");
        let f = ExemplarFile {
            label: "target".into(),
            threshold: 0.3,
            dim: 2,
            source: Some(ExemplarSource {
                site: Some("site.manifest".into()),
                cell: CellIndex::new(1, 0),
                patches: vec![0, 2],
            }),
            vectors: vec![],
        };
        save_exemplars(&p, &f).unwrap();
        let back = load_exemplars(&p).unwrap();
        assert_eq!(back, f);
        let set = back.resolve(&grid()).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.exemplars()[1], PatchEmbedding::new(vec![3.0, 2.0]));
        assert_eq!(back.source_cell(&grid()).unwrap().len(), 3);
    }

    #[test]
    fn inline_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.exemplars");
        let f = ExemplarFile {
            label: "context".into(),
            threshold: 0.1,
            dim: 2,
            source: None,
            vectors: vec![PatchEmbedding::new(vec![0.1, -3.5e-8])],
        };
        save_exemplars(&p, &f).unwrap();
        assert_eq!(load_exemplars(&p).unwrap(), f);
    }

    #[test]
    fn duplicate_indices_collapse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.exemplars");
        std::fs::write(
            &p,
            "format_version = 1\nlabel = target\nthreshold = 0.3\ndim = 2\nsource_cell = 0,0\nsource_patches = 2,1,2\n",
        )
        .unwrap();
        assert_eq!(
            load_exemplars(&p).unwrap().source.unwrap().patches,
            vec![1, 2]
        );
    }

    #[test]
    fn bad_references() {
        let f = ExemplarFile {
            label: "target".into(),
            threshold: 0.3,
            dim: 2,
            source: Some(ExemplarSource {
                site: None,
                cell: CellIndex::new(0, 0),
                patches: vec![9],
            }),
            vectors: vec![],
        };
        assert!(f.resolve(&grid()).is_err());
        let wrong_dim = ExemplarFile { dim: 5, ..f };
        assert!(wrong_dim.resolve(&grid()).is_err());
    }

    #[test]
    fn rejects_empty_and_bad_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.exemplars");
        std::fs::write(
            &p,
            "format_version = 1\nlabel = target\nthreshold = 0.3\ndim = 2\n",
        )
        .unwrap();
        assert!(matches!(
            load_exemplars(&p),
            Err(FormatError::MalformedHeader(_))
        ));
        std::fs::write(&p, "format_version = 7\n").unwrap();
        assert!(matches!(
            load_exemplars(&p),
            Err(FormatError::VersionMismatch { .. })
        ));
    }
}
